//! Exact Shannon quantities for small discrete `(X1, X2, Y)` tables.
//!
//! Used to sanity-check how redundancy, uniqueness and synergy relate to
//! the mutual-information terms on canonical toy distributions.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Joint distribution `p(x1, x2, y)` stored row-major over `(x1, x2, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointTable {
    pub dims: [usize; 3],
    pub p: Vec<f64>,
}

impl JointTable {
    pub fn new(dims: [usize; 3], p: Vec<f64>) -> Result<Self> {
        let t = Self { dims, p };
        t.validate()?;
        Ok(t)
    }

    /// Uniform mixture over the listed outcomes.
    pub fn from_outcomes(dims: [usize; 3], outcomes: &[(usize, usize, usize)]) -> Result<Self> {
        let mut p = vec![0.0; dims.iter().product()];
        let w = 1.0 / outcomes.len() as f64;
        for &(a, b, c) in outcomes {
            if a >= dims[0] || b >= dims[1] || c >= dims[2] {
                return Err(Error::validation(format!("outcome ({a}, {b}, {c}) outside {dims:?}")));
            }
            p[(a * dims[1] + b) * dims[2] + c] += w;
        }
        Self::new(dims, p)
    }

    /// `Y = X1 xor X2` with independent fair bits.
    pub fn xor() -> Self {
        Self::from_outcomes([2, 2, 2], &[(0, 0, 0), (0, 1, 1), (1, 0, 1), (1, 1, 0)]).expect("valid table")
    }

    /// `X1 = X2 = Y`, a fair bit.
    pub fn copy() -> Self {
        Self::from_outcomes([2, 2, 2], &[(0, 0, 0), (1, 1, 1)]).expect("valid table")
    }

    /// `Y = X1` with `X2` an independent fair bit.
    pub fn unique_first() -> Self {
        Self::from_outcomes([2, 2, 2], &[(0, 0, 0), (0, 1, 0), (1, 0, 1), (1, 1, 1)]).expect("valid table")
    }

    pub fn validate(&self) -> Result<()> {
        if self.p.len() != self.dims.iter().product::<usize>() || self.dims.contains(&0) {
            return Err(Error::validation(format!("table of {} entries does not match {:?}", self.p.len(), self.dims)));
        }
        if self.p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::validation("probabilities must be finite and non-negative"));
        }
        let total: f64 = self.p.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!("probabilities sum to {total}, not 1")));
        }
        Ok(())
    }

    fn at(&self, a: usize, b: usize, c: usize) -> f64 {
        self.p[(a * self.dims[1] + b) * self.dims[2] + c]
    }

    /// Entropy in bits of the marginal over the selected variables
    /// (`[x1, x2, y]` flags).
    pub fn entropy(&self, keep: [bool; 3]) -> f64 {
        let [n1, n2, ny] = self.dims;
        let size = |i: usize, n: usize| if keep[i] { n } else { 1 };
        let (m1, m2, my) = (size(0, n1), size(1, n2), size(2, ny));
        let mut marginal = vec![0.0; m1 * m2 * my];
        for a in 0..n1 {
            for b in 0..n2 {
                for c in 0..ny {
                    let idx = ((if keep[0] { a } else { 0 }) * m2 + if keep[1] { b } else { 0 }) * my + if keep[2] { c } else { 0 };
                    marginal[idx] += self.at(a, b, c);
                }
            }
        }
        -marginal.iter().filter(|&&v| v > 0.0).map(|&v| v * v.log2()).sum::<f64>()
    }
}

/// `I(X1;Y)`, `I(X2;Y)` and `I(X1,X2;Y)` in bits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MutualInformation {
    pub i1: f64,
    pub i2: f64,
    pub i12: f64,
}

pub fn discrete_pid_sanity(table: &JointTable) -> Result<MutualInformation> {
    table.validate()?;
    let h = |k| table.entropy(k);
    let hy = h([false, false, true]);
    Ok(MutualInformation {
        i1: h([true, false, false]) + hy - h([true, false, true]),
        i2: h([false, true, false]) + hy - h([false, true, true]),
        i12: h([true, true, false]) + hy - h([true, true, true]),
    })
}

/// `I(X1;Y|X2)` and `I(X2;Y|X1)` in bits, from conditional entropies.
pub fn conditional_mutual_information(table: &JointTable) -> Result<(f64, f64)> {
    table.validate()?;
    let h = |k| table.entropy(k);
    let all = h([true, true, true]);
    let c1 = h([true, true, false]) + h([false, true, true]) - h([false, true, false]) - all;
    let c2 = h([true, true, false]) + h([true, false, true]) - h([true, false, false]) - all;
    Ok((c1, c2))
}

/// Decomposition with redundancy taken as the minimum of the two marginal
/// informations; the remaining atoms follow from the consistency relations
/// `I(Xi;Y) = R + Ui` and `I(X1,X2;Y) = R + U1 + U2 + S`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub redundancy: f64,
    pub unique1: f64,
    pub unique2: f64,
    pub synergy: f64,
}

pub fn min_mi_decomposition(mi: &MutualInformation) -> Decomposition {
    let r = mi.i1.min(mi.i2);
    let u1 = mi.i1 - r;
    let u2 = mi.i2 - r;
    Decomposition {
        redundancy: r,
        unique1: u1,
        unique2: u2,
        synergy: mi.i12 - r - u1 - u2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXACT: f64 = 1e-12;

    #[test]
    fn xor_is_pure_synergy() {
        let mi = discrete_pid_sanity(&JointTable::xor()).unwrap();
        assert!(mi.i1.abs() < EXACT && mi.i2.abs() < EXACT && (mi.i12 - 1.0).abs() < EXACT);
        let d = min_mi_decomposition(&mi);
        assert!((d.synergy - 1.0).abs() < EXACT && d.redundancy.abs() < EXACT);
    }

    #[test]
    fn copy_is_pure_redundancy() {
        let mi = discrete_pid_sanity(&JointTable::copy()).unwrap();
        for v in [mi.i1, mi.i2, mi.i12] {
            assert!((v - 1.0).abs() < EXACT);
        }
        let d = min_mi_decomposition(&mi);
        assert!((d.redundancy - 1.0).abs() < EXACT && d.synergy.abs() < EXACT);
    }

    #[test]
    fn unique_is_pure_first_modality() {
        let mi = discrete_pid_sanity(&JointTable::unique_first()).unwrap();
        assert!(mi.i2.abs() < EXACT && (mi.i1 - 1.0).abs() < EXACT && (mi.i12 - 1.0).abs() < EXACT);
        let d = min_mi_decomposition(&mi);
        assert!((d.unique1 - 1.0).abs() < EXACT && d.unique2.abs() < EXACT && d.synergy.abs() < EXACT);
    }

    #[test]
    fn invalid_tables_are_rejected() {
        assert!(JointTable::new([2, 2, 2], vec![0.125; 7]).is_err());
        assert!(JointTable::new([2, 2, 2], vec![0.2; 8]).is_err());
        let mut p = vec![0.125; 8];
        p[0] = -0.125;
        p[1] = 0.375;
        assert!(JointTable::new([2, 2, 2], p).is_err());
    }
}
