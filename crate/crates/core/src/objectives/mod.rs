//! Contrastive objectives.
//!
//! All losses take critic embeddings (rows are samples) and compare them
//! with temperature-scaled cosine similarities.

pub mod pid;

use candle_core::{DType, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NceOptions {
    pub temperature: f64,
    /// Count the positive pair among the denominator terms.
    pub include_positive: bool,
    /// Average the anchor-to-target and target-to-anchor directions.
    pub symmetric: bool,
}

impl NceOptions {
    /// Positive excluded from the denominator.
    pub fn comm(temperature: f64) -> Self {
        Self {
            temperature,
            include_positive: false,
            symmetric: true,
        }
    }

    /// Positive included, as in CLIP.
    pub fn clip(temperature: f64) -> Self {
        Self {
            temperature,
            include_positive: true,
            symmetric: true,
        }
    }
}

impl Default for NceOptions {
    fn default() -> Self {
        Self::comm(0.1)
    }
}

const MASKED: f64 = -1e30;

fn normalize_rows(x: &Tensor, what: &str) -> Result<Tensor> {
    let norms = x.sqr()?.sum_keepdim(1)?.sqrt()?;
    let norms64 = norms.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    if norms64.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what.to_string()));
    }
    if norms64.iter().any(|&v| v <= 0.0) {
        return Err(Error::validation(format!("{what} contains a zero-norm row")));
    }
    Ok(x.broadcast_div(&norms)?)
}

/// Mean over rows of `logsumexp(row over negatives) - row[b]`.
fn direction(sim: &Tensor, diag: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
    let logits = match mask {
        Some(m) => sim.broadcast_add(m)?,
        None => sim.clone(),
    };
    let max = logits.max_keepdim(1)?.detach();
    let lse = (logits.broadcast_sub(&max)?.exp()?.sum_keepdim(1)?.log()? + max)?.squeeze(1)?;
    Ok((lse - diag)?.mean_all()?)
}

/// InfoNCE loss between paired rows of `anchors` and `targets`.
pub fn info_nce(anchors: &Tensor, targets: &Tensor, opts: &NceOptions) -> Result<Tensor> {
    let (b, k) = anchors.dims2()?;
    if targets.dims2()? != (b, k) {
        return Err(Error::validation(format!(
            "anchors {:?} and targets {:?} differ in shape",
            anchors.dims(),
            targets.dims()
        )));
    }
    if b < 2 {
        return Err(Error::validation(format!("batch size must be at least 2, got {b}")));
    }
    if !(opts.temperature > 0.0) {
        return Err(Error::validation(format!("temperature must be positive, got {}", opts.temperature)));
    }
    let a = normalize_rows(anchors, "anchors")?;
    let t = normalize_rows(targets, "targets")?;
    let sim = (a.matmul(&t.t()?)? / opts.temperature)?;
    let diag = ((&a * &t)?.sum(1)? / opts.temperature)?;
    let mask = if opts.include_positive {
        None
    } else {
        let m: Vec<f64> = (0..b * b).map(|i| if i / b == i % b { MASKED } else { 0.0 }).collect();
        Some(Tensor::from_vec(m, (b, b), anchors.device())?.to_dtype(anchors.dtype())?)
    };
    let forward = direction(&sim, &diag, mask.as_ref())?;
    if opts.symmetric {
        let backward = direction(&sim.t()?, &diag, mask.as_ref())?;
        Ok(((forward + backward)? * 0.5)?)
    } else {
        Ok(forward)
    }
}

/// Which terms of the multimodal loss are optimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossTerms {
    pub joint: bool,
    pub projections: bool,
}

impl Default for LossTerms {
    fn default() -> Self {
        Self {
            joint: true,
            projections: true,
        }
    }
}

impl LossTerms {
    pub fn joint_only() -> Self {
        Self {
            joint: true,
            projections: false,
        }
    }

    pub fn projections_only() -> Self {
        Self {
            joint: false,
            projections: true,
        }
    }

    pub fn label(&self) -> &'static str {
        match (self.joint, self.projections) {
            (true, true) => "comm",
            (true, false) => "joint_only",
            (false, true) => "projections_only",
            (false, false) => "none",
        }
    }
}

/// Loss terms of one step, kept as graph tensors for backpropagation.
#[derive(Debug, Clone)]
pub struct LossBreakdown {
    /// The term between the two augmented views, when enabled.
    pub l: Option<Tensor>,
    /// One term per modality projection, when enabled.
    pub l_i: Vec<Tensor>,
    /// `l + l_1 + ... + l_n`, summed left to right.
    pub total: Tensor,
    pub temperature: f64,
    /// Number of InfoNCE evaluations performed.
    pub evaluations: usize,
    /// Every InfoNCE evaluation, in order: the joint term, then both
    /// terms of each projection.
    pub nce_terms: Vec<Tensor>,
}

/// Scalar snapshot of a [`LossBreakdown`], as logged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub l: Option<f32>,
    pub l_i: Vec<f32>,
    pub total: f32,
    pub temperature: f64,
}

impl LossValues {
    /// Recomputes the sum with the same f32 operations, in the same order,
    /// as the training graph.
    pub fn recomputed_total(&self) -> f32 {
        let mut acc: Option<f32> = self.l;
        for &v in &self.l_i {
            acc = Some(match acc {
                Some(a) => a + v,
                None => v,
            });
        }
        acc.unwrap_or(0.0)
    }
}

fn scalar(t: &Tensor) -> Result<f32> {
    Ok(t.to_dtype(DType::F32)?.to_scalar::<f32>()?)
}

impl LossBreakdown {
    pub fn values(&self) -> Result<LossValues> {
        Ok(LossValues {
            l: self.l.as_ref().map(scalar).transpose()?,
            l_i: self.l_i.iter().map(scalar).collect::<Result<_>>()?,
            total: scalar(&self.total)?,
            temperature: self.temperature,
        })
    }
}

fn sum_terms(l: Option<&Tensor>, l_i: &[Tensor]) -> Result<Tensor> {
    let mut iter = l.into_iter().chain(l_i.iter());
    let first = iter
        .next()
        .ok_or_else(|| Error::validation("at least one loss term must be enabled"))?
        .clone();
    iter.try_fold(first, |acc, t| Ok((acc + t)?))
}

/// The multimodal loss with one critic per term: `joint` holds the two
/// augmented views; `terms[i]` holds the projection of modality `i` and the
/// two augmented views as seen by that term's critic.
pub fn comm_loss_per_term(
    joint: (&Tensor, &Tensor),
    terms: &[(Tensor, Tensor, Tensor)],
    opts: &NceOptions,
    enabled: LossTerms,
) -> Result<LossBreakdown> {
    let mut nce_terms = Vec::with_capacity(2 * terms.len() + 1);
    let l = if enabled.joint {
        let l = info_nce(joint.0, joint.1, opts)?;
        nce_terms.push(l.clone());
        Some(l)
    } else {
        None
    };
    let l_i = if enabled.projections {
        terms
            .iter()
            .map(|(zi, zp, zpp)| {
                let a = info_nce(zi, zp, opts)?;
                let b = info_nce(zi, zpp, opts)?;
                nce_terms.push(a.clone());
                nce_terms.push(b.clone());
                Ok(((a + b)? * 0.5)?)
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let total = sum_terms(l.as_ref(), &l_i)?;
    Ok(LossBreakdown {
        l,
        l_i,
        total,
        temperature: opts.temperature,
        evaluations: nce_terms.len(),
        nce_terms,
    })
}

/// `L = nce(Z', Z'')`, `L_i = (nce(Z_i, Z') + nce(Z_i, Z'')) / 2`,
/// `total = L + sum L_i`.
pub fn comm_loss(prime: &Tensor, double_prime: &Tensor, projections: &[Tensor], opts: &NceOptions) -> Result<LossBreakdown> {
    let terms: Vec<_> = projections
        .iter()
        .map(|z| (z.clone(), prime.clone(), double_prime.clone()))
        .collect();
    comm_loss_per_term((prime, double_prime), &terms, opts, LossTerms::default())
}

/// Symmetric CLIP loss between two modalities' embeddings.
pub fn cross_loss(z1: &Tensor, z2: &Tensor, temperature: f64) -> Result<Tensor> {
    info_nce(z1, z2, &NceOptions::clip(temperature))
}

#[derive(Debug, Clone)]
pub struct CrossSelfBreakdown {
    pub cross: Tensor,
    pub self_terms: Vec<Tensor>,
    pub total: Tensor,
}

/// Cross-modal CLIP loss plus, per modality, an InfoNCE term between the
/// self-supervised head outputs of two augmented views, weighted by
/// `self_weight`. An empty `self_pairs` or a zero weight leaves the cross
/// term alone.
pub fn cross_self_loss(
    cross: (&Tensor, &Tensor),
    self_pairs: &[(Tensor, Tensor)],
    temperature: f64,
    self_weight: f64,
) -> Result<CrossSelfBreakdown> {
    let cross = cross_loss(cross.0, cross.1, temperature)?;
    let opts = NceOptions::clip(temperature);
    let self_terms = if self_weight == 0.0 {
        Vec::new()
    } else {
        self_pairs
            .iter()
            .map(|(a, b)| info_nce(a, b, &opts))
            .collect::<Result<Vec<_>>>()?
    };
    let mut total = cross.clone();
    for t in &self_terms {
        total = if self_weight == 1.0 {
            (total + t)?
        } else {
            (total + (t * self_weight)?)?
        };
    }
    Ok(CrossSelfBreakdown {
        cross,
        self_terms,
        total,
    })
}

/// Row-wise softmax cross-entropy, a plain reference used by tests.
pub fn mean_cross_entropy(logits: &Tensor, labels: &[u32]) -> Result<Tensor> {
    let log_probs = candle_nn::ops::log_softmax(logits, D::Minus1)?;
    let idx = Tensor::from_vec(labels.to_vec(), (labels.len(), 1), logits.device())?;
    Ok((log_probs.gather(&idx, 1)?.mean_all()? * -1.0)?)
}
