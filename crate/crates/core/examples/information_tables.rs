//! Exact information quantities of small discrete distributions.

use comm::objectives::pid::{conditional_mutual_information, discrete_pid_sanity, min_mi_decomposition, JointTable};

fn main() -> comm::Result<()> {
    for (name, table) in [("xor", JointTable::xor()), ("copy", JointTable::copy()), ("unique", JointTable::unique_first())] {
        let mi = discrete_pid_sanity(&table)?;
        let d = min_mi_decomposition(&mi);
        let (c1, c2) = conditional_mutual_information(&table)?;
        println!(
            "{name:>6}: I(X1;Y) {:.3}  I(X2;Y) {:.3}  I(X1,X2;Y) {:.3} | R {:.3} U1 {:.3} U2 {:.3} S {:.3} | I(X1;Y|X2)+I(X2;Y|X1) {:.3}",
            mi.i1, mi.i2, mi.i12, d.redundancy, d.unique1, d.unique2, d.synergy, c1 + c2
        );
    }
    Ok(())
}
