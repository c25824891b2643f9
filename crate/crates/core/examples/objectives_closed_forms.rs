//! Evaluates InfoNCE on batches with known values and decomposes the
//! multimodal loss into its joint and per-modality terms.

use candle_core::{Device, Tensor};
use comm::objectives::{comm_loss, info_nce, NceOptions};

fn main() -> comm::Result<()> {
    let dev = Device::Cpu;
    let ones = Tensor::ones((3, 4), candle_core::DType::F64, &dev)?;
    let same = info_nce(&ones, &ones, &NceOptions::comm(1.0))?.to_scalar::<f64>()?;
    println!("identical rows, B = 3: {same:.6} (log 2 = {:.6})", 2f64.ln());

    let eye = Tensor::eye(3, candle_core::DType::F64, &dev)?;
    let ortho = info_nce(&eye, &eye, &NceOptions::comm(1.0))?.to_scalar::<f64>()?;
    println!("orthonormal rows, B = 3, tau = 1: {ortho:.6} (expected {:.6})", -1.0 + 2f64.ln());

    let z1 = Tensor::randn(0f32, 1.0, (8, 16), &dev)?;
    let z2 = Tensor::randn(0f32, 1.0, (8, 16), &dev)?;
    let p = [Tensor::randn(0f32, 1.0, (8, 16), &dev)?, Tensor::randn(0f32, 1.0, (8, 16), &dev)?];
    let br = comm_loss(&z1, &z2, &p, &NceOptions::comm(0.1))?;
    let v = br.values()?;
    println!(
        "L = {:.4}, L_i = {:?}, total = {:.4}, InfoNCE evaluations = {}",
        v.l.unwrap_or(f32::NAN),
        v.l_i,
        v.total,
        br.evaluations
    );
    Ok(())
}
