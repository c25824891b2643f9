//! Builds the desk-scale multimodal network and runs the fused and
//! single-modality forward passes used by the loss.

use candle_core::{Device, Tensor};
use comm::model::{CommModel, ModelConfig};
use comm::trifeature::TrifeatureSpec;

fn main() -> comm::Result<()> {
    let spec = TrifeatureSpec::desk();
    let config = ModelConfig::trifeature(&spec);
    let model = CommModel::new(&config, 0)?;
    println!("parameters: {}", model.params().num_parameters());
    for i in 0..model.num_modalities() {
        let prefix = CommModel::modality_prefix(i);
        println!("  {prefix}: {}", model.params().num_parameters_with_prefix(&prefix));
    }
    println!("  fusion: {}", model.params().num_parameters_with_prefix("fusion"));

    let x = Tensor::randn(0f32, 1.0, (4, 3, spec.canvas_size, spec.canvas_size), &Device::Cpu)?;
    let tokens = model.tokens(0, &x)?;
    println!("tokens of modality 1: {:?}", tokens.dims());
    let z = model.fuse(&[Some(x.clone()), Some(x.clone())])?;
    let z1 = model.fuse(&[Some(x), None])?;
    println!("fused: {:?}, projected onto modality 1: {:?}", z.dims(), z1.dims());
    println!("fusion passes so far: {}", model.fusion_calls());
    Ok(())
}
