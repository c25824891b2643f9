//! Draws two augmented views of one image pair and shows how the policy
//! strength changes them.

use comm::augment::{image_policy, project_modality, ImageTensor, ModalityData, MultimodalSample};
use comm::trifeature::{render_image, Attributes, Placement, TrifeatureSpec};

fn mean_abs_diff(a: &ModalityData, b: &ModalityData) -> f32 {
    match (a, b) {
        (ModalityData::Image(x), ModalityData::Image(y)) => {
            x.data.iter().zip(&y.data).map(|(p, q)| (p - q).abs()).sum::<f32>() / x.data.len() as f32
        }
        _ => f32::NAN,
    }
}

fn main() -> comm::Result<()> {
    let spec = TrifeatureSpec::desk();
    let img = |attrs: Attributes| -> comm::Result<ModalityData> {
        let px = render_image(attrs, Placement::centered(&spec), &spec, 0)?;
        let n = spec.canvas_size;
        let mut chw = vec![0f32; px.len()];
        for (p, rgb) in px.chunks_exact(3).enumerate() {
            for c in 0..3 {
                chw[c * n * n + p] = rgb[c] as f32 / 255.0;
            }
        }
        Ok(ModalityData::Image(ImageTensor::new(3, n, n, chw)))
    };
    let sample = MultimodalSample::new(vec![img(Attributes::new(1, 2, 3))?, img(Attributes::new(1, 5, 0))?]);
    for strength in [0.0, 0.25, 0.5, 1.0] {
        let policy = image_policy(strength)?;
        let a = policy.apply(&sample, 1)?;
        let b = policy.apply(&sample, 2)?;
        let d = mean_abs_diff(a.slots[0].as_ref().unwrap(), b.slots[0].as_ref().unwrap());
        println!("strength {strength:.2}: mean |view' - view''| on modality 1 = {d:.4}");
    }
    let only_second = project_modality(&sample, 1)?;
    println!("projection keeps modalities {:?}", only_second.present());
    Ok(())
}
