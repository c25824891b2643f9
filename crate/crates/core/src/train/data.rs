//! Sample sources and batch assembly.

use candle_core::Tensor;

use crate::augment::{ImageTensor, ModalityData, MultimodalSample};
use crate::model::{batch_tensor, InputKind};
use crate::trifeature::{BimodalDataset, PairedSample, Split};
use crate::{Error, Result};

/// Indexed access to complete multimodal samples.
pub trait MultimodalSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn inputs(&self) -> Vec<InputKind>;

    fn sample(&self, index: usize) -> Result<MultimodalSample>;

    /// Stable identifier of a sample, used in diagnostics.
    fn sample_id(&self, index: usize) -> String {
        index.to_string()
    }
}

/// The pairs of one split of a bimodal image dataset.
#[derive(Debug, Clone)]
pub struct PairSource<'a> {
    pub dataset: &'a BimodalDataset,
    pub pairs: Vec<PairedSample>,
}

impl<'a> PairSource<'a> {
    pub fn new(dataset: &'a BimodalDataset, split: Split) -> Self {
        Self {
            dataset,
            pairs: dataset.split_pairs(split),
        }
    }
}

impl MultimodalSource for PairSource<'_> {
    fn len(&self) -> usize {
        self.pairs.len()
    }

    fn inputs(&self) -> Vec<InputKind> {
        let size = self.dataset.spec.canvas_size;
        vec![InputKind::Image { channels: 3, size }; 2]
    }

    fn sample(&self, index: usize) -> Result<MultimodalSample> {
        let p = self
            .pairs
            .get(index)
            .ok_or_else(|| Error::validation(format!("pair index {index} out of range")))?;
        let size = self.dataset.spec.canvas_size;
        let img = |id: u32| ModalityData::Image(ImageTensor::new(3, size, size, self.dataset.image(id).to_chw()));
        Ok(MultimodalSample::new(vec![img(p.first.image_id), img(p.second.image_id)]))
    }

    fn sample_id(&self, index: usize) -> String {
        self.pairs.get(index).map(|p| format!("pair {}", p.pair_id)).unwrap_or_default()
    }
}

/// In-memory samples whose modalities are plain vectors.
#[derive(Debug, Clone)]
pub struct VectorSource {
    pub dims: Vec<usize>,
    /// `rows[b][i]` is modality `i` of sample `b`.
    pub rows: Vec<Vec<Vec<f32>>>,
}

impl VectorSource {
    pub fn new(dims: Vec<usize>, rows: Vec<Vec<Vec<f32>>>) -> Result<Self> {
        for (b, r) in rows.iter().enumerate() {
            if r.len() != dims.len() || r.iter().zip(&dims).any(|(v, &d)| v.len() != d) {
                return Err(Error::validation(format!("sample {b} does not match modality widths {dims:?}")));
            }
        }
        Ok(Self { dims, rows })
    }
}

impl MultimodalSource for VectorSource {
    fn len(&self) -> usize {
        self.rows.len()
    }

    fn inputs(&self) -> Vec<InputKind> {
        self.dims.iter().map(|&dim| InputKind::Vector { dim }).collect()
    }

    fn sample(&self, index: usize) -> Result<MultimodalSample> {
        let r = self
            .rows
            .get(index)
            .ok_or_else(|| Error::validation(format!("sample index {index} out of range")))?;
        Ok(MultimodalSample::new(r.iter().cloned().map(ModalityData::Vector).collect()))
    }
}

fn values(data: &ModalityData) -> Result<&[f32]> {
    match data {
        ModalityData::Image(img) => Ok(&img.data),
        ModalityData::Vector(v) => Ok(v),
        ModalityData::Sequence(s) => Ok(&s.data),
        ModalityData::Tokens(_) => Err(Error::validation("token modalities have no numeric encoder")),
    }
}

/// One tensor per modality; every sample must have every modality.
pub fn collate(samples: &[MultimodalSample], inputs: &[InputKind]) -> Result<Vec<Tensor>> {
    (0..inputs.len())
        .map(|i| {
            let rows = samples
                .iter()
                .map(|s| match s.slots.get(i) {
                    Some(Some(d)) => values(d),
                    _ => Err(Error::validation(format!("modality {i} missing from a batch sample"))),
                })
                .collect::<Result<Vec<_>>>()?;
            batch_tensor(inputs[i], &rows)
        })
        .collect()
}
