//! AdamW with decoupled weight decay and serializable state.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::backprop::GradStore;
use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::IoContext;
use crate::model::ParamStore;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
struct Moments {
    m: Tensor,
    v: Tensor,
}

#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    moments: BTreeMap<String, Moments>,
}

#[derive(Debug, Serialize, Deserialize)]
struct StateFile {
    config: AdamWConfig,
    step: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every parameter that received a gradient.
    pub fn step(&mut self, params: &ParamStore, grads: &GradStore, lr: f64) -> Result<()> {
        self.step += 1;
        let c = self.config;
        let bias1 = 1.0 - c.beta1.powi(self.step as i32);
        let bias2 = 1.0 - c.beta2.powi(self.step as i32);
        for (name, var) in params.vars() {
            let Some(g) = grads.get(var.as_tensor()) else { continue };
            let entry = match self.moments.get(name) {
                Some(e) => e.clone(),
                None => Moments {
                    m: var.zeros_like()?,
                    v: var.zeros_like()?,
                },
            };
            let m = ((&entry.m * c.beta1)? + (g * (1.0 - c.beta1))?)?;
            let v = ((&entry.v * c.beta2)? + (g.sqr()? * (1.0 - c.beta2))?)?;
            if lr != 0.0 {
                let decayed = (var.as_tensor() * (1.0 - lr * c.weight_decay))?;
                let update = ((&m / bias1)? / ((&v / bias2)?.sqrt()? + c.eps)?)?;
                var.set(&(decayed - (update * lr)?)?)?;
            }
            self.moments.insert(name.clone(), Moments { m, v });
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).at(dir)?;
        let mut tensors: HashMap<String, Tensor> = HashMap::new();
        for (name, mo) in &self.moments {
            tensors.insert(format!("m.{name}"), mo.m.clone());
            tensors.insert(format!("v.{name}"), mo.v.clone());
        }
        candle_core::safetensors::save(&tensors, dir.join("optimizer.safetensors"))?;
        let path = dir.join("optimizer.json");
        std::fs::write(
            &path,
            serde_json::to_vec_pretty(&StateFile {
                config: self.config,
                step: self.step,
            })?,
        )
        .at(&path)?;
        Ok(())
    }

    pub fn load(dir: &Path, params: &ParamStore) -> Result<Self> {
        let path = dir.join("optimizer.json");
        let state: StateFile = serde_json::from_slice(&std::fs::read(&path).at(&path)?)?;
        let tensors = candle_core::safetensors::load(dir.join("optimizer.safetensors"), &Device::Cpu)?;
        let mut moments = BTreeMap::new();
        for name in params.vars().keys() {
            match (tensors.get(&format!("m.{name}")), tensors.get(&format!("v.{name}"))) {
                (Some(m), Some(v)) => {
                    moments.insert(
                        name.clone(),
                        Moments {
                            m: m.clone(),
                            v: v.clone(),
                        },
                    );
                }
                (None, None) => {}
                _ => return Err(Error::Checkpoint(format!("optimizer state for {name} is incomplete"))),
            }
        }
        if moments.len() * 2 != tensors.len() {
            return Err(Error::Checkpoint("optimizer state names do not match the model".into()));
        }
        Ok(Self {
            config: state.config,
            step: state.step,
            moments,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ops::ParamStore;
    use crate::rng::rng;

    fn quadratic(ps: &ParamStore) -> GradStore {
        let w = ps.get("w").unwrap().as_tensor();
        w.sqr().unwrap().sum_all().unwrap().backward().unwrap()
    }

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let mut ps = ParamStore::new();
        ps.normal("w", &[3, 4], 1.0, &mut rng(0)).unwrap();
        let before = ps.flat_values().unwrap();
        let mut opt = AdamW::new(AdamWConfig::default());
        opt.step(&ps, &quadratic(&ps), 0.0).unwrap();
        assert_eq!(ps.flat_values().unwrap(), before);
    }

    #[test]
    fn first_step_moves_by_lr_against_the_gradient_sign() {
        let mut ps = ParamStore::new();
        ps.normal("w", &[5], 1.0, &mut rng(1)).unwrap();
        let before = ps.flat_values().unwrap();
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        });
        opt.step(&ps, &quadratic(&ps), 0.01).unwrap();
        for (a, b) in before.iter().zip(ps.flat_values().unwrap()) {
            assert!((a - b - 0.01 * a.signum()).abs() < 1e-5);
        }
    }

    #[test]
    fn state_round_trip_gives_identical_next_step() {
        let dir = tempfile::tempdir().unwrap();
        let build = || {
            let mut ps = ParamStore::new();
            ps.normal("w", &[6], 1.0, &mut rng(2)).unwrap();
            ps
        };
        let (a, b) = (build(), build());
        let mut opt = AdamW::new(AdamWConfig::default());
        for _ in 0..3 {
            opt.step(&a, &quadratic(&a), 0.05).unwrap();
            let _ = &b;
        }
        opt.save(dir.path()).unwrap();
        b.load_from(&a.to_map()).unwrap();
        let mut restored = AdamW::load(dir.path(), &b).unwrap();
        assert_eq!(restored.steps_taken(), 3);
        opt.step(&a, &quadratic(&a), 0.05).unwrap();
        restored.step(&b, &quadratic(&b), 0.05).unwrap();
        assert_eq!(a.flat_values().unwrap(), b.flat_values().unwrap());
    }
}
