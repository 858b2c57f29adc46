//! Named parameter storage with seeded initialization.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;

use crate::error::{NetError, Result};

/// All tensors of a model, keyed by dotted names.
///
/// Trainable parameters and non-trainable buffers (normalization running
/// statistics) live in separate maps; both are checkpointed.
#[derive(Clone)]
pub struct ParamStore {
    dtype: DType,
    device: Device,
    params: BTreeMap<String, Var>,
    buffers: BTreeMap<String, Var>,
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        Self {
            dtype,
            device: Device::Cpu,
            params: BTreeMap::new(),
            buffers: BTreeMap::new(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn check_new(&self, name: &str) -> Result<()> {
        if self.params.contains_key(name) || self.buffers.contains_key(name) {
            return Err(NetError::Config(format!("parameter {name} registered twice")));
        }
        Ok(())
    }

    fn make(&self, values: Vec<f64>, shape: &[usize]) -> Result<Var> {
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        Ok(Var::from_tensor(&t)?)
    }

    /// Uniform in `[-bound, bound]`, drawn from `rng` in row-major order.
    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64, rng: &mut impl Rng) -> Result<Var> {
        self.check_new(name)?;
        let n: usize = shape.iter().product();
        let values = (0..n)
            .map(|_| {
                if bound > 0.0 {
                    rng.gen_range(-bound..=bound)
                } else {
                    0.0
                }
            })
            .collect();
        let v = self.make(values, shape)?;
        self.params.insert(name.to_string(), v.clone());
        Ok(v)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Var> {
        self.check_new(name)?;
        let n: usize = shape.iter().product();
        let v = self.make(vec![value; n], shape)?;
        self.params.insert(name.to_string(), v.clone());
        Ok(v)
    }

    pub fn buffer(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Var> {
        self.check_new(name)?;
        let n: usize = shape.iter().product();
        let v = self.make(vec![value; n], shape)?;
        self.buffers.insert(name.to_string(), v.clone());
        Ok(v)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.params.get(name).or_else(|| self.buffers.get(name))
    }

    /// Trainable variables whose name starts with `prefix`.
    pub fn trainable(&self, prefix: &str) -> Vec<Var> {
        self.params
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v.clone())
            .collect()
    }

    pub fn named_trainable(&self, prefix: &str) -> Vec<(String, Var)> {
        self.params
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    /// Parameters and buffers, sorted by name.
    pub fn all(&self) -> Vec<(String, Var)> {
        let mut v: Vec<(String, Var)> = self
            .params
            .iter()
            .chain(self.buffers.iter())
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        v.sort_by(|a, b| a.0.cmp(&b.0));
        v
    }

    pub fn num_parameters(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v.elem_count())
            .sum()
    }

    /// Overwrites a tensor in place, checking the shape.
    pub fn assign(&self, name: &str, shape: &[usize], values: Vec<f32>) -> Result<()> {
        let var = self
            .get(name)
            .ok_or_else(|| NetError::Checkpoint(format!("model has no parameter {name}")))?;
        if var.dims() != shape {
            return Err(NetError::Checkpoint(format!(
                "{name}: checkpoint shape {shape:?}, model shape {:?}",
                var.dims()
            )));
        }
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        var.set(&t)?;
        Ok(())
    }
}
