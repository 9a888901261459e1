use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, MutexGuard};

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};

/// Parameter initialisation scheme.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Const(f64),
    Normal { std: f64 },
    Uniform { bound: f64 },
    /// Uniform in ±1/sqrt(fan_in).
    FanIn(usize),
}

struct Inner {
    params: BTreeMap<String, Var>,
    buffers: BTreeMap<String, Var>,
    pending: HashMap<String, Tensor>,
}

/// Named trainable parameters and non-trainable buffers (batch-norm
/// statistics). Initial values are a pure function of the store seed and the
/// parameter name, so model construction is reproducible.
///
/// A frozen store hands out detached tensors: nothing downstream can
/// accumulate gradients into its parameters.
#[derive(Clone)]
pub struct ParamStore {
    inner: Arc<Mutex<Inner>>,
    seed: u64,
    dtype: DType,
    device: Device,
    frozen: bool,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType) -> Self {
        Self {
            inner: Arc::new(Mutex::new(Inner {
                params: BTreeMap::new(),
                buffers: BTreeMap::new(),
                pending: HashMap::new(),
            })),
            seed,
            dtype,
            device: Device::Cpu,
            frozen: false,
        }
    }

    /// A store whose tensors, once created, are not tracked for gradients.
    pub fn frozen(mut self) -> Self {
        self.frozen = true;
        self
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().expect("parameter store poisoned")
    }

    pub fn root(&self) -> Scope {
        Scope {
            store: self.clone(),
            prefix: String::new(),
        }
    }

    /// Trainable variables in name order.
    pub fn trainable(&self) -> Vec<(String, Var)> {
        self.lock().params.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    /// Every parameter and buffer.
    pub fn tensors(&self) -> BTreeMap<String, Tensor> {
        let g = self.lock();
        g.params
            .iter()
            .chain(g.buffers.iter())
            .map(|(k, v)| (k.clone(), v.as_tensor().detach()))
            .collect()
    }

    pub fn param_names(&self) -> Vec<String> {
        self.lock().params.keys().cloned().collect()
    }

    /// Number of trainable scalars.
    pub fn num_params(&self) -> usize {
        self.lock().params.values().map(|v| v.elem_count()).sum()
    }

    /// Loads tensors by name: existing entries are overwritten in place,
    /// unknown names are kept and used when the parameter is first requested.
    pub fn load(&self, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        let mut g = self.lock();
        for (name, t) in tensors {
            let t = t.to_dtype(self.dtype)?.copy()?;
            let existing = g.params.get(name).or_else(|| g.buffers.get(name)).cloned();
            match existing {
                Some(var) => {
                    if var.dims() != t.dims() {
                        return Err(Error::Shape(format!(
                            "tensor {name}: checkpoint {:?} vs model {:?}",
                            t.dims(),
                            var.dims()
                        )));
                    }
                    var.set(&t)?;
                }
                None => {
                    g.pending.insert(name.clone(), t);
                }
            }
        }
        Ok(())
    }

    /// Overwrites existing tensors only. Every name must already exist with
    /// the same shape; otherwise nothing is changed and the error lists each
    /// offending tensor.
    pub fn assign(&self, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        let g = self.lock();
        let mut problems = Vec::new();
        let mut targets = Vec::new();
        for (name, t) in tensors {
            match g.params.get(name).or_else(|| g.buffers.get(name)) {
                Some(var) if var.dims() == t.dims() => targets.push((var.clone(), t)),
                Some(var) => problems.push(format!("{name} (checkpoint {:?}, model {:?})", t.dims(), var.dims())),
                None => problems.push(format!("{name} (not in model)")),
            }
        }
        if !problems.is_empty() {
            return Err(Error::Shape(format!("incompatible tensors: {}", problems.join("; "))));
        }
        for (var, t) in targets {
            // copy: set() refuses a tensor sharing storage with the variable
            var.set(&t.to_dtype(self.dtype)?.copy()?)?;
        }
        Ok(())
    }

    /// Names loaded via [`ParamStore::load`] that no layer has claimed yet.
    pub fn unclaimed(&self) -> Vec<String> {
        let mut v: Vec<_> = self.lock().pending.keys().cloned().collect();
        v.sort();
        v
    }

    fn init_values(&self, name: &str, n: usize, init: Init) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ crate::rng::label(name));
        match init {
            Init::Const(c) => vec![c; n],
            Init::Normal { std } => {
                let d = Normal::new(0.0, std).expect("valid std");
                (0..n).map(|_| d.sample(&mut rng)).collect()
            }
            Init::Uniform { bound } => {
                let d = Uniform::new_inclusive(-bound, bound).expect("valid bound");
                (0..n).map(|_| d.sample(&mut rng)).collect()
            }
            Init::FanIn(fan_in) => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                let d = Uniform::new_inclusive(-bound, bound).expect("valid bound");
                (0..n).map(|_| d.sample(&mut rng)).collect()
            }
        }
    }

    fn get_or_create(&self, name: &str, shape: &[usize], init: Init, buffer: bool) -> Result<Var> {
        let mut g = self.lock();
        let map = if buffer { &g.buffers } else { &g.params };
        if let Some(v) = map.get(name) {
            if v.dims() != shape {
                return Err(Error::Shape(format!(
                    "parameter {name} requested as {shape:?} but exists as {:?}",
                    v.dims()
                )));
            }
            return Ok(v.clone());
        }
        if let Some(t) = g.pending.get(name) {
            if t.dims() != shape {
                return Err(Error::Shape(format!(
                    "tensor {name}: checkpoint {:?} vs model {shape:?}",
                    t.dims()
                )));
            }
        }
        let tensor = match g.pending.remove(name) {
            Some(t) => t,
            None => {
                let n: usize = shape.iter().product();
                let vals = self.init_values(name, n, init);
                Tensor::from_vec(vals, shape, &self.device)?.to_dtype(self.dtype)?
            }
        };
        let var = Var::from_tensor(&tensor)?;
        if buffer {
            g.buffers.insert(name.to_string(), var.clone());
        } else {
            g.params.insert(name.to_string(), var.clone());
        }
        Ok(var)
    }
}

/// Hierarchical view into a [`ParamStore`].
#[derive(Clone)]
pub struct Scope {
    store: ParamStore,
    prefix: String,
}

impl Scope {
    pub fn pp(&self, name: impl std::fmt::Display) -> Scope {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        Scope {
            store: self.store.clone(),
            prefix,
        }
    }

    fn full(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype
    }

    pub fn device(&self) -> &Device {
        &self.store.device
    }

    /// A trainable parameter (detached when the store is frozen).
    pub fn param(&self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let var = self.store.get_or_create(&self.full(name), shape, init, false)?;
        Ok(if self.store.frozen {
            var.as_tensor().detach()
        } else {
            var.as_tensor().clone()
        })
    }

    /// A non-trainable buffer filled with `value`.
    pub fn buffer(&self, name: &str, shape: &[usize], value: f64) -> Result<Var> {
        self.store.get_or_create(&self.full(name), shape, Init::Const(value), true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_per_name() {
        let a = ParamStore::new(5, DType::F32);
        let b = ParamStore::new(5, DType::F32);
        let ta = a.root().pp("x").param("w", &[3, 4], Init::Normal { std: 1.0 }).unwrap();
        let tb = b.root().pp("x").param("w", &[3, 4], Init::Normal { std: 1.0 }).unwrap();
        assert_eq!(ta.to_vec2::<f32>().unwrap(), tb.to_vec2::<f32>().unwrap());
        let tc = a.root().pp("y").param("w", &[3, 4], Init::Normal { std: 1.0 }).unwrap();
        assert_ne!(ta.to_vec2::<f32>().unwrap(), tc.to_vec2::<f32>().unwrap());
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        let s = ParamStore::new(1, DType::F64).frozen();
        let w = s.root().param("w", &[2], Init::Const(1.0)).unwrap();
        let x = Var::new(&[3.0f64, 4.0], &Device::Cpu).unwrap();
        let y = (w * x.as_tensor()).unwrap().sum_all().unwrap();
        let grads = y.backward().unwrap();
        let (_, var) = &s.trainable()[0];
        assert!(grads.get(var.as_tensor()).is_none());
        assert!(grads.get(x.as_tensor()).is_some());
    }

    #[test]
    fn pending_tensors_are_claimed_with_shape_check() {
        let s = ParamStore::new(0, DType::F32);
        let t = Tensor::new(&[1f32, 2., 3.], &Device::Cpu).unwrap();
        s.load(&BTreeMap::from([("a.w".to_string(), t)])).unwrap();
        assert_eq!(s.unclaimed(), vec!["a.w".to_string()]);
        assert!(s.root().pp("a").param("w", &[2], Init::Const(0.0)).is_err());
        let w = s.root().pp("a").param("w", &[3], Init::Const(0.0)).unwrap();
        assert_eq!(w.to_vec1::<f32>().unwrap(), vec![1., 2., 3.]);
        assert!(s.unclaimed().is_empty());
    }
}
