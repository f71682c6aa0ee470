use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum InitScheme {
    /// U(-bound, bound)
    Uniform { bound: f64 },
    /// U(-1/sqrt(fan_in), 1/sqrt(fan_in))
    FanIn { fan_in: usize },
    Constant { value: f64 },
    /// LSTM gate bias laid out as input, forget, cell, output blocks of
    /// `hidden` entries each; zero except the forget block
    ForgetGateBias { hidden: usize, value: f64 },
    /// restored from a checkpoint
    Loaded,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Init {
    #[serde(flatten)]
    pub scheme: InitScheme,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub init: Init,
}

/// Named, ordered set of trainable tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    by_name: HashMap<String, ParamId>,
    seed: u64,
}

impl<T: Scalar> ParamStore<T> {
    /// Store whose initializers derive their seeds from `seed`.
    pub fn new(seed: u64) -> Self {
        Self {
            params: Vec::new(),
            by_name: HashMap::new(),
            seed,
        }
    }

    pub fn add(&mut self, name: &str, shape: &[usize], scheme: InitScheme) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return invalid(format!("duplicate parameter name `{name}`"));
        }
        let seed = self
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(self.params.len() as u64 + 1);
        let init = Init { scheme, seed };
        let value = initialize(shape, init)?;
        Ok(self.push(name, value, init))
    }

    /// Inserts a parameter with an explicit value.
    pub fn insert(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return invalid(format!("duplicate parameter name `{name}`"));
        }
        Ok(self.push(
            name,
            value,
            Init {
                scheme: InitScheme::Loaded,
                seed: 0,
            },
        ))
    }

    fn push(&mut self, name: &str, value: Tensor<T>, init: Init) -> ParamId {
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(value.shape().to_vec());
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            grad,
            init,
        });
        self.by_name.insert(name.to_string(), id);
        id
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].grad
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar weights.
    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Copies all values from `other`, which must have the same names and shapes.
    pub fn copy_values_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if other.len() != self.len() {
            return invalid("parameter sets differ in size");
        }
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            if dst.name != src.name || dst.value.shape() != src.value.shape() {
                return invalid(format!(
                    "parameter `{}` {:?} does not match `{}` {:?}",
                    dst.name,
                    dst.value.shape(),
                    src.name,
                    src.value.shape()
                ));
            }
            dst.value = src.value.clone();
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new(self.seed);
        for p in &self.params {
            let id = out.push(&p.name, p.value.cast(), p.init);
            debug_assert_eq!(id.0 + 1, out.len());
        }
        out
    }
}

fn initialize<T: Scalar>(shape: &[usize], init: Init) -> Result<Tensor<T>> {
    let numel: usize = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(init.seed);
    let mut uniform = |bound: f64| -> Result<Vec<T>> {
        if !(bound.is_finite() && bound >= 0.0) {
            return invalid(format!("bad init bound {bound}"));
        }
        Ok((0..numel)
            .map(|_| T::from_f64_lossy(rng.gen_range(-1.0..=1.0) * bound))
            .collect())
    };
    let data = match init.scheme {
        InitScheme::Uniform { bound } => uniform(bound)?,
        InitScheme::FanIn { fan_in } => uniform(1.0 / (fan_in.max(1) as f64).sqrt())?,
        InitScheme::Constant { value } => vec![T::from_f64_lossy(value); numel],
        InitScheme::ForgetGateBias { hidden, value } => {
            if numel != 4 * hidden {
                return invalid(format!("forget-gate bias needs {} entries, shape {shape:?}", 4 * hidden));
            }
            (0..numel)
                .map(|i| {
                    if (hidden..2 * hidden).contains(&i) {
                        T::from_f64_lossy(value)
                    } else {
                        T::zero()
                    }
                })
                .collect()
        }
        InitScheme::Loaded => return invalid("cannot initialize a `loaded` parameter"),
    };
    Tensor::new(shape.to_vec(), data)
}
