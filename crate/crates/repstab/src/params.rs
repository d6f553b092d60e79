//! Named parameter storage shared by the encoder and the detector.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Gradients, Tape, Var};
use crate::num::{cast, Float};

/// Index of one tensor inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamId(usize);

/// Ordered collection of named weight matrices.
///
/// Models register tensors at construction and hold on to the returned
/// [`ParamId`]s; optimizers, checkpoints, and checksums all walk the set
/// in registration order.
#[derive(Debug, Clone)]
pub struct ParamSet<F: Float> {
    names: Vec<String>,
    values: Vec<Array2<F>>,
}

impl<F: Float> Default for ParamSet<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Float> ParamSet<F> {
    pub fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<F>) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Array2<F> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<F> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<F>)> {
        self.names.iter().map(|n| n.as_str()).zip(self.values.iter())
    }

    pub fn values(&self) -> &[Array2<F>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Array2<F>] {
        &mut self.values
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Loads every tensor onto a tape; `vars[i]` corresponds to tensor `i`.
    pub fn load(&self, tape: &Tape<F>) -> ParamVars {
        ParamVars {
            vars: self.values.iter().map(|v| tape.input(v.clone())).collect(),
        }
    }

    /// Collects this set's gradients from a finished backward pass,
    /// zero-filled for tensors the loss never touched.
    pub fn collect_grads(&self, vars: &ParamVars, grads: &Gradients<F>) -> Vec<Array2<F>> {
        self.values
            .iter()
            .zip(vars.vars.iter())
            .map(|(v, var)| grads.wrt_or_zero(*var, (v.nrows(), v.ncols())))
            .collect()
    }

    /// SHA-256 over names, shapes, and bit patterns. Detects any mutation.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, value) in self.iter() {
            hasher.update(name.as_bytes());
            hasher.update((value.nrows() as u64).to_le_bytes());
            hasher.update((value.ncols() as u64).to_le_bytes());
            for &x in value.iter() {
                hasher.update(x.to_f64().expect("finite parameter").to_bits().to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }

    pub fn to_records(&self) -> Vec<ParamRecord> {
        self.iter()
            .map(|(name, value)| ParamRecord {
                name: name.to_string(),
                rows: value.nrows(),
                cols: value.ncols(),
                data: value.iter().map(|v| v.to_f64().unwrap()).collect(),
            })
            .collect()
    }

    pub fn from_records(records: &[ParamRecord]) -> Option<Self> {
        let mut set = ParamSet::new();
        for r in records {
            if r.data.len() != r.rows * r.cols {
                return None;
            }
            let data: Vec<F> = r.data.iter().map(|&v| cast(v)).collect();
            let arr = Array2::from_shape_vec((r.rows, r.cols), data).ok()?;
            set.add(r.name.clone(), arr);
        }
        Some(set)
    }
}

/// Tape handles for one loaded [`ParamSet`].
pub struct ParamVars {
    vars: Vec<Var>,
}

impl ParamVars {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

/// Serialized form of one tensor (values stored as `f64`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// Uniform init on `[-bound, bound]`.
pub fn uniform_init<F: Float>(
    rng: &mut ChaCha20Rng,
    rows: usize,
    cols: usize,
    bound: f64,
) -> Array2<F> {
    Array2::from_shape_fn((rows, cols), |_| cast(rng.gen_range(-bound..bound)))
}

/// Gaussian init with the given standard deviation.
pub fn normal_init<F: Float>(
    rng: &mut ChaCha20Rng,
    rows: usize,
    cols: usize,
    std: f64,
) -> Array2<F> {
    use rand_distr::{Distribution, Normal};
    let dist = Normal::new(0.0, std).expect("std must be positive");
    Array2::from_shape_fn((rows, cols), |_| cast(dist.sample(rng)))
}
