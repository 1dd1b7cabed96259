//! Dense f64 numeric kernel: parameter storage, an operation tape with
//! hand-written reverse-mode rules, Adam, and a finite-difference checker.

mod adam;
mod check;
mod sparse;
mod tape;

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub use adam::{adam_step, Adam, AdamConfig};
pub use check::grad_check;
pub use sparse::SparseRows;
pub use tape::{AggPlan, LinInput, Tape, Var};
pub(crate) use tape::axpy;

/// Probability clamp used by [`bce_loss`] and the tape's BCE node.
pub const BCE_EPS: f64 = 1e-7;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// Plain triple-loop product, used by oracles and small helpers.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "{}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.data[k * other.cols + j];
                }
            }
        }
        Ok(out)
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
}

impl ParamTensor {
    /// Matrix view: 1-D tensors are a single row, higher ranks fold trailing axes.
    pub fn matrix_dims(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [] => (1, 1),
            [n] => (1, *n),
            [r, rest @ ..] => (*r, rest.iter().product()),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Serialised tensor: shape plus row-major values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Named tensors in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamRegistry {
    tensors: Vec<ParamTensor>,
    by_name: HashMap<String, ParamId>,
}

impl ParamRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, shape: &[usize], values: Vec<f64>) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        if values.len() != n {
            return Err(Error::Shape(format!(
                "tensor {name:?}: {} values for shape {shape:?}",
                values.len()
            )));
        }
        if self.by_name.contains_key(name) {
            return Err(Error::Config(format!("tensor {name:?} registered twice")));
        }
        let id = ParamId(self.tensors.len());
        self.tensors.push(ParamTensor {
            name: name.to_string(),
            shape: shape.to_vec(),
            grad: vec![0.0; n],
            values,
        });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.register(name, shape, vec![0.0; shape.iter().product()])
    }

    /// Glorot-uniform initialisation for a `fan_out x fan_in` matrix.
    pub fn glorot(&mut self, name: &str, fan_out: usize, fan_in: usize, rng: &mut seed::Rng) -> Result<ParamId> {
        let limit = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
        let values = (0..fan_out * fan_in).map(|_| rng.gen_range(-limit..limit)).collect();
        self.register(name, &[fan_out, fan_in], values)
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamTensor {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&ParamTensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn tensors(&self) -> &[ParamTensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [ParamTensor] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(ParamTensor::len).sum()
    }

    pub fn zero_grads(&mut self) {
        for t in &mut self.tensors {
            t.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn flat_values(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.values.iter().copied()).collect()
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.grad.iter().copied()).collect()
    }

    pub fn set_flat_values(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::Shape(format!(
                "{} flat values for {} parameters",
                flat.len(),
                self.num_scalars()
            )));
        }
        let mut off = 0;
        for t in &mut self.tensors {
            let n = t.values.len();
            t.values.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Locates flat coordinate `k` as (tensor, offset).
    pub fn locate(&self, mut k: usize) -> Option<(ParamId, usize)> {
        for (i, t) in self.tensors.iter().enumerate() {
            if k < t.len() {
                return Some((ParamId(i), k));
            }
            k -= t.len();
        }
        None
    }

    pub fn to_records(&self) -> IndexMap<String, TensorRecord> {
        self.tensors
            .iter()
            .map(|t| {
                (
                    t.name.clone(),
                    TensorRecord {
                        shape: t.shape.clone(),
                        values: t.values.clone(),
                    },
                )
            })
            .collect()
    }

    pub fn from_records(records: &IndexMap<String, TensorRecord>) -> Result<Self> {
        let mut reg = ParamRegistry::new();
        for (name, r) in records {
            reg.register(name, &r.shape, r.values.clone())?;
        }
        Ok(reg)
    }

    /// Copies values from `other` tensor by tensor; names and shapes must agree.
    pub fn load_values_from(&mut self, other: &ParamRegistry) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::Incompatible(format!(
                "{} tensors vs {} in checkpoint",
                self.len(),
                other.len()
            )));
        }
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            if a.name != b.name || a.shape != b.shape {
                return Err(Error::Incompatible(format!(
                    "tensor {:?} {:?} vs checkpoint {:?} {:?}",
                    a.name, a.shape, b.name, b.shape
                )));
            }
            a.values.copy_from_slice(&b.values);
        }
        Ok(())
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string(&self.to_records())?;
        fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_records(&serde_json::from_str(&body)?)
    }
}

/// `W x + b` for a single vector.
pub fn linear(x: &[f64], w: &ParamTensor, b: &ParamTensor) -> Result<Vec<f64>> {
    let (out, inp) = w.matrix_dims();
    if w.shape.len() != 2 || inp != x.len() || b.len() != out {
        return Err(Error::Shape(format!(
            "linear: W {:?}, b {:?}, x [{}]",
            w.shape,
            b.shape,
            x.len()
        )));
    }
    Ok((0..out)
        .map(|o| {
            let row = &w.values[o * inp..(o + 1) * inp];
            row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b.values[o]
        })
        .collect())
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| sigmoid_scalar(v)).collect()
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverted-dropout scale factors: 0 with probability `rate`, else `1/(1-rate)`.
pub fn dropout_scales(n: usize, rate: f64, rng: &mut seed::Rng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..n).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep }).collect()
}

/// Inverted dropout; identity in eval mode or at rate 0.
pub fn dropout(x: &[f64], rate: f64, training: bool, seed: u64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok(x.to_vec());
    }
    let scales = dropout_scales(x.len(), rate, &mut seed::rng(seed, "dropout"));
    Ok(x.iter().zip(scales).map(|(v, s)| v * s).collect())
}

/// Mean binary cross-entropy over entries with `mask` set.
pub fn bce_loss(p: &[f64], y: &[f64], mask: &[bool]) -> Result<f64> {
    if p.len() != y.len() || p.len() != mask.len() {
        return Err(Error::Shape("bce_loss: p, y and mask lengths differ".into()));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((&p, &y), &m) in p.iter().zip(y).zip(mask) {
        if m {
            sum += bce_term(p, y);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Empty("bce_loss mask selects no entries".into()));
    }
    Ok(sum / n as f64)
}

pub(crate) fn bce_term(p: f64, y: f64) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}
