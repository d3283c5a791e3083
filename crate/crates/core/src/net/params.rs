//! Flat parameter storage with named, shaped views.
//!
//! All trainable tensors of a model live in one contiguous `Vec<f64>`; the
//! [`Layout`] records each tensor's name, shape and offset. Gradients and
//! optimizer moments reuse the same layout, which keeps Adam, clipping and
//! checkpointing as plain loops over one buffer.

use ndarray::{ArrayView1, ArrayView2, ArrayView3, ArrayViewMut1, ArrayViewMut2, ArrayViewMut3};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

/// How a tensor is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Init {
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
    Glorot { fan_in: usize, fan_out: usize },
    /// Zeros, except `value` on `[start, start + len)`.
    Constant { value: f64, start: usize, len: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub init: Init,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Layout {
    tensors: Vec<TensorSpec>,
    len: usize,
}

impl Layout {
    pub(crate) fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> TensorId {
        let spec = TensorSpec {
            name: name.into(),
            shape: shape.to_vec(),
            offset: self.len,
            init,
        };
        self.len += spec.len();
        self.tensors.push(spec);
        TensorId(self.tensors.len() - 1)
    }

    pub(crate) fn weight(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> TensorId {
        self.add(name, &[rows, cols], Init::Glorot { fan_in: rows, fan_out: cols })
    }

    pub(crate) fn bias(&mut self, name: impl Into<String>, len: usize) -> TensorId {
        self.add(name, &[len], Init::Constant { value: 0.0, start: 0, len: 0 })
    }

    /// Total scalar count.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.tensors
    }

    pub fn spec(&self, id: TensorId) -> &TensorSpec {
        &self.tensors[id.0]
    }

    pub fn find(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn initialize(&self, rng: &mut impl Rng) -> Vec<f64> {
        let mut data = vec![0.0; self.len];
        for t in &self.tensors {
            let slot = &mut data[t.range()];
            match t.init {
                Init::Glorot { fan_in, fan_out } => {
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    for v in slot.iter_mut() {
                        *v = rng.random_range(-limit..limit);
                    }
                }
                Init::Constant { value, start, len } => {
                    slot[start..start + len].fill(value);
                }
            }
        }
        data
    }

    pub fn view1<'a>(&self, data: &'a [f64], id: TensorId) -> ArrayView1<'a, f64> {
        let t = self.spec(id);
        ArrayView1::from(&data[t.range()])
    }

    pub fn view2<'a>(&self, data: &'a [f64], id: TensorId) -> ArrayView2<'a, f64> {
        let t = self.spec(id);
        ArrayView2::from_shape((t.shape[0], t.shape[1]), &data[t.range()])
            .expect("layout shape matches its range")
    }

    pub fn view3<'a>(&self, data: &'a [f64], id: TensorId) -> ArrayView3<'a, f64> {
        let t = self.spec(id);
        ArrayView3::from_shape((t.shape[0], t.shape[1], t.shape[2]), &data[t.range()])
            .expect("layout shape matches its range")
    }

    pub fn view1_mut<'a>(&self, data: &'a mut [f64], id: TensorId) -> ArrayViewMut1<'a, f64> {
        let t = self.spec(id);
        ArrayViewMut1::from(&mut data[t.range()])
    }

    pub fn view2_mut<'a>(&self, data: &'a mut [f64], id: TensorId) -> ArrayViewMut2<'a, f64> {
        let t = self.spec(id);
        ArrayViewMut2::from_shape((t.shape[0], t.shape[1]), &mut data[t.range()])
            .expect("layout shape matches its range")
    }

    pub fn view3_mut<'a>(&self, data: &'a mut [f64], id: TensorId) -> ArrayViewMut3<'a, f64> {
        let t = self.spec(id);
        ArrayViewMut3::from_shape((t.shape[0], t.shape[1], t.shape[2]), &mut data[t.range()])
            .expect("layout shape matches its range")
    }
}

/// Gradient buffer laid out like the model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub values: Vec<f64>,
}

impl Gradients {
    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.values {
            *v *= s;
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
