use serde::{Deserialize, Serialize};

/// A named, shaped block of parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl ParamTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            name: name.into(),
            shape,
            data,
        }
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::new(name, shape, vec![0.0; n])
    }
}

/// An ordered parameter collection, cloneable and updatable by gradient steps.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamSet {
    pub tensors: Vec<ParamTensor>,
}

impl ParamSet {
    pub fn new(tensors: Vec<ParamTensor>) -> Self {
        Self { tensors }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|t| ParamTensor::zeros(t.name.clone(), t.shape.clone()))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&ParamTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamTensor> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    /// `self += s * other`; both sets must share the same layout.
    pub fn axpy(&mut self, s: f64, other: &ParamSet) {
        debug_assert_eq!(self.tensors.len(), other.tensors.len());
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            debug_assert_eq!(a.shape, b.shape);
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += s * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn iter_values(&self) -> impl Iterator<Item = &f64> {
        self.tensors.iter().flat_map(|t| t.data.iter())
    }

    pub fn iter_values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.tensors.iter_mut().flat_map(|t| t.data.iter_mut())
    }

    pub fn dot(&self, other: &ParamSet) -> f64 {
        self.iter_values().zip(other.iter_values()).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs_diff(&self, other: &ParamSet) -> f64 {
        self.iter_values()
            .zip(other.iter_values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Flat index → `(tensor index, offset)`.
    pub fn locate(&self, mut flat: usize) -> Option<(usize, usize)> {
        for (i, t) in self.tensors.iter().enumerate() {
            if flat < t.data.len() {
                return Some((i, flat));
            }
            flat -= t.data.len();
        }
        None
    }

    pub fn value_at(&self, flat: usize) -> f64 {
        let (i, o) = self.locate(flat).expect("flat index in range");
        self.tensors[i].data[o]
    }

    pub fn set_at(&mut self, flat: usize, v: f64) {
        let (i, o) = self.locate(flat).expect("flat index in range");
        self.tensors[i].data[o] = v;
    }
}
