//! Dense row-major f64 tensors. Only ranks 0..=2 are used by the models.

use serde::{Deserialize, Serialize};

use crate::error::GraphError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, GraphError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(GraphError::ShapeMismatch {
                op: "new",
                detail: format!("shape {:?} needs {} elements, got {}", shape, numel, data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![], data: vec![v] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; numel] }
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![v; numel] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    /// Rows/cols for rank-2 tensors.
    pub fn dims2(&self) -> Option<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Some((*r, *c)),
            _ => None,
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let (_, c) = self.dims2().expect("row() on non-matrix");
        &self.data[i * c..(i + 1) * c]
    }

    /// NaN or +inf anywhere. -inf is a legitimate log-zero and is allowed.
    pub fn has_bad_value(&self) -> bool {
        self.data.iter().any(|v| v.is_nan() || *v == f64::INFINITY)
    }
}

/// Numerically stable log(sum(exp(xs))). Empty input and all -inf both yield -inf.
pub fn logsumexp_slice(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: f64 = xs.iter().map(|x| (x - m).exp()).sum();
    m + s.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_product_must_match() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn logsumexp_of_two_zeros_is_ln2() {
        assert!((logsumexp_slice(&[0.0, 0.0]) - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn logsumexp_handles_neg_inf() {
        assert_eq!(logsumexp_slice(&[]), f64::NEG_INFINITY);
        assert_eq!(logsumexp_slice(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
        let v = logsumexp_slice(&[f64::NEG_INFINITY, 0.0]);
        assert!((v - 0.0).abs() < 1e-12);
    }

    #[test]
    fn logsumexp_shift_invariance() {
        let xs = [0.3, -1.2, 2.5];
        let c = 7.25;
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        assert!((logsumexp_slice(&shifted) - (logsumexp_slice(&xs) + c)).abs() < 1e-12);
    }
}
