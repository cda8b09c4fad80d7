//! Dense row-major tensors, a reverse-mode tape, parameter storage and Adam.
//!
//! Everything runs in `f64`. Gradient checks against central finite
//! differences are only meaningful at this precision.

mod adam;
mod gradcheck;
mod params;
mod tape;

pub use adam::{adam_step, Adam, AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckReport};
pub use params::{Gradients, Param, ParamId, ParamStore};
pub use tape::{Tape, Var};

use rand::Rng;

use crate::error::{Error, Result};

/// Likelihoods are clamped to this value before taking a log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("dimensions must be positive, got {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} holds {n} values but {} were given",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    /// Panicking constructor for internal code whose shapes are known good.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: vec![1, 1], data: vec![value] }
    }

    /// A `[1, n]` row vector.
    pub fn row(values: Vec<f64>) -> Self {
        Tensor { shape: vec![1, values.len()], data: values }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
        Tensor { shape: shape.to_vec(), data }
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Leading dimension of a 2-D tensor.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Trailing extent; for a 2-D tensor this is the column count.
    pub fn cols(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::NumericDomain(format!(
                "{what}: non-finite value {} at flat index {i}",
                self.data[i]
            ))),
            None => Ok(()),
        }
    }
}

/// Splits `shape` around `axis` into (outer, extent, inner) strides.
fn axis_layout(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn softmax_in_place(data: &mut [f64], shape: &[usize], axis: usize) {
    let (outer, extent, inner) = axis_layout(shape, axis);
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| o * extent * inner + k * inner + i;
            let max = (0..extent).map(|k| data[at(k)]).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for k in 0..extent {
                let e = (data[at(k)] - max).exp();
                data[at(k)] = e;
                sum += e;
            }
            for k in 0..extent {
                data[at(k)] /= sum;
            }
        }
    }
}

/// Backward of softmax along `axis`: `dx = y * (dy - sum(dy * y))`.
pub(crate) fn softmax_backward(y: &[f64], dy: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, extent, inner) = axis_layout(shape, axis);
    let mut dx = vec![0.0; y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| o * extent * inner + k * inner + i;
            let dot: f64 = (0..extent).map(|k| y[at(k)] * dy[at(k)]).sum();
            for k in 0..extent {
                dx[at(k)] = y[at(k)] * (dy[at(k)] - dot);
            }
        }
    }
    dx
}

/// Max-stabilized softmax along `axis`.
pub fn softmax(logits: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= logits.shape.len() {
        return Err(Error::Shape(format!(
            "softmax axis {axis} out of range for shape {:?}",
            logits.shape
        )));
    }
    logits.check_finite("softmax input")?;
    let mut out = logits.clone();
    softmax_in_place(&mut out.data, &logits.shape, axis);
    Ok(out)
}

/// `-ln(prob)`, with `prob` first clamped to [`PROB_FLOOR`] when `floor` is set.
pub fn cross_entropy(prob: f64, floor: Option<f64>) -> Result<f64> {
    if prob.is_nan() || prob > 1.0 {
        return Err(Error::NumericDomain(format!("probability {prob} outside [0, 1]")));
    }
    let p = match floor {
        Some(f) => prob.max(f),
        None => prob,
    };
    if p <= 0.0 {
        return Err(Error::NumericDomain(format!("cannot take -log of probability {p}")));
    }
    Ok(-p.ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(Tensor::new(vec![2, 3], vec![0.0; 5]), Err(Error::Shape(_))));
        assert!(matches!(Tensor::new(vec![0, 3], vec![]), Err(Error::Shape(_))));
    }

    #[test]
    fn softmax_examples() {
        let u = softmax(&Tensor::row(vec![0.0, 0.0, 0.0]), 1).unwrap();
        for v in u.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = softmax(&Tensor::row(vec![0.0, 2f64.ln()]), 1).unwrap();
        assert!((p.data()[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((p.data()[1] - 2.0 / 3.0).abs() < 1e-15);
        let big = softmax(&Tensor::row(vec![1000.0, 1000.0]), 1).unwrap();
        assert_eq!(big.data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_along_leading_axis() {
        let t = Tensor::matrix(2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let s = softmax(&t, 0).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let t = Tensor::row(vec![0.0, f64::NAN]);
        assert!(matches!(softmax(&t, 1), Err(Error::NumericDomain(_))));
        let t = Tensor::row(vec![f64::INFINITY, 0.0]);
        assert!(matches!(softmax(&t, 1), Err(Error::NumericDomain(_))));
        assert!(matches!(softmax(&t, 2), Err(Error::Shape(_))));
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy(1.0, Some(PROB_FLOOR)).unwrap(), 0.0);
        assert!((cross_entropy(0.5, Some(PROB_FLOOR)).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!((cross_entropy(0.38, Some(PROB_FLOOR)).unwrap() - 0.967_584_026_7).abs() < 1e-9);
        assert!((cross_entropy(0.0, Some(PROB_FLOOR)).unwrap() - 12.0 * 10f64.ln()).abs() < 1e-9);
        assert!(matches!(cross_entropy(0.0, None), Err(Error::NumericDomain(_))));
        assert!(matches!(cross_entropy(1.5, None), Err(Error::NumericDomain(_))));
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(
            rows in 1usize..5,
            cols in 1usize..9,
            seed in any::<u64>(),
            scale in 0.1f64..200.0,
        ) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let t = Tensor::uniform(&[rows, cols], scale, &mut rng);
            for axis in 0..2 {
                let s = softmax(&t, axis).unwrap();
                let (outer, extent, inner) = axis_layout(s.shape(), axis);
                for o in 0..outer {
                    for i in 0..inner {
                        let sum: f64 = (0..extent).map(|k| s.data()[o * extent * inner + k * inner + i]).sum();
                        prop_assert!((sum - 1.0).abs() < 1e-12);
                    }
                }
                prop_assert!(s.data().iter().all(|&v| v >= 0.0));
            }
        }
    }
}
