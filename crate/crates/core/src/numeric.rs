//! Compensated reductions.
//!
//! Every sum in the crate goes through [`sum`] (Neumaier's variant of Kahan
//! summation), so reductions are order-stable and accurate to a few ulps
//! regardless of matrix size.

use ndarray::{Array1, Array2, ArrayBase, Axis, Data, Dimension, Ix2};

/// Running Neumaier-compensated sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct Accumulator {
    sum: f64,
    comp: f64,
}

impl Accumulator {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Neumaier-compensated sum.
pub fn sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = Accumulator::default();
    for x in values {
        acc.add(x);
    }
    acc.value()
}

/// Frobenius / Euclidean inner product of two equally shaped arrays.
pub fn dot<S1, S2, D>(x: &ArrayBase<S1, D>, y: &ArrayBase<S2, D>) -> f64
where
    S1: Data<Elem = f64>,
    S2: Data<Elem = f64>,
    D: Dimension,
{
    debug_assert_eq!(x.shape(), y.shape());
    sum(x.iter().zip(y.iter()).map(|(a, b)| a * b))
}

/// Euclidean (Frobenius for matrices) norm.
pub fn norm<S, D>(x: &ArrayBase<S, D>) -> f64
where
    S: Data<Elem = f64>,
    D: Dimension,
{
    sum(x.iter().map(|v| v * v)).sqrt()
}

pub fn norm1<S, D>(x: &ArrayBase<S, D>) -> f64
where
    S: Data<Elem = f64>,
    D: Dimension,
{
    sum(x.iter().map(|v| v.abs()))
}

pub fn norm_inf<S, D>(x: &ArrayBase<S, D>) -> f64
where
    S: Data<Elem = f64>,
    D: Dimension,
{
    x.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// `X e_n`.
pub fn row_sums<S: Data<Elem = f64>>(x: &ArrayBase<S, Ix2>) -> Array1<f64> {
    x.axis_iter(Axis(0)).map(|row| sum(row.iter().copied())).collect()
}

/// `X^T e_m`.
pub fn col_sums<S: Data<Elem = f64>>(x: &ArrayBase<S, Ix2>) -> Array1<f64> {
    x.axis_iter(Axis(1)).map(|col| sum(col.iter().copied())).collect()
}

/// `K v` with compensated row reductions.
pub fn matvec(k: &Array2<f64>, v: &Array1<f64>) -> Array1<f64> {
    k.axis_iter(Axis(0))
        .map(|row| sum(row.iter().zip(v.iter()).map(|(a, b)| a * b)))
        .collect()
}

/// `K^T u` with compensated column reductions.
pub fn matvec_t(k: &Array2<f64>, u: &Array1<f64>) -> Array1<f64> {
    k.axis_iter(Axis(1))
        .map(|col| sum(col.iter().zip(u.iter()).map(|(a, b)| a * b)))
        .collect()
}

/// `log Σ exp(x_i)`, stable for any finite input; `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp<I: IntoIterator<Item = f64> + Clone>(values: I) -> f64 {
    let max = values.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + sum(values.into_iter().map(|x| (x - max).exp())).ln()
}

/// `log(exp(x) + exp(y))`.
pub fn log_add_exp(x: f64, y: f64) -> f64 {
    let hi = x.max(y);
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    let lo = x.min(y);
    hi + (lo - hi).exp().ln_1p()
}
