//! Float64 vector arithmetic, seeded random streams, and a central-difference
//! gradient oracle.
//!
//! Everything in the toolkit that is "a point in parameter space" is a
//! [`ParamVector`]: model weights, gradients, optimizer moments, and the
//! coefficient vectors of the influence module.

use std::ops::{Index, IndexMut};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flat, fixed-length vector of model parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(dim: usize) -> Self {
        ParamVector(vec![0.0; dim])
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        ParamVector(vec![value; dim])
    }

    /// Wraps `values`, rejecting NaN and infinities.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let v = ParamVector(values);
        v.check_finite("ParamVector::new")?;
        Ok(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn check_finite(&self, context: &'static str) -> Result<()> {
        match self.0.iter().position(|x| !x.is_finite()) {
            Some(index) => Err(Error::NonFinite { context, index }),
            None => Ok(()),
        }
    }

    pub fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() == expected {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected, found: self.dim() })
        }
    }

    fn zip_map(&self, other: &ParamVector, f: impl Fn(f64, f64) -> f64) -> ParamVector {
        assert_eq!(self.dim(), other.dim(), "ParamVector dimension mismatch");
        ParamVector(self.0.iter().zip(&other.0).map(|(&a, &b)| f(a, b)).collect())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ParamVector {
        ParamVector(self.0.iter().map(|&a| f(a)).collect())
    }

    pub fn add(&self, other: &ParamVector) -> ParamVector {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ParamVector) -> ParamVector {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> ParamVector {
        self.map(|a| c * a)
    }

    /// Elementwise product.
    pub fn hadamard(&self, other: &ParamVector) -> ParamVector {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn elementwise_max(&self, other: &ParamVector) -> ParamVector {
        self.zip_map(other, f64::max)
    }

    /// Symmetric clip: every entry is limited to `[-c, c]`.
    pub fn clip(&self, c: f64) -> ParamVector {
        self.map(|a| clip_scalar(a, c))
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &ParamVector) {
        assert_eq!(self.dim(), other.dim(), "ParamVector dimension mismatch");
        for (a, &b) in self.0.iter_mut().zip(&other.0) {
            *a += alpha * b;
        }
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        assert_eq!(self.dim(), other.dim(), "ParamVector dimension mismatch");
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, &x| m.max(x.abs()))
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        ParamVector(values)
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for ParamVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// `max(min(x, c), -c)`
pub fn clip_scalar(x: f64, c: f64) -> f64 {
    x.min(c).max(-c)
}

/// Cosine similarity; zero when either vector is zero.
pub fn cosine_similarity(a: &ParamVector, b: &ParamVector) -> f64 {
    let denom = a.norm() * b.norm();
    if denom == 0.0 {
        0.0
    } else {
        a.dot(b) / denom
    }
}

/// Purpose tag for an independent random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Data = 2,
    Shuffle = 3,
    Targets = 4,
    Test = 5,
}

/// Root seed of a run.
///
/// Streams are ChaCha8 keyed by the seed, with the stream purpose selecting the
/// ChaCha stream id, so draws for one purpose never shift another's sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Seed(pub u64);

impl Seed {
    pub fn rng(self, stream: Stream) -> ChaCha8Rng {
        self.rng_indexed(stream, 0)
    }

    /// A stream further keyed by `index` (e.g. an epoch number).
    pub fn rng_indexed(self, stream: Stream, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        rng.set_stream(((stream as u64) << 32) | (index & 0xffff_ffff));
        rng
    }
}

/// Central-difference gradient `(f(θ+h·e_i) − f(θ−h·e_i)) / 2h` per coordinate.
pub fn finite_diff_gradient<F>(f: F, theta: &ParamVector, step: f64) -> Result<ParamVector>
where
    F: Fn(&ParamVector) -> f64,
{
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {step}")));
    }
    let mut probe = theta.clone();
    let mut grad = Vec::with_capacity(theta.dim());
    for i in 0..theta.dim() {
        let orig = probe[i];
        probe[i] = orig + step;
        let plus = f(&probe);
        probe[i] = orig - step;
        let minus = f(&probe);
        probe[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite { context: "finite_diff_gradient objective", index: i });
        }
        grad.push((plus - minus) / (2.0 * step));
    }
    Ok(ParamVector(grad))
}
