//! Dense f64 linear algebra, activations and seeded random streams.
//!
//! Everything is row-major and summed left-to-right so that results are
//! bit-reproducible across runs.

use std::fmt;
use std::ops::{Deref, DerefMut};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense vector of f64.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Vector {
    data: Vec<f64>,
}

impl Vector {
    pub fn zeros(dim: usize) -> Self {
        Self {
            data: vec![0.0; dim],
        }
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        Self {
            data: vec![value; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Euclidean norm.
    pub fn norm(&self) -> f64 {
        norm2(&self.data)
    }
}

impl From<Vec<f64>> for Vector {
    fn from(data: Vec<f64>) -> Self {
        Self { data }
    }
}

impl From<&[f64]> for Vector {
    fn from(data: &[f64]) -> Self {
        Self {
            data: data.to_vec(),
        }
    }
}

impl Deref for Vector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.data
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Dense row-major matrix of f64.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::new",
                format!("{rows}x{cols}"),
                format!("{} elements", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::shape("Matrix::from_rows", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_vectors(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    /// Matrix-vector product `M v`.
    pub fn gemv(&self, v: &[f64]) -> Result<Vector> {
        if v.len() != self.cols {
            return Err(Error::shape(
                "gemv",
                format!("matrix {}x{}", self.rows, self.cols),
                format!("vector {}", v.len()),
            ));
        }
        let mut out = vec![0.0; self.rows];
        self.mul_acc(v, &mut out);
        Ok(out.into())
    }

    /// `out += M v`. Dimensions are the caller's responsibility.
    pub(crate) fn mul_acc(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols.max(1))) {
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(v) {
                acc += a * b;
            }
            *o += acc;
        }
    }

    /// `out += Mᵀ v`.
    pub(crate) fn mul_t_acc(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (vi, row) in v.iter().zip(self.data.chunks_exact(self.cols.max(1))) {
            if *vi == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * vi;
            }
        }
    }

    /// `M += a bᵀ`.
    pub(crate) fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (ai, row) in a.iter().zip(self.data.chunks_exact_mut(self.cols.max(1))) {
            if *ai == 0.0 {
                continue;
            }
            for (m, bj) in row.iter_mut().zip(b) {
                *m += ai * bj;
            }
        }
    }

    /// Largest singular value.
    pub fn spectral_norm(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        let m = nalgebra::DMatrix::from_row_slice(self.rows, self.cols, &self.data);
        m.singular_values().max()
    }
}

impl fmt::Display for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

/// Matrix-vector product with a checked shape.
pub fn gemv(m: &Matrix, v: &Vector) -> Result<Vector> {
    m.gemv(v)
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn add_assign(dst: &mut [f64], src: &[f64]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Activation tag as it appears in configurations. The p-sigmoid scale
/// lives with the layer parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Relu,
    Tanh,
    PSigmoid,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::PSigmoid => "psigmoid",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sigmoid" => Some(Activation::Sigmoid),
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            "psigmoid" | "p-sigmoid" => Some(Activation::PSigmoid),
            _ => None,
        }
    }

    /// `out[i] = f(a[i])`, scaled by `scale[i]` for p-sigmoid.
    pub(crate) fn apply(self, scale: Option<&[f64]>, a: &[f64], out: &mut [f64]) {
        match self {
            Activation::Sigmoid => out.iter_mut().zip(a).for_each(|(o, &x)| *o = sigmoid(x)),
            Activation::Relu => out.iter_mut().zip(a).for_each(|(o, &x)| *o = relu(x)),
            Activation::Tanh => out.iter_mut().zip(a).for_each(|(o, &x)| *o = x.tanh()),
            Activation::PSigmoid => {
                let beta = scale.expect("p-sigmoid needs a scale vector");
                for ((o, &x), &b) in out.iter_mut().zip(a).zip(beta) {
                    *o = b * sigmoid(x);
                }
            }
        }
    }

    /// Elementwise derivative `f'(a)`. ReLU'(0) = 0.
    pub(crate) fn derivative(self, scale: Option<&[f64]>, a: &[f64], out: &mut [f64]) {
        match self {
            Activation::Sigmoid => out
                .iter_mut()
                .zip(a)
                .for_each(|(o, &x)| *o = sigmoid(x) * sigmoid(-x)),
            Activation::Relu => out
                .iter_mut()
                .zip(a)
                .for_each(|(o, &x)| *o = if x > 0.0 { 1.0 } else { 0.0 }),
            Activation::Tanh => out.iter_mut().zip(a).for_each(|(o, &x)| {
                let t = x.tanh();
                *o = 1.0 - t * t;
            }),
            Activation::PSigmoid => {
                let beta = scale.expect("p-sigmoid needs a scale vector");
                for ((o, &x), &b) in out.iter_mut().zip(a).zip(beta) {
                    *o = b * sigmoid(x) * sigmoid(-x);
                }
            }
        }
    }
}

/// An activation function together with any parameters it carries.
#[derive(Clone, Debug, PartialEq)]
pub enum ActivationKind {
    Sigmoid,
    Relu,
    Tanh,
    /// `β ⊙ σ(a)` with a per-unit scale.
    PSigmoid(Vector),
}

impl ActivationKind {
    pub fn tag(&self) -> Activation {
        match self {
            ActivationKind::Sigmoid => Activation::Sigmoid,
            ActivationKind::Relu => Activation::Relu,
            ActivationKind::Tanh => Activation::Tanh,
            ActivationKind::PSigmoid(_) => Activation::PSigmoid,
        }
    }

    fn scale(&self, dim: usize) -> Result<Option<&[f64]>> {
        match self {
            ActivationKind::PSigmoid(beta) if beta.dim() != dim => {
                Err(Error::shape("p-sigmoid scale", beta.dim(), dim))
            }
            ActivationKind::PSigmoid(beta) => Ok(Some(beta.as_slice())),
            _ => Ok(None),
        }
    }
}

/// Elementwise activation.
pub fn activate(kind: &ActivationKind, a: &Vector) -> Result<Vector> {
    let scale = kind.scale(a.dim())?;
    let mut out = Vector::zeros(a.dim());
    kind.tag().apply(scale, a, &mut out);
    Ok(out)
}

/// Elementwise derivative of the activation with respect to its input.
pub fn activate_grad(kind: &ActivationKind, a: &Vector) -> Result<Vector> {
    let scale = kind.scale(a.dim())?;
    let mut out = Vector::zeros(a.dim());
    kind.tag().derivative(scale, a, &mut out);
    Ok(out)
}

/// Mixes a seed with a stream index (splitmix64 finaliser) so that
/// independent tensors draw from independent ChaCha8 streams.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Reproducible random source: ChaCha8 seeded via `seed_from_u64`.
///
/// Uniform doubles take the top 53 bits of each 64-bit output, which keeps
/// the stream identical across platforms and `rand` minor versions.
#[derive(Clone, Debug)]
pub struct SeededRng {
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform on [0, 1).
    pub fn unit(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let x = lo + (hi - lo) * self.unit();
        if x >= hi {
            lo
        } else {
            x
        }
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.inner);
    }
}

/// `rows x cols` matrix with entries uniform on [lo, hi).
pub fn seeded_uniform(rows: usize, cols: usize, lo: f64, hi: f64, seed: u64) -> Result<Matrix> {
    if !(lo < hi) {
        return Err(Error::config(format!(
            "seeded_uniform needs lo < hi, got [{lo}, {hi})"
        )));
    }
    let mut rng = SeededRng::new(seed);
    let data = (0..rows * cols).map(|_| rng.uniform(lo, hi)).collect();
    Matrix::new(rows, cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemv_examples() {
        let id = Matrix::identity(2);
        assert_eq!(id.gemv(&[3.0, -1.0]).unwrap().as_slice(), &[3.0, -1.0]);
        let z = Matrix::zeros(3, 2);
        assert_eq!(z.gemv(&[5.0, 7.0]).unwrap().as_slice(), &[0.0; 3]);
        let m = Matrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m.gemv(&[1.0, 1.0]).unwrap().as_slice(), &[3.0, 7.0]);
    }

    #[test]
    fn gemv_reports_both_shapes() {
        let m = Matrix::zeros(2, 3);
        let err = m.gemv(&[1.0, 2.0]).unwrap_err().to_string();
        assert!(err.contains("2x3") && err.contains("vector 2"), "{err}");
    }

    #[test]
    fn activation_examples() {
        let a = Vector::from(vec![0.0]);
        assert_eq!(activate(&ActivationKind::Sigmoid, &a).unwrap()[0], 0.5);
        let r = activate(&ActivationKind::Relu, &vec![-2.0, 3.0].into()).unwrap();
        assert_eq!(r.as_slice(), &[0.0, 3.0]);
        let one = ActivationKind::PSigmoid(vec![1.0].into());
        assert_eq!(activate(&one, &a).unwrap()[0], 0.5);
        let zero = ActivationKind::PSigmoid(vec![0.0].into());
        assert_eq!(activate(&zero, &a).unwrap()[0], 0.0);
    }

    #[test]
    fn activation_grad_examples() {
        let g = activate_grad(&ActivationKind::Sigmoid, &vec![0.0].into()).unwrap();
        assert_eq!(g[0], 0.25);
        let g = activate_grad(&ActivationKind::Relu, &vec![-1.0, 0.0, 2.0].into()).unwrap();
        assert_eq!(g.as_slice(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn psigmoid_scale_dimension_checked() {
        let k = ActivationKind::PSigmoid(vec![1.0, 1.0].into());
        assert!(activate(&k, &vec![0.0].into()).is_err());
    }

    #[test]
    fn seeded_uniform_is_reproducible() {
        let a = seeded_uniform(4, 5, -1.0, 1.0, 42).unwrap();
        let b = seeded_uniform(4, 5, -1.0, 1.0, 42).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
        let c = seeded_uniform(4, 5, -1.0, 1.0, 43).unwrap();
        assert!(a.as_slice().iter().zip(c.as_slice()).any(|(x, y)| x != y));
    }

    #[test]
    fn seeded_uniform_narrow_interval() {
        let hi = 1.0;
        let lo = hi - 1e-9;
        let m = seeded_uniform(10, 10, lo, hi, 7).unwrap();
        assert!(m.as_slice().iter().all(|&x| x >= lo && x < hi));
    }

    #[test]
    fn seeded_uniform_rejects_empty_interval() {
        assert!(seeded_uniform(1, 1, 1.0, 1.0, 0).is_err());
        assert!(seeded_uniform(1, 1, 2.0, 1.0, 0).is_err());
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let m = Matrix::new(2, 2, vec![3.0, 0.0, 0.0, -5.0]).unwrap();
        assert!((m.spectral_norm() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn transpose_product_and_outer() {
        let m = Matrix::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut out = vec![0.0; 3];
        m.mul_t_acc(&[1.0, -1.0], &mut out);
        assert_eq!(out, vec![-3.0, -3.0, -3.0]);
        let mut g = Matrix::zeros(2, 3);
        g.add_outer(&[1.0, 2.0], &[1.0, 0.0, -1.0]);
        assert_eq!(g.as_slice(), &[1.0, 0.0, -1.0, 2.0, 0.0, -2.0]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn gemv_is_linear(
                m in proptest::collection::vec(-1.0f64..1.0, 12),
                u in proptest::collection::vec(-1.0f64..1.0, 4),
                v in proptest::collection::vec(-1.0f64..1.0, 4),
                alpha in -1.0f64..1.0,
                beta in -1.0f64..1.0,
            ) {
                let m = Matrix::new(3, 4, m).unwrap();
                let mix: Vec<f64> = u.iter().zip(&v).map(|(a, b)| alpha * a + beta * b).collect();
                let lhs = m.gemv(&mix).unwrap();
                let mu = m.gemv(&u).unwrap();
                let mv = m.gemv(&v).unwrap();
                for i in 0..3 {
                    prop_assert!((lhs[i] - (alpha * mu[i] + beta * mv[i])).abs() < 1e-12);
                }
            }

            #[test]
            fn sigmoid_grad_bounded(a in -50.0f64..50.0) {
                let g = activate_grad(&ActivationKind::Sigmoid, &vec![a].into()).unwrap()[0];
                prop_assert!(g > 0.0 && g <= 0.25);
                if a.abs() > 1e-6 {
                    prop_assert!(g < 0.25);
                }
            }

            #[test]
            fn unit_psigmoid_is_sigmoid(a in proptest::collection::vec(-30.0f64..30.0, 1..8)) {
                let n = a.len();
                let a = Vector::from(a);
                let p = activate(&ActivationKind::PSigmoid(Vector::filled(n, 1.0)), &a).unwrap();
                let s = activate(&ActivationKind::Sigmoid, &a).unwrap();
                prop_assert_eq!(p.as_slice(), s.as_slice());
            }
        }
    }
}
