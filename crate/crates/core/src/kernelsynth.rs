//! Synthetic series from Gaussian-process priors over randomly composed
//! kernels.
//!
//! A generator draws `j ~ U{1..J}` base kernels from a fixed bank (with
//! replacement), folds them left to right with a fresh random `+` or `×` at
//! each step, and samples a zero-mean GP on the integer grid `0..l_syn`.

use std::f64::consts::PI;
use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derive_rng;

/// Largest diagonal jitter tried before giving up on a factorization.
pub const MAX_JITTER: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BaseKernel {
    Constant { c: f64 },
    /// Variance is `sigma_n` itself, not its square.
    WhiteNoise { sigma_n: f64 },
    Linear { sigma: f64 },
    Rbf { length_scale: f64 },
    RationalQuadratic { alpha: f64 },
    Periodic { period: f64 },
}

impl BaseKernel {
    pub fn eval(&self, t: f64, u: f64) -> f64 {
        match *self {
            BaseKernel::Constant { c } => c,
            BaseKernel::WhiteNoise { sigma_n } => {
                if t == u {
                    sigma_n
                } else {
                    0.0
                }
            }
            BaseKernel::Linear { sigma } => sigma * sigma + t * u,
            BaseKernel::Rbf { length_scale } => {
                let d = t - u;
                (-(d * d) / (2.0 * length_scale * length_scale)).exp()
            }
            BaseKernel::RationalQuadratic { alpha } => {
                let d = t - u;
                (1.0 + d * d / (2.0 * alpha)).powf(-alpha)
            }
            BaseKernel::Periodic { period } => {
                let s = (PI * (t - u).abs() / period).sin();
                (-2.0 * s * s).exp()
            }
        }
    }
}

impl fmt::Display for BaseKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaseKernel::Constant { c } => write!(f, "Constant(c={c})"),
            BaseKernel::WhiteNoise { sigma_n } => write!(f, "WhiteNoise(sigma_n={sigma_n})"),
            BaseKernel::Linear { sigma } => write!(f, "Linear(sigma={sigma})"),
            BaseKernel::Rbf { length_scale } => write!(f, "RBF(l={length_scale})"),
            BaseKernel::RationalQuadratic { alpha } => write!(f, "RQ(alpha={alpha})"),
            BaseKernel::Periodic { period } => write!(f, "Periodic(p={period})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelOp {
    Add,
    Mul,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum KernelSpec {
    Leaf(BaseKernel),
    Node {
        op: KernelOp,
        left: Box<KernelSpec>,
        right: Box<KernelSpec>,
    },
}

impl KernelSpec {
    pub fn combine(op: KernelOp, left: KernelSpec, right: KernelSpec) -> Self {
        KernelSpec::Node {
            op,
            left: Box::new(left),
            right: Box::new(right),
        }
    }


    pub fn eval(&self, t: f64, u: f64) -> f64 {
        match self {
            KernelSpec::Leaf(k) => k.eval(t, u),
            KernelSpec::Node { op, left, right } => {
                let (a, b) = (left.eval(t, u), right.eval(t, u));
                match op {
                    KernelOp::Add => a + b,
                    KernelOp::Mul => a * b,
                }
            }
        }
    }

    pub fn num_leaves(&self) -> usize {
        match self {
            KernelSpec::Leaf(_) => 1,
            KernelSpec::Node { left, right, .. } => left.num_leaves() + right.num_leaves(),
        }
    }
}

impl From<BaseKernel> for KernelSpec {
    fn from(k: BaseKernel) -> Self {
        KernelSpec::Leaf(k)
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Leaf(k) => write!(f, "{k}"),
            KernelSpec::Node { op, left, right } => {
                let sym = match op {
                    KernelOp::Add => '+',
                    KernelOp::Mul => '*',
                };
                write!(f, "({left} {sym} {right})")
            }
        }
    }
}

impl std::ops::Add for KernelSpec {
    type Output = KernelSpec;

    fn add(self, other: KernelSpec) -> KernelSpec {
        KernelSpec::combine(KernelOp::Add, self, other)
    }
}

impl std::ops::Mul for KernelSpec {
    type Output = KernelSpec;

    fn mul(self, other: KernelSpec) -> KernelSpec {
        KernelSpec::combine(KernelOp::Mul, self, other)
    }
}

pub fn eval_kernel(spec: &KernelSpec, t: f64, u: f64) -> f64 {
    spec.eval(t, u)
}

/// The fixed set of base kernels a generator draws from, one entry per
/// (kernel, hyperparameter) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBank {
    pub entries: Vec<BaseKernel>,
}

impl Default for KernelBank {
    fn default() -> Self {
        let mut entries = vec![BaseKernel::Constant { c: 1.0 }];
        entries.extend([0.1, 1.0].map(|sigma_n| BaseKernel::WhiteNoise { sigma_n }));
        entries.extend([0.0, 1.0, 10.0].map(|sigma| BaseKernel::Linear { sigma }));
        entries.extend([0.1, 1.0, 10.0].map(|length_scale| BaseKernel::Rbf { length_scale }));
        entries.extend([0.1, 1.0, 10.0].map(|alpha| BaseKernel::RationalQuadratic { alpha }));
        entries.extend(
            [
                24.0, 48.0, 96.0, 168.0, 336.0, 672.0, 7.0, 14.0, 30.0, 60.0, 365.0, 730.0, 4.0,
                26.0, 52.0, 6.0, 12.0, 40.0, 10.0,
            ]
            .map(|period| BaseKernel::Periodic { period }),
        );
        KernelBank { entries }
    }
}

impl KernelBank {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> BaseKernel {
        self.entries[rng.random_range(0..self.entries.len())]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSynthConfig {
    pub max_kernels: usize,
    pub length: usize,
    pub jitter: f64,
}

impl Default for KernelSynthConfig {
    fn default() -> Self {
        KernelSynthConfig {
            max_kernels: 5,
            length: 1024,
            jitter: 1e-6,
        }
    }
}

impl KernelSynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_kernels == 0 {
            return Err(Error::Config("kernelsynth.max_kernels must be at least 1".into()));
        }
        if self.length < 2 {
            return Err(Error::Config("kernelsynth.length must be at least 2".into()));
        }
        if !(self.jitter > 0.0 && self.jitter <= MAX_JITTER) {
            return Err(Error::Config(format!(
                "kernelsynth.jitter must be in (0, {MAX_JITTER}]"
            )));
        }
        Ok(())
    }

    /// The time grid `0, 1, ..., length - 1`.
    pub fn grid(&self) -> Vec<f64> {
        (0..self.length).map(|i| i as f64).collect()
    }
}

/// Dense row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    n: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Matrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    fn add_diagonal(&mut self, v: f64) {
        for i in 0..self.n {
            self.data[i * self.n + i] += v;
        }
    }

    /// Lower-triangular `L` with `L Lᵀ = self`, or `None` if a pivot is not
    /// strictly positive.
    pub fn cholesky(&self) -> Option<Matrix> {
        let n = self.n;
        let mut l = Matrix::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                let (ri, rj) = (i * n, j * n);
                let dot: f64 = l.data[ri..ri + j]
                    .iter()
                    .zip(&l.data[rj..rj + j])
                    .map(|(a, b)| a * b)
                    .sum();
                let v = self.data[ri + j] - dot;
                if i == j {
                    if !(v > 0.0 && v.is_finite()) {
                        return None;
                    }
                    l.data[ri + i] = v.sqrt();
                } else {
                    l.data[ri + j] = v / l.data[rj + j];
                }
            }
        }
        Some(l)
    }

    /// `self · z` for a lower-triangular `self`.
    pub fn lower_mul(&self, z: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i)[..=i].iter().zip(z).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Gram matrix on `grid` with `jitter` on the diagonal. Each unordered pair is
/// evaluated once and mirrored, so the result is exactly symmetric.
pub fn gram_matrix(spec: &KernelSpec, grid: &[f64], jitter: f64) -> Matrix {
    let n = grid.len();
    let mut m = Matrix::zeros(n);
    for i in 0..n {
        for j in i..n {
            let v = spec.eval(grid[i], grid[j]);
            m.set(i, j, v);
            m.set(j, i, v);
        }
    }
    m.add_diagonal(jitter);
    m
}

/// A factored GP prior, reusable for many draws.
#[derive(Debug, Clone)]
pub struct GpSampler {
    factor: Matrix,
    jitter: f64,
}

impl GpSampler {
    /// Factors the Gram matrix, multiplying the jitter by 10 after each
    /// failed attempt until [`MAX_JITTER`] is exceeded.
    pub fn new(spec: &KernelSpec, grid: &[f64], jitter: f64) -> Result<Self> {
        let base = gram_matrix(spec, grid, 0.0);
        let mut eps = jitter;
        while eps <= MAX_JITTER * (1.0 + 1e-9) {
            let mut m = base.clone();
            m.add_diagonal(eps);
            if let Some(factor) = m.cholesky() {
                return Ok(GpSampler { factor, jitter: eps });
            }
            eps *= 10.0;
        }
        Err(Error::Numerical(format!(
            "Cholesky factorization failed at jitter {MAX_JITTER} for kernel {spec}"
        )))
    }

    /// Jitter that made the factorization succeed.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.factor.dim()).map(|_| rng.sample(StandardNormal)).collect();
        self.factor.lower_mul(&z)
    }
}

pub fn sample_gp<R: Rng + ?Sized>(
    spec: &KernelSpec,
    cfg: &KernelSynthConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    Ok(GpSampler::new(spec, &cfg.grid(), cfg.jitter)?.sample(rng))
}

/// Draws the number of kernels, the kernels, and the operators; the composed
/// kernel is a left fold.
pub fn sample_kernel_spec<R: Rng + ?Sized>(
    bank: &KernelBank,
    cfg: &KernelSynthConfig,
    rng: &mut R,
) -> KernelSpec {
    let j = rng.random_range(1..=cfg.max_kernels);
    let leaves: Vec<BaseKernel> = (0..j).map(|_| bank.sample(rng)).collect();
    let mut spec = KernelSpec::Leaf(leaves[0]);
    for &k in &leaves[1..] {
        let op = if rng.random::<bool>() {
            KernelOp::Add
        } else {
            KernelOp::Mul
        };
        spec = KernelSpec::combine(op, spec, KernelSpec::Leaf(k));
    }
    spec
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSeries {
    pub kernel: KernelSpec,
    pub values: Vec<f64>,
}

pub fn kernelsynth_generate<R: Rng + ?Sized>(
    bank: &KernelBank,
    cfg: &KernelSynthConfig,
    rng: &mut R,
) -> Result<SyntheticSeries> {
    cfg.validate()?;
    let kernel = sample_kernel_spec(bank, cfg, rng);
    let values = sample_gp(&kernel, cfg, rng)?;
    Ok(SyntheticSeries { kernel, values })
}

/// `n` synthetic series; item `i` uses the stream derived from `(seed, i)`.
pub fn generate_corpus(
    bank: &KernelBank,
    cfg: &KernelSynthConfig,
    n: usize,
    seed: u64,
) -> Result<Vec<SyntheticSeries>> {
    (0..n)
        .into_par_iter()
        .map(|i| kernelsynth_generate(bank, cfg, &mut derive_rng(seed, &[i as u64])))
        .collect()
}
