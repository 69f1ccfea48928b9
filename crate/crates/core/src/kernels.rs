//! Covariance functions on the projected latent space.
//!
//! Every kernel is evaluated on rows of a point matrix (one point per row).
//! Hyperparameters are fixed during training; only the points move, so the
//! gradient machinery here is with respect to point coordinates.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{NpgaError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelKind {
    Linear,
    Rbf,
    Arcsine,
    Periodic,
}

impl KernelKind {
    pub const ALL: [KernelKind; 4] = [
        KernelKind::Linear,
        KernelKind::Rbf,
        KernelKind::Arcsine,
        KernelKind::Periodic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Linear => "linear",
            KernelKind::Rbf => "rbf",
            KernelKind::Arcsine => "arcsine",
            KernelKind::Periodic => "periodic",
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelKind {
    type Err = NpgaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(KernelKind::Linear),
            "rbf" => Ok(KernelKind::Rbf),
            // "nn" is the usual shorthand for the neural-network covariance
            "arcsine" | "nn" => Ok(KernelKind::Arcsine),
            "periodic" => Ok(KernelKind::Periodic),
            other => Err(NpgaError::InvalidSpec(format!("unknown kernel kind `{other}`"))),
        }
    }
}

/// Kernel kind plus its (fixed) hyperparameters.
///
/// Fields that a kind does not use are still validated, so a spec can be
/// switched between kinds without becoming invalid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub signal_variance: f64,
    /// Used by `Rbf` and `Periodic`.
    pub lengthscale: f64,
    /// Used by `Periodic`.
    pub period: f64,
    /// Scale of the input coordinates in the arcsine kernel's augmented covariance.
    pub input_weight: f64,
    /// Scale of the constant (bias) coordinate in the arcsine kernel.
    pub bias_weight: f64,
}

impl KernelSpec {
    pub fn new(kind: KernelKind) -> Self {
        KernelSpec {
            kind,
            signal_variance: 1.0,
            lengthscale: 1.0,
            period: 2.0 * PI,
            input_weight: 1.0,
            bias_weight: 1.0,
        }
    }

    pub fn linear() -> Self {
        Self::new(KernelKind::Linear)
    }

    pub fn rbf(lengthscale: f64) -> Self {
        KernelSpec {
            lengthscale,
            ..Self::new(KernelKind::Rbf)
        }
    }

    pub fn arcsine() -> Self {
        Self::new(KernelKind::Arcsine)
    }

    pub fn periodic(period: f64, lengthscale: f64) -> Self {
        KernelSpec {
            period,
            lengthscale,
            ..Self::new(KernelKind::Periodic)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("signal_variance", self.signal_variance),
            ("lengthscale", self.lengthscale),
            ("period", self.period),
            ("input_weight", self.input_weight),
            ("bias_weight", self.bias_weight),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(NpgaError::InvalidSpec(format!(
                    "{} kernel: {name} must be finite and > 0, got {value}",
                    self.kind
                )));
            }
        }
        Ok(())
    }

    /// k(x, y) for two points of equal length.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), y.len());
        let s = self.signal_variance;
        match self.kind {
            KernelKind::Linear => s * dot(x, y),
            KernelKind::Rbf => {
                let l2 = self.lengthscale * self.lengthscale;
                s * (-0.5 * sq_dist(x, y) / l2).exp()
            }
            KernelKind::Arcsine => {
                let (r, _, _) = self.arcsine_ratio(x, y);
                s * (2.0 / PI) * r.asin()
            }
            KernelKind::Periodic => {
                let l2 = self.lengthscale * self.lengthscale;
                let sum: f64 = x
                    .iter()
                    .zip(y)
                    .map(|(a, b)| (PI * (a - b) / self.period).sin().powi(2))
                    .sum();
                s * (-2.0 * sum / l2).exp()
            }
        }
    }

    /// Writes ∂k(x, y)/∂x into `out` and returns k(x, y).
    ///
    /// The derivative with respect to the second argument is obtained by
    /// swapping arguments, since every kernel here is symmetric.
    pub fn eval_grad_first(&self, x: &[f64], y: &[f64], out: &mut [f64]) -> f64 {
        debug_assert_eq!(x.len(), out.len());
        let s = self.signal_variance;
        match self.kind {
            KernelKind::Linear => {
                for (o, b) in out.iter_mut().zip(y) {
                    *o = s * b;
                }
                s * dot(x, y)
            }
            KernelKind::Rbf => {
                let l2 = self.lengthscale * self.lengthscale;
                let k = s * (-0.5 * sq_dist(x, y) / l2).exp();
                for ((o, a), b) in out.iter_mut().zip(x).zip(y) {
                    *o = -k * (a - b) / l2;
                }
                k
            }
            KernelKind::Arcsine => {
                let (r, norm, px) = self.arcsine_ratio(x, y);
                let w = self.input_weight;
                let scale = s * (2.0 / PI) / (1.0 - r * r).sqrt();
                for ((o, a), b) in out.iter_mut().zip(x).zip(y) {
                    let dr = 2.0 * w * b / norm - 2.0 * w * r * a / px;
                    *o = scale * dr;
                }
                s * (2.0 / PI) * r.asin()
            }
            KernelKind::Periodic => {
                let l2 = self.lengthscale * self.lengthscale;
                let omega = PI / self.period;
                let sum: f64 = x.iter().zip(y).map(|(a, b)| (omega * (a - b)).sin().powi(2)).sum();
                let k = s * (-2.0 * sum / l2).exp();
                // d/da sin²(ω(a-b)) = ω sin(2ω(a-b))
                for ((o, a), b) in out.iter_mut().zip(x).zip(y) {
                    *o = -k * 2.0 * omega * (2.0 * omega * (a - b)).sin() / l2;
                }
                k
            }
        }
    }

    /// Returns (r, sqrt(px·py), px) where r is the argument of asin.
    fn arcsine_ratio(&self, x: &[f64], y: &[f64]) -> (f64, f64, f64) {
        let b = self.bias_weight;
        let w = self.input_weight;
        let cross = 2.0 * (b + w * dot(x, y));
        let px = 1.0 + 2.0 * (b + w * dot(x, x));
        let py = 1.0 + 2.0 * (b + w * dot(y, y));
        let norm = (px * py).sqrt();
        (cross / norm, norm, px)
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn rows(points: &DMatrix<f64>) -> Vec<Vec<f64>> {
    points.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn check_points(points: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if points.ncols() == 0 {
        return Err(NpgaError::InvalidInput(format!(
            "{what}: points need at least one coordinate"
        )));
    }
    if let Some(bad) = points.iter().find(|v| !v.is_finite()) {
        return Err(NpgaError::InvalidInput(format!(
            "{what}: non-finite point coordinate {bad}"
        )));
    }
    Ok(())
}

/// Cross-covariance between the rows of `a` (N×H) and `b` (M×H).
pub fn gram(a: &DMatrix<f64>, b: &DMatrix<f64>, spec: &KernelSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    check_points(a, "gram")?;
    check_points(b, "gram")?;
    if a.ncols() != b.ncols() {
        return Err(NpgaError::shape("gram", a.ncols(), b.ncols()));
    }
    let ra = rows(a);
    let rb = rows(b);
    Ok(DMatrix::from_fn(ra.len(), rb.len(), |i, j| spec.eval(&ra[i], &rb[j])))
}

/// Gram matrix of the rows of `points` with themselves. The result is
/// exactly symmetric: the upper triangle is computed and mirrored.
pub fn gram_symmetric(points: &DMatrix<f64>, spec: &KernelSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    check_points(points, "gram")?;
    let r = rows(points);
    let n = r.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = spec.eval(&r[i], &r[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Partial derivatives of a symmetric Gram matrix with respect to its points.
///
/// Stores ∂k(x_n, x_m)/∂x_n for every ordered pair; any entry's partial with
/// respect to any coordinate is assembled from those.
#[derive(Debug, Clone)]
pub struct GramGrad {
    n: usize,
    dim: usize,
    first: Vec<f64>,
}

impl GramGrad {
    pub fn num_points(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn first_arg(&self, n: usize, m: usize) -> &[f64] {
        let off = (n * self.n + m) * self.dim;
        &self.first[off..off + self.dim]
    }

    /// ∂K[n, m] / ∂points[i, h].
    pub fn partial(&self, n: usize, m: usize, i: usize, h: usize) -> f64 {
        let mut d = 0.0;
        if i == n {
            d += self.first_arg(n, m)[h];
        }
        if i == m {
            d += self.first_arg(m, n)[h];
        }
        d
    }

    /// Σ_{n,m} upstream[n,m] · ∂K[n,m]/∂points, as an N×H matrix.
    pub fn contract(&self, upstream: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(upstream.shape(), (self.n, self.n), "upstream must be N×N");
        let mut out = DMatrix::zeros(self.n, self.dim);
        for i in 0..self.n {
            for m in 0..self.n {
                let w = upstream[(i, m)] + upstream[(m, i)];
                if w == 0.0 {
                    continue;
                }
                let g = self.first_arg(i, m);
                for h in 0..self.dim {
                    out[(i, h)] += w * g[h];
                }
            }
        }
        out
    }
}

/// Gram matrix of `points` together with its point gradients.
pub fn gram_with_grad(points: &DMatrix<f64>, spec: &KernelSpec) -> Result<(DMatrix<f64>, GramGrad)> {
    spec.validate()?;
    check_points(points, "gram_grad_points")?;
    let r = rows(points);
    let n = r.len();
    let dim = points.ncols();
    let mut first = vec![0.0; n * n * dim];
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let off = (i * n + j) * dim;
            let v = spec.eval_grad_first(&r[i], &r[j], &mut first[off..off + dim]);
            if j >= i {
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
    }
    Ok((k, GramGrad { n, dim, first }))
}

pub fn gram_grad_points(points: &DMatrix<f64>, spec: &KernelSpec) -> Result<GramGrad> {
    gram_with_grad(points, spec).map(|(_, g)| g)
}
