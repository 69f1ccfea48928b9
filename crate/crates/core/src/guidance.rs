//! Supervised guidance costs on the latent code.
//!
//! * [`l_gp_and_grad`]: Gaussian-process marginal likelihood of label
//!   columns given the projected codes of one hidden-unit partition.
//! * [`l_lr_and_grad`]: softmax cross-entropy of a logistic-regression head.
//! * [`l_gaussian_head_and_grad`]: squared error of a linear regression head,
//!   the parametric counterpart for real-valued labels.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::error::{NpgaError, Result};
use crate::kernels::{gram_with_grad, KernelSpec};
use crate::linalg::{cholesky_with_jitter, log_det};

#[derive(Debug, Clone, PartialEq)]
pub struct GpGuidanceSpec {
    /// Contiguous range of hidden units this GP looks at.
    pub partition: Range<usize>,
    /// H×P projection applied to the partition's activations.
    pub projection: DMatrix<f64>,
    pub kernel: KernelSpec,
    pub noise_variance: f64,
    pub target_label_set: String,
}

impl GpGuidanceSpec {
    pub fn partition_width(&self) -> usize {
        self.partition.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.projection.nrows()
    }

    pub fn validate(&self, hidden_units: usize) -> Result<()> {
        let p = self.partition_width();
        if p == 0 || self.partition.end > hidden_units {
            return Err(NpgaError::InvalidSpec(format!(
                "GP partition {:?} must be nonempty and within 0..{hidden_units}",
                self.partition
            )));
        }
        let h = self.latent_dim();
        if h == 0 || h > p {
            return Err(NpgaError::InvalidSpec(format!(
                "GP latent dimension {h} must satisfy 1 <= H <= partition width {p}"
            )));
        }
        if self.projection.ncols() != p {
            return Err(NpgaError::shape("GP projection columns", p, self.projection.ncols()));
        }
        if !(self.noise_variance.is_finite() && self.noise_variance > 0.0) {
            return Err(NpgaError::InvalidSpec(format!(
                "GP noise variance must be > 0, got {}",
                self.noise_variance
            )));
        }
        self.kernel.validate()
    }

    /// Projected latent points `Γ·x[partition]` for every row, as N×H.
    pub fn project(&self, hidden: &DMatrix<f64>) -> DMatrix<f64> {
        let part = hidden.columns(self.partition.start, self.partition_width());
        part * self.projection.transpose()
    }
}

#[derive(Debug, Clone)]
pub struct GpCostGrad {
    pub cost: f64,
    /// N×P gradient with respect to the partition's columns of the hidden batch.
    pub d_hidden: DMatrix<f64>,
    /// H×P gradient with respect to the projection.
    pub d_projection: DMatrix<f64>,
}

/// Value and ∂/∂K of `ln|K+σ²I| + (1/M) Σ_m z_mᵀ (K+σ²I)⁻¹ z_m`.
pub fn gp_cost_from_gram(
    gram: &DMatrix<f64>,
    noise_variance: f64,
    targets: &DMatrix<f64>,
) -> Result<(f64, DMatrix<f64>)> {
    let n = gram.nrows();
    if targets.nrows() != n {
        return Err(NpgaError::shape("GP targets rows", n, targets.nrows()));
    }
    let m = targets.ncols();
    if m == 0 {
        return Err(NpgaError::InvalidInput("GP targets need at least one column".into()));
    }
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(NpgaError::InvalidInput("GP targets must be finite".into()));
    }
    let mut cov = gram.clone();
    for i in 0..n {
        cov[(i, i)] += noise_variance;
    }
    let (chol, _) = cholesky_with_jitter(cov)?;
    let inv_m = 1.0 / m as f64;
    let alpha = chol.solve(targets);
    let quad: f64 = targets.iter().zip(alpha.iter()).map(|(z, a)| z * a).sum();
    let cost = log_det(&chol) + inv_m * quad;
    let mut d_k = chol.inverse();
    d_k -= (&alpha * alpha.transpose()) * inv_m;
    Ok((cost, d_k))
}

/// GP marginal-likelihood guidance cost on one hidden-unit partition.
pub fn l_gp_and_grad(hidden: &DMatrix<f64>, spec: &GpGuidanceSpec, targets: &DMatrix<f64>) -> Result<GpCostGrad> {
    let n = hidden.nrows();
    if n == 0 {
        return Err(NpgaError::InvalidInput("GP guidance needs at least one example".into()));
    }
    spec.validate(hidden.ncols())?;
    let points = spec.project(hidden);
    let (gram, grad) = gram_with_grad(&points, &spec.kernel)?;
    let (cost, d_k) = gp_cost_from_gram(&gram, spec.noise_variance, targets)?;
    let d_points = grad.contract(&d_k);
    let part = hidden.columns(spec.partition.start, spec.partition_width());
    Ok(GpCostGrad {
        cost,
        d_hidden: &d_points * &spec.projection,
        d_projection: d_points.tr_mul(&part),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LrGuidanceSpec {
    /// M×J
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl LrGuidanceSpec {
    pub fn zeros(classes: usize, inputs: usize) -> Self {
        LrGuidanceSpec {
            weights: DMatrix::zeros(classes, inputs),
            bias: DVector::zeros(classes),
        }
    }

    pub fn logits(&self, features: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = features * self.weights.transpose();
        for mut row in z.row_iter_mut() {
            row += self.bias.transpose();
        }
        z
    }
}

#[derive(Debug, Clone)]
pub struct LrCostGrad {
    pub cost: f64,
    pub d_hidden: DMatrix<f64>,
    pub d_weights: DMatrix<f64>,
    pub d_bias: DVector<f64>,
}

/// Checks that every row of `labels` is a one-hot indicator and returns the class indices.
pub fn one_hot_classes(labels: &DMatrix<f64>) -> Result<Vec<usize>> {
    labels
        .row_iter()
        .enumerate()
        .map(|(i, row)| {
            let mut class = None;
            for (c, v) in row.iter().enumerate() {
                if *v == 1.0 {
                    if class.is_some() {
                        return Err(NpgaError::InvalidLabel(format!(
                            "row {i} has more than one active class"
                        )));
                    }
                    class = Some(c);
                } else if *v != 0.0 {
                    return Err(NpgaError::InvalidLabel(format!("row {i} has non-binary entry {v}")));
                }
            }
            class.ok_or_else(|| NpgaError::InvalidLabel(format!("row {i} has no active class")))
        })
        .collect()
}

/// Row-wise softmax, max-shifted.
pub fn softmax_rows(logits: &DMatrix<f64>) -> DMatrix<f64> {
    let mut p = logits.clone();
    for mut row in p.row_iter_mut() {
        let max = row.max();
        row.apply(|v| *v = (*v - max).exp());
        let s = row.sum();
        row /= s;
    }
    p
}

/// Mean softmax cross-entropy and gradients. Shared with the evaluation probe.
pub(crate) fn softmax_xent(logits: &DMatrix<f64>, classes: &[usize]) -> (f64, DMatrix<f64>) {
    let n = logits.nrows();
    let mut g = DMatrix::zeros(n, logits.ncols());
    let mut cost = 0.0;
    for (i, &c) in classes.iter().enumerate() {
        let row = logits.row(i);
        let max = row.max();
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        cost += lse - row[c];
        for j in 0..row.len() {
            g[(i, j)] = (row[j] - lse).exp();
        }
        g[(i, c)] -= 1.0;
    }
    let inv_n = 1.0 / n as f64;
    (cost * inv_n, g * inv_n)
}

fn check_head(
    hidden: &DMatrix<f64>,
    weights: &DMatrix<f64>,
    bias: &DVector<f64>,
    targets: &DMatrix<f64>,
) -> Result<()> {
    if hidden.nrows() == 0 {
        return Err(NpgaError::InvalidInput(
            "guidance head needs at least one example".into(),
        ));
    }
    if weights.ncols() != hidden.ncols() {
        return Err(NpgaError::shape("head weight columns", hidden.ncols(), weights.ncols()));
    }
    if bias.len() != weights.nrows() || targets.ncols() != weights.nrows() {
        return Err(NpgaError::shape("head outputs", weights.nrows(), targets.ncols()));
    }
    if targets.nrows() != hidden.nrows() {
        return Err(NpgaError::shape("head target rows", hidden.nrows(), targets.nrows()));
    }
    Ok(())
}

/// Logistic-regression guidance: mean over the batch of −ln softmax(Λx + b)[class].
pub fn l_lr_and_grad(hidden: &DMatrix<f64>, spec: &LrGuidanceSpec, one_hot: &DMatrix<f64>) -> Result<LrCostGrad> {
    check_head(hidden, &spec.weights, &spec.bias, one_hot)?;
    let classes = one_hot_classes(one_hot)?;
    let (cost, g) = softmax_xent(&spec.logits(hidden), &classes);
    Ok(head_grads(cost, g, hidden, spec))
}

/// Linear regression head: mean over the batch of ‖Λx + b − t‖².
pub fn l_gaussian_head_and_grad(
    hidden: &DMatrix<f64>,
    spec: &LrGuidanceSpec,
    targets: &DMatrix<f64>,
) -> Result<LrCostGrad> {
    check_head(hidden, &spec.weights, &spec.bias, targets)?;
    let n = hidden.nrows() as f64;
    let resid = spec.logits(hidden) - targets;
    let cost = resid.norm_squared() / n;
    let g = resid * (2.0 / n);
    Ok(head_grads(cost, g, hidden, spec))
}

fn head_grads(cost: f64, g: DMatrix<f64>, hidden: &DMatrix<f64>, spec: &LrGuidanceSpec) -> LrCostGrad {
    LrCostGrad {
        cost,
        d_hidden: &g * &spec.weights,
        d_weights: g.tr_mul(hidden),
        d_bias: DVector::from_iterator(g.ncols(), g.column_iter().map(|c| c.sum())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn linear_spec(p: usize, h: usize, proj: DMatrix<f64>) -> GpGuidanceSpec {
        assert_eq!(proj.shape(), (h, p));
        GpGuidanceSpec {
            partition: 0..p,
            projection: proj,
            kernel: KernelSpec::linear(),
            noise_variance: 0.1,
            target_label_set: "z".into(),
        }
    }

    #[test]
    fn single_point_closed_form() {
        let hidden = DMatrix::from_row_slice(1, 2, &[0.7, -1.2]);
        let spec = linear_spec(2, 2, DMatrix::identity(2, 2));
        let z = 1.5;
        let out = l_gp_and_grad(&hidden, &spec, &DMatrix::from_element(1, 1, z)).unwrap();
        let vtv: f64 = 0.49 + 1.44;
        let c = vtv + 0.1;
        let expected = c.ln() + z * z / c;
        assert!((out.cost - expected).abs() < 1e-14, "{} vs {expected}", out.cost);
    }

    #[test]
    fn larger_noise_shrinks_quadratic_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pts = DMatrix::from_fn(5, 2, |_, _| rng.random_range(-1.0..1.0));
        let k = crate::kernels::gram_symmetric(&pts, &KernelSpec::rbf(1.0)).unwrap();
        let z = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
        let quad = |s2: f64| {
            let mut c = k.clone();
            for i in 0..5 {
                c[(i, i)] += s2;
            }
            let chol = c.cholesky().unwrap();
            z.dot(&chol.solve(&z))
        };
        let mut prev = quad(0.01);
        for s2 in [0.02, 0.1, 0.5, 1.0, 4.0] {
            let q = quad(s2);
            assert!(q < prev);
            prev = q;
        }
    }

    #[test]
    fn validation_catches_bad_specs() {
        let mut spec = linear_spec(3, 2, DMatrix::zeros(2, 3));
        assert!(spec.validate(3).is_ok());
        assert!(spec.validate(2).is_err());
        spec.noise_variance = 0.0;
        assert!(spec.validate(3).is_err());
        let tall = linear_spec(2, 3, DMatrix::zeros(3, 2));
        assert!(tall.validate(4).is_err());
    }

    #[test]
    fn lr_zero_weights_gives_log_m() {
        let hidden = DMatrix::from_fn(6, 4, |i, j| (i as f64) - (j as f64));
        let spec = LrGuidanceSpec::zeros(5, 4);
        let labels = DMatrix::from_fn(6, 5, |i, j| if i % 5 == j { 1.0 } else { 0.0 });
        let out = l_lr_and_grad(&hidden, &spec, &labels).unwrap();
        assert!((out.cost - 5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn lr_cost_vanishes_with_margin() {
        let hidden = DMatrix::from_element(3, 2, 0.5);
        let labels = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
        let mut prev = f64::INFINITY;
        for margin in [0.0, 1.0, 5.0, 10.0, 30.0] {
            let mut spec = LrGuidanceSpec::zeros(3, 2);
            spec.bias[1] = margin;
            let c = l_lr_and_grad(&hidden, &spec, &labels).unwrap().cost;
            assert!(c < prev && c >= 0.0);
            prev = c;
        }
        assert!(prev < 1e-12);
    }

    #[test]
    fn lr_rejects_non_one_hot() {
        let hidden = DMatrix::zeros(2, 2);
        let spec = LrGuidanceSpec::zeros(2, 2);
        for bad in [[1.0, 1.0], [0.0, 0.0], [0.5, 0.5]] {
            let labels = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, bad[0], bad[1]]);
            assert!(matches!(
                l_lr_and_grad(&hidden, &spec, &labels),
                Err(NpgaError::InvalidLabel(_))
            ));
        }
    }

    #[test]
    fn gp_cost_is_row_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for kind in KernelKind::ALL {
            let hidden = DMatrix::from_fn(6, 4, |_, _| rng.random_range(0.0..1.5));
            let targets = DMatrix::from_fn(6, 2, |_, _| rng.random_range(-1.0..1.0));
            let spec = GpGuidanceSpec {
                partition: 1..4,
                projection: DMatrix::from_fn(2, 3, |_, _| rng.random_range(-1.0..1.0)),
                kernel: KernelSpec::new(kind),
                noise_variance: 0.05,
                target_label_set: "t".into(),
            };
            let perm = [3, 0, 5, 1, 4, 2];
            let ph = DMatrix::from_fn(6, 4, |i, j| hidden[(perm[i], j)]);
            let pt = DMatrix::from_fn(6, 2, |i, j| targets[(perm[i], j)]);
            let a = l_gp_and_grad(&hidden, &spec, &targets).unwrap().cost;
            let b = l_gp_and_grad(&ph, &spec, &pt).unwrap().cost;
            assert!((a - b).abs() < 1e-10 * a.abs().max(1.0), "{kind}: {a} vs {b}");
        }
    }
}
