//! Oracles and fixtures shared by the integration tests. Nothing here calls
//! the library code it is used to check.
#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use npga::autoencoder::{forward, l_auto_and_grad, AutoencoderParams, CorruptionSpec, EncodeMode, FrozenNoise};
use npga::kernels::{KernelKind, KernelSpec};
use npga::optimizer::{cg_minimize, rng_streams, CgOptions};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

pub fn uniform(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(lo..hi))
}

/// Kernel formulas written out directly.
pub fn kernel_value(spec: &KernelSpec, x: &[f64], y: &[f64]) -> f64 {
    let s = spec.signal_variance;
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    match spec.kind {
        KernelKind::Linear => s * dot,
        KernelKind::Rbf => {
            let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
            s * (-d2 / (2.0 * spec.lengthscale * spec.lengthscale)).exp()
        }
        KernelKind::Arcsine => {
            let (w, b) = (spec.input_weight, spec.bias_weight);
            let xx: f64 = x.iter().map(|a| a * a).sum();
            let yy: f64 = y.iter().map(|a| a * a).sum();
            let num = 2.0 * (b + w * dot);
            let den = ((1.0 + 2.0 * (b + w * xx)) * (1.0 + 2.0 * (b + w * yy))).sqrt();
            s * 2.0 / PI * (num / den).asin()
        }
        KernelKind::Periodic => {
            let sum: f64 = x
                .iter()
                .zip(y)
                .map(|(a, b)| (PI * (a - b) / spec.period).sin().powi(2))
                .sum();
            s * (-2.0 * sum / (spec.lengthscale * spec.lengthscale)).exp()
        }
    }
}

pub fn kernel_matrix(points: &DMatrix<f64>, spec: &KernelSpec) -> DMatrix<f64> {
    let n = points.nrows();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| points.row(i).iter().copied().collect()).collect();
    DMatrix::from_fn(n, n, |i, j| kernel_value(spec, &rows[i], &rows[j]))
}

/// `(1/M) Σ_m [−2 ln N(z_m; 0, C) − N ln 2π]` with `C = K + σ²I`, using an
/// LU determinant and LU solves.
pub fn direct_gp_cost(gram: &DMatrix<f64>, noise_variance: f64, targets: &DMatrix<f64>) -> f64 {
    let n = gram.nrows();
    let c = gram + DMatrix::identity(n, n) * noise_variance;
    let lu = c.clone().lu();
    let det = lu.determinant();
    assert!(det > 0.0, "covariance not positive definite: det = {det}");
    let m = targets.ncols();
    let mut total = 0.0;
    for col in targets.column_iter() {
        let z = col.into_owned();
        let sol = lu.solve(&z).expect("singular covariance");
        let log_density = -0.5 * z.dot(&sol) - 0.5 * det.ln() - 0.5 * n as f64 * (2.0 * PI).ln();
        total += -2.0 * log_density - n as f64 * (2.0 * PI).ln();
    }
    total / m as f64
}

/// Relative error with a floor on the denominator so that gradients which
/// vanish up to rounding are compared in absolute terms.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

#[derive(Debug, Default, Clone, Copy)]
pub struct FdStats {
    pub max_rel: f64,
    pub checked: usize,
    pub skipped: usize,
}

impl FdStats {
    pub fn merge(&mut self, o: FdStats) {
        self.max_rel = self.max_rel.max(o.max_rel);
        self.checked += o.checked;
        self.skipped += o.skipped;
    }
}

/// Central differences of `cost` at `x` along `coords`, compared with
/// `analytic`. `kinks` returns a signature (rectifier pattern) that must not
/// change across the step; coordinates that cross a kink are skipped.
pub fn fd_check(
    cost: &dyn Fn(&DVector<f64>) -> f64,
    analytic: &DVector<f64>,
    x: &DVector<f64>,
    coords: &[usize],
    eps: f64,
    kinks: Option<&dyn Fn(&DVector<f64>) -> DMatrix<f64>>,
) -> FdStats {
    let mut st = FdStats::default();
    let base = kinks.map(|k| k(x));
    for &i in coords {
        let mut p = x.clone();
        p[i] += eps;
        let mut m = x.clone();
        m[i] -= eps;
        if let (Some(k), Some(b)) = (kinks, &base) {
            if k(&p) != *b || k(&m) != *b {
                st.skipped += 1;
                continue;
            }
        }
        let numeric = (cost(&p) - cost(&m)) / (2.0 * eps);
        st.max_rel = st.max_rel.max(rel_err(analytic[i], numeric));
        st.checked += 1;
    }
    st
}

pub fn random_coords(rng: &mut ChaCha8Rng, len: usize, count: usize) -> Vec<usize> {
    let mut all: Vec<usize> = (0..len).collect();
    all.shuffle(rng);
    all.truncate(count.min(len));
    all
}

pub fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

pub fn ae_flat(p: &AutoencoderParams) -> DVector<f64> {
    let mut v = row_major(&p.weight);
    v.extend(p.enc_bias.iter());
    v.extend(p.dec_bias.iter());
    DVector::from_vec(v)
}

pub fn ae_unflat(v: &DVector<f64>, j: usize, k: usize) -> AutoencoderParams {
    let s = v.as_slice();
    AutoencoderParams {
        weight: DMatrix::from_row_slice(j, k, &s[..j * k]),
        enc_bias: DVector::from_column_slice(&s[j * k..j * k + j]),
        dec_bias: DVector::from_column_slice(&s[j * k + j..]),
    }
}

/// Rectifier pattern of the autoencoder in `v` on frozen noise.
pub fn ae_open(v: &DVector<f64>, j: usize, k: usize, noise: &FrozenNoise) -> DMatrix<f64> {
    forward(&noise.corrupted, &ae_unflat(v, j, k), noise.activation.as_ref())
        .unwrap()
        .open
}

/// Denoising autoencoder trained with nothing but the reconstruction cost,
/// following the documented schedule: the same seed streams, one shuffle
/// per epoch, noise frozen per minibatch, CG on each minibatch.
#[allow(clippy::too_many_arguments)]
pub fn reference_autoencoder(
    features: &DMatrix<f64>,
    hidden: usize,
    corruption: &CorruptionSpec,
    mode: EncodeMode,
    minibatch: usize,
    iters: usize,
    epochs: usize,
    seed: u64,
    cg: &CgOptions,
) -> AutoencoderParams {
    let (n, k) = features.shape();
    let (mut ae_rng, _, mut rng) = rng_streams(seed);
    let mut params = AutoencoderParams::init(hidden, k, &mut ae_rng);
    let mut order: Vec<usize> = (0..n).collect();
    let opts = cg.clone().with_max_iters(iters);
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for rows in order.chunks(minibatch) {
            let clean = DMatrix::from_fn(rows.len(), k, |i, c| features[(rows[i], c)]);
            let noise = FrozenNoise::draw(&clean, &params, corruption, mode, &mut rng).unwrap();
            let out = cg_minimize(
                |v| {
                    let p = ae_unflat(v, hidden, k);
                    let (cost, g) = l_auto_and_grad(&clean, &noise.corrupted, &p, noise.activation.as_ref())?;
                    let mut flat = row_major(&g.weight);
                    flat.extend(g.enc_bias.iter());
                    flat.extend(g.dec_bias.iter());
                    Ok((cost, DVector::from_vec(flat)))
                },
                ae_flat(&params),
                &opts,
            )
            .unwrap();
            params = ae_unflat(&out.x, hidden, k);
        }
    }
    params
}

/// Probe objective minimised by damped Newton steps on standardized
/// features: mean softmax cross-entropy + l2·‖W‖² (bias unpenalised).
/// Returns the mean cross-entropy at the optimum.
pub fn newton_probe_cross_entropy(features: &DMatrix<f64>, classes: &[usize], num_classes: usize, l2: f64) -> f64 {
    let (n, f) = features.shape();
    // standardize with population statistics
    let mut x = features.clone();
    for j in 0..f {
        let col = features.column(j);
        let mean = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        for i in 0..n {
            x[(i, j)] = if sd > 0.0 { (features[(i, j)] - mean) / sd } else { 0.0 };
        }
    }
    let m = num_classes;
    let d = m * (f + 1);
    // parameter layout: class c block = [w_c (f), b_c]
    let feat = |i: usize, a: usize| if a < f { x[(i, a)] } else { 1.0 };
    let objective = |theta: &DVector<f64>| -> (f64, DVector<f64>, DMatrix<f64>, f64) {
        let mut cost = 0.0;
        let mut ce = 0.0;
        let mut g = DVector::zeros(d);
        let mut h = DMatrix::zeros(d, d);
        for i in 0..n {
            let logits: Vec<f64> = (0..m)
                .map(|c| (0..=f).map(|a| theta[c * (f + 1) + a] * feat(i, a)).sum())
                .collect();
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
            let p: Vec<f64> = logits.iter().map(|l| (l - mx).exp() / z).collect();
            let nll = -(logits[classes[i]] - mx - z.ln());
            ce += nll / n as f64;
            for c in 0..m {
                let r = p[c] - if c == classes[i] { 1.0 } else { 0.0 };
                for a in 0..=f {
                    g[c * (f + 1) + a] += r * feat(i, a) / n as f64;
                }
                for c2 in 0..m {
                    let w = p[c] * (if c == c2 { 1.0 } else { 0.0 } - p[c2]);
                    for a in 0..=f {
                        for b in 0..=f {
                            h[(c * (f + 1) + a, c2 * (f + 1) + b)] += w * feat(i, a) * feat(i, b) / n as f64;
                        }
                    }
                }
            }
        }
        cost += ce;
        for c in 0..m {
            for a in 0..f {
                let idx = c * (f + 1) + a;
                cost += l2 * theta[idx] * theta[idx];
                g[idx] += 2.0 * l2 * theta[idx];
                h[(idx, idx)] += 2.0 * l2;
            }
        }
        (cost, g, h, ce)
    };
    let mut theta = DVector::zeros(d);
    for _ in 0..200 {
        let (cost, g, mut h, _) = objective(&theta);
        if g.norm() < 1e-12 {
            break;
        }
        // softmax Hessian is singular along the all-classes direction; a tiny ridge fixes it
        for i in 0..d {
            h[(i, i)] += 1e-10;
        }
        let step = h.lu().solve(&g).expect("singular Newton system");
        let mut t = 1.0;
        loop {
            let cand = &theta - &step * t;
            if objective(&cand).0 <= cost || t < 1e-12 {
                theta = cand;
                break;
            }
            t *= 0.5;
        }
    }
    objective(&theta).3
}
