//! Central finite-difference checks of every analytic gradient on small
//! random instances.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::{GradcheckConfig, Term};
use crate::autoencoder::{forward, l_auto_and_grad, AutoencoderParams, CorruptionSpec, EncodeMode, FrozenNoise};
use crate::data::one_hot;
use crate::error::Result;
use crate::guidance::{l_gp_and_grad, l_lr_and_grad, GpGuidanceSpec, LrGuidanceSpec};
use crate::kernels::{KernelKind, KernelSpec};
use crate::objective::{
    unpack, Batch, GpGuidanceConfig, HeadConfig, ModelConfig, Objective, ParamLayout, ParamVector, Targets,
};

/// Smallest denominator of the relative error, so that gradients which are
/// zero up to rounding are compared in absolute terms.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TermReport {
    pub term: Term,
    pub checked: usize,
    /// Coordinates skipped because the step crossed a rectifier kink.
    pub skipped: usize,
    pub max_relative_error: f64,
    pub passed: bool,
}

impl TermReport {
    pub fn line(&self) -> String {
        format!(
            "{}\t{}\tmax_rel_error={:.3e}\tchecked={}\tskipped_kinks={}",
            self.term.name(),
            if self.passed { "PASS" } else { "FAIL" },
            self.max_relative_error,
            self.checked,
            self.skipped
        )
    }
}

/// A scalar function of a flat vector with its analytic gradient, plus an
/// optional kink signature that must not change across the FD step.
struct Problem {
    x: DVector<f64>,
    cost: Box<dyn Fn(&DVector<f64>) -> Result<(f64, DVector<f64>)>>,
    kinks: Option<Box<dyn Fn(&DVector<f64>) -> Result<DMatrix<f64>>>>,
}

fn uniform(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(lo..hi))
}

fn normal(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

fn flat(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn ae_from_flat(v: &[f64], j: usize, k: usize) -> AutoencoderParams {
    AutoencoderParams {
        weight: DMatrix::from_row_slice(j, k, &v[..j * k]),
        enc_bias: DVector::from_column_slice(&v[j * k..j * k + j]),
        dec_bias: DVector::from_column_slice(&v[j * k + j..j * k + j + k]),
    }
}

fn random_ae(rng: &mut ChaCha8Rng, j: usize, k: usize) -> AutoencoderParams {
    AutoencoderParams {
        weight: uniform(rng, j, k, -1.0, 1.0),
        enc_bias: DVector::from_fn(j, |_, _| rng.random_range(-0.5..0.5)),
        dec_bias: DVector::from_fn(k, |_, _| rng.random_range(-0.5..0.5)),
    }
}

fn auto_problem(rng: &mut ChaCha8Rng) -> Result<Problem> {
    let (n, k, j) = (
        rng.random_range(3..=7),
        rng.random_range(2..=5),
        rng.random_range(3..=7),
    );
    let ae = random_ae(rng, j, k);
    let clean = normal(rng, n, k);
    let noise = FrozenNoise::draw(&clean, &ae, &CorruptionSpec::gaussian(0.1), EncodeMode::NoisyRelu, rng)?;
    let mut x = flat(&ae.weight);
    x.extend(ae.enc_bias.iter());
    x.extend(ae.dec_bias.iter());
    let (c1, n1) = (clean, noise.clone());
    let n2 = noise;
    Ok(Problem {
        x: DVector::from_vec(x),
        cost: Box::new(move |v| {
            let p = ae_from_flat(v.as_slice(), j, k);
            let (cost, g) = l_auto_and_grad(&c1, &n1.corrupted, &p, n1.activation.as_ref())?;
            let mut out = flat(&g.weight);
            out.extend(g.enc_bias.iter());
            out.extend(g.dec_bias.iter());
            Ok((cost, DVector::from_vec(out)))
        }),
        kinks: Some(Box::new(move |v| {
            let p = ae_from_flat(v.as_slice(), j, k);
            Ok(forward(&n2.corrupted, &p, n2.activation.as_ref())?.open)
        })),
    })
}

fn gp_problem(rng: &mut ChaCha8Rng, kind: KernelKind) -> Result<Problem> {
    let (n, j, m) = (
        rng.random_range(3..=7),
        rng.random_range(3..=7),
        rng.random_range(1..=3),
    );
    let start = rng.random_range(0..j - 1);
    let end = rng.random_range(start + 1..=j);
    let p = end - start;
    let h = rng.random_range(1..=p.min(2));
    let mut kernel = KernelSpec::new(kind);
    kernel.signal_variance = rng.random_range(0.5..2.0);
    kernel.lengthscale = rng.random_range(0.7..2.0);
    kernel.period = rng.random_range(2.0..6.0);
    let noise_variance = rng.random_range(0.05..0.5);
    let hidden = uniform(rng, n, j, 0.0, 1.5);
    let projection = uniform(rng, h, p, -1.0, 1.0);
    let targets = normal(rng, n, m);
    let mut x = flat(&hidden);
    x.extend(flat(&projection));
    Ok(Problem {
        x: DVector::from_vec(x),
        cost: Box::new(move |v| {
            let hid = DMatrix::from_row_slice(n, j, &v.as_slice()[..n * j]);
            let spec = GpGuidanceSpec {
                partition: start..end,
                projection: DMatrix::from_row_slice(h, p, &v.as_slice()[n * j..]),
                kernel,
                noise_variance,
                target_label_set: "z".into(),
            };
            let r = l_gp_and_grad(&hid, &spec, &targets)?;
            let mut d_hidden = DMatrix::zeros(n, j);
            d_hidden.columns_mut(start, p).copy_from(&r.d_hidden);
            let mut out = flat(&d_hidden);
            out.extend(flat(&r.d_projection));
            Ok((r.cost, DVector::from_vec(out)))
        }),
        kinks: None,
    })
}

fn lr_problem(rng: &mut ChaCha8Rng) -> Result<Problem> {
    let (n, j, m) = (
        rng.random_range(3..=7),
        rng.random_range(2..=6),
        rng.random_range(2..=4),
    );
    let hidden = uniform(rng, n, j, 0.0, 1.5);
    let weights = normal(rng, m, j);
    let bias: Vec<f64> = (0..m).map(|_| rng.random_range(-0.5..0.5)).collect();
    let classes: Vec<usize> = (0..n).map(|_| rng.random_range(0..m)).collect();
    let labels = one_hot(&classes, m)?;
    let mut x = flat(&hidden);
    x.extend(flat(&weights));
    x.extend(bias);
    Ok(Problem {
        x: DVector::from_vec(x),
        cost: Box::new(move |v| {
            let s = v.as_slice();
            let hid = DMatrix::from_row_slice(n, j, &s[..n * j]);
            let spec = LrGuidanceSpec {
                weights: DMatrix::from_row_slice(m, j, &s[n * j..n * j + m * j]),
                bias: DVector::from_column_slice(&s[n * j + m * j..]),
            };
            let r = l_lr_and_grad(&hid, &spec, &labels)?;
            let mut out = flat(&r.d_hidden);
            out.extend(flat(&r.d_weights));
            out.extend(r.d_bias.iter());
            Ok((r.cost, DVector::from_vec(out)))
        }),
        kinks: None,
    })
}

fn blended_problem(rng: &mut ChaCha8Rng, kind: KernelKind) -> Result<Problem> {
    let (n, k, j, m) = (
        rng.random_range(3..=7),
        rng.random_range(2..=5),
        rng.random_range(4..=7),
        rng.random_range(2..=3),
    );
    let split = rng.random_range(2..j);
    let mut kernel = KernelSpec::new(kind);
    kernel.period = 4.0;
    let mut gp = GpGuidanceConfig::new("z", 0..split, 2, kernel);
    gp.noise_variance = rng.random_range(0.05..0.5);
    let config = ModelConfig {
        alpha: rng.random_range(0.1..0.9),
        beta: rng.random_range(0.1..0.9),
        hidden_units: j,
        corruption: CorruptionSpec::gaussian(0.1),
        encode_mode: EncodeMode::NoisyRelu,
        gp_specs: vec![gp],
        lr_heads: vec![HeadConfig::softmax("c", 0..j)],
        ..ModelConfig::default()
    };
    let layout = ParamLayout::new(&config, k, &[m]);
    let x = DVector::from_fn(layout.len(), |_, _| rng.random_range(-0.8..0.8));
    let clean = normal(rng, n, k);
    let classes: Vec<usize> = (0..n).map(|_| rng.random_range(0..m)).collect();
    let batch = Batch {
        clean: clean.clone(),
        targets: Targets {
            gp: vec![normal(rng, n, 1)],
            heads: vec![one_hot(&classes, m)?],
        },
    };
    let noise = Objective::new(&config, &layout).draw_noise(&clean, &ParamVector::from(x.clone()), rng)?;
    let (c1, l1) = (config, layout.clone());
    let n2 = noise.clone();
    Ok(Problem {
        x,
        cost: Box::new(move |v| {
            let obj = Objective::new(&c1, &l1);
            let (cost, g) = obj.evaluate(&batch, &ParamVector::from(v.clone()), &noise)?;
            Ok((cost.total, g.values))
        }),
        kinks: Some(Box::new(move |v| {
            let p = unpack(&ParamVector::from(v.clone()), &layout)?;
            Ok(forward(&n2.corrupted, &p.autoencoder, n2.activation.as_ref())?.open)
        })),
    })
}

fn check(
    problem: &Problem,
    cfg: &GradcheckConfig,
    scale: f64,
    rng: &mut ChaCha8Rng,
    report: &mut TermReport,
) -> Result<()> {
    let (_, analytic) = (problem.cost)(&problem.x)?;
    let base_kinks = problem.kinks.as_ref().map(|f| f(&problem.x)).transpose()?;
    let dim = problem.x.len();
    let coords = sample(rng, dim, cfg.coordinates.min(dim));
    let eps = cfg.epsilon;
    for i in coords.iter() {
        let mut plus = problem.x.clone();
        plus[i] += eps;
        let mut minus = problem.x.clone();
        minus[i] -= eps;
        if let (Some(f), Some(base)) = (&problem.kinks, &base_kinks) {
            if f(&plus)? != *base || f(&minus)? != *base {
                report.skipped += 1;
                continue;
            }
        }
        let numeric = ((problem.cost)(&plus)?.0 - (problem.cost)(&minus)?.0) / (2.0 * eps);
        let err = relative_error(analytic[i] * scale, numeric);
        report.max_relative_error = report.max_relative_error.max(err);
        report.checked += 1;
    }
    Ok(())
}

/// Runs `cfg.cases` random instances per cost term; kernels cycle through
/// all four kinds for the GP and blended terms.
pub fn run_gradcheck(cfg: &GradcheckConfig, seed: u64) -> Result<Vec<TermReport>> {
    let mut reports = Vec::new();
    for term in Term::ALL {
        let mut report = TermReport {
            term,
            checked: 0,
            skipped: 0,
            max_relative_error: 0.0,
            passed: false,
        };
        let scale = if cfg.perturb == Some(term) { 2.0 } else { 1.0 };
        for case in 0..cfg.cases {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(case as u64 * 4 + term as u64);
            let kind = KernelKind::ALL[case % KernelKind::ALL.len()];
            let problem = match term {
                Term::Auto => auto_problem(&mut rng)?,
                Term::Gp => gp_problem(&mut rng, kind)?,
                Term::Lr => lr_problem(&mut rng)?,
                Term::Blended => blended_problem(&mut rng, kind)?,
            };
            check(&problem, cfg, scale, &mut rng, &mut report)?;
        }
        report.passed = report.checked > 0 && report.max_relative_error < cfg.tolerance;
        reports.push(report);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_run_passes() {
        let reports = run_gradcheck(&GradcheckConfig::default(), 0).unwrap();
        for r in &reports {
            assert!(r.passed, "{}", r.line());
        }
    }

    #[test]
    fn doubled_gradient_is_caught() {
        for term in Term::ALL {
            let cfg = GradcheckConfig {
                cases: 3,
                perturb: Some(term),
                ..GradcheckConfig::default()
            };
            let reports = run_gradcheck(&cfg, 1).unwrap();
            for r in reports {
                assert_eq!(r.passed, r.term != term, "{}", r.line());
            }
        }
    }
}
