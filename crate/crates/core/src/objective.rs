//! The blended training objective
//!
//! ```text
//! L = (1 − α)·L_auto + α·((1 − β)·L_LR + β·L_GP)
//! ```
//!
//! over a flat parameter vector holding the autoencoder, every GP projection
//! and every parametric head. With several GP specs `L_GP` is the unweighted
//! mean of the per-spec costs; likewise `L_LR` over heads.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::autoencoder::{
    decoder_side, encoder_side, forward, AutoencoderParams, CorruptionSpec, EncodeMode, FrozenNoise,
};
use crate::data::{select, Dataset, LabelKind, Standardizer};
use crate::error::{NpgaError, Result};
use crate::guidance::{l_gaussian_head_and_grad, l_gp_and_grad, l_lr_and_grad, GpGuidanceSpec, LrGuidanceSpec};
use crate::kernels::{KernelKind, KernelSpec};
use crate::optimizer::CgOptions;

/// Configuration of one GP guidance term; the projection itself is a trained parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct GpGuidanceConfig {
    pub label_set: String,
    pub partition: Range<usize>,
    pub latent_dim: usize,
    pub kernel: KernelSpec,
    pub noise_variance: f64,
}

impl GpGuidanceConfig {
    pub fn new(label_set: impl Into<String>, partition: Range<usize>, latent_dim: usize, kernel: KernelSpec) -> Self {
        GpGuidanceConfig {
            label_set: label_set.into(),
            partition,
            latent_dim,
            kernel,
            noise_variance: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadLoss {
    /// Logistic regression on a discrete label set.
    Softmax,
    /// Linear regression with squared error on a real-valued label set.
    Squared,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadConfig {
    pub label_set: String,
    pub partition: Range<usize>,
    pub loss: HeadLoss,
}

impl HeadConfig {
    pub fn softmax(label_set: impl Into<String>, partition: Range<usize>) -> Self {
        HeadConfig {
            label_set: label_set.into(),
            partition,
            loss: HeadLoss::Softmax,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub alpha: f64,
    pub beta: f64,
    pub hidden_units: usize,
    pub corruption: CorruptionSpec,
    pub encode_mode: EncodeMode,
    pub gp_specs: Vec<GpGuidanceConfig>,
    /// Parametric guidance heads; empty means the parametric term is off.
    pub lr_heads: Vec<HeadConfig>,
    pub minibatch_size: usize,
    pub cg_iters_per_batch: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Line-search settings used for every minibatch (the iteration budget
    /// comes from `cg_iters_per_batch`).
    pub cg: CgOptions,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            alpha: 0.5,
            beta: 1.0,
            hidden_units: 250,
            corruption: CorruptionSpec::gaussian(0.05),
            encode_mode: EncodeMode::NoisyRelu,
            gp_specs: Vec::new(),
            lr_heads: Vec::new(),
            minibatch_size: 350,
            cg_iters_per_batch: 3,
            epochs: 1,
            seed: 0,
            cg: CgOptions::default(),
        }
    }
}

impl ModelConfig {
    /// Small-sample protocol: full batch, 100 CG iterations, 250 noisy
    /// rectified units, Gaussian input noise 0.05, RBF GP on a 2-D
    /// projection of all units, logistic head on all units.
    pub fn oil_flow(alpha: f64, beta: f64) -> Self {
        let j = 250;
        ModelConfig {
            alpha,
            beta,
            hidden_units: j,
            corruption: CorruptionSpec::gaussian(0.05),
            gp_specs: vec![GpGuidanceConfig::new("class", 0..j, 2, KernelSpec::rbf(1.0))],
            lr_heads: vec![HeadConfig::softmax("class", 0..j)],
            minibatch_size: 350,
            cg_iters_per_batch: 100,
            epochs: 1,
            ..ModelConfig::default()
        }
    }

    /// Four GPs on disjoint partitions: class on the first half of the
    /// hidden units (H = 4), then elevation (H = 2), azimuth (H = 1,
    /// periodic kernel) and lighting (H = 2) sharing the second half evenly.
    pub fn four_gp_partitioned(hidden_units: usize, alpha: f64, nonperiodic: KernelKind, azimuth_period: f64) -> Self {
        let half = hidden_units / 2;
        let rest = hidden_units - half;
        let third = rest / 3;
        let a = half..half + third;
        let b = a.end..a.end + third;
        let c = b.end..hidden_units;
        let k = KernelSpec::new(nonperiodic);
        ModelConfig {
            alpha,
            beta: 1.0,
            hidden_units,
            corruption: CorruptionSpec::mask(0.2),
            gp_specs: vec![
                GpGuidanceConfig::new("class", 0..half, 4, k),
                GpGuidanceConfig::new("elevation", a, 2, k),
                GpGuidanceConfig::new("azimuth", b, 1, KernelSpec::periodic(azimuth_period, 1.0)),
                GpGuidanceConfig::new("lighting", c, 2, k),
            ],
            ..ModelConfig::default()
        }
    }

    pub fn lr_enabled(&self) -> bool {
        !self.lr_heads.is_empty()
    }

    /// β after accounting for absent terms: forced to 1 without parametric
    /// heads and to 0 without GP specs.
    pub fn effective_beta(&self) -> f64 {
        if !self.lr_enabled() {
            1.0
        } else if self.gp_specs.is_empty() {
            0.0
        } else {
            self.beta
        }
    }

    /// Blend weights of (L_auto, L_LR, L_GP).
    pub fn weights(&self) -> (f64, f64, f64) {
        let b = self.effective_beta();
        let guided = !self.gp_specs.is_empty() || self.lr_enabled();
        let a = if guided { self.alpha } else { 0.0 };
        (1.0 - a, a * (1.0 - b), a * b)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.alpha) {
            return Err(NpgaError::config(
                "model.alpha",
                format!("{} not in [0, 1]", self.alpha),
            ));
        }
        if !unit(self.beta) {
            return Err(NpgaError::config("model.beta", format!("{} not in [0, 1]", self.beta)));
        }
        if self.hidden_units == 0 {
            return Err(NpgaError::config("model.hidden_units", "must be positive"));
        }
        if self.minibatch_size == 0 || self.cg_iters_per_batch == 0 || self.epochs == 0 {
            return Err(NpgaError::config(
                "optimizer",
                "minibatch_size, cg_iters_per_batch and epochs must be positive",
            ));
        }
        self.corruption.validate()?;
        self.cg.validate()?;
        for (i, gp) in self.gp_specs.iter().enumerate() {
            let field = format!("model.gp.{i}");
            if gp.partition.is_empty() || gp.partition.end > self.hidden_units {
                return Err(NpgaError::config(
                    format!("{field}.partition"),
                    format!(
                        "{:?} must be nonempty and within 0..{}",
                        gp.partition, self.hidden_units
                    ),
                ));
            }
            if gp.latent_dim == 0 || gp.latent_dim > gp.partition.len() {
                return Err(NpgaError::config(
                    format!("{field}.latent_dim"),
                    format!("{} must lie in 1..={}", gp.latent_dim, gp.partition.len()),
                ));
            }
            if !(gp.noise_variance.is_finite() && gp.noise_variance > 0.0) {
                return Err(NpgaError::config(format!("{field}.noise_variance"), "must be > 0"));
            }
            gp.kernel
                .validate()
                .map_err(|e| NpgaError::config(format!("{field}.kernel"), e.to_string()))?;
            for (j, other) in self.gp_specs[..i].iter().enumerate() {
                if gp.partition.start < other.partition.end && other.partition.start < gp.partition.end {
                    return Err(NpgaError::config(
                        format!("{field}.partition"),
                        format!("overlaps model.gp.{j}.partition"),
                    ));
                }
            }
        }
        for (i, h) in self.lr_heads.iter().enumerate() {
            if h.partition.is_empty() || h.partition.end > self.hidden_units {
                return Err(NpgaError::config(
                    format!("model.head.{i}.partition"),
                    format!("{:?} must be nonempty and within 0..{}", h.partition, self.hidden_units),
                ));
            }
        }
        Ok(())
    }

    /// Output width of every head, read from the label sets of `dataset`.
    pub fn head_outputs(&self, dataset: &Dataset) -> Result<Vec<usize>> {
        self.lr_heads
            .iter()
            .map(|h| {
                let ls = dataset.label_set(&h.label_set)?;
                match (h.loss, ls.kind) {
                    (HeadLoss::Softmax, LabelKind::Discrete { classes }) => Ok(classes),
                    (HeadLoss::Softmax, _) => Err(NpgaError::InvalidLabel(format!(
                        "softmax head needs a discrete label set, `{}` is {}",
                        ls.name,
                        ls.kind.name()
                    ))),
                    (HeadLoss::Squared, _) => Ok(ls.values.ncols()),
                }
            })
            .collect()
    }

    pub fn layout_for(&self, dataset: &Dataset) -> Result<ParamLayout> {
        self.validate()?;
        for gp in &self.gp_specs {
            dataset.label_set(&gp.label_set)?;
        }
        Ok(ParamLayout::new(
            self,
            dataset.input_dim(),
            &self.head_outputs(dataset)?,
        ))
    }
}

/// Where each component lives in the flat parameter vector.
///
/// Order: encoder weight (J×K, row-major), encoder bias, decoder bias, each
/// projection (H×P, row-major), then each head's weights (M×P, row-major)
/// followed by its bias.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub hidden_units: usize,
    pub input_dim: usize,
    /// (H, P) per GP spec.
    pub projections: Vec<(usize, usize)>,
    /// (M, P) per head.
    pub heads: Vec<(usize, usize)>,
}

impl ParamLayout {
    pub fn new(config: &ModelConfig, input_dim: usize, head_outputs: &[usize]) -> Self {
        ParamLayout {
            hidden_units: config.hidden_units,
            input_dim,
            projections: config
                .gp_specs
                .iter()
                .map(|g| (g.latent_dim, g.partition.len()))
                .collect(),
            heads: config
                .lr_heads
                .iter()
                .zip(head_outputs)
                .map(|(h, m)| (*m, h.partition.len()))
                .collect(),
        }
    }

    pub fn autoencoder_len(&self) -> usize {
        self.hidden_units * self.input_dim + self.hidden_units + self.input_dim
    }

    pub fn len(&self) -> usize {
        self.autoencoder_len()
            + self.projections.iter().map(|(h, p)| h * p).sum::<usize>()
            + self.heads.iter().map(|(m, p)| m * p + m).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: DVector<f64>,
}

impl ParamVector {
    pub fn zeros(layout: &ParamLayout) -> Self {
        ParamVector {
            values: DVector::zeros(layout.len()),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.values.as_slice()
    }
}

impl From<DVector<f64>> for ParamVector {
    fn from(values: DVector<f64>) -> Self {
        ParamVector { values }
    }
}

/// All trainable parameters, by component.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub autoencoder: AutoencoderParams,
    pub projections: Vec<DMatrix<f64>>,
    pub heads: Vec<LrGuidanceSpec>,
}

impl ModelParams {
    pub fn zeros(layout: &ParamLayout) -> Self {
        ModelParams {
            autoencoder: AutoencoderParams::zeros(layout.hidden_units, layout.input_dim),
            projections: layout.projections.iter().map(|(h, p)| DMatrix::zeros(*h, *p)).collect(),
            heads: layout
                .heads
                .iter()
                .map(|(m, p)| LrGuidanceSpec::zeros(*m, *p))
                .collect(),
        }
    }

    /// Fresh initialisation. The autoencoder draws from `ae_rng` only, so
    /// its initial values do not depend on which guidance terms exist.
    /// Projections are uniform in ±1/√P; heads start at zero.
    pub fn init<R: Rng + ?Sized, S: Rng + ?Sized>(layout: &ParamLayout, ae_rng: &mut R, guidance_rng: &mut S) -> Self {
        let autoencoder = AutoencoderParams::init(layout.hidden_units, layout.input_dim, ae_rng);
        let projections = layout
            .projections
            .iter()
            .map(|(h, p)| {
                let bound = 1.0 / (*p as f64).sqrt();
                let mut m = DMatrix::zeros(*h, *p);
                for i in 0..*h {
                    for j in 0..*p {
                        m[(i, j)] = guidance_rng.random_range(-bound..=bound);
                    }
                }
                m
            })
            .collect();
        ModelParams {
            autoencoder,
            projections,
            heads: layout
                .heads
                .iter()
                .map(|(m, p)| LrGuidanceSpec::zeros(*m, *p))
                .collect(),
        }
    }

    /// The GP spec for index `i` of `config`, carrying the current projection.
    pub fn gp_spec(&self, config: &ModelConfig, i: usize) -> GpGuidanceSpec {
        let c = &config.gp_specs[i];
        GpGuidanceSpec {
            partition: c.partition.clone(),
            projection: self.projections[i].clone(),
            kernel: c.kernel,
            noise_variance: c.noise_variance,
            target_label_set: c.label_set.clone(),
        }
    }
}

fn push_row_major(out: &mut Vec<f64>, m: &DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
}

fn check_dims(what: &str, m: &DMatrix<f64>, shape: (usize, usize)) -> Result<()> {
    if m.shape() != shape {
        return Err(NpgaError::Layout(format!(
            "{what} is {:?}, layout expects {shape:?}",
            m.shape()
        )));
    }
    Ok(())
}

pub fn pack(params: &ModelParams, layout: &ParamLayout) -> Result<ParamVector> {
    let ae = &params.autoencoder;
    check_dims("encoder weight", &ae.weight, (layout.hidden_units, layout.input_dim))?;
    if ae.enc_bias.len() != layout.hidden_units || ae.dec_bias.len() != layout.input_dim {
        return Err(NpgaError::Layout("autoencoder bias lengths do not match layout".into()));
    }
    if params.projections.len() != layout.projections.len() || params.heads.len() != layout.heads.len() {
        return Err(NpgaError::Layout(
            "number of projections or heads does not match layout".into(),
        ));
    }
    let mut out = Vec::with_capacity(layout.len());
    push_row_major(&mut out, &ae.weight);
    out.extend(ae.enc_bias.iter());
    out.extend(ae.dec_bias.iter());
    for (g, shape) in params.projections.iter().zip(&layout.projections) {
        check_dims("projection", g, *shape)?;
        push_row_major(&mut out, g);
    }
    for (h, (m, p)) in params.heads.iter().zip(&layout.heads) {
        check_dims("head weights", &h.weights, (*m, *p))?;
        if h.bias.len() != *m {
            return Err(NpgaError::Layout("head bias length does not match layout".into()));
        }
        push_row_major(&mut out, &h.weights);
        out.extend(h.bias.iter());
    }
    Ok(ParamVector {
        values: DVector::from_vec(out),
    })
}

pub fn unpack(vector: &ParamVector, layout: &ParamLayout) -> Result<ModelParams> {
    if vector.len() != layout.len() {
        return Err(NpgaError::Layout(format!(
            "vector has {} values, layout needs {}",
            vector.len(),
            layout.len()
        )));
    }
    let v = vector.as_slice();
    let mut at = 0usize;
    let mut take = |n: usize| {
        let s = &v[at..at + n];
        at += n;
        s
    };
    let (j, k) = (layout.hidden_units, layout.input_dim);
    let weight = DMatrix::from_row_slice(j, k, take(j * k));
    let enc_bias = DVector::from_column_slice(take(j));
    let dec_bias = DVector::from_column_slice(take(k));
    let projections = layout
        .projections
        .iter()
        .map(|(h, p)| DMatrix::from_row_slice(*h, *p, take(h * p)))
        .collect();
    let heads = layout
        .heads
        .iter()
        .map(|(m, p)| LrGuidanceSpec {
            weights: DMatrix::from_row_slice(*m, *p, take(m * p)),
            bias: DVector::from_column_slice(take(*m)),
        })
        .collect();
    Ok(ModelParams {
        autoencoder: AutoencoderParams {
            weight,
            enc_bias,
            dec_bias,
        },
        projections,
        heads,
    })
}

#[derive(Debug, Clone, PartialEq)]
enum Encoding {
    Raw,
    Standardized(Standardizer),
}

/// Converts label sets into GP and head targets. Discrete sets give their
/// one-hot columns, continuous sets are standardized with training
/// statistics, periodic sets pass the raw angle.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetEncoder {
    gp: Vec<(String, Encoding)>,
    heads: Vec<(String, Encoding)>,
}

/// Encoded targets, row-aligned with a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub gp: Vec<DMatrix<f64>>,
    pub heads: Vec<DMatrix<f64>>,
}

impl Targets {
    pub fn select_rows(&self, rows: &[usize]) -> Targets {
        Targets {
            gp: self.gp.iter().map(|m| select(m, rows)).collect(),
            heads: self.heads.iter().map(|m| select(m, rows)).collect(),
        }
    }
}

impl TargetEncoder {
    pub fn fit(train: &Dataset, config: &ModelConfig) -> Result<Self> {
        let encoding = |name: &str| -> Result<(String, Encoding)> {
            let ls = train.label_set(name)?;
            let enc = match ls.kind {
                LabelKind::Continuous => Encoding::Standardized(Standardizer::fit(&ls.values)),
                _ => Encoding::Raw,
            };
            Ok((name.to_string(), enc))
        };
        Ok(TargetEncoder {
            gp: config
                .gp_specs
                .iter()
                .map(|g| encoding(&g.label_set))
                .collect::<Result<_>>()?,
            heads: config
                .lr_heads
                .iter()
                .map(|h| encoding(&h.label_set))
                .collect::<Result<_>>()?,
        })
    }

    pub fn encode(&self, dataset: &Dataset) -> Result<Targets> {
        let apply = |(name, enc): &(String, Encoding)| -> Result<DMatrix<f64>> {
            let values = &dataset.label_set(name)?.values;
            Ok(match enc {
                Encoding::Raw => values.clone(),
                Encoding::Standardized(s) => s.apply(values),
            })
        };
        Ok(Targets {
            gp: self.gp.iter().map(apply).collect::<Result<_>>()?,
            heads: self.heads.iter().map(apply).collect::<Result<_>>()?,
        })
    }
}

/// A minibatch: clean inputs plus aligned targets.
#[derive(Debug, Clone)]
pub struct Batch {
    pub clean: DMatrix<f64>,
    pub targets: Targets,
}

/// Individual terms of one evaluation. Terms with zero blend weight are
/// skipped and reported as `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostBreakdown {
    pub total: f64,
    pub auto: Option<f64>,
    pub lr: Option<f64>,
    pub gp: Option<f64>,
    pub gp_terms: Vec<f64>,
    pub head_terms: Vec<f64>,
}

pub struct Objective<'a> {
    pub config: &'a ModelConfig,
    pub layout: &'a ParamLayout,
}

impl<'a> Objective<'a> {
    pub fn new(config: &'a ModelConfig, layout: &'a ParamLayout) -> Self {
        Objective { config, layout }
    }

    pub fn draw_noise<R: Rng + ?Sized>(
        &self,
        clean: &DMatrix<f64>,
        params: &ParamVector,
        rng: &mut R,
    ) -> Result<FrozenNoise> {
        let p = unpack(params, self.layout)?;
        FrozenNoise::draw(
            clean,
            &p.autoencoder,
            &self.config.corruption,
            self.config.encode_mode,
            rng,
        )
    }

    /// Cost and flat gradient with the noise held fixed.
    pub fn evaluate(
        &self,
        batch: &Batch,
        params: &ParamVector,
        noise: &FrozenNoise,
    ) -> Result<(CostBreakdown, ParamVector)> {
        let cfg = self.config;
        let p = unpack(params, self.layout)?;
        let ae = &p.autoencoder;
        if batch.clean.nrows() == 0 {
            return Err(NpgaError::InvalidInput("empty batch".into()));
        }
        if batch.targets.gp.len() != cfg.gp_specs.len() || batch.targets.heads.len() != cfg.lr_heads.len() {
            return Err(NpgaError::InvalidInput(
                "targets do not match the configured guidance terms".into(),
            ));
        }
        let (w_auto, w_lr, w_gp) = cfg.weights();
        let fwd = forward(&noise.corrupted, ae, noise.activation.as_ref())?;
        let (n, j) = fwd.hidden.shape();
        let mut d_hidden = DMatrix::zeros(n, j);
        let mut g = ModelParams::zeros(self.layout);
        let mut out = CostBreakdown {
            total: 0.0,
            auto: None,
            lr: None,
            gp: None,
            gp_terms: Vec::new(),
            head_terms: Vec::new(),
        };

        if w_auto != 0.0 {
            if batch.clean.shape() != noise.corrupted.shape() {
                return Err(NpgaError::shape(
                    "clean batch",
                    format!("{:?}", noise.corrupted.shape()),
                    format!("{:?}", batch.clean.shape()),
                ));
            }
            let dec = decoder_side(&batch.clean, &fwd.hidden, ae);
            d_hidden += dec.d_hidden * w_auto;
            g.autoencoder.weight += dec.d_weight * w_auto;
            g.autoencoder.dec_bias = dec.d_dec_bias * w_auto;
            out.auto = Some(dec.cost);
            out.total += w_auto * dec.cost;
        }

        if w_gp != 0.0 {
            let scale = w_gp / cfg.gp_specs.len() as f64;
            let mut sum = 0.0;
            for (i, gp) in cfg.gp_specs.iter().enumerate() {
                let spec = p.gp_spec(cfg, i);
                let r = l_gp_and_grad(&fwd.hidden, &spec, &batch.targets.gp[i])?;
                let mut cols = d_hidden.columns_mut(gp.partition.start, gp.partition.len());
                cols += r.d_hidden * scale;
                g.projections[i] = r.d_projection * scale;
                out.gp_terms.push(r.cost);
                sum += r.cost;
            }
            let mean = sum / cfg.gp_specs.len() as f64;
            out.gp = Some(mean);
            out.total += w_gp * mean;
        }

        if w_lr != 0.0 {
            let scale = w_lr / cfg.lr_heads.len() as f64;
            let mut sum = 0.0;
            for (i, head) in cfg.lr_heads.iter().enumerate() {
                let part = fwd
                    .hidden
                    .columns(head.partition.start, head.partition.len())
                    .into_owned();
                let r = match head.loss {
                    HeadLoss::Softmax => l_lr_and_grad(&part, &p.heads[i], &batch.targets.heads[i])?,
                    HeadLoss::Squared => l_gaussian_head_and_grad(&part, &p.heads[i], &batch.targets.heads[i])?,
                };
                let mut cols = d_hidden.columns_mut(head.partition.start, head.partition.len());
                cols += r.d_hidden * scale;
                g.heads[i].weights = r.d_weights * scale;
                g.heads[i].bias = r.d_bias * scale;
                out.head_terms.push(r.cost);
                sum += r.cost;
            }
            let mean = sum / cfg.lr_heads.len() as f64;
            out.lr = Some(mean);
            out.total += w_lr * mean;
        }

        let (enc_w, enc_b) = encoder_side(&noise.corrupted, &fwd, &d_hidden);
        g.autoencoder.weight += enc_w;
        g.autoencoder.enc_bias = enc_b;
        Ok((out, pack(&g, self.layout)?))
    }
}

/// Draws corruption and activation noise once, then evaluates the blended
/// cost and gradient under that noise.
pub fn blended_cost_and_grad<R: Rng + ?Sized>(
    batch: &Batch,
    config: &ModelConfig,
    layout: &ParamLayout,
    params: &ParamVector,
    rng: &mut R,
) -> Result<(CostBreakdown, ParamVector)> {
    let obj = Objective::new(config, layout);
    let noise = obj.draw_noise(&batch.clean, params, rng)?;
    obj.evaluate(batch, params, &noise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_layout() -> ParamLayout {
        let cfg = ModelConfig {
            hidden_units: 5,
            gp_specs: vec![
                GpGuidanceConfig::new("a", 0..3, 2, KernelSpec::rbf(1.0)),
                GpGuidanceConfig::new("b", 3..5, 1, KernelSpec::linear()),
            ],
            lr_heads: vec![HeadConfig::softmax("c", 0..5)],
            ..ModelConfig::default()
        };
        ParamLayout::new(&cfg, 4, &[3])
    }

    proptest! {
        #[test]
        fn pack_unpack_round_trip(seed in any::<u64>()) {
            use rand::SeedableRng;
            let layout = small_layout();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let values = DVector::from_fn(layout.len(), |_, _| rand::Rng::random_range(&mut rng, -5.0..5.0));
            let v = ParamVector { values };
            let p = unpack(&v, &layout).unwrap();
            let back = pack(&p, &layout).unwrap();
            prop_assert_eq!(&back, &v);
            prop_assert_eq!(unpack(&back, &layout).unwrap(), p);
        }
    }

    #[test]
    fn zero_params_pack_to_zero_vector() {
        let layout = small_layout();
        assert_eq!(layout.len(), 5 * 4 + 5 + 4 + 2 * 3 + 1 * 2 + 3 * 5 + 3);
        let v = pack(&ModelParams::zeros(&layout), &layout).unwrap();
        assert_eq!(v, ParamVector::zeros(&layout));
    }

    #[test]
    fn wrong_length_is_layout_error() {
        let layout = small_layout();
        let v = ParamVector {
            values: DVector::zeros(layout.len() + 1),
        };
        assert!(matches!(unpack(&v, &layout), Err(NpgaError::Layout(_))));
    }

    #[test]
    fn beta_forced_without_heads() {
        let cfg = ModelConfig {
            beta: 0.3,
            gp_specs: vec![GpGuidanceConfig::new("a", 0..10, 2, KernelSpec::rbf(1.0))],
            ..ModelConfig::default()
        };
        assert_eq!(cfg.effective_beta(), 1.0);
        assert_eq!(cfg.weights(), (0.5, 0.0, 0.5));
    }

    #[test]
    fn overlapping_partitions_rejected() {
        let cfg = ModelConfig {
            hidden_units: 10,
            gp_specs: vec![
                GpGuidanceConfig::new("a", 0..6, 2, KernelSpec::rbf(1.0)),
                GpGuidanceConfig::new("b", 5..10, 2, KernelSpec::rbf(1.0)),
            ],
            ..ModelConfig::default()
        };
        match cfg.validate() {
            Err(NpgaError::Config { field, .. }) => assert_eq!(field, "model.gp.1.partition"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn four_gp_partitions_cover_hidden_layer() {
        let cfg = ModelConfig::four_gp_partitioned(2400, 0.5, KernelKind::Arcsine, 360.0);
        cfg.validate().unwrap();
        let parts: Vec<_> = cfg.gp_specs.iter().map(|g| g.partition.clone()).collect();
        assert_eq!(parts, vec![0..1200, 1200..1600, 1600..2000, 2000..2400]);
        assert_eq!(cfg.gp_specs[2].kernel.kind, KernelKind::Periodic);
    }
}
