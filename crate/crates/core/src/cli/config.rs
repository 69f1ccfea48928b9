//! Flat `key = value` run configuration.
//!
//! Lines are `section.key = value`; `#` starts a comment. Sections are
//! `model.`, `optimizer.`, `data.`, `probe.`, `grid.` and `gradcheck.`.
//! Guidance terms are indexed: `model.gp.0.kernel = rbf`,
//! `model.head.0.label_set = class`. Unknown keys are errors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::autoencoder::{CorruptionScheme, CorruptionSpec, EncodeMode};
use crate::data::SynthConfig;
use crate::error::{NpgaError, Result};
use crate::eval::ProbeOptions;
use crate::kernels::{KernelKind, KernelSpec};
use crate::objective::{GpGuidanceConfig, HeadConfig, HeadLoss, ModelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    /// Generated in memory from `data.synth.*`.
    Synth,
    /// The self-describing tab-separated dataset format.
    Npga,
    /// Whitespace-delimited features plus a separate labels file.
    Delimited,
    /// Small-NORB binary matrices; paths are prefixes completed with
    /// `-dat.mat`, `-cat.mat` and `-info.mat`.
    Norb,
}

impl DataFormat {
    fn name(self) -> &'static str {
        match self {
            DataFormat::Synth => "synth",
            DataFormat::Npga => "npga",
            DataFormat::Delimited => "delimited",
            DataFormat::Norb => "norb",
        }
    }
}

impl FromStr for DataFormat {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "synth" => Ok(DataFormat::Synth),
            "npga" => Ok(DataFormat::Npga),
            "delimited" => Ok(DataFormat::Delimited),
            "norb" => Ok(DataFormat::Norb),
            _ => Err(format!("unknown data format `{s}` (synth, npga, delimited, norb)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub format: DataFormat,
    pub train: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Label files for the delimited format.
    pub train_labels: Option<PathBuf>,
    pub validation_labels: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub num_classes: Option<usize>,
    pub synth: SynthConfig,
    /// Keep this many training examples (0 keeps all).
    pub train_subsample: usize,
    /// Stratify the subsample by the probe label set.
    pub stratify: bool,
    /// Subsample seed; defaults to the model seed.
    pub subsample_seed: Option<u64>,
    pub standardize: bool,
    /// Hold out this many training examples as validation when no
    /// validation split is given (0 disables).
    pub validation_holdout: usize,
    pub norb_downsample: usize,
    pub norb_contrast_normalize: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            format: DataFormat::Synth,
            train: None,
            validation: None,
            test: None,
            train_labels: None,
            validation_labels: None,
            test_labels: None,
            num_classes: None,
            synth: SynthConfig::default(),
            train_subsample: 0,
            stratify: true,
            subsample_seed: None,
            standardize: true,
            validation_holdout: 0,
            norb_downsample: 1,
            norb_contrast_normalize: true,
        }
    }
}

/// Which hidden units the probe reads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProbeUnits {
    All,
    /// The partition of GP spec `i`.
    Gp(usize),
    Range(Range<usize>),
}

impl FromStr for ProbeUnits {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "all" {
            return Ok(ProbeUnits::All);
        }
        if let Some(i) = s.strip_prefix("gp:") {
            return i
                .parse()
                .map(ProbeUnits::Gp)
                .map_err(|_| format!("bad GP index in `{s}`"));
        }
        parse_range(s).map(ProbeUnits::Range)
    }
}

impl std::fmt::Display for ProbeUnits {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ProbeUnits::All => write!(f, "all"),
            ProbeUnits::Gp(i) => write!(f, "gp:{i}"),
            ProbeUnits::Range(r) => write!(f, "{}..{}", r.start, r.end),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub label_set: String,
    pub units: ProbeUnits,
    pub options: ProbeOptions,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            label_set: "class".into(),
            units: ProbeUnits::All,
            options: ProbeOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub repeats: usize,
    /// Worker threads; 0 uses all cores.
    pub threads: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        let tenths: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        GridConfig {
            alphas: tenths.clone(),
            betas: tenths,
            repeats: 1,
            threads: 0,
        }
    }
}

/// Cost term whose analytic gradient the gradient checker doubles, to
/// confirm that the check notices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Term {
    Auto,
    Gp,
    Lr,
    Blended,
}

impl Term {
    pub const ALL: [Term; 4] = [Term::Auto, Term::Gp, Term::Lr, Term::Blended];

    pub fn name(self) -> &'static str {
        match self {
            Term::Auto => "l_auto",
            Term::Gp => "l_gp",
            Term::Lr => "l_lr",
            Term::Blended => "blended",
        }
    }
}

impl FromStr for Term {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Term::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown cost term `{s}` (l_auto, l_gp, l_lr, blended)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub cases: usize,
    pub coordinates: usize,
    pub epsilon: f64,
    pub tolerance: f64,
    pub perturb: Option<Term>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            cases: 20,
            coordinates: 30,
            epsilon: 1e-6,
            tolerance: 1e-4,
            perturb: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub data: DataConfig,
    pub probe: ProbeConfig,
    pub grid: GridConfig,
    pub gradcheck: GradcheckConfig,
}

fn parse_range(s: &str) -> std::result::Result<Range<usize>, String> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| format!("expected `start..end`, got `{s}`"))?;
    let start = a.trim().parse().map_err(|_| format!("bad range start in `{s}`"))?;
    let end = b.trim().parse().map_err(|_| format!("bad range end in `{s}`"))?;
    Ok(start..end)
}

fn parse_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| format!("bad number `{v}` in list")))
        .collect()
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got `{s}`")),
    }
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

/// Raw entries still waiting to be consumed.
struct Entries(BTreeMap<String, String>);

impl Entries {
    fn take<T, E: ToString>(
        &mut self,
        key: &str,
        parse: impl Fn(&str) -> std::result::Result<T, E>,
    ) -> Result<Option<T>> {
        match self.0.remove(key) {
            None => Ok(None),
            Some(v) => parse(&v).map(Some).map_err(|e| NpgaError::config(key, e.to_string())),
        }
    }

    fn set<T: FromStr>(&mut self, key: &str, slot: &mut T) -> Result<()>
    where
        T::Err: ToString,
    {
        if let Some(v) = self.take(key, str::parse::<T>)? {
            *slot = v;
        }
        Ok(())
    }

    /// Distinct indices `i` of keys `prefix.i.*`.
    fn indices(&self, prefix: &str) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for key in self.0.keys() {
            if let Some(rest) = key.strip_prefix(prefix) {
                let idx = rest.split('.').next().unwrap_or("");
                let i: usize = idx
                    .parse()
                    .map_err(|_| NpgaError::config(key.clone(), "expected a numeric index"))?;
                if !out.contains(&i) {
                    out.push(i);
                }
            }
        }
        out.sort_unstable();
        for (pos, i) in out.iter().enumerate() {
            if pos != *i {
                return Err(NpgaError::config(
                    format!("{prefix}{pos}"),
                    "indices must be contiguous from 0",
                ));
            }
        }
        Ok(out)
    }
}

fn parse_encode_mode(s: &str) -> std::result::Result<EncodeMode, String> {
    match s {
        "noisy_relu" => Ok(EncodeMode::NoisyRelu),
        "relu" => Ok(EncodeMode::Deterministic),
        _ => Err(format!("unknown encode mode `{s}` (noisy_relu, relu)")),
    }
}

fn encode_mode_name(m: EncodeMode) -> &'static str {
    match m {
        EncodeMode::NoisyRelu => "noisy_relu",
        EncodeMode::Deterministic => "relu",
    }
}

fn parse_loss(s: &str) -> std::result::Result<HeadLoss, String> {
    match s {
        "softmax" => Ok(HeadLoss::Softmax),
        "squared" => Ok(HeadLoss::Squared),
        _ => Err(format!("unknown head loss `{s}` (softmax, squared)")),
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            NpgaError::Parse { line, message, .. } => NpgaError::Parse {
                path: path.to_path_buf(),
                line,
                message,
            },
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut raw = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(NpgaError::Parse {
                    path: PathBuf::from("<config>"),
                    line: i + 1,
                    message: format!("expected `key = value`, got `{line}`"),
                });
            };
            if raw.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(NpgaError::Parse {
                    path: PathBuf::from("<config>"),
                    line: i + 1,
                    message: format!("duplicate key `{}`", k.trim()),
                });
            }
        }
        let mut e = Entries(raw);
        let mut cfg = RunConfig::default();

        let m = &mut cfg.model;
        e.set("model.alpha", &mut m.alpha)?;
        e.set("model.beta", &mut m.beta)?;
        e.set("model.hidden_units", &mut m.hidden_units)?;
        e.set("model.seed", &mut m.seed)?;
        if let Some(mode) = e.take("model.encode_mode", parse_encode_mode)? {
            m.encode_mode = mode;
        }
        let scheme = e.take("model.corruption", |s: &str| match s {
            "gaussian" => Ok(CorruptionScheme::Gaussian),
            "mask" => Ok(CorruptionScheme::Mask),
            _ => Err(format!("unknown corruption `{s}` (gaussian, mask)")),
        })?;
        let level = e.take("model.corruption_level", str::parse::<f64>)?;
        match (scheme.unwrap_or(m.corruption.scheme), level) {
            (CorruptionScheme::Gaussian, l) => {
                m.corruption = CorruptionSpec::gaussian(l.unwrap_or(m.corruption.gaussian_std))
            }
            (CorruptionScheme::Mask, l) => m.corruption = CorruptionSpec::mask(l.unwrap_or(0.2)),
        }
        for i in e.indices("model.gp.")? {
            let p = format!("model.gp.{i}.");
            let label = e
                .take(&format!("{p}label_set"), |s: &str| Ok::<_, String>(s.to_string()))?
                .ok_or_else(|| NpgaError::config(format!("{p}label_set"), "required"))?;
            let partition = e
                .take(&format!("{p}partition"), parse_range)?
                .ok_or_else(|| NpgaError::config(format!("{p}partition"), "required"))?;
            let kind = e
                .take(&format!("{p}kernel"), str::parse::<KernelKind>)?
                .unwrap_or(KernelKind::Rbf);
            let mut gp = GpGuidanceConfig::new(label, partition, 2, KernelSpec::new(kind));
            e.set(&format!("{p}latent_dim"), &mut gp.latent_dim)?;
            e.set(&format!("{p}noise_variance"), &mut gp.noise_variance)?;
            e.set(&format!("{p}signal_variance"), &mut gp.kernel.signal_variance)?;
            e.set(&format!("{p}lengthscale"), &mut gp.kernel.lengthscale)?;
            e.set(&format!("{p}period"), &mut gp.kernel.period)?;
            e.set(&format!("{p}input_weight"), &mut gp.kernel.input_weight)?;
            e.set(&format!("{p}bias_weight"), &mut gp.kernel.bias_weight)?;
            m.gp_specs.push(gp);
        }
        for i in e.indices("model.head.")? {
            let p = format!("model.head.{i}.");
            let label = e
                .take(&format!("{p}label_set"), |s: &str| Ok::<_, String>(s.to_string()))?
                .ok_or_else(|| NpgaError::config(format!("{p}label_set"), "required"))?;
            let partition = e
                .take(&format!("{p}partition"), parse_range)?
                .ok_or_else(|| NpgaError::config(format!("{p}partition"), "required"))?;
            let loss = e.take(&format!("{p}loss"), parse_loss)?.unwrap_or(HeadLoss::Softmax);
            m.lr_heads.push(HeadConfig {
                label_set: label,
                partition,
                loss,
            });
        }

        e.set("optimizer.minibatch_size", &mut m.minibatch_size)?;
        e.set("optimizer.cg_iters_per_batch", &mut m.cg_iters_per_batch)?;
        e.set("optimizer.epochs", &mut m.epochs)?;
        e.set("optimizer.initial_step", &mut m.cg.initial_step)?;
        e.set("optimizer.shrink", &mut m.cg.shrink)?;
        e.set("optimizer.sufficient_decrease", &mut m.cg.sufficient_decrease)?;
        e.set("optimizer.max_backtracks", &mut m.cg.max_backtracks)?;
        e.set("optimizer.restart_period", &mut m.cg.restart_period)?;
        e.set("optimizer.gradient_tolerance", &mut m.cg.gradient_tolerance)?;

        let d = &mut cfg.data;
        e.set("data.format", &mut d.format)?;
        let path = |s: &str| Ok::<_, String>(PathBuf::from(s));
        d.train = e.take("data.train", path)?;
        d.validation = e.take("data.validation", path)?;
        d.test = e.take("data.test", path)?;
        d.train_labels = e.take("data.train_labels", path)?;
        d.validation_labels = e.take("data.validation_labels", path)?;
        d.test_labels = e.take("data.test_labels", path)?;
        d.num_classes = e.take("data.num_classes", str::parse::<usize>)?;
        e.set("data.train_subsample", &mut d.train_subsample)?;
        if let Some(b) = e.take("data.stratify", parse_bool)? {
            d.stratify = b;
        }
        d.subsample_seed = e.take("data.subsample_seed", str::parse::<u64>)?;
        if let Some(b) = e.take("data.standardize", parse_bool)? {
            d.standardize = b;
        }
        e.set("data.validation_holdout", &mut d.validation_holdout)?;
        e.set("data.norb_downsample", &mut d.norb_downsample)?;
        if let Some(b) = e.take("data.norb_contrast_normalize", parse_bool)? {
            d.norb_contrast_normalize = b;
        }
        let s = &mut d.synth;
        e.set("data.synth.classes", &mut s.classes)?;
        e.set("data.synth.input_dim", &mut s.input_dim)?;
        e.set("data.synth.n_train", &mut s.n_train)?;
        e.set("data.synth.n_validation", &mut s.n_validation)?;
        e.set("data.synth.n_test", &mut s.n_test)?;
        e.set("data.synth.template_scale", &mut s.template_scale)?;
        e.set("data.synth.elevation_amplitude", &mut s.elevation_amplitude)?;
        e.set("data.synth.azimuth_amplitude", &mut s.azimuth_amplitude)?;
        if let Some(g) = e.take("data.synth.lighting_gains", parse_list)? {
            s.lighting_gains = g;
        }
        e.set("data.synth.noise_std", &mut s.noise_std)?;
        e.set("data.synth.seed", &mut s.seed)?;

        let p = &mut cfg.probe;
        e.set("probe.label_set", &mut p.label_set)?;
        e.set("probe.units", &mut p.units)?;
        e.set("probe.l2", &mut p.options.l2_strength)?;
        e.set("probe.max_iters", &mut p.options.budget.max_iters)?;
        e.set("probe.seed", &mut p.options.seed)?;

        let g = &mut cfg.grid;
        if let Some(v) = e.take("grid.alphas", parse_list)? {
            g.alphas = v;
        }
        if let Some(v) = e.take("grid.betas", parse_list)? {
            g.betas = v;
        }
        e.set("grid.repeats", &mut g.repeats)?;
        e.set("grid.threads", &mut g.threads)?;

        let c = &mut cfg.gradcheck;
        e.set("gradcheck.cases", &mut c.cases)?;
        e.set("gradcheck.coordinates", &mut c.coordinates)?;
        e.set("gradcheck.epsilon", &mut c.epsilon)?;
        e.set("gradcheck.tolerance", &mut c.tolerance)?;
        c.perturb = e
            .take("gradcheck.perturb", |s: &str| {
                if s == "none" {
                    Ok(None)
                } else {
                    s.parse::<Term>().map(Some)
                }
            })?
            .flatten();

        if let Some(key) = e.0.keys().next() {
            return Err(NpgaError::config(key.clone(), "unknown key"));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let g = &self.grid;
        for (name, list) in [("grid.alphas", &g.alphas), ("grid.betas", &g.betas)] {
            if list.is_empty() {
                return Err(NpgaError::config(name, "list must be nonempty"));
            }
            if let Some(v) = list.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(NpgaError::config(name, format!("{v} not in [0, 1]")));
            }
        }
        if g.repeats == 0 {
            return Err(NpgaError::config("grid.repeats", "must be positive"));
        }
        if !(self.probe.options.l2_strength >= 0.0) {
            return Err(NpgaError::config("probe.l2", "must be >= 0"));
        }
        if let ProbeUnits::Gp(i) = self.probe.units {
            if i >= self.model.gp_specs.len() {
                return Err(NpgaError::config("probe.units", format!("no GP spec {i}")));
            }
        }
        if self.data.format == DataFormat::Synth {
            self.data
                .synth
                .validate()
                .map_err(|e| NpgaError::config("data.synth", e.to_string()))?;
        } else if self.data.train.is_none() {
            return Err(NpgaError::config(
                "data.train",
                format!("required for format {}", self.data.format.name()),
            ));
        }
        if self.data.norb_downsample == 0 {
            return Err(NpgaError::config("data.norb_downsample", "must be positive"));
        }
        let c = &self.gradcheck;
        if c.cases == 0 || c.coordinates == 0 || !(c.epsilon > 0.0) || !(c.tolerance > 0.0) {
            return Err(NpgaError::config(
                "gradcheck",
                "cases, coordinates, epsilon and tolerance must be positive",
            ));
        }
        Ok(())
    }

    /// Every setting, defaults included, in the format `parse` reads.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            writeln!(s, "{k} = {v}").unwrap();
        };
        let m = &self.model;
        put("model.alpha", format!("{:?}", m.alpha));
        put("model.beta", format!("{:?}", m.beta));
        put("model.hidden_units", m.hidden_units.to_string());
        put("model.seed", m.seed.to_string());
        put("model.encode_mode", encode_mode_name(m.encode_mode).into());
        match m.corruption.scheme {
            CorruptionScheme::Gaussian => {
                put("model.corruption", "gaussian".into());
                put("model.corruption_level", format!("{:?}", m.corruption.gaussian_std));
            }
            CorruptionScheme::Mask => {
                put("model.corruption", "mask".into());
                put("model.corruption_level", format!("{:?}", m.corruption.mask_fraction));
            }
        }
        for (i, gp) in m.gp_specs.iter().enumerate() {
            let p = format!("model.gp.{i}.");
            put(&format!("{p}label_set"), gp.label_set.clone());
            put(
                &format!("{p}partition"),
                format!("{}..{}", gp.partition.start, gp.partition.end),
            );
            put(&format!("{p}latent_dim"), gp.latent_dim.to_string());
            put(&format!("{p}kernel"), gp.kernel.kind.name().into());
            put(&format!("{p}noise_variance"), format!("{:?}", gp.noise_variance));
            put(
                &format!("{p}signal_variance"),
                format!("{:?}", gp.kernel.signal_variance),
            );
            put(&format!("{p}lengthscale"), format!("{:?}", gp.kernel.lengthscale));
            put(&format!("{p}period"), format!("{:?}", gp.kernel.period));
            put(&format!("{p}input_weight"), format!("{:?}", gp.kernel.input_weight));
            put(&format!("{p}bias_weight"), format!("{:?}", gp.kernel.bias_weight));
        }
        for (i, h) in m.lr_heads.iter().enumerate() {
            let p = format!("model.head.{i}.");
            put(&format!("{p}label_set"), h.label_set.clone());
            put(
                &format!("{p}partition"),
                format!("{}..{}", h.partition.start, h.partition.end),
            );
            let loss = match h.loss {
                HeadLoss::Softmax => "softmax",
                HeadLoss::Squared => "squared",
            };
            put(&format!("{p}loss"), loss.into());
        }
        put("optimizer.minibatch_size", m.minibatch_size.to_string());
        put("optimizer.cg_iters_per_batch", m.cg_iters_per_batch.to_string());
        put("optimizer.epochs", m.epochs.to_string());
        put("optimizer.initial_step", format!("{:?}", m.cg.initial_step));
        put("optimizer.shrink", format!("{:?}", m.cg.shrink));
        put(
            "optimizer.sufficient_decrease",
            format!("{:?}", m.cg.sufficient_decrease),
        );
        put("optimizer.max_backtracks", m.cg.max_backtracks.to_string());
        put("optimizer.restart_period", m.cg.restart_period.to_string());
        put("optimizer.gradient_tolerance", format!("{:?}", m.cg.gradient_tolerance));

        let d = &self.data;
        put("data.format", d.format.name().into());
        let paths = [
            ("data.train", &d.train),
            ("data.validation", &d.validation),
            ("data.test", &d.test),
            ("data.train_labels", &d.train_labels),
            ("data.validation_labels", &d.validation_labels),
            ("data.test_labels", &d.test_labels),
        ];
        for (k, v) in paths {
            if let Some(p) = v {
                put(k, p.display().to_string());
            }
        }
        if let Some(c) = d.num_classes {
            put("data.num_classes", c.to_string());
        }
        put("data.train_subsample", d.train_subsample.to_string());
        put("data.stratify", d.stratify.to_string());
        if let Some(seed) = d.subsample_seed {
            put("data.subsample_seed", seed.to_string());
        }
        put("data.standardize", d.standardize.to_string());
        put("data.validation_holdout", d.validation_holdout.to_string());
        put("data.norb_downsample", d.norb_downsample.to_string());
        put("data.norb_contrast_normalize", d.norb_contrast_normalize.to_string());
        let sy = &d.synth;
        put("data.synth.classes", sy.classes.to_string());
        put("data.synth.input_dim", sy.input_dim.to_string());
        put("data.synth.n_train", sy.n_train.to_string());
        put("data.synth.n_validation", sy.n_validation.to_string());
        put("data.synth.n_test", sy.n_test.to_string());
        put("data.synth.template_scale", format!("{:?}", sy.template_scale));
        put(
            "data.synth.elevation_amplitude",
            format!("{:?}", sy.elevation_amplitude),
        );
        put("data.synth.azimuth_amplitude", format!("{:?}", sy.azimuth_amplitude));
        put("data.synth.lighting_gains", fmt_list(&sy.lighting_gains));
        put("data.synth.noise_std", format!("{:?}", sy.noise_std));
        put("data.synth.seed", sy.seed.to_string());

        let p = &self.probe;
        put("probe.label_set", p.label_set.clone());
        put("probe.units", p.units.to_string());
        put("probe.l2", format!("{:?}", p.options.l2_strength));
        put("probe.max_iters", p.options.budget.max_iters.to_string());
        put("probe.seed", p.options.seed.to_string());

        let g = &self.grid;
        put("grid.alphas", fmt_list(&g.alphas));
        put("grid.betas", fmt_list(&g.betas));
        put("grid.repeats", g.repeats.to_string());
        put("grid.threads", g.threads.to_string());

        let c = &self.gradcheck;
        put("gradcheck.cases", c.cases.to_string());
        put("gradcheck.coordinates", c.coordinates.to_string());
        put("gradcheck.epsilon", format!("{:?}", c.epsilon));
        put("gradcheck.tolerance", format!("{:?}", c.tolerance));
        put("gradcheck.perturb", c.perturb.map_or("none", Term::name).into());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn indexed_terms_parse_and_round_trip() {
        let text = "
            model.hidden_units = 12   # small
            model.gp.0.label_set = class
            model.gp.0.partition = 0..6
            model.gp.0.kernel = periodic
            model.gp.0.period = 360
            model.gp.1.label_set = elevation
            model.gp.1.partition = 6..12
            model.gp.1.latent_dim = 1
            model.head.0.label_set = class
            model.head.0.partition = 0..12
            model.corruption = mask
            grid.alphas = 0, 0.5
        ";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.model.gp_specs.len(), 2);
        assert_eq!(cfg.model.gp_specs[0].kernel.period, 360.0);
        assert_eq!(cfg.model.corruption, CorruptionSpec::mask(0.2));
        assert_eq!(cfg.grid.alphas, vec![0.0, 0.5]);
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn unknown_key_names_field() {
        match RunConfig::parse("model.alpah = 0.5") {
            Err(NpgaError::Config { field, .. }) => assert_eq!(field, "model.alpah"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_values_name_field() {
        match RunConfig::parse("model.alpha = 1.5") {
            Err(NpgaError::Config { field, .. }) => assert_eq!(field, "model.alpha"),
            other => panic!("{other:?}"),
        }
        match RunConfig::parse("model.hidden_units = lots") {
            Err(NpgaError::Config { field, .. }) => assert_eq!(field, "model.hidden_units"),
            other => panic!("{other:?}"),
        }
        match RunConfig::parse("grid.betas = 0, 2") {
            Err(NpgaError::Config { field, .. }) => assert_eq!(field, "grid.betas"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            RunConfig::parse("no equals sign"),
            Err(NpgaError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn gap_in_indices_rejected() {
        let text = "model.gp.1.label_set = class\nmodel.gp.1.partition = 0..2";
        assert!(matches!(RunConfig::parse(text), Err(NpgaError::Config { .. })));
    }
}
