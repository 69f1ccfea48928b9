use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;

use super::checkpoint::{read_checkpoint, write_checkpoint};
use super::config::{DataFormat, ProbeUnits, RunConfig};
use super::gradcheck::{run_gradcheck, TermReport};
use crate::data::norb::{contrast_normalize, downsample, load_norb};
use crate::data::{
    load_delimited, one_hot, read_dataset, standardize, subsample_indices, synth_multifactor, write_dataset, Dataset,
    LabelKind, Split,
};
use crate::error::{NpgaError, Result};
use crate::eval::{export_latent, fit_probe, hidden_features, probe_accuracy};
use crate::objective::TargetEncoder;
use crate::optimizer::{train, TrainOutcome, TrainedModel};

/// Training data plus whichever held-out splits are configured.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub validation: Option<Dataset>,
    pub test: Option<Dataset>,
}

impl Splits {
    pub fn get(&self, split: Split) -> Option<&Dataset> {
        match split {
            Split::Train => Some(&self.train),
            Split::Validation => self.validation.as_ref(),
            Split::Test => self.test.as_ref(),
        }
    }
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn load_one(cfg: &RunConfig, path: &Path, labels: Option<&PathBuf>, split: Split) -> Result<Dataset> {
    let d = &cfg.data;
    let ds = match d.format {
        DataFormat::Npga => read_dataset(path)?,
        DataFormat::Delimited => {
            let labels = labels
                .ok_or_else(|| NpgaError::config(format!("data.{split}_labels"), "required for delimited data"))?;
            load_delimited(path, labels, d.num_classes)?
        }
        DataFormat::Norb => {
            let mut ds = load_norb(
                &with_suffix(path, "-dat.mat"),
                &with_suffix(path, "-cat.mat"),
                &with_suffix(path, "-info.mat"),
            )?;
            if d.norb_contrast_normalize {
                ds.features = contrast_normalize(&ds.features);
            }
            if d.norb_downsample > 1 {
                let side = ((ds.input_dim() / 2) as f64).sqrt().round() as usize;
                ds.features = downsample(&ds.features, 2, side, d.norb_downsample)?;
            }
            ds
        }
        DataFormat::Synth => unreachable!("synthetic data is generated, not loaded"),
    };
    Ok(ds.with_split(split))
}

/// Loads or generates the data, subsamples and splits the training set,
/// and standardizes with training statistics, as configured. `seed` is the
/// run seed, used for subsampling unless `data.subsample_seed` is set.
pub fn load_splits(cfg: &RunConfig, seed: u64) -> Result<Splits> {
    let d = &cfg.data;
    let (mut train, mut validation, mut test) = match d.format {
        DataFormat::Synth => {
            let out = synth_multifactor(&d.synth)?;
            let val = (!out.validation.is_empty()).then_some(out.validation);
            let test = (!out.test.is_empty()).then_some(out.test);
            (out.train, val, test)
        }
        _ => {
            let train_path = d
                .train
                .as_ref()
                .ok_or_else(|| NpgaError::config("data.train", "required"))?;
            let train = load_one(cfg, train_path, d.train_labels.as_ref(), Split::Train)?;
            let val = d
                .validation
                .as_ref()
                .map(|p| load_one(cfg, p, d.validation_labels.as_ref(), Split::Validation))
                .transpose()?;
            let test = d
                .test
                .as_ref()
                .map(|p| load_one(cfg, p, d.test_labels.as_ref(), Split::Test))
                .transpose()?;
            (train, val, test)
        }
    };
    let sub_seed = d.subsample_seed.unwrap_or(seed);
    let stratify = d.stratify.then_some(cfg.probe.label_set.as_str());
    if validation.is_none() && d.validation_holdout > 0 {
        let order = subsample_indices(&train, train.len(), sub_seed ^ 0x5eed, None)?;
        if d.validation_holdout >= train.len() {
            return Err(NpgaError::config(
                "data.validation_holdout",
                "must leave training examples",
            ));
        }
        let (held, kept) = order.split_at(d.validation_holdout);
        validation = Some(train.select_rows(held).with_split(Split::Validation));
        train = train.select_rows(kept);
    }
    if d.train_subsample > 0 {
        let rows = subsample_indices(&train, d.train_subsample, sub_seed, stratify)?;
        train = train.select_rows(&rows);
    }
    if d.standardize {
        let mut others = Vec::new();
        others.extend(validation.iter().cloned());
        others.extend(test.iter().cloned());
        let (t, o, _) = standardize(&train, &others);
        let mut o = o.into_iter();
        train = t;
        validation = validation.map(|_| o.next().unwrap());
        test = test.map(|_| o.next().unwrap());
    }
    Ok(Splits {
        train,
        validation,
        test,
    })
}

/// Ordered `(key, value)` metrics.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Metrics(pub Vec<(String, f64)>);

impl Metrics {
    pub fn get(&self, key: &str) -> Option<f64> {
        self.0.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    fn push(&mut self, key: impl Into<String>, v: f64) {
        self.0.push((key.into(), v));
    }

    /// One `key<TAB>value` line per metric.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.0 {
            writeln!(s, "{k}\t{v:?}").unwrap();
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let (k, v) = l
                    .split_once('\t')
                    .ok_or_else(|| NpgaError::Format(format!("bad metrics line `{l}`")))?;
                let v = v
                    .parse()
                    .map_err(|_| NpgaError::Format(format!("bad metric value `{v}`")))?;
                Ok((k.to_string(), v))
            })
            .collect::<Result<Vec<_>>>()
            .map(Metrics)
    }
}

fn probe_units(cfg: &RunConfig, units: &ProbeUnits) -> Option<std::ops::Range<usize>> {
    match units {
        ProbeUnits::All => None,
        ProbeUnits::Gp(i) => Some(cfg.model.gp_specs[*i].partition.clone()),
        ProbeUnits::Range(r) => Some(r.clone()),
    }
}

/// Probe accuracies `(train, validation, test)` of a probe trained on the
/// training codes of the selected units.
pub fn probe_split_accuracies(
    model: &TrainedModel,
    splits: &Splits,
    cfg: &RunConfig,
    units: &ProbeUnits,
) -> Result<(f64, Option<f64>, Option<f64>)> {
    let label = &cfg.probe.label_set;
    let ls = splits.train.label_set(label)?;
    let LabelKind::Discrete { classes } = ls.kind else {
        return Err(NpgaError::config(
            "probe.label_set",
            format!("`{label}` is not a discrete label set"),
        ));
    };
    let range = probe_units(cfg, units);
    let feats = hidden_features(model, &splits.train, range.clone())?;
    let train_classes = splits.train.class_indices(label)?;
    let opts = &cfg.probe.options;
    let probe = fit_probe(
        &feats,
        &one_hot(&train_classes, classes)?,
        opts.l2_strength,
        &opts.budget,
        opts.seed,
    )?;
    let acc = |ds: &Dataset| -> Result<f64> {
        let f = hidden_features(model, ds, range.clone())?;
        probe_accuracy(&probe, &f, &ds.class_indices(label)?)
    };
    let train_acc = probe_accuracy(&probe, &feats, &train_classes)?;
    let val = splits.validation.as_ref().map(acc).transpose()?;
    let test = splits.test.as_ref().map(acc).transpose()?;
    Ok((train_acc, val, test))
}

/// Probe metrics for the configured units, then the test accuracy of a
/// probe on each GP partition separately.
pub fn evaluate_model(model: &TrainedModel, splits: &Splits, cfg: &RunConfig) -> Result<Metrics> {
    let mut m = Metrics::default();
    let (train_acc, val, test) = probe_split_accuracies(model, splits, cfg, &cfg.probe.units)?;
    m.push("train_accuracy", train_acc);
    if let Some(v) = val {
        m.push("val_accuracy", v);
    }
    if let Some(t) = test {
        m.push("test_accuracy", t);
        m.push("test_error", 1.0 - t);
    }
    for (i, gp) in cfg.model.gp_specs.iter().enumerate() {
        let (tr, _, te) = probe_split_accuracies(model, splits, cfg, &ProbeUnits::Gp(i))?;
        let key = format!("partition.{i}.{}", gp.label_set);
        m.push(format!("{key}.train_accuracy"), tr);
        if let Some(t) = te {
            m.push(format!("{key}.test_accuracy"), t);
        }
    }
    Ok(m)
}

/// Trace rows: `epoch minibatch iteration cost`.
pub fn trace_to_text(outcome: &TrainOutcome) -> String {
    let mut s = String::from("epoch\tminibatch\titeration\tcost\n");
    for r in &outcome.trace {
        writeln!(s, "{}\t{}\t{}\t{:?}", r.epoch, r.minibatch, r.iteration, r.cost).unwrap();
    }
    s
}

pub struct TrainArtifacts {
    pub outcome: TrainOutcome,
    pub metrics: Metrics,
}

fn prepare_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    Ok(())
}

/// Trains, then writes `config.txt`, `checkpoint.txt`, `trace.tsv` and
/// `metrics.tsv` into `out`.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<TrainArtifacts> {
    cfg.validate()?;
    prepare_out(out)?;
    fs::write(out.join("config.txt"), cfg.to_text())?;
    let splits = load_splits(cfg, cfg.model.seed)?;
    let outcome = train(&splits.train, &cfg.model, None)?;
    write_checkpoint(
        &out.join("checkpoint.txt"),
        &outcome.model.layout,
        &outcome.model.params,
    )?;
    fs::write(out.join("trace.tsv"), trace_to_text(&outcome))?;
    let mut metrics = evaluate_model(&outcome.model, &splits, cfg)?;
    metrics.push("final_cost", outcome.batches.last().map_or(f64::NAN, |b| b.end_cost));
    metrics.push("degraded_batches", outcome.degraded_batches() as f64);
    fs::write(out.join("metrics.tsv"), metrics.to_text())?;
    Ok(TrainArtifacts { outcome, metrics })
}

/// Rebuilds a trained model from a checkpoint written under `cfg`.
pub fn load_model(cfg: &RunConfig, splits: &Splits, checkpoint: &Path) -> Result<TrainedModel> {
    let (layout, params) = read_checkpoint(checkpoint)?;
    let expected = cfg.model.layout_for(&splits.train)?;
    if layout != expected {
        return Err(NpgaError::Layout(format!(
            "checkpoint layout {layout:?} does not match the configured model {expected:?}"
        )));
    }
    Ok(TrainedModel {
        config: cfg.model.clone(),
        layout,
        params,
        targets: TargetEncoder::fit(&splits.train, &cfg.model)?,
    })
}

/// Probes an existing checkpoint and writes `metrics.tsv`.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, out: &Path) -> Result<Metrics> {
    cfg.validate()?;
    prepare_out(out)?;
    let splits = load_splits(cfg, cfg.model.seed)?;
    let model = load_model(cfg, &splits, checkpoint)?;
    let metrics = evaluate_model(&model, &splits, cfg)?;
    fs::write(out.join("metrics.tsv"), metrics.to_text())?;
    Ok(metrics)
}

/// Writes the synthetic splits as `train.tsv`, `validation.tsv`, `test.tsv`
/// plus `synth_info.tsv` holding the nearest-template test accuracy.
pub fn cmd_gen_synth(cfg: &RunConfig, out: &Path) -> Result<f64> {
    cfg.data.synth.validate()?;
    prepare_out(out)?;
    let gen = synth_multifactor(&cfg.data.synth)?;
    write_dataset(&gen.train, &out.join("train.tsv"))?;
    write_dataset(&gen.validation, &out.join("validation.tsv"))?;
    write_dataset(&gen.test, &out.join("test.tsv"))?;
    fs::write(
        out.join("synth_info.tsv"),
        format!("nearest_template_test_accuracy\t{:?}\n", gen.ceiling),
    )?;
    fs::write(out.join("config.txt"), cfg.to_text())?;
    Ok(gen.ceiling)
}

/// Exports latent coordinates of GP spec `spec` for one split.
pub fn cmd_export_latent(cfg: &RunConfig, checkpoint: &Path, spec: usize, split: Split, out: &Path) -> Result<()> {
    cfg.validate()?;
    let splits = load_splits(cfg, cfg.model.seed)?;
    let model = load_model(cfg, &splits, checkpoint)?;
    let ds = splits
        .get(split)
        .ok_or_else(|| NpgaError::InvalidInput(format!("no {split} split configured")))?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    export_latent(ds, &model, spec)?.write_tsv(out)
}

/// One grid cell's result.
#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub alpha_index: usize,
    pub beta_index: usize,
    pub alpha: f64,
    pub beta: f64,
    pub repeat: usize,
    pub seed: u64,
    /// `Err` holds the message of a failed cell.
    pub test_error: std::result::Result<f64, String>,
}

impl GridRow {
    pub const HEADER: &'static str = "alpha\tbeta\trepeat\tseed\ttest_error\tstatus";

    pub fn line(&self) -> String {
        match &self.test_error {
            Ok(e) => format!(
                "{:?}\t{:?}\t{}\t{}\t{e:?}\tok",
                self.alpha, self.beta, self.repeat, self.seed
            ),
            Err(msg) => format!(
                "{:?}\t{:?}\t{}\t{}\tNaN\terror: {}",
                self.alpha,
                self.beta,
                self.repeat,
                self.seed,
                msg.replace(['\t', '\n'], " ")
            ),
        }
    }
}

/// Mean over repeats of one (α, β) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSummaryRow {
    pub alpha: f64,
    pub beta: f64,
    pub mean_test_error: f64,
    pub completed: usize,
    pub failed: usize,
}

pub fn summarize_grid(rows: &[GridRow]) -> Vec<GridSummaryRow> {
    let mut out: Vec<GridSummaryRow> = Vec::new();
    let mut sums: Vec<f64> = Vec::new();
    let mut keys: Vec<(usize, usize)> = Vec::new();
    for r in rows {
        let key = (r.alpha_index, r.beta_index);
        let pos = keys.iter().position(|k| *k == key).unwrap_or_else(|| {
            keys.push(key);
            sums.push(0.0);
            out.push(GridSummaryRow {
                alpha: r.alpha,
                beta: r.beta,
                mean_test_error: f64::NAN,
                completed: 0,
                failed: 0,
            });
            keys.len() - 1
        });
        match r.test_error {
            Ok(e) => {
                sums[pos] += e;
                out[pos].completed += 1;
            }
            Err(_) => out[pos].failed += 1,
        }
    }
    for (row, sum) in out.iter_mut().zip(sums) {
        if row.completed > 0 {
            row.mean_test_error = sum / row.completed as f64;
        }
    }
    out
}

pub fn summary_to_text(rows: &[GridSummaryRow]) -> String {
    let mut s = String::from("alpha\tbeta\tmean_test_error\tcompleted\tfailed\n");
    for r in rows {
        writeln!(
            s,
            "{:?}\t{:?}\t{:?}\t{}\t{}",
            r.alpha, r.beta, r.mean_test_error, r.completed, r.failed
        )
        .unwrap();
    }
    s
}

fn run_cell(cfg: &RunConfig, alpha: f64, beta: f64, seed: u64) -> Result<f64> {
    let mut c = cfg.clone();
    c.model.alpha = alpha;
    c.model.beta = beta;
    c.model.seed = seed;
    let splits = load_splits(&c, seed)?;
    let outcome = train(&splits.train, &c.model, None)?;
    let (_, _, test) = probe_split_accuracies(&outcome.model, &splits, &c, &c.probe.units)?;
    let t = test.ok_or_else(|| NpgaError::config("data.test", "grid runs need a test split"))?;
    Ok(1.0 - t)
}

/// Runs every (α, β, repeat) cell; repeat `r` uses seed `model.seed + r`.
///
/// Finished cells are appended to `grid_partial.tsv` as they complete.
/// At the end `grid.tsv` holds all rows in (α, β, repeat) order and
/// `grid_summary.tsv` the mean test error per (α, β).
pub fn cmd_grid(cfg: &RunConfig, out: &Path) -> Result<(Vec<GridRow>, Vec<GridSummaryRow>)> {
    cfg.validate()?;
    prepare_out(out)?;
    fs::write(out.join("config.txt"), cfg.to_text())?;
    let g = &cfg.grid;
    let mut cells = Vec::new();
    for (ai, a) in g.alphas.iter().enumerate() {
        for (bi, b) in g.betas.iter().enumerate() {
            for r in 0..g.repeats {
                cells.push((ai, bi, *a, *b, r));
            }
        }
    }
    let partial = Mutex::new(File::create(out.join("grid_partial.tsv"))?);
    writeln!(partial.lock().unwrap(), "{}", GridRow::HEADER)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(g.threads)
        .build()
        .map_err(|e| NpgaError::InvalidInput(format!("cannot start worker pool: {e}")))?;
    let rows: Vec<GridRow> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(ai, bi, alpha, beta, repeat)| {
                let seed = cfg.model.seed.wrapping_add(repeat as u64);
                let row = GridRow {
                    alpha_index: ai,
                    beta_index: bi,
                    alpha,
                    beta,
                    repeat,
                    seed,
                    test_error: run_cell(cfg, alpha, beta, seed).map_err(|e| e.to_string()),
                };
                let mut f = partial.lock().unwrap();
                // best effort: the final table is written regardless
                let _ = writeln!(f, "{}", row.line()).and_then(|_| f.flush());
                row
            })
            .collect()
    });
    let mut text = format!("{}\n", GridRow::HEADER);
    for r in &rows {
        writeln!(text, "{}", r.line()).unwrap();
    }
    fs::write(out.join("grid.tsv"), text)?;
    let summary = summarize_grid(&rows);
    fs::write(out.join("grid_summary.tsv"), summary_to_text(&summary))?;
    Ok((rows, summary))
}

/// Parses `grid.tsv` back into rows (indices are recomputed from order of
/// first appearance).
pub fn parse_grid_rows(text: &str) -> Result<Vec<(f64, f64, usize, u64, Option<f64>)>> {
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            if f.len() < 6 {
                return Err(NpgaError::Format(format!("bad grid row `{l}`")));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| NpgaError::Format(format!("bad number `{s}`")))
            };
            let err = if f[5] == "ok" { Some(num(f[4])?) } else { None };
            Ok((
                num(f[0])?,
                num(f[1])?,
                f[2].parse().map_err(|_| NpgaError::Format("bad repeat".into()))?,
                f[3].parse().map_err(|_| NpgaError::Format("bad seed".into()))?,
                err,
            ))
        })
        .collect()
}

/// Runs the finite-difference suites and writes `gradcheck.txt`.
pub fn cmd_gradcheck(cfg: &RunConfig, out: Option<&Path>) -> Result<Vec<TermReport>> {
    let reports = run_gradcheck(&cfg.gradcheck, cfg.model.seed)?;
    if let Some(dir) = out {
        prepare_out(dir)?;
        let text: String = reports.iter().map(|r| format!("{}\n", r.line())).collect();
        fs::write(dir.join("gradcheck.txt"), text)?;
    }
    Ok(reports)
}
