//! Linear-probe evaluation of learned codes and latent-space export.

use std::fmt::Write as _;
use std::fs;
use std::ops::Range;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autoencoder::encode_batch;
use crate::data::{Dataset, LabelKind, Standardizer};
use crate::error::{NpgaError, Result};
use crate::guidance::{one_hot_classes, softmax_xent};
use crate::optimizer::{cg_minimize, CgOptions, TrainedModel};

/// Multinomial logistic regression on raw features.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeParams {
    /// M×F
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl ProbeParams {
    pub fn logits(&self, features: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = features * self.weights.transpose();
        for mut row in z.row_iter_mut() {
            row += self.bias.transpose();
        }
        z
    }

    /// Argmax class per row, ties to the lowest index.
    pub fn predict(&self, features: &DMatrix<f64>) -> Vec<usize> {
        self.logits(features)
            .row_iter()
            .map(|row| {
                let mut best = 0;
                for (c, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeOptions {
    pub l2_strength: f64,
    pub budget: CgOptions,
    pub seed: u64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions {
            l2_strength: 1e-4,
            budget: CgOptions {
                max_iters: 1000,
                gradient_tolerance: 1e-9,
                ..CgOptions::default()
            },
            seed: 0,
        }
    }
}

/// Fits a softmax probe minimising mean cross-entropy plus
/// `l2_strength·‖W‖²`.
///
/// Features are standardized internally (so the penalty acts on weights of
/// unit-variance features) and the map is folded back into the returned
/// weights, which therefore apply to raw features.
pub fn fit_probe(
    features: &DMatrix<f64>,
    one_hot: &DMatrix<f64>,
    l2_strength: f64,
    budget: &CgOptions,
    seed: u64,
) -> Result<ProbeParams> {
    let (n, f) = features.shape();
    let m = one_hot.ncols();
    if one_hot.nrows() != n {
        return Err(NpgaError::shape("probe labels", n, one_hot.nrows()));
    }
    if n == 0 || m == 0 {
        return Err(NpgaError::InvalidInput(
            "probe needs at least one example and one class".into(),
        ));
    }
    if !(l2_strength >= 0.0) {
        return Err(NpgaError::InvalidInput(format!(
            "l2 strength must be >= 0, got {l2_strength}"
        )));
    }
    let classes = one_hot_classes(one_hot)?;
    if classes.iter().all(|c| *c == classes[0]) {
        let mut bias = DVector::zeros(m);
        bias[classes[0]] = 1.0;
        return Ok(ProbeParams {
            weights: DMatrix::zeros(m, f),
            bias,
        });
    }

    let st = Standardizer::fit(features);
    let x = st.apply(features);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = DVector::from_fn(m * f + m, |_, _| rng.random_range(-0.01..0.01));
    let unflatten = |v: &DVector<f64>| {
        (
            DMatrix::from_row_slice(m, f, &v.as_slice()[..m * f]),
            DVector::from_column_slice(&v.as_slice()[m * f..]),
        )
    };
    let objective = |v: &DVector<f64>| -> Result<(f64, DVector<f64>)> {
        let (w, b) = unflatten(v);
        let probe = ProbeParams { weights: w, bias: b };
        let (ce, g) = softmax_xent(&probe.logits(&x), &classes);
        let gw = g.tr_mul(&x) + &probe.weights * (2.0 * l2_strength);
        let gb = DVector::from_iterator(m, g.column_iter().map(|c| c.sum()));
        let mut grad = Vec::with_capacity(m * f + m);
        for i in 0..m {
            grad.extend(gw.row(i).iter());
        }
        grad.extend(gb.iter());
        Ok((ce + l2_strength * probe.weights.norm_squared(), DVector::from_vec(grad)))
    };
    let out = cg_minimize(objective, x0, budget)?;
    let (w_std, b_std) = unflatten(&out.x);

    // fold standardization back into raw-feature weights
    let mut weights = DMatrix::zeros(m, f);
    let mut bias = b_std;
    for c in 0..m {
        for j in 0..f {
            let s = st.std[j];
            if s > 0.0 {
                weights[(c, j)] = w_std[(c, j)] / s;
                bias[c] -= w_std[(c, j)] * st.mean[j] / s;
            }
        }
    }
    Ok(ProbeParams { weights, bias })
}

/// Mean cross-entropy of `probe` on labelled features.
pub fn probe_cross_entropy(probe: &ProbeParams, features: &DMatrix<f64>, one_hot: &DMatrix<f64>) -> Result<f64> {
    let classes = one_hot_classes(one_hot)?;
    Ok(softmax_xent(&probe.logits(features), &classes).0)
}

/// Fraction of rows whose argmax prediction equals the class.
pub fn probe_accuracy(probe: &ProbeParams, features: &DMatrix<f64>, classes: &[usize]) -> Result<f64> {
    if features.nrows() != classes.len() {
        return Err(NpgaError::shape(
            "probe accuracy labels",
            features.nrows(),
            classes.len(),
        ));
    }
    if classes.is_empty() {
        return Ok(0.0);
    }
    let hits = probe
        .predict(features)
        .iter()
        .zip(classes)
        .filter(|(p, c)| p == c)
        .count();
    Ok(hits as f64 / classes.len() as f64)
}

/// Deterministic hidden codes of `dataset`, optionally restricted to a
/// range of hidden units.
pub fn hidden_features(model: &TrainedModel, dataset: &Dataset, units: Option<Range<usize>>) -> Result<DMatrix<f64>> {
    let p = model.unpack()?;
    let h = encode_batch(&dataset.features, &p.autoencoder)?;
    Ok(match units {
        None => h,
        Some(r) => {
            if r.end > h.ncols() || r.is_empty() {
                return Err(NpgaError::InvalidInput(format!(
                    "unit range {r:?} outside 0..{}",
                    h.ncols()
                )));
            }
            h.columns(r.start, r.len()).into_owned()
        }
    })
}

/// Latent coordinates plus label columns, ready for plotting.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTable {
    pub columns: Vec<String>,
    pub rows: DMatrix<f64>,
}

impl LatentTable {
    /// Tab-separated, one header row then one row per example.
    pub fn to_tsv(&self) -> String {
        let mut s = self.columns.join("\t");
        s.push('\n');
        for row in self.rows.row_iter() {
            let fields: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            writeln!(s, "{}", fields.join("\t")).unwrap();
        }
        s
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv())?;
        Ok(())
    }
}

/// Projects every example through the encoder and the projection of GP
/// spec `spec_index`.
///
/// Columns: `z0..z{H-1}`, then one column per label set in dataset order
/// (class index for discrete sets, `name.m` for multi-column real sets).
pub fn export_latent(dataset: &Dataset, model: &TrainedModel, spec_index: usize) -> Result<LatentTable> {
    if spec_index >= model.config.gp_specs.len() {
        return Err(NpgaError::InvalidInput(format!(
            "GP spec index {spec_index} out of range ({} specs)",
            model.config.gp_specs.len()
        )));
    }
    let p = model.unpack()?;
    let hidden = encode_batch(&dataset.features, &p.autoencoder)?;
    let latent = p.gp_spec(&model.config, spec_index).project(&hidden);
    let h = latent.ncols();
    let mut columns: Vec<String> = (0..h).map(|i| format!("z{i}")).collect();
    let mut blocks: Vec<DMatrix<f64>> = vec![latent];
    for ls in &dataset.label_sets {
        match ls.kind {
            LabelKind::Discrete { .. } => {
                let idx = ls.class_indices()?;
                columns.push(ls.name.clone());
                blocks.push(DMatrix::from_fn(idx.len(), 1, |i, _| idx[i] as f64));
            }
            _ if ls.values.ncols() == 1 => {
                columns.push(ls.name.clone());
                blocks.push(ls.values.clone());
            }
            _ => {
                columns.extend((0..ls.values.ncols()).map(|m| format!("{}.{m}", ls.name)));
                blocks.push(ls.values.clone());
            }
        }
    }
    let n = dataset.len();
    let width: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut rows = DMatrix::zeros(n, width);
    let mut at = 0;
    for b in blocks {
        rows.columns_mut(at, b.ncols()).copy_from(&b);
        at += b.ncols();
    }
    Ok(LatentTable { columns, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::one_hot;
    use rand_distr::{Distribution, StandardNormal};

    fn clusters(seed: u64, n: usize, sep: f64) -> (DMatrix<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = DMatrix::zeros(n, 2);
        let mut y = Vec::new();
        for i in 0..n {
            let c = i % 2;
            let zx: f64 = StandardNormal.sample(&mut rng);
            let zy: f64 = StandardNormal.sample(&mut rng);
            x[(i, 0)] = zx * 0.3 + if c == 0 { -sep } else { sep };
            x[(i, 1)] = zy * 0.3;
            y.push(c);
        }
        (x, y)
    }

    #[test]
    fn separable_clusters_fit_perfectly() {
        let (x, y) = clusters(1, 100, 3.0);
        let opts = ProbeOptions::default();
        let p = fit_probe(&x, &one_hot(&y, 2).unwrap(), opts.l2_strength, &opts.budget, 0).unwrap();
        assert_eq!(probe_accuracy(&p, &x, &y).unwrap(), 1.0);
    }

    #[test]
    fn heavy_regularisation_gives_uniform_predictions() {
        let (x, y) = clusters(2, 60, 1.0);
        let opts = ProbeOptions::default();
        let p = fit_probe(&x, &one_hot(&y, 2).unwrap(), 1e8, &opts.budget, 0).unwrap();
        assert!(p.weights.amax() < 1e-6, "{}", p.weights);
        let probs = crate::guidance::softmax_rows(&p.logits(&x));
        assert!(probs.iter().all(|v| (v - 0.5).abs() < 1e-3));
    }

    #[test]
    fn single_class_probe_predicts_it() {
        let x = DMatrix::from_fn(5, 3, |i, j| (i + j) as f64);
        let p = fit_probe(&x, &one_hot(&[2; 5], 4).unwrap(), 1e-4, &CgOptions::default(), 0).unwrap();
        assert_eq!(p.predict(&x), vec![2; 5]);
    }

    #[test]
    fn accuracy_counts_and_ties() {
        let constant = ProbeParams {
            weights: DMatrix::zeros(3, 1),
            bias: DVector::zeros(3),
        };
        let x = DMatrix::zeros(6, 1);
        assert!((probe_accuracy(&constant, &x, &[0, 1, 2, 0, 1, 2]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let perfect = ProbeParams {
            weights: DMatrix::from_row_slice(2, 1, &[-1.0, 1.0]),
            bias: DVector::zeros(2),
        };
        let x = DMatrix::from_row_slice(4, 1, &[-1.0, 2.0, -3.0, 0.5]);
        assert_eq!(probe_accuracy(&perfect, &x, &[0, 1, 0, 1]).unwrap(), 1.0);
    }

    #[test]
    fn accuracy_is_permutation_invariant() {
        let (x, y) = clusters(3, 40, 0.5);
        let opts = ProbeOptions::default();
        let p = fit_probe(&x, &one_hot(&y, 2).unwrap(), 1e-4, &opts.budget, 0).unwrap();
        let perm: Vec<usize> = (0..40).rev().collect();
        let xp = DMatrix::from_fn(40, 2, |i, j| x[(perm[i], j)]);
        let yp: Vec<usize> = perm.iter().map(|i| y[*i]).collect();
        assert_eq!(
            probe_accuracy(&p, &x, &y).unwrap(),
            probe_accuracy(&p, &xp, &yp).unwrap()
        );
    }

    #[test]
    fn seeds_agree_on_strictly_convex_objective() {
        let (x, y) = clusters(4, 80, 0.4);
        let labels = one_hot(&y, 2).unwrap();
        let opts = ProbeOptions::default();
        let a = fit_probe(&x, &labels, 1e-2, &opts.budget, 1).unwrap();
        let b = fit_probe(&x, &labels, 1e-2, &opts.budget, 2).unwrap();
        let ca = probe_cross_entropy(&a, &x, &labels).unwrap();
        let cb = probe_cross_entropy(&b, &x, &labels).unwrap();
        assert!((ca - cb).abs() < 1e-6, "{ca} vs {cb}");
    }

    #[test]
    fn scaling_features_keeps_accuracy() {
        let (x, y) = clusters(5, 80, 0.4);
        let labels = one_hot(&y, 2).unwrap();
        let opts = ProbeOptions::default();
        let a = fit_probe(&x, &labels, 1e-4, &opts.budget, 0).unwrap();
        let xs = &x * 7.5;
        let b = fit_probe(&xs, &labels, 1e-4, &opts.budget, 0).unwrap();
        assert_eq!(
            probe_accuracy(&a, &x, &y).unwrap(),
            probe_accuracy(&b, &xs, &y).unwrap()
        );
    }
}
