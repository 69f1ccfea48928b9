//! Datasets: features plus named label sets, and the transforms applied to
//! them before training.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{NpgaError, Result};

mod delimited;
pub mod norb;
mod synth;

pub use delimited::{load_delimited, read_dataset, write_dataset};
pub use synth::{nearest_template_accuracy, synth_multifactor, SynthConfig, SynthOutput};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LabelKind {
    /// One-hot rows over `classes` columns.
    Discrete {
        classes: usize,
    },
    Continuous,
    /// Angles in `[0, period)`.
    Periodic {
        period: f64,
    },
}

impl LabelKind {
    pub fn name(&self) -> &'static str {
        match self {
            LabelKind::Discrete { .. } => "discrete",
            LabelKind::Continuous => "continuous",
            LabelKind::Periodic { .. } => "periodic",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelSet {
    pub name: String,
    pub kind: LabelKind,
    /// N×M; one-hot for discrete sets.
    pub values: DMatrix<f64>,
}

impl LabelSet {
    pub fn discrete(name: impl Into<String>, classes: &[usize], num_classes: usize) -> Result<Self> {
        Ok(LabelSet {
            name: name.into(),
            kind: LabelKind::Discrete { classes: num_classes },
            values: one_hot(classes, num_classes)?,
        })
    }

    pub fn continuous(name: impl Into<String>, values: DMatrix<f64>) -> Self {
        LabelSet {
            name: name.into(),
            kind: LabelKind::Continuous,
            values,
        }
    }

    pub fn periodic(name: impl Into<String>, values: DMatrix<f64>, period: f64) -> Self {
        LabelSet {
            name: name.into(),
            kind: LabelKind::Periodic { period },
            values,
        }
    }

    /// Class index per row; only for discrete sets.
    pub fn class_indices(&self) -> Result<Vec<usize>> {
        match self.kind {
            LabelKind::Discrete { .. } => crate::guidance::one_hot_classes(&self.values),
            _ => Err(NpgaError::InvalidLabel(format!(
                "label set `{}` is {}, not discrete",
                self.name,
                self.kind.name()
            ))),
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.values.nrows() != n {
            return Err(NpgaError::shape("label set rows", n, self.values.nrows()));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(NpgaError::InvalidLabel(format!(
                "label set `{}` has non-finite values",
                self.name
            )));
        }
        match self.kind {
            LabelKind::Discrete { classes } => {
                if self.values.ncols() != classes {
                    return Err(NpgaError::shape("discrete label columns", classes, self.values.ncols()));
                }
                self.class_indices()?;
            }
            LabelKind::Periodic { period } => {
                if !(period.is_finite() && period > 0.0) {
                    return Err(NpgaError::InvalidLabel(format!(
                        "label set `{}` has bad period {period}",
                        self.name
                    )));
                }
                if let Some(v) = self.values.iter().find(|v| !(0.0..period).contains(*v)) {
                    return Err(NpgaError::InvalidLabel(format!(
                        "periodic label `{}` value {v} outside [0, {period})",
                        self.name
                    )));
                }
            }
            LabelKind::Continuous => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = NpgaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(NpgaError::InvalidInput(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// N×K, one example per row.
    pub features: DMatrix<f64>,
    pub label_sets: Vec<LabelSet>,
    pub split: Split,
}

impl Dataset {
    /// Builds a dataset, checking every invariant.
    pub fn new(features: DMatrix<f64>, label_sets: Vec<LabelSet>, split: Split) -> Result<Self> {
        let ds = Dataset {
            features,
            label_sets,
            split,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(NpgaError::InvalidInput("dataset features must be finite".into()));
        }
        for (i, ls) in self.label_sets.iter().enumerate() {
            if self.label_sets[..i].iter().any(|o| o.name == ls.name) {
                return Err(NpgaError::InvalidLabel(format!("duplicate label set `{}`", ls.name)));
            }
            ls.validate(self.len())?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn label_set(&self, name: &str) -> Result<&LabelSet> {
        self.label_sets
            .iter()
            .find(|l| l.name == name)
            .ok_or_else(|| NpgaError::InvalidLabel(format!("dataset has no label set `{name}`")))
    }

    pub fn class_indices(&self, name: &str) -> Result<Vec<usize>> {
        self.label_set(name)?.class_indices()
    }

    /// New dataset made of the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: select(&self.features, rows),
            label_sets: self
                .label_sets
                .iter()
                .map(|l| LabelSet {
                    name: l.name.clone(),
                    kind: l.kind,
                    values: select(&l.values, rows),
                })
                .collect(),
            split: self.split,
        }
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }
}

pub(crate) fn select(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

pub fn one_hot(classes: &[usize], num_classes: usize) -> Result<DMatrix<f64>> {
    if let Some((row, c)) = classes.iter().enumerate().find(|(_, c)| **c >= num_classes) {
        return Err(NpgaError::InvalidLabel(format!(
            "row {row}: class {c} out of range for {num_classes} classes"
        )));
    }
    Ok(DMatrix::from_fn(classes.len(), num_classes, |i, j| {
        if classes[i] == j {
            1.0
        } else {
            0.0
        }
    }))
}

/// Per-feature affine map fitted on a training set.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: DVector<f64>,
    /// Zero for constant columns, which map to 0.
    pub std: DVector<f64>,
}

impl Standardizer {
    pub fn fit(features: &DMatrix<f64>) -> Self {
        let n = features.nrows().max(1) as f64;
        let mean = DVector::from_iterator(features.ncols(), features.column_iter().map(|c| c.sum() / n));
        let std = DVector::from_iterator(
            features.ncols(),
            features.column_iter().zip(mean.iter()).map(|(c, m)| {
                let var = c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
                let s = var.sqrt();
                if s > 1e-12 * m.abs().max(1.0) {
                    s
                } else {
                    0.0
                }
            }),
        );
        Standardizer { mean, std }
    }

    pub fn apply(&self, features: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(features.nrows(), features.ncols(), |i, j| {
            let s = self.std[j];
            if s == 0.0 {
                0.0
            } else {
                (features[(i, j)] - self.mean[j]) / s
            }
        })
    }

    pub fn inverse(&self, standardized: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(standardized.nrows(), standardized.ncols(), |i, j| {
            standardized[(i, j)] * self.std[j] + self.mean[j]
        })
    }
}

/// Standardizes `train` features and applies the same map to `others`.
pub fn standardize(train: &Dataset, others: &[Dataset]) -> (Dataset, Vec<Dataset>, Standardizer) {
    let st = Standardizer::fit(&train.features);
    let map = |d: &Dataset| Dataset {
        features: st.apply(&d.features),
        ..d.clone()
    };
    let t = map(train);
    let o = others.iter().map(map).collect();
    (t, o, st)
}

/// Draws `n` rows. With `stratify_by`, each class of that discrete label set
/// contributes in proportion to its frequency (largest-remainder rounding).
pub fn subsample(dataset: &Dataset, n: usize, seed: u64, stratify_by: Option<&str>) -> Result<Dataset> {
    let rows = subsample_indices(dataset, n, seed, stratify_by)?;
    Ok(dataset.select_rows(&rows))
}

pub fn subsample_indices(dataset: &Dataset, n: usize, seed: u64, stratify_by: Option<&str>) -> Result<Vec<usize>> {
    let total = dataset.len();
    if n > total {
        return Err(NpgaError::InvalidInput(format!(
            "cannot subsample {n} rows from {total}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = match stratify_by {
        None => {
            let mut idx: Vec<usize> = (0..total).collect();
            idx.shuffle(&mut rng);
            idx.truncate(n);
            idx
        }
        Some(name) => {
            let classes = dataset.class_indices(name)?;
            let num = classes.iter().max().map_or(0, |m| m + 1);
            let mut groups: Vec<Vec<usize>> = vec![Vec::new(); num];
            for (i, c) in classes.iter().enumerate() {
                groups[*c].push(i);
            }
            let exact: Vec<f64> = groups
                .iter()
                .map(|g| n as f64 * g.len() as f64 / total as f64)
                .collect();
            let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
            let mut remaining = n - quota.iter().sum::<usize>();
            let mut order: Vec<usize> = (0..num).collect();
            order.sort_by(|a, b| {
                let fa = exact[*a] - exact[*a].floor();
                let fb = exact[*b] - exact[*b].floor();
                fb.partial_cmp(&fa).unwrap().then(a.cmp(b))
            });
            for c in order {
                if remaining == 0 {
                    break;
                }
                if quota[c] < groups[c].len() {
                    quota[c] += 1;
                    remaining -= 1;
                }
            }
            let mut out = Vec::with_capacity(n);
            for (g, q) in groups.iter_mut().zip(&quota) {
                g.shuffle(&mut rng);
                out.extend_from_slice(&g[..*q]);
            }
            out
        }
    };
    picked.shuffle(&mut rng);
    Ok(picked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn balanced(n_per: usize, classes: usize) -> Dataset {
        let labels: Vec<usize> = (0..n_per * classes).map(|i| i % classes).collect();
        let features = DMatrix::from_fn(labels.len(), 2, |i, j| (i * 2 + j) as f64);
        Dataset::new(
            features,
            vec![LabelSet::discrete("class", &labels, classes).unwrap()],
            Split::Train,
        )
        .unwrap()
    }

    #[test]
    fn one_hot_examples() {
        assert_eq!(
            one_hot(&[2], 3).unwrap(),
            DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0])
        );
        assert_eq!(one_hot(&[0, 1], 2).unwrap(), DMatrix::identity(2, 2));
        assert!(matches!(one_hot(&[3], 3), Err(NpgaError::InvalidLabel(_))));
    }

    proptest! {
        #[test]
        fn one_hot_round_trips(v in proptest::collection::vec(0usize..7, 1..40)) {
            let oh = one_hot(&v, 7).unwrap();
            for row in oh.row_iter() {
                prop_assert_eq!(row.sum(), 1.0);
            }
            prop_assert_eq!(crate::guidance::one_hot_classes(&oh).unwrap(), v);
        }
    }

    #[test]
    fn standardize_moments_and_inverse() {
        let train = Dataset::new(
            DMatrix::from_row_slice(4, 3, &[1.0, 5.0, 2.0, 2.0, 5.0, -1.0, 3.0, 5.0, 7.0, 10.0, 5.0, 0.5]),
            vec![],
            Split::Train,
        )
        .unwrap();
        let test = Dataset::new(
            DMatrix::from_row_slice(2, 3, &[0.3, 5.0, 9.0, -4.0, 5.0, 1.0]),
            vec![],
            Split::Test,
        )
        .unwrap();
        let (t, others, st) = standardize(&train, &[test.clone()]);
        for j in [0, 2] {
            let c = t.features.column(j);
            let mean = c.sum() / 4.0;
            let var = c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-10);
            assert!((var.sqrt() - 1.0).abs() < 1e-10);
        }
        assert!(t.features.column(1).iter().all(|v| *v == 0.0));
        let back = st.inverse(&others[0].features);
        for (a, b) in back.iter().zip(test.features.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn subsample_full_is_permutation() {
        let d = balanced(5, 3);
        let mut idx = subsample_indices(&d, 15, 1, None).unwrap();
        idx.sort();
        assert_eq!(idx, (0..15).collect::<Vec<_>>());
    }

    #[test]
    fn stratified_exact_quota() {
        let d = balanced(333, 3);
        let s = subsample(&d, 99, 4, Some("class")).unwrap();
        let counts = s.class_indices("class").unwrap().iter().fold([0; 3], |mut acc, c| {
            acc[*c] += 1;
            acc
        });
        assert_eq!(counts, [33, 33, 33]);
    }

    #[test]
    fn stratified_within_one_of_proportion() {
        let labels: Vec<usize> = (0..100)
            .map(|i| {
                if i < 50 {
                    0
                } else if i < 80 {
                    1
                } else {
                    2
                }
            })
            .collect();
        let d = Dataset::new(
            DMatrix::zeros(100, 1),
            vec![LabelSet::discrete("class", &labels, 3).unwrap()],
            Split::Train,
        )
        .unwrap();
        let s = subsample(&d, 17, 2, Some("class")).unwrap();
        let c = s.class_indices("class").unwrap();
        for (class, frac) in [(0, 0.5), (1, 0.3), (2, 0.2)] {
            let got = c.iter().filter(|v| **v == class).count() as f64;
            assert!((got - 17.0 * frac).abs() <= 1.0);
        }
    }

    #[test]
    fn subsample_is_deterministic_and_bounded() {
        let d = balanced(10, 2);
        assert_eq!(
            subsample_indices(&d, 7, 42, Some("class")).unwrap(),
            subsample_indices(&d, 7, 42, Some("class")).unwrap()
        );
        assert!(subsample(&d, 21, 0, None).is_err());
    }

    #[test]
    fn invariants_checked_on_construction() {
        let bad_rows = LabelSet::continuous("e", DMatrix::zeros(3, 1));
        assert!(Dataset::new(DMatrix::zeros(2, 2), vec![bad_rows], Split::Train).is_err());
        let bad_period = LabelSet::periodic("a", DMatrix::from_element(2, 1, 7.0), 6.0);
        assert!(Dataset::new(DMatrix::zeros(2, 2), vec![bad_period], Split::Train).is_err());
        let not_one_hot = LabelSet {
            name: "c".into(),
            kind: LabelKind::Discrete { classes: 2 },
            values: DMatrix::from_element(2, 2, 0.5),
        };
        assert!(Dataset::new(DMatrix::zeros(2, 2), vec![not_one_hot], Split::Train).is_err());
    }
}
