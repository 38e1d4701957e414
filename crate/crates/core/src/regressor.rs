//! Yield regression from per-tree records: one-hot / standardization
//! preprocessing fitted on training data only, a small feed-forward network
//! trained by gradient descent with momentum, 10-fold cross-validation with
//! paired t-tests, and the counting-ratio record filter.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RegressorError {
    #[error("column '{0}' has zero variance on the training split")]
    ZeroVariance(String),
    #[error("training diverged: non-finite loss at epoch {0}")]
    NonFiniteLoss(usize),
    #[error("need at least {k} records for {k}-fold cross-validation, got {n}")]
    TooFewRecords { k: usize, n: usize },
    #[error("features and targets disagree in length or are empty")]
    ShapeMismatch,
    #[error("r2 needs at least 2 values")]
    TooFewValues,
}

/// One tree of the yield table. `f1..f4` are manually counted fruits per
/// flowering; `cbyt_a` / `cbyt_b` the tracker counts for the two sides.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeRecord {
    pub id: String,
    pub sector: String,
    pub region: String,
    pub var_group: String,
    pub variety: String,
    pub age_group: String,
    pub f1: u32,
    pub f2: u32,
    pub f3: u32,
    pub f4: u32,
    pub h: Option<f64>,
    pub w: Option<f64>,
    pub d: Option<f64>,
    pub cbyt_a: Option<u32>,
    pub cbyt_b: Option<u32>,
}

impl TreeRecord {
    /// Regression target: fruits from the first three flowerings.
    pub fn target(&self) -> f64 {
        (self.f1 + self.f2 + self.f3) as f64
    }

    /// All fields the regressor needs are present and positive.
    pub fn is_complete(&self) -> bool {
        let dim_ok = |v: Option<f64>| v.map(|x| x > 0.0 && x.is_finite()).unwrap_or(false);
        dim_ok(self.h) && dim_ok(self.w) && dim_ok(self.d) && self.cbyt_a.is_some() && self.cbyt_b.is_some()
    }

    pub fn counting_ratio(&self) -> Option<f64> {
        let total = self.f1 + self.f2 + self.f3;
        if total == 0 {
            return None;
        }
        Some((self.cbyt_a? + self.cbyt_b?) as f64 / total as f64)
    }
}

pub const TREE_CSV_HEADER: &str = "ID,Sector,Region,VarG,Var,AG,F1,F2,F3,F4,H,W,D,CbyT-A,CbyT-B";

pub fn parse_tree_records(text: &str, path_label: &str) -> Result<Vec<TreeRecord>, crate::io::IoFormatError> {
    let err = |line: usize, msg: String| crate::io::IoFormatError::Parse {
        path: path_label.to_string(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    if header.trim() != TREE_CSV_HEADER {
        return Err(err(1, format!("expected header '{TREE_CSV_HEADER}'")));
    }
    let mut records = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 15 {
            return Err(err(line_no, format!("expected 15 fields, got {}", fields.len())));
        }
        let count = |s: &str, what: &str| -> Result<u32, crate::io::IoFormatError> {
            s.parse::<u32>().map_err(|_| err(line_no, format!("invalid {what} '{s}'")))
        };
        let opt_real = |s: &str, what: &str| -> Result<Option<f64>, crate::io::IoFormatError> {
            if s.is_empty() {
                return Ok(None);
            }
            s.parse::<f64>().map(Some).map_err(|_| err(line_no, format!("invalid {what} '{s}'")))
        };
        let opt_count = |s: &str, what: &str| -> Result<Option<u32>, crate::io::IoFormatError> {
            if s.is_empty() {
                return Ok(None);
            }
            s.parse::<u32>().map(Some).map_err(|_| err(line_no, format!("invalid {what} '{s}'")))
        };
        records.push(TreeRecord {
            id: fields[0].to_string(),
            sector: fields[1].to_string(),
            region: fields[2].to_string(),
            var_group: fields[3].to_string(),
            variety: fields[4].to_string(),
            age_group: fields[5].to_string(),
            f1: count(fields[6], "F1")?,
            f2: count(fields[7], "F2")?,
            f3: count(fields[8], "F3")?,
            f4: count(fields[9], "F4")?,
            h: opt_real(fields[10], "H")?,
            w: opt_real(fields[11], "W")?,
            d: opt_real(fields[12], "D")?,
            cbyt_a: opt_count(fields[13], "CbyT-A")?,
            cbyt_b: opt_count(fields[14], "CbyT-B")?,
        });
    }
    Ok(records)
}

pub fn read_tree_records(path: &std::path::Path) -> Result<Vec<TreeRecord>, crate::io::IoFormatError> {
    let text = std::fs::read_to_string(path)?;
    parse_tree_records(&text, &path.display().to_string())
}

const CATEGORICAL_COLUMNS: [&str; 5] = ["sector", "region", "var_group", "variety", "age_group"];
const NUMERIC_COLUMNS: [&str; 5] = ["h", "w", "d", "cbyt_a", "cbyt_b"];

fn categorical_value<'a>(r: &'a TreeRecord, column: &str) -> &'a str {
    match column {
        "sector" => &r.sector,
        "region" => &r.region,
        "var_group" => &r.var_group,
        "variety" => &r.variety,
        "age_group" => &r.age_group,
        _ => unreachable!("unknown categorical column"),
    }
}

fn numeric_value(r: &TreeRecord, column: &str) -> f64 {
    match column {
        "h" => r.h.expect("complete record"),
        "w" => r.w.expect("complete record"),
        "d" => r.d.expect("complete record"),
        "cbyt_a" => r.cbyt_a.expect("complete record") as f64,
        "cbyt_b" => r.cbyt_b.expect("complete record") as f64,
        _ => unreachable!("unknown numeric column"),
    }
}

/// Frozen preprocessing: one-hot vocabularies and per-column standardization
/// statistics, fitted on the training split only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessPlan {
    categorical: Vec<(String, Vec<String>)>,
    numeric: Vec<(String, f64, f64)>,
}

pub fn fit_preprocess(train: &[TreeRecord]) -> Result<PreprocessPlan, RegressorError> {
    if train.is_empty() {
        return Err(RegressorError::ShapeMismatch);
    }
    let mut categorical = Vec::new();
    for col in CATEGORICAL_COLUMNS {
        let mut vocab: Vec<String> = train.iter().map(|r| categorical_value(r, col).to_string()).collect();
        vocab.sort();
        vocab.dedup();
        categorical.push((col.to_string(), vocab));
    }
    let mut numeric = Vec::new();
    for col in NUMERIC_COLUMNS {
        let values: Vec<f64> = train.iter().map(|r| numeric_value(r, col)).collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
        let std = var.sqrt();
        if std <= 0.0 {
            return Err(RegressorError::ZeroVariance(col.to_string()));
        }
        numeric.push((col.to_string(), mean, std));
    }
    Ok(PreprocessPlan { categorical, numeric })
}

impl PreprocessPlan {
    pub fn feature_len(&self) -> usize {
        self.categorical.iter().map(|(_, v)| v.len()).sum::<usize>() + self.numeric.len()
    }

    /// Transform one record; out-of-vocabulary categoricals produce all-zero
    /// indicator blocks and are reported back.
    pub fn transform_with_report(&self, r: &TreeRecord) -> (Vec<f64>, Vec<String>) {
        let mut features = Vec::with_capacity(self.feature_len());
        let mut oov = Vec::new();
        for (col, vocab) in &self.categorical {
            let value = categorical_value(r, col);
            let hit = vocab.iter().position(|v| v == value);
            if hit.is_none() {
                oov.push(format!("{col}={value}"));
            }
            for (i, _) in vocab.iter().enumerate() {
                features.push(if hit == Some(i) { 1.0 } else { 0.0 });
            }
        }
        for (col, mean, std) in &self.numeric {
            features.push((numeric_value(r, col) - mean) / std);
        }
        (features, oov)
    }

    pub fn transform(&self, r: &TreeRecord) -> Vec<f64> {
        self.transform_with_report(r).0
    }
}

/// Hidden layer sizes; the output layer is always a single linear neuron.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArch {
    pub hidden: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self { lr: 0.01, momentum: 0.9, epochs: 300, batch: 32, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    // weights[o][i]: input i to output o.
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

/// Feed-forward network: rectifier hidden layers, linear single-unit output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<Layer>,
}

impl MlpModel {
    /// Seeded uniform initialization scaled per layer fan-in/fan-out.
    pub fn init(input_dim: usize, arch: &MlpArch, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dims = vec![input_dim];
        dims.extend_from_slice(&arch.hidden);
        dims.push(1);
        let layers = dims
            .windows(2)
            .map(|io| {
                let (n_in, n_out) = (io[0], io[1]);
                let limit = (6.0 / (n_in + n_out) as f64).sqrt();
                Layer {
                    weights: (0..n_out)
                        .map(|_| (0..n_in).map(|_| rng.random_range(-limit..limit)).collect())
                        .collect(),
                    bias: vec![0.0; n_out],
                }
            })
            .collect();
        Self { layers }
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    fn forward(&self, x: &[f64]) -> Vec<Vec<f64>> {
        // Activations per layer, input included.
        let mut acts = vec![x.to_vec()];
        for (l, layer) in self.layers.iter().enumerate() {
            let prev = &acts[l];
            let last = l + 1 == self.layers.len();
            let out: Vec<f64> = layer
                .weights
                .iter()
                .zip(&layer.bias)
                .map(|(row, b)| {
                    let z = row.iter().zip(prev).map(|(w, a)| w * a).sum::<f64>() + b;
                    if last {
                        z
                    } else {
                        z.max(0.0)
                    }
                })
                .collect();
            acts.push(out);
        }
        acts
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.forward(x).last().expect("output layer")[0]
    }

    pub fn mse_loss(&self, xs: &[Vec<f64>], ys: &[f64]) -> f64 {
        let n = xs.len() as f64;
        xs.iter().zip(ys).map(|(x, y)| (self.predict(x) - y).powi(2)).sum::<f64>() / n
    }

    /// Analytic gradient of the mean-squared error, flattened in parameter
    /// order (layer by layer, weights row-major then biases).
    pub fn mse_gradient(&self, xs: &[Vec<f64>], ys: &[f64]) -> Vec<f64> {
        let mut grads: Vec<Layer> = self
            .layers
            .iter()
            .map(|l| Layer {
                weights: l.weights.iter().map(|r| vec![0.0; r.len()]).collect(),
                bias: vec![0.0; l.bias.len()],
            })
            .collect();
        let n = xs.len() as f64;
        for (x, y) in xs.iter().zip(ys) {
            let acts = self.forward(x);
            let out = acts.last().expect("output")[0];
            // d(mse)/d(out) averaged over the batch.
            let mut delta = vec![2.0 * (out - y) / n];
            for l in (0..self.layers.len()).rev() {
                let prev = &acts[l];
                for (o, d) in delta.iter().enumerate() {
                    for (i, a) in prev.iter().enumerate() {
                        grads[l].weights[o][i] += d * a;
                    }
                    grads[l].bias[o] += d;
                }
                if l == 0 {
                    break;
                }
                // Propagate through the rectifier of layer l-1.
                let mut next_delta = vec![0.0; prev.len()];
                for (o, d) in delta.iter().enumerate() {
                    for (i, nd) in next_delta.iter_mut().enumerate() {
                        *nd += d * self.layers[l].weights[o][i];
                    }
                }
                for (nd, a) in next_delta.iter_mut().zip(prev) {
                    if *a <= 0.0 {
                        *nd = 0.0;
                    }
                }
                delta = next_delta;
            }
        }
        flatten(&grads)
    }

    pub fn params(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        let mut it = flat.iter();
        for layer in &mut self.layers {
            for row in &mut layer.weights {
                for w in row {
                    *w = *it.next().expect("parameter count");
                }
            }
            for b in &mut layer.bias {
                *b = *it.next().expect("parameter count");
            }
        }
        assert!(it.next().is_none(), "parameter count");
    }
}

fn flatten(layers: &[Layer]) -> Vec<f64> {
    let mut out = Vec::new();
    for layer in layers {
        for row in &layer.weights {
            out.extend_from_slice(row);
        }
        out.extend_from_slice(&layer.bias);
    }
    out
}

/// Mean-squared-error minimization by mini-batch gradient descent with
/// momentum; deterministic under the seed.
pub fn train_mlp(
    xs: &[Vec<f64>],
    ys: &[f64],
    arch: &MlpArch,
    hyper: &TrainHyper,
) -> Result<MlpModel, RegressorError> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(RegressorError::ShapeMismatch);
    }
    let input_dim = xs[0].len();
    let mut model = MlpModel::init(input_dim, arch, hyper.seed);
    let mut velocity = vec![0.0; model.params().len()];
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed.wrapping_add(1));
    let batch = hyper.batch.max(1);

    for epoch in 0..hyper.epochs {
        let mut order: Vec<usize> = (0..xs.len()).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let bx: Vec<Vec<f64>> = chunk.iter().map(|&i| xs[i].clone()).collect();
            let by: Vec<f64> = chunk.iter().map(|&i| ys[i]).collect();
            let grad = model.mse_gradient(&bx, &by);
            let mut params = model.params();
            for ((p, v), g) in params.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = hyper.momentum * *v - hyper.lr * g;
                *p += *v;
            }
            model.set_params(&params);
        }
        let loss = model.mse_loss(xs, ys);
        if !loss.is_finite() {
            return Err(RegressorError::NonFiniteLoss(epoch));
        }
    }
    Ok(model)
}

/// Coefficient of determination `1 - SS_res / SS_tot`.
pub fn r2(pred: &[f64], actual: &[f64]) -> Result<f64, RegressorError> {
    if pred.len() != actual.len() || actual.len() < 2 {
        return Err(RegressorError::TooFewValues);
    }
    let mean = actual.iter().sum::<f64>() / actual.len() as f64;
    let ss_tot: f64 = actual.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot <= 0.0 {
        return Err(RegressorError::ZeroVariance("target".to_string()));
    }
    let ss_res: f64 = pred.iter().zip(actual).map(|(p, y)| (y - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Two-sided paired t-test over per-fold score differences.
/// Returns (t statistic, p value). Zero variance with zero mean difference
/// is treated as "no evidence" (p = 1).
pub fn paired_t_test(a: &[f64], b: &[f64]) -> (f64, f64) {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    if sd == 0.0 {
        return if mean == 0.0 { (0.0, 1.0) } else { (f64::INFINITY, 0.0) };
    }
    let t = mean / (sd / n.sqrt());
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).expect("valid dof");
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    (t, p)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArchCv {
    pub arch: MlpArch,
    pub fold_scores: Vec<f64>,
    pub mean_r2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairComparison {
    /// Indices into the ranked architecture list.
    pub better: usize,
    pub worse: usize,
    pub t: f64,
    pub p: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvReport {
    pub ranked: Vec<ArchCv>,
    pub comparisons: Vec<PairComparison>,
}

/// K-fold cross-validation over an architecture grid with pairwise paired
/// t-tests on the fold scores. Preprocessing is re-fitted on each fold's
/// training part so test rows never leak into the plan.
pub fn kfold_cv(
    records: &[TreeRecord],
    archs: &[MlpArch],
    k: usize,
    p_threshold: f64,
    hyper: &TrainHyper,
) -> Result<CvReport, RegressorError> {
    if records.len() < k || k < 2 {
        return Err(RegressorError::TooFewRecords { k, n: records.len() });
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed.wrapping_add(7));
    order.shuffle(&mut rng);
    let folds: Vec<Vec<usize>> = (0..k).map(|f| order.iter().copied().skip(f).step_by(k).collect()).collect();

    let mut results: Vec<ArchCv> = Vec::with_capacity(archs.len());
    for arch in archs {
        let mut fold_scores = Vec::with_capacity(k);
        for (f_idx, fold) in folds.iter().enumerate() {
            let test_set: Vec<&TreeRecord> = fold.iter().map(|&i| &records[i]).collect();
            let train_set: Vec<TreeRecord> = order
                .iter()
                .filter(|i| !fold.contains(i))
                .map(|&i| records[i].clone())
                .collect();
            let plan = fit_preprocess(&train_set)?;
            let xs: Vec<Vec<f64>> = train_set.iter().map(|r| plan.transform(r)).collect();
            let ys: Vec<f64> = train_set.iter().map(|r| r.target()).collect();
            // Fold-derived seeds: every architecture trains under the same
            // conditions per fold, so the comparisons are paired.
            let fold_hyper = TrainHyper { seed: hyper.seed.wrapping_add(f_idx as u64), ..*hyper };
            let model = train_mlp(&xs, &ys, arch, &fold_hyper)?;
            let pred: Vec<f64> = test_set.iter().map(|r| model.predict(&plan.transform(r))).collect();
            let actual: Vec<f64> = test_set.iter().map(|r| r.target()).collect();
            fold_scores.push(r2(&pred, &actual)?);
        }
        let mean_r2 = fold_scores.iter().sum::<f64>() / k as f64;
        results.push(ArchCv { arch: arch.clone(), fold_scores, mean_r2 });
    }

    results.sort_by(|a, b| b.mean_r2.partial_cmp(&a.mean_r2).unwrap());
    let mut comparisons = Vec::new();
    for i in 0..results.len() {
        for j in (i + 1)..results.len() {
            let (t, p) = paired_t_test(&results[i].fold_scores, &results[j].fold_scores);
            comparisons.push(PairComparison { better: i, worse: j, t, p, significant: p < p_threshold });
        }
    }
    Ok(CvReport { ranked: results, comparisons })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioFilterOutcome {
    pub kept: Vec<TreeRecord>,
    /// Ids of records skipped because the manual count `F1 + F2 + F3` is zero
    /// (or a tracking count is missing), reported rather than silently dropped.
    pub skipped: Vec<String>,
}

/// Keep records whose counting ratio `(CbyT-A + CbyT-B) / (F1 + F2 + F3)`
/// reaches the threshold.
pub fn filter_by_ratio(records: &[TreeRecord], threshold: f64) -> RatioFilterOutcome {
    let mut kept = Vec::new();
    let mut skipped = Vec::new();
    for r in records {
        match r.counting_ratio() {
            Some(ratio) if ratio >= threshold => kept.push(r.clone()),
            Some(_) => {}
            None => skipped.push(r.id.clone()),
        }
    }
    RatioFilterOutcome { kept, skipped }
}
