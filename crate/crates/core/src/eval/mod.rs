//! Accuracy, confusion counts, ROC/AUC, multi-model comparison and report
//! emission. `suspected` is the positive class.

mod emit;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use emit::{pca_svg, report_csv, report_json, report_table_csv, roc_svg, NamedCurve};

use crate::dataset::{augment_minority, split, Dataset, DatasetError, SplitSpec};
use crate::encoder::Label;
use crate::model::{EpochStats, Model, ModelConfig, ModelError, TrainConfig, Trainer};

/// Name of the pooled row in reports.
pub const OVERALL: &str = "Overall";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no predictions to score")]
    Empty,
    #[error("{preds} predictions for {truth} labels")]
    LengthMismatch { preds: usize, truth: usize },
    #[error("ROC needs both classes in the ground truth")]
    SingleClass,
    #[error("score {0} is not finite")]
    NonFinite(f64),
    #[error("nothing to plot")]
    NothingToPlot,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total() as f64
    }
}

pub fn accuracy_confusion(preds: &[Label], truth: &[Label]) -> Result<(f64, ConfusionMatrix), EvalError> {
    if preds.len() != truth.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            truth: truth.len(),
        });
    }
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut cm = ConfusionMatrix::default();
    for (p, t) in preds.iter().zip(truth) {
        match (p, t) {
            (Label::Suspected, Label::Suspected) => cm.tp += 1,
            (Label::Suspected, Label::Normal) => cm.fp += 1,
            (Label::Normal, Label::Normal) => cm.tn += 1,
            (Label::Normal, Label::Suspected) => cm.fn_ += 1,
        }
    }
    Ok((cm.accuracy(), cm))
}

/// Operating points for every distinct score used as a threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`.
    pub points: Vec<(f64, f64)>,
    /// Threshold reached at `points[i + 1]`, descending; scores at or above
    /// it count as suspected.
    pub thresholds: Vec<f64>,
}

/// ROC over suspected-class scores with tied scores sharing one threshold,
/// and the trapezoidal area under it.
pub fn roc_auc(scores: &[f64], truth: &[Label]) -> Result<(RocCurve, f64), EvalError> {
    if scores.len() != truth.len() {
        return Err(EvalError::LengthMismatch {
            preds: scores.len(),
            truth: truth.len(),
        });
    }
    if let Some(&s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(EvalError::NonFinite(s));
    }
    let pos = truth.iter().filter(|&&l| l == Label::Suspected).count();
    let neg = truth.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let mut thresholds = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            match truth[order[i]] {
                Label::Suspected => tp += 1,
                Label::Normal => fp += 1,
            }
            i += 1;
        }
        let point = (fp as f64 / neg as f64, tp as f64 / pos as f64);
        let prev = *points.last().expect("starts at the origin");
        auc += (point.0 - prev.0) * (point.1 + prev.1) / 2.0;
        points.push(point);
        thresholds.push(threshold);
    }
    Ok((RocCurve { points, thresholds }, auc))
}

/// Scores of one model on one test set (or, for [`OVERALL`], all of them pooled).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetResult {
    pub testset: String,
    pub model: String,
    pub seed: u64,
    pub n: usize,
    pub accuracy: f64,
    /// Absent when the set holds a single class.
    pub auc: Option<f64>,
    pub confusion: ConfusionMatrix,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub models: Vec<String>,
    pub testsets: Vec<String>,
    pub seeds: Vec<u64>,
    pub results: Vec<SetResult>,
    /// Pooled ROC of each model and seed.
    pub curves: Vec<NamedCurve>,
}

impl MetricsReport {
    pub fn entries<'a>(&'a self, testset: &'a str, model: &'a str) -> impl Iterator<Item = &'a SetResult> + 'a {
        self.results
            .iter()
            .filter(move |r| r.testset == testset && r.model == model)
    }

    /// Accuracy and AUC averaged over seeds (AUC only if every seed has one).
    pub fn mean(&self, testset: &str, model: &str) -> Option<(f64, Option<f64>)> {
        let rows: Vec<&SetResult> = self.entries(testset, model).collect();
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        let acc = rows.iter().map(|r| r.accuracy).sum::<f64>() / n;
        let auc = rows.iter().map(|r| r.auc).sum::<Option<f64>>().map(|s| s / n);
        Some((acc, auc))
    }

    /// Pooled accuracy of `model` under `seed`.
    pub fn overall(&self, model: &str, seed: u64) -> Option<&SetResult> {
        self.results
            .iter()
            .find(|r| r.testset == OVERALL && r.model == model && r.seed == seed)
    }

    fn merge(&mut self, other: MetricsReport) {
        for m in other.models {
            if !self.models.contains(&m) {
                self.models.push(m);
            }
        }
        for t in other.testsets {
            if !self.testsets.contains(&t) {
                self.testsets.push(t);
            }
        }
        for s in other.seeds {
            if !self.seeds.contains(&s) {
                self.seeds.push(s);
            }
        }
        self.results.extend(other.results);
        self.curves.extend(other.curves);
    }
}

fn score(
    testset: &str,
    model: &str,
    seed: u64,
    preds: &[Label],
    scores: &[f64],
    truth: &[Label],
) -> Result<(SetResult, Option<RocCurve>), EvalError> {
    let (accuracy, confusion) = accuracy_confusion(preds, truth)?;
    let roc = match roc_auc(scores, truth) {
        Ok(r) => Some(r),
        Err(EvalError::SingleClass) => None,
        Err(e) => return Err(e),
    };
    Ok((
        SetResult {
            testset: testset.to_string(),
            model: model.to_string(),
            seed,
            n: truth.len(),
            accuracy,
            auc: roc.as_ref().map(|r| r.1),
            confusion,
        },
        roc.map(|r| r.0),
    ))
}

/// Scores `model` on each test set and on their concatenation.
pub fn evaluate(model: &Model, name: &str, seed: u64, test_sets: &[Dataset]) -> Result<MetricsReport, EvalError> {
    let mut report = MetricsReport {
        models: vec![name.to_string()],
        testsets: test_sets.iter().map(|t| t.name.clone()).collect(),
        seeds: vec![seed],
        ..Default::default()
    };
    let (mut all_preds, mut all_scores, mut all_truth) = (Vec::new(), Vec::new(), Vec::new());
    for ts in test_sets {
        if ts.is_empty() {
            continue;
        }
        let fvs: Vec<_> = ts.samples().iter().map(|s| s.features).collect();
        let out = model.predict_many(&fvs)?;
        let preds: Vec<Label> = out.iter().map(|o| o.0).collect();
        let scores: Vec<f64> = out.iter().map(|o| o.1[Label::Suspected.index()]).collect();
        let truth = ts.labels();
        report
            .results
            .push(score(&ts.name, name, seed, &preds, &scores, &truth)?.0);
        all_preds.extend(preds);
        all_scores.extend(scores);
        all_truth.extend(truth);
    }
    if all_truth.is_empty() {
        return Err(EvalError::Empty);
    }
    let (pooled, curve) = score(OVERALL, name, seed, &all_preds, &all_scores, &all_truth)?;
    if let (Some(curve), Some(auc)) = (curve, pooled.auc) {
        report.curves.push(NamedCurve {
            model: name.to_string(),
            seed,
            auc,
            curve,
        });
    }
    report.results.push(pooled);
    Ok(report)
}

/// Progress notifications from [`compare_models`].
pub enum CompareEvent<'a> {
    Epoch {
        model: &'a str,
        seed: u64,
        stats: &'a EpochStats,
    },
    Trained {
        model: &'a str,
        seed: u64,
    },
}

/// Trains every model under every seed (model seed and training seed both
/// set to it) and evaluates its best-validation parameters on each test set.
pub fn compare_models(
    models: &[ModelConfig],
    train: &Dataset,
    val: Option<&Dataset>,
    test_sets: &[Dataset],
    tcfg: &TrainConfig,
    seeds: &[u64],
    mut progress: impl FnMut(CompareEvent<'_>),
) -> Result<MetricsReport, EvalError> {
    let mut report = MetricsReport::default();
    for cfg in models {
        for &seed in seeds {
            let name = cfg.name();
            let model = Model::build(cfg.clone().with_seed(seed))?;
            let mut trainer = Trainer::new(model, TrainConfig { seed, ..tcfg.clone() });
            trainer.fit(train, val, |stats| {
                progress(CompareEvent::Epoch {
                    model: name,
                    seed,
                    stats,
                })
            })?;
            progress(CompareEvent::Trained { model: name, seed });
            report.merge(evaluate(&trainer.best_model(), name, seed, test_sets)?);
        }
    }
    Ok(report)
}

/// The training protocol: stratified split of the labelled data, optional
/// oversampling of the suspected class in the training part, then
/// [`compare_models`] against independent test sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Protocol {
    pub split: SplitSpec,
    pub augment: bool,
}

#[allow(clippy::too_many_arguments)]
pub fn run_protocol(
    protocol: &Protocol,
    models: &[ModelConfig],
    labelled: &Dataset,
    test_sets: &[Dataset],
    tcfg: &TrainConfig,
    seeds: &[u64],
    progress: impl FnMut(CompareEvent<'_>),
) -> Result<MetricsReport, EvalError> {
    let (train, val) = split(labelled, &protocol.split)?;
    let train = if protocol.augment {
        augment_minority(&train, protocol.split.seed)?
    } else {
        train
    };
    compare_models(
        models,
        &train,
        Some(&val).filter(|v| !v.is_empty()),
        test_sets,
        tcfg,
        seeds,
        progress,
    )
}
