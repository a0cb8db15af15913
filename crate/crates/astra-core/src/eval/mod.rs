//! Evaluation harness: run a matcher over a simulated dataset and compute
//! classification metrics, overall and per tool count.
//!
//! The positive class is "appropriate": `correct` labels are ground-truth
//! positives, `wrong` and `null` labels are both ground-truth negatives.
//! Ratios with a zero denominator are reported as null, never 0.

pub mod report;

pub use report::{render_fpr_fnr_table, render_metrics_table, ReportFormat};

use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{MatchDecision, MatchLabel, MatchRequest, MatcherId};
use crate::matchers::ScopeMatcher;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("similarity matcher requires single-tool tasks; dataset contains n_tools={n_tools}")]
    UnsupportedTaskArity { n_tools: u8 },
    #[error("unsupported report format {0:?}")]
    UnsupportedFormat(String),
    #[error("matcher error rate {rate:.3} exceeds budget {budget:.3}")]
    ErrorBudgetExceeded { rate: f64, budget: f64 },
}

/// Confusion counts; `fn` is serialized under its usual name.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn record(&mut self, truth_positive: bool, predicted_positive: bool) {
        match (truth_positive, predicted_positive) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }
}

fn ratio(numerator: u64, denominator: u64) -> Option<f64> {
    if denominator == 0 {
        None
    } else {
        Some(numerator as f64 / denominator as f64)
    }
}

/// Metric block shared by the overall report and the per-N sub-reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsBlock {
    pub counts: ConfusionCounts,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
}

impl MetricsBlock {
    pub fn from_counts(counts: ConfusionCounts) -> Self {
        let precision = ratio(counts.tp, counts.tp + counts.fp);
        let recall = ratio(counts.tp, counts.tp + counts.fn_);
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            (Some(_), Some(_)) => None,
            _ => None,
        };
        Self {
            counts,
            accuracy: ratio(counts.tp + counts.tn, counts.total()),
            precision,
            recall,
            f1,
            fpr: ratio(counts.fp, counts.fp + counts.tn),
            fnr: ratio(counts.fn_, counts.fn_ + counts.tp),
        }
    }
}

/// Full evaluation output for one (matcher, dataset) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub matcher_id: MatcherId,
    pub dataset_id: String,
    #[serde(flatten)]
    pub overall: MetricsBlock,
    pub per_n: BTreeMap<u8, MetricsBlock>,
    /// Requests where the matcher errored; counted as denials.
    pub matcher_errors: u64,
}

type CacheKey = (MatcherId, String, String);

/// Decision cache keyed by (matcher, sample, scope): recomputing reports
/// never re-queries the gateway.
#[derive(Default)]
pub struct DecisionCache {
    inner: Mutex<HashMap<CacheKey, MatchDecision>>,
}

impl DecisionCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get(&self, key: &CacheKey) -> Option<MatchDecision> {
        self.inner.lock().unwrap().get(key).cloned()
    }

    fn put(&self, key: CacheKey, decision: MatchDecision) {
        self.inner.lock().unwrap().insert(key, decision);
    }
}

/// Evaluation knobs.
pub struct EvalOptions<'a> {
    pub dataset_id: String,
    /// Worker threads for decision computation.
    pub parallelism: usize,
    pub cache: Option<&'a DecisionCache>,
}

impl Default for EvalOptions<'_> {
    fn default() -> Self {
        Self {
            dataset_id: "dataset".to_string(),
            parallelism: 4,
            cache: None,
        }
    }
}

/// Runs the matcher over every request and reduces decisions into metrics.
///
/// The similarity matcher is only accepted on datasets where every task is
/// single-tool. Matcher errors become denials (and are counted); the
/// reduction itself is order-independent summation.
pub fn evaluate(
    matcher: &dyn ScopeMatcher,
    dataset: &[MatchRequest],
    opts: &EvalOptions,
) -> Result<MetricsReport, EvalError> {
    if dataset.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    if matcher.id() == MatcherId::Semsim {
        if let Some(bad) = dataset.iter().find(|r| r.task.n_tools != 1) {
            return Err(EvalError::UnsupportedTaskArity {
                n_tools: bad.task.n_tools,
            });
        }
    }

    let decide = |request: &MatchRequest| -> (bool, bool, u8, bool) {
        let key = (
            matcher.id(),
            request.task.sample_id.clone(),
            request.requested_tool.scope.clone(),
        );
        let cached = opts.cache.and_then(|c| c.get(&key));
        let (decision, errored) = match cached {
            Some(decision) => (decision, false),
            None => match matcher.decide(&request.task, &request.requested_tool) {
                Ok(decision) => {
                    if let Some(cache) = opts.cache {
                        cache.put(key, decision.clone());
                    }
                    (decision, false)
                }
                Err(err) => {
                    tracing::warn!(
                        sample = %request.task.sample_id,
                        scope = %request.requested_tool.scope,
                        error = %err,
                        "matcher error treated as denial"
                    );
                    (
                        MatchDecision::harness(matcher.id(), false, Some(format!("error: {err}"))),
                        true,
                    )
                }
            },
        };
        (
            request.label == MatchLabel::Correct,
            decision.appropriate,
            request.task.n_tools,
            errored,
        )
    };

    let workers = opts.parallelism.max(1).min(dataset.len());
    let chunk_size = dataset.len().div_ceil(workers);
    let outcomes: Vec<(bool, bool, u8, bool)> = std::thread::scope(|scope| {
        let handles: Vec<_> = dataset
            .chunks(chunk_size)
            .map(|chunk| scope.spawn(move || chunk.iter().map(decide).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("evaluation worker panicked"))
            .collect()
    });

    let mut overall = ConfusionCounts::default();
    let mut per_n_counts: BTreeMap<u8, ConfusionCounts> = BTreeMap::new();
    let mut matcher_errors = 0_u64;
    for (truth, predicted, n, errored) in outcomes {
        overall.record(truth, predicted);
        per_n_counts.entry(n).or_default().record(truth, predicted);
        if errored {
            matcher_errors += 1;
        }
    }

    Ok(MetricsReport {
        matcher_id: matcher.id(),
        dataset_id: opts.dataset_id.clone(),
        overall: MetricsBlock::from_counts(overall),
        per_n: per_n_counts
            .into_iter()
            .map(|(n, c)| (n, MetricsBlock::from_counts(c)))
            .collect(),
        matcher_errors,
    })
}
