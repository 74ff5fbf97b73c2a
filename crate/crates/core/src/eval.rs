//! Classification and regression metrics, module-level WNS and run reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Example, LineKey, Split};
use crate::heads::classify;

pub const REPORT_SCHEMA: &str = "report_v1";
pub const MAPE_EPS: f64 = 1e-9;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("undefined R²: targets are constant")]
    ConstantTarget,
    #[error("need at least {needed} values, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("length mismatch: {0} targets vs {1} predictions")]
    Length(usize, usize),
    #[error("MAPE undefined: |y[{index}]| = {value:e} is within {eps:e} of zero")]
    NearZero { index: usize, value: f64, eps: f64 },
    #[error("empty WNS list")]
    Empty,
    #[error("prediction {index} is for {got}, expected {expected}")]
    Alignment {
        index: usize,
        expected: String,
        got: String,
    },
    #[error("{expected} predictions expected, got {got}")]
    Count { expected: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Congestion,
    Timing,
    Wns,
}

impl Task {
    pub fn is_regression(self) -> bool {
        self == Task::Wns
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Congestion => "congestion",
            Task::Timing => "timing",
            Task::Wns => "wns",
        }
    }

    /// Whether an example takes part in this task.
    pub fn includes(self, e: &Example) -> bool {
        self != Task::Wns || e.wns_ns.is_some()
    }

    /// Binary label as 0/1, or the WNS target.
    pub fn target(self, e: &Example) -> Option<f64> {
        match self {
            Task::Congestion => Some(e.congestion as u8 as f64),
            Task::Timing => Some(e.timing as u8 as f64),
            Task::Wns => e.wns_ns,
        }
    }
}

impl std::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "congestion" => Ok(Task::Congestion),
            "timing" => Ok(Task::Timing),
            "wns" => Ok(Task::Wns),
            other => Err(format!("unknown task {other:?} (congestion, timing, wns)")),
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn from_pairs(truth: &[bool], predicted: &[bool]) -> Self {
        let mut c = ConfusionCounts::default();
        for (&t, &p) in truth.iter().zip(predicted) {
            match (t, p) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall and F1; every 0/0 is 0.
pub fn precision_recall_f1(c: &ConfusionCounts) -> (f64, f64, f64) {
    let p = ratio(c.tp, c.tp + c.fp);
    let r = ratio(c.tp, c.tp + c.fn_);
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f1)
}

fn check_lengths(y: &[f64], y_hat: &[f64], needed: usize) -> Result<()> {
    if y.len() != y_hat.len() {
        return Err(EvalError::Length(y.len(), y_hat.len()));
    }
    if y.len() < needed {
        return Err(EvalError::TooFew {
            needed,
            got: y.len(),
        });
    }
    Ok(())
}

pub fn r2(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_lengths(y, y_hat, 2)?;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    if ss_tot == 0.0 {
        return Err(EvalError::ConstantTarget);
    }
    let ss_res: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn mape(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    mape_eps(y, y_hat, MAPE_EPS)
}

pub fn mape_eps(y: &[f64], y_hat: &[f64], eps: f64) -> Result<f64> {
    check_lengths(y, y_hat, 1)?;
    if let Some(index) = y.iter().position(|v| v.abs() <= eps) {
        return Err(EvalError::NearZero {
            index,
            value: y[index],
            eps,
        });
    }
    let total: f64 = y
        .iter()
        .zip(y_hat)
        .map(|(a, b)| (a - b).abs() / a.abs())
        .sum();
    Ok(total / y.len() as f64)
}

/// Worst (smallest) slack over a module's lines.
pub fn module_wns(line_wns: &[f64]) -> Result<f64> {
    line_wns
        .iter()
        .copied()
        .reduce(f64::min)
        .ok_or(EvalError::Empty)
}

/// Score for one line: probability for flags, slack for WNS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinePrediction {
    pub key: LineKey,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub counts: ConfusionCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ClassificationMetrics {
    pub fn from_counts(counts: ConfusionCounts) -> Self {
        let (precision, recall, f1) = precision_recall_f1(&counts);
        Self {
            counts,
            precision,
            recall,
            f1,
        }
    }
}

/// `None` where a metric is undefined on the subset (constant targets or
/// fewer than two points).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub n: usize,
    pub r2: Option<f64>,
    pub mape: Option<f64>,
}

impl RegressionMetrics {
    fn compute(y: &[f64], y_hat: &[f64]) -> Result<Self> {
        let r2 = match r2(y, y_hat) {
            Ok(v) => Some(v),
            Err(EvalError::ConstantTarget | EvalError::TooFew { .. }) => None,
            Err(e) => return Err(e),
        };
        let mape = if y.is_empty() { None } else { Some(mape(y, y_hat)?) };
        Ok(Self {
            n: y.len(),
            r2,
            mape,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classification: Option<ClassificationMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<RegressionMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub module: Option<RegressionMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema: String,
    pub task: Task,
    pub threshold: f64,
    pub n_examples: usize,
    pub overall: TaskMetrics,
    pub per_design: BTreeMap<String, TaskMetrics>,
    pub config: serde_json::Value,
}

/// (true, predicted) module WNS pairs in module order. Truth comes from the
/// module row when the label file has one, else the min over lines.
pub fn module_wns_pairs(
    dataset: &Dataset,
    keys: &[LineKey],
    truth: &[f64],
    predicted: &[f64],
) -> Result<Vec<((String, String), f64, f64)>> {
    let mut groups: BTreeMap<(String, String), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for ((k, &t), &p) in keys.iter().zip(truth).zip(predicted) {
        let g = groups
            .entry((k.design_id.clone(), k.module_id.clone()))
            .or_default();
        g.0.push(t);
        g.1.push(p);
    }
    groups
        .into_iter()
        .map(|(m, (t, p))| {
            let true_wns = match dataset.module_wns.get(&m) {
                Some(&w) => w,
                None => module_wns(&t)?,
            };
            Ok((m, true_wns, module_wns(&p)?))
        })
        .collect()
}

fn task_metrics(
    task: Task,
    dataset: &Dataset,
    keys: &[LineKey],
    truth: &[f64],
    scores: &[f64],
    threshold: f64,
) -> Result<TaskMetrics> {
    if task.is_regression() {
        let modules = module_wns_pairs(dataset, keys, truth, scores)?;
        let mt: Vec<f64> = modules.iter().map(|m| m.1).collect();
        let mp: Vec<f64> = modules.iter().map(|m| m.2).collect();
        Ok(TaskMetrics {
            classification: None,
            line: Some(RegressionMetrics::compute(truth, scores)?),
            module: Some(RegressionMetrics::compute(&mt, &mp)?),
        })
    } else {
        let t: Vec<bool> = truth.iter().map(|&v| v == 1.0).collect();
        let p: Vec<bool> = scores.iter().map(|&s| classify(s, threshold)).collect();
        Ok(TaskMetrics {
            classification: Some(ClassificationMetrics::from_counts(ConfusionCounts::from_pairs(
                &t, &p,
            ))),
            line: None,
            module: None,
        })
    }
}

/// Test-split examples taking part in `task`, in canonical order.
pub fn test_examples(dataset: &Dataset, task: Task) -> impl Iterator<Item = &Example> {
    dataset
        .examples
        .iter()
        .filter(move |e| e.split == Split::Test && task.includes(e))
}

/// Score test-split predictions. Predictions must cover exactly the test
/// examples of the task, in dataset order.
pub fn evaluate_run(
    predictions: &[LinePrediction],
    dataset: &Dataset,
    task: Task,
    threshold: f64,
    config: serde_json::Value,
) -> Result<MetricsReport> {
    let examples: Vec<&Example> = test_examples(dataset, task).collect();
    if examples.len() != predictions.len() {
        return Err(EvalError::Count {
            expected: examples.len(),
            got: predictions.len(),
        });
    }
    for (index, (e, p)) in examples.iter().zip(predictions).enumerate() {
        let expected = e.line.key();
        if expected != p.key {
            return Err(EvalError::Alignment {
                index,
                expected: expected.to_string(),
                got: p.key.to_string(),
            });
        }
    }
    let keys: Vec<LineKey> = predictions.iter().map(|p| p.key.clone()).collect();
    let truth: Vec<f64> = examples.iter().map(|e| task.target(e).unwrap()).collect();
    let scores: Vec<f64> = predictions.iter().map(|p| p.score).collect();

    let overall = task_metrics(task, dataset, &keys, &truth, &scores, threshold)?;
    let mut per_design = BTreeMap::new();
    let mut designs: Vec<&str> = keys.iter().map(|k| k.design_id.as_str()).collect();
    designs.dedup();
    for d in designs {
        let idx: Vec<usize> = (0..keys.len()).filter(|&i| keys[i].design_id == d).collect();
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let k: Vec<LineKey> = idx.iter().map(|&i| keys[i].clone()).collect();
        per_design.insert(
            d.to_owned(),
            task_metrics(task, dataset, &k, &pick(&truth), &pick(&scores), threshold)?,
        );
    }
    Ok(MetricsReport {
        schema: REPORT_SCHEMA.to_owned(),
        task,
        threshold,
        n_examples: predictions.len(),
        overall,
        per_design,
        config,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_owned(), |v| format!("{v:.4}"))
}

impl MetricsReport {
    /// Aligned plain-text table, one row per design plus the total.
    pub fn to_table(&self) -> String {
        let mut rows: Vec<(String, &TaskMetrics)> = self
            .per_design
            .iter()
            .map(|(d, m)| (d.clone(), m))
            .collect();
        rows.push(("all".to_owned(), &self.overall));
        let mut out = String::new();
        if self.task.is_regression() {
            let header = ["design", "lines", "line_r2", "line_mape", "modules", "module_r2", "module_mape"];
            let mut cells = vec![header.iter().map(|s| s.to_string()).collect::<Vec<_>>()];
            for (d, m) in rows {
                let (l, mo) = (m.line.as_ref().unwrap(), m.module.as_ref().unwrap());
                cells.push(vec![
                    d,
                    l.n.to_string(),
                    fmt_opt(l.r2),
                    fmt_opt(l.mape),
                    mo.n.to_string(),
                    fmt_opt(mo.r2),
                    fmt_opt(mo.mape),
                ]);
            }
            render(&mut out, &cells);
        } else {
            let header = ["design", "tp", "fp", "tn", "fn", "precision", "recall", "f1"];
            let mut cells = vec![header.iter().map(|s| s.to_string()).collect::<Vec<_>>()];
            for (d, m) in rows {
                let c = m.classification.as_ref().unwrap();
                cells.push(vec![
                    d,
                    c.counts.tp.to_string(),
                    c.counts.fp.to_string(),
                    c.counts.tn.to_string(),
                    c.counts.fn_.to_string(),
                    format!("{:.4}", c.precision),
                    format!("{:.4}", c.recall),
                    format!("{:.4}", c.f1),
                ]);
            }
            render(&mut out, &cells);
        }
        out
    }
}

fn render(out: &mut String, cells: &[Vec<String>]) {
    let widths: Vec<usize> = (0..cells[0].len())
        .map(|c| cells.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    for row in cells {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (s, &w))| if i == 0 { format!("{s:<w$}") } else { format!("{s:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
}

/// Structural check of a serialized `report_v1` document.
pub fn validate_report(v: &serde_json::Value) -> std::result::Result<(), String> {
    let obj = v.as_object().ok_or("report is not an object")?;
    if obj.get("schema").and_then(|s| s.as_str()) != Some(REPORT_SCHEMA) {
        return Err(format!("schema must be {REPORT_SCHEMA:?}"));
    }
    let task: Task = obj
        .get("task")
        .and_then(|t| t.as_str())
        .ok_or("missing task")?
        .parse()?;
    for key in ["threshold", "n_examples"] {
        if !obj.get(key).is_some_and(|x| x.is_number()) {
            return Err(format!("{key} must be a number"));
        }
    }
    let check_metrics = |m: &serde_json::Value, at: &str| -> std::result::Result<(), String> {
        if task.is_regression() {
            for part in ["line", "module"] {
                let r = m.get(part).ok_or(format!("{at}: missing {part}"))?;
                if !r.get("n").is_some_and(|n| n.is_u64()) {
                    return Err(format!("{at}.{part}: n must be an integer"));
                }
                for k in ["r2", "mape"] {
                    if !r.get(k).is_some_and(|x| x.is_number() || x.is_null()) {
                        return Err(format!("{at}.{part}: {k} must be a number or null"));
                    }
                }
            }
        } else {
            let c = m
                .get("classification")
                .ok_or(format!("{at}: missing classification"))?;
            for k in ["precision", "recall", "f1"] {
                let x = c.get(k).and_then(|x| x.as_f64()).ok_or(format!("{at}: missing {k}"))?;
                if !(0.0..=1.0).contains(&x) {
                    return Err(format!("{at}: {k} outside [0, 1]"));
                }
            }
            for k in ["tp", "fp", "tn", "fn"] {
                if !c["counts"].get(k).is_some_and(|x| x.is_u64()) {
                    return Err(format!("{at}: counts.{k} must be an integer"));
                }
            }
        }
        Ok(())
    };
    check_metrics(obj.get("overall").ok_or("missing overall")?, "overall")?;
    let designs = obj
        .get("per_design")
        .and_then(|d| d.as_object())
        .ok_or("per_design must be an object")?;
    for (d, m) in designs {
        check_metrics(m, d)?;
    }
    if !obj.contains_key("config") {
        return Err("missing config".into());
    }
    Ok(())
}
