//! Train, evaluate and annotate: the stages wired together.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::bundle::{creation_time, BundleMeta, ModelBundle, ProviderRecord, Seeds};
use crate::corpus::{self, strip_comments, Dataset, ModuleSpan, Split};
use crate::embedding::{
    Embedder, EmbeddingProvider, FileStoreProvider, MockProvider, ProviderKind, RemoteProvider,
};
use crate::eval::{evaluate_run, test_examples, LinePrediction, MetricsReport, Task};
use crate::features::{
    collect_inputs, encode_inputs, encode_module, input_matrix, module_inputs, table_from_latents,
    augment_context, FeatureTable,
};
use crate::heads::{
    classify, train_gbdt, train_logistic, GbdtConfig, GbdtTask, Growth, Head, LogisticConfig,
    PosWeight,
};
use crate::reducer::{train_autoencoder, Autoencoder, ReducerConfig, TrainLog};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("corpus: {0}")]
    Corpus(#[from] corpus::CorpusError),
    #[error("embedding: {0}")]
    Embedding(#[from] crate::embedding::EmbeddingError),
    #[error("features: {0}")]
    Features(#[from] crate::features::FeatureError),
    #[error("reducer: {0}")]
    Reducer(#[from] crate::reducer::ReducerError),
    #[error("head: {0}")]
    Head(#[from] crate::heads::HeadError),
    #[error("eval: {0}")]
    Eval(#[from] crate::eval::EvalError),
    #[error("bundle: {0}")]
    Bundle(#[from] crate::bundle::BundleError),
    #[error("provider mismatch: bundle was trained with `{bundle}` but the provider is `{provider}`")]
    ProviderMismatch { bundle: String, provider: String },
    #[error("{task} needs training rows with both classes or WNS labels; found {rows}")]
    NoTrainingRows { task: Task, rows: usize },
}

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderSpec {
    pub kind: ProviderKind,
    /// Hidden width of the mock provider.
    pub k: usize,
    /// Seed of the mock provider.
    pub seed: u64,
    /// Store file for the file provider.
    pub path: Option<PathBuf>,
    pub identity: Option<String>,
    pub endpoint: Option<String>,
    pub max_in_flight: usize,
}

impl Default for ProviderSpec {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Mock,
            k: 64,
            seed: 0,
            path: None,
            identity: None,
            endpoint: None,
            max_in_flight: 4,
        }
    }
}

pub fn open_provider(spec: &ProviderSpec) -> Result<Box<dyn EmbeddingProvider>> {
    Ok(match spec.kind {
        ProviderKind::Mock => Box::new(MockProvider::new(spec.k, spec.seed)?),
        ProviderKind::File => {
            let path = spec
                .path
                .as_ref()
                .ok_or_else(|| PipelineError::Config("file provider needs provider.path".into()))?;
            Box::new(FileStoreProvider::open(path, spec.identity.clone())?)
        }
        ProviderKind::Remote => {
            let endpoint = spec.endpoint.as_ref().ok_or_else(|| {
                PipelineError::Config("remote provider needs provider.endpoint".into())
            })?;
            Box::new(RemoteProvider::connect(endpoint, spec.max_in_flight)?)
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Gbdt,
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthPreset {
    DepthLimited,
    LeafLimited,
}

/// Head choice; unset GBDT fields take the preset's values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadSpec {
    pub kind: HeadKind,
    pub preset: GrowthPreset,
    pub n_estimators: Option<usize>,
    pub learning_rate: Option<f64>,
    pub max_depth: Option<usize>,
    pub num_leaves: Option<usize>,
    pub feature_fraction: Option<f64>,
    pub pos_weight: Option<PosWeight>,
    pub min_samples_leaf: Option<usize>,
    pub logistic: LogisticConfig,
}

impl Default for HeadSpec {
    fn default() -> Self {
        Self {
            kind: HeadKind::Gbdt,
            preset: GrowthPreset::DepthLimited,
            n_estimators: None,
            learning_rate: None,
            max_depth: None,
            num_leaves: None,
            feature_fraction: None,
            pos_weight: None,
            min_samples_leaf: None,
            logistic: LogisticConfig::default(),
        }
    }
}

impl HeadSpec {
    pub fn gbdt_config(&self, task: Task, seed: u64) -> GbdtConfig {
        let t = if task.is_regression() {
            GbdtTask::Regression
        } else {
            GbdtTask::Binary
        };
        let mut c = match self.preset {
            GrowthPreset::DepthLimited => GbdtConfig::depth_limited(t),
            GrowthPreset::LeafLimited => GbdtConfig::leaf_limited(t),
        };
        c.seed = seed;
        if let Some(v) = self.n_estimators {
            c.n_estimators = v;
        }
        if let Some(v) = self.learning_rate {
            c.learning_rate = v;
        }
        match (&mut c.growth, self.max_depth, self.num_leaves) {
            (Growth::DepthLimited { max_depth }, Some(v), _) => *max_depth = v,
            (Growth::LeafLimited { num_leaves }, _, Some(v)) => *num_leaves = v,
            _ => {}
        }
        if let Some(v) = self.feature_fraction {
            c.feature_fraction = v;
        }
        if let Some(v) = self.pos_weight {
            c.pos_weight = v;
        }
        if let Some(v) = self.min_samples_leaf {
            c.min_samples_leaf = v;
        }
        c
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub bundle: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub task: Task,
    /// Context radius `p`.
    pub context: usize,
    /// Classification cut-off; for WNS, lines predicted below it are flagged.
    pub threshold: Option<f64>,
    /// Seeds the split, the autoencoder and the head.
    pub seed: u64,
    pub train_fraction: f64,
    /// Blank comments before embedding; line numbers are unchanged.
    pub strip_comments: bool,
    pub paths: Paths,
    pub provider: ProviderSpec,
    pub reducer: ReducerConfig,
    pub head: HeadSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            task: Task::Congestion,
            context: 5,
            threshold: None,
            seed: 0,
            train_fraction: 0.8,
            strip_comments: false,
            paths: Paths::default(),
            provider: ProviderSpec::default(),
            reducer: ReducerConfig::default(),
            head: HeadSpec::default(),
        }
    }
}

impl PipelineConfig {
    pub fn threshold(&self) -> f64 {
        self.threshold
            .unwrap_or(if self.task.is_regression() { 0.0 } else { 0.5 })
    }

    pub fn reducer_config(&self) -> ReducerConfig {
        ReducerConfig {
            seed: self.seed,
            ..self.reducer.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.reducer_config()
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        self.head
            .gbdt_config(self.task, self.seed)
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(PipelineError::Config("train_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

fn strip_module(m: ModuleSpan) -> Result<ModuleSpan> {
    Ok(ModuleSpan {
        text: strip_comments(&m.text)?,
        ..m
    })
}

/// Load corpus and labels with the configured split.
pub fn load_dataset(
    corpus_dir: &Path,
    labels: &Path,
    split_seed: u64,
    train_fraction: f64,
    strip: bool,
) -> Result<Dataset> {
    let labels = corpus::load_labels(labels)?;
    let mut modules = Vec::new();
    for f in corpus::load_corpus(corpus_dir)? {
        for m in f.modules {
            modules.push(if strip { strip_module(m)? } else { m });
        }
    }
    Ok(Dataset::from_modules(modules, &labels, split_seed, train_fraction)?)
}

/// Train the autoencoder on the train-split `[line; module]` inputs.
pub fn train_reducer(
    dataset: &Dataset,
    inputs: &crate::features::ModuleInputs,
    cfg: &ReducerConfig,
) -> Result<(Autoencoder, TrainLog)> {
    let x = input_matrix(dataset, inputs, |e| e.split == Split::Train);
    Ok(train_autoencoder(x.view(), cfg)?)
}

/// Rows of `table` in `split` that carry a target for `task`.
pub fn task_rows(table: &FeatureTable, task: Task, split: Split) -> Vec<usize> {
    table.select(|i| table.split[i] == split && (task != Task::Wns || table.wns[i].is_some()))
}

fn target(table: &FeatureTable, task: Task, i: usize) -> f64 {
    match task {
        Task::Congestion => table.congestion[i] as u8 as f64,
        Task::Timing => table.timing[i] as u8 as f64,
        Task::Wns => table.wns[i].expect("row selected for WNS"),
    }
}

fn matrix(table: &FeatureTable, rows: &[usize]) -> Array2<f64> {
    let mut x = Array2::zeros((rows.len(), table.width));
    for (r, &i) in rows.iter().enumerate() {
        x.row_mut(r)
            .assign(&ndarray::ArrayView1::from(table.row(i)));
    }
    x
}

pub fn train_head(table: &FeatureTable, task: Task, spec: &HeadSpec, seed: u64) -> Result<Head> {
    let rows = task_rows(table, task, Split::Train);
    if rows.len() < 2 {
        return Err(PipelineError::NoTrainingRows {
            task,
            rows: rows.len(),
        });
    }
    let x = matrix(table, &rows);
    let y: Vec<f64> = rows.iter().map(|&i| target(table, task, i)).collect();
    match (spec.kind, task.is_regression()) {
        (HeadKind::Logistic, true) => Err(PipelineError::Config(
            "the logistic head only supports congestion and timing".into(),
        )),
        (HeadKind::Logistic, false) => Ok(Head::Logistic(train_logistic(
            x.view(),
            &y,
            &LogisticConfig {
                seed,
                ..spec.logistic.clone()
            },
        )?)),
        (HeadKind::Gbdt, _) => Ok(Head::Gbdt(train_gbdt(
            x.view(),
            &y,
            &spec.gbdt_config(task, seed),
        )?)),
    }
}

/// Predictions for the given table rows.
pub fn predict_rows(head: &Head, table: &FeatureTable, rows: &[usize]) -> Result<Vec<LinePrediction>> {
    rows.iter()
        .map(|&i| {
            Ok(LinePrediction {
                key: table.keys[i].clone(),
                score: head.predict(table.row(i))?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub task: Task,
    pub train_lines: usize,
    pub test_lines: usize,
    pub head_rows: usize,
    pub reducer_epochs: usize,
    pub reducer_first_train_mse: Option<f64>,
    pub reducer_final_train_mse: Option<f64>,
    pub reducer_final_validation_mse: Option<f64>,
    pub reducer_best_validation_epoch: Option<usize>,
    pub head_type: String,
    pub head_trees: Option<usize>,
}

fn provider_record(p: &dyn EmbeddingProvider) -> ProviderRecord {
    let kind = match p.kind() {
        ProviderKind::Mock => "mock",
        ProviderKind::File => "file",
        ProviderKind::Remote => "remote",
    };
    ProviderRecord {
        kind: kind.to_owned(),
        identity: p.identity(),
        k: p.k(),
    }
}

/// Full training run: embeddings, autoencoder, head, bundle.
pub fn train(
    cfg: &PipelineConfig,
    dataset: &Dataset,
    provider: &dyn EmbeddingProvider,
) -> Result<(ModelBundle, TrainSummary)> {
    cfg.validate()?;
    let embedder = Embedder::new(provider).with_cache();
    let inputs = collect_inputs(dataset, &embedder)?;
    let reducer_cfg = cfg.reducer_config();
    let (ae, log) = train_reducer(dataset, &inputs, &reducer_cfg)?;
    let table = table_from_latents(dataset, &encode_inputs(&inputs, &ae)?, cfg.context)?;
    let head = train_head(&table, cfg.task, &cfg.head, cfg.seed)?;

    let summary = TrainSummary {
        task: cfg.task,
        train_lines: dataset.count(Split::Train),
        test_lines: dataset.count(Split::Test),
        head_rows: task_rows(&table, cfg.task, Split::Train).len(),
        reducer_epochs: log.epochs,
        reducer_first_train_mse: log.train_mse.first().copied(),
        reducer_final_train_mse: log.train_mse.last().copied(),
        reducer_final_validation_mse: log.validation_mse.last().copied(),
        reducer_best_validation_epoch: log.best_validation_epoch,
        head_type: match head {
            Head::Gbdt(_) => "gbdt".into(),
            Head::Logistic(_) => "logistic".into(),
        },
        head_trees: match &head {
            Head::Gbdt(m) => Some(m.trees.len()),
            Head::Logistic(_) => None,
        },
    };
    let meta = BundleMeta {
        provider: provider_record(provider),
        task: cfg.task,
        p: cfg.context,
        threshold: cfg.threshold(),
        seeds: Seeds {
            split: dataset.split_seed,
            reducer: reducer_cfg.seed,
            head: cfg.seed,
        },
        train_fraction: dataset.train_fraction,
        reducer: reducer_cfg,
        config: serde_json::to_value(cfg).map_err(|e| PipelineError::Config(e.to_string()))?,
        train_summary: serde_json::to_value(&summary)
            .map_err(|e| PipelineError::Config(e.to_string()))?,
        created_unix: creation_time(),
    };
    Ok((ModelBundle::new(meta, ae, head)?, summary))
}

/// Refuse a provider whose identity differs from the bundle's unless allowed.
pub fn check_provider(bundle: &ModelBundle, provider: &dyn EmbeddingProvider, allow: bool) -> Result<()> {
    let identity = provider.identity();
    let recorded = &bundle.manifest.provider.identity;
    if !allow && (identity != *recorded || provider.k() != bundle.manifest.provider.k) {
        return Err(PipelineError::ProviderMismatch {
            bundle: recorded.clone(),
            provider: identity,
        });
    }
    Ok(())
}

/// Test-split metrics for a trained bundle.
pub fn evaluate(
    bundle: &ModelBundle,
    dataset: &Dataset,
    provider: &dyn EmbeddingProvider,
    allow_provider_mismatch: bool,
) -> Result<MetricsReport> {
    check_provider(bundle, provider, allow_provider_mismatch)?;
    let m = &bundle.manifest;
    let embedder = Embedder::new(provider).with_cache();
    let inputs = collect_inputs(dataset, &embedder)?;
    let table = table_from_latents(dataset, &encode_inputs(&inputs, &bundle.autoencoder)?, m.p)?;
    let rows = task_rows(&table, m.task, Split::Test);
    debug_assert_eq!(rows.len(), test_examples(dataset, m.task).count());
    let predictions = predict_rows(&bundle.head, &table, &rows)?;
    let config = serde_json::json!({
        "bundle": {
            "task": m.task,
            "head_type": m.head_type,
            "p": m.p,
            "d": m.d,
            "provider": m.provider,
            "seeds": m.seeds,
            "train_fraction": m.train_fraction,
        },
        "provider_identity": provider.identity(),
    });
    Ok(evaluate_run(&predictions, dataset, m.task, m.threshold, config)?)
}

/// One flagged line from `annotate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub path: String,
    pub module_id: String,
    /// Line in the original source file.
    pub line: usize,
    pub task: Task,
    pub score: f64,
    pub threshold: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predicted_wns: Option<f64>,
}

/// Predict every line of `source` and keep the flagged ones, ordered by
/// line. Flags are `score >= threshold`, or predicted WNS below the
/// threshold for WNS bundles.
pub fn annotate(
    bundle: &ModelBundle,
    path: &str,
    source: &str,
    provider: &dyn EmbeddingProvider,
    strip: bool,
) -> Result<Vec<Diagnostic>> {
    let design_id = Path::new(path)
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("input");
    let modules = corpus::detect_modules(design_id, source)?;
    if modules.is_empty() {
        return Err(PipelineError::Corpus(corpus::CorpusError::MalformedRow {
            row: 0,
            reason: format!("{path}: no module found"),
        }));
    }
    let m = &bundle.manifest;
    let embedder = Embedder::new(provider).with_cache();
    let mut out = Vec::new();
    for module in modules {
        let module = if strip { strip_module(module)? } else { module };
        let z = encode_module(&module_inputs(&module, &embedder)?, &bundle.autoencoder)?;
        for i in 0..z.len() {
            let f = augment_context(&z, i, m.p)?;
            let score = bundle.head.predict(&f.vector)?;
            let (flagged, predicted_wns) = if m.task.is_regression() {
                (score < m.threshold, Some(score))
            } else {
                (classify(score, m.threshold), None)
            };
            if flagged {
                out.push(Diagnostic {
                    path: path.to_owned(),
                    module_id: module.module_id.clone(),
                    line: module.file_line(f.center_ref.line_no),
                    task: m.task,
                    score,
                    threshold: m.threshold,
                    predicted_wns,
                });
            }
        }
    }
    out.sort_by_key(|d| d.line);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate_synthetic_corpus, SyntheticConfig};

    fn small_config(task: Task) -> PipelineConfig {
        PipelineConfig {
            task,
            context: 1,
            provider: ProviderSpec {
                k: 16,
                ..Default::default()
            },
            reducer: ReducerConfig {
                latent_dim: 8,
                hidden: [32, 16],
                epochs: 3,
                batch_size: 32,
                learning_rate: 1e-3,
                ..Default::default()
            },
            head: HeadSpec {
                n_estimators: Some(10),
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn small_dataset(dir: &Path) -> Dataset {
        let corpus = generate_synthetic_corpus(&SyntheticConfig {
            n_modules: 6,
            lines_per_module: 30,
            n_designs: 2,
            seed: 3,
            ..Default::default()
        });
        corpus.write(&dir.join("corpus"), &dir.join("labels.csv")).unwrap();
        load_dataset(&dir.join("corpus"), &dir.join("labels.csv"), 0, 0.8, false).unwrap()
    }

    #[test]
    fn train_evaluate_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small_dataset(dir.path());
        let cfg = small_config(Task::Wns);
        let provider = open_provider(&cfg.provider).unwrap();
        let (bundle, summary) = train(&cfg, &ds, provider.as_ref()).unwrap();
        assert_eq!(summary.train_lines + summary.test_lines, ds.examples.len());
        assert_eq!(bundle.manifest.d, 8);
        assert_eq!(bundle.manifest.input_dim, 32);
        let loaded = ModelBundle::from_bytes(&bundle.to_bytes().unwrap()).unwrap();
        let a = evaluate(&bundle, &ds, provider.as_ref(), false).unwrap();
        let b = evaluate(&loaded, &ds, provider.as_ref(), false).unwrap();
        assert_eq!(a, b);
        assert!(a.overall.line.is_some());
    }

    #[test]
    fn provider_mismatch_refused() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small_dataset(dir.path());
        let cfg = small_config(Task::Congestion);
        let provider = open_provider(&cfg.provider).unwrap();
        let (bundle, _) = train(&cfg, &ds, provider.as_ref()).unwrap();
        let other = MockProvider::new(16, 99).unwrap();
        assert!(matches!(
            evaluate(&bundle, &ds, &other, false),
            Err(PipelineError::ProviderMismatch { .. })
        ));
        assert!(evaluate(&bundle, &ds, &other, true).is_ok());
    }

    #[test]
    fn annotate_keeps_original_line_numbers_when_stripping() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small_dataset(dir.path());
        let mut cfg = small_config(Task::Congestion);
        // an always-flagging threshold makes every line a diagnostic
        cfg.threshold = Some(0.0);
        let provider = open_provider(&cfg.provider).unwrap();
        let (bundle, _) = train(&cfg, &ds, provider.as_ref()).unwrap();
        let src = "// header\n/* block\n   comment */\nmodule top ;\n  wire a ; // note\nendmodule\n";
        let plain = annotate(&bundle, "top.v", src, provider.as_ref(), false).unwrap();
        let stripped = annotate(&bundle, "top.v", src, provider.as_ref(), true).unwrap();
        let lines = |d: &[Diagnostic]| d.iter().map(|x| x.line).collect::<Vec<_>>();
        assert_eq!(lines(&plain), vec![4, 5, 6]);
        assert_eq!(lines(&stripped), vec![4, 5, 6]);
    }

    #[test]
    fn annotate_reports_parse_errors_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small_dataset(dir.path());
        let cfg = small_config(Task::Congestion);
        let provider = open_provider(&cfg.provider).unwrap();
        let (bundle, _) = train(&cfg, &ds, provider.as_ref()).unwrap();
        let err = annotate(&bundle, "x.v", "\n\nmodule a ;\n", provider.as_ref(), false).unwrap_err();
        assert!(err.to_string().contains('3'), "{err}");
    }

    #[test]
    fn head_spec_overrides_preset() {
        let spec = HeadSpec {
            preset: GrowthPreset::LeafLimited,
            num_leaves: Some(7),
            n_estimators: Some(3),
            ..Default::default()
        };
        let c = spec.gbdt_config(Task::Timing, 4);
        assert_eq!(c.growth, Growth::LeafLimited { num_leaves: 7 });
        assert_eq!((c.n_estimators, c.feature_fraction, c.seed), (3, 0.8, 4));
        assert_eq!(c.task, GbdtTask::Binary);
        assert_eq!(spec.gbdt_config(Task::Wns, 0).task, GbdtTask::Regression);
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = PipelineConfig::default();
        assert_eq!(c.threshold(), 0.5);
        assert_eq!(
            PipelineConfig {
                task: Task::Wns,
                ..Default::default()
            }
            .threshold(),
            0.0
        );
        assert!(c.validate().is_ok());
        let bad = PipelineConfig {
            train_fraction: 1.0,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(PipelineError::Config(_))));
    }
}
