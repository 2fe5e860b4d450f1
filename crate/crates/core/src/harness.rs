//! Config-driven experiment runs and report files.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{run_joint_bound, run_overwrite_baseline};
use crate::data::{read_sfv, write_sfv, FeatureDataset};
use crate::error::{Error, Result};
use crate::eval::evaluate_cells;
use crate::metrics::{pattern_usage_stats, summarize, LedgerStep, MetricSummary, MetricsLedger, UsageLog, UsageStats};
use crate::model::{save_checkpoint, StageConfig, StageModel};
use crate::protocol::{build_stream, verify_stream, ProtocolConfig, StreamSummary};
use crate::synthetic::{generate_world, WorldSpec, WorldTruth};

pub const CONFIG_VERSION: u32 = 1;
pub const STAGE_METHOD: &str = "stage";

pub const REPORT_FILE: &str = "report.json";
pub const CURVE_FILE: &str = "curve.csv";
pub const USAGE_FILE: &str = "usage.csv";
pub const LEDGER_FILE: &str = "ledger.json";
pub const CHECKPOINT_FILE: &str = "model.stg";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SUMMARY_CSV_FILE: &str = "summary.csv";
pub const TRAIN_FILE: &str = "train.sfv";
pub const TEST_FILE: &str = "test.sfv";
pub const TRUTH_FILE: &str = "truth.json";

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub train: PathBuf,
    pub test: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineFlags {
    #[serde(default = "yes")]
    pub overwrite: bool,
    #[serde(default = "yes")]
    pub joint: bool,
}

impl Default for BaselineFlags {
    fn default() -> Self {
        Self {
            overwrite: true,
            joint: true,
        }
    }
}

/// Which files `run` writes besides `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportOptions {
    /// `curve.csv` and `usage.csv`.
    #[serde(default = "yes")]
    pub csv: bool,
    #[serde(default = "yes")]
    pub ledger: bool,
    #[serde(default)]
    pub checkpoint: bool,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            csv: true,
            ledger: true,
            checkpoint: false,
        }
    }
}

/// Experiment description. Exactly one of `world` and `data` must be set;
/// relative paths are resolved against the config file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub world: Option<WorldSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataPaths>,
    pub protocol: ProtocolConfig,
    #[serde(default = "default_model")]
    pub model: StageConfig,
    #[serde(default)]
    pub baselines: BaselineFlags,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub report: ReportOptions,
}

fn default_model() -> StageConfig {
    StageConfig::new(0)
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io(e).context(format!("reading {}", path.display())))?;
        let mut cfg = Self::from_json(&text).map_err(|e| e.context(format!("config {}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(d) = cfg.data.as_mut() {
            d.train = base.join(&d.train);
            d.test = base.join(&d.test);
        }
        if let Some(o) = cfg.output_dir.as_mut() {
            *o = base.join(&*o);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        match (&self.world, &self.data) {
            (Some(_), Some(_)) => return Err(Error::Config("set either `world` or `data`, not both".into())),
            (None, None) => return Err(Error::Config("one of `world` or `data` is required".into())),
            _ => {}
        }
        if let Some(w) = &self.world {
            w.validate()?;
            if self.model.dim != 0 && self.model.dim != w.dim {
                return Err(Error::Config(format!("model.dim {} but world.dim {}", self.model.dim, w.dim)));
            }
            if self.protocol.num_stages > w.num_stages {
                return Err(Error::Config(format!(
                    "protocol uses {} stages but the world has {}",
                    self.protocol.num_stages, w.num_stages
                )));
            }
        }
        let mut model = self.model.clone();
        if model.dim == 0 {
            model.dim = self.world.as_ref().map_or(1, |w| w.dim);
        }
        model.validate()
    }

    /// `--seed`: replaces the world and model seeds. The class order keeps its own seed.
    pub fn override_seed(&mut self, seed: u64) {
        if let Some(w) = self.world.as_mut() {
            w.seed = seed;
        }
        self.model.seed = seed;
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub data_s: f64,
    pub phase0_s: f64,
    pub phase1_s: f64,
    pub evaluation_s: f64,
    pub baselines_s: f64,
    pub total_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedEcho {
    pub world: Option<u64>,
    pub model: u64,
    pub class_order: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: u32,
    pub seed: SeedEcho,
    pub config: ExperimentConfig,
    pub stream: StreamSummary,
    /// STAGE first, then enabled baselines.
    pub methods: Vec<MetricSummary>,
    pub pattern_usage: Option<UsageStats>,
    /// Wall-clock seconds; the only field that varies between identical runs.
    pub timing: Timing,
}

impl RunReport {
    pub fn method(&self, name: &str) -> Option<&MetricSummary> {
        self.methods.iter().find(|m| m.method == name)
    }
}

/// Contents of `ledger.json`: everything the reported metrics derive from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedgerFile {
    pub ledgers: Vec<MetricsLedger>,
    #[serde(default)]
    pub usage: Option<UsageLog>,
}

pub struct RunOutput {
    pub report: RunReport,
    pub ledgers: LedgerFile,
    pub model: StageModel,
    pub truth: Option<WorldTruth>,
}

pub struct Datasets {
    pub train: FeatureDataset,
    pub test: FeatureDataset,
    pub truth: Option<WorldTruth>,
}

pub fn load_datasets(cfg: &ExperimentConfig) -> Result<Datasets> {
    if let Some(spec) = &cfg.world {
        let w = generate_world(spec)?;
        return Ok(Datasets {
            train: w.train,
            test: w.test,
            truth: Some(w.truth),
        });
    }
    let paths = cfg
        .data
        .as_ref()
        .ok_or_else(|| Error::Config("one of `world` or `data` is required".into()))?;
    let train = read_sfv(&paths.train).map_err(|e| e.context(format!("reading {}", paths.train.display())))?;
    let test = read_sfv(&paths.test).map_err(|e| e.context(format!("reading {}", paths.test.display())))?;
    if train.dim != test.dim {
        return Err(Error::Config(format!("train dim {} but test dim {}", train.dim, test.dim)));
    }
    Ok(Datasets { train, test, truth: None })
}

/// Runs STAGE and the enabled baselines on one stream, evaluating after every step.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let t_all = Instant::now();
    let mut timing = Timing::default();

    let t = Instant::now();
    let data = load_datasets(cfg)?;
    timing.data_s = t.elapsed().as_secs_f64();

    let mut model_cfg = cfg.model.clone();
    if model_cfg.dim == 0 {
        model_cfg.dim = data.train.dim;
    } else if model_cfg.dim != data.train.dim {
        return Err(Error::Config(format!("model.dim {} but data dim {}", model_cfg.dim, data.train.dim)));
    }
    let stream = build_stream(&cfg.protocol, &data.train)?;
    let check = verify_stream(&stream, &data.train);
    if !check.ok {
        return Err(Error::Protocol(format!("stream failed verification: {}", check.summary())));
    }

    let mut model = StageModel::new(model_cfg)?;
    let mut ledger = MetricsLedger::new(STAGE_METHOD, stream.num_stages);
    for step in &stream.steps {
        let where_ = format!("step {} (task {}, stage {})", step.step_index, step.task_index, step.stage_index);
        let t = Instant::now();
        let trace = model.fit_step(step, &data.train).map_err(|e| e.context(where_.clone()))?;
        let elapsed = t.elapsed().as_secs_f64();
        if trace.phase == 0 {
            timing.phase0_s += elapsed;
        } else {
            timing.phase1_s += elapsed;
        }
        let t = Instant::now();
        let cells = evaluate_cells(&model, &data.test, &step.seen_class_stages).map_err(|e| e.context(where_))?;
        timing.evaluation_s += t.elapsed().as_secs_f64();
        ledger.steps.push(LedgerStep {
            step: step.step_index,
            task: Some(step.task_index),
            stage: Some(step.stage_index),
            cells,
        });
    }

    let mut ledgers = vec![ledger];
    let t = Instant::now();
    if cfg.baselines.overwrite {
        ledgers.push(run_overwrite_baseline(&stream, &data.train, &data.test).map_err(|e| e.context("overwrite baseline"))?);
    }
    if cfg.baselines.joint {
        ledgers.push(run_joint_bound(&data.train, &data.test).map_err(|e| e.context("joint bound"))?);
    }
    timing.baselines_s = t.elapsed().as_secs_f64();

    let usage = (!model.usage.steps.is_empty()).then(|| model.usage.clone());
    let ledger_file = LedgerFile { ledgers, usage };
    let (methods, pattern_usage) = summarize_ledgers(&ledger_file)?;
    timing.total_s = t_all.elapsed().as_secs_f64();

    let report = RunReport {
        version: CONFIG_VERSION,
        seed: SeedEcho {
            world: cfg.world.as_ref().map(|w| w.seed),
            model: model.cfg.seed,
            class_order: cfg.protocol.class_order_seed,
        },
        config: cfg.clone(),
        stream: stream.summary(),
        methods,
        pattern_usage,
        timing,
    };
    Ok(RunOutput {
        report,
        ledgers: ledger_file,
        model,
        truth: data.truth,
    })
}

/// Metric summaries and usage statistics re-derived from ledgers alone.
pub fn summarize_ledgers(file: &LedgerFile) -> Result<(Vec<MetricSummary>, Option<UsageStats>)> {
    if file.ledgers.is_empty() {
        return Err(Error::InvalidArgument("ledger file holds no methods".into()));
    }
    let methods = file
        .ledgers
        .iter()
        .map(|l| summarize(l).map_err(|e| e.context(format!("method {}", l.method))))
        .collect::<Result<Vec<_>>>()?;
    let usage = match &file.usage {
        Some(u) if !u.steps.is_empty() => {
            let all: Vec<usize> = (0..u.steps.len()).collect();
            Some(pattern_usage_stats(u, &all)?)
        }
        _ => None,
    };
    Ok((methods, usage))
}

fn guard_existing(paths: &[PathBuf], force: bool) -> Result<()> {
    if force {
        return Ok(());
    }
    if let Some(p) = paths.iter().find(|p| p.exists()) {
        return Err(Error::InvalidArgument(format!(
            "{} already exists; pass --force to overwrite",
            p.display()
        )));
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Writes `train.sfv`, `test.sfv` and `truth.json`.
pub fn cmd_gen(cfg: &ExperimentConfig, out_dir: &Path, force: bool) -> Result<Vec<PathBuf>> {
    let spec = cfg
        .world
        .as_ref()
        .ok_or_else(|| Error::Config("`gen` needs a `world` section".into()))?;
    let files: Vec<PathBuf> = [TRAIN_FILE, TEST_FILE, TRUTH_FILE].iter().map(|f| out_dir.join(f)).collect();
    guard_existing(&files, force)?;
    let w = generate_world(spec)?;
    fs::create_dir_all(out_dir)?;
    write_sfv(&files[0], &w.train)?;
    write_sfv(&files[1], &w.test)?;
    write_json(&files[2], &w.truth)?;
    Ok(files)
}

/// Runs the experiment and writes the report files.
pub fn cmd_run(cfg: &ExperimentConfig, out_dir: &Path, force: bool) -> Result<RunOutput> {
    let mut names = vec![REPORT_FILE];
    if cfg.report.csv {
        names.extend([CURVE_FILE, USAGE_FILE]);
    }
    if cfg.report.ledger {
        names.push(LEDGER_FILE);
    }
    if cfg.report.checkpoint {
        names.push(CHECKPOINT_FILE);
    }
    let files: Vec<PathBuf> = names.iter().map(|f| out_dir.join(f)).collect();
    guard_existing(&files, force)?;
    let out = run_experiment(cfg)?;
    fs::create_dir_all(out_dir)?;
    write_json(&out_dir.join(REPORT_FILE), &out.report)?;
    if cfg.report.csv {
        write_curve(&out_dir.join(CURVE_FILE), &out.ledgers.ledgers[0])?;
        write_usage(&out_dir.join(USAGE_FILE), out.ledgers.usage.as_ref())?;
    }
    if cfg.report.ledger {
        write_json(&out_dir.join(LEDGER_FILE), &out.ledgers)?;
    }
    if cfg.report.checkpoint {
        save_checkpoint(&out.model, out_dir.join(CHECKPOINT_FILE))?;
    }
    Ok(out)
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Corrupt(format!("csv: {other:?}")),
    }
}

pub fn write_curve(path: &Path, ledger: &MetricsLedger) -> Result<()> {
    let acc = ledger.step_accuracies()?;
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["step", "task", "stage", "accuracy"]).map_err(csv_err)?;
    for (s, a) in ledger.steps.iter().zip(acc) {
        let opt = |v: Option<String>| v.unwrap_or_default();
        w.write_record([
            s.step.to_string(),
            opt(s.task.map(|t| t.to_string())),
            opt(s.stage.map(|t| t.to_string())),
            a.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_usage(path: &Path, usage: Option<&UsageLog>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["step", "pattern_index", "count"]).map_err(csv_err)?;
    for s in usage.map(|u| u.steps.as_slice()).unwrap_or_default() {
        for (j, c) in s.counts.iter().enumerate() {
            w.write_record([s.step.to_string(), j.to_string(), c.to_string()]).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Summary produced by `report`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerSummary {
    pub methods: Vec<MetricSummary>,
    pub pattern_usage: Option<UsageStats>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum LedgerInput {
    File(LedgerFile),
    Single(MetricsLedger),
}

pub fn read_ledger(path: &Path) -> Result<LedgerFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(e).context(format!("reading {}", path.display())))?;
    match serde_json::from_str::<LedgerInput>(&text) {
        Ok(LedgerInput::File(f)) => Ok(f),
        Ok(LedgerInput::Single(l)) => Ok(LedgerFile {
            ledgers: vec![l],
            usage: None,
        }),
        Err(e) => Err(Error::Corrupt(format!("{}: not a ledger file: {e}", path.display()))),
    }
}

/// Re-derives every metric from a ledger file; optionally writes JSON and CSV summaries.
pub fn cmd_report(ledger_path: &Path, out_dir: Option<&Path>, force: bool) -> Result<LedgerSummary> {
    let file = read_ledger(ledger_path)?;
    let (methods, pattern_usage) = summarize_ledgers(&file)?;
    let summary = LedgerSummary { methods, pattern_usage };
    if let Some(dir) = out_dir {
        let files = [dir.join(SUMMARY_FILE), dir.join(SUMMARY_CSV_FILE)];
        guard_existing(&files, force)?;
        fs::create_dir_all(dir)?;
        write_json(&files[0], &summary)?;
        write_summary_csv(&files[1], &summary.methods)?;
    }
    Ok(summary)
}

pub fn write_summary_csv(path: &Path, methods: &[MetricSummary]) -> Result<()> {
    let stages = methods.iter().map(|m| m.final_stage_accuracy.len()).max().unwrap_or(0);
    let mut header = vec!["method".to_string(), "avg_acc".into(), "final_acc".into()];
    header.extend((0..stages).map(|s| format!("final_acc_stage{s}")));
    header.extend(["inter_f".to_string(), "intra_f".into()]);
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(&header).map_err(csv_err)?;
    for m in methods {
        let mut row = vec![m.method.clone(), m.avg_incremental_accuracy.to_string(), m.final_accuracy.to_string()];
        row.extend((0..stages).map(|s| {
            m.final_stage_accuracy
                .get(s)
                .copied()
                .flatten()
                .map(|a| a.to_string())
                .unwrap_or_default()
        }));
        row.extend([m.inter_forgetting.to_string(), m.intra_forgetting.to_string()]);
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// `report.json` as a JSON value without the wall-clock fields.
pub fn report_without_timing(report: &RunReport) -> Result<serde_json::Value> {
    let mut v = serde_json::to_value(report)?;
    if let Some(o) = v.as_object_mut() {
        o.remove("timing");
    }
    Ok(v)
}
