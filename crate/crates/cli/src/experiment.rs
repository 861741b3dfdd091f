//! End-to-end experiments: model selection on validation bags, refitting,
//! evaluation on test bags, and the files describing a run.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use kdey_core::protocol::{evaluate_bags, generate_bags, grid_search, AppBag, BagOutcome, Loss};
use kdey_core::quantifiers::ClassifierCache;
use kdey_core::{build_quantifier, Dataset, Hyperparameters, MethodKind, MethodSettings, ProtocolConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::ExperimentConfig;
use crate::dataset::{align_labels, generate_synthetic, load_csv, stratified_split};
use crate::error::{io_err, CliError, Result};

pub const RESULTS_FILE: &str = "results.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TABLE_FILE: &str = "table.txt";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Training, validation and test data of a run.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    pub validation: Dataset,
    pub test_pool: Dataset,
    pub dataset_id: String,
}

impl PreparedData {
    /// Training plus validation rows, the data the selected model is refit on.
    pub fn full_train(&self) -> Result<Dataset> {
        Ok(self.train.concat(&self.validation)?)
    }
}

pub fn prepare_data(config: &ExperimentConfig) -> Result<PreparedData> {
    let d = &config.data;
    let (full, test_pool, dataset_id) = match (&d.synthetic, &d.train, &d.test) {
        (Some(spec), _, _) => {
            let (train, pool) = generate_synthetic(spec, config.seed)?;
            (train, pool, "synthetic".to_string())
        }
        (None, Some(train), Some(test)) => {
            let train = load_csv(train, &d.label_column)?;
            let pool = align_labels(&train, &load_csv(test, &d.label_column)?)?;
            let id = d.train.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
            (train.dataset, pool, id)
        }
        _ => return Err(CliError::Config("no data source".into())),
    };
    let (train, validation) = stratified_split(&full, d.validation_fraction, config.seed)?;
    Ok(PreparedData {
        train,
        validation,
        test_pool,
        dataset_id,
    })
}

fn effective_settings(config: &ExperimentConfig) -> MethodSettings {
    MethodSettings {
        seed: config.seed,
        ..config.settings
    }
}

fn validation_protocol(config: &ExperimentConfig) -> Result<ProtocolConfig> {
    let p = &config.protocol;
    Ok(ProtocolConfig::new(p.validation_bags, p.validation_bag_size, config.seed)?)
}

fn test_protocol(config: &ExperimentConfig) -> Result<ProtocolConfig> {
    let p = &config.protocol;
    Ok(ProtocolConfig::new(p.test_bags, p.test_bag_size, config.seed)?.test_stream())
}

/// One line of the results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub method: String,
    pub bag_index: usize,
    pub true_prevalence: Vec<f64>,
    pub estimated_prevalence: Vec<f64>,
    pub ae: f64,
    pub rae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    pub hyperparameters: Hyperparameters,
    pub validation_loss: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub method: String,
    pub error: Option<String>,
    pub hyperparameters: Option<Hyperparameters>,
    pub validation_loss: Option<f64>,
    pub mae: Option<f64>,
    pub mrae: Option<f64>,
    pub bandwidth_extended: bool,
    pub grid: Vec<GridRecord>,
    #[serde(skip)]
    pub per_bag: Vec<BagOutcome>,
}

impl MethodOutcome {
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }

    fn failed(method: MethodKind, error: String, grid: Vec<GridRecord>) -> Self {
        Self {
            method: method.name().into(),
            error: Some(error),
            hyperparameters: None,
            validation_loss: None,
            mae: None,
            mrae: None,
            bandwidth_extended: false,
            grid,
            per_bag: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub dataset: String,
    pub loss: Loss,
    pub winner: Option<String>,
    pub methods: Vec<MethodOutcome>,
}

impl RunSummary {
    pub fn all_failed(&self) -> bool {
        self.methods.iter().all(|m| !m.succeeded())
    }

    pub fn method(&self, name: &str) -> Option<&MethodOutcome> {
        self.methods.iter().find(|m| m.method == name)
    }
}

/// Grid extended by 50% beyond its largest bandwidth, in steps of the last
/// spacing of the sorted grid.
pub fn extended_bandwidths(grid: &[f64]) -> Vec<f64> {
    let mut values = grid.to_vec();
    values.sort_by(f64::total_cmp);
    values.dedup();
    if values.len() < 2 {
        return Vec::new();
    }
    let max = values[values.len() - 1];
    let step = max - values[values.len() - 2];
    let mut extra = Vec::new();
    let mut k = 1.0;
    while max + k * step <= 1.5 * max + 1e-12 {
        // Rounded to keep the printed values tidy.
        extra.push(((max + k * step) * 1e9).round() / 1e9);
        k += 1.0;
    }
    extra
}

struct Selection {
    grid: Vec<Hyperparameters>,
    records: Vec<GridRecord>,
    best: Hyperparameters,
    best_score: f64,
    quantifier: Box<dyn kdey_core::Quantifier>,
}

fn select(
    kind: MethodKind,
    grid: Vec<Hyperparameters>,
    data: &PreparedData,
    config: &ExperimentConfig,
    cache: &Arc<ClassifierCache>,
) -> std::result::Result<Selection, (String, Vec<GridRecord>)> {
    let settings = effective_settings(config);
    let builder = |hp: &Hyperparameters| build_quantifier(kind, hp, &settings, Some(cache.clone()));
    let val = validation_protocol(config).map_err(|e| (e.to_string(), Vec::new()))?;
    let outcome = grid_search(
        builder,
        &grid,
        &data.train,
        &data.validation,
        &val,
        config.loss,
        config.jobs > 1,
    );
    match outcome {
        Ok(gs) => {
            let records = gs
                .outcomes
                .iter()
                .map(|o| GridRecord {
                    hyperparameters: grid[o.index],
                    validation_loss: o.result.as_ref().ok().copied(),
                    error: o.result.as_ref().err().map(|e| e.to_string()),
                })
                .collect();
            Ok(Selection {
                best: gs.best,
                best_score: gs.best_score,
                quantifier: gs.quantifier,
                records,
                grid,
            })
        }
        Err(e) => {
            let records = grid
                .iter()
                .map(|hp| GridRecord {
                    hyperparameters: *hp,
                    validation_loss: None,
                    error: Some(e.to_string()),
                })
                .collect();
            Err((e.to_string(), records))
        }
    }
}

fn run_method(
    kind: MethodKind,
    grid: Vec<Hyperparameters>,
    data: &PreparedData,
    test_bags: &[AppBag],
    config: &ExperimentConfig,
    cache: &Arc<ClassifierCache>,
) -> MethodOutcome {
    let mut selection = match select(kind, grid, data, config, cache) {
        Ok(s) => s,
        Err((e, records)) => return MethodOutcome::failed(kind, e, records),
    };
    let mut extended = false;
    if kind.uses_bandwidth() {
        let hs: Vec<f64> = selection.grid.iter().filter_map(|p| p.bandwidth).collect();
        let max = hs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let distinct = hs.iter().any(|h| *h != max);
        if distinct && selection.best.bandwidth == Some(max) {
            log::warn!("{kind}: selected bandwidth {max} is the largest in the grid");
            let extra = extended_bandwidths(&hs);
            if config.extend_bandwidth && !extra.is_empty() {
                let mut grid = selection.grid.clone();
                for h in extra {
                    grid.extend(
                        selection
                            .grid
                            .iter()
                            .filter(|p| p.bandwidth == Some(max))
                            .map(|p| Hyperparameters { bandwidth: Some(h), ..*p }),
                    );
                }
                match select(kind, grid, data, config, cache) {
                    Ok(s) => {
                        selection = s;
                        extended = true;
                    }
                    Err((e, records)) => return MethodOutcome::failed(kind, e, records),
                }
            }
        }
    }
    let test_size = config.protocol.test_bag_size;
    match evaluate_bags(selection.quantifier.as_ref(), test_bags, test_size, config.jobs > 1) {
        Ok(report) => MethodOutcome {
            method: kind.name().into(),
            error: None,
            hyperparameters: Some(selection.best),
            validation_loss: Some(selection.best_score),
            mae: Some(report.mean_ae),
            mrae: Some(report.mean_rae),
            bandwidth_extended: extended,
            grid: selection.records,
            per_bag: report.per_bag,
        },
        Err(e) => MethodOutcome::failed(kind, e.to_string(), selection.records),
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(io_err(path))
}

/// Runs every configured method and writes the result files into
/// `config.out`. Failures of individual methods are recorded in the summary.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunSummary> {
    config.validate()?;
    let data = prepare_data(config)?;
    let test_bags = generate_bags(&data.test_pool, &test_protocol(config)?)?;
    let cache = Arc::new(ClassifierCache::new());
    let methods: Vec<MethodOutcome> = config
        .methods
        .iter()
        .map(|entry| {
            log::info!("running {}", entry.name);
            let outcome = run_method(entry.name, entry.grid.points(entry.name), &data, &test_bags, config, &cache);
            if let Some(e) = &outcome.error {
                log::error!("{} failed: {e}", entry.name);
            }
            outcome
        })
        .collect();
    let loss_of = |m: &MethodOutcome| match config.loss {
        Loss::Mae => m.mae,
        Loss::Mrae => m.mrae,
    };
    let winner = methods
        .iter()
        .filter_map(|m| loss_of(m).map(|l| (l, m)))
        .fold(None::<(f64, &MethodOutcome)>, |best, (l, m)| match best {
            Some((b, _)) if b <= l => best,
            _ => Some((l, m)),
        })
        .map(|(_, m)| m.method.clone());
    let summary = RunSummary {
        dataset: data.dataset_id.clone(),
        loss: config.loss,
        winner,
        methods,
    };
    write_outputs(config, &summary)?;
    Ok(summary)
}

fn write_outputs(config: &ExperimentConfig, summary: &RunSummary) -> Result<()> {
    let out = &config.out;
    fs::create_dir_all(out).map_err(io_err(out))?;

    let results_path = out.join(RESULTS_FILE);
    let mut lines = Vec::new();
    for m in &summary.methods {
        for b in &m.per_bag {
            let record = ResultRecord {
                method: m.method.clone(),
                bag_index: b.bag_index,
                true_prevalence: b.true_prevalence.as_slice().to_vec(),
                estimated_prevalence: b.estimated_prevalence.as_slice().to_vec(),
                ae: b.ae,
                rae: b.rae,
            };
            serde_json::to_writer(&mut lines, &record)?;
            lines.push(b'\n');
        }
    }
    write_file(&results_path, &lines)?;
    validate_results_file(&results_path)?;

    write_file(&out.join(SUMMARY_FILE), &serde_json::to_vec_pretty(summary)?)?;
    write_file(&out.join(TABLE_FILE), render_table(summary).as_bytes())?;

    let manifest = serde_json::json!({
        "tool": "kdey",
        "cli_version": env!("CARGO_PKG_VERSION"),
        "core_version": kdey_core::VERSION,
        "seed": config.seed,
        "config": config,
    });
    write_file(&out.join(MANIFEST_FILE), &serde_json::to_vec_pretty(&manifest)?)
}

/// Formats `v` with six significant digits in positional notation.
pub fn six_significant(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v:.5}");
    }
    let magnitude = v.abs().log10().floor() as i32;
    let decimals = (5 - magnitude).max(0) as usize;
    format!("{v:.decimals$}")
}

pub fn render_table(summary: &RunSummary) -> String {
    let width = summary.methods.iter().map(|m| m.method.len()).max().unwrap_or(6).max(6) + 2;
    let mut s = format!("{:<width$}  {:>12}  {:>12}\n", "method", "MAE", "MRAE");
    for m in &summary.methods {
        let marked = if summary.winner.as_deref() == Some(m.method.as_str()) {
            format!("{} *", m.method)
        } else {
            m.method.clone()
        };
        match (m.mae, m.mrae) {
            (Some(a), Some(r)) => {
                s.push_str(&format!("{marked:<width$}  {:>12}  {:>12}\n", six_significant(a), six_significant(r)));
            }
            _ => s.push_str(&format!(
                "{marked:<width$}  failed: {}\n",
                m.error.as_deref().unwrap_or("unknown error")
            )),
        }
    }
    s.push_str(&format!("\n* lowest {}\n", summary.loss.to_string().to_uppercase()));
    s
}

const RECORD_FIELDS: [&str; 6] = ["method", "bag_index", "true_prevalence", "estimated_prevalence", "ae", "rae"];

/// Checks one results line against the documented record schema.
pub fn validate_record(value: &Value) -> std::result::Result<(), String> {
    let obj = value.as_object().ok_or("record is not an object")?;
    if obj.len() != RECORD_FIELDS.len() || RECORD_FIELDS.iter().any(|f| !obj.contains_key(*f)) {
        return Err(format!("fields must be exactly {RECORD_FIELDS:?}"));
    }
    if !obj["method"].is_string() {
        return Err("method must be a string".into());
    }
    if !obj["bag_index"].is_u64() {
        return Err("bag_index must be a non-negative integer".into());
    }
    let prevalence = |key: &str| -> std::result::Result<Vec<f64>, String> {
        let arr = obj[key].as_array().ok_or(format!("{key} must be an array"))?;
        let v: Vec<f64> = arr
            .iter()
            .map(|x| x.as_f64().ok_or(format!("{key} must hold numbers")))
            .collect::<std::result::Result<_, _>>()?;
        if v.is_empty() || v.iter().any(|x| *x < 0.0) || (v.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return Err(format!("{key} is not a probability vector"));
        }
        Ok(v)
    };
    if prevalence("true_prevalence")?.len() != prevalence("estimated_prevalence")?.len() {
        return Err("prevalence vectors differ in length".into());
    }
    for key in ["ae", "rae"] {
        match obj[key].as_f64() {
            Some(x) if x >= 0.0 => {}
            _ => return Err(format!("{key} must be a non-negative number")),
        }
    }
    Ok(())
}

/// Validates every line of a results file; returns the number of records.
pub fn validate_results_file(path: &Path) -> Result<usize> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut n = 0;
    for (i, line) in text.lines().enumerate() {
        let value: Value = serde_json::from_str(line).map_err(|e| CliError::Schema {
            line: i + 1,
            message: e.to_string(),
        })?;
        validate_record(&value).map_err(|message| CliError::Schema { line: i + 1, message })?;
        n += 1;
    }
    Ok(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    H,
    B,
}

impl FromStr for SweepAxis {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "h" | "bandwidth" => Ok(SweepAxis::H),
            "b" | "bins" => Ok(SweepAxis::B),
            other => Err(CliError::Config(format!("unknown sweep axis `{other}`"))),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::H => "h",
            SweepAxis::B => "b",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub mae: Option<f64>,
    pub mrae: Option<f64>,
    pub error: Option<String>,
}

#[allow(clippy::too_many_arguments)]
fn sweep_point(
    kind: MethodKind,
    hp: &Hyperparameters,
    settings: &MethodSettings,
    train: &Dataset,
    bags: &[AppBag],
    bag_size: usize,
    parallel: bool,
    cache: &Arc<ClassifierCache>,
) -> kdey_core::Result<(f64, f64)> {
    let mut q = build_quantifier(kind, hp, settings, Some(cache.clone()))?;
    q.fit(train)?;
    let report = evaluate_bags(q.as_ref(), bags, bag_size, parallel)?;
    Ok((report.mean_ae, report.mean_rae))
}

/// MAE and MRAE of one method at each axis value, all evaluated on the
/// same test bags after fitting on training plus validation data. Other
/// hyperparameters come from the first point of the method's configured
/// grid, or the defaults if the method is not configured.
pub fn sensitivity_sweep(
    config: &ExperimentConfig,
    kind: MethodKind,
    axis: SweepAxis,
    values: &[f64],
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(CliError::Config("sweep needs at least one value".into()));
    }
    let applicable = match axis {
        SweepAxis::H => kind.uses_bandwidth(),
        SweepAxis::B => kind.uses_bins(),
    };
    if !applicable {
        return Err(CliError::Config(format!("{kind} has no `{axis}` hyperparameter")));
    }
    let data = prepare_data(config)?;
    let full = data.full_train()?;
    let bags = generate_bags(&data.test_pool, &test_protocol(config)?)?;
    let base = config
        .methods
        .iter()
        .find(|m| m.name == kind)
        .and_then(|m| m.grid.points(kind).first().copied())
        .unwrap_or_default();
    let settings = effective_settings(config);
    let cache = Arc::new(ClassifierCache::new());
    let rows = values
        .iter()
        .map(|&value| {
            let hp = match axis {
                SweepAxis::H => Hyperparameters {
                    bandwidth: Some(value),
                    ..base
                },
                SweepAxis::B => {
                    if value.fract() != 0.0 || value < 0.0 {
                        return SweepRow {
                            value,
                            mae: None,
                            mrae: None,
                            error: Some("bin counts must be whole numbers".into()),
                        };
                    }
                    Hyperparameters {
                        bins: Some(value as usize),
                        ..base
                    }
                }
            };
            let size = config.protocol.test_bag_size;
            match sweep_point(kind, &hp, &settings, &full, &bags, size, config.jobs > 1, &cache) {
                Ok((mae, mrae)) => SweepRow {
                    value,
                    mae: Some(mae),
                    mrae: Some(mrae),
                    error: None,
                },
                Err(e) => SweepRow {
                    value,
                    mae: None,
                    mrae: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(rows)
}

/// Writes `sweep_<axis>.tsv` and `sweep_<axis>.json` into `out`.
pub fn write_sweep(out: &Path, kind: MethodKind, axis: SweepAxis, rows: &[SweepRow]) -> Result<PathBuf> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let mut tsv = format!("{axis}\tMAE\tMRAE\n");
    for r in rows {
        match (r.mae, r.mrae) {
            (Some(a), Some(m)) => tsv.push_str(&format!("{}\t{}\t{}\n", r.value, six_significant(a), six_significant(m))),
            _ => tsv.push_str(&format!("{}\tNA\tNA\n", r.value)),
        }
    }
    let path = out.join(format!("sweep_{axis}.tsv"));
    let mut f = fs::File::create(&path).map_err(io_err(&path))?;
    f.write_all(tsv.as_bytes()).map_err(io_err(&path))?;
    let json = serde_json::json!({ "method": kind.name(), "axis": axis, "rows": rows });
    write_file(&out.join(format!("sweep_{axis}.json")), &serde_json::to_vec_pretty(&json)?)?;
    Ok(path)
}
