//! End-to-end driver: load or aggregate data, build weights, compare model
//! families, and write artifacts.
//!
//! Everything except the manifest's timing fields is a pure function of
//! the config and the input files, so two runs with the same inputs write
//! byte-identical reports and model files.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{
    coefficient_csv, compare_models, Comparison, EvaluationReport, FittedModel, GridSpec, Protocol,
    Scaling, SplitSpec,
};
use crate::models::{write_json, GstarModelFile};
use crate::penalty::PenaltyKind;
use crate::series::{filter_active_locations, ModelOrder, SpatioTemporalSeries};
use crate::simulate::{
    random_sparse_model, scale_to_snr, simulate, SimulationSpec, SparsityPlan, SupportPattern,
};
use crate::solver::{SolverConfig, StepRule};
use crate::trips::{aggregate_trips, read_trips};
use crate::weights::{build_weights_over, AdjacencyGraph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    /// Location-by-time series CSV.
    pub series: Option<PathBuf>,
    /// Raw `(timestamp, zone)` records; aggregated when `series` is absent.
    pub trips: Option<PathBuf>,
    pub adjacency: Option<PathBuf>,
    pub interval_minutes: u32,
}

impl Default for InputConfig {
    fn default() -> Self {
        Self {
            series: None,
            trips: None,
            adjacency: None,
            interval_minutes: 15,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitOverride {
    pub t1: Option<usize>,
    pub t2: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub max_iter: usize,
    pub tol: f64,
    pub step_safety: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iter: 10_000,
            tol: 1e-8,
            step_safety: 1.0,
        }
    }
}

impl SolverSettings {
    pub fn to_config(&self) -> SolverConfig {
        SolverConfig {
            max_iter: self.max_iter,
            tol: self.tol,
            step: StepRule::FromSpectralNorm {
                safety: self.step_safety,
            },
            record_trajectory: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatticeSpec {
    pub rows: usize,
    pub cols: usize,
    pub k: usize,
}

/// Synthetic data settings for the `simulate` stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    /// Graph to simulate on; a lattice when absent.
    pub adjacency: Option<PathBuf>,
    pub lattice: LatticeSpec,
    pub p: usize,
    pub eta: usize,
    pub density: f64,
    /// Rescale coefficients to this signal-to-noise ratio; `None` keeps
    /// the drawn model.
    pub snr: Option<f64>,
    pub sigma: f64,
    pub t_len: usize,
    pub burn_in: usize,
}

impl Default for LatticeSpec {
    fn default() -> Self {
        Self {
            rows: 7,
            cols: 6,
            k: 39,
        }
    }
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            adjacency: None,
            lattice: LatticeSpec::default(),
            p: 1,
            eta: 2,
            density: 0.5,
            snr: Some(1.0),
            sigma: 1.0,
            t_len: 96,
            burn_in: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: InputConfig,
    /// Minimum nonzero observations to keep a location; defaults to 10%
    /// of the series length, rounded up.
    pub min_nonzero: Option<usize>,
    pub p: usize,
    pub etas: Vec<usize>,
    pub kinds: Vec<PenaltyKind>,
    pub include_var: bool,
    pub scaling: Scaling,
    pub split: SplitOverride,
    pub grid: GridSpec,
    pub solver: SolverSettings,
    pub simulate: SimulationConfig,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: InputConfig::default(),
            min_nonzero: None,
            p: 1,
            etas: (1..=6).collect(),
            kinds: PenaltyKind::ALL.to_vec(),
            include_var: true,
            scaling: Scaling::Global,
            split: SplitOverride::default(),
            grid: GridSpec::default(),
            solver: SolverSettings::default(),
            simulate: SimulationConfig::default(),
            seed: 0,
            out: PathBuf::from("out"),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.etas.is_empty() {
            return Err(Error::InvalidConfig("eta list is empty".into()));
        }
        if self.etas.contains(&0) || self.p == 0 {
            return Err(Error::InvalidOrder(
                "p and every eta must be at least 1".into(),
            ));
        }
        if self.kinds.is_empty() && !self.include_var {
            return Err(Error::InvalidConfig("no model families requested".into()));
        }
        self.solver.to_config().validate()
    }

    fn protocol(&self, len: usize) -> Result<Protocol> {
        let default = SplitSpec::thirds(len)?;
        let split = SplitSpec::new(
            self.split.t1.unwrap_or(default.t1),
            self.split.t2.unwrap_or(default.t2),
            len,
        )?;
        Ok(Protocol {
            split,
            scaling: self.scaling,
            solver: self.solver.to_config(),
            grid: self.grid.clone(),
        })
    }
}

fn require<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    let p = path
        .as_deref()
        .ok_or_else(|| Error::InvalidConfig(format!("missing input path `{what}`")))?;
    if !p.exists() {
        return Err(Error::io(
            p,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        ));
    }
    Ok(p)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_digest(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

/// Files to write, kept in memory until every computation has succeeded.
#[derive(Debug, Default)]
struct Artifacts {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Artifacts {
    fn add(&mut self, rel: impl Into<PathBuf>, bytes: impl Into<Vec<u8>>) {
        self.files.push((rel.into(), bytes.into()));
    }

    fn add_json<T: Serialize>(&mut self, rel: impl Into<PathBuf>, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.add(rel, text);
        Ok(())
    }

    fn commit(&self, out: &Path) -> Result<Vec<(String, String)>> {
        let mut digests = Vec::new();
        for (rel, bytes) in &self.files {
            let path = out.join(rel);
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            digests.push((rel.to_string_lossy().replace('\\', "/"), sha256_hex(bytes)));
        }
        Ok(digests)
    }
}

#[derive(Debug, Clone, Serialize)]
struct RowTiming {
    model: String,
    eta: Option<usize>,
    wall_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config: &'a PipelineConfig,
    inputs: Vec<(String, String)>,
    locations_kept: usize,
    dropped_without_adjacency: Vec<String>,
    dropped_inactive: Vec<String>,
    outputs: Vec<(String, String)>,
    timings: Vec<RowTiming>,
    total_wall_seconds: f64,
}

/// Data ready for modeling: the kept locations, their graph, and where it
/// came from.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub series: SpatioTemporalSeries,
    pub graph: AdjacencyGraph,
    pub dropped_without_adjacency: Vec<String>,
    pub dropped_inactive: Vec<String>,
    pub inputs: Vec<(String, String)>,
}

/// Reads the series (or aggregates trips), drops zones missing from the
/// adjacency file, then drops locations with too few nonzero counts.
pub fn load_data(config: &PipelineConfig) -> Result<PreparedData> {
    let adj_path = require(&config.input.adjacency, "input.adjacency")?;
    let graph = AdjacencyGraph::read(adj_path)?;
    let mut inputs = vec![(adj_path.display().to_string(), file_digest(adj_path)?)];
    let raw = match (&config.input.series, &config.input.trips) {
        (Some(_), _) => {
            let p = require(&config.input.series, "input.series")?;
            inputs.push((p.display().to_string(), file_digest(p)?));
            SpatioTemporalSeries::read_csv(p)?
        }
        (None, Some(_)) => {
            let p = require(&config.input.trips, "input.trips")?;
            inputs.push((p.display().to_string(), file_digest(p)?));
            let trips = read_trips(p)?;
            aggregate_trips(&trips.records, config.input.interval_minutes, None)?.series
        }
        (None, None) => {
            return Err(Error::InvalidConfig(
                "one of input.series or input.trips is required".into(),
            ))
        }
    };

    let (known, unknown): (Vec<usize>, Vec<usize>) =
        (0..raw.k()).partition(|&i| graph.index_of(&raw.locations()[i]).is_some());
    let dropped_without_adjacency: Vec<String> = unknown
        .iter()
        .map(|&i| raw.locations()[i].clone())
        .collect();
    for z in &dropped_without_adjacency {
        log::warn!("zone `{z}` has no adjacency entry; dropped");
    }
    if known.is_empty() {
        return Err(Error::InvalidSeries(
            "no series location appears in the adjacency file".into(),
        ));
    }
    let placed = raw.select_locations(&known);

    let min_nonzero = config
        .min_nonzero
        .unwrap_or_else(|| placed.len().div_ceil(10));
    let series = filter_active_locations(&placed, min_nonzero)?;
    let dropped_inactive: Vec<String> = placed
        .locations()
        .iter()
        .filter(|z| !series.locations().contains(z))
        .cloned()
        .collect();
    if !dropped_inactive.is_empty() {
        log::info!(
            "{} locations with fewer than {min_nonzero} nonzero values dropped",
            dropped_inactive.len()
        );
    }
    Ok(PreparedData {
        series,
        graph,
        dropped_without_adjacency,
        dropped_inactive,
        inputs,
    })
}

/// Which artifacts a run writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Model files and coefficient tables only.
    Fit,
    /// Everything: reports, models, coefficients.
    Evaluate,
}

impl Stage {
    fn name(self) -> &'static str {
        match self {
            Stage::Fit => "fit",
            Stage::Evaluate => "evaluate",
        }
    }
}

#[derive(Debug)]
pub struct PipelineOutcome {
    pub comparison: Comparison,
    pub data: PreparedData,
    /// Relative paths written under the output directory, with SHA-256.
    pub outputs: Vec<(String, String)>,
}

pub fn model_file_name(name: &str, eta: Option<usize>) -> String {
    match eta {
        Some(e) => format!("models/{}_eta{e}.json", name.to_ascii_lowercase()),
        None => format!("models/{}.json", name.to_ascii_lowercase()),
    }
}

/// Runs the full comparison and writes artifacts under `config.out`:
/// `report.txt`, `report.json`, `models/*.json`, `coefficients.csv` and
/// `manifest.json` (the last holding timings, so it is the only file that
/// differs between identical runs).
pub fn run_pipeline(config: &PipelineConfig, stage: Stage) -> Result<PipelineOutcome> {
    let started = Instant::now();
    config.validate()?;
    let data = load_data(config)?;
    let protocol = config.protocol(data.series.len())?;
    let max_eta = *config.etas.iter().max().unwrap_or(&1);
    let weights = build_weights_over(&data.graph, data.series.locations(), max_eta)?;
    for &eta in &config.etas {
        ModelOrder::new(config.p, eta)?;
    }
    let comparison = compare_models(
        &data.series,
        &weights,
        config.p,
        &config.etas,
        &config.kinds,
        config.include_var,
        &protocol,
    )?;

    let mut art = Artifacts::default();
    if stage == Stage::Evaluate {
        art.add("report.txt", comparison.report.to_text());
        art.add_json("report.json", &comparison.report)?;
    }
    let mut coefficients = String::new();
    for entry in &comparison.entries {
        let rel = model_file_name(&entry.row.model, entry.row.eta);
        match &entry.model {
            FittedModel::Gstar(m) => {
                art.add_json(rel, &GstarModelFile::new(m, &data.graph))?;
                let table = coefficient_csv(m, &entry.row.model);
                let body = if coefficients.is_empty() {
                    table.as_str()
                } else {
                    table.split_once('\n').map_or("", |(_, rest)| rest)
                };
                coefficients.push_str(body);
            }
            FittedModel::Var(m) => art.add_json(rel, m)?,
        }
    }
    if !coefficients.is_empty() {
        art.add("coefficients.csv", coefficients);
    }
    let outputs = art.commit(&config.out)?;

    let manifest = Manifest {
        command: stage.name(),
        version: env!("CARGO_PKG_VERSION"),
        seed: config.seed,
        config,
        inputs: data.inputs.clone(),
        locations_kept: data.series.k(),
        dropped_without_adjacency: data.dropped_without_adjacency.clone(),
        dropped_inactive: data.dropped_inactive.clone(),
        outputs: outputs.clone(),
        timings: comparison
            .entries
            .iter()
            .map(|e| RowTiming {
                model: e.row.model.clone(),
                eta: e.row.eta,
                wall_seconds: e.row.wall_seconds,
            })
            .collect(),
        total_wall_seconds: started.elapsed().as_secs_f64(),
    };
    fs::create_dir_all(&config.out).map_err(|e| Error::io(&config.out, e))?;
    write_json(&config.out.join("manifest.json"), &manifest)?;
    Ok(PipelineOutcome {
        comparison,
        data,
        outputs,
    })
}

/// Aggregates `input.trips` and writes `series.csv` under `config.out`.
pub fn run_aggregate(config: &PipelineConfig) -> Result<SpatioTemporalSeries> {
    let path = require(&config.input.trips, "input.trips")?;
    let trips = read_trips(path)?;
    let agg = aggregate_trips(&trips.records, config.input.interval_minutes, None)?;
    fs::create_dir_all(&config.out).map_err(|e| Error::io(&config.out, e))?;
    agg.series.write_csv(&config.out.join("series.csv"))?;
    log::info!(
        "{} records in {} zones x {} bins, {} lines skipped",
        trips.records.len(),
        agg.series.k(),
        agg.series.len(),
        trips.rejected.len()
    );
    Ok(agg.series)
}

/// Draws a random sparse model from `config.simulate` and `config.seed`,
/// simulates it, and writes `series.csv`, `adjacency.txt` and
/// `true_model.json` under `config.out`.
pub fn run_simulate(config: &PipelineConfig) -> Result<SpatioTemporalSeries> {
    let sim = &config.simulate;
    let graph = match &sim.adjacency {
        Some(_) => AdjacencyGraph::read(require(&sim.adjacency, "simulate.adjacency")?)?,
        None => AdjacencyGraph::lattice(sim.lattice.rows, sim.lattice.cols, sim.lattice.k),
    };
    let order = ModelOrder::new(sim.p, sim.eta)?;
    let plan = SparsityPlan {
        support: SupportPattern::Random {
            density: sim.density,
        },
        ..SparsityPlan::default()
    };
    let mut model = random_sparse_model(&graph, order, &plan, config.seed)?;
    if let Some(target) = sim.snr {
        model = scale_to_snr(&model, target)?;
    }
    let mut spec = SimulationSpec::new(
        model.clone(),
        sim.sigma,
        sim.t_len,
        config.seed.wrapping_add(1),
    );
    spec.burn_in = sim.burn_in;
    let series = simulate(&spec)?;

    let mut art = Artifacts::default();
    let mut csv = Vec::new();
    series
        .write_csv_to(&mut csv)
        .map_err(|e| Error::io(Path::new("series.csv"), e))?;
    art.add("series.csv", csv);
    art.add("adjacency.txt", graph.to_text());
    art.add_json("true_model.json", &GstarModelFile::new(&model, &graph))?;
    art.commit(&config.out)?;
    Ok(series)
}

/// Text table for a previously written `report.json`.
pub fn render_report(path: &Path) -> Result<String> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let report: EvaluationReport = serde_json::from_str(&text)?;
    Ok(report.to_text())
}
