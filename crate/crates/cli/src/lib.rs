//! Command implementations behind the `stratsurv` binary.
//!
//! - `simulate`: run a study config, write the metric table and a JSON sidecar
//! - `fit`: analyse a subject-level dataset CSV with one method
//! - `design`: required events and sample size

pub mod config;
pub mod dataset_io;
pub mod report;

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use stratsurv_core::datagen::generate_trial;
use stratsurv_core::design::{sample_size, schoenfeld_events, DesignInputs};
use stratsurv_core::inference::{cox_fit, logrank, AnalysisSpec, Method, TieMethod};
use stratsurv_core::simharness::{run_study, SimConfig};
use stratsurv_core::stats::normal_cdf;
use stratsurv_core::RngStream;
use thiserror::Error;

use crate::config::StudyConfigFile;
use crate::report::{RowOutcome, Sidecar};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

/// Loads a TOML study file, or the config echo from a results sidecar.
pub fn load_config(path: &Path) -> Result<StudyConfigFile, CliError> {
    let source = read_file(path)?;
    if path.extension().is_some_and(|e| e == "json") {
        let sidecar: Sidecar = serde_json::from_str(&source)
            .map_err(|e| CliError::Validation(format!("{}: not a results sidecar: {e}", path.display())))?;
        sidecar.config.study_rows()?;
        return Ok(sidecar.config);
    }
    StudyConfigFile::parse_and_validate(&source)
        .map(|(cfg, _)| cfg)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Default)]
pub struct SimulateOptions {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub dump_datasets: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct SimulateSummary {
    pub rows: Vec<RowOutcome>,
    pub results_path: PathBuf,
    pub sidecar_path: PathBuf,
}

impl SimulateSummary {
    pub fn any_failed(&self) -> bool {
        self.rows.iter().any(RowOutcome::failed)
    }
}

pub fn sidecar_path(output: &Path) -> PathBuf {
    let candidate = output.with_extension("json");
    if candidate == output {
        output.with_extension("sidecar.json")
    } else {
        candidate
    }
}

/// Runs every row of the study and writes the results CSV plus sidecar.
pub fn simulate(config_path: &Path, output: &Path, opts: &SimulateOptions) -> Result<SimulateSummary, CliError> {
    let mut cfg = load_config(config_path)?;
    if let Some(seed) = opts.seed {
        cfg.run.seed = seed;
    }
    let study = cfg.study_rows()?;
    let workers = opts.workers.unwrap_or(cfg.run.workers);

    let configs: Vec<SimConfig> = study.iter().map(|r| r.config.clone()).collect();
    let results = run_study(&configs, workers).map_err(|e| CliError::Runtime(e.to_string()))?;

    let rows: Vec<RowOutcome> = study
        .iter()
        .zip(results)
        .map(|(row, res)| {
            let (metrics, error) = match res {
                Ok(m) => (Some(m), None),
                Err(e) => (None, Some(e.to_string())),
            };
            RowOutcome {
                scenario: row.scenario_label.clone(),
                allocation: row.allocation_label.clone(),
                true_hr: row.config.design.true_hr,
                events: row.config.design.target_events,
                n: row.config.design.sample_size,
                metrics,
                error,
            }
        })
        .collect();

    let mut csv_bytes = Vec::new();
    report::write_results_csv(&mut csv_bytes, &rows)?;
    write_file(output, &csv_bytes)?;
    let sidecar_path = sidecar_path(output);
    let sidecar = Sidecar::new(cfg, rows.clone());
    let json = serde_json::to_vec_pretty(&sidecar).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_file(&sidecar_path, &json)?;

    if let Some(dir) = &opts.dump_datasets {
        dump_datasets(dir, &configs)?;
    }

    Ok(SimulateSummary {
        rows,
        results_path: output.to_path_buf(),
        sidecar_path,
    })
}

/// Writes `row{r}_rep{i}.csv` for every replicate of every row. The
/// datasets are regenerated from the same streams the study used.
pub fn dump_datasets(dir: &Path, configs: &[SimConfig]) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    for (r, cfg) in configs.iter().enumerate() {
        for i in 0..cfg.replicates as u64 {
            let mut rng = RngStream::new(cfg.master_seed, i);
            let ds = generate_trial(&cfg.design, &cfg.scenario, &mut rng).map_err(|e| CliError::Runtime(e.to_string()))?;
            let mut buf = Vec::new();
            dataset_io::write_dataset(&mut buf, &ds)?;
            write_file(&dump_file_name(dir, r, i), &buf)?;
        }
    }
    Ok(())
}

pub fn dump_file_name(dir: &Path, row: usize, replicate: u64) -> PathBuf {
    dir.join(format!("row{row:02}_rep{replicate:05}.csv"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FitReport {
    Cox {
        method: Method,
        ties: TieMethod,
        subjects: usize,
        events: usize,
        hazard_ratio: f64,
        log_hr: f64,
        se: f64,
        wald_z: f64,
        p_one_sided: f64,
        converged: bool,
        iterations: usize,
        coefficients: Vec<f64>,
    },
    LogRank {
        method: Method,
        subjects: usize,
        events: usize,
        observed_minus_expected: f64,
        variance: f64,
        z: f64,
        p_one_sided: f64,
        strata_used: usize,
    },
}

impl FitReport {
    pub fn to_text(&self) -> String {
        match self {
            FitReport::Cox {
                method,
                ties,
                subjects,
                events,
                hazard_ratio,
                log_hr,
                se,
                wald_z,
                p_one_sided,
                converged,
                iterations,
                ..
            } => format!(
                "method:        {method:?} ({ties:?} ties)\n\
                 subjects:      {subjects} ({events} events)\n\
                 hazard ratio:  {hazard_ratio:.6}\n\
                 log HR:        {log_hr:.6}\n\
                 SE(log HR):    {se:.6}\n\
                 Wald z:        {wald_z:.6}\n\
                 one-sided p:   {p_one_sided:.6}\n\
                 converged:     {converged} ({iterations} iterations)\n"
            ),
            FitReport::LogRank {
                method,
                subjects,
                events,
                observed_minus_expected,
                variance,
                z,
                p_one_sided,
                strata_used,
            } => format!(
                "method:        {method:?}\n\
                 subjects:      {subjects} ({events} events)\n\
                 O - E:         {observed_minus_expected:.6}\n\
                 variance:      {variance:.6}\n\
                 z:             {z:.6}\n\
                 one-sided p:   {p_one_sided:.6}\n\
                 strata used:   {strata_used}\n"
            ),
        }
    }
}

/// Analyses a dataset file with one method. Non-converged Cox fits and
/// degenerate tests are runtime errors.
pub fn fit(dataset: &Path, method: Method, ties: TieMethod) -> Result<FitReport, CliError> {
    let file = fs::File::open(dataset).map_err(|e| CliError::Validation(format!("cannot read {}: {e}", dataset.display())))?;
    let records = dataset_io::read_records(file)?;
    fit_records(&records, method, ties)
}

pub fn fit_records(records: &[stratsurv_core::SurvivalRecord], method: Method, ties: TieMethod) -> Result<FitReport, CliError> {
    let subjects = records.len();
    let events = records.iter().filter(|r| r.event).count();
    let runtime = |e: stratsurv_core::Error| CliError::Runtime(e.to_string());
    match method {
        Method::LogRank | Method::StratifiedLogRank => {
            let r = logrank(records, method == Method::StratifiedLogRank).map_err(runtime)?;
            Ok(FitReport::LogRank {
                method,
                subjects,
                events,
                observed_minus_expected: r.observed_minus_expected,
                variance: r.variance,
                z: r.z,
                p_one_sided: r.p_one_sided,
                strata_used: r.strata_used,
            })
        }
        _ => {
            let f = cox_fit(records, &AnalysisSpec::new(method).with_ties(ties)).map_err(runtime)?;
            if !f.converged {
                return Err(CliError::Runtime(format!(
                    "Cox fit did not converge: {}",
                    f.diagnostic.as_deref().unwrap_or("unknown reason")
                )));
            }
            Ok(FitReport::Cox {
                method,
                ties,
                subjects,
                events,
                hazard_ratio: f.hazard_ratio(),
                log_hr: f.treatment_log_hr,
                se: f.treatment_se,
                wald_z: f.wald_z,
                p_one_sided: normal_cdf(f.wald_z),
                converged: f.converged,
                iterations: f.iterations,
                coefficients: f.beta,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DesignReport {
    pub events: usize,
    pub sample_size: usize,
}

pub fn design(inputs: &DesignInputs) -> Result<DesignReport, CliError> {
    let v = |e: stratsurv_core::Error| CliError::Validation(e.to_string());
    let events = schoenfeld_events(inputs).map_err(v)?;
    Ok(DesignReport {
        events,
        sample_size: sample_size(events, inputs.event_fraction).map_err(v)?,
    })
}
