//! Filter runs over (kernel, N, seed) cells, oracle scoring and persistence.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use msfilter_core::analysis::cost_report;
use msfilter_core::kernel::{KernelChoice, KernelSpec};
use msfilter_core::oracle::{joint_kalman_filter, kalman_filter, reference_filter_bruteforce, GaussianBelief};
use msfilter_core::rng::derive_seed;
use msfilter_core::{run_filter, BenchmarkModel};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, OracleChoice};
use crate::data::{DataCache, DataKey, SyntheticData};
use crate::error::HarnessError;
use crate::output::{render_csv, write_atomic, CsvRow};

pub const SCHEMA_VERSION: u32 = 1;

const DATA_STREAM: u64 = 1;
const FILTER_STREAM: u64 = 2;
const REFERENCE_STREAM: u64 = 3;

/// Oracle values of the slow mean at `k = 0..=T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleSeries {
    pub kind: OracleChoice,
    pub mean: Vec<f64>,
    /// Monte Carlo standard error; zero for exact oracles.
    pub se: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub measured: u64,
    pub formula: u64,
    pub matches: bool,
}

/// Everything measured for one (kernel, N, seed) cell; vectors run over `k = 1..=T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub kernel: String,
    pub kernel_spec: String,
    pub n_particles: usize,
    pub seed: u64,
    pub data_seed: u64,
    pub filter_seed: u64,
    pub warnings: Vec<String>,
    pub estimate_mean: Vec<f64>,
    pub estimate_second_moment: Vec<f64>,
    pub oracle_mean: Vec<f64>,
    pub oracle_se: Vec<f64>,
    pub abs_error: Vec<f64>,
    pub rv_count_step: Vec<u64>,
    pub rv_count_cum: Vec<u64>,
    pub wall_ms: Vec<f64>,
    pub fallback_steps: Vec<usize>,
    /// Meaningful under the default `1/√N` tuning only.
    pub cost: CostSummary,
}

impl CellRecord {
    /// Mean absolute error over `k = 1..=T`.
    pub fn time_averaged_error(&self) -> f64 {
        self.abs_error.iter().sum::<f64>() / self.abs_error.len() as f64
    }

    pub fn rows(&self, experiment_id: &str, model: &str, epsilon: f64, record_wall: bool) -> Vec<CsvRow> {
        (0..self.estimate_mean.len())
            .map(|i| CsvRow {
                experiment_id: experiment_id.to_string(),
                model: model.to_string(),
                kernel: self.kernel.clone(),
                epsilon,
                n: self.n_particles,
                seed: self.seed,
                k: i + 1,
                estimate_mean: self.estimate_mean[i],
                oracle_mean: self.oracle_mean[i],
                abs_error: self.abs_error[i],
                rv_count_step: self.rv_count_step[i],
                rv_count_cum: self.rv_count_cum[i],
                wall_ms: if record_wall { self.wall_ms[i] } else { 0.0 },
            })
            .collect()
    }
}

/// Which command produced a record, so a rerun takes the same path.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordMode {
    #[default]
    Run,
    CompareEqualN,
    CompareEqualCost,
}

/// Self-contained result of one experiment; re-runnable via [`rerun_record`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub library_version: String,
    pub experiment_id: String,
    pub mode: RecordMode,
    pub config: ExperimentConfig,
    pub oracle: OracleChoice,
    pub seeds: Vec<u64>,
    pub cells: Vec<CellRecord>,
    pub wall_ms_total: f64,
}

impl RunRecord {
    pub fn csv_rows(&self) -> Vec<CsvRow> {
        let c = &self.config;
        self.cells
            .iter()
            .flat_map(|cell| cell.rows(&self.experiment_id, &c.model.name, c.model.epsilon, c.record_wall_time))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub record: RunRecord,
    pub csv_path: PathBuf,
    pub record_path: PathBuf,
}

/// `name` from the config, or a digest of the fields that affect results.
pub fn experiment_id(config: &ExperimentConfig) -> String {
    if let Some(name) = &config.name {
        return name.clone();
    }
    let mut c = config.clone();
    c.out_dir = PathBuf::new();
    c.threads = None;
    let text = serde_json::to_string(&c).expect("config serializes");
    let hex: String = Sha256::digest(text.as_bytes()).iter().take(6).map(|b| format!("{b:02x}")).collect();
    format!("exp-{hex}")
}

pub fn data_seed(seed: u64) -> u64 {
    derive_seed(seed, &[DATA_STREAM])
}

pub fn filter_seed(seed: u64, n: usize) -> u64 {
    derive_seed(seed, &[FILTER_STREAM, n as u64])
}

/// Runs `f` on a dedicated pool when `threads` is set.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, HarnessError> {
    match threads {
        None => Ok(f()),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| HarnessError::config("threads", e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// Shared state for running many cells of one configuration.
pub struct Runner<'a> {
    pub config: &'a ExperimentConfig,
    pub bundle: BenchmarkModel,
    pub oracle: OracleChoice,
    cache: DataCache,
    data: BTreeMap<u64, SyntheticData>,
    oracles: BTreeMap<u64, OracleSeries>,
}

impl<'a> Runner<'a> {
    pub fn new(config: &'a ExperimentConfig) -> Result<Self, HarnessError> {
        let bundle = config.validate()?;
        let oracle = config.resolved_oracle(&bundle);
        Ok(Self {
            config,
            bundle,
            oracle,
            cache: DataCache::new(config.out_dir.join("cache")),
            data: BTreeMap::new(),
            oracles: BTreeMap::new(),
        })
    }

    fn data_key(&self, seed: u64) -> DataKey<'a> {
        let c = self.config;
        DataKey {
            model: &c.model.name,
            epsilon: c.model.epsilon,
            sigma1: c.model.sigma1,
            obs_noise_sd: c.model.obs_noise_sd,
            horizon: c.horizon,
            fine_step: c.fine_step(),
            seed: data_seed(seed),
        }
    }

    /// Cache file holding the truth run of `seed`.
    pub fn data_path(&self, seed: u64) -> PathBuf {
        self.cache.path_for(&self.data_key(seed))
    }

    pub fn data(&mut self, seed: u64) -> Result<&SyntheticData, HarnessError> {
        if !self.data.contains_key(&seed) {
            let d = self.cache.get_or_generate(&self.bundle, &self.data_key(seed))?;
            self.data.insert(seed, d);
        }
        Ok(&self.data[&seed])
    }

    fn oracle_series(&mut self, seed: u64) -> Result<OracleSeries, HarnessError> {
        if let Some(o) = self.oracles.get(&seed) {
            return Ok(o.clone());
        }
        let data = self.data(seed)?.clone();
        let ys = data.scalar_observations();
        let beliefs = |bs: Vec<GaussianBelief>| bs.iter().map(|b| b.mean).collect::<Vec<_>>();
        let series = match self.oracle {
            OracleChoice::Kalman => {
                let lp = self.bundle.linear.expect("validated linear model");
                let prior = GaussianBelief {
                    mean: lp.slow_prior_mean,
                    variance: lp.slow_prior_var,
                };
                let mean = beliefs(kalman_filter(1.0, lp.sigma1, prior, lp.obs_noise_sd, &ys)?);
                OracleSeries {
                    kind: self.oracle,
                    se: vec![0.0; mean.len()],
                    mean,
                }
            }
            OracleChoice::JointKalman => {
                let lp = self.bundle.linear.expect("validated linear model");
                let mean = beliefs(joint_kalman_filter(&lp, &ys)?);
                OracleSeries {
                    kind: self.oracle,
                    se: vec![0.0; mean.len()],
                    mean,
                }
            }
            OracleChoice::Reference | OracleChoice::Auto => {
                let r = self.config.reference;
                let kernel = KernelSpec::Averaged { step: r.step }
                    .build(&self.bundle)
                    .map_err(|e| HarnessError::config("reference", e.to_string()))?;
                let reference = reference_filter_bruteforce(
                    kernel.as_ref(),
                    &self.bundle.multiscale.mu1,
                    &self.bundle.observation,
                    &data.observations,
                    r.n_particles,
                    r.replicates,
                    derive_seed(seed, &[REFERENCE_STREAM]),
                    |x| x[0],
                )?;
                OracleSeries {
                    kind: OracleChoice::Reference,
                    mean: reference.mean,
                    se: reference.se,
                }
            }
        };
        self.oracles.insert(seed, series.clone());
        Ok(series)
    }

    /// Runs one filter and scores it against the oracle.
    pub fn run_cell(&mut self, choice: KernelChoice, n: usize, seed: u64) -> Result<CellRecord, HarnessError> {
        let spec = self.config.kernel_spec(choice, n)?;
        let kernel = spec
            .build(&self.bundle)
            .map_err(|e| HarnessError::config("kernels", e.to_string()))?;
        let data = self.data(seed)?.clone();
        let oracle = self.oracle_series(seed)?;
        let fseed = filter_seed(seed, n);
        let traj = run_filter(
            kernel.as_ref(),
            &self.bundle.multiscale.mu1,
            &self.bundle.observation,
            &data.observations,
            n,
            fseed,
            self.config.degenerate_weights.into(),
        )?;
        let means = traj.estimates(|x| x[0])?;
        let second = traj.estimates(|x| x[0] * x[0])?;
        let t = data.horizon();
        let report = cost_report(&traj, self.bundle.multiscale.p, self.bundle.multiscale.q, n, choice);
        Ok(CellRecord {
            kernel: choice.as_str().to_string(),
            kernel_spec: format!("{spec:?}"),
            n_particles: n,
            seed,
            data_seed: data_seed(seed),
            filter_seed: fseed,
            warnings: kernel.warnings(),
            estimate_mean: means[1..].to_vec(),
            estimate_second_moment: second[1..].to_vec(),
            oracle_mean: oracle.mean[1..].to_vec(),
            oracle_se: oracle.se[1..].to_vec(),
            abs_error: (1..=t).map(|k| (means[k] - oracle.mean[k]).abs()).collect(),
            rv_count_step: traj.steps.iter().map(|s| s.rv_count).collect(),
            rv_count_cum: traj.steps.iter().map(|s| s.rv_cumulative).collect(),
            wall_ms: traj.steps.iter().map(|s| s.wall.as_secs_f64() * 1e3).collect(),
            fallback_steps: traj.steps.iter().filter(|s| s.fallback_used).map(|s| s.k).collect(),
            cost: CostSummary {
                measured: report.measured,
                formula: report.formula,
                matches: report.matches,
            },
        })
    }
}

/// All (kernel, N, seed) cells of `config`, in kernel, N, seed order.
pub fn run_cells(config: &ExperimentConfig) -> Result<RunRecord, HarnessError> {
    let started = Instant::now();
    let choices = config.kernel_choices()?;
    let mut runner = Runner::new(config)?;
    let cells = with_threads(config.threads, || -> Result<Vec<CellRecord>, HarnessError> {
        let mut cells = Vec::new();
        for &choice in &choices {
            for &n in &config.n_particles {
                for &seed in &config.seeds {
                    cells.push(runner.run_cell(choice, n, seed)?);
                }
            }
        }
        Ok(cells)
    })??;
    Ok(RunRecord {
        schema_version: SCHEMA_VERSION,
        library_version: env!("CARGO_PKG_VERSION").to_string(),
        experiment_id: experiment_id(config),
        mode: RecordMode::Run,
        config: config.clone(),
        oracle: runner.oracle,
        seeds: config.seeds.clone(),
        cells,
        wall_ms_total: started.elapsed().as_secs_f64() * 1e3,
    })
}

/// Runs every cell and writes `<id>.csv` and `<id>.record.json` to the output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput, HarnessError> {
    let record = run_cells(config)?;
    persist(record, &config.out_dir)
}

pub fn persist(record: RunRecord, out_dir: &Path) -> Result<ExperimentOutput, HarnessError> {
    let csv_path = out_dir.join(format!("{}.csv", record.experiment_id));
    let record_path = out_dir.join(format!("{}.record.json", record.experiment_id));
    write_atomic(&csv_path, render_csv(&record.csv_rows()).as_bytes())?;
    let json = serde_json::to_string_pretty(&record).map_err(|e| HarnessError::Numerical(e.to_string()))?;
    write_atomic(&record_path, json.as_bytes())?;
    Ok(ExperimentOutput {
        record,
        csv_path,
        record_path,
    })
}

pub fn load_record(path: &Path) -> Result<RunRecord, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path.display(), e))?;
    let record: RunRecord =
        serde_json::from_str(&text).map_err(|e| HarnessError::config("record", e.to_string()))?;
    if record.schema_version != SCHEMA_VERSION {
        return Err(HarnessError::config(
            "schema_version",
            format!("record has version {}, this build reads {SCHEMA_VERSION}", record.schema_version),
        ));
    }
    Ok(record)
}

/// Re-executes the configuration embedded in a record through the command
/// that produced it.
pub fn rerun_record(record: &RunRecord, out_dir: Option<&Path>) -> Result<ExperimentOutput, HarnessError> {
    let mut config = record.config.clone();
    if let Some(d) = out_dir {
        config.out_dir = d.to_path_buf();
    }
    match record.mode {
        RecordMode::Run => run_experiment(&config),
        mode => {
            let out = crate::compare::compare_kernels(&config)?;
            let rec = if mode == RecordMode::CompareEqualN {
                out.equal_n
            } else {
                out.equal_cost
            };
            Ok(ExperimentOutput {
                csv_path: config.out_dir.join(format!("{}.csv", rec.experiment_id)),
                record_path: config.out_dir.join(format!("{}.record.json", rec.experiment_id)),
                record: rec,
            })
        }
    }
}
