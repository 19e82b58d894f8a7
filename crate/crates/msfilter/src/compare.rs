//! Kernel comparisons at equal particle count and at equal simulation cost.

use std::fmt::Write as _;
use std::path::PathBuf;

use msfilter_core::analysis::summarize;
use msfilter_core::kernel::KernelChoice;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::HarnessError;
use crate::output::{fmt_num, write_atomic};
use crate::run::{experiment_id, persist, with_threads, CellRecord, RecordMode, RunRecord, Runner, SCHEMA_VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    EqualN,
    EqualCost,
}

/// One kernel at one particle count, summarized over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub basis: Basis,
    pub kernel: String,
    pub n_particles: usize,
    pub rv_per_step: u64,
    pub median_error: f64,
    pub q1_error: f64,
    pub q3_error: f64,
    pub mean_error: f64,
    pub se_error: f64,
    pub seeds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub experiment_id: String,
    pub budget_per_step: u64,
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn row(&self, basis: Basis, kernel: KernelChoice) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.basis == basis && r.kernel == kernel.as_str())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("basis,kernel,N,rv_per_step,median_error,q1_error,q3_error,mean_error,se_error,seeds\n");
        for r in &self.rows {
            let basis = match r.basis {
                Basis::EqualN => "equal_n",
                Basis::EqualCost => "equal_cost",
            };
            let _ = writeln!(
                out,
                "{basis},{},{},{},{},{},{},{},{},{}",
                r.kernel,
                r.n_particles,
                r.rv_per_step,
                fmt_num(r.median_error),
                fmt_num(r.q1_error),
                fmt_num(r.q3_error),
                fmt_num(r.mean_error),
                fmt_num(r.se_error),
                r.seeds
            );
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct ComparisonOutput {
    pub comparison: Comparison,
    pub equal_n: RunRecord,
    pub equal_cost: RunRecord,
    pub table_path: PathBuf,
}

fn summarize_cells(basis: Basis, cells: &[CellRecord]) -> ComparisonRow {
    let errors: Vec<f64> = cells.iter().map(CellRecord::time_averaged_error).collect();
    let s = summarize(&errors);
    ComparisonRow {
        basis,
        kernel: cells[0].kernel.clone(),
        n_particles: cells[0].n_particles,
        rv_per_step: cells[0].rv_count_step[0],
        median_error: s.median,
        q1_error: s.q1,
        q3_error: s.q3,
        mean_error: s.mean,
        se_error: s.se,
        seeds: cells.len(),
    }
}

/// Exact per-step cost of `choice` with `n` particles under `config`'s tuning.
pub fn step_cost(config: &ExperimentConfig, runner: &Runner, choice: KernelChoice, n: usize) -> Result<u64, HarnessError> {
    let kernel = config
        .kernel_spec(choice, n)?
        .build(&runner.bundle)
        .map_err(|e| HarnessError::config("kernels", e.to_string()))?;
    Ok(n as u64 * kernel.rv_per_transition())
}

/// Largest `N` whose per-step cost stays within `budget`; at least one.
pub fn particles_for_budget(
    config: &ExperimentConfig,
    runner: &Runner,
    choice: KernelChoice,
    budget: u64,
) -> Result<usize, HarnessError> {
    // cost is nondecreasing in N and at least N
    let (mut lo, mut hi) = (1usize, budget.max(1) as usize);
    if step_cost(config, runner, choice, 1)? > budget {
        return Ok(1);
    }
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if step_cost(config, runner, choice, mid)? <= budget {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    Ok(lo)
}

/// Compares every listed kernel at each listed `N`, and at the largest `N`
/// each kernel affords within a common per-step rv budget. The budget is
/// `budget_per_step`, or the first kernel's cost at the largest listed `N`.
pub fn compare_kernels(config: &ExperimentConfig) -> Result<ComparisonOutput, HarnessError> {
    let choices = config.kernel_choices()?;
    if choices.len() < 2 {
        return Err(HarnessError::config("kernels", "comparison needs at least two kernels"));
    }
    let id = experiment_id(config);
    let mut runner = Runner::new(config)?;
    let n_max = *config.n_particles.iter().max().expect("validated nonempty");
    let budget = match config.budget_per_step {
        Some(b) => b,
        None => step_cost(config, &runner, choices[0], n_max)?,
    };
    let (equal_n_cells, equal_cost_cells, rows) = with_threads(config.threads, || {
        let mut rows = Vec::new();
        let mut equal_n_cells = Vec::new();
        for &choice in &choices {
            for &n in &config.n_particles {
                let cells = config
                    .seeds
                    .iter()
                    .map(|&s| runner.run_cell(choice, n, s))
                    .collect::<Result<Vec<_>, _>>()?;
                rows.push(summarize_cells(Basis::EqualN, &cells));
                equal_n_cells.extend(cells);
            }
        }
        let mut equal_cost_cells = Vec::new();
        for &choice in &choices {
            let n = particles_for_budget(config, &runner, choice, budget)?;
            let cells = config
                .seeds
                .iter()
                .map(|&s| runner.run_cell(choice, n, s))
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(summarize_cells(Basis::EqualCost, &cells));
            equal_cost_cells.extend(cells);
        }
        Ok::<_, HarnessError>((equal_n_cells, equal_cost_cells, rows))
    })??;
    let record = |suffix: &str, mode: RecordMode, cells: Vec<CellRecord>| RunRecord {
        schema_version: SCHEMA_VERSION,
        library_version: env!("CARGO_PKG_VERSION").to_string(),
        experiment_id: format!("{id}{suffix}"),
        mode,
        config: config.clone(),
        oracle: runner.oracle,
        seeds: config.seeds.clone(),
        cells,
        wall_ms_total: 0.0,
    };
    let equal_n = persist(record("", RecordMode::CompareEqualN, equal_n_cells), &config.out_dir)?.record;
    let equal_cost = persist(record(".equal_cost", RecordMode::CompareEqualCost, equal_cost_cells), &config.out_dir)?.record;
    let comparison = Comparison {
        experiment_id: id.clone(),
        budget_per_step: budget,
        rows,
    };
    let table_path = config.out_dir.join(format!("{id}.comparison.csv"));
    write_atomic(&table_path, comparison.to_csv().as_bytes())?;
    Ok(ComparisonOutput {
        comparison,
        equal_n,
        equal_cost,
        table_path,
    })
}
