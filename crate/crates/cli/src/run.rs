//! Running an experiment and writing its artifacts.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use icrl_core::icrl::{run_icrl_with, IcrlOutcome, RunRow, Termination};
use icrl_core::trainer::QTable;
use icrl_core::{
    enumerate_paths, solve_decomposition, DecompositionProblem, Hlm, MetaPolicy, SubsystemId,
};
use serde::Serialize;

use crate::config::Config;

pub const RUN_LOG: &str = "run_log.csv";
pub const SUMMARY: &str = "summary.json";
pub const POLICY_DIR: &str = "final_policies";

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub terminated: Termination,
    pub iterations: usize,
    pub final_predicted_success: f64,
    pub final_empirical_success: f64,
    pub total_steps: u64,
    /// Training steps per subsystem, by id.
    pub steps: Vec<u64>,
    pub sigma_hat: Vec<f64>,
    /// Subsystems the final meta-policy executes from the initial state.
    pub route: Vec<SubsystemId>,
    pub seed: u64,
}

impl Summary {
    pub fn exit_code(&self) -> i32 {
        match self.terminated {
            Termination::Success => 0,
            Termination::Infeasible | Termination::AllExhausted => 2,
        }
    }
}

/// CSV header for `k` subsystems.
pub fn csv_header(k: usize) -> Vec<String> {
    let mut h = vec!["iteration".to_string(), "total_steps".into(), "trained_id".into()];
    h.extend((0..k).map(|c| format!("sigma_hat_{c}")));
    h.extend((0..k).map(|c| format!("p_{c}")));
    h.extend(["predicted_success".into(), "empirical_success".into(), "feasible".into()]);
    h
}

fn csv_record(row: &RunRow) -> Vec<String> {
    let mut r = vec![
        row.iteration.to_string(),
        row.total_steps.to_string(),
        row.trained_id.to_string(),
    ];
    r.extend(row.sigma_hat.iter().map(f64::to_string));
    r.extend(row.p.iter().map(f64::to_string));
    r.push(row.predicted_success.to_string());
    r.push(row.empirical_success.map(|e| e.to_string()).unwrap_or_default());
    r.push(row.feasible.to_string());
    r
}

/// Subsystems chosen along the meta-policy from the initial class.
pub fn route(hlm: &Hlm, meta: &MetaPolicy) -> Vec<SubsystemId> {
    let mut s = hlm.init_state();
    let mut out = Vec::new();
    while let Some(c) = meta.get(s) {
        if out.len() > hlm.num_states() {
            break;
        }
        out.push(c);
        s = hlm.succ(c);
    }
    out
}

/// Runs the experiment in `config`, writing `run_log.csv`, `summary.json`
/// and `final_policies/` under `config.out_dir`. `progress` sees every row.
pub fn run(config: &Config, mut progress: impl FnMut(&RunRow)) -> Result<Summary> {
    let out = &config.out_dir;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let log_path = out.join(RUN_LOG);
    let mut csv = csv::Writer::from_path(&log_path)
        .with_context(|| format!("creating {}", log_path.display()))?;
    csv.write_record(csv_header(config.specs.len()))?;

    let mut write_err = None;
    let outcome = run_icrl_with(&config.problem(), &config.learner, &config.icrl_config(), |row| {
        if write_err.is_none() {
            write_err = csv
                .write_record(csv_record(row))
                .and_then(|_| csv.flush().map_err(Into::into))
                .err();
        }
        progress(row);
    })?;
    if let Some(e) = write_err {
        return Err(e).context("writing the run log");
    }
    csv.flush()?;

    write_policies(&out.join(POLICY_DIR), &outcome)?;
    let summary = Summary {
        terminated: outcome.termination,
        iterations: outcome.log.len(),
        final_predicted_success: outcome.predicted_success,
        final_empirical_success: outcome.empirical_success,
        total_steps: outcome.total_steps,
        steps: outcome.steps.clone(),
        sigma_hat: outcome.sigma_hat.clone(),
        route: route(&outcome.hlm, &outcome.meta),
        seed: config.seed,
    };
    write_json(&out.join(SUMMARY), &summary)?;
    Ok(summary)
}

#[derive(Serialize)]
struct MetaEntry<'a> {
    state: usize,
    /// One representative cell of the class; empty for the failure class.
    cell: Option<(usize, usize)>,
    available: &'a [SubsystemId],
    choice: Option<SubsystemId>,
}

fn write_policies<P>(dir: &Path, outcome: &IcrlOutcome<QTable, P>) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (id, table) in outcome.states.iter().enumerate() {
        let path = dir.join(format!("subsystem_{id}.qtable"));
        fs::write(&path, table.to_text()).with_context(|| format!("writing {}", path.display()))?;
    }
    let hlm = &outcome.hlm;
    let meta: Vec<MetaEntry> = hlm
        .states()
        .iter()
        .enumerate()
        .map(|(s, a)| MetaEntry {
            state: s,
            cell: a.members.iter().next().map(|m| m.cell()),
            available: &a.available,
            choice: outcome.meta.get(s),
        })
        .collect();
    write_json(&dir.join("meta_policy.json"), &meta)
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct DecomposeReport {
    pub abstract_states: usize,
    pub paths: Vec<Vec<SubsystemId>>,
    pub feasible: bool,
    pub p: Vec<f64>,
    pub support_path: Vec<SubsystemId>,
    pub objective: f64,
}

/// Decomposition of the task requirement with no trained subsystems.
pub fn decompose(config: &Config) -> Result<DecomposeReport> {
    let hlm = icrl_core::build_hlm(&config.specs, &config.init, &config.target)?;
    let paths = enumerate_paths(&hlm)?;
    let problem = DecompositionProblem::new(&hlm, config.delta);
    let result = solve_decomposition(&problem, config.exec)?;
    Ok(DecomposeReport {
        abstract_states: hlm.num_states(),
        paths: paths.into_iter().map(|p| p.subsystems).collect(),
        feasible: result.feasible,
        p: result.p.into_inner(),
        support_path: result.support_path,
        objective: result.objective,
    })
}
