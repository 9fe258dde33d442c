use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use blowuplab::asymptotics::{analyze as run_analysis, AsymptoticsReport, PredictedRate};
use blowuplab::config::{BuiltProblem, ProblemConfig, SweepConfig};
use blowuplab::envelope::Prediction;
use blowuplab::integrator::{integrate_blowup, BlowupTrajectory, IntegratorError, StopReason};
use rayon::prelude::*;
use serde::Serialize;

use crate::Common;

pub const EXIT_OK: u8 = 0;
pub const EXIT_NO_BLOWUP: u8 = 2;
pub const EXIT_RUN_ERROR: u8 = 3;
pub const EXIT_CONFIG: u8 = 4;

/// An error with its exit code.
#[derive(Debug)]
pub enum Failure {
    /// Unreadable or invalid input.
    Config(anyhow::Error),
    /// Failure while running or writing results.
    Run(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Run(_) => EXIT_RUN_ERROR,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Config(e) | Failure::Run(e) => e,
        }
    }
}

fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

fn run_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Run(e.into())
}

pub fn stop_code(reason: StopReason) -> u8 {
    match reason {
        StopReason::NormCap => EXIT_OK,
        StopReason::StepUnderflow | StopReason::MaxSteps | StopReason::LeftDomain => EXIT_NO_BLOWUP,
    }
}

fn apply_overrides(cfg: &mut ProblemConfig, common: &Common) {
    if let Some(rt) = common.rel_tol {
        cfg.control.rel_tol = rt;
    }
    if let Some(cap) = common.norm_cap {
        cfg.control.norm_cap = Some(cap);
    }
    if let Some(n) = common.max_steps {
        cfg.control.max_steps = n;
    }
}

fn load_problem(path: &Path, common: &Common) -> Result<(ProblemConfig, BuiltProblem), Failure> {
    let mut cfg = ProblemConfig::load(path).map_err(config_err)?;
    apply_overrides(&mut cfg, common);
    let built = cfg
        .build()
        .with_context(|| format!("invalid problem {}", path.display()))
        .map_err(config_err)?;
    Ok((cfg, built))
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir)
        .with_context(|| format!("cannot create {}", dir.display()))
        .map_err(run_err)
}

fn write(path: PathBuf, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(&path, contents)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(run_err)
}

/// Echo of the effective run settings.
#[derive(Serialize)]
struct RunRecord<'a> {
    problem: &'a ProblemConfig,
    seed: u64,
}

fn oracle_csv(built: &BuiltProblem, traj: &BlowupTrajectory) -> Option<String> {
    let sol = built.oracle.as_ref()?;
    let n = traj.dim();
    let mut out = String::from("t");
    for k in 1..=n {
        out.push_str(&format!(",exact_{k}"));
    }
    out.push_str(",oracle_rel_error\n");
    for (t, y) in traj.times.iter().zip(&traj.states) {
        let e = sol.y_exact(*t);
        out.push_str(&t.to_string());
        for v in e.iter() {
            out.push_str(&format!(",{v}"));
        }
        out.push_str(&format!(",{}\n", (y - &e).norm() / e.norm()));
    }
    Some(out)
}

fn simulate_into(
    cfg: &ProblemConfig,
    built: &BuiltProblem,
    dir: &Path,
    seed: u64,
) -> Result<BlowupTrajectory, Failure> {
    let traj = integrate_blowup(&built.spec, &built.sd, &built.control).map_err(|e| match e {
        IntegratorError::InvalidControl(_) => config_err(e),
        e => run_err(e),
    })?;
    create_dir(dir)?;
    traj.save(&dir.join("trajectory")).map_err(run_err)?;
    let record = RunRecord { problem: cfg, seed };
    write(
        dir.join("run.json"),
        serde_json::to_string_pretty(&record).map_err(run_err)?,
    )?;
    if let Some(csv) = oracle_csv(built, &traj) {
        write(dir.join("oracle.csv"), csv)?;
    }
    Ok(traj)
}

pub fn simulate(config: &Path, common: &Common) -> Result<u8, Failure> {
    let (cfg, built) = load_problem(config, common)?;
    let traj = simulate_into(&cfg, &built, &common.out, common.seed)?;
    println!(
        "{:?} after {} steps: {} samples, |y| = {:e} at t = {}",
        traj.stop_reason,
        traj.accepted,
        traj.len(),
        traj.norms.last().copied().unwrap_or(f64::NAN),
        traj.times.last().copied().unwrap_or(f64::NAN)
    );
    Ok(stop_code(traj.stop_reason))
}

fn write_report(rep: &AsymptoticsReport, dir: &Path) -> Result<(), Failure> {
    create_dir(dir)?;
    write(dir.join("report.json"), rep.to_json())?;
    write(dir.join("report.txt"), rep.to_string())?;
    write(dir.join("series.csv"), rep.series_csv())?;
    write(dir.join("error.csv"), rep.error_csv())
}

pub fn analyze(config: &Path, trajectory: &Path, common: &Common) -> Result<u8, Failure> {
    let (_, built) = load_problem(config, common)?;
    let stem = trajectory.with_extension("");
    let traj = BlowupTrajectory::load(&stem)
        .with_context(|| format!("cannot load trajectory {}", stem.display()))
        .map_err(config_err)?;
    if traj.dim() != built.spec.dim() || traj.alpha != built.spec.alpha() {
        return Err(config_err(anyhow!(
            "trajectory (dim {}, alpha {}) does not match the problem (dim {}, alpha {})",
            traj.dim(),
            traj.alpha,
            built.spec.dim(),
            built.spec.alpha()
        )));
    }
    let rep = run_analysis(&traj, &built.spec, &built.sd, &built.analysis);
    write_report(&rep, &common.out)?;
    print!("{rep}");
    Ok(if rep.accepted {
        EXIT_OK
    } else {
        EXIT_RUN_ERROR
    })
}

/// One line of the sweep summary.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub value: serde_json::Value,
    pub status: String,
    pub stop_reason: Option<StopReason>,
    pub accepted: bool,
    #[serde(rename = "Lambda_hat")]
    pub lambda_hat: Option<f64>,
    pub cert_eigen_residual: Option<f64>,
    #[serde(rename = "cert_H_residual")]
    pub cert_h_residual: Option<f64>,
    pub fitted_model: Option<String>,
    pub fitted_exponent: Option<f64>,
    pub predicted_model: Option<String>,
    pub predicted_exponent: Option<f64>,
    pub z1_finite: Option<String>,
    pub z2_finite: Option<String>,
    pub z3_finite: Option<String>,
    pub composite_z1_finite: Option<String>,
    pub log_exponent: Option<String>,
    pub error: Option<String>,
}

impl SweepRow {
    fn failed(value: serde_json::Value, err: String) -> Self {
        Self {
            value,
            status: "failed".into(),
            stop_reason: None,
            accepted: false,
            lambda_hat: None,
            cert_eigen_residual: None,
            cert_h_residual: None,
            fitted_model: None,
            fitted_exponent: None,
            predicted_model: None,
            predicted_exponent: None,
            z1_finite: None,
            z2_finite: None,
            z3_finite: None,
            composite_z1_finite: None,
            log_exponent: None,
            error: Some(err),
        }
    }

    fn from_report(value: serde_json::Value, rep: &AsymptoticsReport) -> Self {
        let kind = |power: bool| if power { "power" } else { "log" }.to_string();
        let (predicted_model, predicted_exponent) = match &rep.predicted_rate {
            PredictedRate::Predicted {
                prediction: Prediction::Rate(m),
            } => (Some(kind(m.is_power())), Some(m.exponent())),
            PredictedRate::Predicted {
                prediction: Prediction::Exact,
            } => (Some("exact".into()), None),
            _ => (None, None),
        };
        let flag = |s| Some(format!("{s:?}").to_lowercase());
        let h = &rep.hypotheses;
        Self {
            value,
            status: if rep.accepted { "accepted" } else { "rejected" }.into(),
            stop_reason: Some(rep.stop_reason),
            accepted: rep.accepted,
            lambda_hat: rep.lambda_hat,
            cert_eigen_residual: rep.cert_eigen_residual,
            cert_h_residual: rep.cert_h_residual,
            fitted_model: rep
                .fitted_rate
                .as_ref()
                .map(|f| kind(f.selected.is_power())),
            fitted_exponent: rep.fitted_rate.as_ref().map(|f| f.selected.exponent()),
            predicted_model,
            predicted_exponent,
            z1_finite: flag(h.z1_finite),
            z2_finite: flag(h.z2_finite),
            z3_finite: flag(h.z3_finite),
            composite_z1_finite: flag(h.composite_z1_finite),
            log_exponent: flag(h.log_exponent),
            error: rep.failure.clone(),
        }
    }

    pub fn succeeded(&self) -> bool {
        self.status != "failed"
    }
}

const SUMMARY_HEADER: &str =
    "value,status,stop_reason,Lambda_hat,cert_eigen_residual,cert_H_residual,\
fitted_model,fitted_exponent,predicted_model,predicted_exponent,z1_finite,z2_finite,z3_finite,\
composite_z1_finite,log_exponent,error";

fn summary_csv(rows: &[SweepRow]) -> Result<String, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_HEADER.split(',')).map_err(run_err)?;
    let num = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    let txt = |x: &Option<String>| x.clone().unwrap_or_default();
    for r in rows {
        w.write_record([
            r.value.to_string(),
            r.status.clone(),
            r.stop_reason.map(|s| format!("{s:?}")).unwrap_or_default(),
            num(r.lambda_hat),
            num(r.cert_eigen_residual),
            num(r.cert_h_residual),
            txt(&r.fitted_model),
            num(r.fitted_exponent),
            txt(&r.predicted_model),
            num(r.predicted_exponent),
            txt(&r.z1_finite),
            txt(&r.z2_finite),
            txt(&r.z3_finite),
            txt(&r.composite_z1_finite),
            txt(&r.log_exponent),
            txt(&r.error),
        ])
        .map_err(run_err)?;
    }
    String::from_utf8(w.into_inner().map_err(|e| run_err(anyhow!("{e}")))?).map_err(run_err)
}

fn sweep_row(
    value: serde_json::Value,
    cfg: Result<ProblemConfig, blowuplab::config::ConfigError>,
    dir: &Path,
    common: &Common,
) -> SweepRow {
    let run = || -> Result<AsymptoticsReport, Failure> {
        let mut cfg = cfg.map_err(config_err)?;
        apply_overrides(&mut cfg, common);
        let built = cfg.build().map_err(config_err)?;
        let traj = simulate_into(&cfg, &built, dir, common.seed)?;
        let rep = run_analysis(&traj, &built.spec, &built.sd, &built.analysis);
        write_report(&rep, dir)?;
        Ok(rep)
    };
    match run() {
        Ok(rep) => SweepRow::from_report(value, &rep),
        Err(f) => SweepRow::failed(value, format!("{:#}", f.error())),
    }
}

pub fn sweep(config: &Path, jobs: usize, common: &Common) -> Result<u8, Failure> {
    let sweep = SweepConfig::load(config).map_err(config_err)?;
    let points = sweep.points().map_err(config_err)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(run_err)?;
    let rows: Vec<SweepRow> = pool.install(|| {
        points
            .into_par_iter()
            .enumerate()
            .map(|(k, (value, cfg))| {
                let dir = common.out.join(format!("row_{k:03}"));
                sweep_row(value, cfg, &dir, common)
            })
            .collect()
    });
    create_dir(&common.out)?;
    let table = summary_csv(&rows)?;
    write(common.out.join("summary.csv"), &table)?;
    write(
        common.out.join("summary.json"),
        serde_json::to_string_pretty(&rows).map_err(run_err)?,
    )?;
    print!("{table}");
    if rows.iter().all(|r| !r.succeeded()) {
        return Err(run_err(anyhow!("all {} sweep rows failed", rows.len())));
    }
    Ok(EXIT_OK)
}
