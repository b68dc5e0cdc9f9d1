use clap::ValueEnum;
use serde_json::{json, Value};

use seqcv::entanglement::{self, detection_bands, detection_count, detection_report, UnsharpSchedule};
use seqcv::sampling::error_scaling_experiment;
use seqcv::teleport::{
    self, equal_fidelity_plan, equal_fidelity_rounds, equal_transmissivity_max_rounds, equal_transmissivity_plan,
    fidelity_from_fraction, min_transmissivity_sequence, zeta_from_fraction, SplitSchedule, TeleportPlan,
};
use seqcv::GaussianState;

use crate::config::{linspace, Format, Params, PlanModeArg};
use crate::table::{Cell, Table};
use crate::CliError;

pub const DEFAULT_SEED: u64 = 1;
pub const TABLE_ZETA: f64 = 2.0 - 1e-6;
const DEFAULT_GRID: (usize, usize) = (200, 200);
const DEFAULT_LINE: usize = 201;
const SCALING_SAMPLES: [usize; 4] = [100, 1_000, 10_000, 100_000];
/// Oracle mixtures beyond this round would exceed the component guard.
const ORACLE_ROUNDS: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Target {
    Fig2a,
    Fig2b,
    Fig2c,
    Fig2d,
    Fig4,
    Table1,
    Appc,
}

pub struct Output {
    pub table: Option<Table>,
    pub json: Value,
    pub default_format: Format,
}

impl Output {
    fn table(table: Table) -> Self {
        let json = table.to_json();
        Output {
            table: Some(table),
            json,
            default_format: Format::Csv,
        }
    }
}

fn first_or(v: &Option<Vec<f64>>, default: f64) -> f64 {
    v.as_ref().and_then(|v| v.first().copied()).unwrap_or(default)
}

fn require_r(r: f64) -> Result<f64, CliError> {
    if r.is_finite() && r >= 0.0 {
        Ok(r)
    } else {
        Err(CliError::Validation(format!("r = {r} must be finite and non-negative")))
    }
}

pub fn repro(target: Target, p: &Params) -> Result<Output, CliError> {
    match target {
        Target::Fig2a => fig2a(p),
        Target::Fig2b => fig2b(p),
        Target::Fig2c => fig2c(p),
        Target::Fig2d => fig2d(p),
        Target::Fig4 => fig4(p),
        Target::Table1 => table1(p),
        Target::Appc => {
            let mut out = sample_scaling(p)?;
            out.default_format = Format::Csv;
            Ok(out)
        }
    }
}

/// First-round fidelity and `ζ` against `τ₁`.
fn fig2a(p: &Params) -> Result<Output, CliError> {
    let r = require_r(p.r.unwrap_or(0.8))?;
    let (n, _) = p.grid_or((DEFAULT_LINE, 2))?;
    let mut t = Table::new(&["tau", "F", "zeta"]);
    for tau in linspace(0.0, 1.0, n) {
        t.push(vec![tau.into(), fidelity_from_fraction(r, tau).into(), zeta_from_fraction(r, tau).into()]);
    }
    Ok(Output::table(t))
}

/// Minimum transmissivity per round with earlier rounds at their minima.
fn fig2b(p: &Params) -> Result<Output, CliError> {
    let rs = match p.r {
        Some(r) => vec![require_r(r)?],
        None => vec![0.7, 0.8, 0.9],
    };
    let target = p.f_min.unwrap_or(0.501);
    let mut t = Table::new(&["r", "round", "tau_min"]);
    for r in rs {
        for (i, tau) in min_transmissivity_sequence(r, target)?.into_iter().enumerate() {
            t.push(vec![r.into(), (i + 1).into(), tau.into()]);
        }
    }
    Ok(Output::table(t))
}

/// Equal-fidelity round count against `r`.
fn fig2c(p: &Params) -> Result<Output, CliError> {
    let f_mins = match p.f_min {
        Some(f) => vec![f],
        None => vec![0.501, 0.505, 0.51],
    };
    let (n, _) = p.grid_or((DEFAULT_LINE, 2))?;
    let mut t = Table::new(&["F_min", "r", "n_max"]);
    for f in f_mins {
        for r in linspace(0.0, 1.0, n) {
            t.push(vec![f.into(), r.into(), equal_fidelity_rounds(r, f)?.into()]);
        }
    }
    Ok(Output::table(t))
}

/// Equal-transmissivity round count on an `(r, τ)` grid.
fn fig2d(p: &Params) -> Result<Output, CliError> {
    let (n, m) = p.grid_or(DEFAULT_GRID)?;
    let mut t = Table::new(&["r", "tau", "rounds"]);
    for r in linspace(0.0, 2.0, n) {
        for tau in linspace(0.0, 1.0, m) {
            t.push(vec![r.into(), tau.into(), equal_transmissivity_max_rounds(r, tau)?.into()]);
        }
    }
    Ok(Output::table(t))
}

/// Equal-`ζ` detection count on an `(r, ζ)` grid.
fn fig4(p: &Params) -> Result<Output, CliError> {
    let (n, m) = p.grid_or(DEFAULT_GRID)?;
    let mut t = Table::new(&["r", "zeta", "D_n"]);
    for r in linspace(0.0, 2.0, n) {
        for zeta in linspace(0.0, TABLE_ZETA, m) {
            t.push(vec![r.into(), zeta.into(), detection_count(r, zeta)?.into()]);
        }
    }
    Ok(Output::table(t))
}

fn table1(p: &Params) -> Result<Output, CliError> {
    let zeta = p.zeta_target.unwrap_or(TABLE_ZETA);
    let mut t = Table::new(&["D_n", "r_from", "r_to"]);
    for band in detection_bands(zeta, 10.0)? {
        t.push(vec![band.detections.into(), band.r_from.into(), band.r_to.into()]);
    }
    Ok(Output::table(t))
}

fn plan_table(plan: &TeleportPlan) -> Table {
    let mut t = Table::new(&["round", "tau", "F"]);
    for (i, (tau, f)) in plan.taus.iter().zip(&plan.fidelities).enumerate() {
        t.push(vec![(i + 1).into(), (*tau).into(), (*f).into()]);
    }
    t
}

pub fn teleport_plan(p: &Params) -> Result<Output, CliError> {
    let plan = match p.mode.unwrap_or(PlanModeArg::EqualFidelity) {
        PlanModeArg::EqualFidelity => equal_fidelity_plan(p.f_min.unwrap_or(0.51))?,
        PlanModeArg::EqualTransmissivity => {
            let r = require_r(p.r.unwrap_or(0.8))?;
            let tau = first_or(&p.tau, 0.5);
            let plan = equal_transmissivity_plan(r, tau)?;
            if plan.n_max == 0 {
                return Err(CliError::Infeasible(json!({
                    "status": "infeasible",
                    "reason": "no round exceeds fidelity 1/2",
                    "plan": plan,
                })));
            }
            plan
        }
    };
    Ok(Output {
        table: Some(plan_table(&plan)),
        json: serde_json::to_value(&plan).expect("plan serializes"),
        default_format: Format::Json,
    })
}

/// Bell outcome `y = (x_T − x_in, p_T + p_in)`; the receiver displaces by
/// `(−y₀, +y₁)`.
pub fn teleport_sim(p: &Params) -> Result<Output, CliError> {
    let r = require_r(p.r.unwrap_or(0.8))?;
    let taus = p.tau.clone().unwrap_or_else(|| vec![1.0]);
    let schedule = SplitSchedule::new(r, taus.clone())?;
    let round = p.round.unwrap_or(taus.len());
    let (x, pp) = (p.x.unwrap_or(0.0), p.p.unwrap_or(0.0));
    let samples = p.samples.as_ref().and_then(|s| s.first().copied()).unwrap_or(100_000);
    let seed = p.seed.unwrap_or(DEFAULT_SEED);
    let closed = schedule.fidelity(round)?;
    let fraction = schedule.transmitted_fraction(round)?;
    let analytic = teleport::analytic_average_fidelity(&schedule, round)?;
    let input = GaussianState::coherent(x, pp)?;
    let sim = teleport::simulate_round(&schedule, round, &input, samples, seed)?;
    let mut t = Table::new(&[
        "round",
        "tau_t",
        "closed_form",
        "analytic",
        "estimate",
        "stderr",
        "samples",
        "seed",
    ]);
    t.push(vec![
        round.into(),
        fraction.into(),
        closed.into(),
        analytic.into(),
        sim.estimate.into(),
        sim.stderr.into(),
        samples.into(),
        Cell::I(seed),
    ]);
    Ok(Output {
        table: Some(t),
        json: json!({
            "r": r,
            "taus": taus,
            "round": round,
            "input": {"x": x, "p": pp},
            "feed_forward": {"outcome": "(x_T - x_in, p_T + p_in)", "displacement": "(-y0, +y1)"},
            "transmitted_fraction": fraction,
            "closed_form": closed,
            "analytic": analytic,
            "simulated": sim,
        }),
        default_format: Format::Json,
    })
}

pub fn entangle_seq(p: &Params) -> Result<Output, CliError> {
    let r = require_r(p.r.unwrap_or(1.2))?;
    if let Some(omegas) = &p.omega_sq {
        let schedule = UnsharpSchedule::equal(r, omegas)?;
        let mut t = Table::new(&["round", "omega_sq", "zeta", "zeta_oracle", "detected"]);
        let mut rounds = Vec::new();
        for n in 1..=schedule.len() {
            let z = schedule.zeta(n)?;
            let oracle = if n <= ORACLE_ROUNDS { Some(schedule.oracle_zeta(n)?) } else { None };
            t.push(vec![
                n.into(),
                omegas[n - 1].into(),
                z.into(),
                oracle.unwrap_or(f64::NAN).into(),
                Cell::I((z < 2.0) as u64),
            ]);
            rounds.push(json!({"round": n, "omega_sq": omegas[n - 1], "zeta": z, "zeta_oracle": oracle, "detected": z < 2.0}));
        }
        return Ok(Output {
            table: Some(t),
            json: json!({
                "r": r,
                "u": schedule.u(),
                "rounds": rounds,
                "detections": schedule.detections(),
                "equal_omega_bound": omegas.first().map(|&w| entanglement::equal_omega_bound(r, w)).transpose()?,
            }),
            default_format: Format::Json,
        });
    }
    let zeta = p.zeta_target.unwrap_or(TABLE_ZETA);
    let report = detection_report(r, zeta)?;
    let json = serde_json::to_value(&report).expect("report serializes");
    if report.detections == 0 {
        return Err(CliError::Infeasible(json!({"status": "infeasible", "report": json})));
    }
    let mut t = Table::new(&["round", "omega_sq", "zeta", "detected"]);
    for (i, ((w, z), d)) in report.omegas.iter().zip(&report.zetas).zip(&report.detected).enumerate() {
        t.push(vec![(i + 1).into(), (*w).into(), (*z).into(), Cell::I(*d as u64)]);
    }
    Ok(Output {
        table: Some(t),
        json,
        default_format: Format::Json,
    })
}

/// `N` counts samples per readout quadrature.
pub fn sample_scaling(p: &Params) -> Result<Output, CliError> {
    let r = require_r(p.r.unwrap_or(0.8))?;
    let samples = p.samples.clone().unwrap_or_else(|| SCALING_SAMPLES.to_vec());
    let trials = p.trials.unwrap_or(100);
    let seed = p.seed.unwrap_or(DEFAULT_SEED);
    let report = error_scaling_experiment(r, &samples, trials, seed)?;
    let mut t = Table::new(&["N", "mean_zeta", "std_zeta", "stderr"]);
    for row in &report.rows {
        t.push(vec![row.n.into(), row.mean_zeta.into(), row.std_zeta.into(), row.stderr.into()]);
    }
    let mut json = serde_json::to_value(&report).expect("report serializes");
    json["samples_per_quadrature"] = Value::Bool(true);
    Ok(Output {
        table: Some(t),
        json,
        default_format: Format::Json,
    })
}
