//! The five subcommands as library functions returning rendered output.

use std::path::PathBuf;

use serde::Serialize;
use serde_json::{json, Value};

use ratchet_ruin::closed_form::FixedMaxSolution;
use ratchet_ruin::diagnostics::{
    comparison_suite, hjb_residual, interior_grid, mc_cross_check, mc_optimality_check,
    verification_conditions, ActiveValue, BlockedValue, CheckReport, FixedMaxValue, PerturbedDual,
    ValueFunction,
};
use ratchet_ruin::ratchet_active::{integrate_boundaries, IntegrationConfig, MovingBoundary};
use ratchet_ruin::ratchet_blocked::{
    m_star, ratchet_condition, Binding, DualFunction, MStarConfig,
};
use ratchet_ruin::simulator::{simulate_ruin, SimConfig, Strategy};
use ratchet_ruin::{classify_regime, AgentState, ConsumptionSpec, Error, Model, Regime};

use crate::error::{CliError, CliResult, EXIT_OK, EXIT_VERIFY_FAILED};
use crate::output::{cell, envelope, render_csv, render_json};
use crate::scenario::{apply_overrides, Scenario, SimOverrides};

// ---------------------------------------------------------------------------
// Options and output
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub format: Format,
    /// Command-line simulation overrides, applied over the scenario's.
    pub sim: SimOverrides,
    /// Moving-boundary cache file, read when it matches and written otherwise.
    pub boundary_cache: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Output {
    pub text: String,
    pub exit_code: u8,
}

impl Output {
    fn ok(text: String) -> Self {
        Output {
            text,
            exit_code: EXIT_OK,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    W,
    M,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sweep {
    pub variable: SweepVariable,
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl std::str::FromStr for Sweep {
    type Err = CliError;

    /// Parses `w:<lo>:<hi>:<n>` or `m:<lo>:<hi>:<n>`.
    fn from_str(s: &str) -> CliResult<Self> {
        let bad =
            || CliError::Validation(format!("sweep '{s}' is not of the form w|m:<lo>:<hi>:<n>"));
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 4 {
            return Err(bad());
        }
        let variable = match parts[0] {
            "w" => SweepVariable::W,
            "m" => SweepVariable::M,
            _ => return Err(bad()),
        };
        let lo: f64 = parts[1].parse().map_err(|_| bad())?;
        let hi: f64 = parts[2].parse().map_err(|_| bad())?;
        let points: usize = parts[3].parse().map_err(|_| bad())?;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) || points < 2 {
            return Err(CliError::Validation(format!(
                "sweep '{s}' needs finite lo <= hi and at least 2 points"
            )));
        }
        Ok(Sweep {
            variable,
            lo,
            hi,
            points,
        })
    }
}

/// Strategy selector for `simulate`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum StrategyChoice {
    Optimal,
    ConstantAmount(f64),
    ConstantProportion(f64),
}

impl std::str::FromStr for StrategyChoice {
    type Err = CliError;

    /// Parses `optimal`, `constant_amount:<x>` or `constant_proportion:<x>`.
    fn from_str(s: &str) -> CliResult<Self> {
        let bad = || {
            CliError::Validation(format!(
                "strategy '{s}' is not optimal, constant_amount:<x> or constant_proportion:<x>"
            ))
        };
        if s == "optimal" {
            return Ok(StrategyChoice::Optimal);
        }
        let (kind, value) = s.split_once(':').ok_or_else(bad)?;
        let x: f64 = value.parse().map_err(|_| bad())?;
        match kind {
            "constant_amount" => Ok(StrategyChoice::ConstantAmount(x)),
            "constant_proportion" => Ok(StrategyChoice::ConstantProportion(x)),
            _ => Err(bad()),
        }
    }
}

// ---------------------------------------------------------------------------
// Solver dispatch
// ---------------------------------------------------------------------------

/// Which solver covers maximum wealth `m`, independent of current wealth.
pub fn regime_at_m(model: &Model, m: f64) -> CliResult<Regime> {
    if !model.below_safe(m) {
        return Ok(Regime::FixedMaxBelowSafe);
    }
    Ok(if ratchet_condition(model, m)?.holds {
        Regime::RatchetBlocked
    } else {
        Regime::RatchetActive
    })
}

/// Solution at one maximum-wealth level.
pub enum Solver {
    Fixed(FixedMaxSolution),
    Blocked(DualFunction),
    Active { mb: Box<MovingBoundary>, m: f64 },
}

impl Solver {
    pub fn build(model: &Model, m: f64, cache: Option<&PathBuf>) -> CliResult<Self> {
        Ok(match regime_at_m(model, m)? {
            Regime::FixedMaxBelowSafe => Solver::Fixed(FixedMaxSolution::new(model, m)?),
            Regime::RatchetBlocked => Solver::Blocked(DualFunction::solve(model, m)?),
            _ => Solver::Active {
                mb: Box::new(moving_boundary(model, m, cache)?),
                m,
            },
        })
    }

    /// Minimal ruin probability at wealth `w`.
    pub fn psi(&self, w: f64) -> CliResult<f64> {
        if w <= 0.0 {
            return Ok(1.0);
        }
        Ok(match self {
            Solver::Fixed(s) => s.psi(w),
            Solver::Blocked(f) => f.psi(w)?,
            Solver::Active { mb, m } => mb.psi(w, *m)?,
        })
    }

    /// Optimal risky amount; `None` once ruined, zero at the safe level.
    pub fn pi(&self, model: &Model, w: f64) -> CliResult<Option<f64>> {
        if w <= 0.0 {
            return Ok(None);
        }
        Ok(Some(match self {
            Solver::Fixed(s) if w >= s.safe_level() => 0.0,
            Solver::Fixed(s) => s.pi(w, &model.params)?,
            Solver::Blocked(f) => f.pi_unchecked(w)?,
            Solver::Active { mb, m } => mb.pi_unchecked(w, *m)?,
        }))
    }

    fn strategy(&self) -> Strategy {
        match self {
            Solver::Fixed(_) => Strategy::FixedMax,
            Solver::Blocked(_) => Strategy::Blocked,
            Solver::Active { mb, .. } => Strategy::Active(mb.clone()),
        }
    }

    fn boundary_summary(&self) -> CliResult<Option<Value>> {
        Ok(match self {
            Solver::Fixed(_) => None,
            Solver::Blocked(f) => {
                let b = &f.boundary;
                Some(json!({
                    "y_m": b.y_m, "y_0": b.y_0, "d1": b.d1, "d2": b.d2,
                    "ratio": b.ratio, "ratio_residual": b.ratio_residual,
                }))
            }
            Solver::Active { mb, m } => {
                let (y_0, y_m) = mb.boundary_at(*m)?;
                let (d1, d2) = mb.coefficients_at(*m)?;
                Some(json!({
                    "m0": mb.m0, "m_star": mb.m_star, "binding": mb.binding,
                    "y_m": y_m, "y_0": y_0, "d1": d1, "d2": d2,
                    "grid": {
                        "nodes": mb.nodes.len(),
                        "accepted_steps": mb.stats.accepted_steps,
                        "rejected_steps": mb.stats.rejected_steps,
                        "max_residual": mb.stats.max_residual,
                    },
                }))
            }
        })
    }
}

/// Integrates the moving boundary from `m0`, through the cache when given.
pub fn moving_boundary(
    model: &Model,
    m0: f64,
    cache: Option<&PathBuf>,
) -> CliResult<MovingBoundary> {
    let cfg = IntegrationConfig::default();
    if let Some(path) = cache {
        if let Ok(text) = std::fs::read_to_string(path) {
            if let Ok(mb) = MovingBoundary::from_json(&text) {
                if mb.model == *model && mb.m0 == m0 && mb.config == cfg {
                    return Ok(mb);
                }
            }
        }
    }
    let ms = m_star(model, m0, &MStarConfig::default())?;
    let mb = integrate_boundaries(model, m0, &ms, &cfg)?;
    if let Some(path) = cache {
        std::fs::write(path, mb.to_json()).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(mb)
}

fn echo(scenario: &Scenario) -> Value {
    json!({ "scenario": scenario })
}

fn json_only(opts: &RunOptions, command: &str) -> CliResult<()> {
    if opts.format == Format::Csv {
        return Err(CliError::Validation(format!("{command} emits JSON only")));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct Evaluation {
    regime: Regime,
    w: f64,
    m: f64,
    psi: f64,
    pi_star: Option<f64>,
    strategy: &'static str,
    safe_level: f64,
    consumption_rate_per_year: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    boundary: Option<Value>,
}

pub fn cmd_evaluate(scenario: &Scenario, opts: &RunOptions) -> CliResult<Output> {
    let model = scenario.model()?;
    let state = scenario.agent_state()?;
    let regime = classify_regime(&model, &state)?;
    let AgentState { w, m } = state;
    let base = Evaluation {
        regime,
        w,
        m,
        psi: 0.0,
        pi_star: None,
        strategy: "feedback",
        safe_level: model.safe_level(m),
        consumption_rate_per_year: model.consumption.rate(m),
        boundary: None,
    };
    let ev = match regime {
        Regime::Ruined => Evaluation {
            psi: 1.0,
            strategy: "ruined",
            ..base
        },
        Regime::SafeLevel => Evaluation {
            psi: 0.0,
            pi_star: Some(0.0),
            strategy: "all riskless",
            ..base
        },
        _ => {
            let s = Solver::build(&model, m, opts.boundary_cache.as_ref())?;
            Evaluation {
                psi: s.psi(w)?,
                pi_star: s.pi(&model, w)?,
                boundary: s.boundary_summary()?,
                ..base
            }
        }
    };
    let config = echo(scenario);
    let text = match opts.format {
        Format::Json => render_json(&envelope("evaluate", config, &ev)),
        Format::Csv => render_csv(
            "evaluate",
            &config,
            &["w", "m", "regime", "psi", "pi_star", "safe_level"],
            &[vec![
                cell(Some(ev.w)),
                cell(Some(ev.m)),
                ev.regime.to_string(),
                cell(Some(ev.psi)),
                cell(ev.pi_star),
                cell(Some(ev.safe_level)),
            ]],
        ),
    };
    Ok(Output::ok(text))
}

// ---------------------------------------------------------------------------
// curve
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct CurveRow {
    w: f64,
    m: f64,
    regime: Regime,
    psi: f64,
    pi_star: Option<f64>,
    comparison_phi: f64,
}

const CURVE_COLUMNS: [&str; 6] = ["w", "m", "regime", "psi", "pi_star", "comparison_phi"];

fn curve_row(model: &Model, solver: &Solver, w: f64, m: f64) -> CliResult<CurveRow> {
    let state = AgentState::new(w, m)?;
    let regime = classify_regime(model, &state)?;
    Ok(CurveRow {
        w,
        m,
        regime,
        psi: solver.psi(w)?,
        pi_star: solver.pi(model, w)?,
        comparison_phi: FixedMaxSolution::benchmark(model, m)?.psi(w),
    })
}

/// Tabulates `psi`, the optimal strategy and the constant-consumption
/// benchmark along a wealth or maximum-wealth sweep.
pub fn cmd_curve(
    scenario: &Scenario,
    sweep: Option<Sweep>,
    opts: &RunOptions,
) -> CliResult<Output> {
    let model = scenario.model()?;
    let AgentState { w, m } = scenario.agent_state()?;
    let cache = opts.boundary_cache.as_ref();
    let sweep = match sweep {
        Some(s) => s,
        None => Sweep {
            variable: SweepVariable::W,
            lo: 0.0,
            hi: m.min(model.safe_level(m)),
            points: 101,
        },
    };
    let at = |i: usize| sweep.lo + (sweep.hi - sweep.lo) * i as f64 / (sweep.points - 1) as f64;
    let mut rows = Vec::with_capacity(sweep.points);
    match sweep.variable {
        SweepVariable::W => {
            if sweep.lo < 0.0 || sweep.hi > m {
                return Err(CliError::Validation(format!(
                    "wealth sweep must lie in [0, {m}]"
                )));
            }
            let solver = Solver::build(&model, m, cache)?;
            for i in 0..sweep.points {
                rows.push(curve_row(&model, &solver, at(i), m)?);
            }
        }
        SweepVariable::M => {
            if sweep.lo < w || sweep.lo <= 0.0 {
                return Err(CliError::Validation(format!(
                    "maximum-wealth sweep must start at or above the wealth {w}"
                )));
            }
            let mut active: Option<MovingBoundary> = None;
            for i in 0..sweep.points {
                let mi = at(i);
                let solver = match regime_at_m(&model, mi)? {
                    Regime::RatchetActive => {
                        let covers = active
                            .as_ref()
                            .is_some_and(|mb| mi >= mb.m0 && mi <= mb.m_star);
                        if !covers {
                            active = Some(moving_boundary(&model, mi, None)?);
                        }
                        let mb = active.clone().expect("boundary set above");
                        Solver::Active {
                            mb: Box::new(mb),
                            m: mi,
                        }
                    }
                    _ => Solver::build(&model, mi, None)?,
                };
                rows.push(curve_row(&model, &solver, w, mi)?);
            }
        }
    }
    let config = json!({ "scenario": scenario, "sweep": sweep });
    let text = match opts.format {
        Format::Json => render_json(&envelope(
            "curve",
            config,
            json!({ "columns": CURVE_COLUMNS, "rows": rows }),
        )),
        Format::Csv => {
            let cells: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    vec![
                        cell(Some(r.w)),
                        cell(Some(r.m)),
                        r.regime.to_string(),
                        cell(Some(r.psi)),
                        cell(r.pi_star),
                        cell(Some(r.comparison_phi)),
                    ]
                })
                .collect();
            render_csv("curve", &config, &CURVE_COLUMNS, &cells)
        }
    };
    Ok(Output::ok(text))
}

// ---------------------------------------------------------------------------
// mstar
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct ProfilePoint {
    m: f64,
    /// Safe level minus maximum wealth.
    safe_margin: f64,
    /// Ratchet-condition gap; absent at or above the safe level.
    condition_gap: Option<f64>,
}

/// Level where consumption meets riskless income, `c(m) = r m`, when it has
/// a closed form.
pub fn safe_crossing(model: &Model) -> Option<f64> {
    let r = model.params.r;
    match model.consumption {
        ConsumptionSpec::Power { scale, exponent } if exponent < 1.0 => {
            Some((scale / r).powf(1.0 / (1.0 - exponent)))
        }
        ConsumptionSpec::Affine { slope, intercept } if slope < r => Some(intercept / (r - slope)),
        _ => None,
    }
}

pub fn cmd_mstar(
    scenario: &Scenario,
    grid_factor: Option<f64>,
    opts: &RunOptions,
) -> CliResult<Output> {
    json_only(opts, "mstar")?;
    let model = scenario.model()?;
    let m0 = scenario.agent_state()?.m;
    if regime_at_m(&model, m0)? != Regime::RatchetActive {
        return Err(Error::PreconditionViolation(format!(
            "maximum wealth {m0} is not in the ratchet-active regime"
        ))
        .into());
    }
    let mut cfg = MStarConfig::default();
    if let Some(g) = grid_factor {
        cfg.grid_factor = g;
    }
    let ms = m_star(&model, m0, &cfg)?;
    let n = 21;
    let mut profile = Vec::with_capacity(n);
    for i in 0..n {
        let m = m0 + (ms.m_star - m0) * i as f64 / (n - 1) as f64;
        let condition_gap = if model.below_safe(m) {
            Some(ratchet_condition(&model, m)?.gap())
        } else {
            None
        };
        profile.push(ProfilePoint {
            m,
            safe_margin: model.safe_level(m) - m,
            condition_gap,
        });
    }
    let result = json!({
        "m0": ms.m0,
        "m_star": ms.m_star,
        "binding": ms.binding,
        "safe_gap": ms.safe_gap,
        "condition_gap": ms.condition_gap,
        "safe_crossing": safe_crossing(&model),
        "profile": profile,
    });
    let config = json!({ "scenario": scenario, "search": cfg });
    Ok(Output::ok(render_json(&envelope("mstar", config, result))))
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

/// Resolved simulation settings: library defaults, then the scenario, then
/// the command line.
pub fn resolve_sim(scenario: &Scenario, opts: &RunOptions) -> SimConfig {
    let mut cfg = scenario.sim_config();
    apply_overrides(&mut cfg, &opts.sim);
    cfg
}

pub fn cmd_simulate(
    scenario: &Scenario,
    choice: StrategyChoice,
    opts: &RunOptions,
) -> CliResult<Output> {
    json_only(opts, "simulate")?;
    let model = scenario.model()?;
    let state = scenario.agent_state()?;
    let cfg = resolve_sim(scenario, opts);
    let regime = classify_regime(&model, &state)?;
    let solver = match regime {
        Regime::Ruined | Regime::SafeLevel => None,
        _ => Some(Solver::build(
            &model,
            state.m,
            opts.boundary_cache.as_ref(),
        )?),
    };
    let optimum = match &solver {
        Some(s) => s.psi(state.w)?,
        None => {
            if regime == Regime::Ruined {
                1.0
            } else {
                0.0
            }
        }
    };
    let strategy = match choice {
        StrategyChoice::Optimal => solver.as_ref().map_or(Strategy::FixedMax, Solver::strategy),
        StrategyChoice::ConstantAmount(a) => Strategy::ConstantAmount(a),
        StrategyChoice::ConstantProportion(k) => Strategy::ConstantProportion(k),
    };
    let est = simulate_ruin(&model, &state, &strategy, &cfg)?;
    let check = match choice {
        StrategyChoice::Optimal => mc_cross_check(optimum, &est, 3.0),
        _ => mc_optimality_check(optimum, &est, 3.0),
    };
    let result = json!({
        "regime": regime,
        "strategy": strategy.name(),
        "estimate": est,
        "analytic_optimum": optimum,
        "check": check,
    });
    // Thread count does not change any number, so it is left out of the echo.
    let echoed = SimConfig {
        threads: None,
        t_max: Some(cfg.resolved_t_max(model.params.lambda)),
        ..cfg
    };
    let config = json!({ "scenario": scenario, "sim": echoed, "strategy": choice });
    Ok(Output::ok(render_json(&envelope(
        "simulate", config, result,
    ))))
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

const VERIFY_POINTS: usize = 100;

fn boundary_report(f: &DualFunction) -> CheckReport {
    let mut details = f.boundary_residuals().to_vec();
    details.push(f.boundary.ratio_residual);
    let mut r = CheckReport::from_residuals("boundary_system", vec![], details, 1e-9);
    r.notes.push(
        "rows: value at y0, slope at y0, slope at y_m, curvature at y_m, ratio equation".into(),
    );
    r
}

fn terminal_report(model: &Model, mb: &MovingBoundary) -> CliResult<CheckReport> {
    let t = mb.nodes.last().expect("boundary has nodes");
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
    let (details, note) = match mb.binding {
        Binding::Condition => {
            let f = DualFunction::solve(model, mb.m_star)?;
            let b = &f.boundary;
            (
                vec![
                    rel(t.y0, b.y_0),
                    rel(t.ym, b.y_m),
                    rel(t.d1, b.d1),
                    rel(t.d2, b.d2),
                ],
                "rows: y0, y_m, D1, D2 relative to the static solution at m*",
            )
        }
        Binding::SafeLevel => {
            // At the safe level the value is the closed form, whose dual stops
            // at gamma / k and has no y^B2 term.
            let y0 = model.constants.gamma / model.safe_level(mb.m_star);
            (
                vec![rel(t.y0, y0), t.q.abs(), t.ym.abs(), t.d2.abs()],
                "rows: y0 relative to gamma/k, then q, y_m and D2 which must vanish",
            )
        }
    };
    let mut r = CheckReport::from_residuals("terminal_matching", vec![mb.m_star], details, 1e-8);
    r.notes.push(note.into());
    Ok(r)
}

fn candidate_reports(value: &dyn ValueFunction, model: &Model) -> Vec<CheckReport> {
    let (lo, hi) = value.domain();
    let grid = interior_grid(lo, hi, VERIFY_POINTS);
    vec![
        hjb_residual(value, model, &grid),
        verification_conditions(value, model, &grid),
    ]
}

/// Runs the checks for the regime at the scenario's maximum wealth.
/// `perturb_d1` injects a scaled coefficient (the closed form scales its
/// exponent instead) as a negative control.
pub fn cmd_verify(
    scenario: &Scenario,
    perturb_d1: Option<f64>,
    opts: &RunOptions,
) -> CliResult<Output> {
    json_only(opts, "verify")?;
    let model = scenario.model()?;
    let m = scenario.agent_state()?.m;
    let regime = regime_at_m(&model, m)?;
    let mut reports = Vec::new();
    match regime {
        Regime::FixedMaxBelowSafe => {
            let mut v = FixedMaxValue::new(&model, m)?;
            if let Some(f) = perturb_d1 {
                v.sol.gamma *= f;
            }
            reports.extend(candidate_reports(&v, &model));
        }
        Regime::RatchetBlocked => {
            match perturb_d1 {
                Some(f) => reports.extend(candidate_reports(
                    &PerturbedDual::blocked(&model, m, f)?,
                    &model,
                )),
                None => reports.extend(candidate_reports(&BlockedValue::new(&model, m)?, &model)),
            }
            reports.push(boundary_report(&DualFunction::solve(&model, m)?));
            reports.push(comparison_suite(&model, m));
        }
        _ => {
            let mb = moving_boundary(&model, m, opts.boundary_cache.as_ref())?;
            let span = mb.m_star - mb.m0;
            for mi in [mb.m0, mb.m0 + 0.5 * span, mb.m_star - 1e-3 * span] {
                match perturb_d1 {
                    Some(f) => reports.extend(candidate_reports(
                        &PerturbedDual::active(&mb, mi, f)?,
                        &model,
                    )),
                    None => {
                        reports.extend(candidate_reports(&ActiveValue { mb: &mb, m: mi }, &model))
                    }
                }
            }
            reports.push(terminal_report(&model, &mb)?);
        }
    }
    let bundle = CheckReport::composite("verify", reports);
    let result = json!({
        "regime": regime,
        "pass": bundle.pass,
        "failures": bundle.failures(),
        "reports": bundle.rows,
    });
    let config = json!({ "scenario": scenario, "perturb_d1": perturb_d1 });
    let text = render_json(&envelope("verify", config, result));
    Ok(Output {
        text,
        exit_code: if bundle.pass {
            EXIT_OK
        } else {
            EXIT_VERIFY_FAILED
        },
    })
}
