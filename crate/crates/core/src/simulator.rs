//! Monte Carlo ruin estimates for the controlled wealth process.
//!
//! Wealth follows `dW = (r W + (mu - r) pi(W, M) - c(M)) dt + sigma pi(W, M) dB`
//! with `M` the running maximum. A path stops at ruin (`W <= 0`), at the safe
//! level (`W >= c(M)/r`), at death, or at the horizon `t_max`.
//!
//! Two estimators are available. [`Estimator::SampledDeath`] draws the
//! exponential death time and scores ruin before it; paths end at death, so
//! the cost per path is bounded by the expected lifetime. [`Estimator::DiscountedRuin`]
//! never samples death and scores `exp(-lambda tau0)` instead, which needs the
//! full horizon on surviving paths.
//!
//! Each path owns an RNG stream seeded from `(seed, path index)`, and partial
//! sums are reduced in path order, so results do not depend on thread count.

use rand::{Rng, SeedableRng};
use rand_distr::{Exp1, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::closed_form::FixedMaxSolution;
use crate::error::{Error, Result};
use crate::model::{classify_regime, AgentState, ConsumptionSpec, Model, Regime};
use crate::ratchet_active::MovingBoundary;
use crate::ratchet_blocked::DualFunction;

const BLOCK: usize = 1024;
const BLOCKED_TABLE: usize = 4096;
const ACTIVE_ROWS: usize = 129;
const ACTIVE_COLS: usize = 1024;

// ---------------------------------------------------------------------------
// Configuration and results
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    EulerMaruyama,
    /// Exact log-space stepping of the geometric shortfall; only for the
    /// fixed-maximum regime under its optimal strategy.
    ExactShortfallGbm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Estimator {
    /// Sample the death time; score 1 for ruin before death.
    SampledDeath,
    /// Score `exp(-lambda tau0)` for ruin at `tau0`; death never sampled.
    DiscountedRuin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub n_paths: usize,
    /// Horizon in years; `None` picks `14 / lambda` so `exp(-lambda t_max) < 1e-6`.
    pub t_max: Option<f64>,
    pub seed: u64,
    pub scheme: Scheme,
    pub estimator: Estimator,
    /// Brownian-bridge test for ruin between grid points.
    pub bridge: bool,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 1e-3,
            n_paths: 200_000,
            t_max: None,
            seed: 0x5EED,
            scheme: Scheme::EulerMaruyama,
            estimator: Estimator::SampledDeath,
            bridge: true,
            threads: None,
        }
    }
}

impl SimConfig {
    pub fn resolved_t_max(&self, lambda: f64) -> f64 {
        self.t_max.unwrap_or(14.0 / lambda)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "dt = {} must be positive",
                self.dt
            )));
        }
        if self.n_paths == 0 {
            return Err(Error::InvalidConfig("n_paths must be at least 1".into()));
        }
        if let Some(t) = self.t_max {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "t_max = {t} must be positive"
                )));
            }
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidConfig("threads must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Strategy {
    /// Optimal feedback of the fixed-maximum regime, with `c(M)`.
    FixedMax,
    /// Optimal feedback of the blocked regime at the starting maximum.
    Blocked,
    /// Optimal feedback on `[m0, m*]` from an integrated boundary.
    Active(Box<MovingBoundary>),
    /// Fixed amount in the risky asset.
    ConstantAmount(f64),
    /// Fixed fraction of wealth in the risky asset.
    ConstantProportion(f64),
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::FixedMax => "fixed_max",
            Strategy::Blocked => "blocked",
            Strategy::Active(_) => "active",
            Strategy::ConstantAmount(_) => "constant_amount",
            Strategy::ConstantProportion(_) => "constant_proportion",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuinEstimate {
    pub point: f64,
    pub std_error: f64,
    /// Upper end of the one-sided bias bracket `[0, bound]` from truncation.
    pub truncation_bias_bound: f64,
    pub n_paths: usize,
    pub n_ruined: u64,
    pub n_safe_absorbed: u64,
    pub n_truncated: u64,
    /// Paths ended by the sampled death time.
    pub n_died: u64,
    pub t_max: f64,
    pub estimator: Estimator,
}

// ---------------------------------------------------------------------------
// Policies
// ---------------------------------------------------------------------------

trait Policy: Sync {
    /// Risky amount at wealth `w`, maximum `m`, consumption rate `c = c(m)`.
    fn amount(&self, w: f64, m: f64, c: f64) -> f64;
}

struct FixedMaxPolicy {
    coef: f64,
    inv_r: f64,
}

impl Policy for FixedMaxPolicy {
    #[inline]
    fn amount(&self, w: f64, _m: f64, c: f64) -> f64 {
        self.coef * (c * self.inv_r - w).max(0.0)
    }
}

struct ConstantAmount(f64);

impl Policy for ConstantAmount {
    #[inline]
    fn amount(&self, _w: f64, _m: f64, _c: f64) -> f64 {
        self.0
    }
}

struct ConstantProportion(f64);

impl Policy for ConstantProportion {
    #[inline]
    fn amount(&self, w: f64, _m: f64, _c: f64) -> f64 {
        self.0 * w
    }
}

/// Blocked strategy tabulated in `sqrt(m - w)`, where it is smooth.
struct BlockedTable {
    inv_ds: f64,
    vals: Vec<f64>,
}

impl BlockedTable {
    fn new(f: &DualFunction) -> Result<Self> {
        let m = f.m();
        let s_max = m.sqrt();
        let n = BLOCKED_TABLE;
        let mut vals = Vec::with_capacity(n + 1);
        for i in 0..=n {
            let s = s_max * i as f64 / n as f64;
            let w = (m - s * s).clamp(0.0, m);
            vals.push(f.pi_unchecked(w)?);
        }
        Ok(BlockedTable {
            inv_ds: n as f64 / s_max,
            vals,
        })
    }
}

#[inline]
fn lerp_table(vals: &[f64], x: f64) -> f64 {
    let last = vals.len() - 1;
    let i = (x as usize).min(last - 1);
    let t = (x - i as f64).min(1.0);
    vals[i] + t * (vals[i + 1] - vals[i])
}

impl Policy for BlockedTable {
    #[inline]
    fn amount(&self, w: f64, m: f64, _c: f64) -> f64 {
        let d = m - w;
        if d <= 0.0 {
            return 0.0;
        }
        lerp_table(&self.vals, d.sqrt() * self.inv_ds)
    }
}

/// Ratcheting strategy tabulated on rows of `m` and columns of
/// `sqrt((m - w)/m)`. Maxima beyond `m*` (reachable only by overshoot) use
/// the `m*` row.
struct ActiveTable {
    m0: f64,
    inv_dm: f64,
    rows: Vec<Vec<f64>>,
}

impl ActiveTable {
    fn new(mb: &MovingBoundary, m_start: f64) -> Result<Self> {
        let (lo, hi) = (m_start, mb.m_star);
        let nr = if hi > lo { ACTIVE_ROWS } else { 1 };
        let mut rows = Vec::with_capacity(nr);
        for j in 0..nr {
            let m = if nr == 1 {
                hi
            } else {
                lo + (hi - lo) * j as f64 / (nr - 1) as f64
            };
            let curve = mb.curve_at(m)?;
            let ratio = mb.model.params.merton_ratio();
            let mut row = Vec::with_capacity(ACTIVE_COLS + 1);
            for i in 0..=ACTIVE_COLS {
                let u = i as f64 / ACTIVE_COLS as f64;
                let w = (m * (1.0 - u * u)).clamp(0.0, m);
                let y = curve.invert(w)?;
                row.push(-ratio * curve.scaled_curvature(y));
            }
            rows.push(row);
        }
        let inv_dm = if nr > 1 {
            (nr - 1) as f64 / (hi - lo)
        } else {
            0.0
        };
        Ok(ActiveTable {
            m0: lo,
            inv_dm,
            rows,
        })
    }
}

impl Policy for ActiveTable {
    #[inline]
    fn amount(&self, w: f64, m: f64, _c: f64) -> f64 {
        let x = ((m - w).max(0.0) / m).sqrt() * ACTIVE_COLS as f64;
        if self.rows.len() == 1 {
            return lerp_table(&self.rows[0], x);
        }
        let pos = ((m - self.m0) * self.inv_dm).max(0.0);
        let last = self.rows.len() - 1;
        if pos >= last as f64 {
            return lerp_table(&self.rows[last], x);
        }
        let j = pos as usize;
        let t = pos - j as f64;
        let a = lerp_table(&self.rows[j], x);
        let b = lerp_table(&self.rows[j + 1], x);
        a + t * (b - a)
    }
}

// ---------------------------------------------------------------------------
// Path engine
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    sum: f64,
    sum_sq: f64,
    ruined: u64,
    safe: u64,
    truncated: u64,
    died: u64,
    max_excursion: f64,
}

impl Tally {
    fn merge(&mut self, o: &Tally) {
        self.sum += o.sum;
        self.sum_sq += o.sum_sq;
        self.ruined += o.ruined;
        self.safe += o.safe;
        self.truncated += o.truncated;
        self.died += o.died;
        self.max_excursion = self.max_excursion.max(o.max_excursion);
    }
}

enum End {
    Ruined(f64),
    Safe,
    Died,
    Truncated,
}

fn path_rng(seed: u64, index: u64) -> Xoshiro256PlusPlus {
    // splitmix64 finaliser on a per-path key
    let mut z = seed
        ^ index
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    Xoshiro256PlusPlus::seed_from_u64(z)
}

struct Engine<'a> {
    model: &'a Model,
    consumption: ConsumptionSpec,
    state: AgentState,
    cfg: SimConfig,
    sqrt_dt: f64,
    t_max: f64,
}

/// Per-path state shared by both steppers. `x` is wealth for Euler stepping
/// and the log shortfall for exact stepping.
struct Lane {
    index: usize,
    rng: Xoshiro256PlusPlus,
    x: f64,
    m: f64,
    c: f64,
    safe: f64,
    t: f64,
    /// Full steps left before the horizon.
    full_steps: u64,
    /// Final partial step, zero once taken.
    tail: f64,
    dies: bool,
    excursion: f64,
}

impl Lane {
    /// Length and root length of the next step, or the end reached at the
    /// horizon.
    #[inline]
    fn next_step(&mut self, e: &Engine) -> std::result::Result<(f64, f64), End> {
        if self.full_steps > 0 {
            self.full_steps -= 1;
            Ok((e.cfg.dt, e.sqrt_dt))
        } else if self.tail > 0.0 {
            let h = self.tail;
            self.tail = 0.0;
            Ok((h, h.sqrt()))
        } else {
            Err(if self.dies { End::Died } else { End::Truncated })
        }
    }
}

/// One time step of one path; `Some` when the path has ended.
trait Stepper: Sync {
    fn start(&self, lane: &mut Lane);
    fn step(&self, lane: &mut Lane) -> Option<End>;
}

struct EulerStepper<'a, P> {
    engine: &'a Engine<'a>,
    policy: &'a P,
}

impl<P: Policy> Stepper for EulerStepper<'_, P> {
    fn start(&self, lane: &mut Lane) {
        lane.x = self.engine.state.w;
        lane.m = self.engine.state.m;
        lane.c = self.engine.consumption.rate(lane.m);
        lane.safe = lane.c / self.engine.model.params.r;
    }

    #[inline]
    fn step(&self, lane: &mut Lane) -> Option<End> {
        let e = self.engine;
        let p = &e.model.params;
        let w = lane.x;
        if w >= lane.safe {
            return Some(End::Safe);
        }
        let (h, sh) = match lane.next_step(e) {
            Ok(s) => s,
            Err(end) => return Some(end),
        };
        let pi = self.policy.amount(w, lane.m, lane.c);
        let vol = p.sigma * pi;
        let z: f64 = lane.rng.sample(StandardNormal);
        let w_new = w + (p.r * w + (p.mu - p.r) * pi - lane.c) * h + vol * sh * z;
        if w_new <= 0.0 {
            return Some(End::Ruined(lane.t + h * w / (w - w_new)));
        }
        if e.cfg.bridge {
            let sd = vol.abs() * sh;
            if w < 6.0 * sd {
                let prob = (-2.0 * w * w_new / (sd * sd)).exp();
                let u: f64 = lane.rng.random();
                if u < prob {
                    return Some(End::Ruined(lane.t + 0.5 * h));
                }
            }
        }
        lane.t += h;
        lane.x = w_new;
        if w_new > lane.m {
            lane.excursion = lane.excursion.max(w_new - e.state.m);
            lane.m = w_new;
            lane.c = e.consumption.rate(w_new);
            lane.safe = lane.c / p.r;
        }
        None
    }
}

/// Exact stepping of `ln Z`, `Z = c(m)/r - W`; ruin when `Z` reaches `c(m)/r`.
struct ExactStepper<'a> {
    engine: &'a Engine<'a>,
    barrier: f64,
    start_x: f64,
    mu_x: f64,
    vol: f64,
}

impl<'a> ExactStepper<'a> {
    fn new(engine: &'a Engine<'a>) -> Result<Self> {
        let sol = FixedMaxSolution::benchmark(engine.model, engine.state.m)?;
        let co = sol.shortfall_sde_coefficients(&engine.model.params);
        let k = sol.safe_level();
        Ok(ExactStepper {
            engine,
            barrier: k.ln(),
            start_x: (k - engine.state.w).ln(),
            mu_x: co.drift - 0.5 * co.vol * co.vol,
            vol: co.vol,
        })
    }
}

impl Stepper for ExactStepper<'_> {
    fn start(&self, lane: &mut Lane) {
        lane.x = self.start_x;
    }

    #[inline]
    fn step(&self, lane: &mut Lane) -> Option<End> {
        let e = self.engine;
        let (h, sh) = match lane.next_step(e) {
            Ok(s) => s,
            Err(end) => return Some(end),
        };
        let x = lane.x;
        let z: f64 = lane.rng.sample(StandardNormal);
        let x_new = x + self.mu_x * h - self.vol * sh * z;
        if x_new >= self.barrier {
            return Some(End::Ruined(lane.t + h * (self.barrier - x) / (x_new - x)));
        }
        if self.engine.cfg.bridge {
            let sd = self.vol * sh;
            let (a, b) = (self.barrier - x, self.barrier - x_new);
            if a < 6.0 * sd {
                let prob = (-2.0 * a * b / (sd * sd)).exp();
                let u: f64 = lane.rng.random();
                if u < prob {
                    return Some(End::Ruined(lane.t + 0.5 * h));
                }
            }
        }
        lane.t += h;
        lane.x = x_new;
        None
    }
}

/// Paths advanced together so independent dependency chains overlap.
const LANES: usize = 8;

impl Engine<'_> {
    /// Fresh lane for path `index`; the death time (sampled mode) is drawn
    /// first from the path's own stream.
    fn lane<S: Stepper>(&self, stepper: &S, index: usize) -> Lane {
        let mut rng = path_rng(self.cfg.seed, index as u64);
        let (horizon, dies) = match self.cfg.estimator {
            Estimator::SampledDeath => {
                let e: f64 = rng.sample(Exp1);
                let td = e / self.model.params.lambda;
                if td < self.t_max {
                    (td, true)
                } else {
                    (self.t_max, false)
                }
            }
            Estimator::DiscountedRuin => (self.t_max, false),
        };
        let n = (horizon / self.cfg.dt).floor();
        let full_steps = n as u64;
        let tail = (horizon - n * self.cfg.dt).max(0.0);
        let mut lane = Lane {
            index,
            rng,
            x: 0.0,
            m: 0.0,
            c: 0.0,
            safe: f64::INFINITY,
            t: 0.0,
            full_steps,
            tail,
            dies,
            excursion: 0.0,
        };
        stepper.start(&mut lane);
        lane
    }

    fn score(&self, end: &End) -> f64 {
        match *end {
            End::Ruined(tau) => match self.cfg.estimator {
                Estimator::SampledDeath => 1.0,
                Estimator::DiscountedRuin => (-self.model.params.lambda * tau).exp(),
            },
            _ => 0.0,
        }
    }

    fn run_block<S: Stepper>(&self, stepper: &S, block: usize) -> Tally {
        let start = block * BLOCK;
        let end = (start + BLOCK).min(self.cfg.n_paths);
        let mut outcomes: Vec<Option<End>> = (start..end).map(|_| None).collect();
        let mut excursion = 0.0f64;
        let mut next = start;
        let mut lanes: Vec<Lane> = Vec::with_capacity(LANES);
        while lanes.len() < LANES && next < end {
            lanes.push(self.lane(stepper, next));
            next += 1;
        }
        while !lanes.is_empty() {
            let mut i = 0;
            while i < lanes.len() {
                if let Some(out) = stepper.step(&mut lanes[i]) {
                    excursion = excursion.max(lanes[i].excursion);
                    outcomes[lanes[i].index - start] = Some(out);
                    if next < end {
                        lanes[i] = self.lane(stepper, next);
                        next += 1;
                    } else {
                        lanes.swap_remove(i);
                        continue;
                    }
                }
                i += 1;
            }
        }
        // Reduce in path order.
        let mut tally = Tally {
            max_excursion: excursion,
            ..Tally::default()
        };
        for out in outcomes
            .iter()
            .map(|o| o.as_ref().expect("every path ends"))
        {
            match out {
                End::Ruined(_) => tally.ruined += 1,
                End::Safe => tally.safe += 1,
                End::Died => tally.died += 1,
                End::Truncated => tally.truncated += 1,
            }
            let v = self.score(out);
            tally.sum += v;
            tally.sum_sq += v * v;
        }
        tally
    }

    fn run<S: Stepper>(&self, stepper: &S) -> Result<Tally> {
        let blocks = self.cfg.n_paths.div_ceil(BLOCK);
        let work = || -> Vec<Tally> {
            (0..blocks)
                .into_par_iter()
                .map(|b| self.run_block(stepper, b))
                .collect()
        };
        let parts = match self.cfg.threads {
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?
                .install(work),
            None => work(),
        };
        let mut total = Tally::default();
        for p in &parts {
            total.merge(p);
        }
        Ok(total)
    }

    fn run_policy<P: Policy>(&self, policy: &P) -> Result<Tally> {
        self.run(&EulerStepper {
            engine: self,
            policy,
        })
    }
}

// ---------------------------------------------------------------------------
// Entry points
// ---------------------------------------------------------------------------

fn dispatch(
    model: &Model,
    state: &AgentState,
    strategy: &Strategy,
    cfg: &SimConfig,
) -> Result<Tally> {
    let engine = Engine {
        model,
        consumption: model.consumption,
        state: *state,
        cfg: *cfg,
        sqrt_dt: cfg.dt.sqrt(),
        t_max: cfg.resolved_t_max(model.params.lambda),
    };
    if cfg.scheme == Scheme::ExactShortfallGbm {
        if !matches!(strategy, Strategy::FixedMax) {
            return Err(Error::SchemeMismatch(format!(
                "exact shortfall stepping needs the fixed-max strategy, got {}",
                strategy.name()
            )));
        }
        let regime = classify_regime(model, state)?;
        if regime != Regime::FixedMaxBelowSafe {
            return Err(Error::SchemeMismatch(format!(
                "exact shortfall stepping needs the FixedMaxBelowSafe regime, state is {regime}"
            )));
        }
        return engine.run(&ExactStepper::new(&engine)?);
    }
    match strategy {
        Strategy::FixedMax => {
            let g = model.constants.gamma;
            let p = FixedMaxPolicy {
                coef: model.params.merton_ratio() / (g - 1.0),
                inv_r: 1.0 / model.params.r,
            };
            engine.run_policy(&p)
        }
        Strategy::Blocked => {
            let f = DualFunction::solve(model, state.m)?;
            engine.run_policy(&BlockedTable::new(&f)?)
        }
        Strategy::Active(mb) => {
            if !(state.m >= mb.m0 * (1.0 - 1e-12) && state.m <= mb.m_star) {
                return Err(Error::OutOfRegime(format!(
                    "m = {} outside the boundary range [{}, {}]",
                    state.m, mb.m0, mb.m_star
                )));
            }
            engine.run_policy(&ActiveTable::new(mb, state.m.max(mb.m0))?)
        }
        Strategy::ConstantAmount(a) => engine.run_policy(&ConstantAmount(*a)),
        Strategy::ConstantProportion(k) => engine.run_policy(&ConstantProportion(*k)),
    }
}

fn validate_strategy(strategy: &Strategy) -> Result<()> {
    match *strategy {
        Strategy::ConstantAmount(a) if !a.is_finite() => Err(Error::InvalidConfig(format!(
            "constant amount {a} must be finite"
        ))),
        Strategy::ConstantProportion(k) if !k.is_finite() => Err(Error::InvalidConfig(format!(
            "constant proportion {k} must be finite"
        ))),
        _ => Ok(()),
    }
}

/// Estimates the ruin probability from `state` under `strategy`.
pub fn simulate_ruin(
    model: &Model,
    state: &AgentState,
    strategy: &Strategy,
    cfg: &SimConfig,
) -> Result<RuinEstimate> {
    cfg.validate()?;
    state.validate()?;
    validate_strategy(strategy)?;
    let n = cfg.n_paths;
    let lambda = model.params.lambda;
    let t_max = cfg.resolved_t_max(lambda);
    let trivial = |ruined: bool| RuinEstimate {
        point: if ruined { 1.0 } else { 0.0 },
        std_error: 0.0,
        truncation_bias_bound: 0.0,
        n_paths: n,
        n_ruined: if ruined { n as u64 } else { 0 },
        n_safe_absorbed: if ruined { 0 } else { n as u64 },
        n_truncated: 0,
        n_died: 0,
        t_max,
        estimator: cfg.estimator,
    };
    if state.w <= 0.0 {
        return Ok(trivial(true));
    }
    if state.w >= model.safe_level(state.m) {
        return Ok(trivial(false));
    }
    let tally = dispatch(model, state, strategy, cfg)?;
    let nf = n as f64;
    let mean = tally.sum / nf;
    let var = if n > 1 {
        ((tally.sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0)
    } else {
        0.0
    };
    let tail = (-lambda * t_max).exp();
    let truncation_bias_bound = match cfg.estimator {
        Estimator::SampledDeath => {
            if tally.truncated > 0 {
                tail
            } else {
                0.0
            }
        }
        Estimator::DiscountedRuin => tail * tally.truncated as f64 / nf,
    };
    Ok(RuinEstimate {
        point: mean.clamp(0.0, 1.0),
        std_error: (var / nf).sqrt(),
        truncation_bias_bound,
        n_paths: n,
        n_ruined: tally.ruined,
        n_safe_absorbed: tally.safe,
        n_truncated: tally.truncated,
        n_died: tally.died,
        t_max,
        estimator: cfg.estimator,
    })
}

/// Largest overshoot `(W_t - m)^+` of the starting maximum over all paths.
pub fn max_wealth_excursion(
    model: &Model,
    state: &AgentState,
    strategy: &Strategy,
    cfg: &SimConfig,
) -> Result<f64> {
    cfg.validate()?;
    state.validate()?;
    validate_strategy(strategy)?;
    if state.w <= 0.0 || state.w >= model.safe_level(state.m) {
        return Ok(0.0);
    }
    let mut cfg = *cfg;
    cfg.scheme = Scheme::EulerMaruyama;
    Ok(dispatch(model, state, strategy, &cfg)?.max_excursion)
}

/// Loose one-step overshoot bound `2 max_w (|drift| dt + 3 sigma pi sqrt(dt))`
/// over a grid of `[0, m]`, for the fixed-max and blocked strategies.
pub fn excursion_bound(
    model: &Model,
    state: &AgentState,
    strategy: &Strategy,
    dt: f64,
) -> Result<f64> {
    let m = state.m;
    let c = model.consumption.rate(m);
    let p = &model.params;
    let pi_at: Box<dyn Fn(f64) -> Result<f64>> = match strategy {
        Strategy::FixedMax => {
            let coef = p.merton_ratio() / (model.constants.gamma - 1.0);
            Box::new(move |w: f64| Ok(coef * (c / p.r - w).max(0.0)))
        }
        Strategy::Blocked => {
            let f = DualFunction::solve(model, m)?;
            Box::new(move |w: f64| f.pi_unchecked(w))
        }
        Strategy::ConstantAmount(a) => {
            let a = *a;
            Box::new(move |_| Ok(a))
        }
        Strategy::ConstantProportion(k) => {
            let k = *k;
            Box::new(move |w| Ok(k * w))
        }
        Strategy::Active(_) => {
            return Err(Error::PreconditionViolation(
                "the ratcheting strategy lets wealth exceed m by design".into(),
            ))
        }
    };
    let mut worst = 0.0f64;
    for i in 0..=1000 {
        let w = m * i as f64 / 1000.0;
        let pi = pi_at(w)?;
        let drift = p.r * w + (p.mu - p.r) * pi - c;
        worst = worst.max(drift.abs() * dt + 3.0 * p.sigma * pi.abs() * dt.sqrt());
    }
    Ok(2.0 * worst)
}
