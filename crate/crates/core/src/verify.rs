//! Monte Carlo verification harness. Every check returns a [`CheckReport`]
//! whose pass bit can be recomputed from its stored fields.
//!
//! Paths are generated in parallel with one stream per path index and all
//! reductions run sequentially in path order, so reports are bit-identical
//! for a fixed seed whatever the worker count.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::models::LevyModel;
use crate::pathsim::{aux_rng, exponential_time, path_rng, HitRule, PathWalker, SimError, SimGrid};
use crate::penalization::{
    indicator_or_occupation, inverse_clock_martingale_value, martingale_value, phi, HEstimate,
    PenalizationParams, PathState, PenaltyError, Weights, PHI_CLAMP_REPORT,
};
use crate::resolvent::{resolvent_density, HFunction, HMethod, QuadratureConfig, ResolventError};

/// Default systematic allowance for occupation-based checks (fraction of target).
pub const TOL_OCCUPATION: f64 = 0.01;
/// Default systematic allowance for hitting-based checks (fraction of target).
pub const TOL_HITTING: f64 = 0.05;

/// Weights below this are treated as exactly zero for the rest of a path.
const NEGLIGIBLE: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Penalty(#[from] PenaltyError),
    #[error(transparent)]
    Resolvent(#[from] ResolventError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("degenerate start: {0}")]
    Degenerate(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MCConfig {
    pub n_paths: usize,
    pub master_seed: u64,
    /// Sigma multiplier of the acceptance band.
    pub z: f64,
    pub grid: SimGrid,
    pub censor_budget: f64,
}

impl MCConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.n_paths < 100 {
            return Err(format!("n_paths must be at least 100, got {}", self.n_paths));
        }
        if !(self.z > 0.0 && self.z.is_finite()) {
            return Err(format!("z must be positive, got {}", self.z));
        }
        if !(0.0..1.0).contains(&self.censor_budget) {
            return Err(format!("censor_budget must lie in [0, 1), got {}", self.censor_budget));
        }
        self.grid.validate().map_err(|e| e.to_string())
    }

    pub fn with_grid(&self, grid: SimGrid) -> Self {
        MCConfig { grid, ..*self }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub estimate: f64,
    pub stderr: f64,
    pub target: f64,
    pub tol_extra: f64,
    pub z: f64,
    pub censor_budget: f64,
    pub pass: bool,
    pub censored_fraction: f64,
    pub metadata: BTreeMap<String, Value>,
}

impl CheckReport {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        estimate: f64,
        stderr: f64,
        target: f64,
        tol_extra: f64,
        mc: &MCConfig,
        censored_fraction: f64,
        metadata: BTreeMap<String, Value>,
    ) -> Self {
        let mut r = CheckReport {
            name: name.into(),
            estimate,
            stderr,
            target,
            tol_extra,
            z: mc.z,
            censor_budget: mc.censor_budget,
            pass: false,
            censored_fraction,
            metadata,
        };
        r.pass = r.recompute_pass();
        r
    }

    /// `|estimate − target| ≤ z·stderr + tol_extra` and censoring within budget.
    pub fn recompute_pass(&self) -> bool {
        (self.estimate - self.target).abs() <= self.z * self.stderr + self.tol_extra
            && self.censored_fraction <= self.censor_budget
    }

    /// One-line human summary.
    pub fn summary(&self) -> String {
        format!(
            "{} {}: estimate {:.6} ± {:.6} vs target {:.6} (tol_extra {:.6}, censored {:.4})",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.estimate,
            self.stderr,
            self.target,
            self.tol_extra,
            self.censored_fraction
        )
    }
}

/// JSON report document with one record per check.
pub fn reports_to_json(reports: &[CheckReport]) -> String {
    serde_json::to_string_pretty(reports).expect("reports serialize")
}

/// Run `f` for every path index in parallel; results come back in index order.
pub fn run_paths<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    (0..n as u64).into_par_iter().map(f).collect()
}

fn base_metadata(model: &LevyModel, mc: &MCConfig, grid: &SimGrid) -> BTreeMap<String, Value> {
    let mut m = BTreeMap::new();
    m.insert("model".into(), json!(model.label()));
    m.insert("seed".into(), json!(mc.master_seed));
    m.insert("n_paths".into(), json!(mc.n_paths));
    m.insert("dt".into(), json!(grid.dt));
    m.insert("eps".into(), json!(grid.eps));
    m.insert("horizon".into(), json!(grid.horizon));
    m.insert("params".into(), Value::Null);
    m.insert("clock".into(), Value::Null);
    m
}

// Asymmetric models have no independent oracle for `h`; say so in the report.
fn note_h_method(meta: &mut BTreeMap<String, Value>, hf: &HFunction) {
    let method = match hf.method() {
        HMethod::Direct => "direct",
        HMethod::Limit => "limit",
    };
    meta.insert("h_method".into(), json!(method));
    meta.insert("h_cross_checked".into(), json!(hf.model().is_symmetric()));
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Local time at 0 until the first hit of any of `targets`, by the ratio
/// estimator `E[L_{τ∧H}] / P(τ ≤ H)`: every path feeds the numerator,
/// only exits feed the denominator.
fn local_time_before_exit(
    model: &LevyModel,
    targets: &[f64],
    mc: &MCConfig,
) -> (f64, f64, f64) {
    let grid = mc.grid;
    let rule = HitRule::for_model(model, grid.eps);
    let n_steps = grid.n_steps();
    let outcomes = run_paths(mc.n_paths, |i| {
        let mut rng = path_rng(mc.master_seed, i);
        let mut aux = aux_rng(mc.master_seed, i);
        if targets.iter().any(|&c| c.abs() <= rule.delta) {
            return (0.0, true);
        }
        let mut walker = PathWalker::new(model, 0.0, grid.dt, grid.eps, &[0.0]);
        for _ in 0..n_steps {
            let step = walker.step(&mut rng);
            let mut exited = false;
            for &c in targets {
                exited |= rule.hits(c, &step, &mut aux);
            }
            if exited {
                return (walker.local_time(0), true);
            }
        }
        (walker.local_time(0), false)
    });
    let n = outcomes.len() as f64;
    let sum_l: f64 = outcomes.iter().map(|o| o.0).sum();
    let exits = outcomes.iter().filter(|o| o.1).count() as f64;
    let ratio = if exits > 0.0 { sum_l / exits } else { f64::INFINITY };
    let mean_i = exits / n;
    let var = outcomes
        .iter()
        .map(|&(l, e)| {
            let psi = l - ratio * if e { 1.0 } else { 0.0 };
            psi * psi
        })
        .sum::<f64>()
        / (n - 1.0);
    let stderr = (var / n).sqrt() / mean_i;
    (ratio, stderr, 1.0 - mean_i)
}

/// `E₀[L⁰_{T_a}]` against `h^B(a)`.
pub fn check_identity_hb(
    hf: &HFunction,
    a: f64,
    mc: &MCConfig,
    tol_rel: f64,
) -> Result<CheckReport, VerifyError> {
    if a == 0.0 {
        return Err(VerifyError::Precondition("check_identity_hB needs a != 0".into()));
    }
    mc.validate().map_err(VerifyError::Precondition)?;
    let target = crate::penalization::h_b(hf, a)?;
    let (estimate, stderr, censored) = local_time_before_exit(hf.model(), &[a], mc);
    let mut meta = base_metadata(hf.model(), mc, &mc.grid);
    note_h_method(&mut meta, hf);
    meta.insert("params".into(), json!({ "a": a }));
    meta.insert("clock".into(), json!({ "clock": "hitting", "c": a }));
    meta.insert("estimator".into(), json!("ratio E[L(T∧H)]/P(T<=H)"));
    Ok(CheckReport::new(
        format!("identity/hB a={a}"),
        estimate,
        stderr,
        target,
        tol_rel * target.abs(),
        mc,
        censored,
        meta,
    ))
}

/// `E₀[L⁰_{T_a∧T_b}]` against `h^C(a, b)`.
pub fn check_identity_hc(
    hf: &HFunction,
    a: f64,
    b: f64,
    mc: &MCConfig,
    tol_rel: f64,
) -> Result<CheckReport, VerifyError> {
    if a == b || a == 0.0 || b == 0.0 {
        return Err(VerifyError::Precondition(format!(
            "check_identity_hC needs distinct nonzero a, b, got {a}, {b}"
        )));
    }
    mc.validate().map_err(VerifyError::Precondition)?;
    let target = crate::penalization::h_c(hf, a, b)?;
    let (estimate, stderr, censored) = local_time_before_exit(hf.model(), &[a, b], mc);
    let mut meta = base_metadata(hf.model(), mc, &mc.grid);
    note_h_method(&mut meta, hf);
    meta.insert("params".into(), json!({ "a": a, "b": b }));
    meta.insert("clock".into(), json!({ "clock": "two-point-exit", "levels": [a, b] }));
    meta.insert("estimator".into(), json!("ratio E[L(T∧H)]/P(T<=H)"));
    Ok(CheckReport::new(
        format!("identity/hC a={a} b={b}"),
        estimate,
        stderr,
        target,
        tol_rel * target.abs(),
        mc,
        censored,
        meta,
    ))
}

/// `E₀[e^{−q η_l⁰}]` against `e^{−l / r_q(0)}`.
///
/// A path still short of local time `l` contributes 0. Once `e^{−q t}`
/// drops below 1e-12 that is exact to the same margin and the path counts
/// as resolved; only paths stopped earlier by the horizon count as censored.
pub fn check_inverse_lt_laplace(
    hf: &HFunction,
    q: f64,
    l: f64,
    mc: &MCConfig,
    tol_rel: f64,
) -> Result<CheckReport, VerifyError> {
    if !(q > 0.0 && l > 0.0) {
        return Err(VerifyError::Precondition(format!("need q > 0 and l > 0, got {q}, {l}")));
    }
    mc.validate().map_err(VerifyError::Precondition)?;
    let model = hf.model();
    let r0 = resolvent_density(model, q, 0.0, &QuadratureConfig::default())?;
    let target = (-l / r0).exp();
    let grid = mc.grid;
    let resolved_at = 12.0 * std::f64::consts::LN_10 / q;
    let n_steps = grid.n_steps();
    let outcomes = run_paths(mc.n_paths, |i| {
        let mut rng = path_rng(mc.master_seed, i);
        let mut walker = PathWalker::new(model, 0.0, grid.dt, grid.eps, &[0.0]);
        for _ in 0..n_steps {
            walker.step(&mut rng);
            if walker.local_time(0) > l {
                return ((-q * walker.t()).exp(), false);
            }
            if walker.t() >= resolved_at {
                return (0.0, false);
            }
        }
        (0.0, true)
    });
    let values: Vec<f64> = outcomes.iter().map(|o| o.0).collect();
    let censored = outcomes.iter().filter(|o| o.1).count() as f64 / outcomes.len() as f64;
    let (estimate, stderr) = mean_and_stderr(&values);
    let mut meta = base_metadata(model, mc, &grid);
    meta.insert("params".into(), json!({ "q": q, "l": l }));
    meta.insert("clock".into(), json!({ "clock": "inverse-local-time", "c": 0.0, "u": l }));
    meta.insert("r_q0".into(), json!(r0));
    Ok(CheckReport::new(
        format!("identity/inverse-lt-laplace q={q} l={l}"),
        estimate,
        stderr,
        target,
        tol_rel * target.abs(),
        mc,
        censored,
        meta,
    ))
}

/// Path snapshot: position, occupation local times and hit flags per level.
#[derive(Debug, Clone, PartialEq)]
struct Snapshot {
    x: f64,
    occupation: Vec<f64>,
    hit: Vec<bool>,
}

fn grid_index(t: f64, dt: f64) -> usize {
    (t / dt).round() as usize
}

fn check_times(t_grid: &[f64], grid: &SimGrid) -> Result<(), VerifyError> {
    let ok = t_grid.windows(2).all(|w| w[0] < w[1])
        && t_grid.iter().all(|&t| t >= 0.0 && t <= grid.horizon);
    if ok {
        Ok(())
    } else {
        Err(VerifyError::Precondition(format!(
            "t_grid must be increasing within [0, horizon], got {t_grid:?}"
        )))
    }
}

/// Snapshots at each time of `t_grid` for every path started at `x0`.
fn snapshots(
    model: &LevyModel,
    x0: f64,
    levels: &[f64],
    t_grid: &[f64],
    mc: &MCConfig,
) -> Vec<Vec<Snapshot>> {
    let grid = mc.grid;
    let rule = HitRule::for_model(model, grid.eps);
    let marks: Vec<usize> = t_grid.iter().map(|&t| grid_index(t, grid.dt)).collect();
    let last = marks.last().copied().unwrap_or(0);
    run_paths(mc.n_paths, |i| {
        let mut rng = path_rng(mc.master_seed, i);
        let mut aux = aux_rng(mc.master_seed, i);
        let mut walker = PathWalker::new(model, x0, grid.dt, grid.eps, levels);
        let mut hit: Vec<bool> = levels.iter().map(|&l| (x0 - l).abs() <= rule.delta).collect();
        let mut out = Vec::with_capacity(marks.len());
        let mut next = 0;
        let mut k = 0usize;
        loop {
            while next < marks.len() && marks[next] == k {
                out.push(Snapshot {
                    x: walker.x(),
                    occupation: (0..levels.len()).map(|j| walker.local_time(j)).collect(),
                    hit: hit.clone(),
                });
                next += 1;
            }
            if k >= last {
                break;
            }
            let step = walker.step(&mut rng);
            for (j, &level) in levels.iter().enumerate() {
                if !hit[j] {
                    hit[j] = rule.hits(level, &step, &mut aux);
                }
            }
            k += 1;
        }
        out
    })
}

fn state_for(weights: &Weights, snap: &Snapshot, l_c: f64) -> PathState {
    PathState {
        x: snap.x,
        l_a: indicator_or_occupation(weights.lambda_a, snap.hit[0], snap.occupation[0]),
        l_b: indicator_or_occupation(weights.lambda_b, snap.hit[1], snap.occupation[1]),
        l_c,
    }
}

fn params_json(p: &PenalizationParams) -> Value {
    let ext = |l: f64| if l.is_infinite() { json!("inf") } else { json!(l) };
    json!({
        "a": p.a,
        "b": p.b,
        "lambda_a": ext(p.lambda_a),
        "lambda_b": ext(p.lambda_b),
        "gamma": p.gamma,
    })
}

/// Martingale property of `φ(X_t)·Γ_t` for several parameter sets sharing
/// `(a, b)`, all on one ensemble of paths from `x0`. Returns one report per
/// combination and time.
pub fn check_martingales(
    hf: &HFunction,
    combos: &[PenalizationParams],
    t_grid: &[f64],
    x0: f64,
    mc: &MCConfig,
    tol_rel: f64,
) -> Result<Vec<Vec<CheckReport>>, VerifyError> {
    mc.validate().map_err(VerifyError::Precondition)?;
    check_times(t_grid, &mc.grid)?;
    let Some(first) = combos.first() else {
        return Ok(vec![]);
    };
    if combos.iter().any(|p| p.a != first.a || p.b != first.b) {
        return Err(VerifyError::Precondition("all combinations must share (a, b)".into()));
    }
    let mut targets = Vec::with_capacity(combos.len());
    for p in combos {
        p.validate()?;
        let m0 = phi(hf, p, x0)?.value;
        if m0 <= 0.0 {
            return Err(VerifyError::Degenerate(format!(
                "phi({x0}) = {m0} for {:?}; the martingale check needs phi(x0) > 0",
                p
            )));
        }
        targets.push(m0);
    }
    let model = hf.model();
    let snaps = snapshots(model, x0, &[first.a, first.b], t_grid, mc);
    let mut out = Vec::with_capacity(combos.len());
    for (p, &target) in combos.iter().zip(&targets) {
        let weights = p.weights();
        let mut reports = Vec::with_capacity(t_grid.len());
        for (j, &t) in t_grid.iter().enumerate() {
            let pairs: Vec<(f64, f64)> = snaps
                .par_iter()
                .map(|path| {
                    let state = state_for(&weights, &path[j], 0.0);
                    let w = weights.gamma(state.l_a, state.l_b);
                    if w == 0.0 {
                        return Ok((0.0, 0.0));
                    }
                    let v = phi(hf, p, state.x)?;
                    Ok::<_, PenaltyError>((v.value * w, v.clamp))
                })
                .collect::<Result<_, _>>()?;
            let values: Vec<f64> = pairs.iter().map(|&(v, _)| v).collect();
            let max_clamp = pairs.iter().fold(0.0f64, |m, &(_, c)| m.max(c));
            let (estimate, stderr) = mean_and_stderr(&values);
            let mut meta = base_metadata(model, mc, &mc.grid);
            note_h_method(&mut meta, hf);
            meta.insert("params".into(), params_json(p));
            meta.insert("t".into(), json!(t));
            meta.insert("x0".into(), json!(x0));
            meta.insert("phi_max_clamp".into(), json!(max_clamp));
            meta.insert("phi_clamp_flagged".into(), json!(max_clamp > PHI_CLAMP_REPORT));
            meta.insert("regime".into(), json!(p.regime()?));
            reports.push(CheckReport::new(
                format!(
                    "martingale/{} t={t} x0={x0} gamma={} lambda=({},{})",
                    model.label(),
                    p.gamma,
                    p.lambda_a,
                    p.lambda_b
                ),
                estimate,
                stderr,
                target,
                tol_rel * target.abs(),
                mc,
                0.0,
                meta,
            ));
        }
        out.push(reports);
    }
    Ok(out)
}

/// Single-combination form of [`check_martingales`].
pub fn check_martingale(
    hf: &HFunction,
    params: &PenalizationParams,
    t_grid: &[f64],
    x0: f64,
    mc: &MCConfig,
    tol_rel: f64,
) -> Result<Vec<CheckReport>, VerifyError> {
    Ok(check_martingales(hf, std::slice::from_ref(params), t_grid, x0, mc, tol_rel)?
        .pop()
        .unwrap_or_default())
}

/// Claimed martingale `e^{Ĥ L^c_t}·Γ_t` of the inverse-local-time clock with
/// `c` fixed, compared against its value at time 0. The standard error
/// folds in the uncertainty of `Ĥ` by the delta method.
#[allow(clippy::too_many_arguments)]
pub fn check_inverse_clock_martingale(
    model: &LevyModel,
    a: f64,
    b: f64,
    c: f64,
    weights: &Weights,
    h_est: &HEstimate,
    t_grid: &[f64],
    x0: f64,
    mc: &MCConfig,
    tol_rel: f64,
) -> Result<Vec<CheckReport>, VerifyError> {
    if a == b || a == c || b == c {
        return Err(VerifyError::Precondition(format!("a, b, c must be distinct, got {a}, {b}, {c}")));
    }
    mc.validate().map_err(VerifyError::Precondition)?;
    check_times(t_grid, &mc.grid)?;
    let h_const = h_est.estimate;
    let start = Snapshot {
        x: x0,
        occupation: vec![0.0; 3],
        hit: [a, b].iter().map(|&l| x0 == l).collect(),
    };
    let target = inverse_clock_martingale_value(h_const, weights, &state_for(weights, &start, 0.0));
    let snaps = snapshots(model, x0, &[a, b, c], t_grid, mc);
    let mut reports = Vec::with_capacity(t_grid.len());
    for (j, &t) in t_grid.iter().enumerate() {
        let pairs: Vec<(f64, f64)> = snaps
            .iter()
            .map(|path| {
                let s = &path[j];
                let m = inverse_clock_martingale_value(h_const, weights, &state_for(weights, s, s.occupation[2]));
                (m, s.occupation[2] * m)
            })
            .collect();
        let values: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let (estimate, se_mc) = mean_and_stderr(&values);
        let sensitivity = pairs.iter().map(|p| p.1).sum::<f64>() / pairs.len() as f64;
        let stderr = (se_mc * se_mc + (sensitivity * h_est.stderr).powi(2)).sqrt();
        let mut meta = base_metadata(model, mc, &mc.grid);
        let ext = |l: f64| if l.is_infinite() { json!("inf") } else { json!(l) };
        meta.insert(
            "params".into(),
            json!({ "a": a, "b": b, "c": c, "lambda_a": ext(weights.lambda_a), "lambda_b": ext(weights.lambda_b) }),
        );
        meta.insert("clock".into(), json!({ "clock": "inverse-local-time-fixed-level", "c": c }));
        meta.insert("h_estimate".into(), json!(h_const));
        meta.insert("h_stderr".into(), json!(h_est.stderr));
        meta.insert("stderr_mc".into(), json!(se_mc));
        meta.insert("t".into(), json!(t));
        meta.insert("x0".into(), json!(x0));
        reports.push(CheckReport::new(
            format!("inverse-clock-martingale/{} t={t} x0={x0}", model.label()),
            estimate,
            stderr,
            target,
            tol_rel * target.abs(),
            mc,
            0.0,
            meta,
        ));
    }
    Ok(reports)
}

/// One member of a clock family; the family tends to its limit as the
/// parameter moves along a schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "clock", rename_all = "kebab-case")]
pub enum LimitClock {
    /// `e_q`, `q ↓ 0`; limit martingale with γ = 0.
    Exponential { q: f64 },
    /// `T_c`, `c → ±∞`; γ = sign(c).
    Hitting { c: f64 },
    /// `T_c ∧ T_{−d}` with `c = r(1−γ)+√r`, `d = r(1+γ)+√r`, `r ↑`.
    TwoPoint { gamma: f64, r: f64 },
    /// `η_u^c`, `c → ±∞` at fixed `u`; γ = sign(c).
    InverseLocalTime { c: f64, u: f64 },
    /// `η_u^c`, `u ↑` at fixed `c`; limit process `e^{H L^c_t}Γ_t`.
    InverseLocalTimeFixedLevel { c: f64, u: f64, h_const: f64 },
}

impl LimitClock {
    fn gamma(&self) -> Option<f64> {
        match *self {
            LimitClock::Exponential { .. } => Some(0.0),
            LimitClock::Hitting { c } | LimitClock::InverseLocalTime { c, .. } => Some(c.signum()),
            LimitClock::TwoPoint { gamma, .. } => Some(gamma),
            LimitClock::InverseLocalTimeFixedLevel { .. } => None,
        }
    }

    /// `(c, d)` on the γ-path for the two-point clock.
    pub fn two_point_levels(gamma: f64, r: f64) -> (f64, f64) {
        (r * (1.0 - gamma) + r.sqrt(), r * (1.0 + gamma) + r.sqrt())
    }

    fn label(&self) -> String {
        match *self {
            LimitClock::Exponential { q } => format!("exponential q={q}"),
            LimitClock::Hitting { c } => format!("hitting c={c}"),
            LimitClock::TwoPoint { gamma, r } => format!("two-point gamma={gamma} r={r}"),
            LimitClock::InverseLocalTime { c, u } => format!("inverse-lt c={c} u={u}"),
            LimitClock::InverseLocalTimeFixedLevel { c, u, .. } => format!("inverse-lt-fixed c={c} u={u}"),
        }
    }
}

/// Bounded test functional of `X_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TestFunctional {
    One,
    Above { threshold: f64 },
    /// Indicator of `X_t` above the sample median of `X_t` over all paths.
    AboveMedian,
    /// `clamp(X_t, lo, hi)`.
    Clipped { lo: f64, hi: f64 },
}

impl TestFunctional {
    fn resolve(&self, xs: &[f64]) -> impl Fn(f64) -> f64 {
        let kind = *self;
        let threshold = match kind {
            TestFunctional::Above { threshold } => threshold,
            TestFunctional::AboveMedian => median(xs),
            _ => 0.0,
        };
        move |x: f64| match kind {
            TestFunctional::One => 1.0,
            TestFunctional::Above { .. } | TestFunctional::AboveMedian => {
                if x > threshold {
                    1.0
                } else {
                    0.0
                }
            }
            TestFunctional::Clipped { lo, hi } => x.clamp(lo, hi),
        }
    }
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Settings of a penalization-limit comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitOptions {
    /// Observation time of the functional.
    pub t: f64,
    pub x0: f64,
    /// Step used after `t` while waiting for the clock.
    pub coarse_dt: f64,
    pub tol_rel: f64,
}

struct LimitOutcome {
    x_t: f64,
    state_t: PathState,
    /// `Γ_τ`, `None` when the horizon cut the path before the clock rang.
    gamma_tau: Option<f64>,
}

fn limit_path(
    model: &LevyModel,
    params: &PenalizationParams,
    clock: &LimitClock,
    opts: &LimitOptions,
    mc: &MCConfig,
    index: u64,
) -> LimitOutcome {
    let grid = mc.grid;
    let weights = params.weights();
    let (a, b) = (params.a, params.b);
    let fine_rule = HitRule::for_model(model, grid.eps);
    let coarse_eps = 5.0 * opts.coarse_dt.sqrt();
    let coarse_rule = HitRule::for_model(model, coarse_eps);
    let mut rng = path_rng(mc.master_seed, index);
    let mut aux = aux_rng(mc.master_seed, index);
    let (clock_levels, lt_level): (Vec<f64>, Option<f64>) = match *clock {
        LimitClock::Exponential { .. } => (vec![], None),
        LimitClock::Hitting { c } => (vec![c], None),
        LimitClock::TwoPoint { gamma, r } => {
            let (c, d) = LimitClock::two_point_levels(gamma, r);
            (vec![c, -d], None)
        }
        LimitClock::InverseLocalTime { c, .. } | LimitClock::InverseLocalTimeFixedLevel { c, .. } => {
            (vec![], Some(c))
        }
    };
    let mut levels = vec![a, b];
    if let Some(c) = lt_level {
        levels.push(c);
    }
    let ring_at = match *clock {
        LimitClock::Exponential { q } => Some(exponential_time(q, &mut aux)),
        _ => None,
    };
    let lt_target = match *clock {
        LimitClock::InverseLocalTime { u, .. } | LimitClock::InverseLocalTimeFixedLevel { u, .. } => u,
        _ => f64::INFINITY,
    };
    let mut walker = PathWalker::new(model, opts.x0, grid.dt, grid.eps, &levels);
    let mut hit_a = (opts.x0 - a).abs() <= fine_rule.delta;
    let mut hit_b = (opts.x0 - b).abs() <= fine_rule.delta;
    let fine_steps = grid_index(opts.t, grid.dt);
    let current_gamma = |walker: &PathWalker, hit_a: bool, hit_b: bool| {
        weights.gamma(
            indicator_or_occupation(weights.lambda_a, hit_a, walker.local_time(0)),
            indicator_or_occupation(weights.lambda_b, hit_b, walker.local_time(1)),
        )
    };
    let mut observed: Option<(f64, PathState)> = None;
    let mut gamma_tau: Option<f64> = None;
    let mut k = 0usize;
    let observe = |walker: &PathWalker, hit_a: bool, hit_b: bool| PathState {
        x: walker.x(),
        l_a: indicator_or_occupation(weights.lambda_a, hit_a, walker.local_time(0)),
        l_b: indicator_or_occupation(weights.lambda_b, hit_b, walker.local_time(1)),
        l_c: lt_level.map_or(0.0, |_| walker.local_time(2)),
    };
    if fine_steps == 0 {
        observed = Some((walker.x(), observe(&walker, hit_a, hit_b)));
    }
    loop {
        if observed.is_some() && gamma_tau.is_some() {
            break;
        }
        if observed.is_some() && current_gamma(&walker, hit_a, hit_b) < NEGLIGIBLE {
            gamma_tau = Some(0.0);
            break;
        }
        if walker.t() >= grid.horizon {
            break;
        }
        if k == fine_steps && opts.coarse_dt > grid.dt {
            walker.set_resolution(opts.coarse_dt, coarse_eps);
        }
        let rule = if k < fine_steps { fine_rule } else { coarse_rule };
        let step = walker.step(&mut rng);
        k += 1;
        if !hit_a && weights.lambda_a.is_infinite() {
            hit_a = rule.hits(a, &step, &mut aux);
        }
        if !hit_b && weights.lambda_b.is_infinite() {
            hit_b = rule.hits(b, &step, &mut aux);
        }
        if gamma_tau.is_none() {
            let rang = match ring_at {
                Some(tau) => walker.t() >= tau,
                None => {
                    let mut any = false;
                    for &c in &clock_levels {
                        any |= rule.hits(c, &step, &mut aux);
                    }
                    any || lt_level.is_some_and(|_| walker.local_time(2) > lt_target)
                }
            };
            if rang {
                gamma_tau = Some(current_gamma(&walker, hit_a, hit_b));
            }
        }
        if k == fine_steps {
            observed = Some((walker.x(), observe(&walker, hit_a, hit_b)));
        }
    }
    let (x_t, state_t) = observed.unwrap_or((walker.x(), observe(&walker, hit_a, hit_b)));
    LimitOutcome {
        x_t,
        state_t,
        gamma_tau,
    }
}

/// Weighted ratio `P_x[F_t·Γ_τ]/P_x[Γ_τ]` at each clock of `schedule`
/// against `P_x[F_t·M_t/M_0]` with the closed-form limit martingale.
/// The last schedule entry is the most extreme parameter.
pub fn check_penalization_limit(
    hf: &HFunction,
    params: &PenalizationParams,
    schedule: &[LimitClock],
    functional: TestFunctional,
    opts: &LimitOptions,
    mc: &MCConfig,
) -> Result<Vec<CheckReport>, VerifyError> {
    mc.validate().map_err(VerifyError::Precondition)?;
    check_times(&[opts.t], &mc.grid)?;
    if !(opts.coarse_dt >= mc.grid.dt) {
        return Err(VerifyError::Precondition("coarse_dt must be at least the fine dt".into()));
    }
    let model = hf.model();
    let mut reports = Vec::with_capacity(schedule.len());
    for clock in schedule {
        let tilted = clock.gamma().map(|g| PenalizationParams { gamma: g, ..*params });
        let m0 = match (&tilted, clock) {
            (Some(p), _) => phi(hf, p, opts.x0)?.value,
            (None, LimitClock::InverseLocalTimeFixedLevel { h_const, .. }) => {
                let s = PathState {
                    x: opts.x0,
                    ..Default::default()
                };
                inverse_clock_martingale_value(*h_const, &params.weights(), &s)
            }
            (None, _) => unreachable!("only the fixed-level clock has no tilt"),
        };
        if m0 <= 0.0 {
            return Err(VerifyError::Degenerate(format!(
                "M_0 = {m0} at x0 = {} for {}; the limit theorem needs M_0 > 0",
                opts.x0,
                clock.label()
            )));
        }
        let outcomes = run_paths(mc.n_paths, |i| limit_path(model, params, clock, opts, mc, i));
        let xs: Vec<f64> = outcomes.iter().map(|o| o.x_t).collect();
        let f = functional.resolve(&xs);
        let m_ratio: Vec<f64> = outcomes
            .par_iter()
            .map(|o| match (&tilted, clock) {
                (Some(p), _) => Ok(martingale_value(hf, p, &o.state_t)? / m0),
                (None, LimitClock::InverseLocalTimeFixedLevel { h_const, .. }) => {
                    Ok(inverse_clock_martingale_value(*h_const, &params.weights(), &o.state_t) / m0)
                }
                (None, _) => unreachable!("only the fixed-level clock has no tilt"),
            })
            .collect::<Result<_, PenaltyError>>()?;
        let n = outcomes.len() as f64;
        let censored = outcomes.iter().filter(|o| o.gamma_tau.is_none()).count();
        let survivors = outcomes.iter().filter(|o| o.gamma_tau.is_some_and(|g| g > 0.0)).count();
        let sum_g: f64 = outcomes.iter().filter_map(|o| o.gamma_tau).sum();
        if sum_g <= 0.0 {
            return Err(VerifyError::Degenerate(format!(
                "every weight Γ_τ vanished for {} ({} paths)",
                clock.label(),
                outcomes.len()
            )));
        }
        let sum_fg: f64 = outcomes.iter().filter_map(|o| o.gamma_tau.map(|g| f(o.x_t) * g)).sum();
        let lhs = sum_fg / sum_g;
        let rhs_terms: Vec<f64> = outcomes.iter().zip(&m_ratio).map(|(o, m)| f(o.x_t) * m).collect();
        let rhs = rhs_terms.iter().sum::<f64>() / n;
        let mean_g = sum_g / n;
        let mut var_d = 0.0;
        let mut var_l = 0.0;
        let mut var_r = 0.0;
        for (o, r) in outcomes.iter().zip(&rhs_terms) {
            let psi = o.gamma_tau.map_or(0.0, |g| g * (f(o.x_t) - lhs) / mean_g);
            let rho = r - rhs;
            var_d += (psi - rho).powi(2);
            var_l += psi * psi;
            var_r += rho * rho;
        }
        let se = |v: f64| (v / (n - 1.0) / n).sqrt();
        let mut meta = base_metadata(model, mc, &mc.grid);
        note_h_method(&mut meta, hf);
        meta.insert("params".into(), params_json(tilted.as_ref().unwrap_or(params)));
        meta.insert("clock".into(), serde_json::to_value(clock).expect("clock serializes"));
        meta.insert("functional".into(), serde_json::to_value(functional).expect("functional serializes"));
        meta.insert("t".into(), json!(opts.t));
        meta.insert("x0".into(), json!(opts.x0));
        meta.insert("coarse_dt".into(), json!(opts.coarse_dt));
        meta.insert("stderr_lhs".into(), json!(se(var_l)));
        meta.insert("stderr_rhs".into(), json!(se(var_r)));
        meta.insert("survivors".into(), json!(survivors));
        meta.insert("m0".into(), json!(m0));
        reports.push(CheckReport::new(
            format!("limit/{} {} x0={}", model.label(), clock.label(), opts.x0),
            lhs,
            se(var_d),
            rhs,
            opts.tol_rel * rhs.abs(),
            mc,
            censored as f64 / n,
            meta,
        ));
    }
    Ok(reports)
}
