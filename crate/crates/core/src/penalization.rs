//! Closed-form penalization apparatus built on `h`: `h^B`, `h^C`, two-point
//! hitting probabilities, the three φ families, the martingales they define
//! and the inverse-local-time constant `H`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::LevyModel;
use crate::pathsim::{aux_rng, path_rng, HitRule, PathWalker, SimError};
use crate::resolvent::{HFunction, ResolventError};
use crate::verify::MCConfig;

/// Clamp magnitude above which `hitting_prob` flags its result.
pub const HITTING_CLAMP_REPORT: f64 = 1e-8;
/// Clamp magnitude above which `phi` flags its result.
pub const PHI_CLAMP_REPORT: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PenaltyError {
    #[error(transparent)]
    Resolvent(#[from] ResolventError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("Monte Carlo degeneracy at u = {u}: all {n} sampled weights vanish ({survivors} survivors)")]
    Degenerate { u: f64, n: usize, survivors: usize },
}

/// Which of the three weight processes a parameter set selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// `e^{−λ_a L^a − λ_b L^b}`
    Finite,
    /// `e^{−λ_a L^a}·1{L^b = 0}`
    AvoidB,
    /// `1{L^a = L^b = 0}`
    AvoidBoth,
}

/// Pair of killing rates in `[0, ∞]`; `∞` turns the exponential weight into
/// an avoidance indicator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub lambda_a: f64,
    pub lambda_b: f64,
}

fn factor(lambda: f64, l: f64) -> f64 {
    if lambda.is_infinite() {
        if l == 0.0 {
            1.0
        } else {
            0.0
        }
    } else if lambda == 0.0 {
        1.0
    } else {
        (-lambda * l).exp()
    }
}

impl Weights {
    pub fn new(lambda_a: f64, lambda_b: f64) -> Result<Self, PenaltyError> {
        let ok = |l: f64| l >= 0.0 && !l.is_nan();
        if !(ok(lambda_a) && ok(lambda_b)) {
            return Err(PenaltyError::Domain(format!(
                "killing rates must lie in [0, inf], got ({lambda_a}, {lambda_b})"
            )));
        }
        Ok(Weights { lambda_a, lambda_b })
    }

    /// `Γ` at local times `(l_a, l_b)`.
    pub fn gamma(&self, l_a: f64, l_b: f64) -> f64 {
        factor(self.lambda_a, l_a) * factor(self.lambda_b, l_b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenalizationParams {
    pub a: f64,
    pub b: f64,
    pub lambda_a: f64,
    pub lambda_b: f64,
    pub gamma: f64,
}

impl PenalizationParams {
    pub fn new(a: f64, b: f64, lambda_a: f64, lambda_b: f64, gamma: f64) -> Result<Self, PenaltyError> {
        let p = PenalizationParams {
            a,
            b,
            lambda_a,
            lambda_b,
            gamma,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), PenaltyError> {
        if !(self.a.is_finite() && self.b.is_finite()) || self.a == self.b {
            return Err(PenaltyError::Domain(format!(
                "need distinct finite points, got a = {}, b = {}",
                self.a, self.b
            )));
        }
        if !(-1.0..=1.0).contains(&self.gamma) {
            return Err(PenaltyError::Domain(format!("gamma must lie in [-1, 1], got {}", self.gamma)));
        }
        self.regime().map(|_| ())
    }

    pub fn regime(&self) -> Result<Regime, PenaltyError> {
        let finite = |l: f64| l > 0.0 && l.is_finite();
        match (self.lambda_a, self.lambda_b) {
            (la, lb) if finite(la) && finite(lb) => Ok(Regime::Finite),
            (la, lb) if finite(la) && lb == f64::INFINITY => Ok(Regime::AvoidB),
            (la, lb) if la == f64::INFINITY && lb == f64::INFINITY => Ok(Regime::AvoidBoth),
            (la, lb) => Err(PenaltyError::Domain(format!(
                "(lambda_a, lambda_b) = ({la}, {lb}) is not one of (finite, finite), (finite, inf), (inf, inf) with finite values > 0"
            ))),
        }
    }

    pub fn weights(&self) -> Weights {
        Weights {
            lambda_a: self.lambda_a,
            lambda_b: self.lambda_b,
        }
    }

    /// Same parameters with `a` and `b` exchanged.
    pub fn swapped(&self) -> Self {
        PenalizationParams {
            a: self.b,
            b: self.a,
            ..*self
        }
    }
}

/// Position and local times of a path at one time.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PathState {
    pub x: f64,
    pub l_a: f64,
    pub l_b: f64,
    pub l_c: f64,
}

/// A value pushed back into its admissible range, with the distance moved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Clamped {
    pub value: f64,
    pub clamp: f64,
}

impl Clamped {
    fn into_range(raw: f64, lo: f64, hi: f64) -> Self {
        let value = raw.clamp(lo, hi);
        Clamped {
            value,
            clamp: (raw - value).abs(),
        }
    }

    pub fn flagged(&self, threshold: f64) -> bool {
        self.clamp > threshold
    }
}

/// `h^B(a) = h(a) + h(−a)`.
pub fn h_b(hf: &HFunction, a: f64) -> Result<f64, PenaltyError> {
    Ok(hf.h(a)? + hf.h(-a)?)
}

/// Expected local time at 0 accumulated before `T_a ∧ T_b`.
pub fn h_c(hf: &HFunction, a: f64, b: f64) -> Result<f64, PenaltyError> {
    if a == b {
        return Err(PenaltyError::Domain(format!("h_C needs a != b, got {a}")));
    }
    let (ha, hb, hma, hmb) = (hf.h(a)?, hf.h(b)?, hf.h(-a)?, hf.h(-b)?);
    let (hab, hba) = (hf.h(a - b)?, hf.h(b - a)?);
    let t1 = (hb + hma) * hab;
    let t2 = (ha + hmb) * hba;
    let t3 = (ha - hb) * (hmb - hma);
    let t4 = hab * hba;
    // Summation order keeps the value bit-identical under a <-> b.
    let value = ((t1 + t2) + t3 - t4) / (hab + hba);
    Ok(value.max(0.0))
}

/// `P_x(T_a < T_b) = [h(b−a) + h(x−b) − h(x−a)] / h^B(a−b)`, clamped to `[0, 1]`.
pub fn hitting_prob(hf: &HFunction, x: f64, a: f64, b: f64) -> Result<Clamped, PenaltyError> {
    if a == b {
        return Err(PenaltyError::Domain(format!("hitting_prob needs a != b, got {a}")));
    }
    let hab = hf.h(a - b)?;
    let hba = hf.h(b - a)?;
    let raw = (hba + hf.h(x - b)? - hf.h(x - a)?) / (hab + hba);
    Ok(Clamped::into_range(raw, 0.0, 1.0))
}

/// The φ function of `params`, dispatching on the weight regime.
pub fn phi(hf: &HFunction, params: &PenalizationParams, x: f64) -> Result<Clamped, PenaltyError> {
    let regime = params.regime()?;
    params.validate()?;
    let PenalizationParams {
        a,
        b,
        lambda_a: la,
        lambda_b: lb,
        gamma,
    } = *params;
    let hg = |y: f64| hf.h_gamma(gamma, y);
    let p_a = hitting_prob(hf, x, a, b)?.value;
    let p_b = hitting_prob(hf, x, b, a)?.value;
    let g_ba = hg(b - a)?;
    let mut raw = hg(x - a)? - p_b * g_ba;
    if regime != Regime::AvoidBoth {
        let g_ab = hg(a - b)?;
        let hb_ab = h_b(hf, a - b)?;
        raw += p_a * g_ab / (1.0 + la * hb_ab);
        if regime == Regime::Finite {
            let hb_ba = h_b(hf, b - a)?;
            let joint = la + lb + la * lb * hb_ab;
            raw += p_a / (1.0 + la * hb_ba) * (1.0 + la * g_ba) / joint;
            raw += p_b * g_ba / (1.0 + lb * hb_ab);
            raw += p_b / (1.0 + lb * hb_ba) * (1.0 + lb * g_ab) / joint;
        }
    }
    Ok(Clamped::into_range(raw, 0.0, f64::INFINITY))
}

/// `φ(x)·Γ(state)` for the regime of `params`.
pub fn martingale_value(hf: &HFunction, params: &PenalizationParams, state: &PathState) -> Result<f64, PenaltyError> {
    let w = params.weights().gamma(state.l_a, state.l_b);
    if w == 0.0 {
        return Ok(0.0);
    }
    Ok(phi(hf, params, state.x)?.value * w)
}

/// `e^{H·l_c}·Γ(state)`: the process claimed to be a martingale for the
/// inverse-local-time clock with `c` fixed.
pub fn inverse_clock_martingale_value(h_const: f64, weights: &Weights, state: &PathState) -> f64 {
    let w = weights.gamma(state.l_a, state.l_b);
    if w == 0.0 {
        return 0.0;
    }
    (h_const * state.l_c).exp() * w
}

/// Result of [`estimate_h_const`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub u_grid: Vec<f64>,
    /// `−log` of the mean weight at each `u`.
    pub neg_log_means: Vec<f64>,
    pub neg_log_stderrs: Vec<f64>,
    /// Largest `|residual| / stderr` of the fit through the origin.
    pub max_residual_ratio: f64,
    pub censored_fraction: f64,
    pub n_paths: usize,
}

/// Per-path record: the weight at each `u`, `None` when censored.
type Observation = [Option<f64>; 3];

/// Weights below this are treated as exactly zero for the rest of the path.
const NEGLIGIBLE_WEIGHT: f64 = 1e-14;

#[allow(clippy::too_many_arguments)]
fn observe_inverse_clock(
    model: &LevyModel,
    a: f64,
    b: f64,
    c: f64,
    weights: &Weights,
    u_grid: &[f64; 3],
    mc: &MCConfig,
    index: u64,
) -> Observation {
    let grid = mc.grid;
    let rule = HitRule::for_model(model, grid.eps);
    let mut rng = path_rng(mc.master_seed, index);
    let mut aux = aux_rng(mc.master_seed, index);
    let mut walker = PathWalker::new(model, c, grid.dt, grid.eps, &[a, b, c]);
    let (mut hit_a, mut hit_b) = (false, false);
    let mut out: Observation = [None; 3];
    let mut next = 0;
    let n_steps = grid.n_steps();
    let current = |walker: &PathWalker, hit_a: bool, hit_b: bool| {
        let l_a = indicator_or_occupation(weights.lambda_a, hit_a, walker.local_time(0));
        let l_b = indicator_or_occupation(weights.lambda_b, hit_b, walker.local_time(1));
        weights.gamma(l_a, l_b)
    };
    for _ in 0..n_steps {
        let step = walker.step(&mut rng);
        if weights.lambda_a.is_infinite() && !hit_a {
            hit_a = rule.hits(a, &step, &mut aux);
        }
        if weights.lambda_b.is_infinite() && !hit_b {
            hit_b = rule.hits(b, &step, &mut aux);
        }
        let w = current(&walker, hit_a, hit_b);
        while next < 3 && walker.local_time(2) > u_grid[next] {
            out[next] = Some(w);
            next += 1;
        }
        if next == 3 {
            return out;
        }
        if w < NEGLIGIBLE_WEIGHT {
            for slot in out.iter_mut().skip(next) {
                *slot = Some(0.0);
            }
            return out;
        }
    }
    out
}

/// Local time fed to the weight: occupation for finite rates, a hit flag
/// (as the smallest positive value) for infinite ones.
pub fn indicator_or_occupation(lambda: f64, hit: bool, occupation: f64) -> f64 {
    if lambda.is_infinite() {
        if hit {
            occupation.max(f64::MIN_POSITIVE)
        } else {
            0.0
        }
    } else {
        occupation
    }
}

/// Estimate `H` in `P_c[Γ_{η_u^c}] = e^{−uH}` by a fit of `−log` of the
/// sample mean against `u ∈ {u0/2, u0, 2u0}` through the origin.
#[allow(clippy::too_many_arguments)]
pub fn estimate_h_const(
    model: &LevyModel,
    a: f64,
    b: f64,
    c: f64,
    weights: &Weights,
    u0: f64,
    mc: &MCConfig,
) -> Result<HEstimate, PenaltyError> {
    if a == b || a == c || b == c {
        return Err(PenaltyError::Domain(format!("a, b, c must be distinct, got {a}, {b}, {c}")));
    }
    if !(u0 > 0.0 && u0.is_finite()) {
        return Err(PenaltyError::Domain(format!("u0 must be positive, got {u0}")));
    }
    mc.validate().map_err(PenaltyError::Domain)?;
    let u_grid = [0.5 * u0, u0, 2.0 * u0];
    let obs: Vec<Observation> = (0..mc.n_paths as u64)
        .into_par_iter()
        .map(|i| observe_inverse_clock(model, a, b, c, weights, &u_grid, mc, i))
        .collect();
    let n = obs.len();
    let censored = obs.iter().filter(|o| o[2].is_none()).count();
    let mut means = [0.0; 3];
    let mut counts = [0usize; 3];
    for o in &obs {
        for k in 0..3 {
            if let Some(w) = o[k] {
                means[k] += w;
                counts[k] += 1;
            }
        }
    }
    for k in 0..3 {
        let survivors = obs.iter().filter(|o| o[k].is_some_and(|w| w > 0.0)).count();
        if counts[k] == 0 || means[k] == 0.0 {
            return Err(PenaltyError::Degenerate {
                u: u_grid[k],
                n: counts[k],
                survivors,
            });
        }
        means[k] /= counts[k] as f64;
    }
    // Covariance of the three sample means over jointly observed paths.
    let mut cov = [[0.0; 3]; 3];
    for j in 0..3 {
        for k in 0..3 {
            let mut s = 0.0;
            let mut m = 0usize;
            for o in &obs {
                if let (Some(x), Some(y)) = (o[j], o[k]) {
                    s += (x - means[j]) * (y - means[k]);
                    m += 1;
                }
            }
            if m > 1 {
                cov[j][k] = s / (m as f64 - 1.0) / (counts[j].min(counts[k]) as f64);
            }
        }
    }
    let y: Vec<f64> = means.iter().map(|m| -m.ln()).collect();
    let se: Vec<f64> = (0..3).map(|k| cov[k][k].sqrt() / means[k]).collect();
    let weights_fit: Vec<f64> = if se.iter().all(|&s| s > 0.0) {
        se.iter().map(|s| 1.0 / (s * s)).collect()
    } else {
        vec![1.0; 3]
    };
    let denom: f64 = (0..3).map(|k| weights_fit[k] * u_grid[k] * u_grid[k]).sum();
    let coef: Vec<f64> = (0..3).map(|k| weights_fit[k] * u_grid[k] / denom).collect();
    let estimate: f64 = (0..3).map(|k| coef[k] * y[k]).sum();
    let mut var = 0.0;
    for j in 0..3 {
        for k in 0..3 {
            var += coef[j] * coef[k] * cov[j][k] / (means[j] * means[k]);
        }
    }
    let mut max_ratio: f64 = 0.0;
    for k in 0..3 {
        let r = y[k] - estimate * u_grid[k];
        let ratio = if se[k] > 0.0 {
            r.abs() / se[k]
        } else if r.abs() < 1e-12 {
            0.0
        } else {
            f64::INFINITY
        };
        max_ratio = max_ratio.max(ratio);
    }
    Ok(HEstimate {
        estimate: estimate.max(0.0),
        stderr: var.max(0.0).sqrt(),
        u_grid: u_grid.to_vec(),
        neg_log_means: y,
        neg_log_stderrs: se,
        max_residual_ratio: max_ratio,
        censored_fraction: censored as f64 / n as f64,
        n_paths: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pathsim::SimGrid;

    fn bm() -> HFunction {
        HFunction::direct(LevyModel::brownian(1.0).unwrap())
    }

    #[test]
    fn h_b_and_h_c_brownian() {
        let hf = bm();
        assert!((h_b(&hf, 1.5).unwrap() - 3.0).abs() < 1e-8);
        assert_eq!(h_b(&hf, 0.0).unwrap(), 0.0);
        assert!((h_c(&hf, 1.0, -2.0).unwrap() - 4.0 / 3.0).abs() < 1e-8);
        assert!((h_c(&hf, 1.0, -1.0).unwrap() - 1.0).abs() < 1e-8);
        assert_eq!(h_c(&hf, 1.0, -2.0).unwrap(), h_c(&hf, -2.0, 1.0).unwrap());
        assert!(h_c(&hf, 1.0, 1.0).is_err());
    }

    #[test]
    fn gamblers_ruin() {
        let hf = bm();
        for &x in &[0.25, 0.5, 0.75] {
            let p = hitting_prob(&hf, x, 0.0, 1.0).unwrap();
            assert!((p.value - (1.0 - x)).abs() < 1e-8);
        }
        assert!((hitting_prob(&hf, 2.0, 1.0, 0.0).unwrap().value - 1.0).abs() < 1e-8);
        assert!((hitting_prob(&hf, 0.0, 0.0, 1.0).unwrap().value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn phi_examples() {
        let hf = bm();
        let inf = f64::INFINITY;
        let both = PenalizationParams::new(0.0, 1.0, inf, inf, 0.0).unwrap();
        assert!(phi(&hf, &both, 0.5).unwrap().value.abs() < 1e-8);
        assert!((phi(&hf, &both, -1.0).unwrap().value - 1.0).abs() < 1e-8);
        let one = PenalizationParams::new(0.0, 1.0, 1.0, inf, 0.0).unwrap();
        assert!((phi(&hf, &one, -1.0).unwrap().value - 4.0 / 3.0).abs() < 1e-8);
        let fin = PenalizationParams::new(0.0, 1.0, 1.0, 1.0, 0.0).unwrap();
        assert!((phi(&hf, &fin, 2.0).unwrap().value - 1.5).abs() < 1e-8);
        let tilted = PenalizationParams::new(0.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        assert!((phi(&hf, &tilted, 2.0).unwrap().value - 2.75).abs() < 1e-8);
    }

    #[test]
    fn params_reject_bad_regimes() {
        let inf = f64::INFINITY;
        assert!(PenalizationParams::new(0.0, 0.0, 1.0, 1.0, 0.0).is_err());
        assert!(PenalizationParams::new(0.0, 1.0, inf, 1.0, 0.0).is_err());
        assert!(PenalizationParams::new(0.0, 1.0, 0.0, 1.0, 0.0).is_err());
        assert!(PenalizationParams::new(0.0, 1.0, 1.0, 1.0, 1.5).is_err());
    }

    #[test]
    fn martingale_values() {
        let hf = bm();
        let inf = f64::INFINITY;
        let p = PenalizationParams::new(0.0, 1.0, 1.0, inf, 0.0).unwrap();
        let s = PathState {
            x: -1.0,
            l_a: 0.7,
            l_b: 0.0,
            l_c: 0.0,
        };
        let v = martingale_value(&hf, &p, &s).unwrap();
        assert!((v - 4.0 / 3.0 * (-0.7f64).exp()).abs() < 1e-8);
        let both = PenalizationParams::new(0.0, 1.0, inf, inf, 0.0).unwrap();
        let killed = PathState {
            x: -1.0,
            l_a: 0.0,
            l_b: 1e-12,
            l_c: 0.0,
        };
        assert_eq!(martingale_value(&hf, &both, &killed).unwrap(), 0.0);
    }

    #[test]
    fn inverse_clock_values() {
        let s = PathState {
            x: 0.0,
            l_a: 1.0,
            l_b: 0.5,
            l_c: 2.0,
        };
        let zero = Weights::new(0.0, 0.0).unwrap();
        assert_eq!(inverse_clock_martingale_value(0.0, &zero, &s), 1.0);
        let ones = Weights::new(1.0, 1.0).unwrap();
        let v = inverse_clock_martingale_value(0.5, &ones, &s);
        assert!((v - (-0.5f64).exp()).abs() < 1e-15);
        let inf = Weights::new(f64::INFINITY, f64::INFINITY).unwrap();
        let clean = PathState {
            x: 0.0,
            l_a: 0.0,
            l_b: 0.0,
            l_c: 2.0,
        };
        assert_eq!(inverse_clock_martingale_value(0.3, &inf, &clean), (0.6f64).exp());
    }

    #[test]
    fn estimate_h_vanishes_without_killing() {
        let model = LevyModel::brownian(1.0).unwrap();
        let mc = MCConfig {
            n_paths: 200,
            master_seed: 5,
            z: 3.0,
            grid: SimGrid::with_default_eps(1e-3, 20.0).unwrap(),
            censor_budget: 0.5,
        };
        let est = estimate_h_const(&model, 1.0, 2.0, 0.0, &Weights::new(0.0, 0.0).unwrap(), 0.5, &mc).unwrap();
        assert_eq!(est.estimate, 0.0);
        assert!(est.estimate.abs() <= 3.0 * est.stderr + 1e-15);
    }
}
