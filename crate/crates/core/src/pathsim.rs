//! Discretized Lévy paths with occupation-window local times, numerical
//! point hitting and the four clock families.
//!
//! [`PathWalker`] is the streaming engine: Monte Carlo code advances it step
//! by step and never stores the trajectory. [`simulate_path`] drives the same
//! engine and records everything, so a materialized [`Path`] and a walked
//! path with the same stream are identical.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::LevyModel;

/// Hard cap on `horizon / dt`.
pub const MAX_STEPS: f64 = 1e9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("step budget exceeded: {steps} steps requested, cap is {cap}")]
    Budget { steps: f64, cap: f64 },
    #[error("level {0} is not tracked by this path")]
    UntrackedLevel(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimGrid {
    pub dt: f64,
    pub horizon: f64,
    /// Half-width of the occupation window.
    pub eps: f64,
}

impl SimGrid {
    pub fn new(dt: f64, horizon: f64, eps: f64) -> Result<Self, SimError> {
        let g = SimGrid { dt, horizon, eps };
        g.validate()?;
        Ok(g)
    }

    /// Grid with the default window `eps = 5·√dt`.
    pub fn with_default_eps(dt: f64, horizon: f64) -> Result<Self, SimError> {
        SimGrid::new(dt, horizon, 5.0 * dt.sqrt())
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0 && self.horizon > 0.0 && self.eps > 0.0) {
            return Err(SimError::Grid("dt, horizon and eps must be positive".into()));
        }
        if !(self.dt.is_finite() && self.horizon.is_finite() && self.eps.is_finite()) {
            return Err(SimError::Grid("dt, horizon and eps must be finite".into()));
        }
        // Relative slack so that eps = √dt itself is admissible.
        if self.dt > self.eps * self.eps * (1.0 + 1e-12) {
            return Err(SimError::Grid(format!(
                "dt = {} exceeds eps² = {}",
                self.dt,
                self.eps * self.eps
            )));
        }
        let steps = self.horizon / self.dt;
        if steps > MAX_STEPS {
            return Err(SimError::Budget {
                steps,
                cap: MAX_STEPS,
            });
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

/// Stream driving the increments of path `index`.
pub fn path_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Independent stream for bridge corrections and clocks of path `index`.
pub fn aux_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed ^ 0x9e37_79b9_7f4a_7c15);
    rng.set_stream(index);
    rng
}

/// One simulated step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub from: f64,
    pub to: f64,
    pub dt: f64,
    /// Whether the step is a pure Gaussian move (no jump occurred in it).
    pub continuous: bool,
}

/// Streaming simulator with occupation local times at fixed levels.
#[derive(Debug, Clone)]
pub struct PathWalker<'m> {
    model: &'m LevyModel,
    dt: f64,
    eps: f64,
    gaussian: bool,
    levels: Vec<f64>,
    local: Vec<f64>,
    x: f64,
    t: f64,
    steps: u64,
    phase_start: f64,
    phase_steps: u64,
}

impl<'m> PathWalker<'m> {
    pub fn new(model: &'m LevyModel, x0: f64, dt: f64, eps: f64, levels: &[f64]) -> Self {
        PathWalker {
            model,
            dt,
            eps,
            gaussian: model.gaussian_sigma().is_some(),
            levels: levels.to_vec(),
            local: vec![0.0; levels.len()],
            x: x0,
            t: 0.0,
            steps: 0,
            phase_start: 0.0,
            phase_steps: 0,
        }
    }

    /// Switch step size and window, e.g. to a coarse phase after the
    /// observation time.
    pub fn set_resolution(&mut self, dt: f64, eps: f64) {
        self.dt = dt;
        self.eps = eps;
        self.phase_start = self.t;
        self.phase_steps = 0;
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    /// Local time at `levels()[i]`.
    pub fn local_time(&self, i: usize) -> f64 {
        self.local[i]
    }

    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Step {
        let weight = self.dt / (2.0 * self.eps);
        // Left-endpoint occupation rule.
        for (l, level) in self.local.iter_mut().zip(&self.levels) {
            if (self.x - level).abs() < self.eps {
                *l += weight;
            }
        }
        let inc = self.model.sample_step(self.dt, rng);
        let from = self.x;
        self.x += inc.dx;
        self.steps += 1;
        // Multiply rather than accumulate so that t stays on the grid.
        self.phase_steps += 1;
        self.t = self.phase_start + self.phase_steps as f64 * self.dt;
        Step {
            from,
            to: self.x,
            dt: self.dt,
            continuous: self.gaussian && !inc.jumped,
        }
    }
}

/// Numerical point-hitting rule: window entry plus, on Gaussian steps, the
/// straddle test and the Brownian-bridge crossing correction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HitRule {
    pub delta: f64,
    /// Volatility of the Gaussian component; `None` disables the bridge.
    pub bridge_sigma: Option<f64>,
}

impl HitRule {
    /// Default rule for `model`: bridge detection without a window when a
    /// Gaussian component exists, window `eps/2` for pure-jump models.
    pub fn for_model(model: &LevyModel, eps: f64) -> Self {
        let delta = if model.gaussian_sigma().is_some() { 0.0 } else { 0.5 * eps };
        HitRule {
            delta,
            bridge_sigma: model.gaussian_sigma(),
        }
    }

    /// Does `step` hit `level`?
    pub fn hits<R: Rng + ?Sized>(&self, level: f64, step: &Step, aux: &mut R) -> bool {
        let d0 = step.from - level;
        let d1 = step.to - level;
        if d1.abs() <= self.delta {
            return true;
        }
        if !step.continuous {
            return false;
        }
        if d0 * d1 <= 0.0 {
            return true;
        }
        match self.bridge_sigma {
            Some(sigma) => {
                let p = (-2.0 * d0 * d1 / (sigma * sigma * step.dt)).exp();
                // Skip the draw when the crossing chance is negligible.
                p > 1e-15 && aux.random::<f64>() < p
            }
            None => false,
        }
    }
}

/// A materialized path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub x0: f64,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub tracked_levels: Vec<f64>,
    /// `local_times[k][i]` is the local time at `tracked_levels[k]` at `times[i]`.
    pub local_times: Vec<Vec<f64>>,
    /// `continuous[i]` describes the step from `times[i]` to `times[i+1]`.
    pub continuous: Vec<bool>,
    pub bridge_sigma: Option<f64>,
}

impl Path {
    /// Deterministic path on a uniform grid, every step treated as
    /// continuous, local times computed by the occupation rule.
    pub fn from_values(values: Vec<f64>, dt: f64, eps: f64, tracked: &[f64]) -> Self {
        let n = values.len();
        let times = (0..n).map(|i| i as f64 * dt).collect();
        let mut local_times = vec![vec![0.0; n]; tracked.len()];
        for (k, level) in tracked.iter().enumerate() {
            for i in 1..n {
                let inside = (values[i - 1] - level).abs() < eps;
                local_times[k][i] = local_times[k][i - 1] + if inside { dt / (2.0 * eps) } else { 0.0 };
            }
        }
        Path {
            x0: values.first().copied().unwrap_or(0.0),
            times,
            values,
            tracked_levels: tracked.to_vec(),
            local_times,
            continuous: vec![true; n.saturating_sub(1)],
            bridge_sigma: None,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    fn level_index(&self, level: f64) -> Result<usize, SimError> {
        self.tracked_levels
            .iter()
            .position(|&l| l == level)
            .ok_or(SimError::UntrackedLevel(level))
    }

    /// Local-time series at a tracked level.
    pub fn local_time_at(&self, level: f64) -> Result<&[f64], SimError> {
        Ok(&self.local_times[self.level_index(level)?])
    }

    /// CSV dump: `time,value` followed by one `L[level]` column per tracked level.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        write!(out, "time,value")?;
        for level in &self.tracked_levels {
            write!(out, ",L[{level:?}]")?;
        }
        writeln!(out)?;
        for i in 0..self.values.len() {
            write!(out, "{:?},{:?}", self.times[i], self.values[i])?;
            for series in &self.local_times {
                write!(out, ",{:?}", series[i])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Simulate one path on `grid`, tracking local times at `tracked`.
pub fn simulate_path<R: Rng + ?Sized>(
    model: &LevyModel,
    x0: f64,
    grid: &SimGrid,
    tracked: &[f64],
    rng: &mut R,
) -> Result<Path, SimError> {
    grid.validate()?;
    let n = grid.n_steps();
    let mut walker = PathWalker::new(model, x0, grid.dt, grid.eps, tracked);
    let mut times = Vec::with_capacity(n + 1);
    let mut values = Vec::with_capacity(n + 1);
    let mut local_times = vec![Vec::with_capacity(n + 1); tracked.len()];
    let mut continuous = Vec::with_capacity(n);
    times.push(0.0);
    values.push(x0);
    for series in local_times.iter_mut() {
        series.push(0.0);
    }
    for i in 1..=n {
        let step = walker.step(rng);
        times.push(i as f64 * grid.dt);
        values.push(step.to);
        continuous.push(step.continuous);
        for (k, series) in local_times.iter_mut().enumerate() {
            series.push(walker.local_time(k));
        }
    }
    Ok(Path {
        x0,
        times,
        values,
        tracked_levels: tracked.to_vec(),
        local_times,
        continuous,
        bridge_sigma: model.gaussian_sigma(),
    })
}

/// First grid time at which the path is deemed to hit `level`.
///
/// Window entry `|X − level| ≤ delta` always counts; continuous steps that
/// straddle the level count as well. With `bridge` set (and the path carrying
/// a Gaussian volatility), non-straddling continuous steps may also fire with
/// the Brownian-bridge crossing probability.
pub fn first_hitting<R: Rng + ?Sized>(
    path: &Path,
    level: f64,
    delta: f64,
    mut bridge: Option<&mut R>,
) -> Option<f64> {
    if path.values.is_empty() {
        return None;
    }
    if (path.values[0] - level).abs() <= delta {
        return Some(path.times[0]);
    }
    for i in 1..path.values.len() {
        let step = Step {
            from: path.values[i - 1],
            to: path.values[i],
            dt: path.times[i] - path.times[i - 1],
            continuous: path.continuous[i - 1],
        };
        let hit = match (bridge.as_deref_mut(), path.bridge_sigma) {
            (Some(aux), Some(sigma)) => HitRule {
                delta,
                bridge_sigma: Some(sigma),
            }
            .hits(level, &step, aux),
            _ => HitRule {
                delta,
                bridge_sigma: None,
            }
            .hits(level, &step, &mut NoDraw),
        };
        if hit {
            return Some(path.times[i]);
        }
    }
    None
}

/// Rng that must never be consulted; used where the bridge is disabled.
struct NoDraw;

impl rand::RngCore for NoDraw {
    fn next_u32(&mut self) -> u32 {
        unreachable!("bridge correction disabled")
    }
    fn next_u64(&mut self) -> u64 {
        unreachable!("bridge correction disabled")
    }
    fn fill_bytes(&mut self, _: &mut [u8]) {
        unreachable!("bridge correction disabled")
    }
}

/// First grid time with `L^{level} > u`.
pub fn inverse_local_time(path: &Path, level: f64, u: f64) -> Result<Option<f64>, SimError> {
    let series = path.local_time_at(level)?;
    Ok(series.iter().position(|&l| l > u).map(|i| path.times[i]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "clock", rename_all = "kebab-case")]
pub enum ClockSpec {
    Exponential { q: f64 },
    Hitting { c: f64 },
    TwoPointHitting { c: f64, d: f64 },
    InverseLocalTime { c: f64, u: f64 },
}

impl ClockSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        let ok = match *self {
            ClockSpec::Exponential { q } => q > 0.0,
            ClockSpec::Hitting { c } => c.is_finite(),
            ClockSpec::TwoPointHitting { c, d } => c > 0.0 && d > 0.0,
            ClockSpec::InverseLocalTime { c, u } => c.is_finite() && u > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(SimError::Grid(format!("invalid clock parameters {self:?}")))
        }
    }

    /// Levels whose local time or hitting the clock needs.
    pub fn levels(&self) -> Vec<f64> {
        match *self {
            ClockSpec::Exponential { .. } => vec![],
            ClockSpec::Hitting { c } => vec![c],
            ClockSpec::TwoPointHitting { c, d } => vec![c, -d],
            ClockSpec::InverseLocalTime { c, .. } => vec![c],
        }
    }
}

/// Draw an exponential clock with rate `q`.
pub fn exponential_time<R: Rng + ?Sized>(q: f64, rng: &mut R) -> f64 {
    let e: f64 = Exp1.sample(rng);
    e / q
}

/// Realize `clock` on a materialized path; `None` means it did not ring
/// within the horizon. `rng` feeds the exponential clock and the bridge.
pub fn realize_clock<R: Rng + ?Sized>(
    path: &Path,
    clock: &ClockSpec,
    delta: f64,
    rng: &mut R,
) -> Result<Option<f64>, SimError> {
    clock.validate()?;
    Ok(match *clock {
        ClockSpec::Exponential { q } => {
            let t = exponential_time(q, rng);
            (t <= path.horizon()).then_some(t)
        }
        ClockSpec::Hitting { c } => first_hitting(path, c, delta, Some(rng)),
        ClockSpec::TwoPointHitting { c, d } => {
            let up = first_hitting(path, c, delta, Some(&mut *rng));
            let down = first_hitting(path, -d, delta, Some(rng));
            match (up, down) {
                (Some(u), Some(v)) => Some(u.min(v)),
                (u, v) => u.or(v),
            }
        }
        ClockSpec::InverseLocalTime { c, u } => inverse_local_time(path, c, u)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bm() -> LevyModel {
        LevyModel::brownian(1.0).unwrap()
    }

    #[test]
    fn grid_invariants() {
        assert!(SimGrid::new(1e-4, 1.0, 0.005).is_err());
        assert!(SimGrid::new(1e-4, 1.0, 0.01).is_ok());
        assert!(SimGrid::new(1e-6, 1e4, 0.01).is_err());
        let g = SimGrid::with_default_eps(1e-4, 1.0).unwrap();
        assert!((g.eps - 0.05).abs() < 1e-15);
    }

    #[test]
    fn path_starts_at_x0_and_is_reproducible() {
        let g = SimGrid::with_default_eps(1e-3, 0.5).unwrap();
        let p = simulate_path(&bm(), 3.0, &g, &[0.0], &mut path_rng(7, 0)).unwrap();
        assert_eq!(p.values[0], 3.0);
        assert_eq!(p.len(), 501);
        let q = simulate_path(&bm(), 3.0, &g, &[0.0], &mut path_rng(7, 0)).unwrap();
        assert_eq!(p, q);
        let r = simulate_path(&bm(), 3.0, &g, &[0.0], &mut path_rng(7, 1)).unwrap();
        assert_ne!(p.values, r.values);
    }

    #[test]
    fn local_time_only_grows_inside_window() {
        let p = Path::from_values(vec![5.0, 5.1, 4.9, 5.0], 0.01, 0.1, &[0.0, 5.0]);
        assert!(p.local_time_at(0.0).unwrap().iter().all(|&l| l == 0.0));
        let l5 = p.local_time_at(5.0).unwrap();
        assert!(l5.windows(2).all(|w| w[1] >= w[0]));
        assert!((l5[3] - 3.0 * 0.01 / 0.2).abs() < 1e-15);
    }

    #[test]
    fn first_hitting_examples() {
        let p = Path::from_values(vec![0.0, 0.4, 1.1], 1.0, 1.0, &[]);
        assert_eq!(first_hitting::<ChaCha8Rng>(&p, 1.0, 0.05, None), Some(2.0));
        let far = Path::from_values(vec![0.0, 0.2, -0.3, 0.1], 1.0, 1.0, &[]);
        assert_eq!(first_hitting::<ChaCha8Rng>(&far, 1.0, 0.05, None), None);
    }

    #[test]
    fn inverse_local_time_examples() {
        let p = Path::from_values(vec![0.0, 0.0, 0.0, 3.0], 0.1, 0.5, &[0.0]);
        // Each step inside the window adds 0.1/(2·0.5) = 0.1.
        assert_eq!(inverse_local_time(&p, 0.0, 0.0).unwrap(), Some(0.1));
        assert_eq!(inverse_local_time(&p, 0.0, 0.25).unwrap(), Some(0.30000000000000004));
        assert_eq!(inverse_local_time(&p, 0.0, 5.0).unwrap(), None);
        assert!(inverse_local_time(&p, 1.0, 0.1).is_err());
    }

    #[test]
    fn clocks() {
        let g = SimGrid::with_default_eps(1e-3, 1.0).unwrap();
        let p = simulate_path(&bm(), 0.0, &g, &[], &mut path_rng(3, 0)).unwrap();
        let mut rng = aux_rng(3, 0);
        let t = realize_clock(&p, &ClockSpec::Exponential { q: 1.0 }, 0.0, &mut rng).unwrap();
        if let Some(t) = t {
            assert!(t <= 1.0);
        }
        let never = realize_clock(&p, &ClockSpec::Hitting { c: 100.0 }, 0.0, &mut rng).unwrap();
        assert_eq!(never, None);
    }

    #[test]
    fn two_point_clock_is_the_earlier_hit() {
        let g = SimGrid::with_default_eps(1e-3, 2.0).unwrap();
        for i in 0..50 {
            let p = simulate_path(&bm(), 0.0, &g, &[], &mut path_rng(11, i)).unwrap();
            // Same aux stream for both so the bridge draws coincide.
            let single = realize_clock(&p, &ClockSpec::Hitting { c: 0.3 }, 0.0, &mut aux_rng(11, i)).unwrap();
            let both = realize_clock(
                &p,
                &ClockSpec::TwoPointHitting { c: 0.3, d: 0.4 },
                0.0,
                &mut aux_rng(11, i),
            )
            .unwrap();
            if let (Some(s), Some(b)) = (single, both) {
                assert!(b <= s);
            }
        }
    }

    #[test]
    fn csv_dump_header_and_first_row() {
        let p = Path::from_values(vec![2.0, 2.5], 0.5, 1.0, &[0.0, 1.0]);
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("time,value,L[0.0],L[1.0]"));
        assert_eq!(lines.next(), Some("0.0,2.0,0.0,0.0"));
    }
}
