//! Resolvent density `r_q`, the difference `h_q`, the renormalized zero
//! resolvent `h = lim_{q→0+} h_q` and its tilt `h^(γ)`.
//!
//! All quantities are Fourier inversions of `1/(q + Ψ)` over the half line.
//! The finite part `[0, Λ]` goes to adaptive Gauss–Kronrod with panels
//! aligned to half-periods of `λx`; the tail `[Λ, ∞)` is integrated exactly
//! with a double-exponential rule instead of being truncated.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Mutex;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::LevyModel;
use crate::quadrature::{exp_sinh, fourier_half_line, gauss_kronrod_with_breaks, QuadError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ResolventError {
    #[error("condition (A) fails for {model} at q = {q}")]
    ConditionA { model: String, q: f64 },
    #[error("quadrature failed for {what}: {source}")]
    Quadrature {
        what: String,
        #[source]
        source: QuadError,
    },
    #[error("q -> 0 extrapolation of h({x}) did not settle in {steps} steps (last change {last_change:e})")]
    NonConvergence { x: f64, steps: usize, last_change: f64 },
    #[error("h({x}): q-sequence {sequence} and direct integral {direct} disagree beyond {allowed:e}")]
    CrossCheck {
        x: f64,
        sequence: f64,
        direct: f64,
        allowed: f64,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_panels: usize,
    /// Split point between the finite panel region and the exact tail rule.
    pub tail_cut: Option<f64>,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            abs_tol: 1e-12,
            rel_tol: 1e-10,
            max_panels: 4000,
            tail_cut: None,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<(), ResolventError> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !unit(self.abs_tol) || !unit(self.rel_tol) {
            return Err(ResolventError::Config(
                "abs_tol and rel_tol must lie in (0, 1)".into(),
            ));
        }
        if self.max_panels < 16 {
            return Err(ResolventError::Config("max_panels must be at least 16".into()));
        }
        if let Some(cut) = self.tail_cut {
            if !(cut > 0.0 && cut.is_finite()) {
                return Err(ResolventError::Config("tail_cut must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HExtrapolationConfig {
    pub q_start: f64,
    pub q_ratio: f64,
    pub stop_tol: f64,
    pub max_steps: usize,
}

impl Default for HExtrapolationConfig {
    fn default() -> Self {
        HExtrapolationConfig {
            q_start: 1.0,
            q_ratio: 0.1,
            stop_tol: 1e-8,
            max_steps: 40,
        }
    }
}

impl HExtrapolationConfig {
    pub fn validate(&self) -> Result<(), ResolventError> {
        if !(self.q_start > 0.0 && self.q_ratio > 0.0 && self.q_ratio < 1.0 && self.stop_tol > 0.0) {
            return Err(ResolventError::Config(
                "need q_start > 0, 0 < q_ratio < 1, stop_tol > 0".into(),
            ));
        }
        if self.max_steps == 0 {
            return Err(ResolventError::Config("max_steps must be positive".into()));
        }
        Ok(())
    }
}

fn quad_err(what: impl Into<String>) -> impl FnOnce(QuadError) -> ResolventError {
    let what = what.into();
    move |source| ResolventError::Quadrature { what, source }
}

/// Frequency at which `|q + Ψ|` reaches `1 + q`; the inversion kernel has
/// turned its corner beyond this point.
fn corner_frequency(model: &LevyModel, q: f64) -> f64 {
    let target = 1.0 + q;
    let level = |u: f64| (q + model.psi(u)).norm();
    let mut hi = 1.0;
    while level(hi) < target && hi < 1e12 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if level(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

fn split_point(model: &LevyModel, q: f64, x: f64, cfg: &QuadratureConfig) -> f64 {
    if let Some(cut) = cfg.tail_cut {
        return cut;
    }
    let corner = 8.0 * corner_frequency(model, q);
    if x == 0.0 {
        corner
    } else {
        corner.max(4.0 * PI / x.abs())
    }
}

/// Breakpoints on `[0, cut]` at half-periods of `λx` (capped in number).
fn panel_breaks(cut: f64, x: f64) -> Vec<f64> {
    let mut breaks = vec![0.0];
    if x != 0.0 {
        let half = PI / x.abs();
        let n = (cut / half).floor() as usize;
        let stride = n.div_ceil(512).max(1);
        let mut k = stride;
        while k <= n {
            let b = k as f64 * half;
            if b < cut {
                breaks.push(b);
            }
            k += stride;
        }
    }
    breaks.push(cut);
    breaks
}

fn kernel(model: &LevyModel, q: f64, lambda: f64) -> Complex64 {
    let d = q + model.psi(lambda);
    if !d.norm_sqr().is_finite() {
        return Complex64::new(0.0, 0.0);
    }
    d.inv()
}

/// `(1/π) ∫₀^∞ Re[(1 − e^{iλx}) / (q + Ψ(λ))] dλ` for `q ≥ 0`.
fn fused(model: &LevyModel, q: f64, x: f64, cfg: &QuadratureConfig) -> Result<f64, ResolventError> {
    if x == 0.0 {
        return Ok(0.0);
    }
    let cut = split_point(model, q, x, cfg);
    let body = |l: f64| {
        let g = kernel(model, q, l);
        let half = 0.5 * l * x;
        // 1 − e^{iλx} = 2 sin²(λx/2) − i sin(λx), free of cancellation near 0.
        let one_minus = Complex64::new(2.0 * half.sin().powi(2), -(l * x).sin());
        (one_minus * g).re
    };
    let breaks = panel_breaks(cut, x);
    let head = gauss_kronrod_with_breaks(body, &breaks, cfg.abs_tol, cfg.rel_tol, cfg.max_panels)
        .map_err(quad_err(format!("h_q({x}) body, q={q}")))?;
    let flat = exp_sinh(|l| kernel(model, q, l).re, cut, cfg.abs_tol, cfg.rel_tol, 12)
        .map_err(quad_err(format!("h_q({x}) tail, q={q}")))?;
    // ∫_Λ^∞ Re[e^{iλx} g(λ)] dλ = ∫₀^∞ Re[e^{iux} e^{iΛx} g(Λ+u)] du.
    let phase = Complex64::from_polar(1.0, cut * x);
    let sign = x.signum();
    let wave = fourier_half_line(
        |u| {
            let gg = phase * kernel(model, q, cut + u);
            (gg.re, -sign * gg.im)
        },
        x.abs(),
        cfg.abs_tol,
        cfg.rel_tol,
        8,
    )
    .map_err(quad_err(format!("h_q({x}) oscillatory tail, q={q}")))?;
    Ok((head.value + flat.value - wave.value) / PI)
}

/// `r_q(x) = (1/π) ∫₀^∞ Re[e^{−iλx} / (q + Ψ(λ))] dλ`.
///
/// For `x ≠ 0` the contour is moved into the strip of analyticity of
/// `1/(q+Ψ)` on the side where `e^{−iλx}` decays, which turns the
/// exponentially small far-field values into well-conditioned integrals.
pub fn resolvent_density(
    model: &LevyModel,
    q: f64,
    x: f64,
    cfg: &QuadratureConfig,
) -> Result<f64, ResolventError> {
    if !(q > 0.0) {
        return Err(ResolventError::Config(format!("q must be positive, got {q}")));
    }
    cfg.validate()?;
    if !model.check_condition_a(q).finite {
        return Err(ResolventError::ConditionA {
            model: model.label(),
            q,
        });
    }
    if x == 0.0 {
        let cut = split_point(model, q, 0.0, cfg);
        let head = gauss_kronrod_with_breaks(
            |l| kernel(model, q, l).re,
            &[0.0, cut],
            cfg.abs_tol,
            cfg.rel_tol,
            cfg.max_panels,
        )
        .map_err(quad_err(format!("r_q(0), q={q}")))?;
        let tail = exp_sinh(|l| kernel(model, q, l).re, cut, cfg.abs_tol, cfg.rel_tol, 12)
            .map_err(quad_err(format!("r_q(0) tail, q={q}")))?;
        return Ok((head.value + tail.value) / PI);
    }
    let (below, above) = model.analytic_strip(q);
    let reach = if x > 0.0 { below } else { above };
    let kappa = if reach > 0.0 && reach.is_finite() {
        let delta = (1.0 / (reach * x.abs())).min(0.5);
        (1.0 - delta) * reach
    } else {
        0.0
    };
    // λ = u ∓ iκ with the sign chosen so that |e^{−iλx}| = e^{−κ|x|}.
    let shift = Complex64::new(0.0, -kappa * x.signum());
    let sign = x.signum();
    let integral = fourier_half_line(
        |u| {
            let g = 1.0 / (q + model.psi_complex(Complex64::new(u, 0.0) + shift));
            // Re[e^{−iux} g] = cos(u|x|) Re g + sign(x) sin(u|x|) Im g.
            (g.re, sign * g.im)
        },
        x.abs(),
        cfg.abs_tol,
        cfg.rel_tol,
        8,
    )
    .map_err(quad_err(format!("r_q({x}), q={q}")))?;
    Ok(((-kappa * x.abs()).exp() * integral.value / PI).max(0.0))
}

/// `h_q(x) = r_q(0) − r_q(−x)`, evaluated as one fused integral.
pub fn h_q(model: &LevyModel, q: f64, x: f64, cfg: &QuadratureConfig) -> Result<f64, ResolventError> {
    if !(q > 0.0) {
        return Err(ResolventError::Config(format!("q must be positive, got {q}")));
    }
    cfg.validate()?;
    Ok(fused(model, q, x, cfg)?.max(0.0))
}

/// The q = 0 fused integral `(1/π) ∫₀^∞ Re[(1 − e^{iλx}) / Ψ(λ)] dλ`.
pub fn h_direct(model: &LevyModel, x: f64, cfg: &QuadratureConfig) -> Result<f64, ResolventError> {
    cfg.validate()?;
    Ok(fused(model, 0.0, x, cfg)?.max(0.0))
}

/// `h(x) = lim_{q→0+} h_q(x)` along `q_k = q_start·q_ratio^k`.
///
/// For symmetric models the limit is cross-checked against the direct
/// integral, which is then returned because it carries no q-bias.
pub fn h(
    model: &LevyModel,
    x: f64,
    cfg: &QuadratureConfig,
    ext: &HExtrapolationConfig,
) -> Result<f64, ResolventError> {
    cfg.validate()?;
    ext.validate()?;
    if x == 0.0 {
        return Ok(0.0);
    }
    let sequence = h_sequence(model, x, cfg, ext)?;
    if model.is_symmetric() {
        let direct = h_direct(model, x, cfg)?;
        let allowed = 10.0 * ext.stop_tol;
        if (direct - sequence).abs() > allowed {
            return Err(ResolventError::CrossCheck {
                x,
                sequence,
                direct,
                allowed,
            });
        }
        return Ok(direct);
    }
    Ok(sequence)
}

fn h_sequence(
    model: &LevyModel,
    x: f64,
    cfg: &QuadratureConfig,
    ext: &HExtrapolationConfig,
) -> Result<f64, ResolventError> {
    let mut q = ext.q_start;
    let mut prev = fused(model, q, x, cfg)?;
    let mut change = f64::INFINITY;
    for _ in 0..ext.max_steps {
        q *= ext.q_ratio;
        let next = fused(model, q, x, cfg)?;
        change = (next - prev).abs();
        prev = next;
        if change < ext.stop_tol {
            return Ok(next.max(0.0));
        }
    }
    Err(ResolventError::NonConvergence {
        x,
        steps: ext.max_steps,
        last_change: change,
    })
}

fn tilt(model: &LevyModel, gamma: f64, x: f64) -> f64 {
    let m2 = model.m2();
    if m2.is_infinite() {
        0.0
    } else {
        gamma * x / m2
    }
}

/// `h^(γ)(x) = h(x) + γx/m²`, with the tilt dropped when `m² = ∞`.
pub fn h_gamma(
    model: &LevyModel,
    gamma: f64,
    x: f64,
    cfg: &QuadratureConfig,
    ext: &HExtrapolationConfig,
) -> Result<f64, ResolventError> {
    check_gamma(gamma)?;
    Ok((h(model, x, cfg, ext)? + tilt(model, gamma, x)).max(0.0))
}

fn check_gamma(gamma: f64) -> Result<(), ResolventError> {
    if !(-1.0..=1.0).contains(&gamma) {
        return Err(ResolventError::Config(format!("gamma must lie in [-1, 1], got {gamma}")));
    }
    Ok(())
}

/// How an [`HFunction`] evaluates `h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HMethod {
    /// q = 0 fused integral: one quadrature per point.
    Direct,
    /// q-sequence with the symmetric-model cross-check, as in [`h`].
    Limit,
}

/// Memoizing evaluator of `h` for one model, shared across threads.
#[derive(Debug)]
pub struct HFunction {
    model: LevyModel,
    cfg: QuadratureConfig,
    ext: HExtrapolationConfig,
    method: HMethod,
    cache: Mutex<HashMap<u64, f64>>,
}

impl Clone for HFunction {
    fn clone(&self) -> Self {
        HFunction {
            model: self.model,
            cfg: self.cfg,
            ext: self.ext,
            method: self.method,
            cache: Mutex::new(self.cache.lock().expect("cache poisoned").clone()),
        }
    }
}

impl HFunction {
    pub fn new(
        model: LevyModel,
        cfg: QuadratureConfig,
        ext: HExtrapolationConfig,
        method: HMethod,
    ) -> Result<Self, ResolventError> {
        cfg.validate()?;
        ext.validate()?;
        Ok(HFunction {
            model,
            cfg,
            ext,
            method,
            cache: Mutex::new(HashMap::new()),
        })
    }

    /// Direct evaluator with default tolerances.
    pub fn direct(model: LevyModel) -> Self {
        HFunction::new(
            model,
            QuadratureConfig::default(),
            HExtrapolationConfig::default(),
            HMethod::Direct,
        )
        .expect("default configuration is valid")
    }

    pub fn model(&self) -> &LevyModel {
        &self.model
    }

    pub fn method(&self) -> HMethod {
        self.method
    }

    pub fn h(&self, x: f64) -> Result<f64, ResolventError> {
        if x == 0.0 {
            return Ok(0.0);
        }
        let key = x.to_bits();
        if let Some(&v) = self.cache.lock().expect("cache poisoned").get(&key) {
            return Ok(v);
        }
        let v = match self.method {
            HMethod::Direct => h_direct(&self.model, x, &self.cfg)?,
            HMethod::Limit => h(&self.model, x, &self.cfg, &self.ext)?,
        };
        // Bound memory when fed a stream of distinct path positions.
        let mut cache = self.cache.lock().expect("cache poisoned");
        if cache.len() > 1 << 16 {
            cache.clear();
        }
        cache.insert(key, v);
        Ok(v)
    }

    pub fn h_gamma(&self, gamma: f64, x: f64) -> Result<f64, ResolventError> {
        check_gamma(gamma)?;
        Ok((self.h(x)? + tilt(&self.model, gamma, x)).max(0.0))
    }
}
