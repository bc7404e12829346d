//! Catalogue of recurrent Lévy processes satisfying condition (A).
//!
//! Three kinds are supported, each with an exact increment law so that path
//! simulation never needs an Euler scheme for the driving noise:
//!
//! * standard Brownian motion with volatility `sigma`, `Ψ(λ) = σ²λ²/2`;
//! * symmetric α-stable motion with `Ψ(λ) = |λ|^α`, `1 < α ≤ 2`;
//! * a zero-mean jump diffusion: Brownian part plus compound Poisson jumps
//!   whose law is a two-sided exponential (rate `rate_up` upwards, `rate_down`
//!   downwards) with the mixing weight fixed so that `E[J] = 0`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("volatility must be finite and > 0, got {0}")]
    Volatility(f64),
    #[error("stable index must satisfy 1 < alpha <= 2 (condition (A) fails otherwise), got {0}")]
    StableIndex(f64),
    #[error("jump rate must be finite and >= 0, got {0}")]
    JumpRate(f64),
    #[error("exponential jump rates must be finite and > 0, got up={up}, down={down}")]
    JumpShape { up: f64, down: f64 },
}

/// The three supported process families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelKind {
    #[serde(alias = "brownian")]
    StandardBrownian {
        sigma: f64,
    },
    #[serde(alias = "stable")]
    SymmetricStable {
        alpha: f64,
    },
    JumpDiffusion {
        sigma: f64,
        jump_rate: f64,
        rate_up: f64,
        rate_down: f64,
    },
}

/// A recurrent Lévy process: characteristic exponent, second moment and
/// exact increment sampler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevyModel {
    kind: ModelKind,
    m2: f64,
    symmetric: bool,
}

/// Result of the condition-(A) diagnostic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionA {
    pub finite: bool,
    /// Upper estimate of `∫₀^∞ |1/(q+Ψ(λ))| dλ`; `+∞` when divergent.
    pub bound: f64,
}

/// One simulated increment together with whether a jump occurred in it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Increment {
    pub dx: f64,
    pub jumped: bool,
}

impl LevyModel {
    pub fn brownian(sigma: f64) -> Result<Self, ModelError> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(ModelError::Volatility(sigma));
        }
        Ok(Self {
            kind: ModelKind::StandardBrownian { sigma },
            m2: sigma * sigma,
            symmetric: true,
        })
    }

    pub fn stable(alpha: f64) -> Result<Self, ModelError> {
        if !(alpha.is_finite() && alpha > 1.0 && alpha <= 2.0) {
            return Err(ModelError::StableIndex(alpha));
        }
        // Ψ(λ) = λ² at α = 2 is Brownian motion with σ² = 2.
        let m2 = if alpha == 2.0 { 2.0 } else { f64::INFINITY };
        Ok(Self {
            kind: ModelKind::SymmetricStable { alpha },
            m2,
            symmetric: true,
        })
    }

    pub fn jump_diffusion(
        sigma: f64,
        jump_rate: f64,
        rate_up: f64,
        rate_down: f64,
    ) -> Result<Self, ModelError> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(ModelError::Volatility(sigma));
        }
        if !(jump_rate.is_finite() && jump_rate >= 0.0) {
            return Err(ModelError::JumpRate(jump_rate));
        }
        if !(rate_up.is_finite() && rate_up > 0.0 && rate_down.is_finite() && rate_down > 0.0) {
            return Err(ModelError::JumpShape {
                up: rate_up,
                down: rate_down,
            });
        }
        let m2 = sigma * sigma + 2.0 * jump_rate / (rate_up * rate_down);
        Ok(Self {
            kind: ModelKind::JumpDiffusion {
                sigma,
                jump_rate,
                rate_up,
                rate_down,
            },
            m2,
            symmetric: jump_rate == 0.0 || rate_up == rate_down,
        })
    }

    pub fn from_kind(kind: ModelKind) -> Result<Self, ModelError> {
        match kind {
            ModelKind::StandardBrownian { sigma } => Self::brownian(sigma),
            ModelKind::SymmetricStable { alpha } => Self::stable(alpha),
            ModelKind::JumpDiffusion {
                sigma,
                jump_rate,
                rate_up,
                rate_down,
            } => Self::jump_diffusion(sigma, jump_rate, rate_up, rate_down),
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    /// `m² = E₀[X₁²]`, `+∞` for stable laws with α < 2.
    pub fn m2(&self) -> f64 {
        self.m2
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// Volatility of the Gaussian component, if any.
    pub fn gaussian_sigma(&self) -> Option<f64> {
        match self.kind {
            ModelKind::StandardBrownian { sigma } => Some(sigma),
            ModelKind::SymmetricStable { alpha: 2.0 } => Some(std::f64::consts::SQRT_2),
            ModelKind::SymmetricStable { .. } => None,
            ModelKind::JumpDiffusion { sigma, .. } => Some(sigma),
        }
    }

    /// Whether sample paths are continuous.
    pub fn has_continuous_paths(&self) -> bool {
        match self.kind {
            ModelKind::StandardBrownian { .. } => true,
            ModelKind::SymmetricStable { alpha } => alpha == 2.0,
            ModelKind::JumpDiffusion { jump_rate, .. } => jump_rate == 0.0,
        }
    }

    /// Characteristic exponent on the real line.
    pub fn psi(&self, lambda: f64) -> Complex64 {
        match self.kind {
            ModelKind::SymmetricStable { alpha } => Complex64::new(lambda.abs().powf(alpha), 0.0),
            _ => self.psi_complex(Complex64::new(lambda, 0.0)),
        }
    }

    /// Analytic continuation of `Ψ` into the strip where `1/(q+Ψ)` is
    /// analytic. For the stable kind only the right half-plane branch is
    /// meaningful and callers never leave the real axis.
    pub fn psi_complex(&self, z: Complex64) -> Complex64 {
        match self.kind {
            ModelKind::StandardBrownian { sigma } => 0.5 * sigma * sigma * z * z,
            ModelKind::SymmetricStable { alpha } => {
                if z.im == 0.0 {
                    Complex64::new(z.re.abs().powf(alpha), 0.0)
                } else if z.re >= 0.0 {
                    z.powf(alpha)
                } else {
                    (-z).powf(alpha)
                }
            }
            ModelKind::JumpDiffusion {
                sigma,
                jump_rate,
                rate_up,
                rate_down,
            } => {
                let i = Complex64::i();
                // rate·(1 − E[e^{izJ}]) collapses to rate·z²/((η⁺ − iz)(η⁻ + iz))
                // once the zero-mean mixing weight is substituted.
                let jumps = jump_rate * z * z / ((rate_up - i * z) * (rate_down + i * z));
                0.5 * sigma * sigma * z * z + jumps
            }
        }
    }

    /// Distances `(below, above)` from the real axis to the nearest
    /// singularity of `λ ↦ 1/(q + Ψ(λ))` in the lower and upper half-planes.
    pub fn analytic_strip(&self, q: f64) -> (f64, f64) {
        match self.kind {
            ModelKind::StandardBrownian { sigma } => {
                let s = (2.0 * q).sqrt() / sigma;
                (s, s)
            }
            ModelKind::SymmetricStable { alpha } => {
                if alpha == 2.0 {
                    let s = q.sqrt();
                    (s, s)
                } else {
                    (0.0, 0.0)
                }
            }
            ModelKind::JumpDiffusion {
                sigma,
                jump_rate,
                rate_up,
                rate_down,
            } => {
                // Along λ = ∓is the exponent is real: q + Ψ(∓is) =
                // q − σ²s²/2 − rate·s²/((η± ∓ s)(η∓ ± s)), decreasing in s.
                let below = lundberg_root(q, sigma, jump_rate, rate_up, rate_down);
                let above = lundberg_root(q, sigma, jump_rate, rate_down, rate_up);
                (below, above)
            }
        }
    }

    /// Condition (A) diagnostic: is `∫₀^∞ |1/(q+Ψ(λ))| dλ` finite?
    pub fn check_condition_a(&self, q: f64) -> ConditionA {
        assert!(q > 0.0, "condition (A) is stated for q > 0");
        match self.kind {
            ModelKind::StandardBrownian { sigma } => ConditionA {
                finite: true,
                bound: brownian_abs_integral(q, sigma),
            },
            ModelKind::SymmetricStable { alpha } => {
                if alpha <= 1.0 {
                    return ConditionA {
                        finite: false,
                        bound: f64::INFINITY,
                    };
                }
                // Numeric part on [0, Λ] plus the bound ∫_Λ^∞ λ^{-α} dλ.
                let cut = (2.0 * q).powf(1.0 / alpha).max(1.0);
                let body = crate::quadrature::gauss_kronrod(
                    |l| 1.0 / (q + l.powf(alpha)),
                    0.0,
                    cut,
                    1e-12,
                    1e-10,
                    200,
                )
                .map(|r| r.value + r.error)
                .unwrap_or(cut / q);
                let tail = cut.powf(1.0 - alpha) / (alpha - 1.0);
                ConditionA {
                    finite: true,
                    bound: body + tail,
                }
            }
            ModelKind::JumpDiffusion { sigma, .. } => {
                // Re Ψ ≥ σ²λ²/2 and |q+Ψ| ≥ Re(q+Ψ).
                ConditionA {
                    finite: true,
                    bound: brownian_abs_integral(q, sigma),
                }
            }
        }
    }

    /// One draw of `X_{t+dt} − X_t`.
    pub fn sample_increment<R: Rng + ?Sized>(&self, dt: f64, rng: &mut R) -> f64 {
        self.sample_step(dt, rng).dx
    }

    /// One increment, flagging whether a jump was part of it.
    pub fn sample_step<R: Rng + ?Sized>(&self, dt: f64, rng: &mut R) -> Increment {
        match self.kind {
            ModelKind::StandardBrownian { sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                Increment {
                    dx: sigma * dt.sqrt() * z,
                    jumped: false,
                }
            }
            ModelKind::SymmetricStable { alpha } => {
                if alpha == 2.0 {
                    let z: f64 = StandardNormal.sample(rng);
                    Increment {
                        dx: (2.0 * dt).sqrt() * z,
                        jumped: false,
                    }
                } else {
                    Increment {
                        dx: dt.powf(1.0 / alpha) * symmetric_stable_variate(alpha, rng),
                        jumped: true,
                    }
                }
            }
            ModelKind::JumpDiffusion {
                sigma,
                jump_rate,
                rate_up,
                rate_down,
            } => {
                let z: f64 = StandardNormal.sample(rng);
                let mut dx = sigma * dt.sqrt() * z;
                let mut jumped = false;
                let mean = jump_rate * dt;
                if mean > 0.0 {
                    let n = if mean < 1e-3 {
                        // Poisson sampler rejects tiny means; invert directly.
                        let u: f64 = rng.random();
                        let p0 = (-mean).exp();
                        if u < p0 {
                            0
                        } else if u < p0 * (1.0 + mean) {
                            1
                        } else {
                            2
                        }
                    } else {
                        Poisson::new(mean).expect("positive mean").sample(rng) as u64
                    };
                    let p_up = rate_up / (rate_up + rate_down);
                    for _ in 0..n {
                        let e: f64 = Exp1.sample(rng);
                        let up: f64 = rng.random();
                        dx += if up < p_up { e / rate_up } else { -e / rate_down };
                    }
                    jumped = n > 0;
                }
                Increment { dx, jumped }
            }
        }
    }

    /// Short label used in reports and file names.
    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for LevyModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ModelKind::StandardBrownian { sigma } => write!(f, "brownian(sigma={sigma})"),
            ModelKind::SymmetricStable { alpha } => write!(f, "stable(alpha={alpha})"),
            ModelKind::JumpDiffusion {
                sigma,
                jump_rate,
                rate_up,
                rate_down,
            } => write!(
                f,
                "jump-diffusion(sigma={sigma},jump_rate={jump_rate},rate_up={rate_up},rate_down={rate_down})"
            ),
        }
    }
}

fn brownian_abs_integral(q: f64, sigma: f64) -> f64 {
    // ∫₀^∞ dλ / (q + σ²λ²/2) = π / (2 √(q σ²/2))
    PI / (2.0 * (0.5 * q * sigma * sigma).sqrt())
}

/// Smallest `s > 0` with `q + Ψ(−is) = 0` for a jump diffusion whose upward
/// jump rate is `near` (the pole of the moment generating function sits at
/// `s = near`).
fn lundberg_root(q: f64, sigma: f64, jump_rate: f64, near: f64, far: f64) -> f64 {
    let f = |s: f64| q - 0.5 * sigma * sigma * s * s - jump_rate * s * s / ((near - s) * (far + s));
    let brownian = (2.0 * q).sqrt() / sigma;
    if jump_rate == 0.0 {
        return brownian;
    }
    let mut lo = 0.0;
    let mut hi = near.min(brownian);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Chambers–Mallows–Stuck draw with `E[e^{iλS}] = e^{−|λ|^α}`.
fn symmetric_stable_variate<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    let v = (rng.random::<f64>() - 0.5) * PI;
    let v = v.clamp(-FRAC_PI_2 + 1e-15, FRAC_PI_2 - 1e-15);
    let w: f64 = Exp1.sample(rng);
    let w = w.max(1e-300);
    let cos_v = v.cos();
    (alpha * v).sin() / cos_v.powf(1.0 / alpha)
        * (((1.0 - alpha) * v).cos() / w).powf((1.0 - alpha) / alpha)
}
