//! One-dimensional quadrature used by the resolvent module.
//!
//! * [`gauss_kronrod`]: globally adaptive 21-point Gauss–Kronrod on a finite
//!   interval.
//! * [`exp_sinh`]: double-exponential rule for non-oscillatory integrands on
//!   `[a, ∞)` with algebraic decay.
//! * [`fourier_half_line`]: the Ooura–Mori double-exponential rule for
//!   `∫₀^∞ [c(u)cos(ωu) + s(u)sin(ωu)] du` with slowly decaying `c`, `s`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::{FRAC_PI_2, PI};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuadError {
    #[error("{rule}: tolerance not reached after {evaluations} panels/levels (estimate {estimate:e}, error {error:e})")]
    Budget {
        rule: &'static str,
        evaluations: usize,
        estimate: f64,
        error: f64,
    },
    #[error("{rule}: integrand returned a non-finite value at {at}")]
    NonFinite { rule: &'static str, at: f64 },
}

/// Integral estimate with an error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadValue {
    pub value: f64,
    pub error: f64,
}

#[allow(clippy::excessive_precision)]
const XGK: [f64; 11] = [
    0.995657163025808080735527280689003,
    0.973906528517171720077964012084452,
    0.930157491355708226001207180059508,
    0.865063366688984510732096688423493,
    0.780817726586416897063717578345042,
    0.679409568299024406234327365114874,
    0.562757134668604683339000099272694,
    0.433395394129247190799265943165784,
    0.294392862701460198131126603103866,
    0.148874338981631210884826001129720,
    0.000000000000000000000000000000000,
];

#[allow(clippy::excessive_precision)]
const WG: [f64; 5] = [
    0.066671344308688137593568809893332,
    0.149451349150580593145776339657697,
    0.219086362515982043995534934228163,
    0.269266719309996355091226921569469,
    0.295524224714752870173892994651338,
];

#[allow(clippy::excessive_precision)]
const WGK: [f64; 11] = [
    0.011694638867371874278064396062192,
    0.032558162307964727478818972459390,
    0.054755896574351996031381300244580,
    0.075039674810919952767043140916190,
    0.093125454583697605535065465083366,
    0.109387158802297641899210590325805,
    0.123491976262065851077208972246300,
    0.134709217311473325928054001771707,
    0.142775938577060080797094273138717,
    0.147739104901338491374841515972068,
    0.149445554002916905664936468389821,
];

fn qk21<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Result<(f64, f64), QuadError> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    if !fc.is_finite() {
        return Err(QuadError::NonFinite {
            rule: "gauss-kronrod",
            at: center,
        });
    }
    let mut kronrod = fc * WGK[10];
    let mut gauss = 0.0;
    let mut abs_sum = fc.abs() * WGK[10];
    let mut pairs = [(0.0, 0.0); 10];
    for j in 0..10 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        if !(f1.is_finite() && f2.is_finite()) {
            return Err(QuadError::NonFinite {
                rule: "gauss-kronrod",
                at: center + dx,
            });
        }
        pairs[j] = (f1, f2);
        kronrod += WGK[j] * (f1 + f2);
        abs_sum += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    let value = kronrod * half;
    let mut err = ((kronrod - gauss) * half).abs();
    // QUADPACK-style rescaling of the raw |K - G| difference.
    let mean = kronrod * 0.5;
    let mut asc = WGK[10] * (fc - mean).abs();
    for j in 0..10 {
        asc += WGK[j] * ((pairs[j].0 - mean).abs() + (pairs[j].1 - mean).abs());
    }
    let asc = asc * half.abs();
    if asc != 0.0 && err != 0.0 {
        let scale = (200.0 * err / asc).powf(1.5);
        err = if scale < 1.0 { asc * scale } else { asc };
    }
    let res_abs = abs_sum * half.abs();
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * res_abs);
    }
    Ok((value, err))
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Globally adaptive Gauss–Kronrod (G10/K21) on `[a, b]`.
pub fn gauss_kronrod<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_panels: usize,
) -> Result<QuadValue, QuadError> {
    gauss_kronrod_with_breaks(f, &[a, b], abs_tol, rel_tol, max_panels)
}

/// As [`gauss_kronrod`] but starting from the panels delimited by `breaks`
/// (sorted, at least two entries).
pub fn gauss_kronrod_with_breaks<F: Fn(f64) -> f64>(
    f: F,
    breaks: &[f64],
    abs_tol: f64,
    rel_tol: f64,
    max_panels: usize,
) -> Result<QuadValue, QuadError> {
    assert!(breaks.len() >= 2);
    let mut heap = BinaryHeap::new();
    let mut total = 0.0;
    let mut total_err = 0.0;
    for w in breaks.windows(2) {
        if w[1] == w[0] {
            continue;
        }
        let (value, error) = qk21(&f, w[0], w[1])?;
        total += value;
        total_err += error;
        heap.push(Panel {
            a: w[0],
            b: w[1],
            value,
            error,
        });
    }
    let max_panels = max_panels.max(heap.len());
    loop {
        let tol = abs_tol.max(rel_tol * total.abs());
        if total_err <= tol {
            return Ok(QuadValue {
                value: total,
                error: total_err,
            });
        }
        if heap.len() >= max_panels {
            return Err(QuadError::Budget {
                rule: "gauss-kronrod",
                evaluations: heap.len(),
                estimate: total,
                error: total_err,
            });
        }
        let worst = heap.pop().expect("non-empty panel set");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Panel too narrow to split further: accept what we have.
            return Ok(QuadValue {
                value: total,
                error: total_err,
            });
        }
        let (v1, e1) = qk21(&f, worst.a, mid)?;
        let (v2, e2) = qk21(&f, mid, worst.b)?;
        total += v1 + v2 - worst.value;
        total_err += e1 + e2 - worst.error;
        heap.push(Panel {
            a: worst.a,
            b: mid,
            value: v1,
            error: e1,
        });
        heap.push(Panel {
            a: mid,
            b: worst.b,
            value: v2,
            error: e2,
        });
    }
}

/// `∫_a^∞ f(u) du` by the exp-sinh substitution `u = a + exp(π/2·sinh t)`.
pub fn exp_sinh<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_levels: usize,
) -> Result<QuadValue, QuadError> {
    let node = |t: f64| -> Option<f64> {
        let e = (FRAC_PI_2 * t.sinh()).exp();
        let u = a + e;
        if !u.is_finite() || e == 0.0 {
            return Some(0.0);
        }
        let w = FRAC_PI_2 * t.cosh() * e;
        let v = f(u);
        if !v.is_finite() {
            return None;
        }
        Some(v * w)
    };
    // Truncate where the mapped integrand is negligible on both sides.
    let t_lo = -4.5;
    let t_hi = 6.7;
    let mut h = 0.5;
    let mut sum = 0.0;
    let mut k = 0i64;
    loop {
        let t = t_lo + k as f64 * h;
        if t > t_hi {
            break;
        }
        sum += node(t).ok_or(QuadError::NonFinite {
            rule: "exp-sinh",
            at: t,
        })?;
        k += 1;
    }
    let mut estimate = sum * h;
    for level in 1..=max_levels {
        h *= 0.5;
        let mut k = 0i64;
        loop {
            let t = t_lo + (2 * k + 1) as f64 * h;
            if t > t_hi {
                break;
            }
            sum += node(t).ok_or(QuadError::NonFinite {
                rule: "exp-sinh",
                at: t,
            })?;
            k += 1;
        }
        let next = sum * h;
        let diff = (next - estimate).abs();
        estimate = next;
        if level >= 3 && diff <= abs_tol.max(rel_tol * estimate.abs()) {
            return Ok(QuadValue {
                value: estimate,
                error: diff,
            });
        }
    }
    Err(QuadError::Budget {
        rule: "exp-sinh",
        evaluations: max_levels,
        estimate,
        error: f64::NAN,
    })
}

/// Ooura–Mori transform `φ(t) = t / (1 − exp(−2t − α(1−e^{−t}) − β(e^t−1)))`
/// and its derivative.
fn ooura_mori(t: f64, alpha: f64, beta: f64) -> (f64, f64) {
    if t.abs() < 1e-9 {
        let c1 = 2.0 + alpha + beta;
        let c2 = 0.5 * (beta - alpha);
        let phi0 = 1.0 / c1;
        let dphi0 = -(c2 - 0.5 * c1 * c1) / (c1 * c1);
        return (phi0 + dphi0 * t, dphi0);
    }
    let s = 2.0 * t + alpha * (-(-t).exp_m1()) + beta * t.exp_m1();
    let ds = 2.0 + alpha * (-t).exp() + beta * t.exp();
    let one_minus_e = -(-s).exp_m1();
    if !one_minus_e.is_finite() || one_minus_e.abs() > 1e300 {
        return (0.0, 0.0);
    }
    let e = (-s).exp();
    let phi = t / one_minus_e;
    let dphi = (one_minus_e - t * e * ds) / (one_minus_e * one_minus_e);
    (phi, dphi)
}

fn fourier_sum<F: Fn(f64) -> (f64, f64)>(f: &F, omega: f64, h: f64) -> Result<f64, QuadError> {
    let m = PI / h;
    let beta = 0.25;
    let alpha = beta / (1.0 + m * (1.0 + m).ln() / (4.0 * PI)).sqrt();
    let mut total = 0.0;
    // Cosine nodes sit at t = (k + 1/2)h, sine nodes at t = kh, so that the
    // trig factor vanishes double-exponentially for large t.
    for (offset, use_cos) in [(0.5, true), (0.0, false)] {
        let mut k: i64 = 0;
        let mut quiet = 0;
        // Negative side, walking towards the origin of the u-axis.
        loop {
            k -= 1;
            let t = (k as f64 + offset) * h;
            let (phi, dphi) = ooura_mori(t, alpha, beta);
            if phi == 0.0 || dphi == 0.0 {
                break;
            }
            let u = m * phi / omega;
            let (c, s) = f(u);
            let trig = if use_cos { (m * phi).cos() } else { (m * phi).sin() };
            let coef = if use_cos { c } else { s };
            let term = coef * trig * m * dphi / omega;
            if !term.is_finite() {
                return Err(QuadError::NonFinite {
                    rule: "ooura-mori",
                    at: u,
                });
            }
            total += term * h;
            if term.abs() < 1e-18 * total.abs().max(1e-300) {
                quiet += 1;
                if quiet >= 4 {
                    break;
                }
            } else {
                quiet = 0;
            }
            if k < -4000 {
                break;
            }
        }
        k = -1;
        quiet = 0;
        loop {
            k += 1;
            let t = (k as f64 + offset) * h;
            let (phi, dphi) = ooura_mori(t, alpha, beta);
            let u = m * phi / omega;
            // Past this point the trig factor is exactly zero in double precision.
            if t > 1.0 && (phi - t).abs() * m < 1e-300 {
                break;
            }
            let (c, s) = f(u);
            let trig = if use_cos { (m * phi).cos() } else { (m * phi).sin() };
            let coef = if use_cos { c } else { s };
            let term = coef * trig * m * dphi / omega;
            if !term.is_finite() {
                return Err(QuadError::NonFinite {
                    rule: "ooura-mori",
                    at: u,
                });
            }
            total += term * h;
            if term.abs() < 1e-18 * total.abs().max(1e-300) {
                quiet += 1;
                if quiet >= 4 {
                    break;
                }
            } else {
                quiet = 0;
            }
            if k > 20000 {
                break;
            }
        }
    }
    Ok(total)
}

/// `∫₀^∞ [c(u) cos(ωu) + s(u) sin(ωu)] du` for `ω > 0`, where `f(u) = (c, s)`.
///
/// The step is halved until two successive estimates agree to tolerance.
pub fn fourier_half_line<F: Fn(f64) -> (f64, f64)>(
    f: F,
    omega: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_levels: usize,
) -> Result<QuadValue, QuadError> {
    assert!(omega > 0.0);
    let mut h = 0.4;
    let mut prev = fourier_sum(&f, omega, h)?;
    for _ in 0..max_levels {
        h *= 0.5;
        let next = fourier_sum(&f, omega, h)?;
        let diff = (next - prev).abs();
        if diff <= abs_tol.max(rel_tol * next.abs()) {
            return Ok(QuadValue {
                value: next,
                error: diff,
            });
        }
        prev = next;
    }
    Err(QuadError::Budget {
        rule: "ooura-mori",
        evaluations: max_levels,
        estimate: prev,
        error: f64::NAN,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_kronrod_polynomials_and_peaks() {
        let r = gauss_kronrod(|x| x * x * x - 2.0 * x, -1.0, 3.0, 1e-13, 1e-13, 50).unwrap();
        assert!((r.value - (81.0 / 4.0 - 9.0 - (0.25 - 1.0))).abs() < 1e-12);
        let r = gauss_kronrod(|x| 1.0 / (1e-4 + x * x), -1.0, 1.0, 1e-12, 1e-12, 500).unwrap();
        let exact = 2.0 * (1.0 / 1e-2) * (1.0f64 / 1e-2).atan();
        assert!((r.value - exact).abs() < 1e-9 * exact);
    }

    #[test]
    fn gauss_kronrod_reports_budget_exhaustion() {
        let r = gauss_kronrod(|x: f64| (1.0 / x).sin(), 1e-6, 1.0, 1e-15, 1e-15, 16);
        assert!(matches!(r, Err(QuadError::Budget { .. })));
    }

    #[test]
    fn exp_sinh_algebraic_tails() {
        // ∫₀^∞ dλ/(1+λ^1.5) = (π/1.5)/sin(π/1.5)
        let r = exp_sinh(|l| 1.0 / (1.0 + l.powf(1.5)), 0.0, 1e-13, 1e-13, 12).unwrap();
        let exact = (PI / 1.5) / (PI / 1.5).sin();
        assert!((r.value - exact).abs() < 1e-10, "{} vs {}", r.value, exact);
        let r = exp_sinh(|l| 1.0 / (l * l), 2.0, 1e-13, 1e-13, 12).unwrap();
        assert!((r.value - 0.5).abs() < 1e-11);
    }

    #[test]
    fn ooura_mori_classic_integrals() {
        // ∫₀^∞ cos(ωu)/(1+u²) du = π e^{−ω}/2
        for &w in &[0.3, 1.0, 5.0] {
            let r = fourier_half_line(|u| (1.0 / (1.0 + u * u), 0.0), w, 1e-14, 1e-12, 8).unwrap();
            let exact = 0.5 * PI * (-w).exp();
            assert!((r.value - exact).abs() < 1e-11, "ω={w}: {} vs {exact}", r.value);
        }
        // ∫₀^∞ sin(u)/u du = π/2
        let r = fourier_half_line(|u| (0.0, 1.0 / u), 1.0, 1e-14, 1e-12, 8).unwrap();
        assert!((r.value - FRAC_PI_2).abs() < 1e-11);
        // ∫₀^∞ u^{-1/2} cos u du = √(π/2)
        let r = fourier_half_line(|u| (u.powf(-0.5), 0.0), 1.0, 1e-14, 1e-12, 8).unwrap();
        assert!((r.value - (PI / 2.0).sqrt()).abs() < 1e-9);
    }
}
