//! Adaptive Gauss-Kronrod quadrature.
//!
//! The workhorse is a global adaptive bisection driven by the embedded
//! 7-point Gauss / 15-point Kronrod pair. Improper endpoints are handled by
//! geometric halving towards zero and interval doubling towards infinity,
//! each stopping once the newest piece no longer moves the total.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

/// Kronrod abscissae on [-1, 1], non-negative half, descending.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];

/// Gauss weights for XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_INTERVALS: usize = 4000;
const MAX_HALVINGS: usize = 600;
const MAX_DOUBLINGS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { abs: 1e-10, rel: 1e-9 }
    }
}

impl Tolerance {
    pub fn accepts(&self, error: f64, value: f64) -> bool {
        error <= self.abs.max(self.rel * value.abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

impl Integral {
    fn zero() -> Self {
        Self {
            value: 0.0,
            error: 0.0,
            evaluations: 0,
        }
    }
}

/// One 15-point Kronrod panel: `(kronrod, error estimate)`.
///
/// The error estimate follows the QUADPACK rescaling of `|K15 - G7|`.
pub fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Result<(f64, f64)> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = eval(f, center)?;
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    let mut abs_k = kronrod.abs();
    let mut fv = [(0.0, 0.0); 7];
    for (j, &x) in XGK[..7].iter().enumerate() {
        let dx = half * x;
        let f1 = eval(f, center - dx)?;
        let f2 = eval(f, center + dx)?;
        fv[j] = (f1, f2);
        kronrod += WGK[j] * (f1 + f2);
        abs_k += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * kronrod;
    let mut asc = WGK[7] * (fc - mean).abs();
    for (j, &(f1, f2)) in fv.iter().enumerate() {
        asc += WGK[j] * ((f1 - mean).abs() + (f2 - mean).abs());
    }
    let result = kronrod * half;
    let asc = asc * half.abs();
    let abs_k = abs_k * half.abs();
    let mut err = ((kronrod - gauss) * half).abs();
    if asc != 0.0 && err != 0.0 {
        err = asc * (200.0 * err / asc).powf(1.5).min(1.0);
    }
    if abs_k > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * abs_k);
    }
    Ok((result, err))
}

fn eval<F: Fn(f64) -> f64>(f: &F, x: f64) -> Result<f64> {
    let v = f(x);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::domain(format!("non-finite integrand {v} at x = {x}")))
    }
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

/// Integrates `f` over `[a, b]` (either orientation) by global adaptive bisection.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: Tolerance) -> Result<Integral> {
    if a == b {
        return Ok(Integral::zero());
    }
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::domain(format!("integration limits [{a}, {b}] must be finite")));
    }
    if b < a {
        let r = integrate(f, b, a, tol)?;
        return Ok(Integral {
            value: -r.value,
            ..r
        });
    }
    let (v, e) = gk15(&f, a, b)?;
    let mut heap = BinaryHeap::new();
    heap.push(Panel {
        a,
        b,
        value: v,
        error: e,
    });
    let mut total = v;
    let mut total_err = e;
    let mut evaluations = 15;
    // Panels too narrow to split further keep their error but leave the heap.
    let mut frozen_err = 0.0;
    let mut frozen_val = 0.0;
    while !tol.accepts(total_err, total) {
        let Some(p) = heap.pop() else { break };
        let mid = 0.5 * (p.a + p.b);
        if mid <= p.a || mid >= p.b || (p.b - p.a) <= 4.0 * f64::EPSILON * mid.abs().max(1e-300) {
            frozen_err += p.error;
            frozen_val += p.value;
            continue;
        }
        let (v1, e1) = gk15(&f, p.a, mid)?;
        let (v2, e2) = gk15(&f, mid, p.b)?;
        evaluations += 30;
        total += v1 + v2 - p.value;
        total_err += e1 + e2 - p.error;
        heap.push(Panel {
            a: p.a,
            b: mid,
            value: v1,
            error: e1,
        });
        heap.push(Panel {
            a: mid,
            b: p.b,
            value: v2,
            error: e2,
        });
        if heap.len() > MAX_INTERVALS {
            return Err(Error::Convergence {
                what: format!("adaptive quadrature on [{a}, {b}]"),
                iterations: heap.len(),
            });
        }
        // Resum occasionally so the running total does not drift.
        if heap.len() % 256 == 0 {
            total = heap.iter().map(|p| p.value).sum::<f64>() + frozen_val;
            total_err = heap.iter().map(|p| p.error).sum::<f64>() + frozen_err;
        }
    }
    let value = heap.iter().map(|p| p.value).sum::<f64>() + frozen_val;
    let error = heap.iter().map(|p| p.error).sum::<f64>() + frozen_err;
    if !value.is_finite() {
        return Err(Error::Overflow(format!("integral on [{a}, {b}]")));
    }
    Ok(Integral {
        value,
        error,
        evaluations,
    })
}

/// `∫_0^x f`, with `f` possibly singular at 0.
///
/// Integrates on `[x/2^(k+1), x/2^k]` for k = 0, 1, ... Each piece is held to
/// the relative tolerance alone, since values near zero can be tiny and still
/// matter once multiplied by a large scale density. Once the pieces shrink
/// geometrically the remaining tail is added from the observed ratio. Thirty
/// consecutive non-shrinking pieces are reported as divergence.
pub fn integrate_from_zero<F: Fn(f64) -> f64>(f: F, x: f64, tol: Tolerance) -> Result<Integral> {
    if x == 0.0 {
        return Ok(Integral::zero());
    }
    if !(x > 0.0) {
        return Err(Error::domain(format!("upper limit {x} must be positive")));
    }
    let mut total = Integral::zero();
    let mut hi = x;
    let mut prev: Option<f64> = None;
    let mut stalled = 0;
    for _ in 0..MAX_HALVINGS {
        let lo = 0.5 * hi;
        let piece_tol = Tolerance {
            abs: 1e-2 * tol.rel * total.value.abs(),
            rel: tol.rel,
        };
        let piece = integrate(&f, lo, hi, piece_tol)?;
        total.value += piece.value;
        total.error += piece.error;
        total.evaluations += piece.evaluations;
        let p = piece.value.abs();
        if let Some(q) = prev {
            if p <= 0.999 * q || p == 0.0 {
                stalled = 0;
                let r = if q > 0.0 { p / q } else { 0.0 };
                let tail = p * r / (1.0 - r);
                if tail <= tol.rel * total.value.abs() || p == 0.0 {
                    total.value += tail.copysign(piece.value);
                    total.error += tail * r;
                    return Ok(total);
                }
            } else {
                stalled += 1;
                if stalled >= 30 {
                    break;
                }
            }
        }
        prev = Some(p);
        hi = lo;
    }
    Err(Error::Divergent(format!("integral from 0 to {x} does not settle")))
}

/// `∫_x^∞ f` by doubling interval lengths.
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(f: F, x: f64, tol: Tolerance) -> Result<Integral> {
    let width = x.abs().max(1.0);
    let mut total = Integral::zero();
    let mut lo = x;
    let mut len = width;
    // tiny integrals must not be accepted on the absolute tolerance alone
    let mut scale = integrate(&f, lo, lo + len, tol).map(|p| p.value.abs()).unwrap_or(0.0);
    for k in 0..MAX_DOUBLINGS {
        let hi = lo + len;
        let local = Tolerance {
            abs: tol.abs.min(1e-2 * tol.rel * scale).max(f64::MIN_POSITIVE),
            rel: tol.rel,
        };
        let piece = match integrate(&f, lo, hi, local) {
            Ok(p) => p,
            Err(Error::Domain(_)) | Err(Error::Overflow(_)) => {
                return Err(Error::Divergent(format!(
                    "integrand blows up on [{lo}, {hi}] while integrating to infinity"
                )))
            }
            Err(e) => return Err(e),
        };
        total.value += piece.value;
        total.error += piece.error;
        total.evaluations += piece.evaluations;
        scale = scale.max(total.value.abs());
        if k > 0 && local.accepts(piece.value.abs(), total.value) {
            return Ok(total);
        }
        lo = hi;
        len *= 2.0;
    }
    Err(Error::Divergent(format!(
        "integral from {x} to infinity not settled after {MAX_DOUBLINGS} doublings"
    )))
}

/// `∫_a^b outer(v) * (g0 + ∫_a^v inner(u) du) dv` for `a <= b`.
///
/// Panels are processed left to right so the inner integral is carried
/// forward exactly instead of being recomputed from `a` at every node.
pub fn integrate_running<F, G>(
    outer: F,
    inner: G,
    a: f64,
    b: f64,
    g0: f64,
    tol: Tolerance,
) -> Result<Integral>
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    if a == b {
        return Ok(Integral::zero());
    }
    if b < a {
        return Err(Error::domain(format!("running integral needs a <= b, got [{a}, {b}]")));
    }
    let mut acc = Integral::zero();
    running_panel(&outer, &inner, a, b, g0, b - a, tol, 0, &mut acc)?;
    if !acc.value.is_finite() {
        return Err(Error::Overflow(format!("running integral on [{a}, {b}]")));
    }
    Ok(acc)
}

#[allow(clippy::too_many_arguments)]
fn running_panel<F, G>(
    outer: &F,
    inner: &G,
    p: f64,
    q: f64,
    g_p: f64,
    span: f64,
    tol: Tolerance,
    depth: usize,
    acc: &mut Integral,
) -> Result<f64>
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    let (inner_pq, inner_err) = gk15(inner, p, q)?;
    let g_q = g_p + inner_pq;
    let weighted = |v: f64| -> f64 {
        let carried = if v == p {
            g_p
        } else {
            match gk15(inner, p, v) {
                Ok((r, _)) => g_p + r,
                Err(_) => f64::NAN,
            }
        };
        outer(v) * carried
    };
    let (val, err) = gk15(&weighted, p, q)?;
    let outer_scale = gk15(&|v: f64| outer(v).abs(), p, q)?.0;
    let err_total = err + inner_err * outer_scale;
    let share = tol.abs * (q - p) / span;
    let inner_ok = inner_err <= 1e-12 * g_q.abs().max(inner_pq.abs()) + 1e-300;
    let narrow = (q - p) <= 1e-13 * q.abs().max(1.0);
    if (err_total <= share.max(tol.rel * val.abs()) && inner_ok) || depth >= 60 || narrow {
        acc.value += val;
        acc.error += err_total;
        acc.evaluations += 15 * 17;
        return Ok(g_q);
    }
    let mid = 0.5 * (p + q);
    let g_mid = running_panel(outer, inner, p, mid, g_p, span, tol, depth + 1, acc)?;
    running_panel(outer, inner, mid, q, g_mid, span, tol, depth + 1, acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TIGHT: Tolerance = Tolerance {
        abs: 1e-13,
        rel: 1e-12,
    };

    #[test]
    fn polynomial_is_exact() {
        let r = integrate(|x| 3.0 * x * x, 0.0, 2.0, TIGHT).unwrap();
        assert!((r.value - 8.0).abs() < 1e-13);
    }

    #[test]
    fn reversed_limits_flip_sign() {
        let r = integrate(|x: f64| x.exp(), 1.0, 0.0, TIGHT).unwrap();
        assert!((r.value + (1f64.exp() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn empty_interval_is_zero() {
        assert_eq!(integrate(|x: f64| x, 3.0, 3.0, TIGHT).unwrap().value, 0.0);
    }

    #[test]
    fn sharp_peak_needs_refinement() {
        let r = integrate(|x: f64| 1.0 / (1e-4 + x * x), -1.0, 1.0, TIGHT).unwrap();
        let exact = 2.0 * (1.0 / 1e-2) * (1.0f64 / 1e-2).atan();
        assert!((r.value - exact).abs() / exact < 1e-10, "{}", r.value);
    }

    #[test]
    fn nonfinite_integrand_is_domain_error() {
        let r = integrate(|x: f64| 1.0 / (x - 0.5), 0.0, 1.0, TIGHT);
        // 0.5 is the Kronrod centre of the first panel.
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn integrable_singularity_at_zero() {
        let r = integrate_from_zero(|x: f64| x.ln().abs() * x, 1.0, TIGHT).unwrap();
        assert!((r.value - 0.25).abs() < 1e-10);
    }

    #[test]
    fn slow_power_singularity_uses_tail() {
        let r = integrate_from_zero(|x: f64| x.powf(-0.9), 1.0, TIGHT).unwrap();
        assert!((r.value - 10.0).abs() < 1e-8, "{}", r.value);
    }

    #[test]
    fn tiny_values_keep_relative_accuracy() {
        let r = integrate_from_zero(|x: f64| 3.0 * x * x, 1e-9, Tolerance::default()).unwrap();
        assert!((r.value / 1e-27 - 1.0).abs() < 1e-9, "{}", r.value);
    }

    #[test]
    fn nonintegrable_singularity_diverges() {
        let r = integrate_from_zero(|x: f64| 1.0 / x, 1.0, Tolerance::default());
        assert!(matches!(r, Err(Error::Divergent(_))));
    }

    #[test]
    fn exponential_tail() {
        let r = integrate_to_infinity(|x: f64| (-x).exp(), 0.5, TIGHT).unwrap();
        assert!((r.value - (-0.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn growing_tail_diverges() {
        let r = integrate_to_infinity(|x: f64| x, 1.0, Tolerance::default());
        assert!(matches!(r, Err(Error::Divergent(_))));
    }

    #[test]
    fn running_integral_matches_closed_form() {
        // ∫_0^2 e^v (1 + ∫_0^v u du) dv = ∫_0^2 e^v (1 + v^2/2) dv
        let r = integrate_running(|v: f64| v.exp(), |u| u, 0.0, 2.0, 1.0, TIGHT).unwrap();
        let e2 = 2f64.exp();
        let exact = (e2 - 1.0) + 0.5 * (e2 * (4.0 - 4.0 + 2.0) - 2.0);
        assert!((r.value - exact).abs() / exact < 1e-11, "{} vs {exact}", r.value);
    }
}
