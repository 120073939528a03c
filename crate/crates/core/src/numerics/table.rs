//! Cached antiderivatives.
//!
//! A table stores `F(x_i)` on nodes that are log-spaced (eight per octave
//! around an anchor) and then split further wherever a single Kronrod panel
//! would not resolve the integrand, so node spacing follows curvature.
//! Evaluating `F(x)` costs one panel from the nearest node below `x`.

use super::quad::{gk15, integrate, integrate_from_zero, Tolerance};
use crate::error::{Error, Result};

const PER_OCTAVE: i32 = 8;
const OCTAVES_BELOW: i32 = 40;
const OCTAVES_ABOVE: i32 = 16;
const LEAF_REL: f64 = 1e-13;
const MAX_DEPTH: usize = 40;

/// Where the antiderivative is pinned to zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Origin {
    /// `F(x) = ∫_0^x f`, improper at zero.
    Zero,
    /// `F(x) = ∫_a^x f`.
    Anchor,
}

#[derive(Debug, Clone)]
pub struct CumulativeTable {
    origin: Origin,
    anchor: f64,
    nodes: Vec<f64>,
    values: Vec<f64>,
    /// Set when `∫_0^{nodes[0]} f` could not be computed.
    base_error: Option<Error>,
    tol: Tolerance,
}

impl CumulativeTable {
    pub fn build<F: Fn(f64) -> f64>(f: &F, anchor: f64, origin: Origin, tol: Tolerance) -> Result<Self> {
        if !(anchor > 0.0 && anchor.is_finite()) {
            return Err(Error::domain(format!("table anchor {anchor} must be positive")));
        }
        let coarse = |k: i32| anchor * 2f64.powf(k as f64 / PER_OCTAVE as f64);

        // Walk up from the anchor, then down, splitting panels as needed.
        // `segs[i]` is the integral over `[nodes[i], nodes[i + 1]]`.
        let mut up_nodes = vec![anchor];
        let mut up_segs = Vec::new();
        'up: for k in 0..OCTAVES_ABOVE * PER_OCTAVE {
            let mut leaves = Vec::new();
            if refine(f, coarse(k), coarse(k + 1), 0, &mut leaves).is_err() {
                break 'up;
            }
            for (x, v) in leaves {
                up_nodes.push(x);
                up_segs.push(v);
            }
        }
        let mut down_nodes = Vec::new();
        let mut down_segs = Vec::new();
        'down: for k in (-OCTAVES_BELOW * PER_OCTAVE..0).rev() {
            let (a, b) = (coarse(k), coarse(k + 1));
            let mut leaves = Vec::new();
            if refine(f, a, b, 0, &mut leaves).is_err() {
                break 'down;
            }
            // leaves come as (right end, integral) in ascending order
            let lefts: Vec<f64> = std::iter::once(a).chain(leaves.iter().map(|l| l.0)).collect();
            for (i, &(_, v)) in leaves.iter().enumerate().rev() {
                down_nodes.push(lefts[i]);
                down_segs.push(v);
            }
        }
        down_nodes.reverse();
        down_segs.reverse();
        let pivot = down_nodes.len();
        let mut nodes = down_nodes;
        nodes.extend(up_nodes);
        let mut segs = down_segs;
        segs.extend(up_segs);

        // Sum away from the point where the table is pinned, which keeps
        // small values near zero accurate in the relative sense.
        let mut values = vec![0.0; nodes.len()];
        let mut base_error = None;
        match origin {
            Origin::Anchor => {
                for i in (0..pivot).rev() {
                    values[i] = values[i + 1] - segs[i];
                }
                for i in pivot..segs.len() {
                    values[i + 1] = values[i] + segs[i];
                }
            }
            Origin::Zero => match integrate_from_zero(f, nodes[0], tol) {
                Ok(base) => {
                    values[0] = base.value;
                    for i in 0..segs.len() {
                        values[i + 1] = values[i] + segs[i];
                    }
                }
                Err(e) => base_error = Some(e),
            },
        }
        // Drop nodes past the first overflow.
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            if bad == 0 {
                return Err(Error::Overflow("antiderivative table".into()));
            }
            nodes.truncate(bad);
            values.truncate(bad);
        }
        Ok(Self {
            origin,
            anchor,
            nodes,
            values,
            base_error,
            tol,
        })
    }

    pub fn range(&self) -> (f64, f64) {
        (self.nodes[0], *self.nodes.last().unwrap())
    }

    /// Failure recorded while pinning the table at zero, if any.
    pub fn base_error(&self) -> Option<&Error> {
        self.base_error.as_ref()
    }

    /// `F(x)`; `f` must be the integrand the table was built with.
    pub fn eval<F: Fn(f64) -> f64>(&self, x: f64, f: &F) -> Result<f64> {
        if !(x > 0.0) {
            return Err(Error::domain(format!("table argument {x} must be positive")));
        }
        if self.origin == Origin::Zero {
            if let Some(e) = &self.base_error {
                return Err(e.clone());
            }
        }
        let (lo, hi) = self.range();
        let out = if x < lo {
            match self.origin {
                Origin::Zero => integrate_from_zero(f, x, self.tol)?.value,
                Origin::Anchor => self.values[0] - integrate(f, x, lo, self.tol)?.value,
            }
        } else if x > hi {
            *self.values.last().unwrap() + integrate(f, hi, x, self.tol)?.value
        } else {
            let i = self.nodes.partition_point(|&n| n <= x) - 1;
            let base = self.values[i];
            if x == self.nodes[i] {
                base
            } else {
                base + gk15(f, self.nodes[i], x)?.0
            }
        };
        if out.is_finite() {
            Ok(out)
        } else {
            Err(Error::Overflow(format!("antiderivative at x = {x}")))
        }
    }

    pub fn anchor(&self) -> f64 {
        self.anchor
    }
}

/// Splits `[a, b]` until each panel meets the leaf tolerance, appending
/// `(right end, integral)` pairs in ascending order.
fn refine<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    depth: usize,
    out: &mut Vec<(f64, f64)>,
) -> Result<()> {
    let (v, e) = gk15(f, a, b)?;
    if e <= LEAF_REL * v.abs() || e <= 1e-300 || depth >= MAX_DEPTH {
        out.push((b, v));
        return Ok(());
    }
    let mid = 0.5 * (a + b);
    refine(f, a, mid, depth + 1, out)?;
    refine(f, mid, b, depth + 1, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: Tolerance = Tolerance {
        abs: 1e-14,
        rel: 1e-13,
    };

    #[test]
    fn anchor_table_matches_log() {
        let f = |x: f64| 1.0 / x;
        let t = CumulativeTable::build(&f, 1.0, Origin::Anchor, TOL).unwrap();
        for &x in &[1e-9, 0.003, 0.5, 1.0, 1.7, 42.0, 5e4, 1e6] {
            let v = t.eval(x, &f).unwrap();
            assert!((v - x.ln()).abs() < 1e-12 * x.ln().abs().max(1.0), "x={x}: {v}");
        }
    }

    #[test]
    fn zero_table_matches_polynomial() {
        let f = |x: f64| 2.0 * x * (1.0 - x).exp();
        let t = CumulativeTable::build(&f, 1.0, Origin::Zero, TOL).unwrap();
        // 1 - e^{-x}(1 + x) cancels badly near zero, so use its series there
        let exact = |x: f64| {
            let core = if x < 0.1 {
                // sum over n >= 2 of (n - 1) (-x)^n / n!
                let mut term = -x;
                let mut sum = 0.0;
                for n in 2..30 {
                    term *= -x / n as f64;
                    sum += (n - 1) as f64 * term;
                }
                sum
            } else {
                1.0 - (-x).exp() * (1.0 + x)
            };
            2.0 * std::f64::consts::E * core
        };
        for &x in &[1e-13, 1e-3, 0.25, 1.0, 3.3, 100.0, 900.0] {
            let v = t.eval(x, &f).unwrap();
            assert!((v - exact(x)).abs() <= 1e-12 * exact(x), "x={x}: {v} vs {}", exact(x));
        }
    }

    #[test]
    fn exponential_growth_is_resolved_until_overflow() {
        let f = |x: f64| x.exp();
        let t = CumulativeTable::build(&f, 1.0, Origin::Anchor, TOL).unwrap();
        let x = 300.0;
        let v = t.eval(x, &f).unwrap();
        let exact = x.exp() - 1f64.exp();
        assert!((v - exact).abs() / exact < 1e-12);
        assert!(matches!(t.eval(5000.0, &f), Err(Error::Domain(_)) | Err(Error::Overflow(_))));
    }

    #[test]
    fn divergent_base_is_reported_on_eval() {
        let f = |x: f64| 1.0 / x;
        let t = CumulativeTable::build(&f, 1.0, Origin::Zero, Tolerance::default()).unwrap();
        assert!(t.base_error().is_some());
        assert!(matches!(t.eval(2.0, &f), Err(Error::Divergent(_))));
    }
}
