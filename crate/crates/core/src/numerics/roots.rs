//! Bracketing root finders and a golden-section maximizer.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root {
    pub x: f64,
    pub fx: f64,
    pub iterations: usize,
    pub bracket: (f64, f64),
}

/// Bisection on `[lo, hi]`, which must carry a sign change.
///
/// `done(x, fx, width)` decides acceptance; iteration also stops once the
/// bracket cannot be split any further in floating point.
pub fn bisect<F, D>(f: F, mut lo: f64, mut hi: f64, done: D, max_iter: usize) -> Result<Root>
where
    F: Fn(f64) -> Result<f64>,
    D: Fn(f64, f64, f64) -> bool,
{
    let mut f_lo = f(lo)?;
    let f_hi = f(hi)?;
    if f_lo == 0.0 {
        return Ok(Root {
            x: lo,
            fx: 0.0,
            iterations: 0,
            bracket: (lo, hi),
        });
    }
    if f_hi == 0.0 {
        return Ok(Root {
            x: hi,
            fx: 0.0,
            iterations: 0,
            bracket: (lo, hi),
        });
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::NoRoot(format!(
            "no sign change on [{lo}, {hi}] (f = {f_lo}, {f_hi})"
        )));
    }
    for it in 1..=max_iter {
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid)?;
        let width = hi - lo;
        if f_mid == 0.0 || done(mid, f_mid, width) || mid <= lo || mid >= hi {
            return Ok(Root {
                x: mid,
                fx: f_mid,
                iterations: it,
                bracket: (lo, hi),
            });
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Convergence {
        what: format!("bisection on [{lo}, {hi}]"),
        iterations: max_iter,
    })
}

/// Pushes the right end of `[lo, hi]` out by doubling until `f` changes sign.
/// Returns the bracket `(last same-sign point, first opposite-sign point)`.
pub fn expand_right<F>(f: F, lo: f64, hi: f64, max_doublings: usize) -> Result<(f64, f64)>
where
    F: Fn(f64) -> Result<f64>,
{
    let f_lo = f(lo)?;
    let mut left = lo;
    let mut right = hi;
    for _ in 0..=max_doublings {
        let f_right = f(right)?;
        if f_right.signum() != f_lo.signum() || f_right == 0.0 {
            return Ok((left, right));
        }
        left = right;
        right *= 2.0;
    }
    Err(Error::NoRoot(format!(
        "bracket expansion from {lo} exhausted {max_doublings} doublings"
    )))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Maximum {
    pub x: f64,
    pub fx: f64,
    pub iterations: usize,
}

/// Golden-section search for the maximum of a unimodal `f` on `[lo, hi]`.
pub fn golden_max<F>(f: F, mut lo: f64, mut hi: f64, x_tol: f64, max_iter: usize) -> Result<Maximum>
where
    F: Fn(f64) -> Result<f64>,
{
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = hi - INV_PHI * (hi - lo);
    let mut d = lo + INV_PHI * (hi - lo);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    let mut it = 0;
    while (hi - lo) > x_tol && it < max_iter {
        it += 1;
        if fc >= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - INV_PHI * (hi - lo);
            fc = f(c)?;
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + INV_PHI * (hi - lo);
            fd = f(d)?;
        }
    }
    let (x, fx) = if fc >= fd { (c, fc) } else { (d, fd) };
    Ok(Maximum {
        x,
        fx,
        iterations: it,
    })
}

/// `n >= 2` log-spaced points from `lo` to `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && n >= 2);
    let (a, b) = (lo.ln(), hi.ln());
    let step = (b - a) / (n - 1) as f64;
    let mut v: Vec<f64> = (0..n).map(|i| (a + step * i as f64).exp()).collect();
    v[0] = lo;
    v[n - 1] = hi;
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bisect_sqrt2() {
        let r = bisect(|x| Ok(x * x - 2.0), 0.0, 2.0, |_, _, w| w < 1e-14, 200).unwrap();
        assert!((r.x - 2f64.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn bisect_needs_sign_change() {
        let r = bisect(|x| Ok(x * x + 1.0), -1.0, 1.0, |_, _, w| w < 1e-9, 100);
        assert!(matches!(r, Err(Error::NoRoot(_))));
    }

    #[test]
    fn expansion_finds_far_root() {
        let (lo, hi) = expand_right(|x| Ok(1000.0 - x), 1.0, 2.0, 60).unwrap();
        assert!(lo < 1000.0 && hi >= 1000.0);
    }

    #[test]
    fn expansion_exhausts() {
        let r = expand_right(|_| Ok(1.0), 1.0, 2.0, 10);
        assert!(matches!(r, Err(Error::NoRoot(_))));
    }

    #[test]
    fn golden_finds_parabola_peak() {
        let m = golden_max(|x| Ok(-(x - 0.3) * (x - 0.3)), -2.0, 5.0, 1e-10, 500).unwrap();
        assert!((m.x - 0.3).abs() < 1e-9);
    }

    #[test]
    fn log_space_endpoints() {
        let g = log_space(0.01, 100.0, 5);
        assert_eq!(g[0], 0.01);
        assert_eq!(g[4], 100.0);
        assert!((g[2] - 1.0).abs() < 1e-12);
    }
}
