//! Expected hitting times of upper thresholds and related running costs.
//!
//! `xi(y)` is the mean time for the uncontrolled diffusion started at `y0`
//! to reach `y`. It is evaluated as `∫_{y0}^y s(u) M[0, u] du`, which is the
//! Green-kernel expression after one integration by parts.

use serde::Serialize;

use crate::diffusion::DiffusionModel;
use crate::error::{Error, Result};
use crate::numerics::quad::{integrate, integrate_from_zero, integrate_running, Tolerance};
use crate::numerics::roots::{bisect, expand_right, log_space};

/// Above this value of `rho * y` the logistic series is not used.
pub const SERIES_CUTOFF: f64 = 700.0;
const SERIES_REL: f64 = 1e-14;
const SERIES_MAX_TERMS: usize = 100_000;
const PROFILE_TOL: Tolerance = Tolerance {
    abs: 1e-13,
    rel: 1e-11,
};

#[derive(Debug, Clone)]
pub struct XiEvaluator {
    model: DiffusionModel,
    speed_below_y0: f64,
    y1: Option<f64>,
    y2: Option<f64>,
}

/// Summary of the evaluator's cached quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct XiSummary {
    pub speed_below_y0: f64,
    pub y1: Option<f64>,
    pub y2: Option<f64>,
}

impl XiEvaluator {
    pub fn new(model: &DiffusionModel) -> Result<Self> {
        let speed_below_y0 = model.speed_below(model.y0())?;
        let mut ev = Self {
            model: model.clone(),
            speed_below_y0,
            y1: model.drift_turning_point(),
            y2: None,
        };
        ev.y2 = ev.locate_y2();
        Ok(ev)
    }

    pub fn model(&self) -> &DiffusionModel {
        &self.model
    }

    pub fn y0(&self) -> f64 {
        self.model.y0()
    }

    /// Turning point of the drift.
    pub fn y1(&self) -> Option<f64> {
        self.y1
    }

    /// Point where `xi` switches from concave to convex.
    pub fn y2(&self) -> Option<f64> {
        self.y2
    }

    pub fn summary(&self) -> XiSummary {
        XiSummary {
            speed_below_y0: self.speed_below_y0,
            y1: self.y1,
            y2: self.y2,
        }
    }

    fn check(&self, y: f64) -> Result<()> {
        if y >= self.y0() && y.is_finite() {
            Ok(())
        } else {
            Err(Error::domain(format!("threshold {y} lies below y0 = {}", self.y0())))
        }
    }

    /// `xi(y)`, using the series for logistic models while `rho * y` is moderate.
    pub fn xi(&self, y: f64) -> Result<f64> {
        self.check(y)?;
        match self.model.logistic_params() {
            Some(l) if l.rho * y < SERIES_CUTOFF => self.xi_series(y),
            _ => self.xi_quadrature(y),
        }
    }

    /// `xi(y)` by quadrature, carrying `M[0, u]` along the outer integral.
    pub fn xi_quadrature(&self, y: f64) -> Result<f64> {
        self.check(y)?;
        let m = &self.model;
        let r = integrate_running(|u| m.s(u), |u| m.m(u), self.y0(), y, self.speed_below_y0, m.tolerance())?;
        Ok(r.value)
    }

    /// `xi(y)` straight from the Green kernel,
    /// `∫_{y0}^y (S(y) - S(u)) m(u) du + (S(y) - S(y0)) M[0, y0]`.
    pub fn xi_green(&self, y: f64) -> Result<f64> {
        self.check(y)?;
        let m = &self.model;
        let sy = m.scale_function(y)?;
        let inner = integrate(
            |u| (sy - m.scale_function(u).unwrap_or(f64::NAN)) * m.m(u),
            self.y0(),
            y,
            m.tolerance(),
        )?;
        Ok(inner.value + m.scale_difference(self.y0(), y)? * self.speed_below_y0)
    }

    /// Closed form for the logistic model,
    /// `(log(y/y0) + P(rho y) - P(rho y0)) / (beta^2 |q|)` with
    /// `P(r) = sum_n r^n / (n (1-2q)_n)`.
    pub fn xi_series(&self, y: f64) -> Result<f64> {
        self.check(y)?;
        let l = self
            .model
            .logistic_params()
            .ok_or_else(|| Error::domain("series form needs a logistic model"))?;
        let y0 = self.y0();
        let p = |r: f64| pochhammer_series(r, l.q);
        let v = ((y / y0).ln() + p(l.rho * y)? - p(l.rho * y0)?) / (l.beta * l.beta * l.q.abs());
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Overflow(format!("series for xi at y = {y}")))
        }
    }

    /// `xi'(y) = s(y) M[0, y]`.
    pub fn xi_prime(&self, y: f64) -> Result<f64> {
        self.check(y)?;
        let v = self.model.scale_density(y)? * self.model.speed_below(y)?;
        finite(v, y)
    }

    /// `xi''(y) = s(y) m(y) + s'(y) M[0, y]`, with `s' = -2 mu s / sigma^2`.
    ///
    /// Equal to `2 s(y) I(y) / sigma(y)^2` with `I` from [`Self::convexity_integral`].
    pub fn xi_second(&self, y: f64) -> Result<f64> {
        self.check(y)?;
        let sig = self.model.volatility(y);
        let sig2 = sig * sig;
        let v = 2.0 / sig2 - 2.0 * self.model.drift(y) / sig2 * self.xi_prime(y)?;
        finite(v, y)
    }

    /// `I(y) = ∫_0^y (mu(u) - mu(y)) m(u) du`.
    pub fn convexity_integral(&self, y: f64) -> Result<f64> {
        let mu_y = self.model.drift(y);
        self.model.speed_integral(|u| self.model.drift(u) - mu_y, 0.0, y)
    }

    /// `E_x[∫_0^{tau_b} h(X_t) dt] = ∫_x^b s(v) ∫_0^v h m dv`.
    pub fn expected_running_cost<H: Fn(f64) -> f64>(&self, h: H, x: f64, b: f64) -> Result<f64> {
        if !(x > 0.0 && b >= x && b.is_finite()) {
            return Err(Error::domain(format!("running cost needs 0 < x <= b, got x = {x}, b = {b}")));
        }
        if x == b {
            return Ok(0.0);
        }
        let m = &self.model;
        let base = integrate_from_zero(|u| h(u) * m.m(u), x, m.tolerance()).map_err(|e| {
            Error::domain(format!("running cost integrand is not integrable at 0: {e}"))
        })?;
        let r = integrate_running(|v| m.s(v), |u| h(u) * m.m(u), x, b, base.value, m.tolerance())?;
        Ok(r.value)
    }

    /// Tabulates `W(v) = ∫_anchor^v s(u) ∫_0^u h m du` on `n` log-spaced
    /// nodes over `[lo, hi]`, so that `E_x[∫_0^{tau_b} h] = W(b) - W(x)`.
    pub fn running_profile<H: Fn(f64) -> f64>(
        &self,
        h: H,
        anchor: f64,
        lo: f64,
        hi: f64,
        n: usize,
    ) -> Result<RunningProfile<H>> {
        if !(lo > 0.0 && lo <= anchor && anchor <= hi && hi.is_finite()) {
            return Err(Error::domain(format!(
                "profile needs 0 < lo <= anchor <= hi, got {lo}, {anchor}, {hi}"
            )));
        }
        let mut nodes = if hi > lo { log_space(lo, hi, n.max(2)) } else { vec![lo] };
        if let Err(i) = nodes.binary_search_by(|x| x.total_cmp(&anchor)) {
            nodes.insert(i, anchor);
        }
        let m = &self.model;
        let hm = |u: f64| h(u) * m.m(u);
        let mut inner = Vec::with_capacity(nodes.len());
        let mut outer = Vec::with_capacity(nodes.len());
        let base = integrate_from_zero(hm, lo, PROFILE_TOL).map_err(|e| {
            Error::domain(format!("running cost integrand is not integrable at 0: {e}"))
        })?;
        inner.push(base.value);
        outer.push(0.0);
        for w in nodes.windows(2) {
            let (a, b) = (w[0], w[1]);
            let g = *inner.last().unwrap();
            let cell = integrate_running(|v| m.s(v), hm, a, b, g, PROFILE_TOL)?.value;
            outer.push(outer.last().unwrap() + cell);
            inner.push(g + integrate(hm, a, b, PROFILE_TOL)?.value);
        }
        let at_anchor = outer[nodes.binary_search_by(|x| x.total_cmp(&anchor)).unwrap()];
        for v in outer.iter_mut() {
            *v -= at_anchor;
        }
        Ok(RunningProfile {
            ev: self.clone(),
            h,
            nodes,
            outer,
            inner,
        })
    }

    fn locate_y2(&self) -> Option<f64> {
        let lo = self.y1?.max(self.y0());
        let f = |y: f64| self.xi_second(y);
        if f(lo).ok()? > 0.0 {
            return Some(lo);
        }
        let (a, b) = expand_right(f, lo, 2.0 * lo, 60).ok()?;
        let root = bisect(f, a, b, |_, _, w| w < 1e-13 * b, 200).ok()?;
        Some(root.x)
    }
}

/// Cached running-cost antiderivative, see [`XiEvaluator::running_profile`].
#[derive(Clone)]
pub struct RunningProfile<H> {
    ev: XiEvaluator,
    h: H,
    nodes: Vec<f64>,
    outer: Vec<f64>,
    inner: Vec<f64>,
}

impl<H: Fn(f64) -> f64> RunningProfile<H> {
    pub fn range(&self) -> (f64, f64) {
        (self.nodes[0], *self.nodes.last().unwrap())
    }

    /// `W(v)`.
    pub fn eval(&self, v: f64) -> Result<f64> {
        let (lo, hi) = self.range();
        if !(v >= lo && v <= hi) {
            return Err(Error::domain(format!("{v} lies outside the profile range [{lo}, {hi}]")));
        }
        let i = self.nodes.partition_point(|&n| n <= v) - 1;
        if v == self.nodes[i] {
            return Ok(self.outer[i]);
        }
        let m = self.ev.model();
        let piece = integrate_running(
            |u| m.s(u),
            |u| (self.h)(u) * m.m(u),
            self.nodes[i],
            v,
            self.inner[i],
            PROFILE_TOL,
        )?;
        Ok(self.outer[i] + piece.value)
    }
}

/// `sum_{n >= 1} r^n / (n (1-2q)_n)` by the term recurrence.
pub fn pochhammer_series(r: f64, q: f64) -> Result<f64> {
    let c = 1.0 - 2.0 * q;
    let mut t = r / c;
    let mut sum = t;
    for n in 1..SERIES_MAX_TERMS {
        let nf = n as f64;
        t *= r * nf / ((nf + 1.0) * (c + nf));
        sum += t;
        if t.abs() < SERIES_REL * sum.abs() {
            return Ok(sum);
        }
    }
    Err(Error::Convergence {
        what: format!("hitting-time series at rho*y = {r}"),
        iterations: SERIES_MAX_TERMS,
    })
}

fn finite(v: f64, y: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Overflow(format!("xi derivative at y = {y}")))
    }
}
