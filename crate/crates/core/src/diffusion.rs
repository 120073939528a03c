//! One-dimensional diffusions on the positive half-line and their scale and
//! speed calculus.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::NumericsConfig;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::numerics::quad::{integrate, integrate_from_zero, integrate_to_infinity, Tolerance};
use crate::numerics::roots::{golden_max, log_space};
use crate::numerics::table::{CumulativeTable, Origin};

/// Tolerance used when building the cached antiderivatives.
const TABLE_TOL: Tolerance = Tolerance {
    abs: 1e-15,
    rel: 1e-13,
};

/// Model definition as read from scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSpec {
    /// `dX = X(a - bX)dt + beta X dW`, parameterised by `q = 1/2 - a/beta^2`.
    Logistic {
        q: f64,
        b: f64,
        beta: f64,
        y0: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reference: Option<f64>,
    },
    Custom {
        drift: Expr,
        vol: Expr,
        y0: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reference: Option<f64>,
    },
}

/// Parameters of the logistic diffusion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Logistic {
    pub a_growth: f64,
    pub b: f64,
    pub beta: f64,
    pub q: f64,
    pub rho: f64,
}

impl Logistic {
    pub fn new(q: f64, b: f64, beta: f64) -> Result<Self> {
        if !(b > 0.0 && beta > 0.0 && q.is_finite() && b.is_finite() && beta.is_finite()) {
            return Err(Error::domain(format!(
                "logistic parameters need b > 0, beta > 0 (got b = {b}, beta = {beta})"
            )));
        }
        if q >= 0.0 {
            return Err(Error::domain(format!(
                "logistic diffusion with q = {q} >= 0 is not ergodic"
            )));
        }
        let beta2 = beta * beta;
        Ok(Self {
            a_growth: beta2 * (0.5 - q),
            b,
            beta,
            q,
            rho: 2.0 * b / beta2,
        })
    }
}

pub type Coefficient = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Drift, volatility, reference point `a` and restart level `y0`.
///
/// Scale and speed antiderivatives are tabulated once at construction, so
/// the model is immutable and cheap to share between threads afterwards.
#[derive(Clone)]
pub struct DiffusionModel {
    drift: Coefficient,
    vol: Coefficient,
    reference: f64,
    y0: f64,
    logistic: Option<Logistic>,
    spec: Option<ModelSpec>,
    tol: Tolerance,
    /// `∫_a^x 2mu/sigma^2` for models without a closed form.
    exponent: Option<Arc<CumulativeTable>>,
    scale: Arc<CumulativeTable>,
    speed: Arc<CumulativeTable>,
}

impl fmt::Debug for DiffusionModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffusionModel")
            .field("reference", &self.reference)
            .field("y0", &self.y0)
            .field("logistic", &self.logistic)
            .field("spec", &self.spec)
            .finish_non_exhaustive()
    }
}

impl DiffusionModel {
    pub fn logistic(q: f64, b: f64, beta: f64, y0: f64) -> Result<Self> {
        Self::from_spec(&ModelSpec::Logistic {
            q,
            b,
            beta,
            y0,
            reference: None,
        })
    }

    pub fn from_spec(spec: &ModelSpec) -> Result<Self> {
        Self::from_spec_with(spec, &NumericsConfig::default())
    }

    pub fn from_spec_with(spec: &ModelSpec, cfg: &NumericsConfig) -> Result<Self> {
        let mut model = match spec {
            ModelSpec::Logistic {
                q,
                b,
                beta,
                y0,
                reference,
            } => {
                let l = Logistic::new(*q, *b, *beta)?;
                let (a, b, beta) = (l.a_growth, l.b, l.beta);
                Self::build(
                    Arc::new(move |x| x * (a - b * x)),
                    Arc::new(move |x| beta * x),
                    *y0,
                    *reference,
                    Some(l),
                    cfg,
                )?
            }
            ModelSpec::Custom {
                drift,
                vol,
                y0,
                reference,
            } => {
                let (d, v) = (drift.clone(), vol.clone());
                Self::build(
                    Arc::new(move |x| d.eval(x)),
                    Arc::new(move |x| v.eval(x)),
                    *y0,
                    *reference,
                    None,
                    cfg,
                )?
            }
        };
        model.spec = Some(spec.clone());
        Ok(model)
    }

    /// A model from arbitrary coefficient closures.
    pub fn custom<D, V>(drift: D, vol: V, y0: f64, reference: Option<f64>) -> Result<Self>
    where
        D: Fn(f64) -> f64 + Send + Sync + 'static,
        V: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self::build(
            Arc::new(drift),
            Arc::new(vol),
            y0,
            reference,
            None,
            &NumericsConfig::default(),
        )
    }

    /// The same diffusion with another reference point for `s` and `S`.
    pub fn with_reference(&self, a: f64) -> Result<Self> {
        let mut m = Self::build(
            self.drift.clone(),
            self.vol.clone(),
            self.y0,
            Some(a),
            self.logistic,
            &NumericsConfig::default(),
        )?;
        m.tol = self.tol;
        m.spec = self.spec.clone().map(|s| match s {
            ModelSpec::Logistic { q, b, beta, y0, .. } => ModelSpec::Logistic {
                q,
                b,
                beta,
                y0,
                reference: Some(a),
            },
            ModelSpec::Custom { drift, vol, y0, .. } => ModelSpec::Custom {
                drift,
                vol,
                y0,
                reference: Some(a),
            },
        });
        Ok(m)
    }

    fn build(
        drift: Coefficient,
        vol: Coefficient,
        y0: f64,
        reference: Option<f64>,
        logistic: Option<Logistic>,
        cfg: &NumericsConfig,
    ) -> Result<Self> {
        let a = reference.unwrap_or(y0);
        if !(y0 > 0.0 && y0.is_finite()) {
            return Err(Error::domain(format!("restart level y0 = {y0} must be positive")));
        }
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::domain(format!("reference point a = {a} must be positive")));
        }
        for x in log_space(1e-3 * a, 1e3 * a, 61) {
            let v = vol(x);
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain(format!("volatility {v} at x = {x} is not positive")));
            }
        }
        let exponent = if logistic.is_none() {
            let (d, v) = (drift.clone(), vol.clone());
            let integrand = move |x: f64| {
                let s = v(x);
                2.0 * d(x) / (s * s)
            };
            Some(Arc::new(CumulativeTable::build(&integrand, a, Origin::Anchor, TABLE_TOL)?))
        } else {
            None
        };
        // Placeholder tables are replaced right below, once `s` and `m` can
        // be evaluated through the model itself.
        let empty = Arc::new(CumulativeTable::build(&|_: f64| 0.0, a, Origin::Anchor, TABLE_TOL)?);
        let mut model = Self {
            drift,
            vol,
            reference: a,
            y0,
            logistic,
            spec: None,
            tol: cfg.quad(),
            exponent,
            scale: empty.clone(),
            speed: empty,
        };
        model.scale = Arc::new(CumulativeTable::build(&|x| model.s(x), a, Origin::Anchor, TABLE_TOL)?);
        model.speed = Arc::new(CumulativeTable::build(&|x| model.m(x), a, Origin::Zero, TABLE_TOL)?);
        Ok(model)
    }

    pub fn drift(&self, x: f64) -> f64 {
        (self.drift)(x)
    }

    pub fn volatility(&self, x: f64) -> f64 {
        (self.vol)(x)
    }

    pub fn y0(&self) -> f64 {
        self.y0
    }

    pub fn reference(&self) -> f64 {
        self.reference
    }

    pub fn logistic_params(&self) -> Option<&Logistic> {
        self.logistic.as_ref()
    }

    pub fn spec(&self) -> Option<&ModelSpec> {
        self.spec.as_ref()
    }

    pub fn tolerance(&self) -> Tolerance {
        self.tol
    }

    pub fn set_tolerance(&mut self, tol: Tolerance) {
        self.tol = tol;
    }

    /// `∫_a^x 2mu/sigma^2`.
    pub fn exponent(&self, x: f64) -> Result<f64> {
        check_state(x)?;
        match (&self.logistic, &self.exponent) {
            (Some(l), _) => {
                let a = self.reference;
                Ok((1.0 - 2.0 * l.q) * (x / a).ln() - l.rho * (x - a))
            }
            (None, Some(t)) => {
                let (d, v) = (&self.drift, &self.vol);
                t.eval(x, &|u: f64| {
                    let s = v(u);
                    2.0 * d(u) / (s * s)
                })
            }
            (None, None) => unreachable!("custom models carry an exponent table"),
        }
    }

    /// `s(x) = exp(-∫_a^x 2mu/sigma^2)`.
    pub fn scale_density(&self, x: f64) -> Result<f64> {
        let v = (-self.exponent(x)?).exp();
        finite(v, || format!("scale density at x = {x}"))
    }

    /// `m(x) = 2 exp(∫_a^x 2mu/sigma^2) / sigma(x)^2`.
    pub fn speed_density(&self, x: f64) -> Result<f64> {
        let sig = self.volatility(x);
        if !(sig > 0.0 && sig.is_finite()) {
            return Err(Error::domain(format!("volatility {sig} at x = {x}")));
        }
        let v = 2.0 / (sig * sig) * self.exponent(x)?.exp();
        finite(v, || format!("speed density at x = {x}"))
    }

    /// Integrand form of `s`; NaN signals failure to the quadrature.
    pub(crate) fn s(&self, x: f64) -> f64 {
        self.scale_density(x).unwrap_or(f64::NAN)
    }

    pub(crate) fn m(&self, x: f64) -> f64 {
        self.speed_density(x).unwrap_or(f64::NAN)
    }

    /// `S(x) = ∫_a^x s`.
    pub fn scale_function(&self, x: f64) -> Result<f64> {
        check_state(x)?;
        self.scale.eval(x, &|u| self.s(u)).map_err(|e| overflow(e, "scale function"))
    }

    /// `S(hi) - S(lo)`.
    pub fn scale_difference(&self, lo: f64, hi: f64) -> Result<f64> {
        Ok(self.scale_function(hi)? - self.scale_function(lo)?)
    }

    /// `M[0, x]`.
    pub fn speed_below(&self, x: f64) -> Result<f64> {
        if x == 0.0 {
            return Ok(0.0);
        }
        check_state(x)?;
        self.speed.eval(x, &|u| self.m(u))
    }

    /// `M[lo, hi]`; `lo = 0` and `hi = ∞` are allowed.
    pub fn speed_measure(&self, lo: f64, hi: f64) -> Result<f64> {
        if !(lo >= 0.0 && hi >= lo) || lo.is_infinite() {
            return Err(Error::domain(format!("speed measure on [{lo}, {hi}]")));
        }
        if lo == hi {
            return Ok(0.0);
        }
        let m = |u: f64| self.m(u);
        match (lo == 0.0, hi.is_infinite()) {
            (true, false) => self.speed_below(hi),
            (true, true) => {
                let a = self.reference;
                Ok(self.speed_below(a)? + self.speed_tail(a)?)
            }
            (false, false) => Ok(integrate(m, lo, hi, self.tol)?.value),
            (false, true) => self.speed_tail(lo),
        }
    }

    fn speed_tail(&self, x: f64) -> Result<f64> {
        integrate_to_infinity(|u| self.m(u), x, self.tol)
            .map(|i| i.value)
            .map_err(|e| match e {
                Error::Divergent(msg) => Error::Divergent(format!("speed measure: {msg}")),
                e => e,
            })
    }

    /// `∫_0^x mu m`, which equals `1/s(x)` under the standing assumptions.
    ///
    /// When the integral is a small difference of large parts it is taken
    /// as `-∫_x^inf mu m` instead, since `∫_0^inf mu m = 0` when `s` diverges.
    pub fn drift_speed_integral(&self, x: f64) -> Result<f64> {
        check_state(x)?;
        let f = |u: f64| self.drift(u) * self.m(u);
        let head = integrate_from_zero(f, x, self.tol)?.value;
        let gross = integrate_from_zero(|u| f(u).abs(), x, self.tol)?.value;
        if head.abs() >= 1e-3 * gross {
            return Ok(head);
        }
        match integrate_to_infinity(f, x, self.tol) {
            Ok(tail) => Ok(-tail.value),
            Err(_) => Ok(head),
        }
    }

    /// `∫ h m` over `[lo, hi]`, with `lo = 0` treated as an improper limit.
    pub fn speed_integral<H: Fn(f64) -> f64>(&self, h: H, lo: f64, hi: f64) -> Result<f64> {
        let f = |u: f64| h(u) * self.m(u);
        if lo == 0.0 {
            integrate_from_zero(f, hi, self.tol).map(|i| i.value)
        } else {
            integrate(f, lo, hi, self.tol).map(|i| i.value)
        }
    }

    /// The point where the drift stops increasing, if it exists.
    pub fn drift_turning_point(&self) -> Option<f64> {
        if let Some(l) = &self.logistic {
            return Some(l.a_growth / (2.0 * l.b));
        }
        turning_point(|x| self.drift(x), self.reference).ok()
    }

    /// Numeric probes of the standing assumptions, each with its evidence.
    pub fn validate_assumptions(&self) -> AssumptionReport {
        let speed_mass = match self.speed_measure(0.0, f64::INFINITY) {
            Ok(v) => Probe::pass(v, "M(0, inf) converges"),
            Err(e) => Probe::fail(None, e.to_string()),
        };
        let first_moment = match self.first_moment() {
            Ok(v) => Probe::pass(v, "integral of x m(x) converges"),
            Err(e) => Probe::fail(None, e.to_string()),
        };
        let drift_turning_point = match (&self.logistic, turning_point(|x| self.drift(x), self.reference)) {
            (Some(l), _) => {
                let y1 = l.a_growth / (2.0 * l.b);
                if y1 >= self.y0 {
                    Probe::pass(y1, "drift x(a - bx) peaks at a/(2b)")
                } else {
                    Probe::fail(Some(y1), format!("turning point {y1} lies below y0 = {}", self.y0))
                }
            }
            (None, Ok(y1)) if y1 >= self.y0 => Probe::pass(y1, "single drift maximum on the probe grid"),
            (None, Ok(y1)) => Probe::fail(Some(y1), format!("turning point {y1} lies below y0 = {}", self.y0)),
            (None, Err(e)) => Probe::fail(None, e.to_string()),
        };
        let scale_diverges = self.probe_scale_divergence();
        let entrance_boundary = match self.entrance_integral() {
            Ok(v) => Probe::pass(v, "integral of (S(y0) - S(y)) M(dy) over (0, y0] converges"),
            Err(e) => Probe::fail(
                None,
                format!("integral of (S(y0) - S(y)) M(dy) over (0, y0] does not converge ({e}); 0 behaves as a natural boundary"),
            ),
        };
        AssumptionReport {
            speed_mass,
            first_moment,
            drift_turning_point,
            scale_diverges,
            entrance_boundary,
        }
    }

    fn first_moment(&self) -> Result<f64> {
        let a = self.reference;
        let f = |u: f64| u * self.m(u);
        let below = integrate_from_zero(f, a, self.tol)?.value;
        Ok(below + integrate_to_infinity(f, a, self.tol)?.value)
    }

    /// `∫_0^{y0} (S(y0) - S(y)) m(y) dy`, computed as `∫_0^{y0} s(v) M[0, v] dv`.
    fn entrance_integral(&self) -> Result<f64> {
        let f = |v: f64| self.s(v) * self.speed_below(v).unwrap_or(f64::NAN);
        Ok(integrate_from_zero(f, self.y0, self.tol)?.value)
    }

    fn probe_scale_divergence(&self) -> Probe {
        let a = self.reference;
        let mut samples = Vec::new();
        for k in 0..=60 {
            let x = a * 2f64.powi(k);
            match self.exponent(x) {
                Ok(e) => samples.push(-e),
                Err(_) => break,
            }
            if -samples.last().unwrap() < -709.0 {
                // s(x) has left the range of f64 on the high side
                return Probe::pass(f64::INFINITY, format!("s overflows by x = {x}"));
            }
        }
        let Some(&last) = samples.last() else {
            return Probe::fail(None, "scale density could not be evaluated above a");
        };
        let tail = &samples[samples.len().saturating_sub(8)..];
        let increasing = tail.windows(2).all(|w| w[1] > w[0]);
        let big = last > 3f64.ln() * 10.0;
        let x_last = a * 2f64.powi(samples.len() as i32 - 1);
        if increasing && big {
            Probe::pass(last.exp(), format!("s grows to {:.3e} at x = {x_last:.3e}", last.exp()))
        } else {
            Probe::fail(Some(last.exp()), format!("s only reaches {:.3e} at x = {x_last:.3e}", last.exp()))
        }
    }
}

/// One numeric check and the number behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub passed: bool,
    pub value: Option<f64>,
    pub note: String,
}

impl Probe {
    fn pass(value: f64, note: impl Into<String>) -> Self {
        Self {
            passed: true,
            value: Some(value),
            note: note.into(),
        }
    }

    fn fail(value: Option<f64>, note: impl Into<String>) -> Self {
        Self {
            passed: false,
            value,
            note: note.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub speed_mass: Probe,
    pub first_moment: Probe,
    pub drift_turning_point: Probe,
    pub scale_diverges: Probe,
    pub entrance_boundary: Probe,
}

impl AssumptionReport {
    pub fn all_passed(&self) -> bool {
        self.probes().iter().all(|(_, p)| p.passed)
    }

    pub fn probes(&self) -> [(&'static str, &Probe); 5] {
        [
            ("speed_mass", &self.speed_mass),
            ("first_moment", &self.first_moment),
            ("drift_turning_point", &self.drift_turning_point),
            ("scale_diverges", &self.scale_diverges),
            ("entrance_boundary", &self.entrance_boundary),
        ]
    }
}

fn check_state(x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("state {x} must be positive and finite")))
    }
}

fn finite(v: f64, what: impl FnOnce() -> String) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else if v.is_nan() {
        Err(Error::Domain(what()))
    } else {
        Err(Error::Overflow(what()))
    }
}

fn overflow(e: Error, what: &str) -> Error {
    match e {
        Error::Domain(msg) => Error::Overflow(format!("{what}: {msg}")),
        e => e,
    }
}

/// Locates the single maximum of `mu` on a wide log grid around `a`.
fn turning_point<F: Fn(f64) -> f64>(mu: F, a: f64) -> Result<f64> {
    let grid = log_space(1e-6 * a, 1e6 * a, 400);
    let vals: Vec<f64> = grid.iter().map(|&x| mu(x)).collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("drift is not finite on the probe grid"));
    }
    let (imax, _) = vals
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
    if imax == 0 || imax == grid.len() - 1 {
        return Err(Error::domain(format!(
            "drift has no interior maximum on [{:.1e}, {:.1e}]",
            grid[0],
            grid[grid.len() - 1]
        )));
    }
    let slack = |v: f64| 1e-12 * v.abs().max(1e-300);
    let rising = vals[..=imax].windows(2).all(|w| w[1] >= w[0] - slack(w[0]));
    let falling = vals[imax..].windows(2).all(|w| w[1] < w[0]);
    if !(rising && falling) {
        return Err(Error::domain("drift is not increasing-then-decreasing on the probe grid"));
    }
    let m = golden_max(|x| Ok(mu(x)), grid[imax - 1], grid[imax + 1], 1e-10 * grid[imax], 200)?;
    Ok(m.x)
}
