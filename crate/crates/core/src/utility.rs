//! Utilities with bounded relative risk aversion and their convex conjugates.
//!
//! Every supported utility is stored as a positive mixture `sum w_i u_{p_i}`
//! with `u_p(x) = x^p / p` for `p != 0` and `u_0 = log`. The relative risk
//! aversion of such a mixture is a weighted average of the `1 - p_i`, so the
//! bounds `c1 = min(1 - p_i)` and `c2 = max(1 - p_i)` hold for every `x`.

use crate::error::{Error, Result};

const INVERSION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum UtilityKind {
    Power(f64),
    Log,
    /// `(weight, exponent)` pairs; exponent 0 denotes `log`.
    Mixture(Vec<(f64, f64)>),
    /// Constant absolute risk aversion; always rejected.
    Exponential(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utility {
    kind: UtilityKind,
    terms: Vec<(f64, f64)>,
    c1: f64,
    c2: f64,
}

/// `(U, U', U'', A)` at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilityValue {
    pub u: f64,
    pub du: f64,
    pub d2u: f64,
    pub a: f64,
}

/// `(V, V', V'', B)` at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConjugateValue {
    pub v: f64,
    pub dv: f64,
    pub d2v: f64,
    pub b: f64,
}

fn power_term(p: f64, x: f64) -> (f64, f64, f64) {
    if p == 0.0 {
        (x.ln(), 1.0 / x, -1.0 / (x * x))
    } else {
        let xp = x.powf(p);
        (xp / p, xp / x, (p - 1.0) * xp / (x * x))
    }
}

impl Utility {
    /// Builds a utility. `c1`/`c2` default to the tight bounds; supplied
    /// values must bracket them.
    pub fn new(kind: UtilityKind, c1: Option<f64>, c2: Option<f64>) -> Result<Self> {
        let terms = match &kind {
            UtilityKind::Power(p) => {
                if *p == 0.0 {
                    vec![(1.0, 0.0)]
                } else {
                    vec![(1.0, *p)]
                }
            }
            UtilityKind::Log => vec![(1.0, 0.0)],
            UtilityKind::Mixture(t) => t.clone(),
            UtilityKind::Exponential(_) => {
                return Err(Error::UnsupportedUtility(
                    "exponential utility has unbounded relative risk aversion A(x) = alpha x".into(),
                ))
            }
        };
        if terms.is_empty() {
            return Err(Error::UnsupportedUtility("mixture needs at least one term".into()));
        }
        for &(w, p) in &terms {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::UnsupportedUtility(format!("mixture weight {w} must be positive")));
            }
            if !(p < 1.0 && p.is_finite()) {
                return Err(Error::UnsupportedUtility(format!(
                    "power exponent {p} must be finite and below 1"
                )));
            }
        }
        let lo = terms.iter().map(|t| 1.0 - t.1).fold(f64::INFINITY, f64::min);
        let hi = terms.iter().map(|t| 1.0 - t.1).fold(0.0, f64::max);
        let c1 = c1.unwrap_or(lo);
        let c2 = c2.unwrap_or(hi);
        if !(c1 > 0.0 && c1 <= lo && c2 >= hi) {
            return Err(Error::UnsupportedUtility(format!(
                "bounds (c1, c2) = ({c1}, {c2}) do not bracket the risk aversion range [{lo}, {hi}]"
            )));
        }
        Ok(Self { kind, terms, c1, c2 })
    }

    pub fn log() -> Self {
        Self::new(UtilityKind::Log, None, None).expect("log utility is valid")
    }

    pub fn power(p: f64) -> Result<Self> {
        Self::new(UtilityKind::Power(p), None, None)
    }

    pub fn mixture(terms: Vec<(f64, f64)>) -> Result<Self> {
        Self::new(UtilityKind::Mixture(terms), None, None)
    }

    pub fn kind(&self) -> &UtilityKind {
        &self.kind
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    pub fn c2(&self) -> f64 {
        self.c2
    }

    /// Single power term (including log) when the utility is homothetic.
    pub fn power_exponent(&self) -> Option<f64> {
        match self.terms.as_slice() {
            [(_, p)] => Some(*p),
            _ => None,
        }
    }

    pub fn evaluate(&self, x: f64) -> Result<UtilityValue> {
        if !(x > 0.0) {
            return Err(Error::Domain(format!("utility evaluated at x = {x}")));
        }
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: f64) -> UtilityValue {
        let (mut u, mut du, mut d2u) = (0.0, 0.0, 0.0);
        for &(w, p) in &self.terms {
            let (a, b, c) = power_term(p, x);
            u += w * a;
            du += w * b;
            d2u += w * c;
        }
        UtilityValue { u, du, d2u, a: -d2u * x / du }
    }

    pub fn u(&self, x: f64) -> f64 {
        self.eval_unchecked(x).u
    }

    pub fn du(&self, x: f64) -> f64 {
        self.eval_unchecked(x).du
    }

    /// Relative risk aversion `A(x)`.
    pub fn risk_aversion(&self, x: f64) -> f64 {
        self.eval_unchecked(x).a
    }

    /// `(U')^{-1}(y)`.
    pub fn inverse_marginal(&self, y: f64) -> Result<f64> {
        if !(y > 0.0 && y.is_finite()) {
            return Err(Error::Domain(format!("marginal utility inverted at y = {y}")));
        }
        if let Some(p) = self.power_exponent() {
            let w = self.terms[0].0;
            return Ok((y / w).powf(1.0 / (p - 1.0)));
        }
        // g(z) = ln U'(e^z) - ln y is decreasing with slope -A in [-c2, -c1].
        let ly = y.ln();
        let g = |z: f64| {
            let v = self.eval_unchecked(z.exp());
            (v.du.ln() - ly, v.a)
        };
        let (g0, _) = g(0.0);
        let (mut lo, mut hi) = if g0 > 0.0 {
            (g0 / self.c2, g0 / self.c1)
        } else {
            (g0 / self.c1, g0 / self.c2)
        };
        lo -= 1e-9 * (1.0 + lo.abs());
        hi += 1e-9 * (1.0 + hi.abs());
        let mut z = 0.5 * (lo + hi);
        for _ in 0..200 {
            let (gz, a) = g(z);
            if gz.abs() <= INVERSION_TOL * 1e-3 {
                return Ok(z.exp());
            }
            if gz > 0.0 {
                lo = lo.max(z);
            } else {
                hi = hi.min(z);
            }
            let mut next = z + gz / a;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - z).abs() <= 1e-15 * (1.0 + z.abs()) {
                let (gn, _) = g(next);
                if gn.abs() <= INVERSION_TOL {
                    return Ok(next.exp());
                }
            }
            z = next;
        }
        let (gz, _) = g(z);
        if gz.abs() <= INVERSION_TOL {
            Ok(z.exp())
        } else {
            Err(Error::Numerical(format!(
                "inversion of U' at y = {y} stalled with log-residual {gz:e}"
            )))
        }
    }

    /// `(V, V', V'', B)` with `V(y) = sup_x (U(x) - xy)`.
    pub fn conjugate(&self, y: f64) -> Result<ConjugateValue> {
        if !(y > 0.0) {
            return Err(Error::Domain(format!("conjugate evaluated at y = {y}")));
        }
        if let Some(p) = self.power_exponent() {
            if self.terms[0].0 == 1.0 {
                return Ok(if p == 0.0 {
                    ConjugateValue { v: -y.ln() - 1.0, dv: -1.0 / y, d2v: 1.0 / (y * y), b: 1.0 }
                } else {
                    let q = p / (1.0 - p);
                    let yq = y.powf(-q);
                    ConjugateValue {
                        v: yq / q,
                        dv: -yq / y,
                        d2v: (q + 1.0) * yq / (y * y),
                        b: 1.0 / (1.0 - p),
                    }
                });
            }
        }
        let x = self.inverse_marginal(y)?;
        let e = self.eval_unchecked(x);
        let d2v = -1.0 / e.d2u;
        Ok(ConjugateValue {
            v: e.u - x * y,
            dv: -x,
            d2v,
            b: d2v * y / x,
        })
    }

    /// `V(y)` only.
    pub fn v(&self, y: f64) -> Result<f64> {
        Ok(self.conjugate(y)?.v)
    }
}
