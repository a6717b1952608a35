//! Operator calculus on time-indexed generalized measures and the
//! closed-form transport solver.
//!
//! Generalized measures are represented extensionally, by their pairing rule
//! `(t, φ) ↦ ⟨X_t, φ⟩`; nothing is ever discretized in the distribution
//! variable. The three operators are
//!
//! * `G(X)_t = τ_t X_t` — shift along the flight of the free flow,
//! * `H(X)_t = ∫_0^t X_s ds` — running time integral,
//! * `N(X)_t = ∫_0^t τ_{t−s}(X_s)' ds`, i.e.
//!   `⟨N(X)_t, φ⟩ = −∫_0^t ⟨X_s, τ_{t−s} φ'⟩ ds`,
//!
//! and the unique solution of the integrated transport equation
//! `X_t = K + ∫_0^t (X_s)' ds + g_t` is `X_t = τ_t K + g_t + N(g)_t`.

use std::sync::Arc;

use crate::error::Result;
use crate::law::ServiceLaw;
use crate::measure::PointMeasure;
use crate::quad::{adaptive_simpson_try, DEFAULT_TOL};
use crate::testfn::TestFunction;

type PairingRule = Arc<dyn Fn(f64, &TestFunction) -> Result<f64> + Send + Sync>;
type InitialRule = Arc<dyn Fn(&TestFunction) -> Result<f64> + Send + Sync>;

/// Outer tolerance for the residual checker; looser than the operator
/// tolerance so inner quadrature noise cannot stall refinement, and an
/// order below the 1e-6 residual acceptance bound.
pub const RESIDUAL_TOL: f64 = 1e-7;

/// A time-indexed family of generalized measures, given by its pairing rule.
#[derive(Clone)]
pub struct MeasurePathFn {
    horizon: f64,
    pairing: PairingRule,
}

impl MeasurePathFn {
    pub fn new(
        horizon: f64,
        pairing: impl Fn(f64, &TestFunction) -> Result<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            horizon,
            pairing: Arc::new(pairing),
        }
    }

    /// The identically-zero path.
    pub fn zero(horizon: f64) -> Self {
        Self::new(horizon, |_, _| Ok(0.0))
    }

    /// The path constantly equal to a fixed atomic measure.
    pub fn constant_measure(m: PointMeasure, horizon: f64) -> Self {
        Self::new(horizon, move |_, phi| Ok(m.integrate(phi)))
    }

    /// The forcing `g_t = rate·t·α` of the fluid equation.
    pub fn linear_forcing(law: ServiceLaw, rate: f64, horizon: f64) -> Self {
        Self::new(horizon, move |t, phi| {
            Ok(rate * t * law.integrate_inner(phi)?)
        })
    }

    /// `a·X + b·Y` pointwise in `(t, φ)`.
    pub fn linear_combination(a: f64, x: &MeasurePathFn, b: f64, y: &MeasurePathFn) -> Self {
        let (px, py) = (x.pairing.clone(), y.pairing.clone());
        Self::new(x.horizon.min(y.horizon), move |t, phi| {
            Ok(a * px(t, phi)? + b * py(t, phi)?)
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// `⟨X_t, φ⟩`.
    pub fn pairing(&self, t: f64, phi: &TestFunction) -> Result<f64> {
        (self.pairing)(t, phi)
    }

    /// `⟨(X_t)', φ⟩ = −⟨X_t, φ'⟩`; requires a differentiable `φ`.
    pub fn derivative_pairing(&self, t: f64, phi: &TestFunction) -> Result<f64> {
        let dphi = phi.derivative()?;
        Ok(-self.pairing(t, &dphi)?)
    }
}

impl std::fmt::Debug for MeasurePathFn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MeasurePathFn")
            .field("horizon", &self.horizon)
            .finish()
    }
}

/// `G(X)_t = τ_t X_t`, i.e. `⟨G(X)_t, φ⟩ = ⟨X_t, τ_t φ⟩`.
pub fn op_g(x: &MeasurePathFn) -> MeasurePathFn {
    let p = x.pairing.clone();
    MeasurePathFn::new(x.horizon, move |t, phi| p(t, &phi.shift(t)))
}

/// `H(X)_t = ∫_0^t X_s ds`.
pub fn op_h(x: &MeasurePathFn) -> MeasurePathFn {
    let p = x.pairing.clone();
    MeasurePathFn::new(x.horizon, move |t, phi| {
        adaptive_simpson_try(|s| p(s, phi), 0.0, t, DEFAULT_TOL)
    })
}

/// `⟨N(X)_t, φ⟩ = −∫_0^t ⟨X_s, τ_{t−s} φ'⟩ ds`; rejects indicators.
pub fn op_n(x: &MeasurePathFn) -> MeasurePathFn {
    let p = x.pairing.clone();
    MeasurePathFn::new(x.horizon, move |t, phi| {
        let dphi = phi.derivative()?;
        let v = adaptive_simpson_try(|s| p(s, &dphi.shift(t - s)), 0.0, t, DEFAULT_TOL)?;
        Ok(-v)
    })
}

/// The initial condition `K` of a transport equation.
#[derive(Clone)]
pub enum TransportInitial {
    Zero,
    Measure(PointMeasure),
    /// A generalized measure given by its pairing rule.
    Functional(InitialRule),
}

impl TransportInitial {
    pub fn functional(
        rule: impl Fn(&TestFunction) -> Result<f64> + Send + Sync + 'static,
    ) -> Self {
        TransportInitial::Functional(Arc::new(rule))
    }

    /// `⟨K, φ⟩`.
    pub fn pair(&self, phi: &TestFunction) -> Result<f64> {
        match self {
            TransportInitial::Zero => Ok(0.0),
            TransportInitial::Measure(m) => Ok(m.integrate(phi)),
            TransportInitial::Functional(f) => f(phi),
        }
    }

    /// `⟨τ_t K, φ⟩ = ⟨K, τ_t φ⟩`.
    pub fn pair_shifted(&self, t: f64, phi: &TestFunction) -> Result<f64> {
        self.pair(&phi.shift(t))
    }
}

impl std::fmt::Debug for TransportInitial {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TransportInitial::Zero => write!(f, "TransportInitial::Zero"),
            TransportInitial::Measure(m) => write!(f, "TransportInitial::Measure({} atoms)", m.len()),
            TransportInitial::Functional(_) => write!(f, "TransportInitial::Functional"),
        }
    }
}

/// Evaluates the closed-form solution `X_t = τ_t K + g_t + N(g)_t` at `(t, φ)`.
pub fn solve_transport(
    k: &TransportInitial,
    g: &MeasurePathFn,
    t: f64,
    phi: &TestFunction,
) -> Result<f64> {
    let n_g = op_n(g);
    Ok(k.pair_shifted(t, phi)? + g.pairing(t, phi)? + n_g.pairing(t, phi)?)
}

/// The solution as a path, for feeding back into the residual checker.
pub fn solved_path(k: TransportInitial, g: MeasurePathFn) -> MeasurePathFn {
    let horizon = g.horizon();
    let n_g = op_n(&g);
    MeasurePathFn::new(horizon, move |t, phi| {
        Ok(k.pair_shifted(t, phi)? + g.pairing(t, phi)? + n_g.pairing(t, phi)?)
    })
}

/// The defect of `X` in the integrated transport equation at `(t, φ)`:
/// `⟨X_t, φ⟩ − ⟨K, φ⟩ + ∫_0^t ⟨X_s, φ'⟩ ds − ⟨g_t, φ⟩`,
/// using `⟨(X_s)', φ⟩ = −⟨X_s, φ'⟩`. Zero exactly when `X` solves the
/// equation at that point.
pub fn transport_residual(
    x: &MeasurePathFn,
    k: &TransportInitial,
    g: &MeasurePathFn,
    t: f64,
    phi: &TestFunction,
) -> Result<f64> {
    let dphi = phi.derivative()?;
    let drift = adaptive_simpson_try(|s| x.pairing(s, &dphi), 0.0, t, RESIDUAL_TOL)?;
    Ok(x.pairing(t, phi)? - k.pair(phi)? + drift - g.pairing(t, phi)?)
}
