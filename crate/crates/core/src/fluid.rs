//! The deterministic fluid profile and its performance curves.
//!
//! The limit profile pairs as
//! `⟨μ̄*_t, φ⟩ = ⟨μ̄₀*, τ_t φ⟩ + λ ∫_0^t ⟨ᾱ*, τ_s φ⟩ ds`,
//! and the performance curves specialize it to indicator functionals through
//! the laws' closed-form partial moments — indicators never go through any
//! derivative-based machinery.

use crate::error::{CoreError, Result};
use crate::law::ServiceLaw;
use crate::measure::PointMeasure;
use crate::quad::adaptive_simpson_try;
use crate::testfn::{Closure, TestFunction};
use crate::transport::{solve_transport, MeasurePathFn, TransportInitial};

/// Initial profile of the fluid model: either empty, a finite atom list, or
/// an absolutely continuous profile shaped like a service law with a given
/// total mass.
#[derive(Debug, Clone)]
pub enum InitialProfile {
    Empty,
    Atoms(PointMeasure),
    ScaledLaw { law: ServiceLaw, mass: f64 },
}

impl InitialProfile {
    pub fn nonatomic(&self) -> bool {
        match self {
            InitialProfile::Empty => true,
            InitialProfile::Atoms(m) => m.is_empty(),
            InitialProfile::ScaledLaw { law, .. } => law.nonatomic(),
        }
    }

    pub fn total_mass(&self) -> f64 {
        match self {
            InitialProfile::Empty => 0.0,
            InitialProfile::Atoms(m) => m.total_weight(),
            InitialProfile::ScaledLaw { mass, .. } => *mass,
        }
    }

    /// `μ̄₀*((x, ∞))` (strictly above).
    pub fn mass_above(&self, x: f64) -> f64 {
        match self {
            InitialProfile::Empty => 0.0,
            InitialProfile::Atoms(m) => m.integrate_fn(|p| if p > x { 1.0 } else { 0.0 }),
            InitialProfile::ScaledLaw { law, mass } => mass * law.tail(x),
        }
    }

    /// `μ̄₀*((−∞, x])` (closed on the right, matching the service curve).
    pub fn mass_upto(&self, x: f64) -> f64 {
        match self {
            InitialProfile::Empty => 0.0,
            InitialProfile::Atoms(m) => m.integrate_fn(|p| if p <= x { 1.0 } else { 0.0 }),
            InitialProfile::ScaledLaw { law, mass } => mass * law.cdf(x),
        }
    }

    /// `∫_t^∞ (x − t) dμ̄₀*(x)`.
    pub fn excess(&self, t: f64) -> f64 {
        match self {
            InitialProfile::Empty => 0.0,
            InitialProfile::Atoms(m) => m.positive_excess(t),
            InitialProfile::ScaledLaw { law, mass } => mass * law.tail_excess(t),
        }
    }

    /// First moment of the positive part; must be finite for a valid model.
    pub fn first_moment(&self) -> f64 {
        self.excess(0.0)
    }

    /// Mass of the open/closed interval `(x, y)` under the closure flags.
    pub fn range(&self, x: f64, y: f64, closure: Closure) -> Result<f64> {
        if !(x < y) {
            return Err(CoreError::Precondition(format!(
                "range requires x < y, got ({x}, {y})"
            )));
        }
        match self {
            InitialProfile::Empty => Ok(0.0),
            InitialProfile::Atoms(m) => m.range_count(x, y, closure),
            InitialProfile::ScaledLaw { law, mass } => {
                // nonatomic: closure flags are immaterial
                let hi = if y.is_infinite() { 1.0 } else { law.cdf(y) };
                let lo = if x.is_infinite() { 0.0 } else { law.cdf(x) };
                Ok(mass * (hi - lo))
            }
        }
    }

    /// `⟨μ̄₀*, φ⟩`.
    pub fn pair(&self, phi: &TestFunction) -> Result<f64> {
        match self {
            InitialProfile::Empty => Ok(0.0),
            InitialProfile::Atoms(m) => Ok(m.integrate(phi)),
            InitialProfile::ScaledLaw { law, mass } => Ok(mass * law.integrate_inner(phi)?),
        }
    }
}

/// The fluid model `(λ, ᾱ*, μ̄₀*)`.
#[derive(Debug, Clone)]
pub struct FluidModel {
    lambda: f64,
    law: ServiceLaw,
    initial: InitialProfile,
}

impl FluidModel {
    pub fn new(lambda: f64, law: ServiceLaw, initial: InitialProfile) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(CoreError::InvalidParameter(format!(
                "fluid intensity must be nonnegative, got {lambda}"
            )));
        }
        law.validate()?;
        if !initial.first_moment().is_finite() {
            return Err(CoreError::Precondition(
                "initial profile must have a finite first moment".into(),
            ));
        }
        Ok(Self {
            lambda,
            law,
            initial,
        })
    }

    /// The canonical empty-start model.
    pub fn empty_start(lambda: f64, law: ServiceLaw) -> Result<Self> {
        Self::new(lambda, law, InitialProfile::Empty)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn law(&self) -> &ServiceLaw {
        &self.law
    }

    pub fn initial(&self) -> &InitialProfile {
        &self.initial
    }

    pub fn nonatomic_initial(&self) -> bool {
        self.initial.nonatomic()
    }

    /// `⟨μ̄*_t, φ⟩` for an arbitrary test function; the time integral runs at
    /// 1e-8 absolute with the law integral nested two orders tighter.
    pub fn pairing(&self, t: f64, phi: &TestFunction) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(CoreError::Precondition(format!(
                "fluid time must be nonnegative, got {t}"
            )));
        }
        let head = self.initial.pair(&phi.shift(t))?;
        if self.lambda == 0.0 || t == 0.0 {
            return Ok(head);
        }
        let law = self.law.clone();
        let arrivals =
            adaptive_simpson_try(|s| law.integrate_inner(&phi.shift(s)), 0.0, t, 1e-8)?;
        Ok(head + self.lambda * arrivals)
    }

    /// `X̄*_t = μ̄₀*((t,∞)) + λ ∫_0^t tail(s) ds`.
    pub fn congestion(&self, t: f64) -> f64 {
        self.initial.mass_above(t) + self.lambda * self.law.integrated_tail(t)
    }

    /// `S̄*_t = μ̄₀*((−∞,t]) + λ ∫_0^t cdf(s) ds`.
    pub fn service(&self, t: f64) -> f64 {
        self.initial.mass_upto(t) + self.lambda * self.law.integrated_cdf(t)
    }

    /// `W̄*_t = ∫_t^∞ (x−t) dμ̄₀* + λ ∫_0^t tail_excess(s) ds`.
    pub fn workload(&self, t: f64) -> f64 {
        self.initial.excess(t) + self.lambda * self.law.integrated_tail_excess(t)
    }

    /// Customers with residual time in `(x, y)` at fluid scale:
    /// `μ̄₀*((x+t, y+t)) + λ ∫_0^t (cdf(y+s) − cdf(x+s)) ds`.
    pub fn range_count(&self, x: f64, y: f64, t: f64, closure: Closure) -> Result<f64> {
        if !(x < y) {
            return Err(CoreError::Precondition(format!(
                "range requires x < y, got ({x}, {y})"
            )));
        }
        let head = self.initial.range(x + t, y + t, closure)?;
        let upper = self.integrated_cdf_shifted(y, t);
        let lower = self.integrated_cdf_shifted(x, t);
        Ok(head + self.lambda * (upper - lower))
    }

    /// `∫_0^t cdf(c + s) ds`, with `c = ±∞` allowed.
    fn integrated_cdf_shifted(&self, c: f64, t: f64) -> f64 {
        if c == f64::INFINITY {
            return t;
        }
        if c == f64::NEG_INFINITY {
            return 0.0;
        }
        // cdf = 1 − tail and the signed integrated tail handles c < 0
        t - (self.law.integrated_tail(c + t) - self.law.integrated_tail(c))
    }

    /// The transport-equation view of the same object: initial condition
    /// `μ̄₀*` with forcing `g_t = λ t ᾱ*`.
    pub fn as_transport_problem(&self, horizon: f64) -> (TransportInitial, MeasurePathFn) {
        let initial = match &self.initial {
            InitialProfile::Empty => TransportInitial::Zero,
            InitialProfile::Atoms(m) => TransportInitial::Measure(m.clone()),
            InitialProfile::ScaledLaw { law, mass } => {
                let (law, mass) = (law.clone(), *mass);
                TransportInitial::functional(move |phi| Ok(mass * law.integrate_inner(phi)?))
            }
        };
        let forcing = MeasurePathFn::linear_forcing(self.law.clone(), self.lambda, horizon);
        (initial, forcing)
    }

    /// Sanity: the solved transport equation reproduces the fluid pairing.
    pub fn transport_consistency(&self, t: f64, phi: &TestFunction) -> Result<f64> {
        let (k, g) = self.as_transport_problem(t.max(1.0));
        let via_solver = solve_transport(&k, &g, t, phi)?;
        Ok(via_solver - self.pairing(t, phi)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mm_model(lambda: f64) -> FluidModel {
        FluidModel::empty_start(lambda, ServiceLaw::exponential(1.0).unwrap()).unwrap()
    }

    #[test]
    fn pairing_at_time_zero_is_initial() {
        let m = FluidModel::new(
            1.0,
            ServiceLaw::exponential(1.0).unwrap(),
            InitialProfile::Atoms(PointMeasure::from_atoms(vec![(1.0, 2.0)]).unwrap()),
        )
        .unwrap();
        let phi = TestFunction::gaussian_bump(1.0, 0.5);
        let got = m.pairing(0.0, &phi).unwrap();
        assert!((got - 2.0 * phi.eval(1.0)).abs() < 1e-12);
    }

    #[test]
    fn zero_intensity_is_pure_shift() {
        let m = FluidModel::new(
            0.0,
            ServiceLaw::exponential(1.0).unwrap(),
            InitialProfile::Atoms(PointMeasure::dirac(2.0)),
        )
        .unwrap();
        let phi = TestFunction::gaussian_bump(0.0, 1.0);
        for t in [0.5, 2.0, 4.0] {
            let got = m.pairing(t, &phi).unwrap();
            assert!((got - phi.eval(2.0 - t)).abs() < 1e-12);
        }
    }

    #[test]
    fn exponential_congestion_closed_form() {
        let m = mm_model(1.0);
        for t in [0.25f64, 1.0, 3.0] {
            let expect = 1.0 - (-t).exp();
            assert!((m.congestion(t) - expect).abs() < 1e-14);
        }
        assert!((m.congestion(1.0) - 0.632_120_558_828_557_7).abs() < 1e-12);
    }

    #[test]
    fn exponential_service_closed_form() {
        let m = mm_model(1.0);
        for t in [0.25f64, 1.0, 3.0] {
            let expect = t - 1.0 + (-t).exp();
            assert!((m.service(t) - expect).abs() < 1e-14);
        }
        assert!((m.service(1.0) - 0.367_879_441_171_442_33).abs() < 1e-12);
    }

    #[test]
    fn exponential_workload_closed_form() {
        let m = mm_model(1.0);
        for t in [0.25f64, 1.0, 3.0] {
            let expect = 1.0 - (-t).exp();
            assert!((m.workload(t) - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn indicator_pairing_matches_congestion() {
        // λ ∫_0^t e^{-s} ds against the generic pairing with an indicator
        let m = mm_model(1.0);
        let ind = TestFunction::indicator_positive();
        // indicators avoid the derivative machinery entirely and the generic
        // pairing only needs evaluations, so this exercises the same path
        let t = 1.0;
        let got = m.pairing(t, &ind).unwrap();
        assert!((got - m.congestion(t)).abs() < 1e-7);
    }

    #[test]
    fn range_count_consistency() {
        let m = mm_model(1.0);
        let t = 1.0;
        let full = m
            .range_count(0.0, f64::INFINITY, t, Closure::OPEN)
            .unwrap();
        assert!((full - m.congestion(t)).abs() < 1e-12);
        let served = m
            .range_count(f64::NEG_INFINITY, 0.0, t, Closure::LEFT_OPEN_RIGHT_CLOSED)
            .unwrap();
        assert!((served - m.service(t)).abs() < 1e-12);
        assert!(m.range_count(2.0, 1.0, t, Closure::OPEN).is_err());
    }

    #[test]
    fn range_count_window_value() {
        // (1,2) at t=1 for the unit exponential empty-start model:
        // ∫_0^1 (e^{-(1+s)} − e^{-(2+s)}) ds = e^{-1} − 2e^{-2} + e^{-3}
        let m = mm_model(1.0);
        let got = m.range_count(1.0, 2.0, 1.0, Closure::OPEN).unwrap();
        let expect = (-1.0f64).exp() - 2.0 * (-2.0f64).exp() + (-3.0f64).exp();
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn conservation_and_monotonicity() {
        let m = FluidModel::new(
            1.3,
            ServiceLaw::uniform(0.0, 2.0).unwrap(),
            InitialProfile::ScaledLaw {
                law: ServiceLaw::exponential(2.0).unwrap(),
                mass: 0.7,
            },
        )
        .unwrap();
        let mut prev_service = 0.0;
        for i in 0..=40 {
            let t = i as f64 * 0.25;
            let x = m.congestion(t);
            let s = m.service(t);
            assert!(
                (x + s - (1.3 * t + 0.7)).abs() < 1e-9,
                "conservation off at t={t}"
            );
            assert!(s + 1e-12 >= prev_service, "service not monotone at t={t}");
            prev_service = s;
        }
    }

    #[test]
    fn congestion_settles_at_offered_load() {
        let m = mm_model(0.8);
        let horizon = 40.0; // 40 mean service times
        assert!((m.congestion(horizon) - 0.8).abs() / 0.8 < 0.01);
    }

    #[test]
    fn no_atom_initial_gives_continuous_rangecount() {
        let m = FluidModel::new(
            1.0,
            ServiceLaw::exponential(1.0).unwrap(),
            InitialProfile::ScaledLaw {
                law: ServiceLaw::uniform(0.0, 1.0).unwrap(),
                mass: 1.0,
            },
        )
        .unwrap();
        assert!(m.nonatomic_initial());
        let grid = 400;
        let mut prev = m.range_count(0.5, 1.5, 0.0, Closure::OPEN).unwrap();
        let mut max_step: f64 = 0.0;
        for i in 1..=grid {
            let t = 2.0 * i as f64 / grid as f64;
            let v = m.range_count(0.5, 1.5, t, Closure::OPEN).unwrap();
            max_step = max_step.max((v - prev).abs());
            prev = v;
        }
        // continuous in t: steps shrink with the grid (Lipschitz-ish bound)
        assert!(max_step < 4.0 / grid as f64 * 2.0, "max step {max_step}");
    }

    #[test]
    fn transport_identification() {
        let m = mm_model(1.0);
        let phi = TestFunction::gaussian_bump(0.5, 0.8);
        for t in [0.5, 1.5] {
            let gap = m.transport_consistency(t, &phi).unwrap();
            assert!(gap.abs() < 1e-6, "fluid vs solver gap {gap:e} at t={t}");
        }
    }
}
