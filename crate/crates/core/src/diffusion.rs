//! The Gaussian limit of the rescaled error process.
//!
//! The limit pairs against a test function as
//! `⟨Y_t, φ⟩ = ⟨Y_0, τ_t φ⟩ + √λ Σ_i ∫_0^t c_i(τ_{t−s} φ) dB_s^i`
//! over an orthonormal basis `{h_i}` of `L²(dᾱ*)` with coordinates
//! `c_i(ψ) = ∫ ψ h_i dᾱ*` and independent standard Brownian motions `B^i`.
//!
//! Two variance routes are implemented and tested against each other: the
//! truncated coordinate series (the construction above, by Itô isometry) and
//! the Parseval-collapsed exact form `λ ∫_0^t ⟨ᾱ*, (τ_u φ)²⟩ du`.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{CoreError, Result};
use crate::law::ServiceLaw;
use crate::quad::{adaptive_simpson_try, DEFAULT_TOL, INNER_TOL};
use crate::rng::replication_rng;
use crate::stats::MomentAccumulator;
use crate::testfn::TestFunction;

// ---------------------------------------------------------------------------
// Laguerre polynomials
// ---------------------------------------------------------------------------

use crate::quad::laguerre_recurrence_pair as laguerre_pair;

/// `L_i(x)` by the stable three-term recurrence
/// `(i+1) L_{i+1}(x) = (2i+1−x) L_i(x) − i L_{i−1}(x)`.
pub fn laguerre(i: usize, x: f64) -> f64 {
    laguerre_pair(i, x).0
}

/// `L_i(x)` straight from the Rodrigues form: expanding
/// `(e^x/i!) dⁱ/dxⁱ (e^{−x} xⁱ)` with the Leibniz rule gives
/// `Σ_j binom(i,j) (−x)^j / j!`, evaluated here in double-double arithmetic
/// so the alternating sum stays correctly rounded even where the terms are
/// six orders larger than the value.
pub fn laguerre_rodrigues(i: usize, x: f64) -> f64 {
    let mut term = Dd::from(1.0);
    let mut sum = term;
    for j in 0..i {
        // term_{j+1} = term_j · (−x) · (i−j) / (j+1)²
        term = term.mul_f64(-x);
        term = term.mul_f64((i - j) as f64);
        term = term.div_f64(((j + 1) * (j + 1)) as f64);
        sum = sum.add(term);
    }
    sum.to_f64()
}

/// Double-double scalar: an unevaluated sum `hi + lo`.
#[derive(Clone, Copy)]
struct Dd {
    hi: f64,
    lo: f64,
}

impl Dd {
    fn from(v: f64) -> Self {
        Dd { hi: v, lo: 0.0 }
    }

    fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    fn add(self, other: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, other.hi);
        let lo = e + self.lo + other.lo;
        let (hi, lo) = quick_two_sum(s, lo);
        Dd { hi, lo }
    }

    fn mul_f64(self, b: f64) -> Dd {
        let (p, e) = two_prod(self.hi, b);
        let lo = e + self.lo * b;
        let (hi, lo) = quick_two_sum(p, lo);
        Dd { hi, lo }
    }

    fn div_f64(self, b: f64) -> Dd {
        let q0 = self.hi / b;
        let (p, e) = two_prod(q0, b);
        let r = self.hi - p - e + self.lo;
        let q1 = r / b;
        let (hi, lo) = quick_two_sum(q0, q1);
        Dd { hi, lo }
    }
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

pub use crate::quad::gauss_laguerre;

/// `∫_u^∞ L_i(x) e^{−x} dx` for `u ≥ 0`:
/// `e^{−u}` for `i = 0`, else `e^{−u} (L_i(u) − L_{i−1}(u))`.
pub fn laguerre_tail_integral(i: usize, u: f64) -> f64 {
    let u = u.max(0.0);
    if i == 0 {
        return (-u).exp();
    }
    let (li, lim1) = laguerre_pair(i, u);
    (-u).exp() * (li - lim1)
}

/// `∫_u^∞ (x − u) L_i(x) e^{−x} dx` for `u ≥ 0`: the second difference
/// `e^{−u} (L_i − 2 L_{i−1} + L_{i−2})(u)` for `i ≥ 2`, with
/// `K_0(u) = e^{−u}` and `K_1(u) = −e^{−u}(1 + u)`.
pub fn laguerre_excess_integral(i: usize, u: f64) -> f64 {
    let u = u.max(0.0);
    match i {
        0 => (-u).exp(),
        1 => -(-u).exp() * (1.0 + u),
        _ => {
            let (li, lim1) = laguerre_pair(i, u);
            let lim2 = laguerre_pair(i - 1, u).1;
            (-u).exp() * (li - 2.0 * lim1 + lim2)
        }
    }
}

// ---------------------------------------------------------------------------
// Orthonormal bases
// ---------------------------------------------------------------------------

/// How a basis was constructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisKind {
    Laguerre,
    GramSchmidt,
}

#[derive(Debug, Clone)]
enum BasisRepr {
    /// `h_i(x) = L_i(rate·x)`, orthonormal for the exponential law.
    LaguerreScaled { rate: f64 },
    /// Monomial coefficient rows, low degree first.
    Coefficients(Vec<Vec<f64>>),
}

/// An orthonormal polynomial family for `L²(dᾱ*)`.
#[derive(Debug, Clone)]
pub struct BasisFamily {
    law: ServiceLaw,
    kind: BasisKind,
    k_max: usize,
    repr: BasisRepr,
}

impl BasisFamily {
    /// The Laguerre family; only valid for an exponential law, for which
    /// `h_i(x) = L_i(rate·x)`.
    pub fn laguerre(law: &ServiceLaw, k_max: usize) -> Result<Self> {
        match law {
            ServiceLaw::Exponential { rate } => Ok(Self {
                law: law.clone(),
                kind: BasisKind::Laguerre,
                k_max,
                repr: BasisRepr::LaguerreScaled { rate: *rate },
            }),
            _ => Err(CoreError::Precondition(
                "the Laguerre family is orthonormal only for exponential laws".into(),
            )),
        }
    }

    /// Orthonormalizes `1, x, x², …` against `⟨f, g⟩ = ∫ f g dᾱ*` with
    /// modified Gram–Schmidt (two passes) over exact moment arithmetic.
    /// Loss of numerical orthogonality is reported with the largest usable
    /// order instead of silently degrading.
    pub fn gram_schmidt(law: &ServiceLaw, k_max: usize) -> Result<Self> {
        let mut moments = Vec::with_capacity(2 * k_max + 1);
        for k in 0..=(2 * k_max as u32) {
            moments.push(law.moment(k).ok_or_else(|| {
                CoreError::Precondition(format!(
                    "gram_schmidt needs finite moments up to order {}, order {k} is infinite",
                    2 * k_max
                ))
            })?);
        }
        let inner = |p: &[f64], q: &[f64]| -> f64 {
            let mut acc = 0.0;
            for (i, pi) in p.iter().enumerate() {
                if *pi == 0.0 {
                    continue;
                }
                for (j, qj) in q.iter().enumerate() {
                    acc += pi * qj * moments[i + j];
                }
            }
            acc
        };

        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(k_max + 1);
        for k in 0..=k_max {
            let mut v = vec![0.0; k + 1];
            v[k] = 1.0;
            let norm0 = inner(&v, &v).sqrt();
            for _pass in 0..2 {
                for h in &rows {
                    let c = inner(&v, h);
                    for (vi, hi) in v.iter_mut().zip(h) {
                        *vi -= c * hi;
                    }
                }
            }
            let norm2 = inner(&v, &v);
            // cancellation guard: once the residual has lost nine digits of
            // the monomial's norm, the remaining coefficients are noise
            if !(norm2 > 0.0) || !norm2.is_finite() || norm2.sqrt() < 1e-9 * norm0 {
                return Err(CoreError::OrthogonalityLoss {
                    max_usable: k.saturating_sub(1),
                    requested: k_max,
                });
            }
            let norm = norm2.sqrt();
            for vi in &mut v {
                *vi /= norm;
            }
            let mut err = (inner(&v, &v) - 1.0).abs();
            for h in &rows {
                err = err.max(inner(&v, h).abs());
            }
            // representability guard: Horner evaluation noise is about
            // max|coeff|·eps, which must stay below the orthonormality budget
            let max_coeff = v.iter().fold(0.0f64, |m, c| m.max(c.abs()));
            if err > 1e-8 || max_coeff > 1e7 {
                return Err(CoreError::OrthogonalityLoss {
                    max_usable: k.saturating_sub(1),
                    requested: k_max,
                });
            }
            rows.push(v);
        }
        Ok(Self {
            law: law.clone(),
            kind: BasisKind::GramSchmidt,
            k_max,
            repr: BasisRepr::Coefficients(rows),
        })
    }

    pub fn law(&self) -> &ServiceLaw {
        &self.law
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    /// Evaluates `h_i(x)`.
    pub fn h(&self, i: usize, x: f64) -> f64 {
        assert!(i <= self.k_max, "basis order {i} exceeds K_max {}", self.k_max);
        match &self.repr {
            BasisRepr::LaguerreScaled { rate } => laguerre(i, rate * x),
            BasisRepr::Coefficients(rows) => {
                let row = &rows[i];
                let mut acc = 0.0;
                for &c in row.iter().rev() {
                    acc = acc * x + c;
                }
                acc
            }
        }
    }

    /// `c_i(ψ) = ∫ ψ h_i dᾱ*` by law-specific quadrature; indicator-type
    /// functionals split the window at their jump instead of integrating
    /// across it.
    pub fn coordinate(&self, i: usize, psi: &TestFunction, tol: f64) -> Result<f64> {
        use crate::testfn::IndicatorShape;
        match psi.indicator_shape() {
            Some(IndicatorShape::Interval { x, y, .. }) => {
                let above_x = self.law.integrate_above(&|v| self.h(i, v), x, tol)?;
                let above_y = if y == f64::INFINITY {
                    0.0
                } else {
                    self.law.integrate_above(&|v| self.h(i, v), y, tol)?
                };
                Ok(above_x - above_y)
            }
            Some(IndicatorShape::IdentityAbove(a)) => self
                .law
                .integrate_above(&|v| (v - a) * self.h(i, v), a, tol),
            None => self.law.integrate_fn(&|x| psi.eval(x) * self.h(i, x), tol),
        }
    }

    /// Worst orthonormality defect `max |∫ h_i h_j dᾱ* − δ_ij|` over
    /// `i, j ≤ upto`, measured by quadrature (Gauss–Laguerre where exact).
    pub fn orthonormality_error(&self, upto: usize) -> Result<f64> {
        let upto = upto.min(self.k_max);
        let mut worst: f64 = 0.0;
        for i in 0..=upto {
            for j in i..=upto {
                let val = match (&self.repr, &self.law) {
                    (BasisRepr::LaguerreScaled { rate }, _) => {
                        // substitute v = rate·x: plain Laguerre vs e^{−v}
                        let (nodes, weights) = gauss_laguerre(i + j + 2);
                        let _ = rate;
                        nodes
                            .iter()
                            .zip(&weights)
                            .map(|(&v, &w)| w * laguerre(i, v) * laguerre(j, v))
                            .sum()
                    }
                    (BasisRepr::Coefficients(_), ServiceLaw::Exponential { rate }) => {
                        let (nodes, weights) = gauss_laguerre(i + j + 2);
                        let r = *rate;
                        nodes
                            .iter()
                            .zip(&weights)
                            .map(|(&v, &w)| w * self.h(i, v / r) * self.h(j, v / r))
                            .sum()
                    }
                    _ => self
                        .law
                        .integrate_fn(&|x| self.h(i, x) * self.h(j, x), INNER_TOL)?,
                };
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((val - target).abs());
            }
        }
        Ok(worst)
    }
}

// ---------------------------------------------------------------------------
// Limit covariance and performance functionals
// ---------------------------------------------------------------------------

/// The tensor covariance of the limit martingale: `γ_t(φ, ψ) = λ t ⟨ᾱ*, φψ⟩`.
#[derive(Debug, Clone)]
pub struct CovarianceKernel {
    pub lambda: f64,
    pub law: ServiceLaw,
}

impl CovarianceKernel {
    pub fn mutual_variation(&self, t: f64, phi: &TestFunction, psi: &TestFunction) -> Result<f64> {
        let prod = phi.product(psi);
        Ok(self.lambda * t * self.law.integrate(&prod, DEFAULT_TOL)?)
    }
}

/// The limit of the rescaled initial error; identically zero under the
/// constructed scheme, a finite signed atom list for exploration.
#[derive(Debug, Clone, Default)]
pub enum LimitInitial {
    #[default]
    Zero,
    SignedAtoms(Vec<(f64, f64)>),
}

impl LimitInitial {
    pub fn pair(&self, phi: &TestFunction) -> f64 {
        match self {
            LimitInitial::Zero => 0.0,
            LimitInitial::SignedAtoms(atoms) => {
                atoms.iter().map(|(p, w)| w * phi.eval(*p)).sum()
            }
        }
    }

    /// `Y_0((x, ∞))`.
    pub fn mass_above(&self, x: f64) -> f64 {
        match self {
            LimitInitial::Zero => 0.0,
            LimitInitial::SignedAtoms(atoms) => {
                atoms.iter().filter(|(p, _)| *p > x).map(|(_, w)| w).sum()
            }
        }
    }

    /// `Y_0((−∞, x])`.
    pub fn mass_upto(&self, x: f64) -> f64 {
        match self {
            LimitInitial::Zero => 0.0,
            LimitInitial::SignedAtoms(atoms) => {
                atoms.iter().filter(|(p, _)| *p <= x).map(|(_, w)| w).sum()
            }
        }
    }

    /// `∫_t^∞ (x − t) dY_0(x)`.
    pub fn excess(&self, t: f64) -> f64 {
        match self {
            LimitInitial::Zero => 0.0,
            LimitInitial::SignedAtoms(atoms) => atoms
                .iter()
                .filter(|(p, _)| *p > t)
                .map(|(p, w)| w * (p - t))
                .sum(),
        }
    }
}

/// The three performance functionals of the diffusion approximations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerfFunctional {
    /// `φ = 1_(0,∞)`.
    Congestion,
    /// `φ = 1_(−∞,0]`.
    Service,
    /// `φ = x·1_(0,∞)`; requires a finite second moment.
    Workload,
}

impl PerfFunctional {
    pub fn label(&self) -> &'static str {
        match self {
            PerfFunctional::Congestion => "congestion",
            PerfFunctional::Service => "service",
            PerfFunctional::Workload => "workload",
        }
    }

    pub fn test_function(&self) -> TestFunction {
        match self {
            PerfFunctional::Congestion => TestFunction::indicator_positive(),
            PerfFunctional::Service => TestFunction::indicator_nonpositive(),
            PerfFunctional::Workload => TestFunction::identity_positive(),
        }
    }

    /// `⟨ᾱ*, (τ_u φ)²⟩` in closed form.
    pub fn shifted_square_mean(&self, law: &ServiceLaw, u: f64) -> Result<f64> {
        match self {
            PerfFunctional::Congestion => Ok(law.tail(u)),
            PerfFunctional::Service => Ok(law.cdf(u)),
            PerfFunctional::Workload => law
                .tail_square_excess(u)
                .ok_or(CoreError::InfiniteSecondMoment),
        }
    }

    /// `∫_0^t ⟨ᾱ*, (τ_u φ)²⟩ du` in closed form.
    pub fn integrated_square_mean(&self, law: &ServiceLaw, t: f64) -> Result<f64> {
        match self {
            PerfFunctional::Congestion => Ok(law.integrated_tail(t)),
            PerfFunctional::Service => Ok(law.integrated_cdf(t)),
            PerfFunctional::Workload => law
                .integrated_tail_square_excess(t)
                .ok_or(CoreError::InfiniteSecondMoment),
        }
    }

    /// The initial-error term `⟨Y_0, τ_t φ⟩` of the performance diffusions.
    pub fn limit_initial_term(&self, y0: &LimitInitial, t: f64) -> f64 {
        match self {
            PerfFunctional::Congestion => y0.mass_above(t),
            PerfFunctional::Service => y0.mass_upto(t),
            PerfFunctional::Workload => y0.excess(t),
        }
    }
}

/// `c_i(τ_u φ)` for a performance functional: exact Laguerre tail integrals
/// for an exponential law under the Laguerre basis, split quadrature
/// otherwise. Only `u ≥ 0` occurs inside the limit integrals.
pub fn perf_coordinate(basis: &BasisFamily, f: PerfFunctional, i: usize, u: f64) -> Result<f64> {
    if let (BasisRepr::LaguerreScaled { rate }, ServiceLaw::Exponential { .. }) =
        (&basis.repr, &basis.law)
    {
        let v = rate * u.max(0.0);
        return Ok(match f {
            PerfFunctional::Congestion => laguerre_tail_integral(i, v),
            PerfFunctional::Service => {
                let full = if i == 0 { 1.0 } else { 0.0 };
                if u < 0.0 {
                    0.0
                } else {
                    full - laguerre_tail_integral(i, v)
                }
            }
            PerfFunctional::Workload => {
                if u < 0.0 {
                    let c0 = if i == 0 { 1.0 } else { 0.0 };
                    let c1 = if i == 1 { 1.0 } else { 0.0 };
                    (c0 - c1) / rate - u * c0
                } else {
                    laguerre_excess_integral(i, v) / rate
                }
            }
        });
    }
    let law = basis.law.clone();
    match f {
        PerfFunctional::Congestion => law.integrate_above(&|x| basis.h(i, x), u, DEFAULT_TOL),
        PerfFunctional::Service => {
            let full = law.integrate_fn(&|x| basis.h(i, x), DEFAULT_TOL)?;
            let above = law.integrate_above(&|x| basis.h(i, x), u, DEFAULT_TOL)?;
            if u < 0.0 {
                Ok(0.0)
            } else {
                Ok(full - above)
            }
        }
        PerfFunctional::Workload => {
            law.integrate_above(&|x| (x - u) * basis.h(i, x), u, DEFAULT_TOL)
        }
    }
}

// ---------------------------------------------------------------------------
// Variance: truncated series vs Parseval-collapsed exact form
// ---------------------------------------------------------------------------

/// Exact (Parseval-collapsed) variance of `⟨Y_t, φ⟩` for a performance
/// functional: `λ ∫_0^t ⟨ᾱ*, (τ_u φ)²⟩ du`, in closed form.
pub fn perf_variance_exact(
    lambda: f64,
    law: &ServiceLaw,
    f: PerfFunctional,
    t: f64,
) -> Result<f64> {
    Ok(lambda * f.integrated_square_mean(law, t)?)
}

/// Truncated series variance `λ Σ_{i<K} ∫_0^t c_i(τ_u φ)² du`.
pub fn perf_variance_series(
    lambda: f64,
    basis: &BasisFamily,
    f: PerfFunctional,
    t: f64,
    k: usize,
) -> Result<f64> {
    if k > basis.k_max() + 1 {
        return Err(CoreError::Precondition(format!(
            "truncation {k} exceeds basis order {}",
            basis.k_max()
        )));
    }
    let mut acc = 0.0;
    for i in 0..k {
        acc += adaptive_simpson_try(
            |u| Ok(perf_coordinate(basis, f, i, u)?.powi(2)),
            0.0,
            t,
            1e-9,
        )?;
    }
    Ok(lambda * acc)
}

/// Exact variance for a smooth functional by nested quadrature:
/// `λ ∫_0^t ⟨ᾱ*, (τ_u φ)²⟩ du`.
pub fn smooth_variance_exact(
    lambda: f64,
    law: &ServiceLaw,
    phi: &TestFunction,
    t: f64,
) -> Result<f64> {
    let v = adaptive_simpson_try(
        |u| {
            law.integrate_fn(
                &|x| {
                    let s = phi.eval(x - u);
                    s * s
                },
                INNER_TOL,
            )
        },
        0.0,
        t,
        1e-8,
    )?;
    Ok(lambda * v)
}

/// Truncated series variance for a smooth functional; coordinates by
/// quadrature.
pub fn smooth_variance_series(
    lambda: f64,
    basis: &BasisFamily,
    phi: &TestFunction,
    t: f64,
    k: usize,
) -> Result<f64> {
    let mut acc = 0.0;
    for i in 0..k {
        acc += adaptive_simpson_try(
            |u| {
                let c = basis
                    .law
                    .integrate_fn(&|x| phi.eval(x - u) * basis.h(i, x), INNER_TOL)?;
                Ok(c * c)
            },
            0.0,
            t,
            1e-8,
        )?;
    }
    Ok(lambda * acc)
}

// ---------------------------------------------------------------------------
// Sampler
// ---------------------------------------------------------------------------

/// What the sampler evaluates the limit process against.
#[derive(Clone)]
pub enum SamplerFunctional {
    Performance(PerfFunctional),
    Smooth(TestFunction),
    /// Direct coordinate rule `(i, u) ↦ c_i(τ_u φ)`; the initial term is
    /// taken as zero.
    Custom {
        label: String,
        coordinate: Arc<dyn Fn(usize, f64) -> Result<f64> + Send + Sync>,
    },
}

impl SamplerFunctional {
    pub fn label(&self) -> String {
        match self {
            SamplerFunctional::Performance(p) => p.label().to_string(),
            SamplerFunctional::Smooth(f) => f.label().to_string(),
            SamplerFunctional::Custom { label, .. } => label.clone(),
        }
    }
}

/// Joint sampler of `{⟨Y_t, φ⟩}` over a time grid, by `K` independent
/// Brownian motions and left-point Itô sums on a uniform step. Coordinate
/// tables are precomputed once and shared read-only across replications.
pub struct LimitSampler {
    lambda: f64,
    k: usize,
    steps: usize,
    dt: f64,
    output_indices: Vec<usize>,
    output_times: Vec<f64>,
    labels: Vec<String>,
    /// `tables[f][i][j] = c_i(τ_{jΔ} φ_f)`.
    tables: Vec<Vec<Vec<f64>>>,
    /// `y0_terms[f][time] = ⟨Y_0, τ_t φ_f⟩`.
    y0_terms: Vec<Vec<f64>>,
}

impl LimitSampler {
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        lambda: f64,
        basis: &BasisFamily,
        y0: &LimitInitial,
        functionals: &[SamplerFunctional],
        t_grid: &[f64],
        k: usize,
        steps: usize,
    ) -> Result<Self> {
        if t_grid.is_empty() || t_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CoreError::Precondition(
                "the sampler time grid must be nonempty and strictly increasing".into(),
            ));
        }
        if !(t_grid[0] >= 0.0) {
            return Err(CoreError::Precondition("sampler times must be >= 0".into()));
        }
        if k > basis.k_max() + 1 {
            return Err(CoreError::Precondition(format!(
                "truncation {k} exceeds basis order {}",
                basis.k_max()
            )));
        }
        let t_max = *t_grid.last().expect("nonempty");
        let dt = t_max / steps as f64;
        let output_indices: Vec<usize> = t_grid
            .iter()
            .map(|&t| ((t / dt).round() as usize).min(steps))
            .collect();
        let output_times: Vec<f64> = output_indices.iter().map(|&m| m as f64 * dt).collect();

        let mut tables = Vec::with_capacity(functionals.len());
        let mut y0_terms = Vec::with_capacity(functionals.len());
        let mut labels = Vec::with_capacity(functionals.len());
        for f in functionals {
            labels.push(f.label());
            let mut per_i = Vec::with_capacity(k);
            for i in 0..k {
                let mut row = Vec::with_capacity(steps + 1);
                for j in 0..=steps {
                    let u = j as f64 * dt;
                    let c = match f {
                        SamplerFunctional::Performance(p) => perf_coordinate(basis, *p, i, u)?,
                        SamplerFunctional::Smooth(phi) => basis.law.integrate_fn(
                            &|x| phi.eval(x - u) * basis.h(i, x),
                            INNER_TOL,
                        )?,
                        SamplerFunctional::Custom { coordinate, .. } => coordinate(i, u)?,
                    };
                    row.push(c);
                }
                per_i.push(row);
            }
            tables.push(per_i);
            y0_terms.push(
                output_times
                    .iter()
                    .map(|&t| match f {
                        SamplerFunctional::Performance(p) => p.limit_initial_term(y0, t),
                        SamplerFunctional::Smooth(phi) => y0.pair(&phi.shift(t)),
                        SamplerFunctional::Custom { .. } => 0.0,
                    })
                    .collect(),
            );
        }
        Ok(Self {
            lambda,
            k,
            steps,
            dt,
            output_indices,
            output_times,
            labels,
            tables,
            y0_terms,
        })
    }

    pub fn output_times(&self) -> &[f64] {
        &self.output_times
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn functional_count(&self) -> usize {
        self.tables.len()
    }

    /// Draws the Brownian increments of one replication: `db[i][j]` over the
    /// step grid, each `N(0, Δ)`.
    pub fn draw_increments<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Vec<f64>> {
        let sd = self.dt.sqrt();
        (0..self.k)
            .map(|_| {
                (0..self.steps)
                    .map(|_| {
                        let z: f64 = rng.sample(StandardNormal);
                        sd * z
                    })
                    .collect()
            })
            .collect()
    }

    /// One joint sample `[time][functional]` from given increments.
    pub fn sample_from_increments(&self, db: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let sqrt_lambda = self.lambda.sqrt();
        self.output_indices
            .iter()
            .enumerate()
            .map(|(ti, &m)| {
                (0..self.tables.len())
                    .map(|f| {
                        let mut acc = 0.0;
                        for (row, inc) in self.tables[f].iter().zip(db).take(self.k) {
                            let mut s = 0.0;
                            for (j, dbj) in inc.iter().enumerate().take(m) {
                                s += row[m - j] * dbj;
                            }
                            acc += s;
                        }
                        self.y0_terms[f][ti] + sqrt_lambda * acc
                    })
                    .collect()
            })
            .collect()
    }

    /// One joint Gaussian sample `[time][functional]`.
    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Vec<f64>> {
        let db = self.draw_increments(rng);
        self.sample_from_increments(&db)
    }

    /// `R` replications with derived seeds; returns per-(time, functional)
    /// moment accumulators and the raw values, replication-major.
    pub fn sample_ensemble(
        &self,
        replications: usize,
        master_seed: u64,
        stream: u64,
    ) -> SampleEnsemble {
        let raw: Vec<Vec<Vec<f64>>> = (0..replications)
            .into_par_iter()
            .map(|r| {
                let mut rng = replication_rng(master_seed, stream, r as u64);
                self.sample_one(&mut rng)
            })
            .collect();
        let mut moments =
            vec![vec![MomentAccumulator::new(); self.tables.len()]; self.output_indices.len()];
        for rep in &raw {
            for (ti, per_f) in rep.iter().enumerate() {
                for (fi, &v) in per_f.iter().enumerate() {
                    moments[ti][fi].push(v);
                }
            }
        }
        SampleEnsemble { raw, moments }
    }

    /// The exact variance of the discretized (left-point) estimator:
    /// `λ Σ_i Σ_{j<m} c_i((m−j)Δ)² Δ`. The sampler's empirical variance
    /// converges to this as `R → ∞`.
    pub fn discrete_variance(&self, functional: usize, time_index: usize) -> f64 {
        let m = self.output_indices[time_index];
        let mut acc = 0.0;
        for i in 0..self.k {
            let row = &self.tables[functional][i];
            for j in 0..m {
                acc += row[m - j] * row[m - j];
            }
        }
        self.lambda * acc * self.dt
    }

    /// The discretized cross-time covariance
    /// `λ Σ_i Σ_{j<m_s} c_i((m_s−j)Δ) c_i((m_t−j)Δ) Δ` for `s ≤ t`.
    pub fn discrete_cross_covariance(
        &self,
        functional: usize,
        s_index: usize,
        t_index: usize,
    ) -> f64 {
        let ms = self.output_indices[s_index];
        let mt = self.output_indices[t_index];
        assert!(ms <= mt);
        let mut acc = 0.0;
        for i in 0..self.k {
            let row = &self.tables[functional][i];
            for j in 0..ms {
                acc += row[ms - j] * row[mt - j];
            }
        }
        self.lambda * acc * self.dt
    }
}

/// Raw samples plus their moment summaries.
pub struct SampleEnsemble {
    /// `raw[replication][time][functional]`.
    pub raw: Vec<Vec<Vec<f64>>>,
    /// `moments[time][functional]`.
    pub moments: Vec<Vec<MomentAccumulator>>,
}

impl SampleEnsemble {
    /// Column of raw values for one `(time, functional)` cell.
    pub fn column(&self, time_index: usize, functional: usize) -> Vec<f64> {
        self.raw
            .iter()
            .map(|rep| rep[time_index][functional])
            .collect()
    }
}

/// Empirical variances of the same Brownian noise sampled at step `Δ` and
/// `Δ/2` (common refined increments), for the grid-sensitivity check. The
/// fine sampler must have exactly twice the steps of the coarse one.
pub fn paired_grid_variances(
    coarse: &LimitSampler,
    fine: &LimitSampler,
    replications: usize,
    master_seed: u64,
    stream: u64,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    assert_eq!(fine.steps, 2 * coarse.steps, "fine grid must halve the step");
    type SamplePair = (Vec<Vec<f64>>, Vec<Vec<f64>>);
    let per_rep: Vec<SamplePair> = (0..replications)
        .into_par_iter()
        .map(|r| {
            let mut rng = replication_rng(master_seed, stream, r as u64);
            let db_fine = fine.draw_increments(&mut rng);
            let db_coarse: Vec<Vec<f64>> = db_fine
                .iter()
                .map(|row| row.chunks_exact(2).map(|c| c[0] + c[1]).collect())
                .collect();
            (
                coarse.sample_from_increments(&db_coarse),
                fine.sample_from_increments(&db_fine),
            )
        })
        .collect();
    let n_t = coarse.output_indices.len();
    let n_f = coarse.tables.len();
    let mut var_coarse = vec![vec![0.0; n_f]; n_t];
    let mut var_fine = vec![vec![0.0; n_f]; n_t];
    for ti in 0..n_t {
        for fi in 0..n_f {
            let mut mc = MomentAccumulator::new();
            let mut mf = MomentAccumulator::new();
            for (c, f) in &per_rep {
                mc.push(c[ti][fi]);
                mf.push(f[ti][fi]);
            }
            var_coarse[ti][fi] = mc.variance();
            var_fine[ti][fi] = mf.variance();
        }
    }
    (var_coarse, var_fine)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::adaptive_simpson;

    #[test]
    fn laguerre_low_orders() {
        for x in [0.0, 0.5, 1.0, 7.3] {
            assert_eq!(laguerre(0, x), 1.0);
            assert!((laguerre(1, x) - (1.0 - x)).abs() < 1e-15);
            assert!((laguerre(2, x) - (1.0 - 2.0 * x + 0.5 * x * x)).abs() < 1e-12);
        }
        assert_eq!(laguerre(1, 1.0), 0.0);
    }

    #[test]
    fn rodrigues_matches_recurrence() {
        let mut x = 0.0;
        while x <= 20.0 {
            for i in 0..=8 {
                let rec = laguerre(i, x);
                let rod = laguerre_rodrigues(i, x);
                assert!(
                    (rec - rod).abs() <= 1e-9,
                    "i={i}, x={x}: recurrence {rec} vs rodrigues {rod}"
                );
            }
            x += 0.25;
        }
    }

    #[test]
    fn gauss_laguerre_integrates_polynomials() {
        let (nodes, weights) = gauss_laguerre(12);
        // ∫ x^k e^{-x} = k!
        let mut fact = 1.0;
        for k in 0..=10u32 {
            if k > 0 {
                fact *= k as f64;
            }
            let got: f64 = nodes
                .iter()
                .zip(&weights)
                .map(|(&x, &w)| w * x.powi(k as i32))
                .sum();
            assert!(
                (got - fact).abs() < 1e-9 * fact.max(1.0),
                "k={k}: {got} vs {fact}"
            );
        }
    }

    #[test]
    fn laguerre_orthonormality() {
        let law = ServiceLaw::exponential(1.0).unwrap();
        let basis = BasisFamily::laguerre(&law, 12).unwrap();
        let err = basis.orthonormality_error(10).unwrap();
        assert!(err <= 1e-8, "orthonormality defect {err:e}");
    }

    #[test]
    fn tail_integral_closed_forms() {
        // verify J_i against adaptive quadrature
        for i in [0usize, 1, 3, 7] {
            for u in [0.0, 0.4, 1.0, 3.0] {
                let exact = laguerre_tail_integral(i, u);
                let quad = adaptive_simpson(|x| laguerre(i, x) * (-x).exp(), u, 40.0, 1e-12)
                    .unwrap();
                assert!(
                    (exact - quad).abs() < 1e-9,
                    "J_{i}({u}): closed {exact} vs quad {quad}"
                );
            }
        }
    }

    #[test]
    fn excess_integral_closed_forms() {
        for i in [0usize, 1, 2, 5] {
            for u in [0.0, 0.7, 2.0] {
                let exact = laguerre_excess_integral(i, u);
                let quad =
                    adaptive_simpson(|x| (x - u) * laguerre(i, x) * (-x).exp(), u, 45.0, 1e-12)
                        .unwrap();
                assert!(
                    (exact - quad).abs() < 1e-8,
                    "K_{i}({u}): closed {exact} vs quad {quad}"
                );
            }
        }
    }

    #[test]
    fn gram_schmidt_on_exponential_matches_laguerre() {
        let law = ServiceLaw::exponential(1.0).unwrap();
        let gs = BasisFamily::gram_schmidt(&law, 6).unwrap();
        for i in 0..=6 {
            let sign = if gs.h(i, 0.0) >= 0.0 { 1.0 } else { -1.0 };
            let mut x = 0.0;
            while x <= 8.0 {
                let want = laguerre(i, x);
                let got = sign * gs.h(i, x);
                assert!(
                    (got - want).abs() < 1e-6,
                    "i={i}, x={x}: gs {got} vs laguerre {want}"
                );
                x += 0.5;
            }
        }
    }

    #[test]
    fn gram_schmidt_on_uniform_gives_shifted_legendre() {
        let law = ServiceLaw::uniform(0.0, 1.0).unwrap();
        let gs = BasisFamily::gram_schmidt(&law, 4).unwrap();
        // h_0 ≡ 1, h_1 = √3 (2x − 1) up to sign
        assert!((gs.h(0, 0.3) - 1.0).abs() < 1e-10);
        let sign = if gs.h(1, 1.0) >= 0.0 { 1.0 } else { -1.0 };
        for x in [0.0, 0.25, 0.5, 1.0] {
            let want = 3.0f64.sqrt() * (2.0 * x - 1.0);
            assert!((sign * gs.h(1, x) - want).abs() < 1e-8);
        }
    }

    #[test]
    fn gram_schmidt_h0_is_one_for_any_law() {
        for law in [
            ServiceLaw::exponential(2.0).unwrap(),
            ServiceLaw::uniform(0.5, 2.5).unwrap(),
            ServiceLaw::mixture(vec![
                (0.3, ServiceLaw::exponential(1.0).unwrap()),
                (0.7, ServiceLaw::uniform(0.0, 1.0).unwrap()),
            ])
            .unwrap(),
        ] {
            let gs = BasisFamily::gram_schmidt(&law, 3).unwrap();
            assert!((gs.h(0, 1.234) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn coordinate_examples() {
        let law = ServiceLaw::exponential(1.0).unwrap();
        let basis = BasisFamily::laguerre(&law, 8).unwrap();
        // c_0(1) = 1 for any law
        let one = TestFunction::constant(1.0);
        assert!((basis.coordinate(0, &one, 1e-10).unwrap() - 1.0).abs() < 1e-9);
        // c_0(1_(u,∞)) = e^{-u}
        let u = 0.8f64;
        let got = perf_coordinate(&basis, PerfFunctional::Congestion, 0, u).unwrap();
        assert!((got - (-u).exp()).abs() < 1e-12);
    }

    #[test]
    fn parseval_partial_sums_reach_smooth_targets() {
        let law = ServiceLaw::exponential(1.0).unwrap();
        let basis = BasisFamily::laguerre(&law, 64).unwrap();
        let psi = TestFunction::gaussian_bump(2.0, 0.8);
        let target = law
            .integrate_fn(&|x| psi.eval(x) * psi.eval(x), 1e-12)
            .unwrap();
        let mut partial = 0.0;
        let mut reached = false;
        for i in 0..=64 {
            let c = basis.coordinate(i, &psi, 1e-10).unwrap();
            partial += c * c;
            if (partial - target).abs() <= 1e-6 {
                reached = true;
                break;
            }
        }
        assert!(reached, "partial {partial} vs target {target}");
    }

    #[test]
    fn congestion_variance_collapses_to_transient_form() {
        let law = ServiceLaw::exponential(1.0).unwrap();
        for (lambda, t) in [(1.0, 0.5f64), (2.0, 1.0)] {
            let v = perf_variance_exact(lambda, &law, PerfFunctional::Congestion, t).unwrap();
            assert!((v - lambda * (1.0 - (-t).exp())).abs() < 1e-14);
        }
        // t = 0 gives zero variance
        let v0 = perf_variance_exact(1.0, &law, PerfFunctional::Workload, 0.0).unwrap();
        assert_eq!(v0, 0.0);
    }

    #[test]
    fn service_variance_closed_form() {
        let law = ServiceLaw::exponential(1.0).unwrap();
        let t = 1.0f64;
        let v = perf_variance_exact(1.0, &law, PerfFunctional::Service, t).unwrap();
        assert!((v - (t - 1.0 + (-t).exp())).abs() < 1e-14);
    }

    #[test]
    fn covariance_kernel_examples() {
        let kernel = CovarianceKernel {
            lambda: 2.0,
            law: ServiceLaw::exponential(1.0).unwrap(),
        };
        let phi = TestFunction::gaussian_bump(0.5, 0.8);
        let psi = TestFunction::logistic(0.0, 1.0);
        assert_eq!(kernel.mutual_variation(0.0, &phi, &psi).unwrap(), 0.0);
        // symmetric and bilinear through the product pairing
        let a = kernel.mutual_variation(1.5, &phi, &psi).unwrap();
        let b = kernel.mutual_variation(1.5, &psi, &phi).unwrap();
        assert!((a - b).abs() < 1e-12);
        let doubled = kernel.mutual_variation(3.0, &phi, &psi).unwrap();
        assert!((doubled - 2.0 * a).abs() < 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn workload_requires_second_moment() {
        let heavy = ServiceLaw::pareto(1.5, 1.0).unwrap();
        let err = perf_variance_exact(1.0, &heavy, PerfFunctional::Workload, 1.0);
        assert!(matches!(err, Err(CoreError::InfiniteSecondMoment)));
    }

    #[test]
    fn series_converges_to_collapsed_for_workload() {
        let law = ServiceLaw::exponential(1.0).unwrap();
        let basis = BasisFamily::laguerre(&law, 32).unwrap();
        let exact = perf_variance_exact(1.0, &law, PerfFunctional::Workload, 1.0).unwrap();
        let series = perf_variance_series(1.0, &basis, PerfFunctional::Workload, 1.0, 32).unwrap();
        assert!(
            (series - exact).abs() / exact < 0.01,
            "series {series} vs exact {exact}"
        );
        // and the defect shrinks with K
        let series8 = perf_variance_series(1.0, &basis, PerfFunctional::Workload, 1.0, 8).unwrap();
        assert!((series - exact).abs() < (series8 - exact).abs());
    }

    #[test]
    fn sampler_zero_time_is_initial_term() {
        let law = ServiceLaw::exponential(1.0).unwrap();
        let basis = BasisFamily::laguerre(&law, 8).unwrap();
        let sampler = LimitSampler::build(
            1.0,
            &basis,
            &LimitInitial::Zero,
            &[SamplerFunctional::Performance(PerfFunctional::Congestion)],
            &[0.0, 1.0],
            8,
            64,
        )
        .unwrap();
        let mut rng = replication_rng(5, 0, 0);
        let sample = sampler.sample_one(&mut rng);
        assert_eq!(sample[0][0], 0.0);
        assert!(sample[1][0] != 0.0);
    }

    #[test]
    fn independent_coordinates_are_uncorrelated() {
        // functionals wired to a single basis coordinate each ride distinct
        // Brownian motions, so their samples are independent
        let law = ServiceLaw::exponential(1.0).unwrap();
        let basis = BasisFamily::laguerre(&law, 4).unwrap();
        let only = |idx: usize| SamplerFunctional::Custom {
            label: format!("e_{idx}"),
            coordinate: Arc::new(move |i, _u| Ok(if i == idx { 1.0 } else { 0.0 })),
        };
        let sampler = LimitSampler::build(
            1.0,
            &basis,
            &LimitInitial::Zero,
            &[only(0), only(1)],
            &[1.0],
            4,
            128,
        )
        .unwrap();
        let r = 4000;
        let ens = sampler.sample_ensemble(r, 99, 0);
        let a = ens.column(0, 0);
        let b = ens.column(0, 1);
        let ma = a.iter().sum::<f64>() / r as f64;
        let mb = b.iter().sum::<f64>() / r as f64;
        let mut cov = 0.0;
        let mut va = 0.0;
        let mut vb = 0.0;
        for i in 0..r {
            cov += (a[i] - ma) * (b[i] - mb);
            va += (a[i] - ma).powi(2);
            vb += (b[i] - mb).powi(2);
        }
        let corr = cov / (va.sqrt() * vb.sqrt());
        assert!(corr.abs() < 4.0 / (r as f64).sqrt(), "corr {corr}");
    }

    #[test]
    fn nonzero_initial_shifts_the_mean() {
        let law = ServiceLaw::exponential(1.0).unwrap();
        let basis = BasisFamily::laguerre(&law, 4).unwrap();
        let y0 = LimitInitial::SignedAtoms(vec![(2.0, 1.0), (0.2, -0.5)]);
        let sampler = LimitSampler::build(
            1.0,
            &basis,
            &y0,
            &[SamplerFunctional::Performance(PerfFunctional::Congestion)],
            &[1.0],
            4,
            32,
        )
        .unwrap();
        // Y_0((1, ∞)) = 1 (atom at 2 above, atom at 0.2 below)
        let ens = sampler.sample_ensemble(2000, 7, 0);
        let mean = ens.moments[0][0].mean();
        let se = ens.moments[0][0].standard_error();
        assert!((mean - 1.0).abs() <= 4.0 * se, "mean {mean} se {se}");
    }
}
