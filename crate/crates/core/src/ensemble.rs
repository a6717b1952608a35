//! Replicated simulation runs and their comparison against the fluid and
//! Gaussian-limit predictions.
//!
//! Replications are independent work units: each gets a generator derived
//! from `(master_seed, n, replication)`, values are collected
//! replication-major, and moments are folded in replication order so a rerun
//! of the same plan is bit-identical regardless of thread scheduling.

use rayon::prelude::*;
use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::diffusion::{perf_variance_exact, smooth_variance_exact, PerfFunctional};
use crate::error::{CoreError, Result};
use crate::fluid::FluidModel;
use crate::law::{ScalingScheme, ServiceLaw};
use crate::measure::PointMeasure;
use crate::rng::replication_rng;
use crate::scaling::simulate_normalized;
use crate::stats::{
    ks_against_normal, ks_critical, lilliefors_critical, MomentAccumulator,
};
use crate::testfn::{Closure, TestFunction};

/// Mean checks flag at four standard errors (two-sided ≈ 6e-5 per check).
pub const MEAN_SIGMA: f64 = 4.0;
/// Default relative tolerance for variance comparisons.
pub const VARIANCE_RTOL: f64 = 0.10;
/// Level of the distributional checks.
pub const DISTRIBUTION_LEVEL: f64 = 0.01;

/// A functional of the normalized profile evaluated at snapshot times.
#[derive(Debug, Clone)]
pub enum Functional {
    Congestion,
    Service,
    Workload,
    Range { x: f64, y: f64, closure: Closure },
    Smooth(TestFunction),
}

impl Functional {
    pub fn label(&self) -> String {
        match self {
            Functional::Congestion => "congestion".into(),
            Functional::Service => "service".into(),
            Functional::Workload => "workload".into(),
            Functional::Range { x, y, .. } => format!("range({x},{y})"),
            Functional::Smooth(f) => f.label().to_string(),
        }
    }

    /// Value on a snapshot measure.
    pub fn evaluate(&self, snapshot: &PointMeasure) -> Result<f64> {
        Ok(match self {
            Functional::Congestion => snapshot.performance_triple().congestion,
            Functional::Service => snapshot.performance_triple().service,
            Functional::Workload => snapshot.performance_triple().workload,
            Functional::Range { x, y, closure } => snapshot.range_count(*x, *y, *closure)?,
            Functional::Smooth(f) => snapshot.integrate(f),
        })
    }

    /// The fluid prediction at time `t`.
    pub fn fluid_value(&self, model: &FluidModel, t: f64) -> Result<f64> {
        Ok(match self {
            Functional::Congestion => model.congestion(t),
            Functional::Service => model.service(t),
            Functional::Workload => model.workload(t),
            Functional::Range { x, y, closure } => model.range_count(*x, *y, t, *closure)?,
            Functional::Smooth(f) => model.pairing(t, f)?,
        })
    }

    /// Exact variance of the Gaussian limit `⟨Y_t, φ⟩` under a zero limiting
    /// initial error.
    pub fn clt_variance(&self, model: &FluidModel, t: f64) -> Result<f64> {
        let lambda = model.lambda();
        let law = model.law();
        Ok(match self {
            Functional::Congestion => {
                perf_variance_exact(lambda, law, PerfFunctional::Congestion, t)?
            }
            Functional::Service => perf_variance_exact(lambda, law, PerfFunctional::Service, t)?,
            Functional::Workload => perf_variance_exact(lambda, law, PerfFunctional::Workload, t)?,
            Functional::Range { x, y, .. } => {
                // (τ_u 1_(x,y))² pairs the law as cdf(y+u) − cdf(x+u)
                let upper = integrated_cdf_shifted(law, *y, t);
                let lower = integrated_cdf_shifted(law, *x, t);
                lambda * (upper - lower)
            }
            Functional::Smooth(f) => smooth_variance_exact(lambda, law, f, t)?,
        })
    }
}

fn integrated_cdf_shifted(law: &ServiceLaw, c: f64, t: f64) -> f64 {
    if c == f64::INFINITY {
        return t;
    }
    if c == f64::NEG_INFINITY {
        return 0.0;
    }
    t - (law.integrated_tail(c + t) - law.integrated_tail(c))
}

/// One ensemble experiment.
#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub scheme: ScalingScheme,
    pub n_values: Vec<u32>,
    pub replications: u32,
    pub t_grid: Vec<f64>,
    pub functionals: Vec<Functional>,
    pub master_seed: u64,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.replications < 2 {
            return Err(CoreError::Precondition(
                "an ensemble needs at least two replications".into(),
            ));
        }
        if self.n_values.is_empty() || self.n_values.iter().any(|&n| n < 1) {
            return Err(CoreError::Precondition(
                "scaling indices must be positive".into(),
            ));
        }
        if self.t_grid.is_empty()
            || self.t_grid.windows(2).any(|w| w[0] >= w[1])
            || self.t_grid[0] < 0.0
        {
            return Err(CoreError::Precondition(
                "the time grid must be nonnegative and strictly increasing".into(),
            ));
        }
        if self.functionals.is_empty() {
            return Err(CoreError::Precondition(
                "at least one functional is required".into(),
            ));
        }
        Ok(())
    }
}

/// Per-cell summary statistics.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CellStats {
    pub mean: f64,
    pub variance: f64,
    pub standard_error: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub count: u64,
}

impl From<&MomentAccumulator> for CellStats {
    fn from(m: &MomentAccumulator) -> Self {
        CellStats {
            mean: m.mean(),
            variance: m.variance(),
            standard_error: m.standard_error(),
            skewness: m.skewness(),
            excess_kurtosis: m.excess_kurtosis(),
            count: m.count(),
        }
    }
}

/// Raw values and summaries of one executed plan.
pub struct EnsembleRun {
    pub n_values: Vec<u32>,
    pub t_grid: Vec<f64>,
    pub labels: Vec<String>,
    /// `values[n][t][f][replication]`.
    pub values: Vec<Vec<Vec<Vec<f64>>>>,
    /// `moments[n][t][f]`.
    pub moments: Vec<Vec<Vec<MomentAccumulator>>>,
}

impl EnsembleRun {
    pub fn stats(&self, n_idx: usize, t_idx: usize, f_idx: usize) -> CellStats {
        CellStats::from(&self.moments[n_idx][t_idx][f_idx])
    }
}

/// Runs the plan: for every `n`, `R` independent normalized paths, with
/// functional values at every grid time. Deterministic in the master seed.
pub fn run_ensemble(plan: &ExperimentPlan) -> Result<EnsembleRun> {
    plan.validate()?;
    let t_max = *plan.t_grid.last().expect("nonempty grid");
    let horizon = if t_max > 0.0 { t_max } else { 1.0 };
    let labels: Vec<String> = plan.functionals.iter().map(|f| f.label()).collect();

    let mut values = Vec::with_capacity(plan.n_values.len());
    let mut moments = Vec::with_capacity(plan.n_values.len());
    for &n in &plan.n_values {
        // replication-major evaluation, parallel over replications
        let per_rep: Vec<Result<Vec<Vec<f64>>>> = (0..plan.replications)
            .into_par_iter()
            .map(|r| {
                let mut rng = replication_rng(plan.master_seed, n as u64, r as u64);
                let path = simulate_normalized(&plan.scheme, n, horizon, &mut rng)?;
                plan.t_grid
                    .iter()
                    .map(|&t| {
                        let snap = path.snapshot(t)?;
                        plan.functionals
                            .iter()
                            .map(|f| f.evaluate(&snap))
                            .collect::<Result<Vec<f64>>>()
                    })
                    .collect::<Result<Vec<Vec<f64>>>>()
            })
            .collect();

        let mut cell_values =
            vec![vec![Vec::with_capacity(plan.replications as usize); labels.len()]; plan.t_grid.len()];
        for rep in per_rep {
            let rep = rep?;
            for (ti, row) in rep.into_iter().enumerate() {
                for (fi, v) in row.into_iter().enumerate() {
                    cell_values[ti][fi].push(v);
                }
            }
        }
        let cell_moments: Vec<Vec<MomentAccumulator>> = cell_values
            .iter()
            .map(|row| {
                row.iter()
                    .map(|vals| vals.iter().copied().collect())
                    .collect()
            })
            .collect();
        values.push(cell_values);
        moments.push(cell_moments);
    }
    Ok(EnsembleRun {
        n_values: plan.n_values.clone(),
        t_grid: plan.t_grid.clone(),
        labels,
        values,
        moments,
    })
}

// ---------------------------------------------------------------------------
// Fluid comparison
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct FluidErrorRow {
    pub n: u32,
    pub t: f64,
    pub functional: String,
    pub ensemble_mean: f64,
    pub standard_error: f64,
    pub fluid_value: f64,
    pub deviation: f64,
    /// Deviation beyond `MEAN_SIGMA` standard errors.
    pub flagged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct FluidErrorReport {
    pub rows: Vec<FluidErrorRow>,
    /// Largest |deviation| per scaling index, in plan order; expected to
    /// shrink with `n` up to statistical noise (reported, never asserted).
    pub sup_deviation_per_n: Vec<(u32, f64)>,
}

impl FluidErrorReport {
    pub fn all_within_band(&self) -> bool {
        self.rows.iter().all(|r| !r.flagged)
    }
}

/// Deviations of ensemble means from the fluid prediction.
pub fn fluid_error_report(run: &EnsembleRun, model: &FluidModel, plan: &ExperimentPlan) -> Result<FluidErrorReport> {
    let mut rows = Vec::new();
    let mut sups = Vec::new();
    for (ni, &n) in run.n_values.iter().enumerate() {
        let mut sup: f64 = 0.0;
        for (ti, &t) in run.t_grid.iter().enumerate() {
            for (fi, f) in plan.functionals.iter().enumerate() {
                let stats = run.stats(ni, ti, fi);
                let fluid = f.fluid_value(model, t)?;
                let deviation = stats.mean - fluid;
                sup = sup.max(deviation.abs());
                rows.push(FluidErrorRow {
                    n,
                    t,
                    functional: run.labels[fi].clone(),
                    ensemble_mean: stats.mean,
                    standard_error: stats.standard_error,
                    fluid_value: fluid,
                    deviation,
                    flagged: deviation.abs() > MEAN_SIGMA * stats.standard_error,
                });
            }
        }
        sups.push((n, sup));
    }
    Ok(FluidErrorReport {
        rows,
        sup_deviation_per_n: sups,
    })
}

// ---------------------------------------------------------------------------
// CLT comparison
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct CltRow {
    pub n: u32,
    pub t: f64,
    pub functional: String,
    /// Mean of the rescaled residuals `√n (value − fluid)`.
    pub residual_mean: f64,
    pub residual_se: f64,
    pub empirical_variance: f64,
    pub predicted_variance: f64,
    pub variance_rel_error: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    /// KS statistic against the Gaussian with the predicted variance
    /// (diagnostic; Poisson discreteness inflates it at moderate n).
    pub ks_predicted: f64,
    pub ks_predicted_critical: f64,
    /// KS statistic against the Gaussian fitted to the residual sample.
    pub ks_fitted: f64,
    pub ks_fitted_critical: f64,
    pub ks_fitted_pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CltReport {
    pub rows: Vec<CltRow>,
}

/// Distributional comparison of the rescaled residuals against the Gaussian
/// limit. Requires enough replications for the fitted test to make sense.
pub fn clt_report(run: &EnsembleRun, model: &FluidModel, plan: &ExperimentPlan) -> Result<CltReport> {
    if plan.replications < 500 {
        return Err(CoreError::Precondition(
            "distribution tests need at least 500 replications".into(),
        ));
    }
    let mut rows = Vec::new();
    for (ni, &n) in run.n_values.iter().enumerate() {
        let sqrt_n = (n as f64).sqrt();
        for (ti, &t) in run.t_grid.iter().enumerate() {
            for (fi, f) in plan.functionals.iter().enumerate() {
                let fluid = f.fluid_value(model, t)?;
                let mut residuals: Vec<f64> = run.values[ni][ti][fi]
                    .iter()
                    .map(|v| sqrt_n * (v - fluid))
                    .collect();
                let acc: MomentAccumulator = residuals.iter().copied().collect();
                let predicted = f.clt_variance(model, t)?;
                let empirical = acc.variance();
                let rel = if predicted > 0.0 {
                    (empirical - predicted) / predicted
                } else {
                    0.0
                };
                let r = residuals.len();
                let (ks_pred, ks_fit) = if predicted > 0.0 && empirical > 0.0 {
                    (
                        ks_against_normal(&mut residuals, 0.0, predicted.sqrt()),
                        ks_against_normal(&mut residuals, acc.mean(), acc.variance().sqrt()),
                    )
                } else {
                    (0.0, 0.0)
                };
                let fitted_critical = lilliefors_critical(DISTRIBUTION_LEVEL, r);
                rows.push(CltRow {
                    n,
                    t,
                    functional: run.labels[fi].clone(),
                    residual_mean: acc.mean(),
                    residual_se: acc.standard_error(),
                    empirical_variance: empirical,
                    predicted_variance: predicted,
                    variance_rel_error: rel,
                    skewness: acc.skewness(),
                    excess_kurtosis: acc.excess_kurtosis(),
                    ks_predicted: ks_pred,
                    ks_predicted_critical: ks_critical(DISTRIBUTION_LEVEL, r),
                    ks_fitted: ks_fit,
                    ks_fitted_critical: fitted_critical,
                    ks_fitted_pass: ks_fit <= fitted_critical,
                });
            }
        }
    }
    Ok(CltReport { rows })
}

// ---------------------------------------------------------------------------
// The classical transient oracle
// ---------------------------------------------------------------------------

/// The raw customer count of the exponential-service system started empty:
/// at normalized time `t` in the n-th system it is Poisson with mean
/// `n·λ·(1 − e^{−rate·t})/rate`. A classical result, implemented
/// independently of the fluid and diffusion modules and used only to
/// validate them.
#[derive(Debug, Clone, Copy)]
pub struct PoissonTransient {
    pub mean: f64,
}

impl PoissonTransient {
    pub fn variance(&self) -> f64 {
        self.mean
    }

    pub fn pmf(&self, k: u64) -> f64 {
        let m = self.mean;
        if m == 0.0 {
            return if k == 0 { 1.0 } else { 0.0 };
        }
        (k as f64 * m.ln() - m - ln_gamma(k as f64 + 1.0)).exp()
    }
}

/// Rejects non-exponential laws; the closed form only holds there.
pub fn exact_mm_infinity_oracle(
    lambda: f64,
    law: &ServiceLaw,
    t: f64,
    n: u32,
) -> Result<PoissonTransient> {
    let rate = match law {
        ServiceLaw::Exponential { rate } => *rate,
        _ => {
            return Err(CoreError::Precondition(
                "the transient oracle applies to exponential service only".into(),
            ))
        }
    };
    Ok(PoissonTransient {
        mean: n as f64 * lambda * (1.0 - (-rate * t).exp()) / rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(lambda: f64, n_values: Vec<u32>, r: u32, seed: u64) -> ExperimentPlan {
        ExperimentPlan {
            scheme: ScalingScheme::new(
                lambda,
                ServiceLaw::exponential(1.0).unwrap(),
                PointMeasure::empty(),
            )
            .unwrap(),
            n_values,
            replications: r,
            t_grid: vec![0.5, 1.0],
            functionals: vec![Functional::Congestion, Functional::Service],
            master_seed: seed,
        }
    }

    #[test]
    fn zero_intensity_plan_has_zero_variance() {
        let mut p = plan(0.0, vec![3], 4, 11);
        p.scheme = ScalingScheme::new(
            0.0,
            ServiceLaw::exponential(1.0).unwrap(),
            PointMeasure::from_atoms(vec![(2.0, 1.0)]).unwrap(),
        )
        .unwrap();
        let run = run_ensemble(&p).unwrap();
        for ti in 0..2 {
            let s = run.stats(0, ti, 0);
            assert_eq!(s.variance, 0.0);
        }
        // the single initial atom is still in service at both grid times
        assert_eq!(run.stats(0, 1, 0).mean, 1.0);
        // with no arrivals the fluid profile is the pure shift of the
        // initial atoms, so every report deviation vanishes
        let model = FluidModel::new(
            0.0,
            ServiceLaw::exponential(1.0).unwrap(),
            crate::fluid::InitialProfile::Atoms(
                PointMeasure::from_atoms(vec![(2.0, 1.0)]).unwrap(),
            ),
        )
        .unwrap();
        let report = fluid_error_report(&run, &model, &p).unwrap();
        assert!(report.rows.iter().all(|r| r.deviation == 0.0));
    }

    #[test]
    fn reruns_are_bit_identical() {
        let p = plan(1.0, vec![10], 16, 2024);
        let a = run_ensemble(&p).unwrap();
        let b = run_ensemble(&p).unwrap();
        assert_eq!(a.values, b.values);
        let c = run_ensemble(&plan(1.0, vec![10], 16, 2025)).unwrap();
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn plan_validation() {
        let mut p = plan(1.0, vec![10], 1, 0);
        assert!(p.validate().is_err());
        p.replications = 4;
        p.t_grid = vec![1.0, 0.5];
        assert!(p.validate().is_err());
        p.t_grid = vec![0.5, 1.0];
        p.n_values = vec![];
        assert!(p.validate().is_err());
    }

    #[test]
    fn oracle_matches_fluid_identity() {
        let law = ServiceLaw::exponential(1.0).unwrap();
        let model = FluidModel::empty_start(1.0, law.clone()).unwrap();
        for t in [0.5, 1.0, 2.0, 4.0] {
            let oracle = exact_mm_infinity_oracle(1.0, &law, t, 400).unwrap();
            assert!((oracle.mean / 400.0 - model.congestion(t)).abs() < 1e-12);
        }
        assert!(exact_mm_infinity_oracle(1.0, &ServiceLaw::uniform(0.0, 1.0).unwrap(), 1.0, 5).is_err());
        let at_zero = exact_mm_infinity_oracle(1.0, &law, 0.0, 5).unwrap();
        assert_eq!(at_zero.mean, 0.0);
        assert_eq!(at_zero.pmf(0), 1.0);
        assert_eq!(at_zero.pmf(3), 0.0);
        // the long-run mean settles at the offered load n·λ/rate
        let stationary = exact_mm_infinity_oracle(1.0, &law, 1e9, 7).unwrap();
        assert!((stationary.mean - 7.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_pmf_sums_to_one() {
        let law = ServiceLaw::exponential(1.0).unwrap();
        let o = exact_mm_infinity_oracle(2.0, &law, 1.0, 50).unwrap();
        let total: f64 = (0..400).map(|k| o.pmf(k)).sum();
        assert!((total - 1.0).abs() < 1e-12);
        // mean of the pmf reproduces the mean
        let mean: f64 = (0..400).map(|k| k as f64 * o.pmf(k)).sum();
        assert!((mean - o.mean).abs() < 1e-9);
    }

    #[test]
    fn ensemble_mean_tracks_fluid() {
        let p = plan(1.0, vec![80], 120, 7);
        let run = run_ensemble(&p).unwrap();
        let model =
            FluidModel::empty_start(1.0, ServiceLaw::exponential(1.0).unwrap()).unwrap();
        let report = fluid_error_report(&run, &model, &p).unwrap();
        assert!(
            report.all_within_band(),
            "flagged rows: {:?}",
            report
                .rows
                .iter()
                .filter(|r| r.flagged)
                .collect::<Vec<_>>()
        );
    }

    #[test]
    fn clt_report_requires_replications() {
        let p = plan(1.0, vec![10], 16, 1);
        let run = run_ensemble(&p).unwrap();
        let model =
            FluidModel::empty_start(1.0, ServiceLaw::exponential(1.0).unwrap()).unwrap();
        assert!(clt_report(&run, &model, &p).is_err());
    }
}
