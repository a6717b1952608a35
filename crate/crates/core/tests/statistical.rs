//! Fixed-seed statistical tests of the simulation and limit machinery.
//!
//! Every ensemble below runs under a frozen master seed, so reruns are
//! deterministic; the bands follow the assertion policy (means at four
//! standard errors, variances at fixed relative tolerance, distribution
//! tests at the 1% level).

use mginf_core::diffusion::{BasisFamily, LimitInitial, LimitSampler, PerfFunctional, SamplerFunctional};
use mginf_core::ensemble::{run_ensemble, ExperimentPlan, Functional};
use mginf_core::error::CoreError;
use mginf_core::law::{ScalingScheme, ServiceLaw};
use mginf_core::measure::PointMeasure;
use mginf_core::rng::replication_rng;
use mginf_core::scaling::{literal_rescaled_snapshot, scaled_martingale, simulate_normalized};
use mginf_core::sim::{martingale_statistic, ProfilePath};
use mginf_core::stats::{ks_critical, ks_statistic, MomentAccumulator};
use mginf_core::testfn::TestFunction;

const MASTER: u64 = 0x6d67_696e_6600_0001; // frozen for reproducibility

fn exp1() -> ServiceLaw {
    ServiceLaw::exponential(1.0).unwrap()
}

#[test]
fn sampler_empirical_cdf_matches_law() {
    let laws = [
        exp1(),
        ServiceLaw::exponential(2.5).unwrap(),
        ServiceLaw::uniform(0.0, 2.0).unwrap(),
        ServiceLaw::deterministic(1.0).unwrap(),
        ServiceLaw::mixture(vec![
            (0.5, exp1()),
            (0.5, ServiceLaw::exponential(2.0).unwrap()),
        ])
        .unwrap(),
        ServiceLaw::pareto(2.5, 1.0).unwrap(),
    ];
    let n = 100_000usize;
    let band = 1.95 / (n as f64).sqrt() * 1.5;
    for (li, law) in laws.iter().enumerate() {
        let mut rng = replication_rng(MASTER, 100 + li as u64, 0);
        let mut xs: Vec<f64> = (0..n).map(|_| law.sample(&mut rng)).collect();

        // Monte Carlo mean within four standard errors of the law mean
        let acc: MomentAccumulator = xs.iter().copied().collect();
        assert!(
            (acc.mean() - law.mean()).abs() <= 4.0 * acc.standard_error(),
            "law {law:?}: sample mean {} vs {}",
            acc.mean(),
            law.mean()
        );

        if law.nonatomic() {
            let d = ks_statistic(&mut xs, |x| law.cdf(x));
            assert!(d <= band, "law {law:?}: KS statistic {d} above band {band}");
        } else {
            // the Kolmogorov band assumes a continuous cdf; an atomic law's
            // sampler is checked for exactness instead
            assert!(xs.iter().all(|&x| x == law.mean()));
        }
    }
}

#[test]
fn poisson_arrivals_concentrate_and_gaps_are_exponential() {
    let mut rng = replication_rng(MASTER, 1, 0);
    let horizon = 10_000.0;
    let path = ProfilePath::simulate(1.0, &exp1(), PointMeasure::empty(), horizon, &mut rng)
        .unwrap();
    let count = path.arrival_times().len() as f64;
    assert!(
        (count - horizon).abs() <= 4.0 * horizon.sqrt(),
        "arrival count {count} strays from {horizon}"
    );

    let mut gaps: Vec<f64> = Vec::with_capacity(path.arrival_times().len());
    let mut prev = 0.0;
    for &a in path.arrival_times() {
        gaps.push(a - prev);
        prev = a;
    }
    assert!(path.arrival_times().windows(2).all(|w| w[0] < w[1]));
    let d = ks_statistic(&mut gaps, |x| 1.0 - (-x).exp());
    let crit = ks_critical(0.01, gaps.len());
    assert!(d <= crit, "gap KS {d} above the 1% critical value {crit}");
}

#[test]
fn martingale_is_centered_and_has_the_predicted_variance() {
    let (lambda, t, horizon) = (4.0, 1.0, 1.0);
    let law = exp1();
    let phi = TestFunction::gaussian_bump(1.0, 0.5);
    let psi = TestFunction::logistic(0.5, 0.7);

    let r_mean = 500;
    let mut acc = MomentAccumulator::new();
    for r in 0..r_mean {
        let mut rng = replication_rng(MASTER, 2, r);
        let path = ProfilePath::simulate(lambda, &law, PointMeasure::empty(), horizon, &mut rng)
            .unwrap();
        acc.push(martingale_statistic(&path, &phi, lambda, &law, t).unwrap());
    }
    assert!(
        acc.mean().abs() <= 4.0 * acc.standard_error(),
        "martingale mean {} exceeds 4 se {}",
        acc.mean(),
        acc.standard_error()
    );

    // second pass at R = 2000 for the variance and the mutual variation
    let r_var = 2000;
    let mut acc_phi = MomentAccumulator::new();
    let mut acc_psi = MomentAccumulator::new();
    let mut cross = 0.0;
    let mut values = Vec::with_capacity(r_var as usize);
    for r in 0..r_var {
        let mut rng = replication_rng(MASTER, 3, r);
        let path = ProfilePath::simulate(lambda, &law, PointMeasure::empty(), horizon, &mut rng)
            .unwrap();
        let m_phi = martingale_statistic(&path, &phi, lambda, &law, t).unwrap();
        let m_psi = martingale_statistic(&path, &psi, lambda, &law, t).unwrap();
        acc_phi.push(m_phi);
        acc_psi.push(m_psi);
        values.push((m_phi, m_psi));
    }
    let predicted_phi = lambda * t * law.integrate(&phi.squared(), 1e-10).unwrap();
    let rel = (acc_phi.variance() - predicted_phi) / predicted_phi;
    assert!(
        rel.abs() <= 0.10,
        "martingale variance off by {:.2}% (got {}, predicted {predicted_phi})",
        rel * 100.0,
        acc_phi.variance()
    );

    // mutual variation: Cov(M(φ), M(ψ)) = λ t ⟨α, φψ⟩ within 15%
    let (m1, m2) = (acc_phi.mean(), acc_psi.mean());
    for (a, b) in &values {
        cross += (a - m1) * (b - m2);
    }
    cross /= r_var as f64 - 1.0;
    let predicted_cross = lambda * t * law.integrate(&phi.product(&psi), 1e-10).unwrap();
    assert!(
        ((cross - predicted_cross) / predicted_cross).abs() <= 0.15,
        "cross covariance {cross} vs predicted {predicted_cross}"
    );
}

#[test]
fn direct_normalized_simulation_matches_literal_rescaling() {
    let scheme = ScalingScheme::new(1.0, exp1(), PointMeasure::empty()).unwrap();
    let phi = TestFunction::gaussian_bump(0.5, 0.6);
    let (t, r) = (1.0, 2000u64);
    for (si, n) in [(10u64, 2u32), (11u64, 5u32)] {
        let mut direct = MomentAccumulator::new();
        let mut literal = MomentAccumulator::new();
        for rep in 0..r {
            let mut rng_a = replication_rng(MASTER, si * 1000, rep);
            let path = simulate_normalized(&scheme, n, t, &mut rng_a).unwrap();
            direct.push(path.snapshot(t).unwrap().integrate(&phi));

            let mut rng_b = replication_rng(MASTER, si * 1000 + 1, rep);
            let snap = literal_rescaled_snapshot(&scheme, n, t, &mut rng_b).unwrap();
            literal.push(snap.integrate(&phi));
        }
        let mean_gap = (direct.mean() - literal.mean()).abs();
        let mean_band = 4.0
            * (direct.standard_error().powi(2) + literal.standard_error().powi(2)).sqrt();
        assert!(
            mean_gap <= mean_band,
            "n={n}: mean gap {mean_gap} above {mean_band}"
        );
        let var_gap = (direct.variance() - literal.variance()).abs();
        let var_band = 4.0
            * (direct.variance_standard_error().powi(2)
                + literal.variance_standard_error().powi(2))
            .sqrt();
        assert!(
            var_gap <= var_band,
            "n={n}: variance gap {var_gap} above {var_band}"
        );
    }
}

#[test]
fn scaled_martingale_increments_are_uncorrelated() {
    let scheme = ScalingScheme::new(1.0, exp1(), PointMeasure::empty()).unwrap();
    let phi = TestFunction::gaussian_bump(1.0, 0.5);
    let (n, r) = (50u32, 2000u64);
    let (t1, t2) = (0.5, 1.0);
    let mut first = Vec::with_capacity(r as usize);
    let mut increment = Vec::with_capacity(r as usize);
    for rep in 0..r {
        let mut rng = replication_rng(MASTER, 20, rep);
        let path = simulate_normalized(&scheme, n, t2, &mut rng).unwrap();
        let m1 = scaled_martingale(&path, &phi, &scheme, n, t1).unwrap();
        let m2 = scaled_martingale(&path, &phi, &scheme, n, t2).unwrap();
        first.push(m1);
        increment.push(m2 - m1);
    }
    let a: MomentAccumulator = first.iter().copied().collect();
    let b: MomentAccumulator = increment.iter().copied().collect();
    let mut cov = 0.0;
    for i in 0..first.len() {
        cov += (first[i] - a.mean()) * (increment[i] - b.mean());
    }
    cov /= first.len() as f64 - 1.0;
    let corr = cov / (a.variance().sqrt() * b.variance().sqrt());
    assert!(
        corr.abs() <= 4.0 / (r as f64).sqrt(),
        "increment correlation {corr}"
    );
}

#[test]
fn normalized_arrival_count_tracks_lambda_t() {
    // N̄ⁿ_t is Poisson(nλt)/n; its ensemble mean sits on λt
    let scheme = ScalingScheme::new(1.0, exp1(), PointMeasure::empty()).unwrap();
    let (n, r, t) = (60u32, 800u64, 1.5);
    let mut acc = MomentAccumulator::new();
    for rep in 0..r {
        let mut rng = replication_rng(MASTER, 40, rep);
        let path = simulate_normalized(&scheme, n, t, &mut rng).unwrap();
        acc.push(path.counting_process(t));
    }
    assert!(
        (acc.mean() - 1.5).abs() <= 4.0 * acc.standard_error(),
        "normalized count mean {} vs 1.5",
        acc.mean()
    );
    // the Poisson(nλt)/n variance is λt/n
    let predicted = 1.5 / n as f64;
    assert!(((acc.variance() - predicted) / predicted).abs() < 0.25);
}

#[test]
fn pairing_variance_shrinks_like_one_over_n() {
    let plan = ExperimentPlan {
        scheme: ScalingScheme::new(1.0, exp1(), PointMeasure::empty()).unwrap(),
        n_values: vec![100, 400],
        replications: 2000,
        t_grid: vec![1.0],
        functionals: vec![Functional::Congestion],
        master_seed: MASTER ^ 0x5eed,
    };
    let run = run_ensemble(&plan).unwrap();
    let v100 = run.stats(0, 0, 0).variance;
    let v400 = run.stats(1, 0, 0).variance;
    let ratio = v100 / v400;
    assert!(
        (3.0..=5.3).contains(&ratio),
        "variance ratio {ratio} outside [3, 5.3] (v100={v100}, v400={v400})"
    );
}

#[test]
fn limit_sampler_covariance_across_times() {
    let law = exp1();
    let lambda = 1.0;
    let basis = BasisFamily::laguerre(&law, 16).unwrap();
    let sampler = LimitSampler::build(
        lambda,
        &basis,
        &LimitInitial::Zero,
        &[SamplerFunctional::Performance(PerfFunctional::Congestion)],
        &[0.5, 1.0],
        16,
        512,
    )
    .unwrap();
    let r = 10_000;
    let ens = sampler.sample_ensemble(r, MASTER, 30);
    let xs = ens.column(0, 0);
    let ys = ens.column(1, 0);
    let mx = xs.iter().sum::<f64>() / r as f64;
    let my = ys.iter().sum::<f64>() / r as f64;
    let mut cov = 0.0;
    for i in 0..r {
        cov += (xs[i] - mx) * (ys[i] - my);
    }
    cov /= r as f64 - 1.0;
    // collapsed form of the derived cross-time covariance:
    // λ ∫_0^s tail(t−u) du = λ (IT(t) − IT(t−s))
    let (s, t) = (0.5, 1.0);
    let predicted = lambda * (law.integrated_tail(t) - law.integrated_tail(t - s));
    assert!(
        ((cov - predicted) / predicted).abs() <= 0.10,
        "cross-time covariance {cov} vs {predicted}"
    );
    // and the sampler's own discretized prediction is even closer in law
    let discrete = sampler.discrete_cross_covariance(0, 0, 1);
    assert!(((cov - discrete) / discrete).abs() <= 0.10);
}

#[test]
fn limit_sampler_is_gaussian() {
    let law = exp1();
    let basis = BasisFamily::laguerre(&law, 16).unwrap();
    let sampler = LimitSampler::build(
        2.0,
        &basis,
        &LimitInitial::Zero,
        &[
            SamplerFunctional::Performance(PerfFunctional::Congestion),
            SamplerFunctional::Performance(PerfFunctional::Workload),
        ],
        &[1.0],
        16,
        256,
    )
    .unwrap();
    let ens = sampler.sample_ensemble(10_000, MASTER, 31);
    for fi in 0..2 {
        let m = &ens.moments[0][fi];
        assert!(
            m.skewness().abs() <= 0.1,
            "functional {fi}: skewness {}",
            m.skewness()
        );
        assert!(
            m.excess_kurtosis().abs() <= 0.2,
            "functional {fi}: excess kurtosis {}",
            m.excess_kurtosis()
        );
    }
}

#[test]
fn smooth_functional_series_collapses_at_default_truncation() {
    // for a smooth probe the truncated coordinate-series variance reaches
    // the collapsed exact value at the default truncation order
    use mginf_core::diffusion::{smooth_variance_exact, smooth_variance_series};
    let law = exp1();
    let basis = BasisFamily::laguerre(&law, 32).unwrap();
    let phi = TestFunction::gaussian_bump(1.0, 0.6);
    let exact = smooth_variance_exact(1.0, &law, &phi, 1.0).unwrap();
    let series = smooth_variance_series(1.0, &basis, &phi, 1.0, 32).unwrap();
    let rel = ((series - exact) / exact).abs();
    assert!(rel <= 0.01, "smooth truncation defect {:.3}%", rel * 100.0);
}

#[test]
fn gram_schmidt_reports_orthogonality_loss() {
    // raw-moment Gram-Schmidt on the uniform law cannot reach order 40 in
    // f64; the error must carry the usable order instead of degrading
    // the uniform moment matrix is the Hilbert matrix; double precision
    // holds 1e-8 orthonormality only into single digits of order
    let law = ServiceLaw::uniform(0.0, 1.0).unwrap();
    match BasisFamily::gram_schmidt(&law, 40) {
        Err(CoreError::OrthogonalityLoss { max_usable, requested }) => {
            assert_eq!(requested, 40);
            assert!(max_usable >= 5, "usable order only {max_usable}");
            // the reported order is actually constructible and orthonormal
            let basis = BasisFamily::gram_schmidt(&law, max_usable).unwrap();
            assert!(basis.orthonormality_error(max_usable).unwrap() <= 1e-8);
        }
        other => panic!("expected orthogonality loss, got {other:?}"),
    }
}
