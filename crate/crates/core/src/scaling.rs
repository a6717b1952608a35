//! The rescaled systems: time, space and mass all normalized by `n`.
//!
//! The default engine simulates directly in normalized coordinates —
//! arrivals at intensity `n·λⁿ` on the normalized horizon, service marks
//! from the normalized law, atoms of mass `1/n` — which equals the literal
//! "simulate raw, then rescale" construction in law and is `n`-fold cheaper
//! in horizon. The literal construction is retained as a cross-check.

use rand::Rng;

use crate::error::{CoreError, Result};
use crate::law::ScalingScheme;
use crate::measure::PointMeasure;
use crate::quad::DEFAULT_TOL;
use crate::sim::ProfilePath;
use crate::testfn::TestFunction;

/// A request for functional values of one rescaled snapshot.
#[derive(Debug, Clone)]
pub struct NormalizedSnapshotRequest {
    pub n: u32,
    pub t: f64,
    pub functionals: Vec<TestFunction>,
}

/// Simulates the n-th rescaled profile directly in normalized coordinates.
pub fn simulate_normalized<R: Rng + ?Sized>(
    scheme: &ScalingScheme,
    n: u32,
    horizon: f64,
    rng: &mut R,
) -> Result<ProfilePath> {
    if n < 1 {
        return Err(CoreError::Precondition("scaling index must be >= 1".into()));
    }
    let lambda_n = scheme.lambda_of_n(n);
    ProfilePath::simulate_weighted(
        n as f64 * lambda_n,
        scheme.base_law(),
        scheme.initial_profile_of_n(n).clone(),
        horizon,
        1.0 / n as f64,
        rng,
    )
}

/// Evaluates every requested functional on one normalized snapshot.
pub fn evaluate_normalized(path: &ProfilePath, request: &NormalizedSnapshotRequest) -> Result<Vec<f64>> {
    let snap = path.snapshot(request.t)?;
    Ok(request.functionals.iter().map(|f| snap.integrate(f)).collect())
}

/// The scaled compensated pairing
/// `M̄ⁿ_t(φ) = ⟨μ̄ⁿ_t, φ⟩ − ⟨μ̄₀ⁿ, φ⟩ + ∫_0^t ⟨μ̄ⁿ_s, φ'⟩ ds − λⁿ t ⟨ᾱⁿ, φ⟩`.
pub fn scaled_martingale(
    path: &ProfilePath,
    phi: &TestFunction,
    scheme: &ScalingScheme,
    n: u32,
    t: f64,
) -> Result<f64> {
    path.compensated_pairing(phi, scheme.lambda_of_n(n), scheme.base_law(), t)
}

/// The predicted quadratic variation `(λⁿ/n)·t·⟨ᾱⁿ, φ²⟩`.
pub fn predicted_qv(scheme: &ScalingScheme, n: u32, phi: &TestFunction, t: f64) -> Result<f64> {
    let phi2 = phi.squared();
    let second = scheme.base_law().integrate(&phi2, DEFAULT_TOL)?;
    Ok(scheme.lambda_of_n(n) / n as f64 * t * second)
}

/// Largest jump of `⟨μ̄ⁿ_·, φ⟩` along the path: one atom of mass `1/n`
/// appears per arrival, so every jump is `|φ(σ_i)|/n`.
pub fn max_pairing_jump(path: &ProfilePath, phi: &TestFunction) -> f64 {
    path.service_times()
        .iter()
        .map(|&s| phi.eval(s).abs() * path.atom_weight())
        .fold(0.0, f64::max)
}

/// The literal rescaling of a raw system: simulate the n-th raw queue
/// (intensity `λⁿ` in raw time over horizon `n·t`, raw marks `n` times a
/// normalized sample) and map the raw profile at time `n·t` through
/// position `/n`, mass `/n`. Equal in law to [`simulate_normalized`]'s
/// snapshot; kept as the distributional cross-check of that equivalence.
pub fn literal_rescaled_snapshot<R: Rng + ?Sized>(
    scheme: &ScalingScheme,
    n: u32,
    t: f64,
    rng: &mut R,
) -> Result<PointMeasure> {
    if n < 1 {
        return Err(CoreError::Precondition("scaling index must be >= 1".into()));
    }
    let lambda_n = scheme.lambda_of_n(n);
    let nf = n as f64;
    let raw_horizon = nf * t;

    // Raw initial profile: normalized initial atoms blown up n-fold in both
    // position and mass.
    let mut raw_initial = PointMeasure::empty();
    for a in scheme.initial_profile_of_n(n).atoms() {
        raw_initial.push_atom(a.position * nf, a.weight * nf)?;
    }

    // Raw path; marks are n times a normalized sample.
    let mut arrivals = Vec::new();
    let mut services = Vec::new();
    if lambda_n > 0.0 {
        use rand_distr::Distribution;
        let gaps = rand_distr::Exp::new(lambda_n).expect("positive rate");
        let mut clock = 0.0;
        loop {
            let gap: f64 = gaps.sample(rng);
            clock += gap;
            if clock > raw_horizon {
                break;
            }
            arrivals.push(clock);
            services.push(nf * scheme.base_law().sample(rng));
        }
    }

    // Raw profile at raw time n·t, then μ̄ⁿ_t(B) = μⁿ_{nt}(nB)/n.
    let mut rescaled = PointMeasure::empty();
    for a in raw_initial.shift(raw_horizon).atoms() {
        rescaled.push_atom(a.position / nf, a.weight / nf)?;
    }
    for (arr, srv) in arrivals.iter().zip(&services) {
        rescaled.push_atom((arr + srv - raw_horizon) / nf, 1.0 / nf)?;
    }
    Ok(rescaled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::law::ServiceLaw;
    use crate::rng::replication_rng;

    fn scheme(lambda: f64) -> ScalingScheme {
        ScalingScheme::new(
            lambda,
            ServiceLaw::exponential(1.0).unwrap(),
            PointMeasure::empty(),
        )
        .unwrap()
    }

    #[test]
    fn n_equal_one_is_the_raw_simulator() {
        let mut rng = replication_rng(3, 1, 0);
        let path = simulate_normalized(&scheme(1.0), 1, 5.0, &mut rng).unwrap();
        assert_eq!(path.atom_weight(), 1.0);
        assert_eq!(path.arrival_rate(), 1.0);
    }

    #[test]
    fn normalized_mass_conservation() {
        let mut rng = replication_rng(3, 2, 0);
        let sch = ScalingScheme::new(
            1.0,
            ServiceLaw::exponential(1.0).unwrap(),
            PointMeasure::from_atoms(vec![(0.7, 0.5)]).unwrap(),
        )
        .unwrap();
        let n = 50;
        let path = simulate_normalized(&sch, n, 2.0, &mut rng).unwrap();
        for t in [0.0, 0.5, 2.0] {
            let total = path.snapshot(t).unwrap().total_weight();
            let expect = path.counting_process(t) + 0.5;
            assert!((total - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn qv_formula() {
        let sch = scheme(1.0);
        let one = TestFunction::constant(1.0);
        let v = predicted_qv(&sch, 100, &one, 2.0).unwrap();
        assert!((v - 0.02).abs() < 1e-10);
        // 1/n scaling is exact in the formula
        let v400 = predicted_qv(&sch, 400, &one, 2.0).unwrap();
        assert!((v - 4.0 * v400).abs() < 1e-14);
        assert_eq!(predicted_qv(&sch, 100, &one, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn zero_intensity_martingale_vanishes() {
        let sch = ScalingScheme::new(
            0.0,
            ServiceLaw::exponential(1.0).unwrap(),
            PointMeasure::from_atoms(vec![(1.0, 0.25)]).unwrap(),
        )
        .unwrap();
        let mut rng = replication_rng(9, 0, 0);
        let path = simulate_normalized(&sch, 4, 3.0, &mut rng).unwrap();
        let phi = TestFunction::logistic(0.0, 0.8);
        let m = scaled_martingale(&path, &phi, &sch, 4, 2.5).unwrap();
        assert!(m.abs() <= 1e-8);
    }

    #[test]
    fn jump_bound_holds_pathwise() {
        let mut rng = replication_rng(11, 0, 0);
        let sch = scheme(2.0);
        let n = 25;
        let path = simulate_normalized(&sch, n, 3.0, &mut rng).unwrap();
        let phi = TestFunction::gaussian_bump(1.0, 0.5);
        let bound = phi.sup_bound() / n as f64;
        assert!(max_pairing_jump(&path, &phi) <= bound);
    }

    #[test]
    fn snapshot_request_evaluates_functionals() {
        let mut rng = replication_rng(17, 0, 0);
        let path = simulate_normalized(&scheme(1.0), 20, 2.0, &mut rng).unwrap();
        let request = NormalizedSnapshotRequest {
            n: 20,
            t: 1.0,
            functionals: vec![
                TestFunction::constant(1.0),
                TestFunction::indicator_positive(),
            ],
        };
        let values = evaluate_normalized(&path, &request).unwrap();
        let snap = path.snapshot(1.0).unwrap();
        assert_eq!(values[0], snap.total_weight());
        assert_eq!(values[1], snap.performance_triple().congestion);
    }

    #[test]
    fn literal_rescaling_runs_and_conserves_mass() {
        let mut rng = replication_rng(13, 0, 0);
        let sch = scheme(1.0);
        let m = literal_rescaled_snapshot(&sch, 3, 1.0, &mut rng).unwrap();
        // every atom carries 1/3 mass
        for a in m.atoms() {
            assert!((a.weight - 1.0 / 3.0).abs() < 1e-15);
        }
    }
}
