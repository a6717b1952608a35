//! Exact event-driven generation of the profile process.
//!
//! A path is fully described by its arrival times, service marks and initial
//! atoms; snapshots at any time are reconstructed from first principles with
//! no time stepping, so the only error in limit-theorem experiments is
//! statistical. Departed customers are retained as nonpositive atoms.

use rand::Rng;
use rand_distr::{Distribution, Exp as ExpDist};

use crate::error::{CoreError, Result};
use crate::law::ServiceLaw;
use crate::measure::PointMeasure;
use crate::quad::{adaptive_simpson, DEFAULT_TOL};
use crate::testfn::TestFunction;

/// One simulated trajectory of the queue.
#[derive(Debug, Clone)]
pub struct ProfilePath {
    horizon: f64,
    arrival_times: Vec<f64>,
    service_times: Vec<f64>,
    initial_atoms: PointMeasure,
    /// Mass carried by each arrival atom (1 for raw paths, 1/n normalized).
    atom_weight: f64,
    /// Intensity of the simulated Poisson arrival process, for provenance.
    arrival_rate: f64,
    law: ServiceLaw,
}

impl ProfilePath {
    /// Simulates Poisson(λ) arrivals on `(0, T]` with i.i.d. service marks.
    pub fn simulate<R: Rng + ?Sized>(
        lambda: f64,
        law: &ServiceLaw,
        initial: PointMeasure,
        horizon: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Self::simulate_weighted(lambda, law, initial, horizon, 1.0, rng)
    }

    /// Same generator with an explicit per-arrival atom mass; the rescaled
    /// systems simulate directly in normalized coordinates through this.
    pub fn simulate_weighted<R: Rng + ?Sized>(
        lambda: f64,
        law: &ServiceLaw,
        initial: PointMeasure,
        horizon: f64,
        atom_weight: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(CoreError::Precondition(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if !(lambda >= 0.0) {
            return Err(CoreError::Precondition(format!(
                "arrival intensity must be nonnegative, got {lambda}"
            )));
        }
        let mut arrival_times = Vec::new();
        let mut service_times = Vec::new();
        if lambda > 0.0 {
            let gaps = ExpDist::new(lambda).expect("positive rate");
            let mut clock = 0.0;
            loop {
                let mut gap = gaps.sample(rng);
                while gap <= 0.0 {
                    gap = gaps.sample(rng); // zero gaps have probability zero
                }
                clock += gap;
                if clock > horizon {
                    break;
                }
                arrival_times.push(clock);
                service_times.push(law.sample(rng));
            }
        }
        Ok(Self {
            horizon,
            arrival_times,
            service_times,
            initial_atoms: initial,
            atom_weight,
            arrival_rate: lambda,
            law: law.clone(),
        })
    }

    /// Builds a path from a prescribed trace (randomness removed).
    pub fn inject(
        arrivals: Vec<f64>,
        services: Vec<f64>,
        initial: PointMeasure,
        horizon: f64,
    ) -> Result<Self> {
        if arrivals.len() != services.len() {
            return Err(CoreError::Precondition(format!(
                "{} arrivals vs {} services",
                arrivals.len(),
                services.len()
            )));
        }
        if !(horizon > 0.0) {
            return Err(CoreError::Precondition(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        let mut prev = 0.0;
        for &t in &arrivals {
            if !(t > prev) {
                return Err(CoreError::Precondition(format!(
                    "arrival times must be strictly increasing in (0, T], got {t} after {prev}"
                )));
            }
            if t > horizon {
                return Err(CoreError::Precondition(format!(
                    "arrival {t} beyond horizon {horizon}"
                )));
            }
            prev = t;
        }
        if services.iter().any(|&s| !(s > 0.0)) {
            return Err(CoreError::Precondition(
                "service times must be strictly positive".into(),
            ));
        }
        Ok(Self {
            horizon,
            arrival_times: arrivals,
            service_times: services,
            initial_atoms: initial,
            atom_weight: 1.0,
            arrival_rate: f64::NAN,
            law: ServiceLaw::Deterministic { d: 1.0 },
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn arrival_times(&self) -> &[f64] {
        &self.arrival_times
    }

    pub fn service_times(&self) -> &[f64] {
        &self.service_times
    }

    pub fn initial_atoms(&self) -> &PointMeasure {
        &self.initial_atoms
    }

    pub fn atom_weight(&self) -> f64 {
        self.atom_weight
    }

    pub fn arrival_rate(&self) -> f64 {
        self.arrival_rate
    }

    pub fn law(&self) -> &ServiceLaw {
        &self.law
    }

    /// Arrivals up to and including `t`, counted with the atom weight.
    pub fn counting_process(&self, t: f64) -> f64 {
        self.arrival_times.partition_point(|&a| a <= t) as f64 * self.atom_weight
    }

    /// The profile at time `t`: the initial atoms shifted left plus one atom
    /// at `T_i + σ_i − t` per arrival with `T_i ≤ t`. Departed customers show
    /// up as nonpositive positions and are retained.
    pub fn snapshot(&self, t: f64) -> Result<PointMeasure> {
        if !(0.0 <= t && t <= self.horizon) {
            return Err(CoreError::Precondition(format!(
                "snapshot time {t} outside [0, {}]",
                self.horizon
            )));
        }
        let mut measure = self.initial_atoms.shift(t);
        let upto = self.arrival_times.partition_point(|&a| a <= t);
        for i in 0..upto {
            measure.push_atom(
                self.arrival_times[i] + self.service_times[i] - t,
                self.atom_weight,
            )?;
        }
        Ok(measure)
    }

    /// Snapshot with atoms below `floor` dropped; memory relief for long
    /// horizons, never used in acceptance runs.
    pub fn snapshot_pruned(&self, t: f64, floor: f64) -> Result<PointMeasure> {
        let full = self.snapshot(t)?;
        PointMeasure::from_atoms(
            full.atoms()
                .iter()
                .filter(|a| a.position >= floor)
                .map(|a| (a.position, a.weight))
                .collect(),
        )
    }

    /// The compensated pairing
    /// `M_t(φ) = ⟨μ_t, φ⟩ − ⟨μ_0, φ⟩ + ∫_0^t ⟨μ_s, φ'⟩ ds − rate·t·⟨α, φ⟩`,
    /// zero-mean for the true arrival compensator rate.
    ///
    /// Between events the profile evolves by pure shift, so the time integral
    /// splits into one smooth integral per atom, each evaluated by adaptive
    /// quadrature to `1e-9` absolute.
    pub fn compensated_pairing(
        &self,
        phi: &TestFunction,
        compensator_rate: f64,
        law: &ServiceLaw,
        t: f64,
    ) -> Result<f64> {
        if !(0.0 <= t && t <= self.horizon) {
            return Err(CoreError::Precondition(format!(
                "time {t} outside [0, {}]",
                self.horizon
            )));
        }
        let dphi = phi.derivative()?; // rejects indicators
        let now = self.snapshot(t)?.integrate(phi);
        let start = self.initial_atoms.integrate(phi);

        let mut drift = 0.0;
        for a in self.initial_atoms.atoms() {
            let pos = a.position;
            drift += a.weight * adaptive_simpson(|s| dphi.eval(pos - s), 0.0, t, DEFAULT_TOL)?;
        }
        let upto = self.arrival_times.partition_point(|&a| a <= t);
        for i in 0..upto {
            let birth = self.arrival_times[i];
            let residual_at_birth = self.service_times[i];
            drift += self.atom_weight
                * adaptive_simpson(
                    |s| dphi.eval(birth + residual_at_birth - s),
                    birth,
                    t,
                    DEFAULT_TOL,
                )?;
        }

        let mean_phi = law.integrate(phi, DEFAULT_TOL)?;
        Ok(now - start + drift - compensator_rate * t * mean_phi)
    }
}

/// `M_t(φ)` for a raw (unit-weight) path under intensity `λ` and law `α`.
pub fn martingale_statistic(
    path: &ProfilePath,
    phi: &TestFunction,
    lambda: f64,
    law: &ServiceLaw,
    t: f64,
) -> Result<f64> {
    path.compensated_pairing(phi, lambda * path.atom_weight(), law, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::replication_rng;

    fn exp1() -> ServiceLaw {
        ServiceLaw::exponential(1.0).unwrap()
    }

    #[test]
    fn zero_intensity_is_pure_shift() {
        let mut rng = replication_rng(1, 0, 0);
        let mu0 = PointMeasure::from_atoms(vec![(2.0, 1.0), (0.5, 0.25)]).unwrap();
        let path = ProfilePath::simulate(0.0, &exp1(), mu0.clone(), 5.0, &mut rng).unwrap();
        assert!(path.arrival_times().is_empty());
        for t in [0.0, 1.0, 3.7] {
            let snap = path.snapshot(t).unwrap();
            let expect = mu0.shift(t);
            for (a, b) in snap.atoms().iter().zip(expect.atoms()) {
                assert_eq!(a.position, b.position);
                assert_eq!(a.weight, b.weight);
            }
        }
    }

    #[test]
    fn snapshot_formula_single_arrival() {
        let path = ProfilePath::inject(vec![0.5], vec![2.0], PointMeasure::empty(), 5.0).unwrap();
        let snap = path.snapshot(1.0).unwrap();
        assert_eq!(snap.len(), 1);
        assert!((snap.atoms()[0].position - 1.5).abs() < 1e-15);
        let p = snap.performance_triple();
        assert_eq!((p.congestion, p.service), (1.0, 0.0));
        assert!((p.workload - 1.5).abs() < 1e-15);

        // after departure at 2.5 the atom sits at a nonpositive position
        let later = path.snapshot(3.0).unwrap();
        assert!((later.atoms()[0].position + 0.5).abs() < 1e-15);
        let p = later.performance_triple();
        assert_eq!((p.congestion, p.service), (0.0, 1.0));
    }

    #[test]
    fn snapshot_at_zero_is_initial() {
        let mu0 = PointMeasure::dirac(1.5);
        let path = ProfilePath::inject(vec![], vec![], mu0.clone(), 1.0).unwrap();
        let snap = path.snapshot(0.0).unwrap();
        assert_eq!(snap.atoms()[0].position, 1.5);
        assert!(path.snapshot(1.5).is_err());
        assert!(path.snapshot(-0.1).is_err());
    }

    #[test]
    fn inject_validates_trace() {
        assert!(ProfilePath::inject(vec![1.0, 1.0], vec![1.0, 1.0], PointMeasure::empty(), 3.0).is_err());
        assert!(ProfilePath::inject(vec![2.0, 1.0], vec![1.0, 1.0], PointMeasure::empty(), 3.0).is_err());
        assert!(ProfilePath::inject(vec![1.0], vec![], PointMeasure::empty(), 3.0).is_err());
        assert!(ProfilePath::inject(vec![1.0], vec![0.0], PointMeasure::empty(), 3.0).is_err());
        assert!(ProfilePath::inject(vec![4.0], vec![1.0], PointMeasure::empty(), 3.0).is_err());
    }

    #[test]
    fn counting_staircase() {
        let path =
            ProfilePath::inject(vec![1.0, 2.0], vec![5.0, 5.0], PointMeasure::empty(), 3.0).unwrap();
        assert_eq!(path.counting_process(0.5), 0.0);
        assert_eq!(path.counting_process(1.5), 1.0);
        assert_eq!(path.counting_process(2.5), 2.0);
        let snap = path.snapshot(3.0).unwrap();
        assert_eq!(snap.performance_triple().congestion, 2.0);
        let positions: Vec<f64> = snap.atoms().iter().map(|a| a.position).collect();
        assert_eq!(positions, vec![3.0, 4.0]);
    }

    #[test]
    fn zero_arrival_martingale_cancels_exactly() {
        // with no arrivals and a single atom the pairing telescopes to zero
        // by the fundamental theorem of calculus, up to quadrature tolerance
        let mu0 = PointMeasure::dirac(0.8);
        let path = ProfilePath::inject(vec![], vec![], mu0, 4.0).unwrap();
        let phi = TestFunction::gaussian_bump(0.0, 1.0);
        for t in [0.5, 1.0, 3.5] {
            let m = martingale_statistic(&path, &phi, 0.0, &exp1(), t).unwrap();
            assert!(m.abs() <= 1e-8, "|M_t| = {:e}", m.abs());
        }
    }

    #[test]
    fn martingale_rejects_indicator() {
        let path = ProfilePath::inject(vec![], vec![], PointMeasure::empty(), 1.0).unwrap();
        let ind = TestFunction::indicator_positive();
        assert!(martingale_statistic(&path, &ind, 1.0, &exp1(), 1.0).is_err());
    }

    #[test]
    fn pathwise_conservation() {
        let mut rng = replication_rng(7, 0, 0);
        let mu0 = PointMeasure::from_atoms(vec![(0.4, 1.0), (2.0, 1.0)]).unwrap();
        let path = ProfilePath::simulate(2.0, &exp1(), mu0.clone(), 8.0, &mut rng).unwrap();
        for t in [0.0, 0.5, 2.0, 7.9] {
            let p = path.snapshot(t).unwrap().performance_triple();
            let n_t = path.counting_process(t);
            assert!(
                (p.congestion + p.service - (n_t + mu0.total_weight())).abs() < 1e-9,
                "conservation violated at {t}"
            );
        }
    }

    #[test]
    fn service_and_count_are_monotone() {
        let mut rng = replication_rng(21, 0, 0);
        let path = ProfilePath::simulate(3.0, &exp1(), PointMeasure::empty(), 6.0, &mut rng).unwrap();
        let mut prev_s = 0.0;
        let mut prev_n = 0.0;
        for i in 0..=60 {
            let t = i as f64 * 0.1;
            let s = path.snapshot(t).unwrap().performance_triple().service;
            let n = path.counting_process(t);
            assert!(s + 1e-12 >= prev_s, "service decreased at t={t}");
            assert!(n >= prev_n, "count decreased at t={t}");
            prev_s = s;
            prev_n = n;
        }
    }

    #[test]
    fn prune_drops_deep_negative_atoms() {
        let path = ProfilePath::inject(vec![0.5], vec![0.1], PointMeasure::empty(), 10.0).unwrap();
        let full = path.snapshot(10.0).unwrap();
        assert_eq!(full.len(), 1);
        let pruned = path.snapshot_pruned(10.0, -5.0).unwrap();
        assert_eq!(pruned.len(), 0);
    }
}
