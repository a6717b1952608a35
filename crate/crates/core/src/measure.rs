//! Finite atomic measures on the real line.
//!
//! A [`PointMeasure`] is a finite list of weighted atoms. Atoms at or below
//! zero are meaningful (they record departed customers), so nothing is ever
//! pruned implicitly. The shift convention is fixed here once for the whole
//! crate: `shift(μ, t)` moves every atom left by `t`, and the dual action on
//! functions is `τ_t φ(u) = φ(u − t)`, so `⟨shift(μ,t), φ⟩ = ⟨μ, τ_t φ⟩`
//! holds with the exact same floating-point evaluations on both sides.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::testfn::{Closure, TestFunction};

/// One weighted atom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    /// Position on the line, in seconds.
    pub position: f64,
    /// Strictly positive mass.
    pub weight: f64,
}

/// A finite nonnegative atomic measure. Serializes as the flat record list
/// of its atoms; the cached total mass is rebuilt on deserialization.
#[derive(Debug, Clone, Default)]
pub struct PointMeasure {
    atoms: Vec<Atom>,
    total_weight: f64,
}

impl Serialize for PointMeasure {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.atoms.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for PointMeasure {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let atoms = Vec::<Atom>::deserialize(deserializer)?;
        PointMeasure::from_atoms(atoms.into_iter().map(|a| (a.position, a.weight)).collect())
            .map_err(serde::de::Error::custom)
    }
}

impl PointMeasure {
    pub fn empty() -> Self {
        Self::default()
    }

    /// A single unit atom.
    pub fn dirac(position: f64) -> Self {
        Self::from_atoms(vec![(position, 1.0)]).expect("unit weight is positive")
    }

    /// Builds a measure from `(position, weight)` pairs; weights must be
    /// strictly positive.
    pub fn from_atoms(pairs: Vec<(f64, f64)>) -> Result<Self> {
        let mut m = Self::empty();
        for (position, weight) in pairs {
            m.push_atom(position, weight)?;
        }
        Ok(m)
    }

    /// Appends an atom. Coincident atoms are kept as-is; only integration
    /// results are contractual.
    pub fn push_atom(&mut self, position: f64, weight: f64) -> Result<()> {
        if !(weight > 0.0) || !weight.is_finite() {
            return Err(CoreError::Precondition(format!(
                "atom weight must be strictly positive and finite, got {weight}"
            )));
        }
        if !position.is_finite() {
            return Err(CoreError::Precondition(format!(
                "atom position must be finite, got {position}"
            )));
        }
        self.atoms.push(Atom { position, weight });
        self.total_weight += weight;
        Ok(())
    }

    /// Non-mutating append.
    pub fn with_atom(&self, position: f64, weight: f64) -> Result<Self> {
        let mut next = self.clone();
        next.push_atom(position, weight)?;
        Ok(next)
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    /// Cached total mass; equals `integrate` against the constant one.
    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    /// `⟨μ, φ⟩ = Σ_i w_i φ(a_i)`. Empty measures integrate to zero.
    pub fn integrate(&self, phi: &TestFunction) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.weight * phi.eval(a.position))
            .sum()
    }

    /// `⟨μ, f⟩` for a raw closure, same atom order as [`integrate`].
    pub fn integrate_fn(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.atoms.iter().map(|a| a.weight * f(a.position)).sum()
    }

    /// Moves every atom left by `t`; weights are untouched.
    pub fn shift(&self, t: f64) -> Self {
        PointMeasure {
            atoms: self
                .atoms
                .iter()
                .map(|a| Atom {
                    position: a.position - t,
                    weight: a.weight,
                })
                .collect(),
            total_weight: self.total_weight,
        }
    }

    /// Total weight of atoms inside `(x, y)` with the given boundary flags.
    /// Infinite endpoints are allowed; requires `x < y`.
    pub fn range_count(&self, x: f64, y: f64, closure: Closure) -> Result<f64> {
        if !(x < y) {
            return Err(CoreError::Precondition(format!(
                "range_count requires x < y, got ({x}, {y})"
            )));
        }
        Ok(self
            .atoms
            .iter()
            .filter(|a| closure.contains(x, y, a.position))
            .map(|a| a.weight)
            .sum())
    }

    /// Congestion, service and workload read off the profile:
    /// `X = ⟨μ, 1_(0,∞)⟩`, `S = ⟨μ, 1_(−∞,0]⟩`, `W = ⟨μ, I·1_(0,∞)⟩`.
    pub fn performance_triple(&self) -> PerformanceTriple {
        let mut x = 0.0;
        let mut s = 0.0;
        let mut w = 0.0;
        for a in &self.atoms {
            if a.position > 0.0 {
                x += a.weight;
                w += a.weight * a.position;
            } else {
                s += a.weight;
            }
        }
        PerformanceTriple {
            congestion: x,
            service: s,
            workload: w,
        }
    }

    /// First moment of the positive part shifted by `t`:
    /// `∫_t^∞ (x − t) dμ(x)`.
    pub fn positive_excess(&self, t: f64) -> f64 {
        self.atoms
            .iter()
            .filter(|a| a.position > t)
            .map(|a| a.weight * (a.position - t))
            .sum()
    }

    /// Checks the cached-mass invariant to 1e-12 relative error.
    pub fn validate(&self) -> Result<()> {
        let fresh: f64 = self.atoms.iter().map(|a| a.weight).sum();
        let scale = fresh.abs().max(1.0);
        if (fresh - self.total_weight).abs() > 1e-12 * scale {
            return Err(CoreError::Precondition(format!(
                "cached total weight {} drifted from atom sum {}",
                self.total_weight, fresh
            )));
        }
        Ok(())
    }
}

/// Congestion/service/workload snapshot values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerformanceTriple {
    pub congestion: f64,
    pub service: f64,
    pub workload: f64,
}


#[cfg(test)]
mod serde_tests {
    use super::*;

    #[test]
    fn measures_serialize_as_flat_records() {
        let m = PointMeasure::from_atoms(vec![(1.5, 0.5), (-0.25, 2.0)]).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(
            json,
            r#"[{"position":1.5,"weight":0.5},{"position":-0.25,"weight":2.0}]"#
        );
        let back: PointMeasure = serde_json::from_str(&json).unwrap();
        assert_eq!(back.total_weight(), 2.5);
        back.validate().unwrap();
        // nonpositive weights are rejected on the way in
        assert!(serde_json::from_str::<PointMeasure>(r#"[{"position":0.0,"weight":0.0}]"#).is_err());
    }
}
