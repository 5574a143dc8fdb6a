//! Pixel-wise uncertainty: predictive entropy plus structural violation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::EngineConfig;
use crate::crf::P_FLOOR;
use crate::error::{Error, Result};
use crate::graph::ConstraintMatrix;
use crate::grid::Grid2D;
use crate::maps::ProbMap;
use crate::matrix::LabelMatrix;
use crate::scalar::Scalar;

/// `M ≥ 1` probability maps sharing one lattice and label set.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticEnsemble<S> {
    maps: Vec<ProbMap<S>>,
}

impl<S: Scalar> StochasticEnsemble<S> {
    pub fn new(maps: Vec<ProbMap<S>>) -> Result<Self> {
        let first = maps
            .first()
            .ok_or_else(|| Error::Shape("ensemble needs at least one member".into()))?;
        for (m, map) in maps.iter().enumerate().skip(1) {
            if map.grid().shape() != first.grid().shape() {
                return Err(Error::Shape(format!(
                    "ensemble member {m} has shape {:?}, member 0 has {:?}",
                    map.grid().shape(),
                    first.grid().shape()
                )));
            }
        }
        Ok(Self { maps })
    }

    pub fn maps(&self) -> &[ProbMap<S>] {
        &self.maps
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn num_labels(&self) -> usize {
        self.maps[0].num_labels()
    }
}

/// Logit-noise perturbation of one map: `softmax(log max(P, floor) + ε)` with
/// `ε ~ N(0, scale²)` drawn pixel by pixel, label by label.
pub(crate) fn perturb<S: Scalar>(p: &ProbMap<S>, scale: f64, rng: &mut ChaCha8Rng) -> ProbMap<S> {
    if scale == 0.0 {
        return p.clone();
    }
    let normal = Normal::new(0.0, scale).expect("finite nonnegative scale");
    let floor = S::lit(P_FLOOR);
    let k = p.num_labels();
    let mut data = p.grid().data().to_vec();
    for px in data.chunks_exact_mut(k) {
        let mut hi = S::neg_infinity();
        for v in px.iter_mut() {
            *v = v.max(floor).ln() + S::lit(normal.sample(rng));
            hi = hi.max(*v);
        }
        let mut z = S::zero();
        for v in px.iter_mut() {
            *v = (*v - hi).exp();
            z += *v;
        }
        px.iter_mut().for_each(|v| *v /= z);
    }
    let grid = Grid2D::new(p.height(), p.width(), k, data).expect("same lattice");
    ProbMap::from_normalized(grid, p.labels().to_vec())
}

/// `cfg.mc_passes` logit-noise perturbations of `p`, deterministic in `seed`.
pub fn synthesize_ensemble<S: Scalar>(
    p: &ProbMap<S>,
    cfg: &EngineConfig,
    seed: u64,
) -> Result<StochasticEnsemble<S>> {
    if !(cfg.noise_scale >= 0.0 && cfg.noise_scale.is_finite()) {
        return Err(Error::config("noise_scale", "must be finite and >= 0"));
    }
    if cfg.mc_passes == 0 {
        return Err(Error::config("mc_passes", "must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let maps = (0..cfg.mc_passes)
        .map(|_| perturb(p, cfg.noise_scale, &mut rng))
        .collect();
    StochasticEnsemble::new(maps)
}

/// Entropy (natural log) of the across-member mean distribution, clamped to `[0, log K]`.
///
/// Member values are summed in sorted order, so the result does not depend on
/// the order of the ensemble.
pub fn predictive_entropy<S: Scalar>(ensemble: &StochasticEnsemble<S>) -> Grid2D<S> {
    let first = &ensemble.maps[0];
    let (h, w, k) = first.grid().shape();
    let m = S::from_count(ensemble.len());
    let max_h = S::from_count(k).ln();
    let data: Vec<S> = (0..h * w)
        .into_par_iter()
        .map(|p| {
            let mut vals = Vec::with_capacity(ensemble.len());
            let mut ent = S::zero();
            for c in 0..k {
                vals.clear();
                vals.extend(ensemble.maps.iter().map(|map| map.prob(p, c)));
                vals.sort_by(|a, b| a.partial_cmp(b).expect("finite probabilities"));
                let mean = vals.iter().copied().sum::<S>() / m;
                if mean > S::zero() {
                    ent -= mean * mean.ln();
                }
            }
            ent.max(S::zero()).min(max_h)
        })
        .collect();
    Grid2D::new(h, w, 1, data).expect("entropy lattice")
}

/// Frobenius norm of `target − realized` over the cells where `target > 0`.
pub fn violation_norm<S: Scalar>(target: &ConstraintMatrix, realized: &LabelMatrix<S>) -> Result<S> {
    let k = target.size();
    if realized.size() != k {
        return Err(Error::Shape(format!(
            "constraint matrix is {k}x{k}, realized scores are {0}x{0}",
            realized.size()
        )));
    }
    let mut sq = S::zero();
    for a in 0..k {
        for b in 0..k {
            let t = target.get(a, b);
            if t > 0.0 {
                let d = S::lit(t) - realized.get(a, b);
                sq += d * d;
            }
        }
    }
    Ok(sq.sqrt())
}

/// `U = H + λ_a · violation`, with both parts retained.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMap<S> {
    grid: Grid2D<S>,
    entropy_part: Grid2D<S>,
    violation_part: S,
    lambda_a: S,
}

/// JSON sidecar written next to an uncertainty tensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintySummary {
    pub entropy_max: f64,
    pub violation_part: f64,
    pub lambda_a: f64,
}

impl<S: Scalar> UncertaintyMap<S> {
    /// Adds the uniform violation offset to a single-channel entropy field.
    pub fn from_parts(entropy_part: Grid2D<S>, violation_part: S, lambda_a: S) -> Result<Self> {
        if entropy_part.channels() != 1 {
            return Err(Error::Shape("entropy field must have one channel".into()));
        }
        if !(violation_part >= S::zero()) || !(lambda_a >= S::zero()) {
            return Err(Error::Data(format!(
                "violation {violation_part} and lambda_a {lambda_a} must be >= 0"
            )));
        }
        let offset = lambda_a * violation_part;
        let grid = entropy_part.map(|h| h + offset);
        Ok(Self {
            grid,
            entropy_part,
            violation_part,
            lambda_a,
        })
    }

    pub fn grid(&self) -> &Grid2D<S> {
        &self.grid
    }

    pub fn entropy_part(&self) -> &Grid2D<S> {
        &self.entropy_part
    }

    pub fn violation_part(&self) -> S {
        self.violation_part
    }

    pub fn lambda_a(&self) -> S {
        self.lambda_a
    }

    pub fn summary(&self) -> UncertaintySummary {
        UncertaintySummary {
            entropy_max: self
                .entropy_part
                .data()
                .iter()
                .copied()
                .fold(S::zero(), S::max)
                .as_f64(),
            violation_part: self.violation_part.as_f64(),
            lambda_a: self.lambda_a.as_f64(),
        }
    }
}

/// Predictive entropy of `ensemble` plus `cfg.lambda_a` times the violation
/// of `target` by the realized relation scores.
pub fn uncertainty_map<S: Scalar>(
    ensemble: &StochasticEnsemble<S>,
    target: &ConstraintMatrix,
    realized: &LabelMatrix<S>,
    cfg: &EngineConfig,
) -> Result<UncertaintyMap<S>> {
    let v = violation_norm(target, realized)?;
    UncertaintyMap::from_parts(predictive_entropy(ensemble), v, S::lit(cfg.lambda_a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{AnatomyEdge, Relation};

    fn pm(h: usize, w: usize, k: usize, v: &[f64]) -> ProbMap<f64> {
        ProbMap::new(Grid2D::new(h, w, k, v.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn zero_noise_copies_p() {
        let p = pm(1, 2, 3, &[0.2, 0.3, 0.5, 0.0, 1.0, 0.0]);
        let cfg = EngineConfig {
            noise_scale: 0.0,
            ..Default::default()
        };
        let e = synthesize_ensemble(&p, &cfg, 3).unwrap();
        assert_eq!(e.len(), 8);
        assert!(e.maps().iter().all(|m| m == &p));
    }

    #[test]
    fn same_seed_same_ensemble() {
        let p = pm(2, 2, 2, &[0.3, 0.7, 0.5, 0.5, 0.9, 0.1, 0.6, 0.4]);
        let cfg = EngineConfig::default();
        assert_eq!(synthesize_ensemble(&p, &cfg, 9).unwrap(), synthesize_ensemble(&p, &cfg, 9).unwrap());
        assert_ne!(synthesize_ensemble(&p, &cfg, 9).unwrap(), synthesize_ensemble(&p, &cfg, 10).unwrap());
    }

    #[test]
    fn entropy_closed_forms() {
        let one_hot = pm(1, 1, 3, &[0.0, 1.0, 0.0]);
        let e = StochasticEnsemble::new(vec![one_hot.clone(), one_hot]).unwrap();
        assert_eq!(predictive_entropy(&e).data()[0], 0.0);

        let uniform = pm(1, 1, 4, &[0.25; 4]);
        let h = predictive_entropy(&StochasticEnsemble::new(vec![uniform]).unwrap()).data()[0];
        assert!((h - 4f64.ln()).abs() < 1e-15);

        let a = pm(1, 1, 2, &[1.0, 0.0]);
        let b = pm(1, 1, 2, &[0.0, 1.0]);
        let h = predictive_entropy(&StochasticEnsemble::new(vec![a, b]).unwrap()).data()[0];
        assert!((h - std::f64::consts::LN_2).abs() < 1e-15);
    }

    fn target(edges: &[(usize, usize)]) -> ConstraintMatrix {
        let edges: Vec<AnatomyEdge> = edges
            .iter()
            .map(|&(s, t)| AnatomyEdge {
                source: s,
                target: t,
                relation: Relation::LeftOf,
                weight: 1.0,
                margin: 0.0,
            })
            .collect();
        ConstraintMatrix::from_edges(3, &edges)
    }

    #[test]
    fn violation_closed_forms() {
        let t = target(&[(1, 2)]);
        let mut r = LabelMatrix::<f64>::zeros(3);
        r.set(1, 2, 1.0);
        assert_eq!(violation_norm(&t, &r).unwrap(), 0.0);
        r.set(1, 2, 0.6);
        assert!((violation_norm(&t, &r).unwrap() - 0.4).abs() < 1e-15);
        // cells without an edge are ignored
        r.set(2, 1, 0.9);
        assert!((violation_norm(&t, &r).unwrap() - 0.4).abs() < 1e-15);

        let t = target(&[(1, 2), (2, 1)]);
        let mut r = LabelMatrix::<f64>::zeros(3);
        r.set(1, 2, 0.8);
        r.set(2, 1, 0.5);
        assert!((violation_norm(&t, &r).unwrap() - 0.29f64.sqrt()).abs() < 1e-15);
        assert!(violation_norm(&t, &LabelMatrix::<f64>::zeros(2)).is_err());
    }

    #[test]
    fn uniform_offset() {
        let z = pm(1, 3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0]);
        let e = StochasticEnsemble::new(vec![z]).unwrap();
        let t = target(&[(1, 2)]);
        let mut r = LabelMatrix::<f64>::zeros(3);
        r.set(1, 2, 0.6);
        let cfg = EngineConfig::default();
        let u = uncertainty_map(&e, &t, &r, &cfg).unwrap();
        for &v in u.grid().data() {
            assert!((v - 0.12).abs() < 1e-15);
        }
        let s = u.summary();
        assert_eq!(s.lambda_a, 0.3);
        assert!((s.violation_part - 0.4).abs() < 1e-15);
    }
}
