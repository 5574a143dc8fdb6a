//! Unary potentials and the Gaussian pairwise kernel with its mean-field message.

use rayon::prelude::*;

use crate::config::EngineConfig;
use crate::error::{Error, Result};
use crate::grid::Grid2D;
use crate::maps::{FeatureMap, ProbMap};
use crate::matrix::CompatibilityMatrix;
use crate::scalar::Scalar;

use super::PotentialField;

/// Probability floor applied before taking logs.
pub const P_FLOOR: f64 = 1e-8;

/// `ψ_u(i, m) = −log(max(P_i(m), P_FLOOR))`.
pub fn unary_potential<S: Scalar>(p: &ProbMap<S>) -> PotentialField<S> {
    let floor = S::lit(P_FLOOR);
    PotentialField::from_grid(p.grid().map(|v| -(v.max(floor)).ln()))
}

/// Gaussian affinity between pixels `i` and `j` (linear indices).
///
/// Feature vectors are augmented with `(row, col) / kernel_radius` unless the
/// radius is 0, in which case only the features enter the distance.
pub fn pairwise_kernel<S: Scalar>(
    features: &FeatureMap<S>,
    i: usize,
    j: usize,
    sigma: S,
    kernel_radius: usize,
) -> S {
    let mut d2 = features
        .pixel(i)
        .iter()
        .zip(features.pixel(j))
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<S>();
    if kernel_radius > 0 {
        let w = features.width();
        let r = S::from_count(kernel_radius);
        let (ri, ci) = (S::from_count(i / w), S::from_count(i % w));
        let (rj, cj) = (S::from_count(j / w), S::from_count(j % w));
        d2 += ((ri - rj) * (ri - rj) + (ci - cj) * (ci - cj)) / (r * r);
    }
    (-d2 / (S::lit(2.0) * sigma * sigma)).exp()
}

/// Pairwise affinities of a feature map, precomputed over a Chebyshev window.
///
/// With radius 0 every pair of pixels interacts and affinities are evaluated
/// on demand.
#[derive(Debug, Clone)]
pub struct PairwiseKernel<S> {
    height: usize,
    width: usize,
    radius: usize,
    /// `(dr, dc)` window offsets, excluding `(0, 0)`.
    offsets: Vec<(isize, isize)>,
    /// `weights[i * offsets.len() + o]`, 0 where the neighbour falls outside.
    weights: Vec<S>,
    dense: Option<(FeatureMap<S>, S)>,
}

impl<S: Scalar> PairwiseKernel<S> {
    pub fn new(features: &FeatureMap<S>, sigma: S, radius: usize) -> Self {
        let (h, w) = (features.height(), features.width());
        if radius == 0 {
            return Self {
                height: h,
                width: w,
                radius,
                offsets: Vec::new(),
                weights: Vec::new(),
                dense: Some((features.clone(), sigma)),
            };
        }
        let r = radius as isize;
        let offsets: Vec<(isize, isize)> = (-r..=r)
            .flat_map(|dr| (-r..=r).map(move |dc| (dr, dc)))
            .filter(|&o| o != (0, 0))
            .collect();
        let n_off = offsets.len();
        let mut weights = vec![S::zero(); h * w * n_off];
        weights
            .par_chunks_mut(n_off)
            .enumerate()
            .for_each(|(i, row)| {
                let (ri, ci) = ((i / w) as isize, (i % w) as isize);
                for (o, &(dr, dc)) in offsets.iter().enumerate() {
                    let (rj, cj) = (ri + dr, ci + dc);
                    if rj >= 0 && cj >= 0 && (rj as usize) < h && (cj as usize) < w {
                        let j = rj as usize * w + cj as usize;
                        row[o] = pairwise_kernel(features, i, j, sigma, radius);
                    }
                }
            });
        Self {
            height: h,
            width: w,
            radius,
            offsets,
            weights,
            dense: None,
        }
    }

    pub fn from_config(features: &FeatureMap<S>, cfg: &EngineConfig) -> Self {
        Self::new(features, S::lit(cfg.sigma), cfg.kernel_radius)
    }

    #[inline]
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Calls `f(j, k(i, j))` for every interacting neighbour `j ≠ i`, in a fixed order.
    #[inline]
    pub fn for_each_neighbor(&self, i: usize, mut f: impl FnMut(usize, S)) {
        match &self.dense {
            Some((features, sigma)) => {
                for j in 0..self.pixels() {
                    if j != i {
                        f(j, pairwise_kernel(features, i, j, *sigma, 0));
                    }
                }
            }
            None => {
                let n_off = self.offsets.len();
                let w = self.width as isize;
                let row = &self.weights[i * n_off..(i + 1) * n_off];
                for (o, &(dr, dc)) in self.offsets.iter().enumerate() {
                    let k = row[o];
                    if k != S::zero() {
                        let j = (i as isize + dr * w + dc) as usize;
                        f(j, k);
                    }
                }
            }
        }
    }

    /// `Σ_{j≠i} k(i, j) · v_j` for per-pixel vectors `v` with `k` entries, into `out`.
    #[inline]
    pub(crate) fn accumulate(&self, i: usize, v: &[S], k: usize, out: &mut [S]) {
        out.iter_mut().for_each(|o| *o = S::zero());
        self.for_each_neighbor(i, |j, w| {
            for (o, &x) in out.iter_mut().zip(&v[j * k..(j + 1) * k]) {
                *o += w * x;
            }
        });
    }

    /// Mean-field pairwise message `λ Σ_j k(i,j) Σ_b μ[a][b] Q_j(b)`.
    pub fn message(
        &self,
        q: &ProbMap<S>,
        mu: &CompatibilityMatrix<S>,
        lambda: S,
    ) -> PotentialField<S> {
        let k = q.num_labels();
        let expected = compat_expectation(q.grid().data(), mu, k);
        let mut out = vec![S::zero(); q.pixels() * k];
        out.par_chunks_mut(k).enumerate().for_each(|(i, msg)| {
            self.accumulate(i, &expected, k, msg);
            msg.iter_mut().for_each(|m| *m *= lambda);
        });
        PotentialField::from_grid(
            Grid2D::new(q.height(), q.width(), k, out).expect("message matches map shape"),
        )
    }
}

/// `v_j(a) = Σ_b μ[a][b] Q_j(b)` for every pixel.
pub(crate) fn compat_expectation<S: Scalar>(q: &[S], mu: &CompatibilityMatrix<S>, k: usize) -> Vec<S> {
    let mut out = vec![S::zero(); q.len()];
    for (src, dst) in q.chunks_exact(k).zip(out.chunks_exact_mut(k)) {
        compat_pixel(src, mu, dst);
    }
    out
}

#[inline]
pub(crate) fn compat_pixel<S: Scalar>(q: &[S], mu: &CompatibilityMatrix<S>, out: &mut [S]) {
    for (a, o) in out.iter_mut().enumerate() {
        *o = q.iter().enumerate().map(|(b, &qb)| mu.get(a, b) * qb).sum();
    }
}

/// Pairwise mean-field message for the current marginals `q`.
pub fn pairwise_message<S: Scalar>(
    q: &ProbMap<S>,
    features: &FeatureMap<S>,
    mu: &CompatibilityMatrix<S>,
    cfg: &EngineConfig,
) -> Result<PotentialField<S>> {
    check_lattice(q, features, mu)?;
    let kernel = PairwiseKernel::from_config(features, cfg);
    Ok(kernel.message(q, mu, S::lit(cfg.lambda_f)))
}

pub(crate) fn check_lattice<S: Scalar>(
    q: &ProbMap<S>,
    features: &FeatureMap<S>,
    mu: &CompatibilityMatrix<S>,
) -> Result<()> {
    if !q.grid().same_lattice(features.grid()) {
        return Err(Error::Shape(format!(
            "probability map is {}x{}, features are {}x{}",
            q.height(),
            q.width(),
            features.height(),
            features.width()
        )));
    }
    if mu.size() != q.num_labels() {
        return Err(Error::Shape(format!(
            "compatibility is {0}x{0} for {1} labels",
            mu.size(),
            q.num_labels()
        )));
    }
    Ok(())
}
