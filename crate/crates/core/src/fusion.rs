//! Uncertainty-weighted fusion of multi-level per-pixel tensors.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::Grid2D;
use crate::maps::ProbMap;
use crate::scalar::Scalar;

/// Bilinear, corner-aligned resampling; a clone when the lattice already matches.
pub fn resample_to<S: Scalar>(grid: &Grid2D<S>, target_h: usize, target_w: usize) -> Grid2D<S> {
    assert!(target_h >= 1 && target_w >= 1, "target lattice must be nonempty");
    let (h, w, c) = grid.shape();
    if (h, w) == (target_h, target_w) {
        return grid.clone();
    }
    // source coordinate of target index t along an axis of length n → m
    let coord = |t: usize, n: usize, m: usize| -> (usize, usize, S) {
        if m == 1 || n == 1 {
            return (0, 0, S::zero());
        }
        let x = S::from_count(t) * S::from_count(n - 1) / S::from_count(m - 1);
        let x0 = x.floor().to_usize().unwrap_or(0).min(n - 1);
        let x1 = (x0 + 1).min(n - 1);
        (x0, x1, x - S::from_count(x0))
    };
    Grid2D::from_fn(target_h, target_w, c, |r, col, ch| {
        let (r0, r1, fr) = coord(r, h, target_h);
        let (c0, c1, fc) = coord(col, w, target_w);
        let top = grid.get(r0, c0, ch) * (S::one() - fc) + grid.get(r0, c1, ch) * fc;
        let bot = grid.get(r1, c0, ch) * (S::one() - fc) + grid.get(r1, c1, ch) * fc;
        top * (S::one() - fr) + bot * fr
    })
}

fn check_beta<S: Scalar>(beta: S) -> Result<()> {
    if !(beta > S::zero()) || !beta.is_finite() {
        return Err(Error::config("beta", format!("must be finite and > 0, got {beta}")));
    }
    Ok(())
}

/// Per-pixel `α_l = softmax_l(−β·U_l)`, shifted by the per-pixel minimum of `U`.
pub fn fusion_weights<S: Scalar>(uncertainties: &[Grid2D<S>], beta: S) -> Result<Vec<Grid2D<S>>> {
    check_beta(beta)?;
    let first = uncertainties
        .first()
        .ok_or_else(|| Error::Shape("fusion needs at least one level".into()))?;
    for (l, u) in uncertainties.iter().enumerate() {
        if u.channels() != 1 || !u.same_lattice(first) {
            return Err(Error::Shape(format!(
                "uncertainty {l} has shape {:?}, expected ({}, {}, 1)",
                u.shape(),
                first.height(),
                first.width()
            )));
        }
    }
    let n_levels = uncertainties.len();
    let (h, w) = (first.height(), first.width());
    let per_pixel: Vec<Vec<S>> = (0..h * w)
        .into_par_iter()
        .map(|p| {
            let lo = uncertainties
                .iter()
                .map(|u| u.data()[p])
                .fold(S::infinity(), S::min);
            let mut e: Vec<S> = uncertainties
                .iter()
                .map(|u| (-beta * (u.data()[p] - lo)).exp())
                .collect();
            let z: S = e.iter().copied().sum();
            e.iter_mut().for_each(|v| *v /= z);
            e
        })
        .collect();
    Ok((0..n_levels)
        .map(|l| {
            Grid2D::new(h, w, 1, per_pixel.iter().map(|a| a[l]).collect())
                .expect("weight lattice")
        })
        .collect())
}

/// `L` same-channel tensors with `L` (or one shared) uncertainty fields, all on
/// the lattice of the first level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelStack<S> {
    levels: Vec<Grid2D<S>>,
    uncertainties: Vec<Grid2D<S>>,
}

impl<S: Scalar> LevelStack<S> {
    /// Resamples every level and uncertainty field onto the first level's lattice.
    /// A single uncertainty field is shared by all levels.
    pub fn new(levels: Vec<Grid2D<S>>, uncertainties: Vec<Grid2D<S>>) -> Result<Self> {
        let first = levels
            .first()
            .ok_or_else(|| Error::Shape("fusion needs at least one level".into()))?;
        let (h, w, c) = first.shape();
        for (l, g) in levels.iter().enumerate() {
            if g.channels() != c {
                return Err(Error::Shape(format!(
                    "level {l} has {} channels, level 0 has {c}",
                    g.channels()
                )));
            }
        }
        if uncertainties.len() != 1 && uncertainties.len() != levels.len() {
            return Err(Error::Shape(format!(
                "{} uncertainty maps for {} levels; expected 1 or {}",
                uncertainties.len(),
                levels.len(),
                levels.len()
            )));
        }
        for (l, u) in uncertainties.iter().enumerate() {
            if u.channels() != 1 {
                return Err(Error::Shape(format!(
                    "uncertainty {l} has {} channels, expected 1",
                    u.channels()
                )));
            }
        }
        let levels: Vec<Grid2D<S>> = levels.iter().map(|g| resample_to(g, h, w)).collect();
        let mut uncertainties: Vec<Grid2D<S>> =
            uncertainties.iter().map(|u| resample_to(u, h, w)).collect();
        if uncertainties.len() == 1 && levels.len() > 1 {
            uncertainties = vec![uncertainties[0].clone(); levels.len()];
        }
        Ok(Self {
            levels,
            uncertainties,
        })
    }

    pub fn levels(&self) -> &[Grid2D<S>] {
        &self.levels
    }

    pub fn uncertainties(&self) -> &[Grid2D<S>] {
        &self.uncertainties
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

/// Fused tensor and the per-level weights that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Fused<S> {
    pub tensor: Grid2D<S>,
    pub weights: Vec<Grid2D<S>>,
}

impl<S: Scalar> Fused<S> {
    /// Weights as one `H × W × L` tensor.
    pub fn weight_stack(&self) -> Grid2D<S> {
        Grid2D::stack(&self.weights).expect("weights share a lattice")
    }
}

/// Per-pixel convex combination `Σ_l α_l · F_l`.
pub fn fuse<S: Scalar>(stack: &LevelStack<S>, beta: S) -> Result<Fused<S>> {
    let weights = fusion_weights(&stack.uncertainties, beta)?;
    let (h, w, c) = stack.levels[0].shape();
    let mut data = vec![S::zero(); h * w * c];
    data.par_chunks_mut(c).enumerate().for_each(|(p, out)| {
        for (level, wgt) in stack.levels.iter().zip(&weights) {
            let a = wgt.data()[p];
            for (o, &v) in out.iter_mut().zip(level.pixel(p)) {
                *o += a * v;
            }
        }
    });
    Ok(Fused {
        tensor: Grid2D::new(h, w, c, data)?,
        weights,
    })
}

/// Fuses probability maps and re-normalizes the result into a [`ProbMap`].
pub fn fuse_probs<S: Scalar>(
    levels: &[ProbMap<S>],
    uncertainties: Vec<Grid2D<S>>,
    beta: S,
) -> Result<(ProbMap<S>, Vec<Grid2D<S>>)> {
    let stack = LevelStack::new(levels.iter().map(|p| p.grid().clone()).collect(), uncertainties)?;
    let fused = fuse(&stack, beta)?;
    let mut out = ProbMap::from_weights(fused.tensor)?;
    out.set_labels(levels[0].labels().to_vec())?;
    Ok((out, fused.weights))
}
