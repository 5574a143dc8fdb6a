//! Validated per-pixel maps: categorical distributions, features, hard labels.

use crate::error::{Error, Result};
use crate::grid::Grid2D;
use crate::scalar::Scalar;

/// Tolerance on per-pixel probability sums accepted at construction.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

/// Per-pixel categorical distribution over `K` labels.
///
/// Label 0 is background. Every instance is normalized: channel sums are 1 up
/// to rounding of the final division.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap<S> {
    grid: Grid2D<S>,
    labels: Vec<String>,
}

fn default_labels(k: usize) -> Vec<String> {
    (0..k)
        .map(|i| {
            if i == 0 {
                "background".to_string()
            } else {
                format!("label_{i}")
            }
        })
        .collect()
}

impl<S: Scalar> ProbMap<S> {
    /// Validates a probability tensor and re-normalizes each pixel.
    ///
    /// Values must lie in `[0, 1]` (up to the sum tolerance) and each pixel must
    /// sum to 1 within [`PROB_SUM_TOLERANCE`].
    pub fn new(grid: Grid2D<S>) -> Result<Self> {
        let k = grid.channels();
        Self::with_labels(grid, default_labels(k))
    }

    pub fn with_labels(mut grid: Grid2D<S>, labels: Vec<String>) -> Result<Self> {
        check_labels(grid.channels(), &labels)?;
        let tol = S::lit(PROB_SUM_TOLERANCE);
        let k = grid.channels();
        for p in 0..grid.pixels() {
            let px = grid.pixel_mut(p);
            let mut sum = S::zero();
            for (ch, v) in px.iter_mut().enumerate() {
                if !v.is_finite() || *v < -tol || *v > S::one() + tol {
                    return Err(Error::Data(format!(
                        "probability {v} at pixel {p} channel {ch} outside [0, 1]"
                    )));
                }
                *v = v.max(S::zero());
                sum += *v;
            }
            if (sum - S::one()).abs() > tol {
                return Err(Error::Data(format!(
                    "probabilities at pixel {p} sum to {sum}, expected 1 ± {PROB_SUM_TOLERANCE}"
                )));
            }
            px.iter_mut().for_each(|v| *v /= sum);
            debug_assert_eq!(px.len(), k);
        }
        Ok(Self { grid, labels })
    }

    /// Normalizes nonnegative per-pixel weights into distributions.
    ///
    /// Rejects negative or non-finite weights and pixels whose weights sum to zero.
    pub fn from_weights(mut grid: Grid2D<S>) -> Result<Self> {
        let labels = default_labels(grid.channels());
        for p in 0..grid.pixels() {
            let px = grid.pixel_mut(p);
            let mut sum = S::zero();
            for v in px.iter() {
                if !v.is_finite() || *v < S::zero() {
                    return Err(Error::Data(format!("invalid weight {v} at pixel {p}")));
                }
                sum += *v;
            }
            if sum <= S::zero() {
                return Err(Error::Data(format!("weights at pixel {p} sum to zero")));
            }
            px.iter_mut().for_each(|v| *v /= sum);
        }
        Ok(Self { grid, labels })
    }

    /// A map assigning probability 1 to each pixel's label.
    pub fn one_hot(labels: &LabelMap) -> Self {
        let k = labels.num_labels();
        let grid = Grid2D::from_fn(labels.height(), labels.width(), k, |r, c, ch| {
            if labels.get(r, c) == ch {
                S::one()
            } else {
                S::zero()
            }
        });
        Self {
            grid,
            labels: default_labels(k),
        }
    }

    /// Wraps a grid already known to be normalized, skipping validation.
    pub(crate) fn from_normalized(grid: Grid2D<S>, labels: Vec<String>) -> Self {
        debug_assert_eq!(grid.channels(), labels.len());
        Self { grid, labels }
    }

    #[inline]
    pub fn grid(&self) -> &Grid2D<S> {
        &self.grid
    }

    pub fn into_grid(self) -> Grid2D<S> {
        self.grid
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Replaces label names; the count must match `K`.
    pub fn set_labels(&mut self, labels: Vec<String>) -> Result<()> {
        check_labels(self.grid.channels(), &labels)?;
        self.labels = labels;
        Ok(())
    }

    #[inline]
    pub fn num_labels(&self) -> usize {
        self.grid.channels()
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.grid.height()
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.grid.width()
    }

    #[inline]
    pub fn pixels(&self) -> usize {
        self.grid.pixels()
    }

    #[inline]
    pub fn pixel(&self, p: usize) -> &[S] {
        self.grid.pixel(p)
    }

    #[inline]
    pub fn prob(&self, p: usize, label: usize) -> S {
        self.grid.data()[p * self.grid.channels() + label]
    }

    /// Most probable label per pixel; ties resolve to the lowest index.
    pub fn argmax(&self) -> LabelMap {
        let k = self.num_labels();
        let data = (0..self.pixels())
            .map(|p| argmax(self.pixel(p)))
            .collect::<Vec<_>>();
        LabelMap::new(
            Grid2D::new(self.height(), self.width(), 1, data).expect("same lattice"),
            k,
        )
        .expect("argmax within label range")
    }

    /// Total probability mass of one label.
    pub fn mass(&self, label: usize) -> S {
        (0..self.pixels()).map(|p| self.prob(p, label)).sum()
    }

    /// Reorders label channels: output channel `perm[c]` receives input channel `c`.
    pub fn permute_labels(&self, perm: &[usize]) -> Self {
        let k = self.num_labels();
        assert_eq!(perm.len(), k);
        let mut out = self.grid.clone();
        for p in 0..self.pixels() {
            let src = self.pixel(p);
            let dst = out.pixel_mut(p);
            for c in 0..k {
                dst[perm[c]] = src[c];
            }
        }
        let mut labels = self.labels.clone();
        for c in 0..k {
            labels[perm[c]] = self.labels[c].clone();
        }
        Self { grid: out, labels }
    }

    pub fn cast<U: Scalar>(&self) -> ProbMap<U> {
        ProbMap::from_weights(self.grid.cast()).map(|mut m| {
            m.labels = self.labels.clone();
            m
        })
        .expect("cast of valid map stays valid")
    }
}

fn check_labels(k: usize, labels: &[String]) -> Result<()> {
    if k < 1 {
        return Err(Error::Shape("probability map needs at least one label".into()));
    }
    if labels.len() != k {
        return Err(Error::Shape(format!(
            "{} label names for {k} channels",
            labels.len()
        )));
    }
    Ok(())
}

pub(crate) fn argmax<S: Scalar>(v: &[S]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Per-pixel `D`-dimensional feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<S> {
    grid: Grid2D<S>,
}

impl<S: Scalar> FeatureMap<S> {
    pub fn new(grid: Grid2D<S>) -> Result<Self> {
        if let Some(i) = grid.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite feature at flat index {i}"
            )));
        }
        Ok(Self { grid })
    }

    #[inline]
    pub fn grid(&self) -> &Grid2D<S> {
        &self.grid
    }

    pub fn into_grid(self) -> Grid2D<S> {
        self.grid
    }

    #[inline]
    pub fn dims(&self) -> usize {
        self.grid.channels()
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.grid.height()
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.grid.width()
    }

    #[inline]
    pub fn pixel(&self, p: usize) -> &[S] {
        self.grid.pixel(p)
    }

    pub fn cast<U: Scalar>(&self) -> FeatureMap<U> {
        FeatureMap {
            grid: self.grid.cast(),
        }
    }
}

/// Hard segmentation: one label index per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    grid: Grid2D<usize>,
    num_labels: usize,
}

impl LabelMap {
    pub fn new(grid: Grid2D<usize>, num_labels: usize) -> Result<Self> {
        if grid.channels() != 1 {
            return Err(Error::Shape(format!(
                "label map must have one channel, got {}",
                grid.channels()
            )));
        }
        if let Some(bad) = grid.data().iter().find(|&&l| l >= num_labels) {
            return Err(Error::Data(format!(
                "label {bad} outside [0, {}]",
                num_labels.saturating_sub(1)
            )));
        }
        Ok(Self { grid, num_labels })
    }

    /// Label map whose label count is one past the largest label present.
    pub fn from_grid(grid: Grid2D<usize>) -> Result<Self> {
        let k = grid.data().iter().copied().max().unwrap_or(0) + 1;
        Self::new(grid, k)
    }

    #[inline]
    pub fn grid(&self) -> &Grid2D<usize> {
        &self.grid
    }

    #[inline]
    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    /// Same labels, reinterpreted with a larger label count.
    pub fn with_num_labels(&self, k: usize) -> Result<Self> {
        Self::new(self.grid.clone(), k)
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.grid.height()
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.grid.width()
    }

    #[inline]
    pub fn pixels(&self) -> usize {
        self.grid.pixels()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> usize {
        self.grid.get(row, col, 0)
    }

    #[inline]
    pub fn label(&self, p: usize) -> usize {
        self.grid.data()[p]
    }

    pub fn labels(&self) -> &[usize] {
        self.grid.data()
    }

    pub fn count(&self, label: usize) -> usize {
        self.labels().iter().filter(|&&l| l == label).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renormalizes_within_tolerance() {
        let g = Grid2D::new(1, 2, 2, vec![0.6, 0.4000004, 0.3, 0.7]).unwrap();
        let p = ProbMap::<f64>::new(g).unwrap();
        let s: f64 = p.pixel(0).iter().sum();
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_sums_and_ranges() {
        let g = Grid2D::new(1, 1, 2, vec![0.6, 0.5]).unwrap();
        assert!(matches!(ProbMap::<f64>::new(g), Err(Error::Data(_))));
        let g = Grid2D::new(1, 1, 2, vec![1.5, -0.5]).unwrap();
        assert!(matches!(ProbMap::<f64>::new(g), Err(Error::Data(_))));
        let g = Grid2D::new(1, 1, 2, vec![f64::NAN, 1.0]).unwrap();
        assert!(ProbMap::<f64>::new(g).is_err());
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        let g = Grid2D::new(1, 2, 3, vec![0.4, 0.4, 0.2, 0.1, 0.2, 0.7]).unwrap();
        let p = ProbMap::<f64>::new(g).unwrap();
        assert_eq!(p.argmax().labels(), &[0, 2]);
    }

    #[test]
    fn label_map_range_checked() {
        let g = Grid2D::new(1, 2, 1, vec![0usize, 3]).unwrap();
        assert!(LabelMap::new(g.clone(), 3).is_err());
        assert_eq!(LabelMap::from_grid(g).unwrap().num_labels(), 4);
    }

    #[test]
    fn features_must_be_finite() {
        let g = Grid2D::new(1, 1, 2, vec![1.0, f64::INFINITY]).unwrap();
        assert!(FeatureMap::new(g).is_err());
    }

    #[test]
    fn permutation_moves_channels() {
        let g = Grid2D::new(1, 1, 3, vec![0.2, 0.3, 0.5]).unwrap();
        let p = ProbMap::<f64>::new(g).unwrap();
        let q = p.permute_labels(&[2, 0, 1]);
        assert_eq!(q.pixel(0), &[0.3, 0.5, 0.2]);
    }
}
