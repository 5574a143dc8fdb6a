//! Three-term CRF energy, its mean-field minimization and an exact oracle.

mod anatomical;
mod energy;
mod mean_field;
mod potentials;

pub use anatomical::{anatomical_message, soft_iou_loss, AnatomicalMessage, IOU_EPS};
pub use energy::{evaluate_energy, exact_marginals, EXACT_CAPACITY};
pub use mean_field::{
    free_energy, mean_field_refine, MeanFieldState, Refinement, SweepEnergy,
};
pub use potentials::{pairwise_kernel, pairwise_message, unary_potential, PairwiseKernel, P_FLOOR};

use crate::grid::Grid2D;
use crate::scalar::Scalar;

/// Additive per-pixel, per-label energy contributions (`K` channels).
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialField<S> {
    grid: Grid2D<S>,
}

impl<S: Scalar> PotentialField<S> {
    pub(crate) fn from_grid(grid: Grid2D<S>) -> Self {
        debug_assert!(grid.all_finite());
        Self { grid }
    }

    pub fn zeros(height: usize, width: usize, labels: usize) -> Self {
        Self {
            grid: Grid2D::zeros(height, width, labels),
        }
    }

    pub fn grid(&self) -> &Grid2D<S> {
        &self.grid
    }

    pub fn into_grid(self) -> Grid2D<S> {
        self.grid
    }

    pub(crate) fn data_mut(&mut self) -> &mut [S] {
        self.grid.data_mut()
    }
}
