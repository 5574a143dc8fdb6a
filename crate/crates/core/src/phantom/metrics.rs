//! Overlap scores and hard relation checks on label maps.

use crate::error::{Error, Result};
use crate::graph::{rasterize_relation, AffineTransform, AnatomyEdge};
use crate::maps::{LabelMap, ProbMap};

/// `2|A ∩ B| / (|A| + |B|)` for one label; 1 when both regions are empty.
///
/// Panics if the maps do not share a lattice.
pub fn dice(a: &LabelMap, b: &LabelMap, label: usize) -> f64 {
    assert_eq!(
        (a.height(), a.width()),
        (b.height(), b.width()),
        "dice needs label maps on one lattice"
    );
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.labels().iter().zip(b.labels()) {
        let (ia, ib) = (x == label, y == label);
        na += ia as usize;
        nb += ib as usize;
        inter += (ia && ib) as usize;
    }
    if na + nb == 0 {
        return 1.0;
    }
    2.0 * inter as f64 / (na + nb) as f64
}

/// Mean Dice over the foreground labels `1..K` of `truth`.
pub fn mean_foreground_dice(pred: &LabelMap, truth: &LabelMap) -> f64 {
    let k = truth.num_labels().max(pred.num_labels());
    if k < 2 {
        return 1.0;
    }
    (1..k).map(|l| dice(pred, truth, l)).sum::<f64>() / (k - 1) as f64
}

/// Whether every pixel of `edge.source` in `labels` lies where the relation
/// field, conditioned on the hard region of `edge.target`, is fully 1.
/// An absent target fails the check.
pub fn relation_holds(edge: &AnatomyEdge, labels: &LabelMap, to_atlas: &AffineTransform<f64>) -> Result<bool> {
    let onehot = ProbMap::<f64>::one_hot(labels);
    let field = match rasterize_relation(edge, &onehot, to_atlas) {
        Ok(f) => f,
        Err(Error::EmptyConditioning { .. }) => return Ok(false),
        Err(e) => return Err(e),
    };
    Ok(labels
        .labels()
        .iter()
        .zip(field.data())
        .all(|(&l, &a)| l != edge.source || a >= 1.0 - 1e-9))
}

/// Pixels where the relation field conditioned on `reference` is below 1/2:
/// the region `edge.source` should stay out of.
pub fn forbidden_zone(edge: &AnatomyEdge, reference: &LabelMap, to_atlas: &AffineTransform<f64>) -> Result<Vec<bool>> {
    let onehot = ProbMap::<f64>::one_hot(reference);
    let field = rasterize_relation(edge, &onehot, to_atlas)?;
    Ok(field.data().iter().map(|&a| a < 0.5).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid2D;

    fn lm(w: usize, v: Vec<usize>, k: usize) -> LabelMap {
        LabelMap::new(Grid2D::new(v.len() / w, w, 1, v).unwrap(), k).unwrap()
    }

    #[test]
    fn dice_closed_forms() {
        let a = lm(4, vec![0, 1, 1, 0, 0, 1, 1, 0], 2);
        assert_eq!(dice(&a, &a, 1), 1.0);
        let b = lm(4, vec![1, 0, 0, 1, 1, 0, 0, 1], 2);
        assert_eq!(dice(&a, &b, 1), 0.0);
        let empty = lm(4, vec![0; 8], 2);
        assert_eq!(dice(&empty, &empty, 1), 1.0);
        // |A| = |B| = 100, overlap 50
        let a = lm(20, (0..200).map(|p| (p < 100) as usize).collect(), 2);
        let b = lm(20, (0..200).map(|p| (50..150).contains(&p) as usize).collect(), 2);
        assert_eq!(dice(&a, &b, 1), 0.5);
        assert_eq!(dice(&a, &b, 1), dice(&b, &a, 1));
    }
}
