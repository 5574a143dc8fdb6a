//! Soft-IoU anatomical penalty and its per-pixel mean-field message.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{rasterize_relation, AffineTransform, KnowledgeGraph};
use crate::grid::Grid2D;
use crate::maps::ProbMap;
use crate::matrix::LabelMatrix;
use crate::scalar::Scalar;

use super::PotentialField;

/// Stabilizer added to the soft union.
pub const IOU_EPS: f64 = 1e-8;

/// `(Σ r·a, Σ (r + a − r·a) + IOU_EPS)`.
fn iou_parts<S: Scalar>(region: impl Iterator<Item = S>, expected: &[S]) -> (S, S) {
    let (inter, union) = region
        .zip(expected)
        .fold((S::zero(), S::zero()), |(i, u), (r, &a)| {
            (i + r * a, u + r + a - r * a)
        });
    (inter, union + S::lit(IOU_EPS))
}

/// `1 − Σ(r·a) / (Σ(r + a − r·a) + 1e−8)`.
pub fn soft_iou_loss<S: Scalar>(region: &Grid2D<S>, expected: &Grid2D<S>) -> Result<S> {
    if region.shape() != expected.shape() || region.channels() != 1 {
        return Err(Error::Shape(format!(
            "soft IoU needs two single-channel fields on one lattice, got {:?} and {:?}",
            region.shape(),
            expected.shape()
        )));
    }
    let (i, u) = iou_parts(region.data().iter().copied(), expected.data());
    Ok(S::one() - i / u)
}

/// Anatomical field plus the realized relation-satisfaction scores.
#[derive(Debug, Clone)]
pub struct AnatomicalMessage<S> {
    /// `msg(i, o1) = Σ_edges w · ∂L/∂Q_i(o1)`.
    pub field: PotentialField<S>,
    /// `scores[o1][o2]` = soft IoU of `Q(o1)` against `A(o1 | o2)`; 0 for inactive pairs.
    pub scores: LabelMatrix<S>,
    /// Edges skipped because the conditioning organ had no mass.
    pub inactive: Vec<(usize, usize)>,
}

/// Gradient message of `Σ_edges w · L_IoU(Q(o1), A(o1 | o2))` with each `A`
/// rasterized from `q` and held fixed.
///
/// With `I = Σ R·A` and `U = Σ(R + A − R·A) + ε`,
/// `∂L/∂R_i = −(A_i·U − I·(1 − A_i)) / U²`.
pub fn anatomical_message<S: Scalar>(
    q: &ProbMap<S>,
    graph: &KnowledgeGraph,
    transform: &AffineTransform<S>,
) -> Result<AnatomicalMessage<S>> {
    let k = q.num_labels();
    graph.check_labels(k)?;
    let (h, w) = (q.height(), q.width());
    let mut field = PotentialField::zeros(h, w, k);
    let mut scores = LabelMatrix::zeros(k);
    let mut inactive = Vec::new();

    for edge in graph.edges() {
        let (o1, o2) = (edge.source, edge.target);
        let expected = match rasterize_relation(edge, q, transform) {
            Ok(a) => a,
            Err(Error::EmptyConditioning { .. }) => {
                inactive.push((o1, o2));
                continue;
            }
            Err(e) => return Err(e),
        };
        let a = expected.data();
        let region = q.grid().data().iter().skip(o1).step_by(k).copied();
        let (inter, union) = iou_parts(region, a);
        scores.set(o1, o2, inter / union);

        let wgt = S::lit(edge.weight);
        if wgt == S::zero() {
            continue;
        }
        let u2 = union * union;
        field
            .data_mut()
            .par_chunks_mut(k)
            .zip(a.par_iter())
            .for_each(|(msg, &ai)| {
                let grad = -(ai * union - inter * (S::one() - ai)) / u2;
                msg[o1] += wgt * grad;
            });
    }
    Ok(AnatomicalMessage {
        field,
        scores,
        inactive,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{AnatomyEdge, AnatomyNode, Relation};

    fn field(h: usize, w: usize, v: &[f64]) -> Grid2D<f64> {
        Grid2D::new(h, w, 1, v.to_vec()).unwrap()
    }

    #[test]
    fn loss_closed_forms() {
        let r = field(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!(soft_iou_loss(&r, &r).unwrap() < 1e-8);
        let a = field(1, 4, &[1.0, 1.0, 0.0, 0.0]);
        let b = field(1, 4, &[0.0, 0.0, 1.0, 1.0]);
        assert_eq!(soft_iou_loss(&a, &b).unwrap(), 1.0);
        let half = Grid2D::filled(5, 5, 1, 0.5f64);
        let ones = Grid2D::filled(5, 5, 1, 1.0);
        // 1 − 12.5 / (25 + 1e-8)
        let want: f64 = 1.0 - 12.5 / (25.0 + 1e-8);
        assert!((soft_iou_loss(&half, &ones).unwrap() - want).abs() < 1e-15);
        assert!((want - 0.5).abs() < 1e-9);
    }

    #[test]
    fn loss_rejects_mismatch() {
        assert!(soft_iou_loss(&Grid2D::filled(2, 2, 1, 0.0), &Grid2D::filled(2, 3, 1, 0.0)).is_err());
    }

    fn lr_graph() -> KnowledgeGraph {
        let node = |id: usize| AnatomyNode {
            id,
            name: format!("o{id}"),
            features: vec![],
        };
        KnowledgeGraph::new(
            vec![node(1), node(2)],
            vec![AnatomyEdge {
                source: 1,
                target: 2,
                relation: Relation::LeftOf,
                weight: 1.0,
                margin: 0.0,
            }],
            vec![],
        )
        .unwrap()
    }

    fn hard(labels: &[usize], h: usize, w: usize) -> ProbMap<f64> {
        let grid = Grid2D::from_fn(h, w, 3, |r, c, ch| if labels[r * w + c] == ch { 1.0 } else { 0.0 });
        ProbMap::new(grid).unwrap()
    }

    #[test]
    fn empty_graph_gives_zeros() {
        let q = hard(&[0, 1, 2, 0], 2, 2);
        let m = anatomical_message(&q, &KnowledgeGraph::empty(), &AffineTransform::identity()).unwrap();
        assert!(m.field.grid().data().iter().all(|&v| v == 0.0));
        assert!(m.scores.rows().iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn satisfied_relation_scores_one() {
        // organ 2 fills the last column, organ 1 the whole allowed half-plane
        let labels: Vec<usize> = (0..64).map(|p| if p % 8 == 7 { 2 } else { 1 }).collect();
        let q = hard(&labels, 8, 8);
        let m = anatomical_message(&q, &lr_graph(), &AffineTransform::identity()).unwrap();
        assert!((m.scores.get(1, 2) - 1.0).abs() < 1e-9);
        // saturated optimum: −1/U where o1 already holds all mass, I/U² where it holds none
        let u = 56.0 + IOU_EPS;
        for p in 0..64 {
            let want = if p % 8 == 7 { 56.0 / (u * u) } else { -1.0 / u };
            assert!((m.field.grid().pixel(p)[1] - want).abs() < 1e-12);
            assert_eq!(m.field.grid().pixel(p)[2], 0.0);
        }
    }

    #[test]
    fn violating_pixel_receives_positive_message() {
        let mut labels: Vec<usize> = (0..64).map(|p| if p % 8 >= 4 { 2 } else if p % 8 < 2 { 1 } else { 0 }).collect();
        labels[6 * 8 + 6] = 1;
        let q = hard(&labels, 8, 8);
        let m = anatomical_message(&q, &lr_graph(), &AffineTransform::identity()).unwrap();
        assert!(m.field.grid().pixel(6 * 8 + 6)[1] > 0.0);
        assert!(m.field.grid().pixel(0)[1] < 0.0);
    }

    #[test]
    fn absent_conditioning_is_inactive() {
        let labels = vec![1usize; 16];
        let q = hard(&labels, 4, 4);
        let m = anatomical_message(&q, &lr_graph(), &AffineTransform::identity()).unwrap();
        assert_eq!(m.inactive, vec![(1, 2)]);
        assert_eq!(m.scores.get(1, 2), 0.0);
        assert!(m.field.grid().data().iter().all(|&v| v == 0.0));
    }
}
