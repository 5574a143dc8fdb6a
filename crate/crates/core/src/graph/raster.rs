//! Rasterization of expected spatial regions `A(o1 | o2)`.
//!
//! The conditioning organ `o2` is summarized from its majority membership
//! `clamp(2·Q(o2) − 1, 0, 1)`, which discards the diffuse low-probability mass
//! every softmax output spreads over the whole image:
//!
//! * directional relations (`left_of`, `right_of`, `above`, `below`) use the
//!   soft bounding box `centroid ± √3·σ` of the membership, computed in atlas
//!   coordinates (exact edges for a uniform box), and a half-plane bounded by
//!   that box edge plus the edge margin;
//! * `adjacent_to`, `inside` and `disjoint_from` use the support of the
//!   membership and exact Euclidean distances on the image lattice, with the
//!   margin converted from atlas units through the transform's mean scale.
//!
//! Boundaries are linear ramps one pixel wide, so every field lies in `[0, 1]`.

use crate::error::{Error, Result};
use crate::graph::distance::{distance_to, fill_holes};
use crate::graph::{AffineTransform, AnatomyEdge, KnowledgeGraph, Relation};
use crate::grid::Grid2D;
use crate::maps::ProbMap;
use crate::scalar::{clamp, Scalar};

/// Below this membership mass the conditioning organ is treated as absent.
pub const MIN_CONDITIONING_MASS: f64 = 1e-6;

/// Majority membership of `label` per pixel: `clamp(2q − 1, 0, 1)`.
pub fn membership<S: Scalar>(q: &ProbMap<S>, label: usize) -> Vec<S> {
    let two = S::lit(2.0);
    (0..q.pixels())
        .map(|p| clamp(two * q.prob(p, label) - S::one(), S::zero(), S::one()))
        .collect()
}

/// Field `A(o1 | o2)` for the edge `(o1, o2)` of `graph`.
pub fn rasterize_expected_region<S: Scalar>(
    graph: &KnowledgeGraph,
    o1: usize,
    o2: usize,
    conditioning: &ProbMap<S>,
    transform: &AffineTransform<S>,
) -> Result<Grid2D<S>> {
    let edge = graph
        .edge(o1, o2)
        .ok_or_else(|| Error::Schema(format!("no edge from {o1} to {o2}")))?;
    rasterize_relation(edge, conditioning, transform)
}

/// Field expected for `edge.source` given the current marginals of `edge.target`.
pub fn rasterize_relation<S: Scalar>(
    edge: &AnatomyEdge,
    conditioning: &ProbMap<S>,
    transform: &AffineTransform<S>,
) -> Result<Grid2D<S>> {
    let o2 = edge.target;
    if o2 >= conditioning.num_labels() {
        return Err(Error::Shape(format!(
            "organ {o2} is not a label of a {}-label map",
            conditioning.num_labels()
        )));
    }
    let member = membership(conditioning, o2);
    let mass: S = member.iter().copied().sum();
    if mass.as_f64() < MIN_CONDITIONING_MASS {
        return Err(Error::EmptyConditioning {
            organ: o2,
            mass: mass.as_f64(),
        });
    }
    let (h, w) = (conditioning.height(), conditioning.width());
    let margin = S::lit(edge.margin);
    let data = match edge.relation {
        Relation::LeftOf | Relation::RightOf | Relation::Above | Relation::Below => {
            half_plane(edge.relation, margin, &member, mass, h, w, transform)
        }
        Relation::AdjacentTo | Relation::Inside | Relation::DisjointFrom => {
            let margin_px = margin / transform.scale();
            distance_field(edge.relation, margin_px, &member, h, w)
        }
    };
    Grid2D::new(h, w, 1, data)
}

fn half_plane<S: Scalar>(
    relation: Relation,
    margin: S,
    member: &[S],
    mass: S,
    h: usize,
    w: usize,
    transform: &AffineTransform<S>,
) -> Vec<S> {
    let atlas: Vec<[S; 2]> = (0..h * w)
        .map(|p| transform.apply([S::from_count(p % w), S::from_count(p / w)]))
        .collect();
    // 0 = x (columns), 1 = y (rows)
    let axis = match relation {
        Relation::LeftOf | Relation::RightOf => 0,
        _ => 1,
    };
    let centroid = member
        .iter()
        .zip(&atlas)
        .map(|(&m, a)| m * a[axis])
        .sum::<S>()
        / mass;
    let var = member
        .iter()
        .zip(&atlas)
        .map(|(&m, a)| m * (a[axis] - centroid).powi(2))
        .sum::<S>()
        / mass;
    let extent = (S::lit(3.0) * var).sqrt();
    let (lo, hi) = (centroid - extent, centroid + extent);

    atlas
        .iter()
        .map(|a| {
            let v = a[axis];
            let s = match relation {
                // allowed strictly before the low edge (plus slack)
                Relation::LeftOf | Relation::Above => lo + margin - v,
                // allowed strictly after the high edge (minus slack)
                _ => v - (hi - margin),
            };
            clamp(s, S::zero(), S::one())
        })
        .collect()
}

fn distance_field<S: Scalar>(
    relation: Relation,
    margin_px: S,
    member: &[S],
    h: usize,
    w: usize,
) -> Vec<S> {
    let support: Vec<bool> = member.iter().map(|&m| m > S::zero()).collect();
    match relation {
        Relation::AdjacentTo => {
            let d = distance_to(&support, h, w);
            let band = margin_px.max(S::one());
            d.iter()
                .zip(&support)
                .map(|(&d, &inside)| {
                    if inside {
                        return S::zero();
                    }
                    let d = S::lit(d);
                    if d <= band {
                        S::one()
                    } else {
                        clamp((band + band - d) / band, S::zero(), S::one())
                    }
                })
                .collect()
        }
        Relation::Inside => {
            let filled = fill_holes(&support, h, w);
            let outside: Vec<bool> = filled.iter().map(|&f| !f).collect();
            let depth = distance_to(&outside, h, w);
            depth
                .iter()
                .zip(&filled)
                .map(|(&d, &f)| {
                    if !f {
                        S::zero()
                    } else if d.is_infinite() {
                        S::one()
                    } else {
                        clamp(S::lit(d) - margin_px, S::zero(), S::one())
                    }
                })
                .collect()
        }
        Relation::DisjointFrom => distance_to(&support, h, w)
            .into_iter()
            .map(|d| clamp(S::lit(d) - margin_px, S::zero(), S::one()))
            .collect(),
        _ => unreachable!("directional relations use half_plane"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::AnatomyNode;

    fn two_node_graph(relation: Relation, margin: f64) -> KnowledgeGraph {
        KnowledgeGraph::new(
            vec![
                AnatomyNode {
                    id: 1,
                    name: "a".into(),
                    features: vec![],
                },
                AnatomyNode {
                    id: 2,
                    name: "b".into(),
                    features: vec![],
                },
            ],
            vec![AnatomyEdge {
                source: 1,
                target: 2,
                relation,
                weight: 1.0,
                margin,
            }],
            vec![],
        )
        .unwrap()
    }

    /// Label 2 with probability 1 where `in_o2` holds, background elsewhere.
    fn conditioning(h: usize, w: usize, in_o2: impl Fn(usize, usize) -> bool) -> ProbMap<f64> {
        let g = Grid2D::from_fn(h, w, 3, |r, c, ch| {
            let l = if in_o2(r, c) { 2 } else { 0 };
            if ch == l {
                1.0
            } else {
                0.0
            }
        });
        ProbMap::new(g).unwrap()
    }

    #[test]
    fn left_of_single_column() {
        let g = two_node_graph(Relation::LeftOf, 0.0);
        let q = conditioning(8, 16, |_, c| c == 10);
        let a = rasterize_expected_region(&g, 1, 2, &q, &AffineTransform::identity()).unwrap();
        for r in 0..8 {
            for c in 0..16 {
                let want = if c < 10 { 1.0 } else { 0.0 };
                assert_eq!(a.get(r, c, 0), want, "({r},{c})");
            }
        }
    }

    #[test]
    fn adjacent_band_matches_brute_force_distance() {
        let margin = 2.0;
        let g = two_node_graph(Relation::AdjacentTo, margin);
        let in_o2 = |r: usize, c: usize| (5..9).contains(&r) && (6..11).contains(&c);
        let q = conditioning(16, 16, in_o2);
        let a = rasterize_expected_region(&g, 1, 2, &q, &AffineTransform::identity()).unwrap();
        for r in 0..16 {
            for c in 0..16 {
                let d = (0..16)
                    .flat_map(|rr| (0..16).map(move |cc| (rr, cc)))
                    .filter(|&(rr, cc)| in_o2(rr, cc))
                    .map(|(rr, cc)| {
                        ((r as f64 - rr as f64).powi(2) + (c as f64 - cc as f64).powi(2)).sqrt()
                    })
                    .fold(f64::INFINITY, f64::min);
                let want = if d == 0.0 {
                    0.0
                } else if d <= margin {
                    1.0
                } else {
                    ((2.0 * margin - d) / margin).clamp(0.0, 1.0)
                };
                assert!((a.get(r, c, 0) - want).abs() < 1e-12, "({r},{c}) d={d}");
            }
        }
    }

    #[test]
    fn inside_filled_rectangle_is_its_interior() {
        let g = two_node_graph(Relation::Inside, 0.0);
        let in_o2 = |r: usize, c: usize| (3..9).contains(&r) && (2..12).contains(&c);
        let q = conditioning(12, 14, in_o2);
        let a = rasterize_expected_region(&g, 1, 2, &q, &AffineTransform::identity()).unwrap();
        for r in 0..12 {
            for c in 0..14 {
                assert_eq!(a.get(r, c, 0), if in_o2(r, c) { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn inside_counts_enclosed_holes() {
        let g = two_node_graph(Relation::Inside, 0.0);
        let ring = |r: usize, c: usize| {
            (2..10).contains(&r) && (2..10).contains(&c) && !((4..8).contains(&r) && (4..8).contains(&c))
        };
        let q = conditioning(12, 12, ring);
        let a = rasterize_expected_region(&g, 1, 2, &q, &AffineTransform::identity()).unwrap();
        assert_eq!(a.get(5, 5, 0), 1.0);
        assert_eq!(a.get(0, 0, 0), 0.0);
    }

    #[test]
    fn disjoint_excludes_dilated_support() {
        let g = two_node_graph(Relation::DisjointFrom, 1.0);
        let q = conditioning(9, 9, |r, c| r == 4 && c == 4);
        let a = rasterize_expected_region(&g, 1, 2, &q, &AffineTransform::identity()).unwrap();
        assert_eq!(a.get(4, 4, 0), 0.0);
        assert_eq!(a.get(4, 5, 0), 0.0);
        assert_eq!(a.get(4, 6, 0), 1.0);
        assert!((a.get(5, 5, 0) - (2f64.sqrt() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn right_of_mirrors_left_of() {
        let (h, w) = (10, 20);
        let blob = |r: usize, c: usize| (2..7).contains(&r) && (4..9).contains(&c);
        let q = conditioning(h, w, blob);
        let q_mirror = conditioning(h, w, |r, c| blob(r, w - 1 - c));
        let id = AffineTransform::identity();
        let left = rasterize_relation(&two_node_graph(Relation::LeftOf, 1.5).edges()[0], &q, &id).unwrap();
        let right =
            rasterize_relation(&two_node_graph(Relation::RightOf, 1.5).edges()[0], &q_mirror, &id)
                .unwrap();
        for r in 0..h {
            for c in 0..w {
                assert!((left.get(r, c, 0) - right.get(r, w - 1 - c, 0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_conditioning_is_reported() {
        let g = two_node_graph(Relation::Above, 0.0);
        let q = conditioning(4, 4, |_, _| false);
        assert!(matches!(
            rasterize_expected_region(&g, 1, 2, &q, &AffineTransform::identity()),
            Err(Error::EmptyConditioning { organ: 2, .. })
        ));
    }

    #[test]
    fn translation_shifts_nothing_for_relative_relations() {
        let g = two_node_graph(Relation::Below, 0.0);
        let q = conditioning(12, 12, |r, c| (2..5).contains(&r) && (3..8).contains(&c));
        let id = rasterize_expected_region(&g, 1, 2, &q, &AffineTransform::identity()).unwrap();
        let shifted = AffineTransform::new([[1.0, 0.0], [0.0, 1.0]], [7.0, -3.0]).unwrap();
        let t = rasterize_expected_region(&g, 1, 2, &q, &shifted).unwrap();
        assert!(id.max_abs_diff(&t).unwrap() < 1e-12);
    }
}
