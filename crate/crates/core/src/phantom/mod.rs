//! Deterministic synthetic multi-organ scenes with matching knowledge graphs.
//!
//! Each template is a set of ellipses painted in order on a canonical atlas
//! frame the size of the image. A scene draws a small similarity transform
//! (scale, rotation, translation) from the atlas frame into the image and
//! jitters organ radii; image landmarks are the transformed atlas landmarks,
//! so a landmark fit recovers the exact image→atlas map.

mod corrupt;
mod metrics;

pub use corrupt::{corrupt, CorruptionKind, CorruptionSpec};
pub use metrics::{dice, forbidden_zone, mean_foreground_dice, relation_holds};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::{AffineTransform, AnatomyEdge, AnatomyNode, KnowledgeGraph, Landmark, Relation};
use crate::grid::Grid2D;
use crate::maps::{FeatureMap, LabelMap, ProbMap};

/// Smallest accepted scene side, in pixels.
pub const MIN_SIDE: usize = 32;
/// Probability placed on the true label by `clean_prob`.
pub const CLEAN_CONFIDENCE: f64 = 0.9;
/// Standard deviation of the additive feature noise.
pub const FEATURE_NOISE: f64 = 0.3;
/// Gaussian smoothing of the feature signatures, in pixels.
pub const FEATURE_SMOOTHING: f64 = 1.0;
const EDGE_MARGIN: f64 = 2.0;

/// Per-label feature signatures; any two differ by at least 3 in Euclidean norm.
const SIGNATURES: [[f64; 3]; 6] = [
    [0.0, 0.0, 0.0],
    [3.0, 0.0, 0.0],
    [0.0, 3.0, 0.0],
    [0.0, 0.0, 3.0],
    [3.0, 3.0, 0.0],
    [0.0, 3.0, 3.0],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Template {
    TwoOrganLr,
    ThreeOrganNested,
    FiveOrganAbdomen,
}

impl Template {
    pub const ALL: [Template; 3] = [
        Template::TwoOrganLr,
        Template::ThreeOrganNested,
        Template::FiveOrganAbdomen,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Template::TwoOrganLr => "two_organ_lr",
            Template::ThreeOrganNested => "three_organ_nested",
            Template::FiveOrganAbdomen => "five_organ_abdomen",
        }
    }

    pub fn num_labels(self) -> usize {
        self.organs().len() + 1
    }

    /// `(name, cx, cy, rx, ry)` as fractions of the frame width (x) and height (y),
    /// painted in order; the organ id is the position plus one.
    fn organs(self) -> &'static [(&'static str, f64, f64, f64, f64)] {
        match self {
            Template::TwoOrganLr => &[
                ("left_organ", 0.27, 0.50, 0.13, 0.28),
                ("right_organ", 0.62, 0.50, 0.15, 0.30),
            ],
            Template::ThreeOrganNested => &[
                ("outer", 0.50, 0.50, 0.44, 0.44),
                ("middle", 0.50, 0.50, 0.27, 0.27),
                ("core", 0.50, 0.50, 0.11, 0.11),
            ],
            Template::FiveOrganAbdomen => &[
                ("liver", 0.28, 0.35, 0.18, 0.15),
                ("spleen", 0.80, 0.33, 0.09, 0.12),
                ("kidney_left", 0.30, 0.72, 0.07, 0.10),
                ("kidney_right", 0.72, 0.72, 0.07, 0.10),
                ("stomach", 0.57, 0.40, 0.09, 0.09),
            ],
        }
    }

    fn relations(self) -> &'static [(usize, usize, Relation)] {
        match self {
            Template::TwoOrganLr => &[(1, 2, Relation::LeftOf)],
            Template::ThreeOrganNested => &[(3, 2, Relation::Inside), (2, 1, Relation::Inside)],
            Template::FiveOrganAbdomen => &[
                (1, 5, Relation::LeftOf),
                (5, 2, Relation::LeftOf),
                (3, 1, Relation::Below),
                (4, 2, Relation::Below),
                (3, 4, Relation::LeftOf),
            ],
        }
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Template {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Template::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| {
                Error::config(
                    "template",
                    format!("unknown template `{s}`; expected two_organ_lr, three_organ_nested or five_organ_abdomen"),
                )
            })
    }
}

/// A generated scene with ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomScene {
    pub template: Template,
    pub seed: u64,
    pub truth: LabelMap,
    pub clean_prob: ProbMap<f64>,
    pub features: FeatureMap<f64>,
    pub graph: KnowledgeGraph,
    /// Image-space landmarks; pair by name with `graph.atlas_landmarks()`.
    pub landmarks: Vec<Landmark>,
    /// Exact image→atlas map the scene was drawn with.
    pub to_atlas: AffineTransform<f64>,
}

/// Separable Gaussian blur of every channel, clamping at the borders.
pub(crate) fn gaussian_blur(grid: &Grid2D<f64>, sigma: f64) -> Grid2D<f64> {
    if sigma <= 0.0 {
        return grid.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = taps.iter().sum();
    let taps: Vec<f64> = taps.iter().map(|t| t / norm).collect();
    let (h, w, c) = grid.shape();
    let pass = |src: &Grid2D<f64>, vertical: bool| {
        Grid2D::from_fn(h, w, c, |r, col, ch| {
            taps.iter()
                .enumerate()
                .map(|(t, &k)| {
                    let d = t as isize - radius;
                    let (rr, cc) = if vertical {
                        ((r as isize + d).clamp(0, h as isize - 1) as usize, col)
                    } else {
                        (r, (col as isize + d).clamp(0, w as isize - 1) as usize)
                    };
                    k * src.get(rr, cc, ch)
                })
                .sum()
        })
    };
    pass(&pass(grid, false), true)
}

/// `CLEAN_CONFIDENCE` on the true label, the remainder split evenly.
pub(crate) fn softened_one_hot(truth: &LabelMap) -> ProbMap<f64> {
    let k = truth.num_labels();
    let rest = (1.0 - CLEAN_CONFIDENCE) / (k - 1) as f64;
    let grid = Grid2D::from_fn(truth.height(), truth.width(), k, |r, c, ch| {
        if truth.get(r, c) == ch {
            CLEAN_CONFIDENCE
        } else {
            rest
        }
    });
    ProbMap::new(grid).expect("softened one-hot is normalized")
}

struct Geometry {
    /// atlas → image
    to_image: AffineTransform<f64>,
    radius_scale: Vec<f64>,
}

impl Geometry {
    fn draw(rng: &mut ChaCha8Rng, h: usize, w: usize, organs: usize) -> Self {
        let scale = rng.random_range(0.94..1.0);
        let angle: f64 = rng.random_range(-0.05..0.05);
        let (tx, ty) = (
            rng.random_range(-0.03..0.03) * w as f64,
            rng.random_range(-0.03..0.03) * h as f64,
        );
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        let (s, c) = (angle.sin() * scale, angle.cos() * scale);
        let linear = [[c, -s], [s, c]];
        let offset = [
            cx + tx - (c * cx - s * cy),
            cy + ty - (s * cx + c * cy),
        ];
        let radius_scale = (0..organs).map(|_| rng.random_range(0.95..1.05)).collect();
        Self {
            to_image: AffineTransform::new(linear, offset).expect("rotation-scale is invertible"),
            radius_scale,
        }
    }
}

fn paint(template: Template, geo: &Geometry, to_atlas: &AffineTransform<f64>, h: usize, w: usize) -> Grid2D<usize> {
    let organs = template.organs();
    let (fw, fh) = (w as f64, h as f64);
    Grid2D::from_fn(h, w, 1, |r, c, _| {
        let [x, y] = to_atlas.apply([c as f64, r as f64]);
        let mut label = 0;
        for (id, &(_, cx, cy, rx, ry)) in organs.iter().enumerate() {
            let s = geo.radius_scale[id];
            let dx = (x - cx * (fw - 1.0)) / (rx * fw * s);
            let dy = (y - cy * (fh - 1.0)) / (ry * fh * s);
            if dx * dx + dy * dy <= 1.0 {
                label = id + 1;
            }
        }
        label
    })
}

fn atlas_landmarks(template: Template, h: usize, w: usize) -> Vec<Landmark> {
    let (fw, fh) = (w as f64 - 1.0, h as f64 - 1.0);
    let mut out = vec![
        Landmark {
            name: "corner_top_left".into(),
            x: 0.0,
            y: 0.0,
        },
        Landmark {
            name: "corner_top_right".into(),
            x: fw,
            y: 0.0,
        },
        Landmark {
            name: "corner_bottom_left".into(),
            x: 0.0,
            y: fh,
        },
    ];
    for (id, &(name, cx, cy, _, _)) in template.organs().iter().enumerate() {
        out.push(Landmark {
            name: format!("center_{}_{name}", id + 1),
            x: cx * fw,
            y: cy * fh,
        });
    }
    out
}

/// Builds the scene for `(template, h, w, seed)`; identical arguments give identical scenes.
pub fn generate_scene(template: Template, h: usize, w: usize, seed: u64) -> Result<PhantomScene> {
    if h < MIN_SIDE || w < MIN_SIDE {
        return Err(Error::config(
            "size",
            format!("phantoms need at least {MIN_SIDE}x{MIN_SIDE} pixels, got {h}x{w}"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = template.num_labels();
    let edges: Vec<AnatomyEdge> = template
        .relations()
        .iter()
        .map(|&(source, target, relation)| AnatomyEdge {
            source,
            target,
            relation,
            weight: 1.0,
            margin: EDGE_MARGIN,
        })
        .collect();
    let atlas = atlas_landmarks(template, h, w);

    // redraw the geometry until every relation holds on the hard truth
    const ATTEMPTS: usize = 64;
    let mut found = None;
    for _ in 0..ATTEMPTS {
        let geo = Geometry::draw(&mut rng, h, w, k - 1);
        let to_atlas = geo.to_image.inverse()?;
        let truth = LabelMap::new(paint(template, &geo, &to_atlas, h, w), k)?;
        if (1..k).any(|l| truth.count(l) == 0) {
            continue;
        }
        let mut ok = true;
        for e in &edges {
            ok &= relation_holds(e, &truth, &to_atlas)?;
        }
        if ok {
            found = Some((geo, to_atlas, truth));
            break;
        }
    }
    let (geo, to_atlas, truth) = found.ok_or_else(|| {
        Error::DegenerateConfiguration(format!(
            "{template} at {h}x{w} violates its own relations for every draw"
        ))
    })?;

    let area = (h * w) as f64;
    let nodes: Vec<AnatomyNode> = template
        .organs()
        .iter()
        .enumerate()
        .map(|(i, &(name, cx, cy, _, _))| {
            let id = i + 1;
            AnatomyNode {
                id,
                name: name.to_string(),
                features: vec![
                    truth.count(id) as f64 / area,
                    cx * (w as f64 - 1.0),
                    cy * (h as f64 - 1.0),
                ],
            }
        })
        .collect();
    let graph = KnowledgeGraph::new(nodes, edges, atlas.clone())?;

    let landmarks = atlas
        .iter()
        .map(|l| {
            let [x, y] = geo.to_image.apply([l.x, l.y]);
            Landmark {
                name: l.name.clone(),
                x,
                y,
            }
        })
        .collect();

    let signatures = Grid2D::from_fn(h, w, 3, |r, c, d| SIGNATURES[truth.get(r, c)][d]);
    let mut features = gaussian_blur(&signatures, FEATURE_SMOOTHING);
    let noise = Normal::new(0.0, FEATURE_NOISE).expect("valid noise");
    for v in features.data_mut() {
        *v += noise.sample(&mut rng);
    }

    Ok(PhantomScene {
        template,
        seed,
        clean_prob: softened_one_hot(&truth),
        truth,
        features: FeatureMap::new(features)?,
        graph,
        landmarks,
        to_atlas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{estimate_affine, match_landmarks};

    #[test]
    fn templates_parse() {
        for t in Template::ALL {
            assert_eq!(t.name().parse::<Template>().unwrap(), t);
        }
        assert!(matches!("liver".parse::<Template>(), Err(Error::Config { .. })));
    }

    #[test]
    fn scenes_satisfy_their_graphs() {
        for t in Template::ALL {
            for (size, seed) in [(32, 0), (48, 3), (64, 7), (96, 1)] {
                let s = generate_scene(t, size, size, seed).unwrap();
                assert_eq!(s.clean_prob.argmax(), s.truth);
                for e in s.graph.edges() {
                    assert!(relation_holds(e, &s.truth, &s.to_atlas).unwrap(), "{t} {size} {e:?}");
                }
                for l in 1..t.num_labels() {
                    assert!(s.truth.count(l) > 0);
                }
            }
        }
    }

    #[test]
    fn landmarks_recover_the_atlas_map() {
        let s = generate_scene(Template::FiveOrganAbdomen, 64, 64, 5).unwrap();
        let (img, atl) = match_landmarks::<f64>(&s.landmarks, s.graph.atlas_landmarks());
        let fit = estimate_affine(&img, &atl).unwrap();
        for r in 0..2 {
            assert!((fit.transform.offset[r] - s.to_atlas.offset[r]).abs() < 1e-8);
            for c in 0..2 {
                assert!((fit.transform.linear[r][c] - s.to_atlas.linear[r][c]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = generate_scene(Template::TwoOrganLr, 40, 36, 11).unwrap();
        let b = generate_scene(Template::TwoOrganLr, 40, 36, 11).unwrap();
        assert_eq!(a, b);
        let c = generate_scene(Template::TwoOrganLr, 40, 36, 12).unwrap();
        assert_ne!(a.features, c.features);
    }

    #[test]
    fn small_sizes_rejected() {
        assert!(matches!(
            generate_scene(Template::TwoOrganLr, 16, 16, 0),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn blur_preserves_constants() {
        let g = Grid2D::filled(5, 7, 2, 0.25);
        let b = gaussian_blur(&g, 1.3);
        assert!(b.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }
}
