//! Controlled, seeded corruptions of a scene's clean probability map.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::distance::distance_to;
use crate::graph::Relation;
use crate::maps::ProbMap;
use crate::uncertainty::perturb;

use super::{forbidden_zone, gaussian_blur, PhantomScene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    /// Gaussian blur of the probability channels; magnitude is the blur sigma in pixels.
    BoundaryBlur,
    /// Moves a blob of the first edge's source organ into its forbidden zone;
    /// magnitude is the blob area as a fraction of the organ area.
    FragmentSwap,
    /// One logit-noise draw; magnitude is the noise standard deviation.
    LogitNoise,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 3] = [
        CorruptionKind::BoundaryBlur,
        CorruptionKind::FragmentSwap,
        CorruptionKind::LogitNoise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::BoundaryBlur => "boundary_blur",
            CorruptionKind::FragmentSwap => "fragment_swap",
            CorruptionKind::LogitNoise => "logit_noise",
        }
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CorruptionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::config(
                    "corruption_kind",
                    format!("unknown corruption `{s}`; expected boundary_blur, fragment_swap or logit_noise"),
                )
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub magnitude: f64,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, magnitude: f64, seed: u64) -> Result<Self> {
        if !(magnitude >= 0.0 && magnitude.is_finite()) {
            return Err(Error::config(
                "corruption_magnitude",
                format!("must be finite and >= 0, got {magnitude}"),
            ));
        }
        Ok(Self {
            kind,
            magnitude,
            seed,
        })
    }
}

/// Corrupted copy of `scene.clean_prob`, deterministic in `spec`.
///
/// Fails with a degenerate-corruption error when the corruption would erase
/// an organ from the argmax or cannot place its fragment.
pub fn corrupt(scene: &PhantomScene, spec: &CorruptionSpec) -> Result<ProbMap<f64>> {
    let spec = CorruptionSpec::new(spec.kind, spec.magnitude, spec.seed)?;
    if spec.magnitude == 0.0 {
        return Ok(scene.clean_prob.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let out = match spec.kind {
        CorruptionKind::BoundaryBlur => {
            let mut p = ProbMap::from_weights(gaussian_blur(scene.clean_prob.grid(), spec.magnitude))?;
            p.set_labels(scene.clean_prob.labels().to_vec())?;
            p
        }
        CorruptionKind::LogitNoise => perturb(&scene.clean_prob, spec.magnitude, &mut rng),
        CorruptionKind::FragmentSwap => fragment_swap(scene, spec.magnitude, &mut rng)?,
    };
    let arg = out.argmax();
    for l in 1..scene.truth.num_labels() {
        if scene.truth.count(l) > 0 && arg.count(l) == 0 {
            return Err(Error::DegenerateCorruption(format!(
                "{} with magnitude {} erases organ {l}",
                spec.kind, spec.magnitude
            )));
        }
    }
    Ok(out)
}

fn fragment_swap(scene: &PhantomScene, magnitude: f64, rng: &mut ChaCha8Rng) -> Result<ProbMap<f64>> {
    let truth = &scene.truth;
    let edge = scene
        .graph
        .edges()
        .first()
        .ok_or_else(|| Error::DegenerateCorruption("scene graph has no relation to violate".into()))?;
    let organ = edge.source;
    let area = truth.count(organ);
    let n = (magnitude * area as f64).round() as usize;
    if n == 0 || n >= area {
        return Err(Error::DegenerateCorruption(format!(
            "fragment of {n} pixels from an organ of {area}"
        )));
    }

    // compact disc pattern of n offsets
    let reach = (n as f64).sqrt().ceil() as isize + 1;
    let mut offsets: Vec<(isize, isize)> = (-reach..=reach)
        .flat_map(|dr| (-reach..=reach).map(move |dc| (dr, dc)))
        .collect();
    offsets.sort_by_key(|&(dr, dc)| (dr * dr + dc * dc, dr, dc));
    offsets.truncate(n);

    let (h, w) = (truth.height(), truth.width());
    let at = |p: usize, (dr, dc): (isize, isize)| -> Option<usize> {
        let (r, c) = ((p / w) as isize + dr, (p % w) as isize + dc);
        (r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w).then(|| r as usize * w + c as usize)
    };
    let fits = |p: usize, ok: &dyn Fn(usize) -> bool| offsets.iter().all(|&o| at(p, o).is_some_and(ok));

    let labels = truth.labels();
    let sources: Vec<usize> = (0..h * w)
        .filter(|&p| fits(p, &|q| labels[q] == organ))
        .collect();

    let forbidden = forbidden_zone(edge, truth, &scene.to_atlas)?;
    let foreground: Vec<bool> = labels.iter().map(|&l| l != 0).collect();
    let clearance = distance_to(&foreground, h, w);
    let free = |q: usize| labels[q] == 0 && forbidden[q] && clearance[q] >= 2.0;
    let mut targets: Vec<usize> = (0..h * w).filter(|&p| fits(p, &free)).collect();

    // prefer the side of the reference organ opposite to where the source belongs
    let reference: Vec<usize> = (0..h * w).filter(|&p| labels[p] == edge.target).collect();
    let beyond: Option<Box<dyn Fn(usize) -> bool>> = match edge.relation {
        Relation::LeftOf => {
            let m = reference.iter().map(|&p| p % w).max().unwrap_or(0);
            Some(Box::new(move |p| p % w > m))
        }
        Relation::RightOf => {
            let m = reference.iter().map(|&p| p % w).min().unwrap_or(0);
            Some(Box::new(move |p| p % w < m))
        }
        Relation::Above => {
            let m = reference.iter().map(|&p| p / w).max().unwrap_or(0);
            Some(Box::new(move |p| p / w > m))
        }
        Relation::Below => {
            let m = reference.iter().map(|&p| p / w).min().unwrap_or(0);
            Some(Box::new(move |p| p / w < m))
        }
        _ => None,
    };
    if let Some(beyond) = beyond {
        let preferred: Vec<usize> = targets.iter().copied().filter(|&p| beyond(p)).collect();
        if !preferred.is_empty() {
            targets = preferred;
        }
    }

    if sources.is_empty() || targets.is_empty() {
        return Err(Error::DegenerateCorruption(format!(
            "no room for a {n}-pixel fragment of organ {organ}"
        )));
    }
    let src = sources[rng.random_range(0..sources.len())];
    let dst = targets[rng.random_range(0..targets.len())];

    let mut grid = scene.clean_prob.grid().clone();
    for &o in &offsets {
        let (a, b) = (at(src, o).expect("fits"), at(dst, o).expect("fits"));
        let pa = grid.pixel(a).to_vec();
        let pb = grid.pixel(b).to_vec();
        grid.pixel_mut(a).copy_from_slice(&pb);
        grid.pixel_mut(b).copy_from_slice(&pa);
    }
    ProbMap::with_labels(grid, scene.clean_prob.labels().to_vec())
}
