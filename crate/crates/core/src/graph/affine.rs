//! Landmark-based affine registration between image and atlas coordinates.

use crate::error::{Error, Result};
use crate::graph::Landmark;
use crate::scalar::Scalar;

/// `x ↦ linear · x + offset` on `(x, y)` points (`x` = column, `y` = row).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineTransform<S> {
    pub linear: [[S; 2]; 2],
    pub offset: [S; 2],
}

impl<S: Scalar> Default for AffineTransform<S> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<S: Scalar> AffineTransform<S> {
    pub fn identity() -> Self {
        Self {
            linear: [[S::one(), S::zero()], [S::zero(), S::one()]],
            offset: [S::zero(); 2],
        }
    }

    /// Rejects singular linear parts.
    pub fn new(linear: [[S; 2]; 2], offset: [S; 2]) -> Result<Self> {
        let t = Self { linear, offset };
        let det = t.determinant();
        if !det.is_finite() || det == S::zero() || offset.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateConfiguration(format!(
                "affine transform with determinant {det} is not invertible"
            )));
        }
        Ok(t)
    }

    #[inline]
    pub fn determinant(&self) -> S {
        self.linear[0][0] * self.linear[1][1] - self.linear[0][1] * self.linear[1][0]
    }

    /// Mean isotropic scale `sqrt(|det|)`, in target units per source unit.
    pub fn scale(&self) -> S {
        self.determinant().abs().sqrt()
    }

    #[inline]
    pub fn apply(&self, p: [S; 2]) -> [S; 2] {
        let l = &self.linear;
        [
            l[0][0] * p[0] + l[0][1] * p[1] + self.offset[0],
            l[1][0] * p[0] + l[1][1] * p[1] + self.offset[1],
        ]
    }

    pub fn inverse(&self) -> Result<Self> {
        let det = self.determinant();
        if det == S::zero() {
            return Err(Error::DegenerateConfiguration("singular transform".into()));
        }
        let l = &self.linear;
        let inv = [[l[1][1] / det, -l[0][1] / det], [-l[1][0] / det, l[0][0] / det]];
        let o = self.offset;
        let offset = [
            -(inv[0][0] * o[0] + inv[0][1] * o[1]),
            -(inv[1][0] * o[0] + inv[1][1] * o[1]),
        ];
        Ok(Self {
            linear: inv,
            offset,
        })
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity()
    }

    pub fn cast<U: Scalar>(&self) -> AffineTransform<U> {
        let c = |v: S| U::lit(v.as_f64());
        AffineTransform {
            linear: [
                [c(self.linear[0][0]), c(self.linear[0][1])],
                [c(self.linear[1][0]), c(self.linear[1][1])],
            ],
            offset: [c(self.offset[0]), c(self.offset[1])],
        }
    }
}

/// Result of a least-squares landmark fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineFit<S> {
    pub transform: AffineTransform<S>,
    /// Root-mean-square distance between mapped image landmarks and atlas landmarks.
    pub residual: S,
}

/// Least-squares affine map taking `image` landmarks onto `atlas` landmarks.
///
/// Solved in centered coordinates: with `d`/`e` the image/atlas points minus
/// their means, the linear part is `(Σ e dᵀ)(Σ d dᵀ)⁻¹` and the offset aligns
/// the means. Fewer than three pairs, or collinear image points, leave the
/// problem underdetermined.
pub fn estimate_affine<S: Scalar>(image: &[[S; 2]], atlas: &[[S; 2]]) -> Result<AffineFit<S>> {
    if image.len() != atlas.len() {
        return Err(Error::DegenerateConfiguration(format!(
            "{} image landmarks vs {} atlas landmarks",
            image.len(),
            atlas.len()
        )));
    }
    if image.len() < 3 {
        return Err(Error::DegenerateConfiguration(format!(
            "need at least 3 landmark pairs, got {}",
            image.len()
        )));
    }
    if image.iter().chain(atlas).flatten().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateConfiguration("non-finite landmark".into()));
    }

    let n = S::from_count(image.len());
    let mean = |pts: &[[S; 2]]| {
        let sx: S = pts.iter().map(|p| p[0]).sum();
        let sy: S = pts.iter().map(|p| p[1]).sum();
        [sx / n, sy / n]
    };
    let mi = mean(image);
    let ma = mean(atlas);

    // cov = Σ d dᵀ, cross = Σ e dᵀ
    let mut cov = [[S::zero(); 2]; 2];
    let mut cross = [[S::zero(); 2]; 2];
    for (p, q) in image.iter().zip(atlas) {
        let d = [p[0] - mi[0], p[1] - mi[1]];
        let e = [q[0] - ma[0], q[1] - ma[1]];
        for r in 0..2 {
            for c in 0..2 {
                cov[r][c] += d[r] * d[c];
                cross[r][c] += e[r] * d[c];
            }
        }
    }
    let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
    let trace = cov[0][0] + cov[1][1];
    let tol = S::epsilon() * S::lit(1e4) * trace * trace;
    if trace <= S::zero() || det <= tol {
        return Err(Error::DegenerateConfiguration(
            "image landmarks are collinear or coincident".into(),
        ));
    }
    let inv = [
        [cov[1][1] / det, -cov[0][1] / det],
        [-cov[1][0] / det, cov[0][0] / det],
    ];
    let mut linear = [[S::zero(); 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            linear[r][c] = cross[r][0] * inv[0][c] + cross[r][1] * inv[1][c];
        }
    }
    let offset = [
        ma[0] - (linear[0][0] * mi[0] + linear[0][1] * mi[1]),
        ma[1] - (linear[1][0] * mi[0] + linear[1][1] * mi[1]),
    ];
    let transform = AffineTransform::new(linear, offset)?;

    let sq: S = image
        .iter()
        .zip(atlas)
        .map(|(p, q)| {
            let t = transform.apply(*p);
            (t[0] - q[0]).powi(2) + (t[1] - q[1]).powi(2)
        })
        .sum();
    Ok(AffineFit {
        transform,
        residual: (sq / n).sqrt(),
    })
}

/// Pairs image and atlas landmarks by name, in atlas order.
pub fn match_landmarks<S: Scalar>(
    image: &[Landmark],
    atlas: &[Landmark],
) -> (Vec<[S; 2]>, Vec<[S; 2]>) {
    let mut src = Vec::new();
    let mut dst = Vec::new();
    for a in atlas {
        if let Some(i) = image.iter().find(|l| l.name == a.name) {
            src.push([S::lit(i.x), S::lit(i.y)]);
            dst.push([S::lit(a.x), S::lit(a.y)]);
        }
    }
    (src, dst)
}
