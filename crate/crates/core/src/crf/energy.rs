//! Energy of a hard labeling and exact Gibbs marginals by enumeration.

use crate::config::EngineConfig;
use crate::error::{Error, Result};
use crate::graph::{rasterize_relation, AffineTransform, KnowledgeGraph};
use crate::grid::Grid2D;
use crate::maps::{FeatureMap, LabelMap, ProbMap};
use crate::matrix::CompatibilityMatrix;
use crate::scalar::Scalar;

use super::anatomical::soft_iou_loss;
use super::potentials::{check_lattice, unary_potential, PairwiseKernel};

/// Largest number of labelings `exact_marginals` will enumerate.
pub const EXACT_CAPACITY: usize = 1 << 20;

/// Energy terms that do not depend on the labeling.
struct EnergyModel<'a, S> {
    unary: Grid2D<S>,
    kernel: PairwiseKernel<S>,
    mu: &'a CompatibilityMatrix<S>,
    lambda: S,
    graph: &'a KnowledgeGraph,
    transform: &'a AffineTransform<S>,
    height: usize,
    width: usize,
    k: usize,
}

impl<'a, S: Scalar> EnergyModel<'a, S> {
    fn new(
        p: &ProbMap<S>,
        features: &FeatureMap<S>,
        mu: &'a CompatibilityMatrix<S>,
        graph: &'a KnowledgeGraph,
        transform: &'a AffineTransform<S>,
        cfg: &EngineConfig,
    ) -> Result<Self> {
        check_lattice(p, features, mu)?;
        graph.check_labels(p.num_labels())?;
        Ok(Self {
            unary: unary_potential(p).into_grid(),
            kernel: PairwiseKernel::from_config(features, cfg),
            mu,
            lambda: S::lit(cfg.lambda_f),
            graph,
            transform,
            height: p.height(),
            width: p.width(),
            k: p.num_labels(),
        })
    }

    fn energy(&self, labels: &[usize]) -> Result<S> {
        let k = self.k;
        let mut e: S = labels
            .iter()
            .enumerate()
            .map(|(i, &m)| self.unary.data()[i * k + m])
            .sum();

        if self.lambda != S::zero() {
            let mut pair = S::zero();
            for (i, &mi) in labels.iter().enumerate() {
                self.kernel.for_each_neighbor(i, |j, kij| {
                    if j > i {
                        pair += kij * self.mu.get(mi, labels[j]);
                    }
                });
            }
            e += self.lambda * pair;
        }

        if !self.graph.edges().is_empty() {
            let lm = LabelMap::new(
                Grid2D::new(self.height, self.width, 1, labels.to_vec())?,
                k,
            )?;
            let onehot = ProbMap::<S>::one_hot(&lm);
            for edge in self.graph.edges() {
                let expected = match rasterize_relation(edge, &onehot, self.transform) {
                    Ok(a) => a,
                    Err(Error::EmptyConditioning { .. }) => continue,
                    Err(err) => return Err(err),
                };
                let region = Grid2D::new(
                    self.height,
                    self.width,
                    1,
                    labels
                        .iter()
                        .map(|&m| if m == edge.source { S::one() } else { S::zero() })
                        .collect(),
                )?;
                e += S::lit(edge.weight) * soft_iou_loss(&region, &expected)?;
            }
        }
        Ok(e)
    }
}

/// `E(M) = Σ ψ_u(m_i) + λ_f Σ_{i<j} k(i,j) μ[m_i][m_j] + Σ_edges w · L_IoU`,
/// with each anatomical term evaluated on the hard region of `o1` against
/// `A(o1 | o2)` conditioned on the one-hot labeling. Edges whose conditioning
/// organ is absent from `m` contribute 0.
pub fn evaluate_energy<S: Scalar>(
    m: &LabelMap,
    p: &ProbMap<S>,
    features: &FeatureMap<S>,
    mu: &CompatibilityMatrix<S>,
    graph: &KnowledgeGraph,
    transform: &AffineTransform<S>,
    cfg: &EngineConfig,
) -> Result<S> {
    if m.height() != p.height() || m.width() != p.width() {
        return Err(Error::Shape(format!(
            "labeling is {}x{}, probability map is {}x{}",
            m.height(),
            m.width(),
            p.height(),
            p.width()
        )));
    }
    if m.labels().iter().any(|&l| l >= p.num_labels()) {
        return Err(Error::Shape(format!(
            "labeling uses labels beyond the {} of the probability map",
            p.num_labels()
        )));
    }
    EnergyModel::new(p, features, mu, graph, transform, cfg)?.energy(m.labels())
}

/// Exact per-pixel marginals of the Gibbs distribution `∝ exp(−E(M))`.
///
/// Refuses instances with more than [`EXACT_CAPACITY`] labelings.
pub fn exact_marginals<S: Scalar>(
    p: &ProbMap<S>,
    features: &FeatureMap<S>,
    mu: &CompatibilityMatrix<S>,
    graph: &KnowledgeGraph,
    transform: &AffineTransform<S>,
    cfg: &EngineConfig,
) -> Result<ProbMap<S>> {
    let (n, k) = (p.pixels(), p.num_labels());
    let count = u32::try_from(n)
        .ok()
        .and_then(|n| k.checked_pow(n))
        .filter(|&c| c <= EXACT_CAPACITY)
        .ok_or_else(|| {
            Error::Capacity(format!(
                "{k}^{n} labelings exceed the limit of {EXACT_CAPACITY}"
            ))
        })?;
    let model = EnergyModel::new(p, features, mu, graph, transform, cfg)?;

    let mut labels = vec![0usize; n];
    let mut energies = Vec::with_capacity(count);
    for _ in 0..count {
        energies.push(model.energy(&labels)?);
        for l in labels.iter_mut() {
            *l += 1;
            if *l < k {
                break;
            }
            *l = 0;
        }
    }
    let e_min = energies.iter().copied().fold(S::infinity(), S::min);

    let mut acc = vec![S::zero(); n * k];
    labels.iter_mut().for_each(|l| *l = 0);
    for &e in &energies {
        let wgt = (e_min - e).exp();
        for (i, &l) in labels.iter().enumerate() {
            acc[i * k + l] += wgt;
        }
        for l in labels.iter_mut() {
            *l += 1;
            if *l < k {
                break;
            }
            *l = 0;
        }
    }
    let mut out = ProbMap::from_weights(Grid2D::new(p.height(), p.width(), k, acc)?)?;
    out.set_labels(p.labels().to_vec())?;
    Ok(out)
}
