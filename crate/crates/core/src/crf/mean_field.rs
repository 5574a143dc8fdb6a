//! Mean-field minimization of the three-term energy.

use rayon::prelude::*;

use crate::config::{EngineConfig, UpdateSchedule};
use crate::error::Result;
use crate::graph::{AffineTransform, KnowledgeGraph};
use crate::maps::{FeatureMap, ProbMap};
use crate::matrix::{CompatibilityMatrix, LabelMatrix};
use crate::scalar::Scalar;

use super::anatomical::anatomical_message;
use super::potentials::{check_lattice, compat_expectation, compat_pixel, unary_potential, PairwiseKernel};
use super::PotentialField;

/// Free energy of one sequential sweep, before and after it, with the
/// anatomical field frozen at the sweep's starting marginals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepEnergy<S> {
    pub before: S,
    pub after: S,
}

/// Progress of a mean-field run.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldState<S> {
    /// Number of completed updates (sweeps for the sequential schedule).
    pub iteration: usize,
    /// Max per-pixel L1 change of the last update.
    pub last_delta: S,
    pub converged: bool,
    /// `last_delta` of every update, in order.
    pub deltas: Vec<S>,
    /// Per-sweep free energies; empty for the parallel schedule.
    pub sweep_energies: Vec<SweepEnergy<S>>,
}

/// Refined marginals with their run state and relation-satisfaction scores.
#[derive(Debug, Clone)]
pub struct Refinement<S> {
    pub q: ProbMap<S>,
    pub state: MeanFieldState<S>,
    /// Soft IoU of each edge's source organ against its expected region under the final `q`.
    pub scores: LabelMatrix<S>,
}

/// `out = softmax(−field)`, shifted by the minimum for stability.
#[inline]
fn softmax_neg<S: Scalar>(field: &[S], out: &mut [S]) {
    let lo = field.iter().copied().fold(S::infinity(), S::min);
    let mut z = S::zero();
    for (o, &f) in out.iter_mut().zip(field) {
        *o = (lo - f).exp();
        z += *o;
    }
    out.iter_mut().for_each(|o| *o /= z);
}

#[inline]
fn l1<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).map(|(&x, &y)| (x - y).abs()).sum()
}

/// `Σ Q·(ψ_u + frozen) + ½ Σ Q·pair(Q) + Σ Q log Q`.
///
/// For symmetric `μ` a sequential sweep never increases this quantity: each
/// pixel update is its exact coordinate-wise minimizer.
pub fn free_energy<S: Scalar>(
    q: &ProbMap<S>,
    unary: &PotentialField<S>,
    frozen: &PotentialField<S>,
    kernel: &PairwiseKernel<S>,
    mu: &CompatibilityMatrix<S>,
    lambda: S,
) -> S {
    let k = q.num_labels();
    let expected = compat_expectation(q.grid().data(), mu, k);
    let half = S::lit(0.5);
    (0..q.pixels())
        .into_par_iter()
        .map(|i| {
            let qi = q.pixel(i);
            let mut pair = vec![S::zero(); k];
            if lambda != S::zero() {
                kernel.accumulate(i, &expected, k, &mut pair);
            }
            let (u, f) = (unary.grid().pixel(i), frozen.grid().pixel(i));
            (0..k)
                .map(|a| {
                    let ent = if qi[a] > S::zero() { qi[a] * qi[a].ln() } else { S::zero() };
                    qi[a] * (u[a] + f[a] + half * lambda * pair[a]) + ent
                })
                .sum::<S>()
        })
        .collect::<Vec<S>>()
        .into_iter()
        .sum()
}

/// Mean-field refinement of `p` starting from `Q⁰ = P`.
///
/// Every update sets `Q(i, ·) = softmax(−(ψ_u + pairwise + anatomical))`, with
/// the anatomical field re-rasterized from the current marginals. Stops once
/// the max per-pixel L1 change drops below `epsilon` or after `max_iters`
/// updates.
pub fn mean_field_refine<S: Scalar>(
    p: &ProbMap<S>,
    features: &FeatureMap<S>,
    mu: &CompatibilityMatrix<S>,
    graph: &KnowledgeGraph,
    transform: &AffineTransform<S>,
    cfg: &EngineConfig,
) -> Result<Refinement<S>> {
    cfg.validate()?;
    check_lattice(p, features, mu)?;
    graph.check_labels(p.num_labels())?;

    let lambda = S::lit(cfg.lambda_f);
    let kernel = PairwiseKernel::from_config(features, cfg);
    let unary = unary_potential(p);
    let eps = S::lit(cfg.epsilon);
    let mut q = p.clone();
    let mut state = MeanFieldState {
        iteration: 0,
        last_delta: S::zero(),
        converged: false,
        deltas: Vec::new(),
        sweep_energies: Vec::new(),
    };

    for t in 1..=cfg.max_iters {
        let anat = if graph.edges().is_empty() {
            PotentialField::zeros(p.height(), p.width(), p.num_labels())
        } else {
            anatomical_message(&q, graph, transform)?.field
        };
        let delta = match cfg.update_schedule {
            UpdateSchedule::Parallel => {
                parallel_update(&mut q, &unary, &anat, &kernel, mu, lambda)
            }
            UpdateSchedule::Sequential => {
                let before = free_energy(&q, &unary, &anat, &kernel, mu, lambda);
                let delta = sequential_sweep(&mut q, &unary, &anat, &kernel, mu, lambda);
                let after = free_energy(&q, &unary, &anat, &kernel, mu, lambda);
                state.sweep_energies.push(SweepEnergy { before, after });
                delta
            }
        };
        state.iteration = t;
        state.last_delta = delta;
        state.deltas.push(delta);
        if delta < eps {
            state.converged = true;
            break;
        }
    }

    let scores = if graph.edges().is_empty() {
        LabelMatrix::zeros(p.num_labels())
    } else {
        anatomical_message(&q, graph, transform)?.scores
    };
    Ok(Refinement { q, state, scores })
}

/// Jacobi update of every pixel from the same iterate; returns the max L1 change.
fn parallel_update<S: Scalar>(
    q: &mut ProbMap<S>,
    unary: &PotentialField<S>,
    anat: &PotentialField<S>,
    kernel: &PairwiseKernel<S>,
    mu: &CompatibilityMatrix<S>,
    lambda: S,
) -> S {
    let k = q.num_labels();
    let expected = compat_expectation(q.grid().data(), mu, k);
    let old = q.grid().data();
    let mut next = vec![S::zero(); old.len()];
    let deltas: Vec<S> = next
        .par_chunks_mut(k)
        .enumerate()
        .map(|(i, out)| {
            let mut field = vec![S::zero(); k];
            if lambda != S::zero() {
                kernel.accumulate(i, &expected, k, &mut field);
            }
            let (u, a) = (unary.grid().pixel(i), anat.grid().pixel(i));
            for c in 0..k {
                field[c] = u[c] + a[c] + lambda * field[c];
            }
            softmax_neg(&field, out);
            l1(out, &old[i * k..(i + 1) * k])
        })
        .collect();
    let labels = q.labels().to_vec();
    let grid = crate::grid::Grid2D::new(q.height(), q.width(), k, next)
        .expect("update keeps the lattice");
    *q = ProbMap::from_normalized(grid, labels);
    deltas.into_iter().fold(S::zero(), S::max)
}

/// Gauss-Seidel sweep in raster order; returns the max L1 change.
fn sequential_sweep<S: Scalar>(
    q: &mut ProbMap<S>,
    unary: &PotentialField<S>,
    anat: &PotentialField<S>,
    kernel: &PairwiseKernel<S>,
    mu: &CompatibilityMatrix<S>,
    lambda: S,
) -> S {
    let k = q.num_labels();
    let labels = q.labels().to_vec();
    let (h, w) = (q.height(), q.width());
    let mut data = q.grid().data().to_vec();
    let mut expected = compat_expectation(&data, mu, k);
    let mut field = vec![S::zero(); k];
    let mut out = vec![S::zero(); k];
    let mut max_delta = S::zero();
    for i in 0..h * w {
        if lambda != S::zero() {
            kernel.accumulate(i, &expected, k, &mut field);
        } else {
            field.iter_mut().for_each(|f| *f = S::zero());
        }
        let (u, a) = (unary.grid().pixel(i), anat.grid().pixel(i));
        for c in 0..k {
            field[c] = u[c] + a[c] + lambda * field[c];
        }
        softmax_neg(&field, &mut out);
        let cur = &mut data[i * k..(i + 1) * k];
        max_delta = max_delta.max(l1(&out, cur));
        cur.copy_from_slice(&out);
        compat_pixel(&out, mu, &mut expected[i * k..(i + 1) * k]);
    }
    let grid = crate::grid::Grid2D::new(h, w, k, data).expect("sweep keeps the lattice");
    *q = ProbMap::from_normalized(grid, labels);
    max_delta
}
