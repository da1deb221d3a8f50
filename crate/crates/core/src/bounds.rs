//! Empirical checks of the statistical guarantees: generalisation bound,
//! Rademacher complexity and Nyström projection error.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::avnsg::{Features, Geometry};
use crate::error::{Error, Result};
use crate::linalg::{spd_inverse, sym_eigen_desc};
use crate::path::PathEnsemble;
use crate::rng;
use crate::signature::signatures;
use crate::tensor::TensorSeries;

pub const DEFAULT_RADEMACHER_DRAWS: usize = 256;
/// Largest flattened tensor dimension the projection probe accepts.
pub const MAX_FULL_DIM: usize = 40;
/// Multiplier for the conservative support radius.
pub const SAFETY_FACTOR: f64 = 1.5;

pub fn features(paths: &PathEnsemble, geometry: &Geometry) -> Result<Vec<Features>> {
    signatures(paths, geometry.basis.depth())
        .par_iter()
        .map(|s| geometry.project(s))
        .collect()
}

fn mean(feats: &[Features]) -> Features {
    feats.iter().fold(DVector::zeros(feats[0].len()), |a, f| a + f) / feats.len() as f64
}

/// `‖Σ σ_i φ_i‖_Q` for one sign vector drawn from stream `draw`.
fn signed_sum_norm(feats: &[Features], geometry: &Geometry, seed: u64, draw: u64) -> f64 {
    let mut r = rng::stream(seed, rng::RADEMACHER, draw);
    let mut acc = DVector::zeros(feats[0].len());
    for f in feats {
        acc.axpy(rng::rademacher(&mut r), f, 1.0);
    }
    geometry.norm(&acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundRhs {
    pub rademacher_term: f64,
    pub concentration_term: f64,
    pub rhs: f64,
    /// Empirical support radius `max ‖φ_i‖_Q`.
    pub radius: f64,
    /// Right-hand side with the radius scaled by [`SAFETY_FACTOR`].
    pub rhs_safety: f64,
}

/// `(2/n) E‖Σ σ_i φ_i‖_Q + R √(log(1/δ) / 2n)`, the expectation by Monte
/// Carlo over `draws` sign vectors.
pub fn generalization_bound_rhs(feats: &[Features], delta: f64, geometry: &Geometry, draws: usize, seed: u64) -> Result<BoundRhs> {
    if feats.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidConfig(format!("delta must lie in (0, 1), got {delta}")));
    }
    if draws == 0 {
        return Err(Error::InvalidConfig("need at least one Rademacher draw".into()));
    }
    let n = feats.len() as f64;
    let expected = if feats.len() == 1 {
        geometry.norm(&feats[0])
    } else {
        (0..draws as u64)
            .into_par_iter()
            .map(|k| signed_sum_norm(feats, geometry, seed, k))
            .collect::<Vec<_>>()
            .iter()
            .sum::<f64>()
            / draws as f64
    };
    let radius = feats.iter().map(|f| geometry.norm(f)).fold(0.0, f64::max);
    let root = ((1.0 / delta).ln() / (2.0 * n)).sqrt();
    let rademacher_term = 2.0 * expected / n;
    Ok(BoundRhs {
        rademacher_term,
        concentration_term: radius * root,
        rhs: rademacher_term + radius * root,
        radius,
        rhs_safety: rademacher_term + SAFETY_FACTOR * radius * root,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// Mean over trials of the left-hand side.
    pub lhs: f64,
    /// Mean over trials of the right-hand side.
    pub rhs: f64,
    /// Whether the satisfaction rate reaches `1 − δ`.
    pub satisfied: bool,
    pub trials: usize,
    pub satisfaction_rate: f64,
    pub lhs_trace: Vec<f64>,
    pub rhs_trace: Vec<f64>,
}

/// Source of i.i.d. path samples: `(n, stream) -> ensemble`.
pub type Sampler<'a> = dyn Fn(usize, u64) -> Result<PathEnsemble> + Sync + 'a;

/// Repeat `trials` times: draw `n` paths, compare their mean feature with an
/// oracle mean from `oracle_size` independent paths, and check the bound.
#[allow(clippy::too_many_arguments)]
pub fn generalization_trial(
    sampler: &Sampler<'_>,
    n: usize,
    delta: f64,
    geometry: &Geometry,
    oracle_size: usize,
    trials: usize,
    draws: usize,
    seed: u64,
) -> Result<BoundReport> {
    if trials == 0 || n == 0 {
        return Err(Error::InvalidConfig("need n >= 1 and trials >= 1".into()));
    }
    let oracle = mean(&features(&sampler(oracle_size, u64::MAX)?, geometry)?);
    let rows = (0..trials as u64)
        .into_par_iter()
        .map(|t| -> Result<(f64, f64)> {
            let sample = features(&sampler(n, t)?, geometry)?;
            let lhs = geometry.norm(&(&oracle - mean(&sample)));
            let rhs = generalization_bound_rhs(&sample, delta, geometry, draws, seed ^ t.wrapping_mul(0x2545_F491_4F6C_DD1D))?;
            Ok((lhs, rhs.rhs))
        })
        .collect::<Result<Vec<_>>>()?;
    let ok = rows.iter().filter(|(l, r)| l <= r).count();
    let rate = ok as f64 / trials as f64;
    let tn = trials as f64;
    Ok(BoundReport {
        lhs: rows.iter().map(|r| r.0).sum::<f64>() / tn,
        rhs: rows.iter().map(|r| r.1).sum::<f64>() / tn,
        satisfied: rate >= 1.0 - delta,
        trials,
        satisfaction_rate: rate,
        lhs_trace: rows.iter().map(|r| r.0).collect(),
        rhs_trace: rows.iter().map(|r| r.1).collect(),
    })
}

/// `(M/n) √(Σ ‖φ_i‖²_Q)`.
pub fn rademacher_bound(feats: &[Features], big_m: f64, geometry: &Geometry) -> Result<f64> {
    if feats.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    if !(big_m >= 0.0) {
        return Err(Error::InvalidConfig("M must be non-negative".into()));
    }
    let s: f64 = feats.iter().map(|f| geometry.inner(f, f).max(0.0)).sum();
    Ok(big_m / feats.len() as f64 * s.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarlo {
    pub mean: f64,
    pub std_error: f64,
    pub draws: usize,
}

/// Mean over sign draws of `(M/n) ‖Σ σ_i φ_i‖_Q` with its standard error.
pub fn rademacher_mc(feats: &[Features], big_m: f64, geometry: &Geometry, draws: usize, seed: u64) -> Result<MonteCarlo> {
    if feats.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    if draws < 2 {
        return Err(Error::InvalidConfig("need at least two draws".into()));
    }
    let scale = big_m / feats.len() as f64;
    if feats.len() == 1 {
        // every sign gives the same norm
        return Ok(MonteCarlo {
            mean: scale * geometry.norm(&feats[0]),
            std_error: 0.0,
            draws,
        });
    }
    let vals: Vec<f64> = (0..draws as u64)
        .into_par_iter()
        .map(|k| scale * signed_sum_norm(feats, geometry, seed, k))
        .collect();
    let nd = draws as f64;
    let m = vals.iter().sum::<f64>() / nd;
    let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (nd - 1.0);
    Ok(MonteCarlo {
        mean: m,
        std_error: (var / nd).sqrt(),
        draws,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub m_prime: usize,
    pub eps_proj: f64,
    pub tail: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub rows: Vec<ProbeRow>,
    /// `ε / √tail` at the smallest `m'` with a positive tail.
    pub c_fit: f64,
    pub m_fit: usize,
}

impl ProbeReport {
    pub fn monotone(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].eps_proj <= w[0].eps_proj * (1.0 + 1e-12) + 1e-15)
    }

    /// `ε(m') ≤ factor · C_fit · √tail(m') + slack` above the fit point.
    pub fn tail_bound_holds(&self, factor: f64, slack: f64) -> bool {
        self.rows
            .iter()
            .filter(|r| r.m_prime > self.m_fit)
            .all(|r| r.eps_proj <= factor * self.c_fit * r.tail.sqrt() + slack)
    }
}

/// Projection error of the score field in the full flattened tensor space.
///
/// The feature covariance is pushed to the full space as
/// `Ω = Bᵀ cov B` with `B` the feature matrix; the per-particle field is
/// `(Ω + λI)^{-1} (Φ̂ − S_i)` and `ε(m')` is the particle RMS of its
/// component outside the top `m'` eigenvectors of `Ω`.
pub fn projection_error_probe(
    particle_sigs: &[TensorSeries],
    proxy_at_s: &TensorSeries,
    geometry: &Geometry,
    m_values: &[usize],
) -> Result<ProbeReport> {
    if particle_sigs.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let full = proxy_at_s.len();
    if full > MAX_FULL_DIM {
        return Err(Error::FullSpaceTooLarge(full));
    }
    let b = geometry.basis.feature_matrix();
    if b.ncols() != full {
        return Err(Error::DimensionMismatch("proxy shape differs from the geometry".into()));
    }
    let omega = b.transpose() * geometry.precision.cov() * &b;
    let omega = (&omega + omega.transpose()) * 0.5;
    let q = spd_inverse(&(&omega + DMatrix::identity(full, full) * geometry.precision.ridge()))
        .ok_or_else(|| Error::InvalidConfig("full-space precision is singular".into()))?;
    let (values, vectors) = sym_eigen_desc(&omega);
    let target = DVector::from_column_slice(proxy_at_s.as_slice());
    // coordinates of every field in the eigenbasis
    let coords: Vec<DVector<f64>> = particle_sigs
        .iter()
        .map(|s| {
            if s.len() != full {
                return Err(Error::DimensionMismatch("particle signature shape differs".into()));
            }
            let psi = &q * (&target - DVector::from_column_slice(s.as_slice()));
            Ok(vectors.transpose() * psi)
        })
        .collect::<Result<_>>()?;
    let n = coords.len() as f64;
    let mut ms: Vec<usize> = m_values.iter().map(|m| (*m).min(full)).collect();
    ms.sort_unstable();
    ms.dedup();
    let rows: Vec<ProbeRow> = ms
        .iter()
        .map(|&mp| {
            let e2 = coords
                .iter()
                .map(|c| c.iter().skip(mp).map(|x| x * x).sum::<f64>())
                .sum::<f64>()
                / n;
            ProbeRow {
                m_prime: mp,
                eps_proj: e2.sqrt(),
                tail: values.iter().skip(mp).map(|v| v.max(0.0)).sum(),
            }
        })
        .collect();
    let fit = rows
        .iter()
        .find(|r| r.tail > 0.0)
        .copied()
        .unwrap_or(ProbeRow { m_prime: 0, eps_proj: 0.0, tail: 0.0 });
    Ok(ProbeReport {
        c_fit: if fit.tail > 0.0 { fit.eps_proj / fit.tail.sqrt() } else { 0.0 },
        m_fit: fit.m_prime,
        rows,
    })
}
