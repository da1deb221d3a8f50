//! Entropic tilting of a prior ensemble onto a target mean feature.
//!
//! Features are whitened, `z = Q^{1/2} φ`, and the tilt is
//! `w_i ∝ exp(<α, z_i>)`. The dual `<α, z*> − log Z(α)` is concave with
//! gradient `z* − Σ w_i z_i` and Hessian the weighted covariance of `z`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::avnsg::{Features, Geometry};
use crate::error::{Error, Result};
use crate::linalg::psd_sqrt;
use crate::path::PathEnsemble;
use crate::signature::signatures;

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsTilt {
    /// Dual vector in whitened coordinates.
    pub alpha: Vec<f64>,
    pub weights: Vec<f64>,
    /// `log Σ_i exp(<α, z_i>)`.
    pub log_partition: f64,
    pub kl_to_prior: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Whitened moment residual at each accepted iterate.
    pub residual_trace: Vec<f64>,
    pub dual_trace: Vec<f64>,
}

impl GibbsTilt {
    pub fn residual(&self) -> f64 {
        *self.residual_trace.last().expect("at least the initial iterate")
    }

    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NotConverged {
                residual: self.residual(),
                iterations: self.iterations,
            })
        }
    }
}

struct Whitened {
    z: Vec<DVector<f64>>,
    target: DVector<f64>,
}

struct Eval {
    weights: Vec<f64>,
    log_z: f64,
    dual: f64,
    moment: DVector<f64>,
}

impl Whitened {
    fn eval(&self, alpha: &DVector<f64>) -> Eval {
        let scores: Vec<f64> = self.z.iter().map(|z| alpha.dot(z)).collect();
        let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let raw: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
        let total: f64 = raw.iter().sum();
        let log_z = top + total.ln();
        let weights: Vec<f64> = raw.iter().map(|r| r / total).collect();
        let mut moment = DVector::zeros(self.target.len());
        for (w, z) in weights.iter().zip(&self.z) {
            moment.axpy(*w, z, 1.0);
        }
        Eval {
            dual: alpha.dot(&self.target) - log_z,
            weights,
            log_z,
            moment,
        }
    }

    fn hessian(&self, e: &Eval) -> DMatrix<f64> {
        let m = self.target.len();
        let mut h = DMatrix::zeros(m, m);
        for (w, z) in e.weights.iter().zip(&self.z) {
            let c = z - &e.moment;
            h.ger(*w, &c, &c, 1.0);
        }
        h
    }
}

/// Tilt the prior paths; features are computed in parallel.
pub fn solve_bridge(
    prior: &PathEnsemble,
    target_feat: &Features,
    geometry: &Geometry,
    tol: f64,
    max_iter: usize,
) -> Result<GibbsTilt> {
    let feats = prior_features(prior, geometry)?;
    solve_bridge_features(&feats, target_feat, geometry, tol, max_iter)
}

pub fn prior_features(prior: &PathEnsemble, geometry: &Geometry) -> Result<Vec<Features>> {
    signatures(prior, geometry.basis.depth())
        .par_iter()
        .map(|s| geometry.project(s))
        .collect()
}

/// Damped Newton ascent on the dual with Armijo backtracking. An iterate is
/// accepted only if the dual does not decrease and the residual does not
/// grow; if neither the Newton nor the gradient direction yields such a
/// point the solve stops unconverged.
pub fn solve_bridge_features(
    feats: &[Features],
    target_feat: &Features,
    geometry: &Geometry,
    tol: f64,
    max_iter: usize,
) -> Result<GibbsTilt> {
    if feats.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let m = geometry.basis.dim();
    if target_feat.len() != m || feats.iter().any(|f| f.len() != m) {
        return Err(Error::DimensionMismatch("bridge features do not match the geometry".into()));
    }
    let root = psd_sqrt(geometry.precision.prec());
    let w = Whitened {
        z: feats.iter().map(|f| &root * f).collect(),
        target: &root * target_feat,
    };
    let n = feats.len() as f64;
    let mut alpha = DVector::zeros(m);
    let mut cur = w.eval(&alpha);
    let mut grad = &w.target - &cur.moment;
    let mut residual_trace = vec![grad.norm()];
    let mut dual_trace = vec![cur.dual];
    let mut iterations = 0;
    let mut converged = grad.norm() <= tol;
    while !converged && iterations < max_iter {
        iterations += 1;
        let hess = w.hessian(&cur);
        let shift = 1e-10 * (hess.trace() / m as f64).max(1e-300);
        let newton = (hess + DMatrix::identity(m, m) * shift)
            .cholesky()
            .map(|c| c.solve(&grad))
            .filter(|d| d.iter().all(|x| x.is_finite()) && d.dot(&grad) > 0.0);
        let mut accepted = None;
        for dir in newton.into_iter().chain(std::iter::once(grad.clone())) {
            let slope = dir.dot(&grad);
            let mut t = 1.0;
            while t > 1e-14 {
                let cand = &alpha + &dir * t;
                let e = w.eval(&cand);
                let g = &w.target - &e.moment;
                if e.dual >= cur.dual + 1e-4 * t * slope && g.norm() <= grad.norm() {
                    accepted = Some((cand, e, g));
                    break;
                }
                t *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
        }
        let Some((a, e, g)) = accepted else { break };
        alpha = a;
        cur = e;
        grad = g;
        residual_trace.push(grad.norm());
        dual_trace.push(cur.dual);
        converged = grad.norm() <= tol;
    }
    let kl = (alpha.dot(&cur.moment) - cur.log_z + n.ln()).max(0.0);
    Ok(GibbsTilt {
        alpha: alpha.iter().copied().collect(),
        weights: cur.weights,
        log_partition: cur.log_z,
        kl_to_prior: kl,
        converged,
        iterations,
        residual_trace,
        dual_trace,
    })
}

/// Whitened norm of `Σ w_i φ_i − target`.
pub fn moment_residual(tilt: &GibbsTilt, feats: &[Features], target_feat: &Features, geometry: &Geometry) -> f64 {
    let mut mean = DVector::zeros(target_feat.len());
    for (w, f) in tilt.weights.iter().zip(feats) {
        mean.axpy(*w, f, 1.0);
    }
    geometry.norm(&(mean - target_feat))
}
