//! Marcus signatures of time-extended càdlàg paths.
//!
//! The time-extended path has `d + 1` coordinates with time as letter 0. A
//! segment of duration `dt` and displacement `dx` contributes
//! `exp((dt, dx))`; a jump contributes `exp((0, dx))`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::path::{CadlagPath, PathEnsemble};
use crate::tensor::TensorSeries;

/// Signature of the time-extended path, built by Chen concatenation of its
/// segments.
pub fn marcus_signature(path: &CadlagPath, depth: usize) -> TensorSeries {
    let mut sig = TensorSeries::unit(depth, path.dim() + 1);
    let mut inc = vec![0.0; path.dim() + 1];
    for (dt, dx, is_jump) in path.increments() {
        inc[0] = if is_jump { 0.0 } else { dt };
        inc[1..].copy_from_slice(&dx);
        sig = sig.mul_exp(&inc).expect("dimension fixed by path");
    }
    sig
}

/// `sig ⊗ exp((dt, dx))`, or `sig ⊗ exp((0, dx))` for a jump.
pub fn signature_extend(sig: &TensorSeries, dt: f64, dx: &[f64], is_jump: bool) -> Result<TensorSeries> {
    if dt < 0.0 {
        return Err(Error::NegativeDuration(dt));
    }
    if dx.len() + 1 != sig.dim() {
        return Err(Error::DimensionMismatch(format!(
            "increment of dimension {} for a signature over {} letters",
            dx.len(),
            sig.dim()
        )));
    }
    let mut inc = Vec::with_capacity(sig.dim());
    inc.push(if is_jump { 0.0 } else { dt });
    inc.extend_from_slice(dx);
    sig.mul_exp(&inc)
}

/// Derivative of `signature_extend(sig, 0, eps * e_letter)` at `eps = 0`,
/// which is `sig ⊗ e_letter`.
pub fn terminal_gradient(sig: &TensorSeries, letter: usize) -> Result<TensorSeries> {
    if letter == 0 {
        return Err(Error::TimeLetterForbidden);
    }
    sig.mul_letter(letter)
}

/// Signatures of every path, computed in parallel, in ensemble order.
pub fn signatures(ensemble: &PathEnsemble, depth: usize) -> Vec<TensorSeries> {
    ensemble
        .paths()
        .par_iter()
        .map(|p| marcus_signature(p, depth))
        .collect()
}

/// Arithmetic mean of a set of series, summed in order.
pub fn mean_series(series: &[TensorSeries]) -> Result<TensorSeries> {
    let first = series.first().ok_or(Error::EmptyEnsemble)?;
    let mut acc = TensorSeries::zero(first.depth(), first.dim());
    for s in series {
        acc.axpy(1.0, s)?;
    }
    Ok(acc.scale(1.0 / series.len() as f64))
}

/// Empirical expected signature of an ensemble.
pub fn expected_signature(ensemble: &PathEnsemble, depth: usize) -> Result<TensorSeries> {
    mean_series(&signatures(ensemble, depth))
}
