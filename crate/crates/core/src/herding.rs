//! Kernel herding in the whitened signature geometry.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::avnsg::{Features, Geometry};
use crate::error::{Error, Result};
use crate::linalg::{linear_fit, psd_sqrt};
use crate::path::PathEnsemble;
use crate::signature::signatures;
use crate::tensor::TensorSeries;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HerdingResult {
    /// Candidate indices in selection order, repeats allowed.
    pub selected: Vec<usize>,
    /// `‖Φ* − Φ̂_k‖_Q` after each step.
    pub error_trace: Vec<f64>,
    pub residual: f64,
    /// `max_i ‖Φ* − S_i‖_Q` over the candidates.
    pub radius: f64,
    /// `<E_j, Φ* − S_{j+1}>_Q` for `j = 1 .. k-1`.
    pub cross_terms: Vec<f64>,
    /// Whitened distance from the target to the candidate hull.
    pub hull_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    /// Log-log slope of the squared error; `None` when the trace sits on the
    /// numerical floor.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub bound_satisfied: bool,
    pub residual_floor: bool,
}

/// Herd `k` selections from the candidate paths.
pub fn herd(target: &TensorSeries, candidates: &PathEnsemble, k: usize, geometry: &Geometry) -> Result<HerdingResult> {
    let sigs = signatures(candidates, geometry.basis.depth());
    herd_signatures(target, &sigs, k, geometry)
}

/// Herding over precomputed candidate signatures.
///
/// The first pick minimises `‖Φ* − S‖_Q`; later picks maximise
/// `<Φ* − Φ̂_j, S>_Q`. Ties go to the lowest index.
pub fn herd_signatures(
    target: &TensorSeries,
    candidates: &[TensorSeries],
    k: usize,
    geometry: &Geometry,
) -> Result<HerdingResult> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    if k == 0 {
        return Err(Error::InvalidConfig("herding needs k >= 1".into()));
    }
    let phi_t = geometry.project(target)?;
    let feats = candidates
        .par_iter()
        .map(|s| geometry.project(s))
        .collect::<Result<Vec<_>>>()?;
    herd_features(&phi_t, &feats, k, geometry)
}

pub fn herd_features(phi_t: &Features, feats: &[Features], k: usize, geometry: &Geometry) -> Result<HerdingResult> {
    if feats.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let prec = geometry.precision.prec();
    let dists: Vec<f64> = feats.par_iter().map(|f| geometry.norm(&(phi_t - f))).collect();
    let radius = dists.iter().cloned().fold(0.0, f64::max);
    let first = argmax(&dists.iter().map(|d| -d).collect::<Vec<_>>());

    let mut selected = vec![first];
    let mut sum = feats[first].clone();
    let mut err = phi_t - &sum;
    let mut error_trace = vec![geometry.norm(&err)];
    let mut cross_terms = Vec::with_capacity(k.saturating_sub(1));
    for j in 1..k {
        let qe = prec * &err;
        // with a vanishing residual the linear rule is flat; keep the error
        // at zero by re-picking the closest candidate
        let next = if error_trace[j - 1] <= 1e-12 * radius.max(f64::MIN_POSITIVE) {
            first
        } else {
            let scores: Vec<f64> = feats.par_iter().map(|f| qe.dot(f)).collect();
            argmax(&scores)
        };
        cross_terms.push(qe.dot(&(phi_t - &feats[next])));
        selected.push(next);
        sum += &feats[next];
        err = phi_t - &sum / (j + 1) as f64;
        error_trace.push(geometry.norm(&err));
    }
    Ok(HerdingResult {
        residual: *error_trace.last().expect("k >= 1"),
        hull_distance: hull_distance(phi_t, feats, geometry, 2000),
        selected,
        error_trace,
        radius,
        cross_terms,
    })
}

fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

/// Whitened distance from `phi_t` to the convex hull of `feats`, by
/// pairwise Frank–Wolfe on the simplex with exact line search.
pub fn hull_distance(phi_t: &Features, feats: &[Features], geometry: &Geometry, iterations: usize) -> f64 {
    let root = psd_sqrt(geometry.precision.prec());
    let z: Vec<DVector<f64>> = feats.iter().map(|f| &root * f).collect();
    let target = &root * phi_t;
    let start = (0..z.len())
        .min_by(|&a, &b| (&z[a] - &target).norm().total_cmp(&(&z[b] - &target).norm()))
        .expect("nonempty");
    let mut w = vec![0.0; z.len()];
    w[start] = 1.0;
    let mut x = z[start].clone();
    for _ in 0..iterations {
        let g = &x - &target;
        let scores: Vec<f64> = z.iter().map(|zi| zi.dot(&g)).collect();
        let toward = (0..z.len()).min_by(|&a, &b| scores[a].total_cmp(&scores[b])).expect("nonempty");
        let away = (0..z.len())
            .filter(|&i| w[i] > 0.0)
            .max_by(|&a, &b| scores[a].total_cmp(&scores[b]))
            .expect("weights sum to one");
        let dir = &z[toward] - &z[away];
        let dd = dir.norm_squared();
        let descent = -g.dot(&dir);
        if dd == 0.0 || descent <= 1e-15 * (1.0 + g.norm_squared()) {
            break;
        }
        let step = (descent / dd).clamp(0.0, w[away]);
        w[toward] += step;
        w[away] -= step;
        x += dir * step;
    }
    (x - target).norm()
}

/// Rate diagnostics over the error trace; needs at least 20 steps.
pub fn herding_rate_report(result: &HerdingResult) -> Result<RateReport> {
    let k = result.error_trace.len();
    if k < 20 {
        return Err(Error::TraceTooShort(k));
    }
    let r2 = result.radius * result.radius;
    let floor = (1e-10 * result.radius.max(f64::MIN_POSITIVE)).powi(2);
    let bound_satisfied = result
        .error_trace
        .iter()
        .enumerate()
        .all(|(i, e)| e * e <= r2 / (i + 1) as f64 * (1.0 + 1e-12) + 1e-300);
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for j in (k / 4).max(1)..=k {
        let e2 = result.error_trace[j - 1].powi(2);
        if e2 > floor {
            xs.push((j as f64).ln());
            ys.push(e2.ln());
        }
    }
    let residual_floor = xs.len() < (k - (k / 4).max(1) + 1);
    if xs.len() < 2 {
        return Ok(RateReport {
            slope: None,
            intercept: None,
            bound_satisfied,
            residual_floor: true,
        });
    }
    let (slope, intercept) = linear_fit(&xs, &ys);
    Ok(RateReport {
        slope: Some(slope),
        intercept: Some(intercept),
        bound_satisfied,
        residual_floor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::avnsg::NystromBasis;
    use crate::signature::{marcus_signature, mean_series};
    use crate::synthgen::{gen_merton, MertonParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64, n: usize) -> (Vec<TensorSeries>, Geometry) {
        let params = MertonParams {
            jump_rate: 1.0,
            jump_std: vec![0.3],
            ..MertonParams::brownian(1, 0.5)
        };
        let ens = gen_merton(&params, n.max(12), 8, 1.0, seed).unwrap().ensemble;
        // vary the durations so the signatures span the time directions
        let sigs: Vec<TensorSeries> = ens
            .paths()
            .iter()
            .enumerate()
            .map(|(i, p)| marcus_signature(&p.restrict(0.0, 0.3 + 0.7 * ((i * 7) % 10) as f64 / 9.0).unwrap(), 3))
            .take(n)
            .collect();
        let basis = NystromBasis::from_signatures(&sigs, 12.min(n)).unwrap();
        let g = Geometry::with_empirical_cov(basis, &sigs, 1e-2).unwrap();
        (sigs, g)
    }

    #[test]
    fn exact_match_selects_that_candidate() {
        let (sigs, g) = setup(1, 30);
        let r = herd_signatures(&sigs[7], &sigs, 1, &g).unwrap();
        assert_eq!(r.selected, vec![7]);
        assert!(r.residual <= 1e-10);
        let one = herd_signatures(&sigs[3], &sigs[5..6], 1, &g).unwrap();
        assert_eq!(one.selected, vec![0]);
        let direct = g.norm(&(g.project(&sigs[3]).unwrap() - g.project(&sigs[5]).unwrap()));
        assert!((one.residual - direct).abs() < 1e-12 * (1.0 + direct));
        assert!(matches!(herd_signatures(&sigs[0], &[], 3, &g), Err(Error::EmptyCandidates)));
    }

    #[test]
    fn two_point_mean_rate() {
        let (sigs, g) = setup(2, 30);
        let target = mean_series(&[sigs[4].clone(), sigs[9].clone()]).unwrap();
        let r = herd_signatures(&target, &sigs, 200, &g).unwrap();
        let rep = herding_rate_report(&r).unwrap();
        assert!(rep.bound_satisfied);
        assert!(rep.slope.unwrap() <= -0.8, "{rep:?}");
        assert!(r.cross_terms.iter().all(|c| *c <= 1e-12));
        assert!(r.hull_distance < 1e-6);
        assert!(r.selected.iter().all(|i| *i < sigs.len()));
    }

    #[test]
    fn floor_flag_on_exact_match() {
        let (sigs, g) = setup(3, 10);
        let r = herd_signatures(&sigs[2], &sigs, 40, &g).unwrap();
        let rep = herding_rate_report(&r).unwrap();
        assert!(rep.residual_floor);
        let short = herd_signatures(&sigs[2], &sigs, 10, &g).unwrap();
        assert!(matches!(herding_rate_report(&short), Err(Error::TraceTooShort(10))));
    }

    #[test]
    fn outside_hull_reports_distance() {
        let (sigs, g) = setup(4, 20);
        let far = marcus_signature(&crate::path::CadlagPath::new(vec![0.0, 1.0], vec![vec![0.0], vec![25.0]], vec![false; 2]).unwrap(), 3);
        let r = herd_signatures(&far, &sigs, 30, &g).unwrap();
        assert!(r.hull_distance > 1.0);
        assert!(r.hull_distance <= r.residual + 1e-9);
    }

    #[test]
    fn beats_random_selection() {
        let mut wins = 0;
        let trials = 20;
        for t in 0..trials {
            let (sigs, g) = setup(100 + t, 150);
            let target = mean_series(&sigs).unwrap();
            let k = 30;
            let r = herd_signatures(&target, &sigs, k, &g).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(t);
            let pick: Vec<TensorSeries> = (0..k).map(|_| sigs[rng.random_range(0..sigs.len())].clone()).collect();
            let random_err = g.norm(&(g.project(&target).unwrap() - g.project(&mean_series(&pick).unwrap()).unwrap()));
            if r.residual < random_err {
                wins += 1;
            }
        }
        assert!(wins as f64 >= 0.9 * trials as f64, "{wins}/{trials}");
    }
}
