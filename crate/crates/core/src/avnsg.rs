//! Whitened signature geometry in Nyström coordinates.
//!
//! [`NystromBasis`] maps a tensor series to an `m`-vector whose Euclidean
//! inner products reproduce tensor inner products on the anchor span.
//! [`PrecisionState`] carries the feature covariance and the precision
//! `(cov + ridge·I)^{-1}`, propagated by rank-1 Sherman–Morrison updates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{spd_inverse, sym_eigen_desc};
use crate::path::PathEnsemble;
use crate::signature::signatures;
use crate::tensor::{series_len, TensorSeries};

/// Relative eigenvalue floor used when whitening the anchor Gram matrix.
pub const EIGEN_FLOOR: f64 = 1e-10;
/// Direct re-inversion period for the precision.
pub const RESYNC_INTERVAL: usize = 256;
pub const DEFAULT_RIDGE: f64 = 1e-3;
/// Default forgetting factor; the innovation weight is `1 - rho`.
pub const DEFAULT_FORGETTING: f64 = 0.995;

pub type Features = DVector<f64>;

#[derive(Debug, Clone)]
pub struct NystromBasis {
    anchors: Vec<TensorSeries>,
    gram: DMatrix<f64>,
    whitener: DMatrix<f64>,
    rank: usize,
}

impl NystromBasis {
    /// Select up to `m` anchors from the signatures of `anchor_paths` by greedy
    /// pivoted Cholesky on their Gram matrix.
    pub fn build(anchor_paths: &PathEnsemble, m: usize, depth: usize) -> Result<Self> {
        if anchor_paths.len() < m {
            return Err(Error::InsufficientAnchors {
                needed: m,
                got: anchor_paths.len(),
            });
        }
        Self::from_signatures(&signatures(anchor_paths, depth), m)
    }

    /// Same as [`NystromBasis::build`] starting from precomputed signatures.
    pub fn from_signatures(pool: &[TensorSeries], m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidConfig("Nyström rank must be positive".into()));
        }
        if pool.len() < m {
            return Err(Error::InsufficientAnchors {
                needed: m,
                got: pool.len(),
            });
        }
        let n = pool.len();
        let mut diag: Vec<f64> = pool.iter().map(|s| s.inner(s)).collect::<Result<_>>()?;
        let max_diag = diag.iter().cloned().fold(0.0, f64::max);
        let mut chol_cols: Vec<Vec<f64>> = Vec::new();
        let mut picked: Vec<usize> = Vec::new();
        while picked.len() < m {
            let (p, &dp) = diag
                .iter()
                .enumerate()
                .filter(|(i, _)| !picked.contains(i))
                .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                .expect("pool larger than selection");
            if !(dp > EIGEN_FLOOR * max_diag) {
                break;
            }
            let root = dp.sqrt();
            let col: Vec<f64> = (0..n)
                .map(|i| {
                    let g = pool[i].inner(&pool[p]).expect("checked dims");
                    let prev: f64 = chol_cols.iter().map(|c| c[i] * c[p]).sum();
                    (g - prev) / root
                })
                .collect();
            for i in 0..n {
                diag[i] -= col[i] * col[i];
            }
            chol_cols.push(col);
            picked.push(p);
        }
        let anchors: Vec<TensorSeries> = picked.iter().map(|&i| pool[i].clone()).collect();
        let basis = Self::from_anchors(anchors)?;
        let achievable = m.min(series_len(pool[0].dim(), pool[0].depth()));
        if 2 * basis.rank < achievable {
            return Err(Error::RankDeficient {
                retained: basis.rank,
                requested: m,
            });
        }
        Ok(basis)
    }

    /// Basis over a fixed anchor list, in the given order.
    pub fn from_anchors(anchors: Vec<TensorSeries>) -> Result<Self> {
        let first = anchors.first().ok_or(Error::EmptyEnsemble)?;
        let (depth, dim) = (first.depth(), first.dim());
        if anchors.iter().any(|a| a.depth() != depth || a.dim() != dim) {
            return Err(Error::DimensionMismatch("anchors disagree in shape".into()));
        }
        let m = anchors.len();
        let gram = DMatrix::from_fn(m, m, |i, j| anchors[i].inner(&anchors[j]).expect("checked"));
        let (values, vectors) = sym_eigen_desc(&gram);
        let top = values[0].max(0.0);
        let mut rank = 0;
        let inv_sqrt = DVector::from_iterator(
            m,
            values.iter().map(|&v| {
                if v > EIGEN_FLOOR * top && v > 0.0 {
                    rank += 1;
                    1.0 / v.sqrt()
                } else {
                    0.0
                }
            }),
        );
        let whitener = &vectors * DMatrix::from_diagonal(&inv_sqrt) * vectors.transpose();
        Ok(NystromBasis {
            anchors,
            gram,
            whitener,
            rank,
        })
    }

    /// Length of the feature vectors.
    pub fn dim(&self) -> usize {
        self.anchors.len()
    }

    /// Retained rank of the whitened Gram matrix.
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn depth(&self) -> usize {
        self.anchors[0].depth()
    }

    pub fn alphabet(&self) -> usize {
        self.anchors[0].dim()
    }

    pub fn anchors(&self) -> &[TensorSeries] {
        &self.anchors
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn whitener(&self) -> &DMatrix<f64> {
        &self.whitener
    }

    /// `whitener · [<anchor_i, s>]_i`.
    pub fn project(&self, s: &TensorSeries) -> Result<Features> {
        let raw = self
            .anchors
            .iter()
            .map(|a| a.inner(s))
            .collect::<Result<Vec<_>>>()?;
        Ok(&self.whitener * DVector::from_vec(raw))
    }

    /// Tensor series representing the feature-space functional `psi`:
    /// `<lift(psi), s> = psi · project(s)` for every `s`.
    pub fn lift(&self, psi: &Features) -> TensorSeries {
        let coeffs = &self.whitener * psi;
        let mut out = TensorSeries::zero(self.depth(), self.alphabet());
        for (c, a) in coeffs.iter().zip(&self.anchors) {
            out.axpy(*c, a).expect("shape checked");
        }
        out
    }

    /// Rows are the flattened tensors whose inner products give the features,
    /// i.e. `project(s) = matrix · flatten(s)`.
    pub fn feature_matrix(&self) -> DMatrix<f64> {
        let d = self.anchors[0].len();
        let a = DMatrix::from_fn(self.dim(), d, |i, j| self.anchors[i].as_slice()[j]);
        &self.whitener * a
    }
}

/// `prec - alpha (prec k)(prec k)^T / (1 + alpha k^T prec k)`.
pub fn sherman_morrison_update(prec: &DMatrix<f64>, k: &Features, alpha: f64) -> Result<DMatrix<f64>> {
    if alpha == 0.0 {
        return Ok(prec.clone());
    }
    let pk = prec * k;
    let denom = 1.0 + alpha * k.dot(&pk);
    if !(denom > 1e-12) {
        return Err(Error::DenominatorDegenerate(denom));
    }
    let mut out = prec.clone();
    let c = alpha / denom;
    let n = pk.len();
    for j in 0..n {
        for i in 0..n {
            out[(i, j)] -= c * pk[i] * pk[j];
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct PrecisionState {
    cov: DMatrix<f64>,
    prec: DMatrix<f64>,
    ridge: f64,
    updates_since_resync: usize,
}

impl PrecisionState {
    /// Zero covariance; precision `I / ridge`.
    pub fn new(m: usize, ridge: f64) -> Result<Self> {
        Self::from_cov(DMatrix::zeros(m, m), ridge)
    }

    pub fn from_cov(cov: DMatrix<f64>, ridge: f64) -> Result<Self> {
        if !(ridge > 0.0) {
            return Err(Error::InvalidConfig(format!("ridge must be positive, got {ridge}")));
        }
        if cov.nrows() != cov.ncols() {
            return Err(Error::DimensionMismatch("covariance must be square".into()));
        }
        let cov = (&cov + cov.transpose()) * 0.5;
        let mut state = PrecisionState {
            prec: DMatrix::zeros(cov.nrows(), cov.nrows()),
            cov,
            ridge,
            updates_since_resync: 0,
        };
        state.resync()?;
        Ok(state)
    }

    pub fn dim(&self) -> usize {
        self.cov.nrows()
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn prec(&self) -> &DMatrix<f64> {
        &self.prec
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn updates_since_resync(&self) -> usize {
        self.updates_since_resync
    }

    /// Recompute the precision by direct inversion.
    pub fn resync(&mut self) -> Result<()> {
        let m = self.dim();
        let reg = &self.cov + DMatrix::identity(m, m) * self.ridge;
        self.prec = spd_inverse(&reg)
            .ok_or_else(|| Error::InvalidConfig("regularised covariance is singular".into()))?;
        self.updates_since_resync = 0;
        Ok(())
    }

    /// `cov += alpha k k^T` with the precision propagated in O(m^2); every
    /// [`RESYNC_INTERVAL`] updates the precision is re-inverted directly.
    pub fn covariance_update(&mut self, k: &Features, alpha: f64) -> Result<()> {
        if k.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "innovation of length {} for a {}-dimensional state",
                k.len(),
                self.dim()
            )));
        }
        if !(alpha >= 0.0) {
            return Err(Error::InvalidConfig(format!("innovation weight must be non-negative, got {alpha}")));
        }
        self.prec = sherman_morrison_update(&self.prec, k, alpha)?;
        self.cov.ger(alpha, k, k, 1.0);
        self.updates_since_resync += 1;
        if self.updates_since_resync >= RESYNC_INTERVAL {
            self.resync()?;
        }
        Ok(())
    }

    /// Multiply the covariance by `factor` and re-invert.
    pub fn inflate(&mut self, factor: f64) -> Result<()> {
        self.cov *= factor;
        self.resync()
    }

    pub fn apply(&self, u: &Features) -> Features {
        &self.prec * u
    }

    pub fn whitened_inner(&self, u: &Features, v: &Features) -> f64 {
        u.dot(&(&self.prec * v))
    }

    pub fn whitened_norm(&self, u: &Features) -> f64 {
        self.whitened_inner(u, u).max(0.0).sqrt()
    }

    /// Sum of the covariance eigenvalues beyond the `m_prime` largest.
    pub fn spectral_tail(&self, m_prime: usize) -> f64 {
        let (values, _) = sym_eigen_desc(&self.cov);
        values.iter().skip(m_prime).map(|v| v.max(0.0)).sum()
    }

    pub fn spectral_radius(&self) -> f64 {
        sym_eigen_desc(&self.cov).0.first().copied().unwrap_or(0.0).max(0.0)
    }

    /// Relative Frobenius distance between the propagated precision and a
    /// fresh inverse.
    pub fn precision_drift(&self) -> f64 {
        let m = self.dim();
        let direct = spd_inverse(&(&self.cov + DMatrix::identity(m, m) * self.ridge)).expect("ridge > 0");
        crate::linalg::frobenius(&(&self.prec - &direct)) / crate::linalg::frobenius(&direct)
    }
}

/// Anchors plus precision: everything needed to measure whitened distances
/// between tensor series.
#[derive(Debug, Clone)]
pub struct Geometry {
    pub basis: NystromBasis,
    pub precision: PrecisionState,
}

impl Geometry {
    /// Basis with a zero covariance.
    pub fn new(basis: NystromBasis, ridge: f64) -> Result<Self> {
        let precision = PrecisionState::new(basis.dim(), ridge)?;
        Ok(Geometry { basis, precision })
    }

    /// Basis with the covariance set to the empirical covariance of `samples`.
    pub fn with_empirical_cov(basis: NystromBasis, samples: &[TensorSeries], ridge: f64) -> Result<Self> {
        let feats = samples.iter().map(|s| basis.project(s)).collect::<Result<Vec<_>>>()?;
        let cov = empirical_cov(&feats)?;
        Ok(Geometry {
            precision: PrecisionState::from_cov(cov, ridge)?,
            basis,
        })
    }

    pub fn project(&self, s: &TensorSeries) -> Result<Features> {
        self.basis.project(s)
    }

    pub fn norm(&self, u: &Features) -> f64 {
        self.precision.whitened_norm(u)
    }

    pub fn inner(&self, u: &Features, v: &Features) -> f64 {
        self.precision.whitened_inner(u, v)
    }

    pub fn snapshot(&self) -> GeometrySnapshot {
        let cov = self.precision.cov();
        GeometrySnapshot {
            ridge: self.precision.ridge(),
            cov: (0..cov.nrows()).map(|i| cov.row(i).iter().copied().collect()).collect(),
            anchors: self.basis.anchors().to_vec(),
        }
    }
}

/// Population covariance `(1/n) sum (f - mean)(f - mean)^T`.
pub fn empirical_cov(feats: &[Features]) -> Result<DMatrix<f64>> {
    let first = feats.first().ok_or(Error::EmptyEnsemble)?;
    let m = first.len();
    let n = feats.len() as f64;
    let mean = feats.iter().fold(DVector::zeros(m), |acc, f| acc + f) / n;
    let mut cov = DMatrix::zeros(m, m);
    for f in feats {
        let c = f - &mean;
        cov.ger(1.0 / n, &c, &c, 1.0);
    }
    Ok(cov)
}

/// JSON snapshot `{"ridge":..,"cov":[[..]],"anchors":[..]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometrySnapshot {
    pub ridge: f64,
    pub cov: Vec<Vec<f64>>,
    pub anchors: Vec<TensorSeries>,
}

impl GeometrySnapshot {
    pub fn restore(&self) -> Result<Geometry> {
        let basis = NystromBasis::from_anchors(self.anchors.clone())?;
        let m = basis.dim();
        if self.cov.len() != m || self.cov.iter().any(|r| r.len() != m) {
            return Err(Error::DimensionMismatch("snapshot covariance does not match anchors".into()));
        }
        let cov = DMatrix::from_fn(m, m, |i, j| self.cov[i][j]);
        Ok(Geometry {
            precision: PrecisionState::from_cov(cov, self.ridge)?,
            basis,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::frobenius;
    use crate::path::CadlagPath;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_paths(seed: u64, n: usize, d: usize) -> PathEnsemble {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let paths = (0..n)
            .map(|_| {
                let steps = 6;
                let mut x = vec![0.0; d];
                let mut times = vec![0.0];
                let mut values = vec![x.clone()];
                for k in 1..=steps {
                    for xi in x.iter_mut() {
                        *xi += rng.random_range(-0.5..0.5);
                    }
                    times.push(k as f64 * rng.random_range(0.05..0.3));
                    values.push(x.clone());
                }
                times.sort_by(f64::total_cmp);
                CadlagPath::new(times, values, vec![false; steps + 1]).unwrap()
            })
            .collect();
        PathEnsemble::new(paths).unwrap()
    }

    fn random_vec(rng: &mut ChaCha8Rng, m: usize) -> Features {
        DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn single_anchor_basis() {
        let p = random_paths(1, 1, 1);
        let b = NystromBasis::build(&p, 1, 2).unwrap();
        let s = &b.anchors()[0];
        let norm = s.norm();
        assert!((b.gram()[(0, 0)] - norm * norm).abs() < 1e-12);
        assert!((b.whitener()[(0, 0)] - 1.0 / norm).abs() < 1e-12);
    }

    #[test]
    fn duplicates_are_dropped() {
        let p = random_paths(2, 1, 1).into_paths().remove(0);
        let dup = PathEnsemble::new(vec![p.clone(); 6]).unwrap();
        assert!(matches!(NystromBasis::build(&dup, 4, 3), Err(Error::RankDeficient { .. })));
        let short = random_paths(2, 2, 1);
        assert!(matches!(NystromBasis::build(&short, 4, 3), Err(Error::InsufficientAnchors { .. })));
        // two distinct paths among duplicates still give a rank-2 basis for m = 4
        let mut paths = vec![p.clone(); 5];
        paths.push(random_paths(9, 1, 1).into_paths().remove(0));
        let b = NystromBasis::build(&PathEnsemble::new(paths).unwrap(), 4, 3).unwrap();
        assert_eq!(b.rank(), 2);
        assert_eq!(b.dim(), 2);
    }

    #[test]
    fn projection_reproduces_gram_on_span() {
        let pool = random_paths(3, 20, 2);
        let b = NystromBasis::build(&pool, 8, 3).unwrap();
        let w = b.whitener();
        assert!(frobenius(&(w * b.gram() * w - DMatrix::identity(b.dim(), b.dim()))) < 1e-8);
        let feats: Vec<Features> = b.anchors().iter().map(|a| b.project(a).unwrap()).collect();
        for i in 0..b.dim() {
            for j in 0..b.dim() {
                let direct = b.anchors()[i].inner(&b.anchors()[j]).unwrap();
                assert!((feats[i].dot(&feats[j]) - direct).abs() <= 1e-8 * (1.0 + direct.abs()));
            }
        }
        // arbitrary span element
        let mut s = b.anchors()[0].scale(0.3);
        s.axpy(-1.2, &b.anchors()[3]).unwrap();
        s.axpy(0.7, &b.anchors()[5]).unwrap();
        let f = b.project(&s).unwrap();
        assert!((f.norm_squared() - s.inner(&s).unwrap()).abs() <= 1e-8 * s.inner(&s).unwrap());
        // lift is the adjoint of project
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let psi = random_vec(&mut rng, b.dim());
        let target = crate::signature::marcus_signature(&pool.paths()[15], 3);
        let lhs = b.lift(&psi).inner(&target).unwrap();
        let rhs = psi.dot(&b.project(&target).unwrap());
        assert!((lhs - rhs).abs() < 1e-9 * (1.0 + rhs.abs()));
    }

    #[test]
    fn project_is_linear() {
        let pool = random_paths(5, 12, 1);
        let b = NystromBasis::build(&pool, 6, 3).unwrap();
        let zero = TensorSeries::zero(3, 2);
        assert!(b.project(&zero).unwrap().iter().all(|x| *x == 0.0));
        let s1 = b.anchors()[0].clone();
        let s2 = crate::signature::marcus_signature(&pool.paths()[11], 3);
        let sum = b.project(&s1.add(&s2).unwrap()).unwrap();
        let parts = b.project(&s1).unwrap() + b.project(&s2).unwrap();
        assert!((sum - parts).norm() < 1e-12);
        assert!(matches!(b.project(&TensorSeries::zero(2, 2)), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn analytic_two_by_two_update() {
        let out = sherman_morrison_update(&DMatrix::identity(2, 2), &DVector::from_vec(vec![1.0, 0.0]), 1.0).unwrap();
        assert!(frobenius(&(out - DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 1.0]))) < 1e-15);
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        assert_eq!(sherman_morrison_update(&p, &DVector::from_vec(vec![1.0, 2.0]), 0.0).unwrap(), p);
        assert!(matches!(
            sherman_morrison_update(&DMatrix::identity(1, 1), &DVector::from_vec(vec![1.0]), -1.0),
            Err(Error::DenominatorDegenerate(_))
        ));
    }

    #[test]
    fn sequential_updates_track_direct_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let m = 12;
        let mut state = PrecisionState::new(m, 1e-3).unwrap();
        // stop before the periodic resync so the drift is genuine
        for _ in 0..RESYNC_INTERVAL - 1 {
            let k = random_vec(&mut rng, m) * 0.1;
            state.covariance_update(&k, 0.005).unwrap();
        }
        assert_eq!(state.updates_since_resync(), RESYNC_INTERVAL - 1);
        assert!(state.precision_drift() <= 1e-10);
        let k = random_vec(&mut rng, m);
        state.covariance_update(&k, 0.005).unwrap();
        assert_eq!(state.updates_since_resync(), 0);
        assert!(state.precision_drift() <= 1e-14);
    }

    #[test]
    fn whitened_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let m = 5;
        let zero_cov = PrecisionState::new(m, 0.25).unwrap();
        let u = random_vec(&mut rng, m);
        let v = random_vec(&mut rng, m);
        assert!((zero_cov.whitened_inner(&u, &v) - 4.0 * u.dot(&v)).abs() < 1e-12);
        assert_eq!(zero_cov.whitened_norm(&DVector::zeros(m)), 0.0);

        let a = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
        let state = PrecisionState::from_cov(&a * a.transpose(), 1e-2).unwrap();
        for _ in 0..100 {
            let u = random_vec(&mut rng, m);
            let v = random_vec(&mut rng, m);
            let lhs = state.whitened_inner(&u, &v).abs();
            assert!(lhs <= state.whitened_norm(&u) * state.whitened_norm(&v) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn whitening_shrinks_dominant_direction() {
        let m = 4;
        let e1 = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]);
        let null = DVector::from_vec(vec![0.0, 0.0, 1.0, 0.0]);
        let mut cov = DMatrix::zeros(m, m);
        cov.ger(3.0, &e1, &e1, 1.0);
        let ridge = 1e-2;
        let state = PrecisionState::from_cov(cov, ridge).unwrap();
        assert!(state.whitened_norm(&e1) <= 1.0 / ridge.sqrt());
        assert!(state.whitened_norm(&e1) < state.whitened_norm(&null));
    }

    #[test]
    fn spectral_tail_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let m = 6;
        let a = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
        let cov = &a * a.transpose();
        let state = PrecisionState::from_cov(cov.clone(), 1e-3).unwrap();
        assert!((state.spectral_tail(0) - cov.trace()).abs() < 1e-10);
        assert!(state.spectral_tail(m).abs() < 1e-15);
        let tails: Vec<f64> = (0..=m).map(|k| state.spectral_tail(k)).collect();
        assert!(tails.windows(2).all(|w| w[1] <= w[0] + 1e-14));
        assert!(tails.iter().all(|t| *t >= 0.0));
    }

    #[test]
    fn snapshot_roundtrip() {
        let pool = random_paths(6, 10, 1);
        let basis = NystromBasis::build(&pool, 5, 3).unwrap();
        let sigs = signatures(&pool, 3);
        let g = Geometry::with_empirical_cov(basis, &sigs, 1e-3).unwrap();
        let js = serde_json::to_string(&g.snapshot()).unwrap();
        let snap: GeometrySnapshot = serde_json::from_str(&js).unwrap();
        let back = snap.restore().unwrap();
        let f = g.project(&sigs[7]).unwrap();
        let f2 = back.project(&sigs[7]).unwrap();
        assert!((f - &f2).norm() < 1e-12);
        assert!((g.norm(&f2) - back.norm(&f2)).abs() < 1e-9 * g.norm(&f2));
        let v: serde_json::Value = serde_json::from_str(&js).unwrap();
        assert!(v.get("ridge").is_some() && v.get("cov").is_some() && v.get("anchors").is_some());
    }
}
