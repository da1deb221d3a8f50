//! Synthetic reference measures, the constant-velocity actor path and the
//! proxy builder.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::ProxyTrajectory;
use crate::path::{CadlagPath, PathEnsemble};
use crate::rng;
use crate::signature::mean_series;
use crate::tensor::TensorSeries;

/// Merton-type jump-diffusion: Brownian motion with drift plus compound
/// Poisson jumps with normal amplitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MertonParams {
    pub drift: Vec<f64>,
    pub vol: Vec<f64>,
    pub jump_rate: f64,
    pub jump_mean: Vec<f64>,
    pub jump_std: Vec<f64>,
    pub clip: f64,
}

impl MertonParams {
    /// Driftless diffusion without jumps.
    pub fn brownian(d: usize, vol: f64) -> Self {
        MertonParams {
            drift: vec![0.0; d],
            vol: vec![vol; d],
            jump_rate: 0.0,
            jump_mean: vec![0.0; d],
            jump_std: vec![0.0; d],
            clip: 1e3,
        }
    }

    pub fn dim(&self) -> usize {
        self.drift.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.drift.len();
        if d == 0 || [&self.vol, &self.jump_mean, &self.jump_std].iter().any(|v| v.len() != d) {
            return Err(Error::InvalidConfig("Merton parameter vectors must share one nonzero length".into()));
        }
        if self.vol.iter().chain(&self.jump_std).any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidConfig("volatilities must be non-negative".into()));
        }
        if !(self.jump_rate >= 0.0) {
            return Err(Error::InvalidConfig("jump rate must be non-negative".into()));
        }
        if !(self.clip > 0.0) {
            return Err(Error::InvalidConfig("clip must be positive".into()));
        }
        Ok(())
    }
}

/// Two Merton regimes separated by a deterministic break.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSwitchParams {
    pub before: MertonParams,
    pub after: MertonParams,
    pub switch_time: f64,
    pub switch_jump: Vec<f64>,
}

/// Generator output; `clipped` counts clamped coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub ensemble: PathEnsemble,
    pub clipped: usize,
}

struct Builder {
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
    jumps: Vec<bool>,
    x: Vec<f64>,
    clip: f64,
    clipped: usize,
}

impl Builder {
    fn new(d: usize, clip: f64) -> Self {
        Builder {
            times: vec![0.0],
            values: vec![vec![0.0; d]],
            jumps: vec![false],
            x: vec![0.0; d],
            clip,
            clipped: 0,
        }
    }

    fn push(&mut self, t: f64, dx: &[f64], jump: bool) {
        for (x, d) in self.x.iter_mut().zip(dx) {
            *x += d;
            if x.abs() > self.clip {
                *x = x.clamp(-self.clip, self.clip);
                self.clipped += 1;
            }
        }
        self.times.push(t);
        self.values.push(self.x.clone());
        self.jumps.push(jump);
    }

    /// One Euler interval of length `dt` ending at `t`.
    fn interval<R: Rng>(&mut self, rng: &mut R, p: &MertonParams, t: f64, dt: f64) {
        let sq = dt.sqrt();
        let dx: Vec<f64> = (0..p.dim())
            .map(|i| {
                let z: f64 = rng.sample(StandardNormal);
                p.drift[i] * dt + p.vol[i] * sq * z
            })
            .collect();
        let n_jumps = rng::poisson(rng, p.jump_rate * dt);
        self.push(t, &dx, false);
        for _ in 0..n_jumps {
            let amp: Vec<f64> = (0..p.dim())
                .map(|i| {
                    let z: f64 = rng.sample(StandardNormal);
                    p.jump_mean[i] + p.jump_std[i] * z
                })
                .collect();
            self.push(t, &amp, true);
        }
    }

    fn finish(self) -> (CadlagPath, usize) {
        let clipped = self.clipped;
        let path = CadlagPath::new(self.times, self.values, self.jumps).expect("generator builds valid paths");
        (path, clipped)
    }
}

fn collect(results: Vec<(CadlagPath, usize)>) -> Result<Generated> {
    let clipped = results.iter().map(|r| r.1).sum();
    let ensemble = PathEnsemble::new(results.into_iter().map(|r| r.0).collect())?;
    Ok(Generated { ensemble, clipped })
}

fn check_grid(n: usize, steps: usize, horizon: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::EmptyEnsemble);
    }
    if steps == 0 || !(horizon > 0.0) {
        return Err(Error::InvalidConfig("need steps >= 1 and a positive horizon".into()));
    }
    Ok(())
}

/// `n` paths on `[0, horizon]` starting at the origin, `steps` Euler intervals
/// each. Path `i` draws from its own stream.
pub fn gen_merton(params: &MertonParams, n: usize, steps: usize, horizon: f64, seed: u64) -> Result<Generated> {
    params.validate()?;
    check_grid(n, steps, horizon)?;
    let dt = horizon / steps as f64;
    let results = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(seed, rng::GEN_MERTON, i as u64);
            let mut b = Builder::new(params.dim(), params.clip);
            for k in 1..=steps {
                b.interval(&mut rng, params, k as f64 * dt, dt);
            }
            b.finish()
        })
        .collect();
    collect(results)
}

/// Regime-switching variant: at `switch_time` every path takes the flagged
/// deterministic jump `switch_jump` and continues under `after`.
pub fn gen_regime_switch(
    params: &RegimeSwitchParams,
    n: usize,
    steps: usize,
    horizon: f64,
    seed: u64,
) -> Result<Generated> {
    params.before.validate()?;
    params.after.validate()?;
    check_grid(n, steps, horizon)?;
    let d = params.before.dim();
    if params.after.dim() != d || params.switch_jump.len() != d {
        return Err(Error::InvalidConfig("regime dimensions differ".into()));
    }
    let ts = params.switch_time;
    if !(ts > 0.0 && ts < horizon) {
        return Err(Error::SwitchOutsideHorizon(ts));
    }
    let dt = horizon / steps as f64;
    let clip = params.before.clip.min(params.after.clip);
    let results = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(seed, rng::GEN_REGIME, i as u64);
            let mut b = Builder::new(d, clip);
            let mut t = 0.0;
            let mut switched = false;
            for k in 1..=steps {
                let t_next = k as f64 * dt;
                if !switched && ts <= t_next {
                    if ts > t {
                        b.interval(&mut rng, &params.before, ts, ts - t);
                    }
                    b.push(ts, &params.switch_jump, true);
                    switched = true;
                    t = ts;
                    if t_next > t {
                        b.interval(&mut rng, &params.after, t_next, t_next - t);
                    }
                } else {
                    let p = if switched { &params.after } else { &params.before };
                    b.interval(&mut rng, p, t_next, t_next - t);
                }
                t = t_next;
            }
            b.finish()
        })
        .collect();
    collect(results)
}

/// Deterministic extension `x(s) = x_start + v (s - t_start)` on `steps`
/// equal segments.
pub fn actor_path(velocity: &[f64], x_start: &[f64], t_start: f64, horizon: f64, steps: usize) -> Result<CadlagPath> {
    if steps == 0 || !(horizon >= 0.0) || velocity.len() != x_start.len() {
        return Err(Error::InvalidConfig("actor path needs steps >= 1, horizon >= 0 and matching dimensions".into()));
    }
    if horizon == 0.0 {
        return CadlagPath::constant(t_start, x_start.to_vec());
    }
    let times: Vec<f64> = (0..=steps).map(|k| t_start + horizon * k as f64 / steps as f64).collect();
    let values = times
        .iter()
        .map(|t| x_start.iter().zip(velocity).map(|(x, v)| x + v * (t - t_start)).collect())
        .collect();
    CadlagPath::new(times, values, vec![false; steps + 1])
}

/// Signatures of `path` restricted to `[t_start, s]` for each (sorted) `s`.
pub fn restricted_signatures(path: &CadlagPath, t_start: f64, grid: &[f64], depth: usize) -> Result<Vec<TensorSeries>> {
    if t_start < path.start_time() {
        return Err(Error::GridOutsideSupport(t_start));
    }
    if let Some(&s) = grid.iter().find(|&&s| s < t_start || s > path.end_time()) {
        return Err(Error::GridOutsideSupport(s));
    }
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidConfig("grid must be sorted".into()));
    }
    let d = path.dim();
    let mut sig = TensorSeries::unit(depth, d + 1);
    let mut cur_t = t_start;
    let mut cur_x = path.value_at(t_start);
    let mut k = path.times().partition_point(|&t| t <= t_start);
    let mut inc = vec![0.0; d + 1];
    let mut out = Vec::with_capacity(grid.len());
    for &s in grid {
        while k < path.len() && path.times()[k] <= s {
            let x = &path.values()[k];
            inc[0] = if path.jumps()[k] { 0.0 } else { path.times()[k] - cur_t };
            for i in 0..d {
                inc[i + 1] = x[i] - cur_x[i];
            }
            sig = sig.mul_exp(&inc)?;
            cur_t = path.times()[k];
            cur_x.clone_from(x);
            k += 1;
        }
        if cur_t < s {
            let x = path.value_at(s);
            inc[0] = s - cur_t;
            for i in 0..d {
                inc[i + 1] = x[i] - cur_x[i];
            }
            sig = sig.mul_exp(&inc)?;
            cur_t = s;
            cur_x = x;
        }
        out.push(sig.clone());
    }
    Ok(out)
}

/// Proxy trajectory whose value at grid time `s` is the expected signature
/// of the reference paths restricted to `[t_start, s]`.
pub fn build_proxy(reference: &PathEnsemble, t_start: f64, grid: &[f64], depth: usize) -> Result<ProxyTrajectory> {
    let per_path = reference
        .paths()
        .par_iter()
        .map(|p| restricted_signatures(p, t_start, grid, depth))
        .collect::<Result<Vec<_>>>()?;
    let proxies = (0..grid.len())
        .map(|g| {
            let at_g: Vec<TensorSeries> = per_path.iter().map(|sigs| sigs[g].clone()).collect();
            mean_series(&at_g)
        })
        .collect::<Result<Vec<_>>>()?;
    ProxyTrajectory::new(grid.to_vec(), proxies)
}

/// `n + 1` equally spaced times covering `[t0, t1]`.
pub fn uniform_grid(t0: f64, t1: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|k| t0 + (t1 - t0) * k as f64 / n as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signature::{expected_signature, marcus_signature};

    fn merton(d: usize) -> MertonParams {
        MertonParams {
            drift: vec![0.2; d],
            vol: vec![0.3; d],
            jump_rate: 2.0,
            jump_mean: vec![0.1; d],
            jump_std: vec![0.2; d],
            clip: 50.0,
        }
    }

    #[test]
    fn deterministic_lines() {
        let p = MertonParams {
            drift: vec![1.0],
            vol: vec![0.0],
            jump_rate: 0.0,
            jump_mean: vec![0.0],
            jump_std: vec![0.0],
            clip: 10.0,
        };
        let g = gen_merton(&p, 3, 10, 1.0, 1).unwrap();
        for path in g.ensemble.paths() {
            for (t, x) in path.times().iter().zip(path.values()) {
                assert!((x[0] - t).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn poisson_jump_count() {
        let g = gen_merton(&merton(1), 1000, 50, 1.0, 4).unwrap();
        let mean = g.ensemble.paths().iter().map(|p| p.jump_count()).sum::<usize>() as f64 / 1000.0;
        assert!((1.8..=2.2).contains(&mean), "mean jump count {mean}");
        assert_eq!(g.clipped, 0);
    }

    #[test]
    fn seeds_reproduce() {
        let a = gen_merton(&merton(2), 20, 30, 1.0, 9).unwrap();
        let b = gen_merton(&merton(2), 20, 30, 1.0, 9).unwrap();
        let c = gen_merton(&merton(2), 20, 30, 1.0, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let d = pool.install(|| gen_merton(&merton(2), 20, 30, 1.0, 9).unwrap());
        assert_eq!(a, d);
    }

    #[test]
    fn clipping_is_counted() {
        let mut p = merton(1);
        p.drift = vec![100.0];
        p.clip = 1.0;
        let g = gen_merton(&p, 2, 10, 1.0, 1).unwrap();
        assert!(g.clipped > 0);
        assert!(g.ensemble.paths().iter().flat_map(|p| p.values()).all(|x| x[0].abs() <= 1.0));
    }

    #[test]
    fn regime_switch_jump_at_switch_time() {
        let params = RegimeSwitchParams {
            before: merton(1),
            after: MertonParams { drift: vec![-0.5], ..merton(1) },
            switch_time: 0.37,
            switch_jump: vec![1.5],
        };
        let g = gen_regime_switch(&params, 50, 10, 1.0, 2).unwrap();
        for path in g.ensemble.paths() {
            let hit = (1..path.len()).any(|k| {
                path.jumps()[k]
                    && path.times()[k] == 0.37
                    && (path.values()[k][0] - path.values()[k - 1][0] - 1.5).abs() < 1e-12
            });
            assert!(hit);
        }
        let bad = RegimeSwitchParams { switch_time: 2.0, ..params };
        assert!(matches!(gen_regime_switch(&bad, 5, 10, 1.0, 2), Err(Error::SwitchOutsideHorizon(_))));
    }

    #[test]
    fn regime_drifts_match() {
        let before = MertonParams { drift: vec![1.0], vol: vec![0.5], jump_rate: 0.0, ..merton(1) };
        let after = MertonParams { drift: vec![-2.0], ..before.clone() };
        let params = RegimeSwitchParams { before, after, switch_time: 0.5, switch_jump: vec![0.0] };
        let n = 400;
        let g = gen_regime_switch(&params, n, 20, 1.0, 3).unwrap();
        let (mut pre, mut post) = (Vec::new(), Vec::new());
        for p in g.ensemble.paths() {
            pre.push((p.value_at(0.5)[0] - p.value_at(0.0)[0]) / 0.5);
            post.push((p.value_at(1.0)[0] - p.value_at(0.5)[0]) / 0.5);
        }
        for (sample, truth) in [(pre, 1.0), (post, -2.0)] {
            let m = sample.iter().sum::<f64>() / n as f64;
            let sd = (sample.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
            assert!((m - truth).abs() < 3.0 * sd / (n as f64).sqrt(), "{m} vs {truth}");
        }
    }

    #[test]
    fn actor_path_endpoints() {
        let p = actor_path(&[0.0, 0.0], &[1.0, 2.0], 0.0, 2.0, 4).unwrap();
        assert!(p.values().iter().all(|x| x == &vec![1.0, 2.0]));
        let p = actor_path(&[0.5], &[1.0], 1.0, 3.0, 7).unwrap();
        assert!((p.last_value()[0] - 2.5).abs() < 1e-15);
        assert_eq!(p.end_time(), 4.0);
        let fine = actor_path(&[0.5], &[1.0], 1.0, 3.0, 70).unwrap();
        assert!(marcus_signature(&p, 4).max_abs_diff(&marcus_signature(&fine, 4)) <= 1e-12);
    }

    #[test]
    fn proxy_restriction_consistency() {
        let g = gen_merton(&merton(1), 30, 20, 1.0, 5).unwrap();
        let grid = uniform_grid(0.0, 1.0, 7);
        let proxy = build_proxy(&g.ensemble, 0.0, &grid, 3).unwrap();
        assert_eq!(proxy.proxies()[0], TensorSeries::unit(3, 2));
        let full = expected_signature(&g.ensemble, 3).unwrap();
        assert!(proxy.proxies().last().unwrap().max_abs_diff(&full) <= 1e-12);
        // single reference path: proxy is its restricted signature
        let one = PathEnsemble::new(vec![g.ensemble.paths()[3].clone()]).unwrap();
        let p1 = build_proxy(&one, 0.0, &grid, 3).unwrap();
        let r = g.ensemble.paths()[3].restrict(0.0, grid[4]).unwrap();
        assert!(p1.proxies()[4].max_abs_diff(&marcus_signature(&r, 3)) <= 1e-12);
        assert!(matches!(
            build_proxy(&g.ensemble, 0.0, &[0.0, 1.5], 3),
            Err(Error::GridOutsideSupport(_))
        ));
    }
}
