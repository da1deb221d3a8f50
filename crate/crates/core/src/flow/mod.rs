//! Euler–Maruyama–Marcus sampler driven by the whitened signature residual.
//!
//! Each particle carries its position, the signature of its path since
//! `t_start` and its own random stream. A step computes the score
//! `Ψ = Q (φ(Φ̂_s) − φ(S))`, moves along `η ∇_x <Ψ, S>` blended with the
//! boundary velocity, adds diffusion, and fires Poisson jumps along the best
//! dictionary amplitude. The covariance then absorbs the mean feature
//! innovation.

pub mod proxy;

pub use proxy::ProxyTrajectory;

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::avnsg::{Features, Geometry, DEFAULT_FORGETTING, DEFAULT_RIDGE};
use crate::error::{Error, Result};
use crate::path::{CadlagPath, PathEnsemble};
use crate::rng;
use crate::signature::signature_extend;
use crate::tensor::TensorSeries;

/// Multipliers applied to every dictionary amplitude.
pub const JUMP_SCALES: [f64; 3] = [0.5, 1.0, 2.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Forecast,
    Reconstruction,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forecast" => Ok(Mode::Forecast),
            "reconstruction" => Ok(Mode::Reconstruction),
            other => Err(Error::InvalidConfig(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub mode: Mode,
    pub horizon: f64,
    pub step: f64,
    pub n_particles: usize,
    #[serde(default)]
    pub diffusion_scale: f64,
    #[serde(default)]
    pub base_rate: f64,
    #[serde(default = "default_kappa")]
    pub gain_kappa: f64,
    /// Candidate jump amplitudes; `None` means `±e_i` plus zero.
    #[serde(default)]
    pub jump_dictionary: Option<Vec<Vec<f64>>>,
    pub drift_gain: f64,
    pub boundary_blend_halflife: f64,
    #[serde(default)]
    pub seed: u64,
    /// Also offer the normalised score gradient as a jump direction.
    #[serde(default)]
    pub residual_aligned_jump: bool,
    #[serde(default = "default_forgetting")]
    pub forgetting: f64,
}

fn default_kappa() -> f64 {
    1.0
}

fn default_forgetting() -> f64 {
    DEFAULT_FORGETTING
}

impl FlowConfig {
    /// Defaults scaled to the step: `η = ridge / (2h)` keeps the explicit
    /// drift stable when the covariance is small.
    pub fn new(mode: Mode, horizon: f64, step: f64, n_particles: usize, seed: u64) -> Self {
        FlowConfig {
            mode,
            horizon,
            step,
            n_particles,
            diffusion_scale: 0.1,
            base_rate: 1.0,
            gain_kappa: 1.0,
            jump_dictionary: None,
            drift_gain: 0.5 * DEFAULT_RIDGE / step,
            boundary_blend_halflife: 5.0 * step,
            seed,
            residual_aligned_jump: false,
            forgetting: DEFAULT_FORGETTING,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.step > 0.0) {
            return bad("step must be positive");
        }
        if !(self.horizon >= self.step * (1.0 - 1e-12)) {
            return bad("horizon must be at least one step");
        }
        if self.n_particles == 0 {
            return bad("need at least one particle");
        }
        if !(self.diffusion_scale >= 0.0 && self.base_rate >= 0.0) {
            return bad("diffusion scale and base rate must be non-negative");
        }
        if !(self.gain_kappa > 0.0 && self.drift_gain > 0.0 && self.boundary_blend_halflife > 0.0) {
            return bad("gain_kappa, drift_gain and boundary_blend_halflife must be positive");
        }
        if !(self.forgetting > 0.0 && self.forgetting <= 1.0) {
            return bad("forgetting must lie in (0, 1]");
        }
        if let Some(dict) = &self.jump_dictionary {
            if !dict.iter().any(|v| v.iter().all(|x| *x == 0.0)) {
                return bad("jump dictionary must contain the zero vector");
            }
        }
        self.n_steps().map(|_| ())
    }

    pub fn n_steps(&self) -> Result<usize> {
        let n = (self.horizon / self.step).round();
        if n < 1.0 || (n * self.step - self.horizon).abs() > 1e-9 * self.horizon {
            return Err(Error::InvalidConfig(format!(
                "horizon {} is not a whole number of steps of {}",
                self.horizon, self.step
            )));
        }
        Ok(n as usize)
    }

    /// Dictionary for spatial dimension `d`, zero vector included.
    pub fn dictionary(&self, d: usize) -> Result<Vec<Vec<f64>>> {
        match &self.jump_dictionary {
            Some(dict) => {
                if dict.iter().any(|v| v.len() != d) {
                    return Err(Error::DimensionMismatch(format!("jump dictionary entries must have length {d}")));
                }
                Ok(dict.clone())
            }
            None => {
                let mut out = vec![vec![0.0; d]];
                for i in 0..d {
                    for sign in [1.0, -1.0] {
                        let mut v = vec![0.0; d];
                        v[i] = sign;
                        out.push(v);
                    }
                }
                Ok(out)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParticleState {
    pub x: Vec<f64>,
    pub sig: TensorSeries,
    pub clock: f64,
    pub rng_stream: u64,
    rng: ChaCha8Rng,
    feat: Features,
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
    jumps: Vec<bool>,
}

impl ParticleState {
    fn new(x: Vec<f64>, depth: usize, clock: f64, seed: u64, index: u64, geometry: &Geometry) -> Result<Self> {
        let sig = TensorSeries::unit(depth, x.len() + 1);
        Ok(ParticleState {
            feat: geometry.project(&sig)?,
            times: vec![clock],
            values: vec![x.clone()],
            jumps: vec![false],
            x,
            sig,
            clock,
            rng_stream: index,
            rng: rng::stream(seed, rng::FLOW_PARTICLE, index),
        })
    }

    /// Path generated so far, starting at `t_start`.
    pub fn path(&self) -> CadlagPath {
        CadlagPath::new(self.times.clone(), self.values.clone(), self.jumps.clone()).expect("sampler emits valid paths")
    }

    pub fn features(&self) -> &Features {
        &self.feat
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dissipation {
    pub s: f64,
    pub loss: f64,
    pub continuous: f64,
    pub jump: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityRecord {
    pub s: f64,
    pub jump_energy: f64,
    pub continuous: f64,
    pub stable: bool,
    pub max_norm: f64,
    pub spectral_radius: f64,
}

#[derive(Debug, Clone)]
pub struct EnsembleState {
    pub particles: Vec<ParticleState>,
    pub geometry: Geometry,
    /// `J` after each step.
    pub loss_trace: Vec<f64>,
    pub initial_loss: f64,
    pub dissipation_trace: Vec<Dissipation>,
    pub stability_trace: Vec<StabilityRecord>,
    pub jump_count: usize,
    /// Smallest selected jump gain seen on any step.
    pub min_gain: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub velocity: Vec<f64>,
    pub steps_done: usize,
}

impl EnsembleState {
    /// `n_particles` copies of `x0` with empty signatures at `t_start`.
    pub fn init(
        config: &FlowConfig,
        x0: &[f64],
        velocity: &[f64],
        t_start: f64,
        geometry: Geometry,
        proxy: &ProxyTrajectory,
    ) -> Result<Self> {
        config.validate()?;
        if proxy.alphabet() != x0.len() + 1 || velocity.len() != x0.len() {
            return Err(Error::DimensionMismatch("proxy, state and velocity dimensions differ".into()));
        }
        if proxy.depth() != geometry.basis.depth() || proxy.alphabet() != geometry.basis.alphabet() {
            return Err(Error::DimensionMismatch("proxy and geometry disagree in shape".into()));
        }
        let t_end = t_start + config.n_steps()? as f64 * config.step;
        if !proxy.covers(t_start, t_end) {
            return Err(Error::ProxyGridGap {
                start: t_start,
                end: t_end,
            });
        }
        let particles = (0..config.n_particles)
            .map(|i| ParticleState::new(x0.to_vec(), proxy.depth(), t_start, config.seed, i as u64, &geometry))
            .collect::<Result<Vec<_>>>()?;
        let initial_loss = mmd_loss_features(&mean_features(&particles), &geometry.project(&proxy.at(t_start)?)?, &geometry);
        Ok(EnsembleState {
            particles,
            geometry,
            loss_trace: Vec::new(),
            initial_loss,
            dissipation_trace: Vec::new(),
            stability_trace: Vec::new(),
            jump_count: 0,
            min_gain: f64::INFINITY,
            t_start,
            t_end,
            velocity: velocity.to_vec(),
            steps_done: 0,
        })
    }

    pub fn clock(&self) -> f64 {
        self.particles[0].clock
    }

    pub fn ensemble(&self) -> Result<PathEnsemble> {
        PathEnsemble::new(self.particles.iter().map(|p| p.path()).collect())
    }

    /// Last computed loss, or the initial one before any step.
    pub fn loss(&self) -> f64 {
        self.loss_trace.last().copied().unwrap_or(self.initial_loss)
    }
}

fn mean_features(particles: &[ParticleState]) -> Features {
    let m = particles[0].feat.len();
    particles.iter().fold(DVector::zeros(m), |acc, p| acc + &p.feat) / particles.len() as f64
}

/// `Q (φ(proxy) − φ(sig))`.
pub fn score(sig: &TensorSeries, proxy_at_s: &TensorSeries, geometry: &Geometry) -> Result<Features> {
    let diff = geometry.project(proxy_at_s)? - geometry.project(sig)?;
    Ok(geometry.precision.apply(&diff))
}

/// `η <lift(Ψ), S ⊗ e_i>` for each spatial letter `i`.
pub fn score_drift(sig: &TensorSeries, psi: &Features, geometry: &Geometry, drift_gain: f64) -> Vec<f64> {
    score_drift_lifted(sig, &geometry.basis.lift(psi), drift_gain)
}

fn score_drift_lifted(sig: &TensorSeries, lifted: &TensorSeries, drift_gain: f64) -> Vec<f64> {
    (1..sig.dim())
        .map(|i| drift_gain * dot_times_letter(lifted, sig, i))
        .collect()
}

/// `<l, s ⊗ e_letter>` without materialising the product.
fn dot_times_letter(l: &TensorSeries, s: &TensorSeries, letter: usize) -> f64 {
    let dim = s.dim();
    let mut total = 0.0;
    for n in 1..=s.depth() {
        let ln = l.level(n);
        for (i, c) in s.level(n - 1).iter().enumerate() {
            total += c * ln[i * dim + letter];
        }
    }
    total
}

/// Weight of the boundary velocity at time `s`: `2^{-(s - t_start)/halflife}`.
pub fn boundary_weight(s: f64, t_start: f64, halflife: f64) -> f64 {
    (-(s - t_start) / halflife).exp2()
}

/// Blended drift `β V + (1 − β) f_score`.
pub fn drift(score_drift: &[f64], velocity: &[f64], s: f64, t_start: f64, config: &FlowConfig) -> Vec<f64> {
    let beta = boundary_weight(s, t_start, config.boundary_blend_halflife);
    if beta == 1.0 {
        return velocity.to_vec();
    }
    score_drift
        .iter()
        .zip(velocity)
        .map(|(f, v)| beta * v + (1.0 - beta) * f)
        .collect()
}

/// `<lift(Ψ), S ⊗ (exp((0, a)) − 1)>`.
pub fn jump_gain(sig: &TensorSeries, psi: &Features, geometry: &Geometry, amplitude: &[f64]) -> Result<f64> {
    jump_gain_lifted(sig, &geometry.basis.lift(psi), amplitude)
}

fn jump_gain_lifted(sig: &TensorSeries, lifted: &TensorSeries, amplitude: &[f64]) -> Result<f64> {
    if amplitude.iter().all(|a| *a == 0.0) {
        return Ok(0.0);
    }
    let jumped = signature_extend(sig, 0.0, amplitude, true)?;
    Ok(lifted.inner(&jumped)? - lifted.inner(sig)?)
}

/// Amplitudes examined by [`select_jump`], zero first.
pub fn jump_candidates(dictionary: &[Vec<f64>], aligned: Option<&[f64]>) -> Vec<Vec<f64>> {
    let d = dictionary.first().map(|v| v.len()).unwrap_or(0);
    let mut out = vec![vec![0.0; d]];
    for v in dictionary.iter().map(|v| v.as_slice()).chain(aligned) {
        if v.iter().all(|x| *x == 0.0) {
            continue;
        }
        for c in JUMP_SCALES {
            out.push(v.iter().map(|x| c * x).collect());
        }
    }
    out
}

fn select_from(sig: &TensorSeries, lifted: &TensorSeries, candidates: &[Vec<f64>]) -> Result<(Vec<f64>, f64)> {
    let mut best = (candidates[0].clone(), 0.0);
    for a in &candidates[1..] {
        let g = jump_gain_lifted(sig, lifted, a)?;
        if g > best.1 {
            best = (a.clone(), g);
        }
    }
    Ok(best)
}

/// Best amplitude over the scaled dictionary and zero; ties favour zero, so
/// the returned gain is never negative.
pub fn select_jump(
    sig: &TensorSeries,
    psi: &Features,
    geometry: &Geometry,
    config: &FlowConfig,
) -> Result<(Vec<f64>, f64)> {
    let lifted = geometry.basis.lift(psi);
    let dict = config.dictionary(sig.dim() - 1)?;
    let aligned = if config.residual_aligned_jump {
        aligned_direction(&score_drift_lifted(sig, &lifted, 1.0))
    } else {
        None
    };
    select_from(sig, &lifted, &jump_candidates(&dict, aligned.as_deref()))
}

fn aligned_direction(grad: &[f64]) -> Option<Vec<f64>> {
    let n = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    (n > 0.0 && n.is_finite()).then(|| grad.iter().map(|g| g / n).collect())
}

/// `λ0 g / (g + κ)`.
pub fn intensity(gain: f64, config: &FlowConfig) -> f64 {
    if !(gain > 0.0) {
        return 0.0;
    }
    config.base_rate * gain / (gain + config.gain_kappa)
}

/// `½ ‖φ(proxy) − mean φ(S_i)‖²_Q`.
pub fn mmd_loss(sigs: &[TensorSeries], proxy_at_s: &TensorSeries, geometry: &Geometry) -> Result<f64> {
    if sigs.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let feats = sigs.iter().map(|s| geometry.project(s)).collect::<Result<Vec<_>>>()?;
    let mean = feats.iter().fold(DVector::zeros(geometry.basis.dim()), |a, f| a + f) / feats.len() as f64;
    Ok(mmd_loss_features(&mean, &geometry.project(proxy_at_s)?, geometry))
}

fn mmd_loss_features(mean: &Features, target: &Features, geometry: &Geometry) -> f64 {
    let n = geometry.norm(&(target - mean));
    0.5 * n * n
}

struct StepStats {
    continuous: f64,
    jump_rate_gain: f64,
    jump_energy: f64,
    gain: f64,
    n_jumps: usize,
}

/// Advance every particle by one step of length `config.step`.
pub fn emm_step(state: &mut EnsembleState, proxy: &ProxyTrajectory, config: &FlowConfig) -> Result<()> {
    let h = config.step;
    let s = state.particles[0].clock;
    let next = state.t_start + (state.steps_done + 1) as f64 * h;
    if next > state.t_end + 1e-9 * (1.0 + state.t_end.abs()) {
        return Err(Error::HorizonExceeded {
            clock: s,
            step: h,
            end: state.t_end,
        });
    }
    if !proxy.covers(s, next) {
        return Err(Error::ProxyGridGap { start: s, end: next });
    }
    let geometry = &state.geometry;
    let target = geometry.project(&proxy.at(s)?)?;
    let d = state.particles[0].x.len();
    let candidates_base = config.dictionary(d)?;
    let velocity = &state.velocity;
    let t_start = state.t_start;
    let old_mean = mean_features(&state.particles);
    let sqrt_h = h.sqrt();
    // one residual for the whole ensemble: Q (Φ̂ − mean φ(S_i))
    let psi = geometry.precision.apply(&(&target - &old_mean));
    let lifted = geometry.basis.lift(&psi);

    let stats = state
        .particles
        .par_iter_mut()
        .map(|p| -> Result<StepStats> {
            let f_score = score_drift_lifted(&p.sig, &lifted, config.drift_gain);
            let f = drift(&f_score, velocity, s, t_start, config);
            let aligned = if config.residual_aligned_jump {
                aligned_direction(&f_score)
            } else {
                None
            };
            let cands = jump_candidates(&candidates_base, aligned.as_deref());
            let (amp, gain) = select_from(&p.sig, &lifted, &cands)?;
            let lambda = intensity(gain, config);

            let xi: Vec<f64> = (0..d).map(|_| p.rng.sample(StandardNormal)).collect();
            let u: f64 = p.rng.random();
            let n_jumps = rng::poisson_from_uniform(lambda * h, u) as usize;

            let jump_energy = if gain > 0.0 {
                let before = &p.feat;
                let after = geometry.project(&signature_extend(&p.sig, 0.0, &amp, true)?)?;
                let e = geometry.norm(&(after - before));
                lambda * e * e
            } else {
                0.0
            };

            let dx: Vec<f64> = (0..d).map(|i| f[i] * h + config.diffusion_scale * sqrt_h * xi[i]).collect();
            for i in 0..d {
                p.x[i] += dx[i];
            }
            p.sig = signature_extend(&p.sig, h, &dx, false)?;
            p.clock = next;
            p.times.push(next);
            p.values.push(p.x.clone());
            p.jumps.push(false);
            for _ in 0..n_jumps {
                for i in 0..d {
                    p.x[i] += amp[i];
                }
                p.sig = signature_extend(&p.sig, 0.0, &amp, true)?;
                p.times.push(next);
                p.values.push(p.x.clone());
                p.jumps.push(true);
            }
            p.feat = geometry.project(&p.sig)?;
            Ok(StepStats {
                continuous: f_score.iter().map(|x| x * x).sum::<f64>() / config.drift_gain,
                jump_rate_gain: lambda * gain,
                jump_energy,
                gain,
                n_jumps,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let n = stats.len() as f64;
    let new_mean = mean_features(&state.particles);
    let innovation = &new_mean - &old_mean;
    state
        .geometry
        .precision
        .covariance_update(&innovation, 1.0 - config.forgetting)?;

    let target_next = state.geometry.project(&proxy.at(next)?)?;
    let loss_prev = state.loss();
    let loss = mmd_loss_features(&new_mean, &target_next, &state.geometry);
    let continuous = stats.iter().map(|s| s.continuous).sum::<f64>() / n;
    let jump = stats.iter().map(|s| s.jump_rate_gain).sum::<f64>() / n;
    let jump_energy = stats.iter().map(|s| s.jump_energy).sum::<f64>() / n;
    state.loss_trace.push(loss);
    state.dissipation_trace.push(Dissipation {
        s: next,
        loss,
        continuous,
        jump,
        residual: (loss - loss_prev) / h + continuous + jump,
    });
    let max_norm = state
        .particles
        .iter()
        .map(|p| p.x.iter().map(|x| x * x).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    state.stability_trace.push(StabilityRecord {
        s: next,
        jump_energy,
        continuous,
        stable: jump_energy <= continuous,
        max_norm,
        spectral_radius: state.geometry.precision.spectral_radius(),
    });
    state.jump_count += stats.iter().map(|s| s.n_jumps).sum::<usize>();
    state.min_gain = stats.iter().map(|s| s.gain).fold(state.min_gain, f64::min);
    state.steps_done += 1;
    Ok(())
}

/// Start time, start point and boundary velocity implied by the mode.
pub fn anchoring(config: &FlowConfig, initial_path: &CadlagPath) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let t = initial_path.end_time();
    match config.mode {
        Mode::Forecast => Ok((t, initial_path.last_value().to_vec(), initial_path.last_continuous_velocity(t))),
        Mode::Reconstruction => {
            let t0 = t - config.horizon;
            if t0 < initial_path.start_time() - 1e-9 * (1.0 + t.abs()) {
                return Err(Error::GridOutsideSupport(t0));
            }
            let t0 = t0.max(initial_path.start_time());
            Ok((t0, initial_path.value_at(t0), initial_path.last_continuous_velocity(t0)))
        }
    }
}

/// Run the sampler over the whole horizon. Forecast starts at the end of
/// `initial_path`; reconstruction starts `horizon` earlier on the same path.
pub fn run_flow(
    config: &FlowConfig,
    initial_path: &CadlagPath,
    proxy: &ProxyTrajectory,
    geometry: Geometry,
) -> Result<(PathEnsemble, EnsembleState)> {
    config.validate()?;
    let (t_start, x0, velocity) = anchoring(config, initial_path)?;
    let mut state = EnsembleState::init(config, &x0, &velocity, t_start, geometry, proxy)?;
    for _ in 0..config.n_steps()? {
        emm_step(&mut state, proxy, config)?;
    }
    Ok((state.ensemble()?, state))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DissipationSummary {
    pub continuous: f64,
    pub jump: f64,
    pub residual: f64,
}

/// Run averages of the per-step dissipation terms.
pub fn dissipation_report(state: &EnsembleState) -> DissipationSummary {
    let n = state.dissipation_trace.len().max(1) as f64;
    let sum = |f: fn(&Dissipation) -> f64| state.dissipation_trace.iter().map(f).sum::<f64>() / n;
    DissipationSummary {
        continuous: sum(|d| d.continuous),
        jump: sum(|d| d.jump),
        residual: sum(|d| d.residual),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub violations: usize,
    pub steps: usize,
    pub violation_rate: f64,
    pub max_norm: f64,
    pub max_spectral_radius: f64,
    pub all_finite: bool,
}

pub fn stability_monitor(state: &EnsembleState) -> StabilityReport {
    let steps = state.stability_trace.len();
    let violations = state.stability_trace.iter().filter(|r| !r.stable).count();
    let all_finite = state.stability_trace.iter().all(|r| {
        r.jump_energy.is_finite() && r.continuous.is_finite() && r.max_norm.is_finite() && r.spectral_radius.is_finite()
    }) && state.loss_trace.iter().all(|l| l.is_finite());
    StabilityReport {
        violations,
        steps,
        violation_rate: if steps == 0 { 0.0 } else { violations as f64 / steps as f64 },
        max_norm: state.stability_trace.iter().map(|r| r.max_norm).fold(0.0, f64::max),
        max_spectral_radius: state.stability_trace.iter().map(|r| r.spectral_radius).fold(0.0, f64::max),
        all_finite,
    }
}

#[cfg(test)]
mod tests;
