//! Desk-scale scenarios shared by the acceptance battery, the benches and
//! the `suite` command.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::avnsg::{sherman_morrison_update, Features, Geometry, NystromBasis, PrecisionState};
use crate::bounds::{
    generalization_trial, projection_error_probe, rademacher_bound, rademacher_mc, DEFAULT_RADEMACHER_DRAWS,
};
use crate::bridge::{moment_residual, solve_bridge_features};
use crate::error::{Error, Result};
use crate::flow::{run_flow, score_drift, stability_monitor, EnsembleState, FlowConfig, Mode, ProxyTrajectory};
use crate::herding::{herd_signatures, herding_rate_report};
use crate::linalg::{frobenius, linear_fit, spd_inverse};
use crate::path::{CadlagPath, PathEnsemble};
use crate::rng;
use crate::signature::{marcus_signature, mean_series, signature_extend, signatures};
use crate::synthgen::{build_proxy, gen_merton, gen_regime_switch, restricted_signatures, uniform_grid, MertonParams, RegimeSwitchParams};
use crate::tensor::{shuffle_defect, TensorSeries};

/// Signatures of Brownian paths restricted to several horizons, so the
/// pool spans the time directions as well.
pub fn anchor_pool(d: usize, depth: usize, n_paths: usize, horizon: f64, seed: u64) -> Result<Vec<TensorSeries>> {
    let ens = gen_merton(&MertonParams::brownian(d, 1.0), n_paths, 8, horizon, seed)?.ensemble;
    let grid = uniform_grid(0.0, horizon, 4);
    let mut out = Vec::new();
    for p in ens.paths() {
        out.extend(restricted_signatures(p, 0.0, &grid[1..], depth)?);
    }
    Ok(out)
}

/// Everything a flow run needs.
#[derive(Debug, Clone)]
pub struct FlowToy {
    pub config: FlowConfig,
    pub initial: CadlagPath,
    pub proxy: ProxyTrajectory,
    pub geometry: Geometry,
}

pub const DESCENT_STEPS: usize = 200;
pub const DESCENT_STEP: f64 = 0.005;
pub const DESCENT_RIDGE: f64 = 1e-2;

/// Frozen target: the signature of a straight line over the full run.
/// d = 1, depth 3, Nyström rank 32 requested.
pub fn descent_toy(instance: u64, stochastic: bool, seed: u64) -> Result<FlowToy> {
    let mut r = rng::stream(seed, rng::TRIAL, instance);
    let slope = r.random_range(0.5..1.5) * if r.random::<bool>() { 1.0 } else { -1.0 };
    let horizon = DESCENT_STEPS as f64 * DESCENT_STEP;
    let line = CadlagPath::new(vec![0.0, horizon], vec![vec![0.0], vec![slope * horizon]], vec![false; 2])?;
    let target = marcus_signature(&line, 3);
    let proxy = ProxyTrajectory::frozen(target, 0.0, horizon)?;
    let pool = anchor_pool(1, 3, 64, horizon, seed ^ instance)?;
    let basis = NystromBasis::from_signatures(&pool, 32)?;
    let geometry = Geometry::new(basis, DESCENT_RIDGE)?;
    let config = FlowConfig {
        diffusion_scale: if stochastic { 0.2 } else { 0.0 },
        base_rate: 0.0,
        drift_gain: DESCENT_RIDGE,
        seed: seed.wrapping_add(instance),
        ..FlowConfig::new(Mode::Forecast, horizon, DESCENT_STEP, 8, 0)
    };
    Ok(FlowToy {
        config,
        initial: CadlagPath::constant(0.0, vec![0.0])?,
        proxy,
        geometry,
    })
}

pub const SWITCH_TIME: f64 = 0.5;
pub const SWITCH_JUMP: f64 = 2.0;

/// Regime-switch reference with a structural break of size 2 at mid-run;
/// the proxy is its moving expected signature.
pub fn regime_toy(instance: u64, jumps: bool, seed: u64) -> Result<FlowToy> {
    let horizon = 1.0;
    let h = 0.01;
    let before = MertonParams::brownian(1, 0.2);
    let after = MertonParams { drift: vec![0.5], ..before.clone() };
    let params = RegimeSwitchParams {
        before,
        after,
        switch_time: SWITCH_TIME,
        switch_jump: vec![SWITCH_JUMP],
    };
    let reference = gen_regime_switch(&params, 128, 100, horizon, seed)?.ensemble;
    let grid = uniform_grid(0.0, horizon, 100);
    let proxy = build_proxy(&reference, 0.0, &grid, 3)?;
    let mut pool = anchor_pool(1, 3, 32, horizon, seed ^ 0x5eed)?;
    for p in reference.paths().iter().take(32) {
        pool.extend(restricted_signatures(p, 0.0, &grid[10..].iter().step_by(10).copied().collect::<Vec<_>>(), 3)?);
    }
    let basis = NystromBasis::from_signatures(&pool, 32)?;
    let geometry = Geometry::with_empirical_cov(basis, &pool, DESCENT_RIDGE)?;
    let defaults = FlowConfig::new(Mode::Forecast, horizon, h, 16, seed.wrapping_add(instance));
    let config = FlowConfig {
        diffusion_scale: 0.2,
        base_rate: if jumps { defaults.base_rate } else { 0.0 },
        ..defaults
    };
    Ok(FlowToy {
        config,
        initial: CadlagPath::constant(0.0, vec![0.0])?,
        proxy,
        geometry,
    })
}

/// Names of the numbered checks, in order.
pub const CRITERIA: [&str; 11] = [
    "algebra",
    "sherman_morrison",
    "herding_rate",
    "score_gradient",
    "mmd_descent",
    "jump_dissipativity",
    "bridge",
    "generalization_bound",
    "rademacher_ordering",
    "nystrom_tail",
    "stability",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: usize,
    pub name: String,
    pub passed: bool,
    pub metrics: BTreeMap<String, f64>,
}

impl CriterionResult {
    fn new(id: usize, passed: bool, metrics: &[(&str, f64)]) -> Self {
        CriterionResult {
            id,
            name: CRITERIA[id - 1].to_string(),
            passed,
            metrics: metrics.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    pub fn metric(&self, key: &str) -> Option<f64> {
        self.metrics.get(key).copied()
    }
}

/// Seed-determined results; identical bytes for identical seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub criteria: Vec<CriterionResult>,
}

impl SuiteReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn get(&self, id: usize) -> Option<&CriterionResult> {
        self.criteria.iter().find(|c| c.id == id)
    }
}

/// Wall-clock measurements, kept apart from the report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub seconds: BTreeMap<String, f64>,
    /// `(m, seconds per update)` for the rank-1 precision update.
    pub update_cost: Vec<(usize, f64)>,
    pub update_exponent: Option<f64>,
}

impl Timings {
    /// The fitted cost exponent stays at or below 2.3.
    pub fn update_cost_quadratic(&self) -> Option<bool> {
        self.update_exponent.map(|e| e <= 2.3)
    }
}

#[derive(Debug, Clone)]
pub struct SuiteRun {
    pub report: SuiteReport,
    pub timings: Timings,
}

/// Run the numbered checks (all of them when `only` is `None`).
pub fn run_suite(seed: u64, only: Option<&[usize]>) -> Result<SuiteRun> {
    let ids: Vec<usize> = match only {
        Some(ids) => {
            if let Some(bad) = ids.iter().find(|i| **i == 0 || **i > CRITERIA.len()) {
                return Err(Error::InvalidConfig(format!("no criterion {bad}")));
            }
            let mut v = ids.to_vec();
            v.sort_unstable();
            v.dedup();
            v
        }
        None => (1..=CRITERIA.len()).collect(),
    };
    let mut timings = Timings::default();
    let mut criteria = Vec::with_capacity(ids.len());
    for id in ids {
        let start = Instant::now();
        let s = sub_seed(seed, id);
        let result = match id {
            1 => algebra(s)?,
            2 => {
                let (r, cost) = sherman_morrison(s)?;
                timings.update_exponent = Some(cost_exponent(&cost));
                timings.update_cost = cost;
                r
            }
            3 => herding_rate(s)?,
            4 => score_gradient(s)?,
            5 => mmd_descent(s)?,
            6 => jump_dissipativity(s)?,
            7 => bridge(s)?,
            8 => generalization(s)?,
            9 => rademacher_ordering(s)?,
            10 => nystrom_tail(s)?,
            11 => stability(s)?,
            _ => unreachable!("ids checked above"),
        };
        timings.seconds.insert(result.name.clone(), start.elapsed().as_secs_f64());
        criteria.push(result);
    }
    Ok(SuiteRun {
        report: SuiteReport { seed, criteria },
        timings,
    })
}

fn sub_seed(seed: u64, id: usize) -> u64 {
    rng::stream(seed, rng::SUITE, id as u64).random()
}

fn normal_vec<R: Rng>(r: &mut R, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| scale * r.sample::<f64, _>(StandardNormal))
}

/// Piecewise-linear path with random durations and some flagged jumps.
fn random_path<R: Rng>(r: &mut R, d: usize, len: usize, scale: f64) -> Result<CadlagPath> {
    let mut t = 0.0;
    let mut x: Vec<f64> = (0..d).map(|_| r.random_range(-scale..scale)).collect();
    let (mut times, mut values, mut jumps) = (vec![t], vec![x.clone()], vec![false]);
    for _ in 1..len {
        let jump = r.random::<f64>() < 0.3;
        if !jump {
            t += r.random_range(0.05..0.3);
        }
        for xi in x.iter_mut() {
            *xi += r.random_range(-scale..scale);
        }
        times.push(t);
        values.push(x.clone());
        jumps.push(jump);
    }
    CadlagPath::new(times, values, jumps)
}

fn sub_path(p: &CadlagPath, range: std::ops::Range<usize>) -> Result<CadlagPath> {
    let mut jumps = p.jumps()[range.clone()].to_vec();
    jumps[0] = false;
    CadlagPath::new(p.times()[range.clone()].to_vec(), p.values()[range].to_vec(), jumps)
}

fn algebra(seed: u64) -> Result<CriterionResult> {
    let mut r = rng::stream(seed, rng::SUITE, 0);
    let mut chen: f64 = 0.0;
    for _ in 0..100 {
        let d = r.random_range(1..=3);
        let depth = r.random_range(1..=5);
        let len = r.random_range(3..=8);
        let p = random_path(&mut r, d, len, 0.5)?;
        let k = r.random_range(1..len - 1);
        let whole = marcus_signature(&p, depth);
        let split = marcus_signature(&sub_path(&p, 0..k + 1)?, depth).concat(&marcus_signature(&sub_path(&p, k..len)?, depth))?;
        chen = chen.max(whole.max_abs_diff(&split));
    }
    let mut shuffle: f64 = 0.0;
    for _ in 0..50 {
        let d = r.random_range(1..=3);
        let depth = r.random_range(1..=5);
        let len = r.random_range(2..=6);
        let p = random_path(&mut r, d, len, 0.5)?;
        shuffle = shuffle.max(shuffle_defect(&marcus_signature(&p, depth)));
    }
    Ok(CriterionResult::new(
        1,
        chen <= 1e-12 && shuffle <= 1e-10,
        &[("chen_max_abs", chen), ("shuffle_max_abs", shuffle)],
    ))
}

fn random_spd<R: Rng>(r: &mut R, m: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(m, m, |_, _| r.sample::<f64, _>(StandardNormal) / (m as f64).sqrt());
    &a * a.transpose()
}

fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    frobenius(&(a - b)) / frobenius(b)
}

fn sherman_morrison(seed: u64) -> Result<(CriterionResult, Vec<(usize, f64)>)> {
    let mut r = rng::stream(seed, rng::SUITE, 0);
    let m = 32;
    let ridge = 1e-2;
    let eye = DMatrix::<f64>::identity(m, m);
    let inv = |c: &DMatrix<f64>| spd_inverse(&(c + &eye * ridge)).ok_or_else(|| Error::InvalidConfig("singular test matrix".into()));
    let mut cov = random_spd(&mut r, m);
    let prec0 = inv(&cov)?;

    let k = normal_vec(&mut r, m, 1.0 / (m as f64).sqrt());
    let single = sherman_morrison_update(&prec0, &k, 0.3)?;
    let mut bumped = cov.clone();
    bumped.ger(0.3, &k, &k, 1.0);
    let single_err = rel_frobenius(&single, &inv(&bumped)?);

    let mut state = PrecisionState::from_cov(cov.clone(), ridge)?;
    let mut prec = prec0;
    let mut state_drift: f64 = 0.0;
    for _ in 0..1000 {
        let k = normal_vec(&mut r, m, 1.0 / (m as f64).sqrt());
        prec = sherman_morrison_update(&prec, &k, 0.005)?;
        cov.ger(0.005, &k, &k, 1.0);
        state.covariance_update(&k, 0.005)?;
        state_drift = state_drift.max(state.precision_drift());
    }
    let chain_err = rel_frobenius(&prec, &inv(&cov)?);

    let cost = [16, 32, 64, 128].iter().map(|&m| (m, update_seconds(&mut r, m))).collect();
    Ok((
        CriterionResult::new(
            2,
            single_err <= 1e-12 && chain_err <= 1e-10 && state_drift <= 1e-10,
            &[("single_rel", single_err), ("chain_rel", chain_err), ("state_drift_max", state_drift)],
        ),
        cost,
    ))
}

/// Best-of-five seconds per rank-1 update at size `m`.
fn update_seconds<R: Rng>(r: &mut R, m: usize) -> f64 {
    let mut prec = spd_inverse(&(random_spd(r, m) + DMatrix::identity(m, m))).expect("spd");
    let ks: Vec<DVector<f64>> = (0..64).map(|_| normal_vec(r, m, 0.01)).collect();
    let mut best = f64::INFINITY;
    for _ in 0..5 {
        let start = Instant::now();
        let mut reps = 0usize;
        while start.elapsed().as_secs_f64() < 0.02 {
            prec = sherman_morrison_update(&prec, &ks[reps % ks.len()], 1e-3).expect("well conditioned");
            reps += 1;
        }
        best = best.min(start.elapsed().as_secs_f64() / reps as f64);
    }
    std::hint::black_box(&prec);
    best
}

fn cost_exponent(cost: &[(usize, f64)]) -> f64 {
    let xs: Vec<f64> = cost.iter().map(|(m, _)| (*m as f64).ln()).collect();
    let ys: Vec<f64> = cost.iter().map(|(_, t)| t.ln()).collect();
    linear_fit(&xs, &ys).0
}

fn herding_rate(seed: u64) -> Result<CriterionResult> {
    let pool = anchor_pool(1, 3, 16, 1.0, seed)?;
    let geometry = Geometry::with_empirical_cov(NystromBasis::from_signatures(&pool, 15)?, &pool, 1e-2)?;
    let mut r = rng::stream(seed, rng::SUITE, 1);
    let (mut bound_ok, mut worst_slope, mut worst_cross) = (true, f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut floors = 0;
    for _ in 0..10 {
        let q = r.random_range(3..=6);
        let mut picks = Vec::new();
        while picks.len() < q {
            let i = r.random_range(0..pool.len());
            if !picks.contains(&i) {
                picks.push(i);
            }
        }
        let w: Vec<f64> = (0..q).map(|_| -(1.0 - r.random::<f64>()).ln()).collect();
        let total: f64 = w.iter().sum();
        let mut target = TensorSeries::zero(3, 2);
        for (i, wi) in picks.iter().zip(&w) {
            target.axpy(wi / total, &pool[*i])?;
        }
        let res = herd_signatures(&target, &pool, 200, &geometry)?;
        let rep = herding_rate_report(&res)?;
        bound_ok &= rep.bound_satisfied;
        match rep.slope {
            Some(s) if !rep.residual_floor => worst_slope = worst_slope.max(s),
            _ => floors += 1,
        }
        worst_cross = res.cross_terms.iter().copied().fold(worst_cross, f64::max);
    }
    Ok(CriterionResult::new(
        3,
        bound_ok && worst_slope <= -0.8 && worst_cross <= 1e-12,
        &[
            ("bound_all_k", bound_ok as u8 as f64),
            ("worst_slope", worst_slope),
            ("worst_cross_term", worst_cross),
            ("floor_hits", floors as f64),
        ],
    ))
}

fn score_gradient(seed: u64) -> Result<CriterionResult> {
    let shapes = [(1, 3), (2, 2), (2, 3), (3, 2)];
    let geometries = shapes
        .iter()
        .enumerate()
        .map(|(i, &(d, depth))| {
            let pool = anchor_pool(d, depth, 12, 1.0, seed ^ i as u64)?;
            let m = pool.len().min(24).min(crate::tensor::series_len(d + 1, depth));
            Geometry::new(NystromBasis::from_signatures(&pool, m)?, 0.1)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut r = rng::stream(seed, rng::SUITE, 2);
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for state in 0..100 {
        let which = state % shapes.len();
        let (d, depth) = shapes[which];
        let g = &geometries[which];
        let sig = marcus_signature(&random_path(&mut r, d, 5, 0.5)?, depth);
        let psi = normal_vec(&mut r, g.basis.dim(), 1.0);
        let f = score_drift(&sig, &psi, g, 1.0);
        let lifted = g.basis.lift(&psi);
        let scale = f.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        for i in 0..d {
            let mut e = vec![0.0; d];
            e[i] = eps;
            let up = lifted.inner(&signature_extend(&sig, 0.0, &e, false)?)?;
            e[i] = -eps;
            let down = lifted.inner(&signature_extend(&sig, 0.0, &e, false)?)?;
            let fd = (up - down) / (2.0 * eps);
            worst = worst.max((fd - f[i]).abs() / f[i].abs().max(1e-6 * scale).max(f64::MIN_POSITIVE));
        }
    }
    Ok(CriterionResult::new(4, worst <= 1e-6, &[("worst_rel", worst)]))
}

fn final_loss(state: &EnsembleState) -> f64 {
    state.loss_trace.last().copied().unwrap_or(state.initial_loss)
}

fn mmd_descent(seed: u64) -> Result<CriterionResult> {
    let (mut frac_min, mut ratio_max) = (f64::INFINITY, 0.0f64);
    let mut min_gain = f64::INFINITY;
    for inst in 0..10 {
        let toy = descent_toy(inst, false, seed)?;
        let (_, st) = run_flow(&toy.config, &toy.initial, &toy.proxy, toy.geometry)?;
        let mut prev = st.initial_loss;
        let mut down = 0;
        for j in &st.loss_trace {
            if *j <= prev {
                down += 1;
            }
            prev = *j;
        }
        frac_min = frac_min.min(down as f64 / st.loss_trace.len() as f64);
        ratio_max = ratio_max.max(final_loss(&st) / st.initial_loss);
        min_gain = min_gain.min(st.min_gain);
    }
    let mut negative = 0;
    for inst in 0..64 {
        let toy = descent_toy(inst, true, seed)?;
        let (_, st) = run_flow(&toy.config, &toy.initial, &toy.proxy, toy.geometry)?;
        let s: Vec<f64> = st.dissipation_trace.iter().map(|d| d.s).collect();
        if linear_fit(&s, &st.loss_trace).0 < 0.0 {
            negative += 1;
        }
        min_gain = min_gain.min(st.min_gain);
    }
    let neg_frac = negative as f64 / 64.0;
    Ok(CriterionResult::new(
        5,
        frac_min >= 0.95 && ratio_max < 0.1 && neg_frac >= 0.9,
        &[
            ("min_non_increasing_fraction", frac_min),
            ("max_final_ratio", ratio_max),
            ("negative_slope_fraction", neg_frac),
            ("min_gain", min_gain),
        ],
    ))
}

fn jump_dissipativity(seed: u64) -> Result<CriterionResult> {
    let base = regime_toy(0, true, seed)?;
    let (mut wins, mut jumps) = (0, 0);
    let mut min_gain = f64::INFINITY;
    for inst in 0..32u64 {
        let mut on = base.config.clone();
        on.seed = seed.wrapping_add(inst);
        let off = FlowConfig { base_rate: 0.0, ..on.clone() };
        let (_, a) = run_flow(&on, &base.initial, &base.proxy, base.geometry.clone())?;
        let (_, b) = run_flow(&off, &base.initial, &base.proxy, base.geometry.clone())?;
        if final_loss(&a) <= final_loss(&b) {
            wins += 1;
        }
        jumps += a.jump_count;
        min_gain = min_gain.min(a.min_gain).min(b.min_gain);
    }
    let rate = wins as f64 / 32.0;
    Ok(CriterionResult::new(
        6,
        rate >= 0.8 && min_gain >= 0.0,
        &[("win_fraction", rate), ("min_gain", min_gain), ("jumps", jumps as f64)],
    ))
}

fn mean_features(feats: &[Features]) -> Features {
    feats.iter().fold(DVector::zeros(feats[0].len()), |a, f| a + f) / feats.len() as f64
}

fn bridge(seed: u64) -> Result<CriterionResult> {
    let ens = gen_merton(&MertonParams::brownian(1, 0.6), 60, 6, 1.0, seed)?.ensemble;
    let sigs = signatures(&ens, 3);
    let g = Geometry::with_empirical_cov(NystromBasis::from_signatures(&sigs, 8)?, &sigs, 1e-2)?;
    let feats: Vec<Features> = sigs.iter().map(|s| g.project(s)).collect::<Result<_>>()?;

    let at_mean = solve_bridge_features(&feats, &mean_features(&feats), &g, 1e-10, 50)?;
    let alpha_norm = at_mean.alpha.iter().map(|a| a * a).sum::<f64>().sqrt();

    let pair = vec![feats[0].clone(), feats[1].clone()];
    let target = &pair[0] * 0.75 + &pair[1] * 0.25;
    let two = solve_bridge_features(&pair, &target, &g, 1e-10, 200)?;
    let weight_err = (two.weights[0] - 0.75).abs().max((two.weights[1] - 0.25).abs());

    let w: Vec<f64> = (0..feats.len()).map(|i| 1.0 + (i % 3) as f64).collect();
    let total: f64 = w.iter().sum();
    let interior = feats.iter().zip(&w).fold(DVector::zeros(g.basis.dim()), |a, (f, wi)| a + f * (wi / total));
    let tilt = solve_bridge_features(&feats, &interior, &g, 1e-6, 500)?;
    let residual = moment_residual(&tilt, &feats, &interior, &g);
    Ok(CriterionResult::new(
        7,
        alpha_norm <= 1e-8 && weight_err <= 1e-6 && tilt.converged && residual <= 1e-6,
        &[
            ("alpha_norm_at_mean", alpha_norm),
            ("two_atom_weight_err", weight_err),
            ("interior_residual", residual),
            ("interior_converged", tilt.converged as u8 as f64),
        ],
    ))
}

fn generalization(seed: u64) -> Result<CriterionResult> {
    let params = MertonParams {
        jump_rate: 1.0,
        jump_std: vec![0.3],
        ..MertonParams::brownian(1, 0.5)
    };
    let pool = anchor_pool(1, 3, 32, 1.0, seed)?;
    let g = Geometry::with_empirical_cov(NystromBasis::from_signatures(&pool, 15)?, &pool, 1e-2)?;
    let sampler = |n: usize, stream: u64| -> Result<PathEnsemble> {
        let s = rng::stream(seed, rng::TRIAL, stream).random();
        Ok(gen_merton(&params, n, 8, 1.0, s)?.ensemble)
    };
    let rep = generalization_trial(&sampler, 64, 0.05, &g, 6400, 200, DEFAULT_RADEMACHER_DRAWS, seed)?;
    Ok(CriterionResult::new(
        8,
        rep.satisfaction_rate >= 0.93,
        &[("satisfaction_rate", rep.satisfaction_rate), ("mean_lhs", rep.lhs), ("mean_rhs", rep.rhs)],
    ))
}

fn rademacher_ordering(seed: u64) -> Result<CriterionResult> {
    let pool = anchor_pool(1, 3, 40, 1.0, seed)?;
    let g = Geometry::with_empirical_cov(NystromBasis::from_signatures(&pool, 15)?, &pool, 1e-2)?;
    let feats: Vec<Features> = pool.iter().map(|s| g.project(s)).collect::<Result<_>>()?;
    let mut r = rng::stream(seed, rng::SUITE, 3);
    let (mut held, mut worst_gap) = (0, f64::NEG_INFINITY);
    for e in 0..1000u64 {
        let n = r.random_range(2..=32);
        let lo = r.random_range(0..=feats.len() - n);
        let part = &feats[lo..lo + n];
        let mc = rademacher_mc(part, 1.0, &g, 256, e)?;
        let bound = rademacher_bound(part, 1.0, &g)?;
        if mc.mean <= bound + 3.0 * mc.std_error {
            held += 1;
        }
        worst_gap = worst_gap.max((mc.mean - bound) / mc.std_error.max(f64::MIN_POSITIVE));
    }
    let mut single_exact = true;
    for (i, f) in feats.iter().take(20).enumerate() {
        let one = std::slice::from_ref(f);
        single_exact &= rademacher_mc(one, 1.0, &g, 8, i as u64)?.mean == rademacher_bound(one, 1.0, &g)?;
    }
    Ok(CriterionResult::new(
        9,
        held == 1000 && single_exact,
        &[
            ("held", held as f64),
            ("worst_gap_in_se", worst_gap),
            ("single_exact", single_exact as u8 as f64),
        ],
    ))
}

fn nystrom_tail(seed: u64) -> Result<CriterionResult> {
    let params = MertonParams {
        jump_rate: 1.0,
        jump_std: vec![0.3],
        ..MertonParams::brownian(1, 0.7)
    };
    let ens = gen_merton(&params, 40, 8, 1.0, seed)?.ensemble;
    let grid = uniform_grid(0.0, 1.0, 4);
    let particles: Vec<TensorSeries> = ens
        .paths()
        .iter()
        .map(|p| restricted_signatures(p, 0.0, &grid[1..], 3))
        .collect::<Result<Vec<_>>>()?
        .concat();
    let basis = NystromBasis::from_signatures(&particles, 15)?;
    let probe = Geometry::with_empirical_cov(basis.clone(), &particles, 1.0)?;
    // ridge at the top of the spectrum
    let ridge = probe.precision.spectral_radius();
    let g = Geometry::with_empirical_cov(basis, &particles, ridge)?;
    let proxy = mean_series(&particles)?;
    let rep = projection_error_probe(&particles, &proxy, &g, &(0..=15).collect::<Vec<_>>())?;
    let worst_ratio = rep
        .rows
        .iter()
        .filter(|r| r.m_prime > rep.m_fit && r.tail > 0.0)
        .map(|r| r.eps_proj / (rep.c_fit * r.tail.sqrt()))
        .fold(0.0, f64::max);
    Ok(CriterionResult::new(
        10,
        // the constant word never varies, so the last tail is exactly zero
        // while the field there carries roundoff
        rep.monotone() && rep.tail_bound_holds(2.0, 1e-12 * rep.rows[0].eps_proj),
        &[
            ("monotone", rep.monotone() as u8 as f64),
            ("c_fit", rep.c_fit),
            ("worst_ratio_to_fit", worst_ratio),
        ],
    ))
}

/// Covariance scale applied in the stress runs.
pub const STRESS_INFLATION: f64 = 10.0;

fn stability(seed: u64) -> Result<CriterionResult> {
    let mut base = regime_toy(0, true, seed)?;
    base.geometry.precision.inflate(STRESS_INFLATION)?;
    let (mut max_norm, mut finite) = (0.0f64, true);
    let (mut violations, mut steps) = (0, 0);
    let mut min_gain = f64::INFINITY;
    for inst in 0..32u64 {
        let config = FlowConfig {
            seed: seed.wrapping_add(inst),
            ..base.config.clone()
        };
        let (_, st) = run_flow(&config, &base.initial, &base.proxy, base.geometry.clone())?;
        let rep = stability_monitor(&st);
        max_norm = max_norm.max(rep.max_norm);
        finite &= rep.all_finite && st.loss_trace.iter().all(|j| j.is_finite());
        violations += rep.violations;
        steps += rep.steps;
        min_gain = min_gain.min(st.min_gain);
    }
    let rate = violations as f64 / steps as f64;
    Ok(CriterionResult::new(
        11,
        max_norm <= 1e3 && finite && rate <= 0.05,
        &[
            ("max_norm", max_norm),
            ("all_finite", finite as u8 as f64),
            ("violation_rate", rate),
            ("min_gain", min_gain),
        ],
    ))
}
