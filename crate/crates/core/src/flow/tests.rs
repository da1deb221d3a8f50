use super::*;
use crate::avnsg::NystromBasis;
use crate::signature::{marcus_signature, terminal_gradient};
use crate::synthgen::{gen_merton, MertonParams};
use rand::SeedableRng;

fn toy_geometry(d: usize, depth: usize, m: usize, seed: u64, ridge: f64) -> Geometry {
    let ens = gen_merton(&MertonParams::brownian(d, 0.8), 40, 6, 1.0, seed).unwrap().ensemble;
    let grid = crate::synthgen::uniform_grid(0.0, 1.0, 5);
    let sigs: Vec<TensorSeries> = ens
        .paths()
        .iter()
        .flat_map(|p| crate::synthgen::restricted_signatures(p, 0.0, &grid[1..], depth).unwrap())
        .collect();
    let basis = NystromBasis::from_signatures(&sigs, m).unwrap();
    Geometry::new(basis, ridge).unwrap()
}

fn line(slope: f64, t1: f64) -> CadlagPath {
    CadlagPath::new(vec![0.0, t1], vec![vec![0.0], vec![slope * t1]], vec![false; 2]).unwrap()
}

fn config(n: usize, steps: usize, h: f64) -> FlowConfig {
    FlowConfig {
        diffusion_scale: 0.0,
        base_rate: 0.0,
        ..FlowConfig::new(Mode::Forecast, steps as f64 * h, h, n, 11)
    }
}

#[test]
fn score_vanishes_on_proxy_and_scales_with_ridge() {
    let g = toy_geometry(1, 3, 15, 1, 0.25);
    let s = marcus_signature(&line(0.7, 0.4), 3);
    assert!(score(&s, &s, &g).unwrap().norm() == 0.0);
    let p = marcus_signature(&line(-0.2, 0.9), 3);
    let psi = score(&s, &p, &g).unwrap();
    let direct = (g.project(&p).unwrap() - g.project(&s).unwrap()) * 4.0;
    assert!((psi - direct).norm() < 1e-10);
}

#[test]
fn drift_matches_finite_differences() {
    let g = toy_geometry(2, 3, 30, 2, 0.1);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let v: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = TensorSeries::exp_level1(&[0.3, v[0], v[1]], 3);
        let p = TensorSeries::exp_level1(&[0.5, v[2], -v[0]], 3);
        let psi = score(&s, &p, &g).unwrap();
        let f = score_drift(&s, &psi, &g, 1.0);
        let lifted = g.basis.lift(&psi);
        for i in 0..2 {
            let direct = lifted.inner(&terminal_gradient(&s, i + 1).unwrap()).unwrap();
            assert!((f[i] - direct).abs() <= 1e-12 * (1.0 + direct.abs()));
            let eps = 1e-5;
            let mut e = vec![0.0; 2];
            e[i] = eps;
            let up = lifted.inner(&signature_extend(&s, 0.0, &e, false).unwrap()).unwrap();
            e[i] = -eps;
            let down = lifted.inner(&signature_extend(&s, 0.0, &e, false).unwrap()).unwrap();
            let fd = (up - down) / (2.0 * eps);
            assert!((fd - f[i]).abs() <= 1e-6 * f[i].abs().max(1e-3), "{fd} vs {}", f[i]);
        }
    }
}

#[test]
fn boundary_blend() {
    let cfg = config(1, 10, 0.1);
    assert_eq!(drift(&[0.0], &[1.5], 2.0, 2.0, &cfg), vec![1.5]);
    let late = drift(&[0.0], &[1.5], 2.0 + 100.0 * cfg.boundary_blend_halflife, 2.0, &cfg);
    assert!(late[0].abs() < 1e-20);
    assert!((boundary_weight(1.0 + cfg.boundary_blend_halflife, 1.0, cfg.boundary_blend_halflife) - 0.5).abs() < 1e-15);
}

#[test]
fn jump_gain_contract() {
    let g = toy_geometry(1, 3, 15, 3, 0.1);
    let s = marcus_signature(&line(0.4, 0.5), 3);
    let p = marcus_signature(
        &CadlagPath::new(vec![0.0, 0.5, 0.5], vec![vec![0.0], vec![0.2], vec![1.2]], vec![false, false, true]).unwrap(),
        3,
    );
    let psi = score(&s, &p, &g).unwrap();
    assert_eq!(jump_gain(&s, &psi, &g, &[0.0]).unwrap(), 0.0);
    assert_eq!(jump_gain(&s, &DVector::zeros(g.basis.dim()), &g, &[1.0]).unwrap(), 0.0);
    let a = [0.8];
    let direct = g.basis.lift(&psi).inner(&signature_extend(&s, 0.0, &a, true).unwrap().sub(&s).unwrap()).unwrap();
    assert!((jump_gain(&s, &psi, &g, &a).unwrap() - direct).abs() < 1e-12 * (1.0 + direct.abs()));

    let cfg = FlowConfig {
        jump_dictionary: Some(vec![vec![0.0], vec![1.0]]),
        ..config(1, 1, 0.1)
    };
    let (amp, gain) = select_jump(&s, &psi, &g, &cfg).unwrap();
    assert!(amp[0] > 0.0 && gain > 0.0);
    for c in JUMP_SCALES {
        assert!(gain >= jump_gain(&s, &psi, &g, &[c]).unwrap());
    }
    let zero = select_jump(&s, &DVector::zeros(g.basis.dim()), &g, &cfg).unwrap();
    assert_eq!(zero, (vec![0.0], 0.0));
}

#[test]
fn intensity_shape() {
    let cfg = FlowConfig {
        base_rate: 3.0,
        gain_kappa: 0.5,
        ..config(1, 1, 0.1)
    };
    assert_eq!(intensity(0.0, &cfg), 0.0);
    assert!((intensity(0.5, &cfg) - 1.5).abs() < 1e-15);
    assert!((intensity(1e12, &cfg) - 3.0).abs() < 1e-9);
    assert!(intensity(0.2, &cfg) < intensity(0.3, &cfg));
}

#[test]
fn loss_matches_full_space_identity_cov() {
    // d = 1, N = 2: six coordinates, full-rank anchors
    let g = toy_geometry(1, 2, 7, 4, 0.5);
    assert_eq!(g.basis.rank(), 7);
    let sigs: Vec<TensorSeries> = [0.3, -0.8, 1.1].iter().map(|k| marcus_signature(&line(*k, 0.6), 2)).collect();
    let p = marcus_signature(&line(0.1, 1.0), 2);
    let mut mean = TensorSeries::zero(2, 2);
    for s in &sigs {
        mean.axpy(1.0 / 3.0, s).unwrap();
    }
    let diff = p.sub(&mean).unwrap();
    let direct = 0.5 * diff.inner(&diff).unwrap() / 0.5;
    assert!((mmd_loss(&sigs, &p, &g).unwrap() - direct).abs() < 1e-9 * direct);
    assert!(mmd_loss(&sigs[..1], &sigs[0], &g).unwrap() < 1e-24);
}

fn constant_proxy(x: f64, t1: f64, n: usize) -> ProxyTrajectory {
    let reference = PathEnsemble::new(vec![CadlagPath::new(vec![0.0, t1], vec![vec![x], vec![x]], vec![false; 2]).unwrap()]).unwrap();
    crate::synthgen::build_proxy(&reference, 0.0, &crate::synthgen::uniform_grid(0.0, t1, n), 3).unwrap()
}

#[test]
fn static_ensemble_when_everything_is_off() {
    let g = toy_geometry(1, 3, 15, 5, 1e-2);
    let proxy = constant_proxy(0.5, 1.0, 10);
    let cfg = config(3, 10, 0.1);
    let start = CadlagPath::constant(0.0, vec![0.5]).unwrap();
    let (ens, state) = run_flow(&cfg, &start, &proxy, g).unwrap();
    assert_eq!(state.loss_trace.len(), 10);
    for p in ens.paths() {
        assert!(p.values().iter().all(|x| (x[0] - 0.5).abs() < 1e-12));
    }
    let j0 = state.initial_loss;
    assert!(state.loss_trace.iter().all(|j| (j - j0).abs() < 1e-12));
}

#[test]
fn one_step_and_horizon_errors() {
    let g = toy_geometry(1, 3, 15, 6, 1e-2);
    let proxy = ProxyTrajectory::frozen(marcus_signature(&line(1.0, 1.0), 3), 0.0, 1.0).unwrap();
    let cfg = config(2, 1, 0.1);
    let start = CadlagPath::constant(0.0, vec![0.0]).unwrap();
    let (_, mut state) = run_flow(&cfg, &start, &proxy, g.clone()).unwrap();
    assert_eq!(state.loss_trace.len(), 1);
    assert!(matches!(emm_step(&mut state, &proxy, &cfg), Err(Error::HorizonExceeded { .. })));
    let long = config(2, 20, 0.1);
    assert!(matches!(run_flow(&long, &start, &proxy, g), Err(Error::ProxyGridGap { .. })));
}

#[test]
fn clock_and_emitted_paths_are_consistent() {
    let g = toy_geometry(1, 3, 15, 7, 1e-2);
    let proxy_path = CadlagPath::new(
        vec![0.0, 0.5, 0.5, 1.0],
        vec![vec![0.0], vec![0.3], vec![1.3], vec![1.5]],
        vec![false, false, true, false],
    )
    .unwrap();
    let proxy = ProxyTrajectory::frozen(marcus_signature(&proxy_path, 3), 0.0, 1.0).unwrap();
    let cfg = FlowConfig {
        diffusion_scale: 0.3,
        base_rate: 50.0,
        gain_kappa: 1e-3,
        ..FlowConfig::new(Mode::Forecast, 1.0, 0.05, 6, 3)
    };
    let start = CadlagPath::constant(0.0, vec![0.0]).unwrap();
    let mut state = EnsembleState::init(&cfg, &[0.0], &[0.0], 0.0, g, &proxy).unwrap();
    for _ in 0..20 {
        emm_step(&mut state, &proxy, &cfg).unwrap();
        for p in &state.particles {
            assert!((p.sig.coeff_str("0") - (p.clock - state.t_start)).abs() < 1e-10);
        }
    }
    assert!(state.jump_count > 0);
    assert!(state.min_gain >= 0.0);
    for p in &state.particles {
        let path = p.path();
        assert!(path.jump_count() > 0 || p.sig.coeff_str("1") == path.last_value()[0]);
        for k in 1..path.len() {
            if path.jumps()[k] {
                assert_eq!(path.times()[k], path.times()[k - 1]);
            }
        }
        assert!(marcus_signature(&path, 3).max_abs_diff(&p.sig) <= 1e-10);
    }
    let _ = start;
}

#[test]
fn repeated_jumps_apply_sequentially() {
    let g = toy_geometry(1, 3, 15, 8, 1e-2);
    let target = marcus_signature(
        &CadlagPath::new(vec![0.0, 0.0, 0.1], vec![vec![0.0], vec![5.0], vec![5.0]], vec![false, true, false]).unwrap(),
        3,
    );
    let proxy = ProxyTrajectory::frozen(target, 0.0, 0.1).unwrap();
    let cfg = FlowConfig {
        base_rate: 400.0,
        gain_kappa: 1e-9,
        diffusion_scale: 0.0,
        ..FlowConfig::new(Mode::Forecast, 0.1, 0.1, 4, 2)
    };
    let mut state = EnsembleState::init(&cfg, &[0.0], &[0.0], 0.0, g, &proxy).unwrap();
    emm_step(&mut state, &proxy, &cfg).unwrap();
    let p = &state.particles[0];
    let path = p.path();
    assert!(path.jump_count() >= 2);
    let amp = path.values()[2][0] - path.values()[1][0];
    assert!(amp > 0.0);
    for k in 2..path.len() {
        assert!((path.values()[k][0] - path.values()[k - 1][0] - amp).abs() < 1e-12);
    }
}

#[test]
fn seeded_runs_are_identical_across_pools() {
    let g = toy_geometry(1, 3, 15, 9, 1e-2);
    let proxy = ProxyTrajectory::frozen(marcus_signature(&line(1.0, 1.0), 3), 0.0, 1.0).unwrap();
    let cfg = FlowConfig {
        diffusion_scale: 0.2,
        base_rate: 2.0,
        ..FlowConfig::new(Mode::Forecast, 1.0, 0.02, 16, 77)
    };
    let start = CadlagPath::constant(0.0, vec![0.0]).unwrap();
    let a = run_flow(&cfg, &start, &proxy, g.clone()).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let b = pool.install(|| run_flow(&cfg, &start, &proxy, g.clone()).unwrap());
    assert_eq!(a.0, b.0);
    assert_eq!(a.1.loss_trace, b.1.loss_trace);
}

#[test]
fn modes_anchor_on_the_contract() {
    let initial = CadlagPath::new(vec![0.0, 1.0, 2.0], vec![vec![0.0], vec![1.0], vec![1.5]], vec![false; 3]).unwrap();
    let fc = FlowConfig::new(Mode::Forecast, 1.0, 0.1, 1, 0);
    let (t, x, v) = anchoring(&fc, &initial).unwrap();
    assert_eq!((t, x, v), (2.0, vec![1.5], vec![0.5]));
    let rc = FlowConfig { mode: Mode::Reconstruction, ..fc.clone() };
    let (t, x, v) = anchoring(&rc, &initial).unwrap();
    assert_eq!((t, x, v), (1.0, vec![1.0], vec![1.0]));
    let too_long = FlowConfig { horizon: 3.0, ..rc };
    assert!(anchoring(&too_long, &initial).is_err());

    let g = toy_geometry(1, 3, 15, 10, 1e-2);
    let grid = crate::synthgen::uniform_grid(1.0, 2.0, 10);
    let proxy = crate::synthgen::build_proxy(&PathEnsemble::new(vec![initial.clone()]).unwrap(), 1.0, &grid, 3).unwrap();
    let recon = FlowConfig { mode: Mode::Reconstruction, diffusion_scale: 0.0, base_rate: 0.0, ..fc };
    let (ens, state) = run_flow(&recon, &initial, &proxy, g).unwrap();
    assert_eq!(state.t_start, 1.0);
    assert!(state.initial_loss <= 1e-12);
    assert_eq!(ens.paths()[0].first_value(), &[1.0]);
    assert!((ens.paths()[0].end_time() - 2.0).abs() < 1e-12);
}

#[test]
fn dissipation_terms_vanish_without_score() {
    let g = toy_geometry(1, 3, 15, 12, 1e-2);
    let proxy = constant_proxy(0.0, 0.5, 5);
    let cfg = config(2, 5, 0.1);
    let start = CadlagPath::constant(0.0, vec![0.0]).unwrap();
    let (_, state) = run_flow(&cfg, &start, &proxy, g).unwrap();
    let rep = dissipation_report(&state);
    assert!(rep.continuous < 1e-20 && rep.jump == 0.0 && rep.residual.abs() < 1e-9, "{rep:?}");
    let stab = stability_monitor(&state);
    assert_eq!(stab.violations, 0);
    assert!(stab.all_finite && stab.steps == 5);
}
