use std::path::{Path, PathBuf};

use pathlab_core::bounds::{
    features, generalization_bound_rhs, projection_error_probe, rademacher_bound, rademacher_mc,
    DEFAULT_RADEMACHER_DRAWS,
};
use pathlab_core::bridge::{self, moment_residual, solve_bridge_features};
use pathlab_core::flow::{dissipation_report, run_flow, stability_monitor};
use pathlab_core::herding::{herd_signatures, herding_rate_report};
use pathlab_core::path::{read_ensemble_csv, write_ensemble_csv};
use pathlab_core::signature::{expected_signature, mean_series, signatures};
use pathlab_core::synthgen::{build_proxy, gen_merton, gen_regime_switch, restricted_signatures, uniform_grid};
use pathlab_core::{
    suite, CadlagPath, Error, FlowConfig, Geometry, MertonParams, NystromBasis, PathEnsemble, ProxyTrajectory, Result,
    TensorSeries,
};
use serde::Serialize;

use crate::manifest::Run;
use crate::{BoundsCommand, Command, GeometryArgs, Model};

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Gen {
            model,
            config,
            n,
            steps,
            horizon,
            seed,
            out,
        } => gen(model, config.as_deref(), n, steps, horizon, seed, out),
        Command::Sig { input, depth, out } => sig(&input, depth, out),
        Command::Proxy {
            input,
            depth,
            steps,
            horizon,
            out,
        } => proxy(&input, depth, steps, horizon, out),
        Command::Herd {
            input,
            target,
            n,
            geometry,
            out,
        } => herd(&input, target.as_deref(), n, &geometry, out),
        Command::Bridge {
            input,
            target,
            geometry,
            out,
        } => bridge_cmd(&input, &target, &geometry, out),
        Command::Flow {
            config,
            input,
            proxy,
            reference,
            mode,
            seed,
            n,
            depth,
            m,
            ridge,
            out,
        } => {
            let mut run = Run::new("flow", out);
            let mut cfg: FlowConfig = read_json(&mut run, &config)?;
            if let Some(mode) = mode {
                cfg.mode = mode.into();
            }
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(n) = n {
                cfg.n_particles = n;
            }
            let sources = FlowSources {
                initial: input.as_deref(),
                proxy: proxy.as_deref(),
                reference: reference.as_deref(),
                depth,
            };
            flow(run, cfg, sources, m, ridge)
        }
        Command::Bounds { which } => bounds(which),
        Command::Suite { seed, only, out } => suite_cmd(seed, only.as_deref(), out),
    }
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    v.push(b'\n');
    Ok(v)
}

fn read_json<T: serde::de::DeserializeOwned>(run: &mut Run, path: &Path) -> Result<T> {
    let bytes = run.read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn read_paths(run: &mut Run, path: &Path) -> Result<PathEnsemble> {
    let bytes = run.read(path)?;
    read_ensemble_csv(bytes.as_slice())
}

fn ensemble_csv(ens: &PathEnsemble) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_ensemble_csv(ens, &mut buf)?;
    Ok(buf)
}

/// Basis and empirical covariance over a signature pool.
fn pool_geometry(pool: &[TensorSeries], args: &GeometryArgs, run: &mut Run) -> Result<Geometry> {
    let m = args.m.min(pool.len());
    if m < args.m {
        run.warn(format!("Nyström rank reduced to {m} by the pool size"));
    }
    let basis = NystromBasis::from_signatures(pool, m)?;
    if basis.rank() < m {
        run.warn(format!("anchors span rank {} of {m}", basis.rank()));
    }
    Geometry::with_empirical_cov(basis, pool, args.ridge)
}

#[derive(Serialize)]
struct GenEcho<'a, P: Serialize> {
    model: &'a str,
    params: &'a P,
    n: usize,
    steps: usize,
    horizon: f64,
}

fn gen(model: Model, config: Option<&Path>, n: usize, steps: usize, horizon: f64, seed: u64, out: Option<PathBuf>) -> Result<()> {
    let mut run = Run::new("gen", out);
    run.seed(seed);
    let generated = match model {
        Model::Merton => {
            let params: MertonParams = match config {
                Some(p) => read_json(&mut run, p)?,
                None => MertonParams::brownian(1, 1.0),
            };
            run.config(&GenEcho {
                model: "merton",
                params: &params,
                n,
                steps,
                horizon,
            });
            gen_merton(&params, n, steps, horizon, seed)?
        }
        Model::Regime => {
            let Some(p) = config else {
                return Err(Error::InvalidConfig("the regime model needs --config".into()));
            };
            let params: pathlab_core::RegimeSwitchParams = read_json(&mut run, p)?;
            run.config(&GenEcho {
                model: "regime",
                params: &params,
                n,
                steps,
                horizon,
            });
            gen_regime_switch(&params, n, steps, horizon, seed)?
        }
    };
    if generated.clipped > 0 {
        run.warn(format!("{} coordinates clipped", generated.clipped));
    }
    run.artifact("ensemble.csv", ensemble_csv(&generated.ensemble)?);
    run.finish()
}

#[derive(Serialize)]
struct SigOutput {
    paths: usize,
    #[serde(flatten)]
    mean: TensorSeries,
    #[serde(skip_serializing_if = "Option::is_none")]
    per_path: Option<Vec<TensorSeries>>,
}

fn sig(input: &Path, depth: usize, out: Option<PathBuf>) -> Result<()> {
    let mut run = Run::new("sig", out);
    run.config(&serde_json::json!({ "depth": depth }));
    let ens = read_paths(&mut run, input)?;
    let sigs = signatures(&ens, depth);
    let output = SigOutput {
        paths: sigs.len(),
        mean: mean_series(&sigs)?,
        per_path: (sigs.len() > 1).then_some(sigs),
    };
    run.artifact("signature.json", json_bytes(&output)?);
    run.finish()
}

fn common_support(ens: &PathEnsemble) -> (f64, f64) {
    let start = ens.paths().iter().map(|p| p.start_time()).fold(f64::NEG_INFINITY, f64::max);
    let end = ens.paths().iter().map(|p| p.end_time()).fold(f64::INFINITY, f64::min);
    (start, end)
}

fn proxy(input: &Path, depth: usize, steps: usize, horizon: Option<f64>, out: Option<PathBuf>) -> Result<()> {
    let mut run = Run::new("proxy", out);
    let ens = read_paths(&mut run, input)?;
    let (start, end) = common_support(&ens);
    let horizon = horizon.unwrap_or(end - start);
    run.config(&serde_json::json!({ "depth": depth, "steps": steps, "horizon": horizon }));
    if steps == 0 {
        return Err(Error::InvalidConfig("proxy grid needs at least one interval".into()));
    }
    let grid = uniform_grid(start, start + horizon, steps + 1);
    let proxy = build_proxy(&ens, start, &grid, depth)?;
    run.artifact("proxy.json", json_bytes(&proxy)?);
    run.finish()
}

#[derive(Serialize)]
struct HerdOutput {
    result: pathlab_core::HerdingResult,
    rate: Option<pathlab_core::herding::RateReport>,
}

fn target_signature(run: &mut Run, target: Option<&Path>, fallback: &[TensorSeries], depth: usize) -> Result<TensorSeries> {
    match target {
        Some(p) => expected_signature(&read_paths(run, p)?, depth),
        None => mean_series(fallback),
    }
}

fn herd(input: &Path, target: Option<&Path>, k: usize, args: &GeometryArgs, out: Option<PathBuf>) -> Result<()> {
    let mut run = Run::new("herd", out);
    run.config(&serde_json::json!({ "n": k, "depth": args.depth, "m": args.m, "ridge": args.ridge }));
    let sigs = signatures(&read_paths(&mut run, input)?, args.depth);
    let geometry = pool_geometry(&sigs, args, &mut run)?;
    let target = target_signature(&mut run, target, &sigs, args.depth)?;
    let result = herd_signatures(&target, &sigs, k, &geometry)?;
    let rate = match herding_rate_report(&result) {
        Ok(r) => Some(r),
        Err(Error::TraceTooShort(_)) => {
            run.warn("fewer than 20 selections: no rate report");
            None
        }
        Err(e) => return Err(e),
    };
    run.artifact("herding.json", json_bytes(&HerdOutput { result, rate })?);
    run.finish()
}

#[derive(Serialize)]
struct BridgeOutput {
    tilt: pathlab_core::GibbsTilt,
    moment_residual: f64,
}

fn bridge_cmd(input: &Path, target: &Path, args: &GeometryArgs, out: Option<PathBuf>) -> Result<()> {
    let mut run = Run::new("bridge", out);
    run.config(&serde_json::json!({ "depth": args.depth, "m": args.m, "ridge": args.ridge, "tol": bridge::DEFAULT_TOL }));
    let sigs = signatures(&read_paths(&mut run, input)?, args.depth);
    let geometry = pool_geometry(&sigs, args, &mut run)?;
    let target = geometry.project(&expected_signature(&read_paths(&mut run, target)?, args.depth)?)?;
    let feats = sigs.iter().map(|s| geometry.project(s)).collect::<Result<Vec<_>>>()?;
    let tilt = solve_bridge_features(&feats, &target, &geometry, bridge::DEFAULT_TOL, bridge::DEFAULT_MAX_ITER)?;
    if !tilt.converged {
        run.warn(format!("dual ascent stopped at residual {:e}", tilt.residual()));
    }
    let residual = moment_residual(&tilt, &feats, &target, &geometry);
    run.artifact(
        "bridge.json",
        json_bytes(&BridgeOutput {
            tilt,
            moment_residual: residual,
        })?,
    );
    run.finish()
}

struct FlowSources<'a> {
    initial: Option<&'a Path>,
    proxy: Option<&'a Path>,
    reference: Option<&'a Path>,
    depth: usize,
}

/// Anchors every tenth grid point along each reference path.
fn reference_pool(reference: &PathEnsemble, proxy: &ProxyTrajectory) -> Result<Vec<TensorSeries>> {
    let grid = proxy.grid();
    let stride = (grid.len() / 10).max(1);
    let picks: Vec<f64> = grid.iter().skip(1).step_by(stride).copied().collect();
    let mut pool = Vec::new();
    for p in reference.paths() {
        pool.extend(restricted_signatures(p, proxy.start(), &picks, proxy.depth())?);
    }
    Ok(pool)
}

fn flow(mut run: Run, config: FlowConfig, sources: FlowSources<'_>, m: usize, ridge: f64) -> Result<()> {
    config.validate()?;
    run.config(&config);
    run.seed(config.seed);
    let reference = match sources.reference {
        Some(p) => Some(read_paths(&mut run, p)?),
        None => None,
    };
    let proxy: ProxyTrajectory = match (sources.proxy, &reference) {
        (Some(p), _) => read_json(&mut run, p)?,
        (None, Some(r)) => {
            let (start, end) = common_support(r);
            build_proxy(r, start, &uniform_grid(start, end, config.n_steps()? + 1), sources.depth)?
        }
        (None, None) => return Err(Error::InvalidConfig("flow needs --proxy or --reference".into())),
    };
    let args = GeometryArgs {
        depth: proxy.depth(),
        m,
        ridge,
    };
    let geometry = match &reference {
        Some(r) => pool_geometry(&reference_pool(r, &proxy)?, &args, &mut run)?,
        None => {
            let pool = proxy.proxies().to_vec();
            let m = m.min(pool.len());
            Geometry::new(NystromBasis::from_signatures(&pool, m)?, ridge)?
        }
    };
    let initial = match sources.initial {
        Some(p) => {
            let ens = read_paths(&mut run, p)?;
            if ens.len() != 1 {
                return Err(Error::InvalidPath(format!("initial path file holds {} paths", ens.len())));
            }
            ens.into_paths().remove(0)
        }
        None => {
            let d = proxy.alphabet() - 1;
            let x0 = match &reference {
                Some(r) => (0..d)
                    .map(|i| r.paths().iter().map(|p| p.first_value()[i]).sum::<f64>() / r.len() as f64)
                    .collect(),
                None => vec![0.0; d],
            };
            let t = match config.mode {
                pathlab_core::Mode::Forecast => proxy.start(),
                pathlab_core::Mode::Reconstruction => proxy.start() + config.horizon,
            };
            CadlagPath::constant(t, x0)?
        }
    };
    let (ensemble, state) = run_flow(&config, &initial, &proxy, geometry)?;
    let stability = stability_monitor(&state);
    if stability.violations > 0 {
        run.warn(format!(
            "jump energy above the continuous dissipation on {} of {} steps",
            stability.violations, stability.steps
        ));
    }
    let mut loss = String::from("s,J,cont,jump,resid\n");
    for d in &state.dissipation_trace {
        loss.push_str(&format!("{:?},{:?},{:?},{:?},{:?}\n", d.s, d.loss, d.continuous, d.jump, d.residual));
    }
    let diagnostics = serde_json::json!({
        "initial_loss": state.initial_loss,
        "final_loss": state.loss_trace.last(),
        "jump_count": state.jump_count,
        "min_gain": state.min_gain,
        "dissipation": dissipation_report(&state),
        "stability": stability,
    });
    run.artifact("ensemble.csv", ensemble_csv(&ensemble)?);
    run.artifact("loss.csv", loss.into_bytes());
    run.artifact("diagnostics.json", json_bytes(&diagnostics)?);
    run.finish()
}

fn bounds(which: BoundsCommand) -> Result<()> {
    match which {
        BoundsCommand::Gen {
            input,
            target,
            delta,
            seed,
            geometry: args,
            out,
        } => {
            let mut run = Run::new("bounds gen", out);
            run.seed(seed);
            run.config(&serde_json::json!({ "delta": delta, "depth": args.depth, "m": args.m, "ridge": args.ridge }));
            let ens = read_paths(&mut run, &input)?;
            let g = pool_geometry(&signatures(&ens, args.depth), &args, &mut run)?;
            let feats = features(&ens, &g)?;
            let rhs = generalization_bound_rhs(&feats, delta, &g, DEFAULT_RADEMACHER_DRAWS, seed)?;
            let lhs = match target {
                Some(p) => {
                    let oracle = g.project(&expected_signature(&read_paths(&mut run, &p)?, args.depth)?)?;
                    let mean = feats.iter().fold(oracle.clone() * 0.0, |a, f| a + f) / feats.len() as f64;
                    Some(g.norm(&(oracle - mean)))
                }
                None => None,
            };
            let report = serde_json::json!({
                "rhs": rhs,
                "lhs": lhs,
                "satisfied": lhs.map(|l| l <= rhs.rhs),
            });
            run.artifact("bound.json", json_bytes(&report)?);
            run.finish()
        }
        BoundsCommand::Rad {
            input,
            radius,
            draws,
            seed,
            geometry: args,
            out,
        } => {
            let mut run = Run::new("bounds rad", out);
            run.seed(seed);
            run.config(&serde_json::json!({ "radius": radius, "draws": draws, "depth": args.depth, "m": args.m, "ridge": args.ridge }));
            let ens = read_paths(&mut run, &input)?;
            let g = pool_geometry(&signatures(&ens, args.depth), &args, &mut run)?;
            let feats = features(&ens, &g)?;
            let report = serde_json::json!({
                "closed_form": rademacher_bound(&feats, radius, &g)?,
                "monte_carlo": rademacher_mc(&feats, radius, &g, draws, seed)?,
            });
            run.artifact("rademacher.json", json_bytes(&report)?);
            run.finish()
        }
        BoundsCommand::Proj {
            input,
            target,
            geometry: args,
            out,
        } => {
            let mut run = Run::new("bounds proj", out);
            run.config(&serde_json::json!({ "depth": args.depth, "m": args.m, "ridge": args.ridge }));
            let sigs = signatures(&read_paths(&mut run, &input)?, args.depth);
            let g = pool_geometry(&sigs, &args, &mut run)?;
            let proxy = target_signature(&mut run, target.as_deref(), &sigs, args.depth)?;
            let ms: Vec<usize> = (0..=proxy.len()).collect();
            let report = projection_error_probe(&sigs, &proxy, &g, &ms)?;
            if !report.monotone() {
                run.warn("projection error is not monotone in the retained rank");
            }
            run.artifact("projection.json", json_bytes(&report)?);
            run.finish()
        }
    }
}

fn suite_cmd(seed: u64, only: Option<&[usize]>, out: Option<PathBuf>) -> Result<()> {
    let mut run = Run::new("suite", out);
    run.seed(seed);
    run.config(&serde_json::json!({ "only": only }));
    let result = suite::run_suite(seed, only)?;
    for c in result.report.criteria.iter().filter(|c| !c.passed) {
        run.warn(format!("criterion {} ({}) failed", c.id, c.name));
    }
    if result.timings.update_cost_quadratic() == Some(false) {
        run.warn("rank-1 update cost grows faster than m^2.3");
    }
    let mut report = result.report.to_json().into_bytes();
    report.push(b'\n');
    run.artifact("report.json", report);
    run.artifact("timings.json", json_bytes(&result.timings)?);
    run.finish()
}
