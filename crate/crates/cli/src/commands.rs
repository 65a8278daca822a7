use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use log::info;

use mcf_core::config::{ConfigError, RunConfig};
use mcf_core::deploy::{run_episode, Controller, DeployError, EnsembleBundle};
use mcf_core::evalkit::{astar_shortest, evaluate_methods, EnvGroup};
use mcf_core::simenv::{resolve_arena, unseen_arena, WorldSpec};
use mcf_core::trainer::{
    self, exploration_heatmap, provenance_comment, train_suite, Mode, TrainError, AGGREGATE_FILE, CURVE_FILE, MANIFEST_FILE,
};

use crate::{ArenaCheckArgs, CommonArgs, DemoArgs, EvalArgs, PlotDataArgs, TrainArgs};

const CONFIG_FILE: &str = "config.json";
const HEATMAP_FILE: &str = "heatmap.csv";
const HEATMAP_RESOLUTION: f64 = 10.0;

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration, arguments or inputs.
    Config(String),
    Divergence(String),
    Other(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Divergence(_) => 3,
            CliError::Other(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "{m}"),
            CliError::Divergence(m) => write!(f, "training diverged: {m}"),
            CliError::Other(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Other(e)
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(m) => CliError::Config(m),
            e if e.is_divergence() => CliError::Divergence(e.to_string()),
            e => CliError::Other(e.into()),
        }
    }
}

impl From<DeployError> for CliError {
    fn from(e: DeployError) -> Self {
        match e {
            DeployError::MissingMembers(_) | DeployError::Bundle { .. } | DeployError::TooFewMembers(_) | DeployError::ArchitectureMismatch(_) | DeployError::NeedsBundle { .. } | DeployError::Arena(_) => {
                CliError::Config(e.to_string())
            }
            e => CliError::Other(e.into()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn load_config(common: &CommonArgs) -> Result<RunConfig> {
    match &common.config {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn write(out: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn arena(name: &str) -> Result<WorldSpec> {
    resolve_arena(name).map_err(|e| CliError::Config(format!("arena {name}: {e}")))
}

pub fn train(args: TrainArgs) -> Result<()> {
    let mut cfg = load_config(&args.common)?;
    if !args.seeds.is_empty() {
        cfg.train.seeds = args.seeds.clone();
    }
    if let Some(s) = args.steps {
        cfg.train.total_steps = s;
    }
    if !args.arenas.is_empty() {
        cfg.train.arenas = args.arenas.clone();
    }
    let modes: Vec<Mode> = if args.mode.is_empty() {
        vec![cfg.train.mode]
    } else {
        args.mode
            .iter()
            .map(|m| Mode::parse(m).ok_or_else(|| CliError::Config(format!("unknown mode {m}"))))
            .collect::<Result<_>>()?
    };
    cfg.train.mode = modes[0];
    cfg.validate()?;
    let hash = cfg.hash();
    let out = &args.common.out;
    write(out, CONFIG_FILE, &cfg.to_json_pretty())?;
    let runs = train_suite(&cfg.train_config(), &modes, out, &hash, args.workers)?;

    if args.heatmap_episodes > 0 {
        arena(&args.heatmap_arena)?;
        for run in &runs {
            let tc = trainer::TrainConfig { mode: run.mode, arenas: vec![args.heatmap_arena.clone()], ..cfg.train_config() };
            let seed = tc.seeds[0];
            let reset = mcf_core::rng::derive_seed(seed, "heatmap");
            let ex = exploration_heatmap(&tc, seed, reset, args.heatmap_episodes, HEATMAP_RESOLUTION)?;
            write(&run.dir, HEATMAP_FILE, &(provenance_comment(&hash) + &ex.heatmap.to_csv()))?;
            println!(
                "{}: {:.1}% of early visits within 1 m of the prior path, {:.1}% within 2 m of the start region",
                run.mode,
                100.0 * ex.fraction_near_prior_path(1.0),
                100.0 * ex.fraction_near_region(&tc.load_worlds()?[0].start_region, 2.0)
            );
        }
    }

    let mut diverged = Vec::new();
    let mut failed = Vec::new();
    for run in &runs {
        for r in &run.outcomes {
            match r {
                Ok(o) => println!(
                    "{} seed {}: {} steps, {} episodes, final success {}",
                    o.mode,
                    o.seed,
                    o.steps,
                    o.episodes,
                    o.curve.points.last().map_or("n/a".to_string(), |p| format!("{:.2}", p.success_rate))
                ),
                Err(e) if e.is_divergence() => diverged.push(e.to_string()),
                Err(e) => failed.push(e.to_string()),
            }
        }
        info!("wrote {}", run.dir.display());
    }
    if !diverged.is_empty() {
        return Err(CliError::Divergence(diverged.join("; ")));
    }
    if !failed.is_empty() {
        return Err(CliError::Other(anyhow::anyhow!(failed.join("; "))));
    }
    Ok(())
}

fn env_groups(names: &[String], cfg: &RunConfig) -> Result<Vec<EnvGroup>> {
    names
        .iter()
        .map(|n| {
            let worlds = match n.as_str() {
                "train" => cfg.train_config().load_worlds()?,
                "unseen" => vec![Arc::new(unseen_arena())],
                other => vec![Arc::new(arena(other)?)],
            };
            Ok(EnvGroup { label: n.clone(), worlds })
        })
        .collect()
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let mut cfg = load_config(&args.common)?;
    if let Some(e) = args.episodes {
        cfg.eval.episodes = e;
    }
    if let Some(s) = args.seed {
        cfg.eval.seed = s;
    }
    cfg.deploy.deterministic = !args.stochastic;
    cfg.validate()?;
    let methods: Vec<Controller> = args
        .methods
        .iter()
        .map(|m| Controller::parse(m).ok_or_else(|| CliError::Config(format!("unknown method {m}"))))
        .collect::<Result<_>>()?;
    let bundle = match (&args.bundle, methods.iter().any(|m| m.needs_bundle())) {
        (Some(dir), true) => Some(EnsembleBundle::load(dir)?),
        (None, true) => return Err(CliError::Config("mcf and policy_only need --bundle".into())),
        (_, false) => None,
    };
    let groups = env_groups(&args.env, &cfg)?;
    let report = evaluate_methods(&methods, &groups, bundle.as_ref(), &cfg.apf, &cfg.deploy, &cfg.eval, &cfg.hash())
        .map_err(|e| match e {
            mcf_core::evalkit::EvalError::Deploy(d) => CliError::from(d),
            other => CliError::Other(other.into()),
        })?;
    write(&args.common.out, "report.json", &report.to_json())?;
    let md = report.to_markdown();
    write(&args.common.out, "report.md", &md)?;
    print!("{md}");
    Ok(())
}

pub fn demo(args: DemoArgs) -> Result<()> {
    let mut cfg = load_config(&args.common)?;
    cfg.deploy.deterministic = !args.stochastic;
    let world = Arc::new(arena(&args.arena)?);
    let bundle = args.bundle.as_deref().map(EnsembleBundle::load).transpose()?;
    let controller = match &args.controller {
        Some(c) => Controller::parse(c).ok_or_else(|| CliError::Config(format!("unknown controller {c}")))?,
        None if bundle.is_some() => Controller::Mcf,
        None => Controller::PriorOnly,
    };
    let mut rec = run_episode(controller, bundle.as_ref(), &world, args.seed, &cfg.apf, &cfg.deploy)?;
    let hash = cfg.hash();
    rec.header.config_hash = hash.clone();
    let out = &args.common.out;
    write(out, "trajectory.csv", &(provenance_comment(&hash) + &rec.trajectory_csv()))?;
    if args.trace {
        write(out, "trace.jsonl", &rec.to_jsonl())?;
    }
    println!(
        "{} on {}: {:?} after {} steps, {:.2} m traveled",
        controller, rec.header.arena, rec.header.outcome, rec.header.steps, rec.header.path_length
    );
    Ok(())
}

/// Data lines of a CSV artifact: comment lines and the header dropped.
fn csv_rows(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().filter(|l| !l.starts_with('#')).skip(1).filter(|l| !l.is_empty()).map(String::from).collect())
}

pub fn plot_data(args: PlotDataArgs) -> Result<()> {
    let run = &args.run;
    if !run.is_dir() {
        return Err(CliError::Config(format!("run directory {} does not exist", run.display())));
    }
    let mut bundles: Vec<PathBuf> = Vec::new();
    if run.join(MANIFEST_FILE).is_file() {
        bundles.push(run.clone());
    } else {
        let mut subdirs: Vec<PathBuf> = fs::read_dir(run)
            .with_context(|| format!("listing {}", run.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(MANIFEST_FILE).is_file())
            .collect();
        subdirs.sort();
        bundles.extend(subdirs);
    }
    if bundles.is_empty() {
        return Err(CliError::Config(format!("no training runs under {}", run.display())));
    }
    let cfg = if run.join(CONFIG_FILE).is_file() { RunConfig::load(&run.join(CONFIG_FILE))? } else { RunConfig::default() };
    let hash = cfg.hash();
    let head = provenance_comment(&hash);

    let mut curves = head.clone() + "mode,member,seed,step,episode,mean_path_len,min,max,success_rate,alpha\n";
    let mut aggregate = head.clone() + "mode,step,mean_path_len,band_lo,band_hi,success_mean,success_var,seeds\n";
    let mut heatmaps = head.clone() + "mode,i,j,count\n";
    let mut any_heatmap = false;
    for dir in &bundles {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE)).context("reading manifest")?;
        let manifest: trainer::RunManifest =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", dir.join(MANIFEST_FILE).display())))?;
        let mode = manifest.mode.name();
        for m in manifest.members.iter().filter(|m| m.status == "ok") {
            for row in csv_rows(&dir.join(&m.dir).join(CURVE_FILE))? {
                curves += &format!("{mode},{},{},{row}\n", m.dir, m.seed);
            }
        }
        for row in csv_rows(&dir.join(AGGREGATE_FILE))? {
            aggregate += &format!("{mode},{row}\n");
        }
        if dir.join(HEATMAP_FILE).is_file() {
            any_heatmap = true;
            for row in csv_rows(&dir.join(HEATMAP_FILE))? {
                heatmaps += &format!("{mode},{row}\n");
            }
        }
    }
    let schedule = cfg.train_config().schedule();
    let mut alpha = head.clone() + "step,alpha\n";
    let n = args.alpha_points.max(2);
    for k in 0..n {
        let step = schedule.total_steps * k as u64 / (n as u64 - 1);
        alpha += &format!("{step},{}\n", schedule.alpha_at(step));
    }
    write(&args.out, "curves.csv", &curves)?;
    write(&args.out, "aggregate.csv", &aggregate)?;
    write(&args.out, "alpha_schedule.csv", &alpha)?;
    if any_heatmap {
        write(&args.out, "heatmaps.csv", &heatmaps)?;
    }
    println!("wrote plot data for {} run(s) to {}", bundles.len(), args.out.display());
    Ok(())
}

pub fn arena_check(args: ArenaCheckArgs) -> Result<()> {
    let world = arena(&args.arena)?;
    world.validate().map_err(|e| CliError::Config(format!("arena {}: {e}", args.arena)))?;
    let start = world.start_region.center();
    let goal = world.goal_region.center();
    let plan = astar_shortest(&world, start, goal, args.resolution)
        .map_err(|e| CliError::Config(format!("arena {}: {e}", args.arena)))?;
    println!(
        "{}: ok, start-to-goal shortest path {:.3} m ({} cells at {} cells/m)",
        world.name,
        plan.path_length,
        plan.cells.len(),
        args.resolution
    );
    Ok(())
}
