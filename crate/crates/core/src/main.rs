//! Command-line wrapper over the `dasnet` library.
//!
//! Exit codes: 0 success, 2 invalid input or configuration, 3 a numerical
//! check failed. `DASNET_OUT_DIR` replaces the configured output directory
//! when `--out` is absent; `DASNET_THREADS` sizes the worker pool.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use dasnet::io::config::{Profile, RunConfig};
use dasnet::io::store::{self, RunManifest};
use dasnet::io::{export_image, export_segmentation, load_checkpoint, load_fmc, save_checkpoint};
use dasnet::nets::init_params;
use dasnet::phantom::generate_phantom;
use dasnet::pipeline::{self, generate_dataset, Dataset, StrategyReport};
use dasnet::verify::{self, DOT_TEST_TOL, GRADCHECK_TOL};
use dasnet::{das_forward, Error};

#[derive(Parser)]
#[command(name = "dasnet", version, about = "Differentiable delay-and-sum imaging")]
struct Cli {
    /// Built-in defaults the config file is layered over.
    #[arg(long, global = true, default_value = "desk")]
    profile: String,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides both the dataset and the training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw phantoms and export their class maps.
    Phantom {
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Generate the training and test collections.
    Simulate,
    /// Beamform stored data volumes.
    Das {
        /// Dataset directory (default: <out>/dataset).
        #[arg(long)]
        data: Option<PathBuf>,
        /// A single data volume instead of a dataset.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Run one training strategy.
    Train {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        strategy: u8,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Starting checkpoint (default: the previous strategy's output).
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Dot-product test of the DAS adjoint on random instances.
    AdjointTest {
        #[arg(long, default_value_t = 20)]
        trials: usize,
    },
    /// Finite-difference checks of every differentiable op and the full chain.
    Gradcheck,
    /// Show the effective configuration.
    Config {
        #[arg(long)]
        dump_defaults: bool,
    },
}

enum Failure {
    Input(Error),
    Numerics(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFinite(_) => Failure::Numerics(e.to_string()),
            e => Failure::Input(e),
        }
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    outputs: Vec<PathBuf>,
}

impl Ctx {
    fn cache(&self) -> Option<&Path> {
        let c = &self.cfg.paths.cache_dir;
        (!c.as_os_str().is_empty()).then_some(c.as_path())
    }

    fn data_dir(&self, data: Option<PathBuf>) -> PathBuf {
        data.unwrap_or_else(|| self.out.join("dataset"))
    }

    fn load(&self, data: Option<PathBuf>) -> Outcome<Dataset> {
        Ok(store::load_dataset(&self.data_dir(data), self.cache())?)
    }

    fn write_json<T: Serialize>(&mut self, name: &str, v: &T) -> Outcome {
        let path = self.out.join(name);
        let text = serde_json::to_string_pretty(v).map_err(|e| Error::Validation(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(Error::from)?;
        self.outputs.push(path);
        Ok(())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Numerics(msg)) => {
            eprintln!("numerical check failed: {msg}");
            ExitCode::from(3)
        }
    }
}

fn run(cli: Cli) -> Outcome {
    if let Ok(n) = std::env::var("DASNET_THREADS") {
        let n: usize = n
            .parse()
            .map_err(|_| Error::Validation(format!("DASNET_THREADS: not a count: {n:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Validation(e.to_string()))?;
    }
    let profile: Profile = cli.profile.parse()?;
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p, profile)?,
        None => RunConfig::for_profile(profile),
    };
    if let Some(s) = cli.seed {
        cfg.dataset.seed = s;
        cfg.training.seed = s;
    }
    let out = cli
        .out
        .or_else(|| std::env::var_os("DASNET_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| cfg.paths.out_dir.clone());

    if let Command::Config { dump_defaults } = &cli.command {
        let shown = if *dump_defaults { RunConfig::for_profile(profile) } else { cfg };
        print!("{}", shown.to_toml());
        return Ok(());
    }

    std::fs::create_dir_all(&out).map_err(Error::from)?;
    let mut ctx = Ctx { cfg, out, outputs: Vec::new() };
    let (name, strategy) = match cli.command {
        Command::Phantom { count } => (cmd_phantom(&mut ctx, count)?, None),
        Command::Simulate => (cmd_simulate(&mut ctx)?, None),
        Command::Das { data, input } => (cmd_das(&mut ctx, data, input)?, None),
        Command::Train { strategy, data, init } => (cmd_train(&mut ctx, strategy, data, init)?, Some(strategy)),
        Command::Eval { checkpoint, data } => (cmd_eval(&mut ctx, &checkpoint, data)?, None),
        Command::AdjointTest { trials } => (cmd_adjoint(&mut ctx, trials)?, None),
        Command::Gradcheck => (cmd_gradcheck(&mut ctx)?, None),
        Command::Config { .. } => unreachable!(),
    };
    let manifest = RunManifest {
        command: name.to_string(),
        profile: ctx.cfg.profile.to_string(),
        config_hash: ctx.cfg.hash_hex(),
        dataset_seed: ctx.cfg.dataset.seed,
        training_seed: ctx.cfg.training.seed,
        strategy,
        version: env!("CARGO_PKG_VERSION").to_string(),
        outputs: ctx.outputs,
    };
    let path = store::write_run_manifest(&ctx.out, &manifest)?;
    std::fs::write(ctx.out.join("config.toml"), ctx.cfg.to_toml()).map_err(Error::from)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn cmd_phantom(ctx: &mut Ctx, count: usize) -> Outcome<&'static str> {
    let dc = ctx.cfg.dataset_config()?;
    let dir = ctx.out.join("phantoms");
    std::fs::create_dir_all(&dir).map_err(Error::from)?;
    for i in 0..count as u64 {
        let seed = dc.seed.wrapping_add(i);
        let ph = generate_phantom(&dc.grid, seed, &dc.phantom)?;
        let stem = dir.join(format!("phantom-{seed:05}"));
        store::save_segmentation(&stem.with_extension("dast"), &ph.class_map)?;
        let (pgm, csv) = export_segmentation(&ph.class_map, &stem)?;
        ctx.outputs.extend([stem.with_extension("dast"), pgm, csv]);
    }
    println!("{count} phantom(s) in {}", dir.display());
    Ok("phantom")
}

fn cmd_simulate(ctx: &mut Ctx) -> Outcome<&'static str> {
    let dc = ctx.cfg.dataset_config()?;
    let dir = ctx.out.join("dataset");
    if let Some(c) = ctx.cache() {
        store::cached_index_table(c, &dc)?;
    }
    let ds = generate_dataset(&dc)?;
    let m = store::save_dataset(&dir, &dc, &ctx.cfg.hash_hex(), &ds)?;
    ctx.outputs.push(dir.join(store::MANIFEST));
    println!("{} samples in {}", m.samples.len(), dir.display());
    Ok("simulate")
}

fn cmd_das(ctx: &mut Ctx, data: Option<PathBuf>, input: Option<PathBuf>) -> Outcome<&'static str> {
    let dir = ctx.out.join("das");
    std::fs::create_dir_all(&dir).map_err(Error::from)?;
    let dc = ctx.cfg.dataset_config()?;
    if let Some(path) = input {
        let f = load_fmc(&path)?;
        let table = match ctx.cache() {
            Some(c) => store::cached_index_table(c, &dc)?,
            None => pipeline::dataset::build_table(&dc)?,
        };
        let u = das_forward(&f, &table)?;
        let stem = dir.join(path.file_stem().unwrap_or_default());
        store::save_image(&stem.with_extension("dast"), &u)?;
        let (pgm, csv) = export_image(&u, &stem)?;
        ctx.outputs.extend([stem.with_extension("dast"), pgm, csv]);
        return Ok("das");
    }
    let ds = ctx.load(data)?;
    for s in ds.train.iter().chain(&ds.test) {
        let u = das_forward(&s.f_eps, &ds.table)?;
        let stem = dir.join(format!("das-{:05}", s.seed));
        store::save_image(&stem.with_extension("dast"), &u)?;
        let (pgm, csv) = export_image(&u, &stem)?;
        ctx.outputs.extend([stem.with_extension("dast"), pgm, csv]);
    }
    println!("beamformed {} samples into {}", ds.train.len() + ds.test.len(), dir.display());
    Ok("das")
}

fn checkpoint_path(out: &Path, strategy: u8) -> PathBuf {
    out.join(format!("strategy{strategy}.dasc"))
}

fn cmd_train(ctx: &mut Ctx, strategy: u8, data: Option<PathBuf>, init: Option<PathBuf>) -> Outcome<&'static str> {
    let ds = ctx.load(data)?;
    let tc = ctx.cfg.train_config();
    let init_params = match (strategy, init) {
        (_, Some(p)) => load_checkpoint(&p)?.0,
        (1, None) => init_params(tc.seed, &tc.net)?,
        (k, None) => load_checkpoint(&checkpoint_path(&ctx.out, k - 1))?.0,
    };
    let run = match strategy {
        1 => pipeline::train_strategy1,
        2 => pipeline::train_strategy2,
        _ => pipeline::train_strategy3,
    };
    let (params, mut report): (_, StrategyReport) = run(&init_params, &ds.train, &ds.test, &ds.table, &tc)?;
    let ckpt = checkpoint_path(&ctx.out, strategy);
    save_checkpoint(&ckpt, &params, None)?;
    report.checkpoint = Some(ckpt.file_name().unwrap().to_string_lossy().into_owned());
    ctx.outputs.push(ckpt);
    ctx.write_json(&format!("report-strategy{strategy}.json"), &report)?;
    ctx.write_json(
        &format!("timing-strategy{strategy}.json"),
        &serde_json::json!({ "wall_clock_s": report.wall_clock_s }),
    )?;
    write_predictions(ctx, &params, &ds, &format!("pred-strategy{strategy}"))?;
    println!(
        "strategy {strategy}: test CE {:.6e} -> {:.6e} ({:.1} s)",
        report.initial_test_ce, report.final_test_ce, report.wall_clock_s
    );
    Ok("train")
}

fn write_predictions(ctx: &mut Ctx, params: &dasnet::ParamSet, ds: &Dataset, prefix: &str) -> Outcome<f64> {
    let tc = ctx.cfg.train_config();
    let ev = pipeline::evaluate(params, &ds.test, &ds.table, &tc.net)?;
    let dir = ctx.out.join(prefix);
    std::fs::create_dir_all(&dir).map_err(Error::from)?;
    for (s, p) in ds.test.iter().zip(&ev.predictions) {
        let (pgm, csv) = export_segmentation(p, &dir.join(format!("pred-{:05}", s.seed)))?;
        ctx.outputs.extend([pgm, csv]);
    }
    Ok(ev.mean_ce)
}

fn cmd_eval(ctx: &mut Ctx, checkpoint: &Path, data: Option<PathBuf>) -> Outcome<&'static str> {
    let ds = ctx.load(data)?;
    let (params, _) = load_checkpoint(checkpoint)?;
    let tc = ctx.cfg.train_config();
    let ev = pipeline::evaluate(&params, &ds.test, &ds.table, &tc.net)?;
    write_predictions(ctx, &params, &ds, "eval")?;
    ctx.write_json(
        "eval.json",
        &serde_json::json!({
            "checkpoint": checkpoint,
            "mean_ce": ev.mean_ce,
            "per_sample_ce": ev.per_sample_ce,
            "seeds": ds.test.iter().map(|s| s.seed).collect::<Vec<_>>(),
        }),
    )?;
    println!("mean test cross entropy {:.6e}", ev.mean_ce);
    Ok("eval")
}

fn cmd_adjoint(ctx: &mut Ctx, trials: usize) -> Outcome<&'static str> {
    let r = verify::adjoint_test(trials, ctx.cfg.dataset.seed)?;
    ctx.write_json("adjoint-test.json", &serde_json::json!({
        "trials": trials,
        "max_rel_error": r.max_rel_error,
        "rel_errors": r.rel_errors,
        "tolerance": DOT_TEST_TOL,
    }))?;
    println!("max relative dot-test error {:.3e} over {trials} trials", r.max_rel_error);
    if !r.passed() {
        return Err(Failure::Numerics(format!(
            "dot-test error {:.3e} exceeds {DOT_TEST_TOL:e}",
            r.max_rel_error
        )));
    }
    Ok("adjoint-test")
}

fn cmd_gradcheck(ctx: &mut Ctx) -> Outcome<&'static str> {
    let results = verify::gradcheck_suite(ctx.cfg.training.seed)?;
    let mut worst = 0.0f64;
    for r in &results {
        println!("{:<40} {:>5} coords  rel {:.3e}", r.name, r.coordinates, r.rel_error);
        worst = worst.max(r.rel_error);
    }
    let rows: Vec<_> = results
        .iter()
        .map(|r| serde_json::json!({ "name": r.name, "rel_error": r.rel_error, "coordinates": r.coordinates }))
        .collect();
    ctx.write_json("gradcheck.json", &serde_json::json!({ "tolerance": GRADCHECK_TOL, "checks": rows }))?;
    if let Some(bad) = results.iter().find(|r| !r.passed()) {
        return Err(Failure::Numerics(format!("{} has relative error {:.3e}", bad.name, bad.rel_error)));
    }
    println!("all {} checks within {GRADCHECK_TOL:e} (worst {worst:.3e})", results.len());
    Ok("gradcheck")
}
