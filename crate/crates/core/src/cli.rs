//! Command-line front end. `run` parses arguments, executes one subcommand
//! and maps the outcome to a process exit code.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dfm::{cost_model, gradcheck, Variant, GENERATOR_SIZE};
use crate::dt::{run_dt_pipeline, transform, CoarseMask};
use crate::features::{depth_from_disparity, elevation_map, hha_image, normal_image, DerivedFeature};
use crate::io::{self, LabelImage};
use crate::metrics::{class_name, pr_csv};
use crate::net::{ablation, evaluate, load_split, train, Dataset, Fusion, Modality, NetConfig, TrainedModel};
use crate::synth::{generate_set, make_split_with, Split, DEFAULT_HEIGHT, DEFAULT_NOISE_SIGMA, DEFAULT_WIDTH};

/// Scenes rendered in memory when `train` or `ablate` get no data directory.
pub const DEFAULT_SCENES: usize = 60;
/// Seed of the in-memory scene set.
pub const DEFAULT_DATA_SEED: u64 = 2024;

#[derive(Debug, Parser)]
#[command(name = "roadfuse", version, about = "Road-scene disparity transform, features and fusion networks")]
#[command(arg_required_else_help = true, propagate_version = true)]
pub struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Debug-level logging (overrides GS_LOG).
    #[arg(long, short, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthetic scene generation.
    #[command(subcommand)]
    Synth(SynthCmd),
    /// Road profile fit and disparity transform.
    #[command(subcommand)]
    Dt(DtCmd),
    /// Geometric feature maps.
    #[command(subcommand)]
    Features(FeatureCmd),
    /// Dynamic fusion layer cost model and gradient check.
    #[command(subcommand)]
    Fuse(FuseCmd),
    /// Train one network from a JSON config.
    Train(TrainArgs),
    /// Train every fusion variant over several seeds.
    Ablate(AblateArgs),
    /// Score a saved model on a data split.
    Eval(EvalArgs),
}

#[derive(Debug, Subcommand)]
pub enum SynthCmd {
    /// Write scenes into flat disp/, rgb/ and label/ directories.
    Generate(SynthArgs),
    /// Write scenes into train/, val/ and test/ at 70/15/15.
    Split(SynthArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Disparity noise standard deviation in pixels.
    #[arg(long, default_value_t = DEFAULT_NOISE_SIGMA)]
    pub sigma: f64,
}

#[derive(Debug, Subcommand)]
pub enum DtCmd {
    /// Fit the road model and write it as key=value text.
    Estimate {
        #[arg(long)]
        disp: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Apply a stored road model.
    Transform {
        #[arg(long)]
        disp: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit and transform; writes transformed.pgm, model.txt, coarse_mask.pgm and road_mask.pgm.
    Pipeline {
        #[arg(long)]
        disp: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Clone, Copy)]
enum FeatureName {
    Depth,
    Normal,
    Elevation,
    Hha,
}

#[derive(Debug, Subcommand)]
pub enum FeatureCmd {
    Depth(FeatureArgs),
    Normal(FeatureArgs),
    Elevation(FeatureArgs),
    Hha(FeatureArgs),
}

#[derive(Debug, Args)]
pub struct FeatureArgs {
    #[arg(long)]
    pub disp: PathBuf,
    #[arg(long)]
    pub cam: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum FuseCmd {
    /// MAC counts of the naive and factorized layers.
    BenchCost {
        #[arg(long)]
        h: u64,
        #[arg(long)]
        w: u64,
        #[arg(long)]
        c: u64,
        #[arg(long)]
        cout: u64,
        #[arg(long, default_value_t = GENERATOR_SIZE as u64)]
        k: u64,
        /// Count the kernel generators too.
        #[arg(long)]
        include_generation: bool,
    },
    /// Analytic against numeric gradients on a random layer.
    Gradcheck {
        #[arg(long, default_value_t = 4)]
        h: usize,
        #[arg(long, default_value_t = 4)]
        w: usize,
        #[arg(long, default_value_t = 2)]
        c: usize,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Model file; the config and loss curve go to `<out>.json`.
    #[arg(long, default_value = "model.tnsr")]
    pub out: PathBuf,
    /// Data directory written by `synth split`; overrides the config.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Data directory written by `synth split`; scenes are rendered in memory when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Base config; fusion, modality and seed are overridden per run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "addition,concatenation,dfm-first,dfm-last,dfm-all")]
    pub fusions: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "tdisp")]
    pub modalities: Vec<String>,
    /// Scene count for in-memory data.
    #[arg(long, default_value_t = DEFAULT_SCENES)]
    pub scenes: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Report CSV; PR curves and extra values are written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
}

/// Parses `args` (including the program name) and runs the command.
/// Exit code 0 on success, 2 on usage errors, 1 on runtime errors.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(2));
        }
    };
    init_logging(cli.verbose);
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn init_logging(verbose: bool) {
    let mut builder = env_logger::Builder::from_env(env_logger::Env::new().filter_or("GS_LOG", "error"));
    if verbose {
        builder.filter_level(log::LevelFilter::Debug);
    }
    let _ = builder.format_timestamp(None).try_init();
}

pub fn execute(cli: &Cli) -> Result<()> {
    eprintln!("config: {cli:?}");
    if cli.threads == 0 {
        bail!("--threads must be at least 1");
    }
    let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Synth(cmd) => synth(cmd, seed),
        Command::Dt(cmd) => dt(cmd),
        Command::Features(cmd) => features(cmd),
        Command::Fuse(cmd) => fuse(cmd, seed),
        Command::Train(args) => train_cmd(args, cli.seed),
        Command::Ablate(args) => ablate_cmd(args, cli.seed),
        Command::Eval(args) => eval_cmd(args),
    }
}

fn synth(cmd: &SynthCmd, seed: u64) -> Result<()> {
    let manifest = match cmd {
        SynthCmd::Generate(a) => generate_set(a.n, seed, &a.out, a.sigma)?,
        SynthCmd::Split(a) => make_split_with(a.n, seed, &a.out, DEFAULT_WIDTH, DEFAULT_HEIGHT, a.sigma)?,
    };
    info!("wrote {} scenes", manifest.entries.len());
    Ok(())
}

fn mask_image(mask: &CoarseMask) -> Result<LabelImage> {
    Ok(LabelImage::new(mask.width, mask.height, mask.mask.iter().map(|&m| u8::from(m)).collect())?)
}

fn dt(cmd: &DtCmd) -> Result<()> {
    match cmd {
        DtCmd::Estimate { disp, model } => {
            let out = run_dt_pipeline(&io::read_pgm16(disp)?)?;
            io::write_road_model(&out.model, model)?;
            print!("{}", io::render_road_model(&out.model));
        }
        DtCmd::Transform { disp, model, out } => {
            let d = io::read_pgm16(disp)?;
            let m = io::read_road_model(model)?;
            let t = transform(&d, &m);
            if t.delta_recomputed {
                log::warn!("stored offset leaves negative values; using {}", t.delta);
            }
            io::write_pgm16(&t.image, out)?;
        }
        DtCmd::Pipeline { disp, out_dir } => {
            let out = run_dt_pipeline(&io::read_pgm16(disp)?)?;
            fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            io::write_pgm16(&out.transformed, out_dir.join("transformed.pgm"))?;
            io::write_road_model(&out.model, out_dir.join("model.txt"))?;
            io::write_labels(&mask_image(&out.coarse_mask)?, out_dir.join("coarse_mask.pgm"))?;
            io::write_labels(&mask_image(&out.road_mask)?, out_dir.join("road_mask.pgm"))?;
            print!("{}", io::render_road_model(&out.model));
        }
    }
    Ok(())
}

fn features(cmd: &FeatureCmd) -> Result<()> {
    let (args, kind) = match cmd {
        FeatureCmd::Depth(a) => (a, FeatureName::Depth),
        FeatureCmd::Normal(a) => (a, FeatureName::Normal),
        FeatureCmd::Elevation(a) => (a, FeatureName::Elevation),
        FeatureCmd::Hha(a) => (a, FeatureName::Hha),
    };
    let d = io::read_pgm16(&args.disp)?;
    let cam = io::read_camera(&args.cam)?;
    let feature: DerivedFeature = match kind {
        FeatureName::Depth => depth_from_disparity(&d, &cam),
        FeatureName::Normal => normal_image(&d, &cam),
        FeatureName::Elevation => elevation_map(&d, &cam, &run_dt_pipeline(&d)?.road_mask)?,
        FeatureName::Hha => hha_image(&d, &cam, &run_dt_pipeline(&d)?.road_mask)?,
    };
    io::write_tensor(&feature.map, &args.out)?;
    Ok(())
}

fn fuse(cmd: &FuseCmd, seed: u64) -> Result<()> {
    match *cmd {
        FuseCmd::BenchCost {
            h,
            w,
            c,
            cout,
            k,
            include_generation,
        } => {
            if [h, w, c, cout, k].contains(&0) {
                bail!("all dimensions must be positive");
            }
            let naive = cost_model(h, w, c, cout, k, Variant::Naive, include_generation);
            let fact = cost_model(h, w, c, cout, k, Variant::Factorized, include_generation);
            println!("variant,macs");
            println!("naive,{naive}");
            println!("factorized,{fact}");
            println!("ratio,{}", fact as f64 / naive as f64);
            println!("{naive} / {fact}");
        }
        FuseCmd::Gradcheck { h, w, c } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = gradcheck(h, w, c, GENERATOR_SIZE, &mut rng)?;
            println!("group,max_rel_error");
            println!("f_r,{:e}", r.f_r);
            println!("f_t,{:e}", r.f_t);
            println!("omega1,{:e}", r.omega1);
            println!("omega2,{:e}", r.omega2);
        }
    }
    Ok(())
}

fn load_data(dir: &Path, modality: Modality) -> Result<Dataset> {
    Dataset::load(dir, modality).with_context(|| format!("loading scenes from {}", dir.display()))
}

fn train_cmd(args: &TrainArgs, seed: Option<u64>) -> Result<()> {
    let mut cfg = NetConfig::read(&args.config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if args.data.is_some() {
        cfg.data.clone_from(&args.data);
    }
    eprintln!("net config: {}", cfg.to_json());
    let data = match &cfg.data {
        Some(dir) => load_data(dir, cfg.modality)?,
        None => Dataset::synthetic(DEFAULT_SCENES, DEFAULT_DATA_SEED, DEFAULT_NOISE_SIGMA, cfg.modality)?,
    };
    let model = train(&cfg, &data)?;
    model.save(&args.out)?;
    println!("best_iteration,{}", model.best_iteration);
    println!("val_miou,{}", model.val_miou);
    Ok(())
}

fn parse_list<T>(names: &[String], parse: impl Fn(&str) -> Option<T>, what: &str) -> Result<Vec<T>> {
    names
        .iter()
        .map(|n| parse(n.trim()).with_context(|| format!("unknown {what} {n:?}")))
        .collect()
}

fn ablate_cmd(args: &AblateArgs, seed: Option<u64>) -> Result<()> {
    let base = match &args.config {
        Some(p) => NetConfig::read(p)?,
        None => NetConfig::default(),
    };
    let fusions = parse_list(&args.fusions, Fusion::parse, "fusion")?;
    let modalities = parse_list(&args.modalities, Modality::parse, "modality")?;
    eprintln!("net config: {}", base.to_json());
    let data_seed = seed.unwrap_or(DEFAULT_DATA_SEED);
    let datasets = modalities
        .iter()
        .map(|&m| {
            let data = match &args.data {
                Some(dir) => load_data(dir, m)?,
                None => Dataset::synthetic(args.scenes, data_seed, DEFAULT_NOISE_SIGMA, m)?,
            };
            Ok((m, data))
        })
        .collect::<Result<Vec<_>>>()?;
    let table = ablation(&base, &datasets, &fusions, &args.seeds)?;
    let csv = table.to_csv()?;
    fs::write(&args.out, &csv).with_context(|| format!("writing {}", args.out.display()))?;
    print!("{csv}");
    Ok(())
}

fn eval_cmd(args: &EvalArgs) -> Result<()> {
    let split = match args.split.as_str() {
        "train" => Split::Train,
        "val" => Split::Val,
        "test" => Split::Test,
        other => bail!("unknown split {other:?}"),
    };
    let model = TrainedModel::load(&args.model)?;
    let samples = load_split(&args.data, split, model.config.modality)?;
    let (report, curves) = evaluate(&model.config, &model.params, &samples)?;
    let dir = args.out.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    report.write_csv(&args.out)?;
    for (class, curve) in &curves {
        let path = dir.join(format!("pr_{}.csv", class_name(*class)));
        fs::write(&path, pr_csv(curve)?).with_context(|| format!("writing {}", path.display()))?;
    }
    print!("{}", report.to_csv()?);
    Ok(())
}
