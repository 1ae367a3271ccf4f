use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use uland::bunet::Bunet;
use uland::config::RunConfig;
use uland::corpus::{self, Split};
use uland::gating::{self, CalibrationStats, GateMode};
use uland::metrics::{self, AblationOptions, AblationResult};
use uland::pipeline::{self, Method};
use uland::train;

const USAGE: &str = "\
usage: uland <command> [options] [--section.key=value ...]

commands:
  gen        generate a synthetic corpus          (--out DIR)
  train      train the network on labelled key frames
  calibrate  fit uncertainty statistics on the calibration split
  predict    measure videos                       (--video ID | --split NAME) [--mode MODE]
  eval       score one gate mode against the all-frames reference  [--mode MODE]
  ablate     score every method on the test split

options:
  --config FILE      JSON run configuration (unspecified keys take defaults)
  --threads N        worker threads
  --weights FILE     default <output_dir>/weights.ulwt
  --stats FILE       default <output_dir>/stats.json
  --section.key=V    override one configuration value, e.g. --gating.xi=2

modes: cqc, cqc+al, cqc+ep, cqc+al+ep";

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<uland::Error> for Failure {
    fn from(e: uland::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

#[derive(Default)]
struct Args {
    command: String,
    config: Option<PathBuf>,
    threads: Option<usize>,
    out: Option<PathBuf>,
    weights: Option<PathBuf>,
    stats: Option<PathBuf>,
    video: Option<String>,
    split: Option<String>,
    mode: Option<String>,
    overrides: Vec<(String, String)>,
}

const COMMANDS: [&str; 6] = ["gen", "train", "calibrate", "predict", "eval", "ablate"];

fn parse_args(argv: &[String]) -> Result<Args, Failure> {
    let usage = |m: String| Failure::Usage(m);
    let command = argv.first().ok_or_else(|| usage("missing command".into()))?;
    if !COMMANDS.contains(&command.as_str()) {
        return Err(usage(format!("unknown command '{command}'")));
    }
    let mut args = Args {
        command: command.clone(),
        ..Args::default()
    };
    let mut it = argv[1..].iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            return Err(usage(format!("unexpected argument '{arg}'")));
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n, Some(v.to_string())),
            None => (flag, None),
        };
        let mut value = || -> Result<String, Failure> {
            match &inline {
                Some(v) => Ok(v.clone()),
                None => it.next().cloned().ok_or_else(|| usage(format!("--{name} needs a value"))),
            }
        };
        match name {
            "config" => args.config = Some(PathBuf::from(value()?)),
            "threads" => {
                let v = value()?;
                let n: usize = v.parse().map_err(|_| usage(format!("--threads expects a number, got '{v}'")))?;
                if n == 0 {
                    return Err(usage("--threads must be at least 1".into()));
                }
                args.threads = Some(n);
            }
            "out" if args.command == "gen" => args.out = Some(PathBuf::from(value()?)),
            "weights" => args.weights = Some(PathBuf::from(value()?)),
            "stats" => args.stats = Some(PathBuf::from(value()?)),
            "video" if args.command == "predict" => args.video = Some(value()?),
            "split" if args.command == "predict" => args.split = Some(value()?),
            "mode" if matches!(args.command.as_str(), "predict" | "eval") => args.mode = Some(value()?),
            _ if name.contains('.') || inline.is_some() => match inline {
                Some(v) => args.overrides.push((name.to_string(), v)),
                None => return Err(usage(format!("override --{name} needs the form --{name}=VALUE"))),
            },
            _ => return Err(usage(format!("unknown flag --{name} for '{}'", args.command))),
        }
    }
    if args.video.is_some() && args.split.is_some() {
        return Err(usage("--video and --split are mutually exclusive".into()));
    }
    Ok(args)
}

fn load_config(args: &Args) -> Result<RunConfig, Failure> {
    let base = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut cfg = base
        .with_overrides(&args.overrides)
        .map_err(|e| Failure::Usage(e.to_string()))?;
    if let Some(out) = &args.out {
        cfg.corpus.path = out.clone();
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

fn require(path: &Path, what: &str) -> Outcome {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::Runtime(format!("{what} not found: {}", path.display())))
    }
}

fn write_file(path: &Path, contents: &str) -> Outcome {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, contents)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

struct Ctx {
    cfg: RunConfig,
    weights: PathBuf,
    stats: PathBuf,
}

impl Ctx {
    fn new(args: &Args, cfg: RunConfig) -> Self {
        let weights = args.weights.clone().unwrap_or_else(|| cfg.output_dir.join("weights.ulwt"));
        let stats = args.stats.clone().unwrap_or_else(|| cfg.output_dir.join("stats.json"));
        Self { cfg, weights, stats }
    }

    fn echo_config(&self, command: &str) -> Outcome {
        write_file(&self.cfg.output_dir.join(format!("config_{command}.json")), &self.cfg.to_json())
    }

    fn corpus(&self) -> Result<corpus::Corpus, Failure> {
        require(&self.cfg.corpus.path.join("manifest.json"), "corpus manifest")?;
        Ok(corpus::read_corpus(&self.cfg.corpus.path)?)
    }

    fn model(&self) -> Result<Bunet<f32>, Failure> {
        require(&self.weights, "weights file")?;
        Ok(Bunet::load(self.cfg.arch.clone(), &self.weights)?)
    }

    fn calibrated(&self) -> Result<(Bunet<f32>, CalibrationStats), Failure> {
        let model = self.model()?;
        require(&self.stats, "calibration statistics")?;
        let stats = CalibrationStats::load(&self.stats)?;
        stats.check_model(&model)?;
        Ok((model, stats))
    }

    fn ablation(&self, split: Split) -> Result<AblationResult, Failure> {
        let corpus = self.corpus()?;
        let (model, stats) = self.calibrated()?;
        let videos = corpus.split(split);
        let opts = AblationOptions {
            inference: self.cfg.inference.clone(),
            percentile: self.cfg.gating.percentile,
            semi_all_of_key_set: self.cfg.baselines.semi_all_of_key_set,
        };
        let start = Instant::now();
        let result = metrics::run_ablation_with(&model, &stats, videos, &opts, &mut |done, total| {
            eprintln!("video {done}/{total} ({:.0} s)", start.elapsed().as_secs_f64());
        })?;
        Ok(result)
    }
}

fn cmd_gen(ctx: &Ctx) -> Outcome {
    let c = &ctx.cfg.corpus;
    let corpus = corpus::generate_corpus(&c.generation, c.n_videos, c.master_seed)?;
    corpus::write_corpus(&corpus, &c.path)?;
    eprintln!(
        "generated {} train / {} calib / {} test videos in {}",
        corpus.train.len(),
        corpus.calib.len(),
        corpus.test.len(),
        c.path.display()
    );
    Ok(())
}

fn cmd_train(ctx: &Ctx) -> Outcome {
    let corpus = ctx.corpus()?;
    let cfg = &ctx.cfg;
    let mut model = Bunet::<f32>::new(cfg.arch.clone(), cfg.train.seed)?;
    let start = Instant::now();
    let trace = train::train_with(&mut model, &corpus.train, &cfg.train, cfg.gating.delta, &mut |e| {
        eprintln!(
            "epoch {:>3}  dice {:.4}  wbce {:.4}  total {:.4}  ({:.0} s)",
            e.epoch + 1,
            e.dice,
            e.wbce,
            e.total,
            start.elapsed().as_secs_f64()
        );
    })?;
    if let Some(parent) = ctx.weights.parent() {
        std::fs::create_dir_all(parent)?;
    }
    model.save(&ctx.weights)?;
    eprintln!("wrote {} (sha256 {})", ctx.weights.display(), model.checksum());
    write_file(&cfg.output_dir.join("loss.csv"), &trace.to_csv())
}

fn cmd_calibrate(ctx: &Ctx) -> Outcome {
    let corpus = ctx.corpus()?;
    let model = ctx.model()?;
    let cfg = &ctx.cfg;
    let stats = gating::calibrate(
        &model,
        &corpus.calib,
        &cfg.gating,
        cfg.inference.mc_passes,
        cfg.inference.seed,
    )?;
    if let Some(parent) = ctx.stats.parent() {
        std::fs::create_dir_all(parent)?;
    }
    stats.save(&ctx.stats)?;
    eprintln!(
        "aleatoric μ={:.4} σ={:.4}  epistemic μ={:.4} σ={:.4}  ({} videos)",
        stats.mu_alea, stats.sigma_alea, stats.mu_epi, stats.sigma_epi, stats.n_calib
    );
    eprintln!("wrote {}", ctx.stats.display());
    Ok(())
}

fn parse_mode(args: &Args) -> Result<GateMode, Failure> {
    args.mode
        .as_deref()
        .unwrap_or("cqc+al+ep")
        .parse()
        .map_err(|e: uland::Error| Failure::Usage(e.to_string()))
}

fn parse_split(name: &str) -> Result<Split, Failure> {
    match name {
        "train" => Ok(Split::Train),
        "calib" => Ok(Split::Calib),
        "test" => Ok(Split::Test),
        _ => Err(Failure::Usage(format!("unknown split '{name}' (expected train, calib or test)"))),
    }
}

fn cmd_predict(ctx: &Ctx, args: &Args) -> Outcome {
    let mode = parse_mode(args)?;
    let split = parse_split(args.split.as_deref().unwrap_or("test"))?;
    let corpus = ctx.corpus()?;
    let (model, stats) = ctx.calibrated()?;
    let videos: Vec<&corpus::SyntheticVideo> = match &args.video {
        Some(id) => vec![corpus
            .find(id)
            .ok_or_else(|| Failure::Runtime(format!("video '{id}' not in corpus")))?],
        None => corpus.split(split).iter().collect(),
    };
    let mut csv = String::from(pipeline::MEASUREMENT_CSV_HEADER);
    csv.push('\n');
    for v in videos {
        let m = pipeline::predict_video(&model, &stats, v, mode, &ctx.cfg.inference, ctx.cfg.gating.percentile)?;
        eprintln!(
            "{}: {} ({} frames pooled)",
            m.video_id,
            m.reported_length.map(|l| format!("{l:.3} mm")).unwrap_or_else(|| "rejected".into()),
            m.pooled_lengths.len()
        );
        csv.push_str(&pipeline::measurement_csv_row(&m, v.label.length_gt));
        csv.push('\n');
    }
    write_file(&ctx.cfg.output_dir.join("predictions.csv"), &csv)
}

fn print_reports(reports: &[metrics::EvalReport]) {
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "n/a".into());
    for r in reports {
        eprintln!(
            "{:<18} R² {:>6}  ΔR² {:>7}  MAE {:>6}  reject {:>5.1}%  n={}",
            r.method.name(),
            fmt(r.r2_pct),
            fmt(r.delta_r2_pct),
            fmt(r.errors.map(|e| e.mae)),
            r.reject_rate_pct,
            r.n_evaluated
        );
    }
}

fn cmd_eval(ctx: &Ctx, args: &Args) -> Outcome {
    let mode = parse_mode(args)?;
    let mut result = ctx.ablation(Split::Test)?;
    let keep = [Method::AllFrames, Method::Uland(mode)];
    result.reports.retain(|r| keep.contains(&r.method));
    result.measurements.retain(|(m, _)| keep.contains(m));
    print_reports(&result.reports);
    result.write(&ctx.cfg.output_dir)?;
    eprintln!("wrote results to {}", ctx.cfg.output_dir.display());
    Ok(())
}

fn cmd_ablate(ctx: &Ctx) -> Outcome {
    let result = ctx.ablation(Split::Test)?;
    print_reports(&result.reports);
    let (alea, epi) = result.separation_auc()?;
    eprintln!("key-frame separation AUC: aleatoric {alea:.4}  epistemic {epi:.4}");
    result.write(&ctx.cfg.output_dir)?;
    write_file(
        &ctx.cfg.output_dir.join("separation.csv"),
        &format!("uncertainty,auc\naleatoric,{alea}\nepistemic,{epi}\n"),
    )
}

fn run(argv: &[String]) -> Outcome {
    let args = parse_args(argv)?;
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    let cfg = load_config(&args)?;
    let ctx = Ctx::new(&args, cfg);
    ctx.echo_config(&args.command)?;
    match args.command.as_str() {
        "gen" => cmd_gen(&ctx),
        "train" => cmd_train(&ctx),
        "calibrate" => cmd_calibrate(&ctx),
        "predict" => cmd_predict(&ctx, &args),
        "eval" => cmd_eval(&ctx, &args),
        "ablate" => cmd_ablate(&ctx),
        _ => unreachable!("command validated by parse_args"),
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    if matches!(argv.first().map(String::as_str), Some("-h" | "--help" | "help")) {
        println!("{USAGE}");
        return ExitCode::SUCCESS;
    }
    match run(&argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\n{USAGE}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
