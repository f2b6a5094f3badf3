//! Single-binary command line for the full pipeline: embedding
//! pretraining, out-of-graph split construction, episodic training,
//! filtered-ranking evaluation, path explanations, and dataset
//! inspection. Every command writes its artifacts under `--out` and is
//! byte-reproducible for a fixed seed.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fitcarl::checkpoint::{read_checkpoint, write_checkpoint};
use fitcarl::config::TrainConfig;
use fitcarl::episodes::{load_split, make_split, write_split, DatasetStats, MetaSplit, OogSplit};
use fitcarl::eval::{bucket_by_time, evaluate, explain, BucketWidth};
use fitcarl::model::AblationFlags;
use fitcarl::pretrain::{pretrain, read_embedding, write_embedding, PretrainConfig};
use fitcarl::store::{load_quadruples, VocabMode, Vocabs};
use fitcarl::tensor::Real;
use fitcarl::train::{meta_train, render_curve};
use fitcarl::{Error, Result};

#[derive(Parser)]
#[command(
    name = "fitcarl",
    version,
    about = "Few-shot link prediction for unseen entities on temporal knowledge graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain background entity/relation embeddings
    Pretrain(PretrainCmd),
    /// Carve an out-of-graph split from a raw quadruple file
    MakeSplits(MakeSplitsCmd),
    /// Train the agent episodically and keep the best checkpoint
    Train(TrainCmd),
    /// Score a checkpoint with filtered MRR and Hits@k
    Eval(EvalCmd),
    /// Render greedy reasoning paths for sample queries
    Explain(ExplainCmd),
    /// Print dataset statistics
    Inspect(InspectCmd),
}

/// Knobs shared by the model-bearing commands. Values layer as
/// defaults < `--config` file < flags.
#[derive(Args)]
struct ConfigArgs {
    /// Configuration file in flat `key = value` form
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Root random seed [default: 0]
    #[arg(long, value_name = "INT")]
    seed: Option<u64>,
    /// Support facts per unseen entity [default: 1]
    #[arg(long, value_name = "K", value_parser = parse_shots)]
    shots: Option<usize>,
    /// Training episodes [default: 1000]
    #[arg(long, value_name = "INT")]
    episodes: Option<usize>,
    /// Beam width at evaluation [default: 100]
    #[arg(long, value_name = "INT")]
    beam: Option<usize>,
    /// Worker threads; 1 is the deterministic reference [default: 1]
    #[arg(long, value_name = "INT")]
    workers: Option<usize>,
    /// Component switch, repeatable: A1, A2, B, C, D, E [default: none]
    #[arg(long = "ablation", value_name = "CODE")]
    ablation: Vec<String>,
}

fn parse_shots(value: &str) -> std::result::Result<usize, String> {
    match value {
        "1" => Ok(1),
        "3" => Ok(3),
        _ => Err("supported shot counts are 1 and 3 (a config file can set others)".into()),
    }
}

impl ConfigArgs {
    fn effective(&self, base: TrainConfig) -> Result<TrainConfig> {
        let mut cfg = base;
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.shots {
            cfg.shots = v;
        }
        if let Some(v) = self.episodes {
            cfg.episodes = v;
        }
        if let Some(v) = self.beam {
            cfg.beam = v;
        }
        if let Some(v) = self.workers {
            cfg.workers = v;
        }
        if !self.ablation.is_empty() {
            cfg.ablations = AblationFlags::from_codes(&self.ablation)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct PretrainCmd {
    /// Split directory with background and meta files
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Embedding width, even [default: 100]
    #[arg(long, value_name = "INT")]
    d: Option<usize>,
    /// Training epochs [default: 50]
    #[arg(long, value_name = "INT")]
    epochs: Option<usize>,
    /// Corrupted objects per fact [default: 10]
    #[arg(long, value_name = "INT")]
    negatives: Option<usize>,
    /// Learning rate [default: 0.05]
    #[arg(long, value_name = "REAL")]
    lr: Option<f64>,
    /// Random seed [default: 0]
    #[arg(long, value_name = "INT")]
    seed: Option<u64>,
}

#[derive(Args)]
struct MakeSplitsCmd {
    /// Raw tab-separated quadruple file
    #[arg(long, value_name = "FILE")]
    raw: PathBuf,
    /// Output split directory
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Unseen entity fractions for train,valid,test [default: 0.1,0.05,0.05]
    #[arg(long, value_name = "F,F,F", value_delimiter = ',')]
    fractions: Option<Vec<f64>>,
    /// Random seed [default: 0]
    #[arg(long, value_name = "INT")]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainCmd {
    /// Split directory with background and meta files
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Output directory for checkpoint, curve, and config echo
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Pretrained embedding file for table initialization
    #[arg(long, value_name = "FILE")]
    pretrained: Option<PathBuf>,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Valid,
    Test,
}

impl From<SplitArg> for MetaSplit {
    fn from(s: SplitArg) -> MetaSplit {
        match s {
            SplitArg::Train => MetaSplit::Train,
            SplitArg::Valid => MetaSplit::Valid,
            SplitArg::Test => MetaSplit::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BucketArg {
    Month,
    Year,
}

#[derive(Args)]
struct EvalCmd {
    /// Split directory with background and meta files
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Output directory for metrics and buckets
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Checkpoint to score
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// Meta set to evaluate
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    /// Support resampling seeds, comma separated [default: 1,2,3,4,5]
    #[arg(long, value_name = "INT,..", value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Calendar width of the per-time metrics CSV
    #[arg(long, value_enum, default_value_t = BucketArg::Month)]
    bucket: BucketArg,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct ExplainCmd {
    /// Split directory with background and meta files
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Output directory for the rendered paths
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Checkpoint to decode with
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// Meta set to sample queries from
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    /// Queries to render [default: 5]
    #[arg(long, value_name = "INT")]
    limit: Option<usize>,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct InspectCmd {
    /// Split directory with background and meta files
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Output directory for the statistics table
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FITCARL_LOG", "info"))
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Pretrain(args) => cmd_pretrain(args),
        Command::MakeSplits(args) => cmd_make_splits(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Explain(args) => cmd_explain(args),
        Command::Inspect(args) => cmd_inspect(args),
    }
}

fn ensure_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_pretrain(args: PretrainCmd) -> Result<()> {
    let split = load_split(&args.data)?;
    let mut cfg = PretrainConfig::default();
    if let Some(v) = args.d {
        cfg.d = v;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.negatives {
        cfg.neg_ratio = v;
    }
    if let Some(v) = args.lr {
        cfg.lr = v as Real;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    let result = pretrain(&split.background, &split.vocabs, &cfg)?;
    ensure_out(&args.out)?;
    write_embedding(&args.out.join("embeddings.bin"), &result.embedding)?;
    let mut curve = String::from("epoch,loss\n");
    for (i, loss) in result.epoch_losses.iter().enumerate() {
        curve.push_str(&format!("{i},{loss:.6}\n"));
    }
    write_text(&args.out.join("pretrain_curve.csv"), &curve)?;
    let echo = format!(
        "d = {}\nepochs = {}\nnegatives = {}\nlr = {}\nseed = {}\n",
        cfg.d, cfg.epochs, cfg.neg_ratio, cfg.lr, cfg.seed
    );
    write_text(&args.out.join("pretrain_config.txt"), &echo)?;
    if let Some(last) = result.epoch_losses.last() {
        log::info!("pretraining finished, final epoch loss {last:.6}");
    }
    println!("wrote {}", args.out.join("embeddings.bin").display());
    Ok(())
}

fn cmd_make_splits(args: MakeSplitsCmd) -> Result<()> {
    let fractions = args.fractions.unwrap_or_else(|| vec![0.1, 0.05, 0.05]);
    let [ft, fv, fs] = fractions.as_slice() else {
        return Err(Error::Config(format!(
            "--fractions needs exactly three values, got {}",
            fractions.len()
        )));
    };
    let mut vocabs = Vocabs::default();
    let store = load_quadruples(&args.raw, &mut vocabs, VocabMode::Build)?;
    let split = make_split(&store, &vocabs, (*ft, *fv, *fs), args.seed.unwrap_or(0))?;
    write_split(&args.out, &split)?;
    print!("{}", render_stats(&split.stats()));
    println!("wrote split to {}", args.out.display());
    Ok(())
}

fn cmd_train(args: TrainCmd) -> Result<()> {
    let split = load_split(&args.data)?;
    let cfg = args.cfg.effective(TrainConfig::default())?;
    let pretrained = args.pretrained.as_deref().map(read_embedding).transpose()?;
    let outcome = meta_train(&split, &cfg, pretrained.as_ref())?;
    ensure_out(&args.out)?;
    write_text(&args.out.join("config.txt"), &cfg.render())?;
    write_checkpoint(&args.out.join("checkpoint.bin"), &outcome.best)?;
    write_checkpoint(&args.out.join("last.bin"), &outcome.last)?;
    write_text(&args.out.join("curve.csv"), &render_curve(&outcome.curve))?;
    match outcome.best.best_valid_mrr {
        Some(mrr) => println!(
            "trained {} episodes, best validation MRR {mrr:.4}",
            cfg.episodes
        ),
        None => println!("trained {} episodes", cfg.episodes),
    }
    Ok(())
}

/// Rejects evaluation-time overrides that cannot fit the stored
/// parameter tables.
fn check_dims(cfg: &TrainConfig, stored: &TrainConfig) -> Result<()> {
    if cfg.dims() != stored.dims() {
        return Err(Error::Config(format!(
            "checkpoint was trained with d={} heads={} layers={}; these cannot be overridden",
            stored.d, stored.heads, stored.layers
        )));
    }
    Ok(())
}

fn cmd_eval(args: EvalCmd) -> Result<()> {
    let split = load_split(&args.data)?;
    let ck = read_checkpoint(&args.checkpoint)?;
    let cfg = args.cfg.effective(ck.config.clone())?;
    check_dims(&cfg, &ck.config)?;
    let seeds = args.seeds.unwrap_or_else(|| vec![1, 2, 3, 4, 5]);
    let which: MetaSplit = args.split.into();
    let report = evaluate(&split, &ck.params, &cfg, which, &seeds)?;
    ensure_out(&args.out)?;
    write_text(&args.out.join("config.txt"), &cfg.render())?;
    write_text(&args.out.join("metrics.json"), &report.to_json())?;
    match split.vocabs.epoch {
        Some(epoch) => {
            let width = match args.bucket {
                BucketArg::Month => BucketWidth::Month,
                BucketArg::Year => BucketWidth::Year,
            };
            let csv = bucket_by_time(&report.outcomes, width, epoch);
            write_text(&args.out.join("buckets.csv"), &csv)?;
        }
        None => log::info!("timestamps are raw integers; skipping the calendar buckets CSV"),
    }
    println!(
        "{}: MRR {:.4}  H@1 {:.4}  H@3 {:.4}  H@10 {:.4}  ({} seeds)",
        report.split,
        report.mrr,
        report.hits1,
        report.hits3,
        report.hits10,
        report.seeds.len()
    );
    Ok(())
}

fn cmd_explain(args: ExplainCmd) -> Result<()> {
    let split = load_split(&args.data)?;
    let ck = read_checkpoint(&args.checkpoint)?;
    let cfg = args.cfg.effective(ck.config.clone())?;
    check_dims(&cfg, &ck.config)?;
    let text = explain(
        &split,
        &ck.params,
        &cfg,
        args.split.into(),
        cfg.seed,
        args.limit.unwrap_or(5),
    )?;
    ensure_out(&args.out)?;
    write_text(&args.out.join("explain.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn render_stats(stats: &DatasetStats) -> String {
    let [ut, uv, us] = stats.unseen;
    let [mt, mv, ms] = stats.meta_facts;
    format!(
        "entities          {}\n\
         relations         {}\n\
         timestamps        {}\n\
         unseen entities   {ut} / {uv} / {us}\n\
         background facts  {}\n\
         meta facts        {mt} / {mv} / {ms}\n",
        stats.entities, stats.relations, stats.timestamps, stats.background_facts
    )
}

fn cmd_inspect(args: InspectCmd) -> Result<()> {
    let split: OogSplit = load_split(&args.data)?;
    let table = render_stats(&split.stats());
    ensure_out(&args.out)?;
    write_text(&args.out.join("stats.txt"), &table)?;
    print!("{table}");
    Ok(())
}
