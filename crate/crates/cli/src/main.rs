mod figures;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ual_core::checkpoint::Checkpoint;
use ual_core::config::TrainConfig;
use ual_core::error::{Result, UalError};
use ual_core::metrics::EvalReport;
use ual_core::parallel::Exec;
use ual_core::phantom::{generate_corpus_with, ClassMix, CorpusSpec, Sample};
use ual_core::sweep::{run_sweep, SweepKind};
use ual_core::trainer::{infer, train, TrainOptions, FINAL_CHECKPOINT, LOG_FILE};
use ual_core::uald;

#[derive(Parser)]
#[command(name = "ual", version, about = "Joint liver tumour segmentation and detection on synthetic multi-modality MRI phantoms")]
struct Cli {
    /// More log output (-v debug, -vv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Run every stage on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic phantom corpus.
    Generate(GenerateArgs),
    /// Train a model on a corpus directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint (or the ground truth itself) on a corpus directory.
    Eval(EvalArgs),
    /// Train and evaluate one model per modality, phase or ablation variant.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 32)]
    count: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    /// Class fractions: no tumour, hemangioma, HCC.
    #[arg(long, default_value = "0.2,0.4,0.4")]
    mix: String,
    #[arg(long)]
    out: PathBuf,
}

/// Training settings; each flag overrides the configuration file.
#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Components to disable: edfpm, fsc, cswp, mpr, mprgd.
    #[arg(long, value_delimiter = ',')]
    ablate: Vec<String>,
    /// Non-contrast inputs, e.g. `t1,dwi`.
    #[arg(long)]
    modalities: Option<String>,
    /// Contrast phases for radiomics, e.g. `a,pv`.
    #[arg(long)]
    phases: Option<String>,
    /// Label fake canvases 0 and real canvases 1 in the discriminator loss.
    #[arg(long)]
    swap_disc_labels: bool,
    /// `hard` or `soft`.
    #[arg(long)]
    cswp_mode: Option<String>,
    /// `sgd` or `adam`.
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    base_channels: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Extra `key=value` settings, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn apply(&self, cfg: &mut TrainConfig) -> Result<()> {
        if let Some(p) = &self.config {
            cfg.apply_text(&fs::read_to_string(p).map_err(|e| UalError::Config(format!("cannot read {}: {e}", p.display())))?)?;
        }
        let mut pairs: Vec<(&str, String)> = Vec::new();
        let mut opt = |k: &'static str, v: Option<String>| {
            if let Some(v) = v {
                pairs.push((k, v));
            }
        };
        opt("iterations", self.iterations.map(|v| v.to_string()));
        opt("batch_size", self.batch_size.map(|v| v.to_string()));
        opt("learning_rate", self.learning_rate.map(|v| v.to_string()));
        opt("seed", self.seed.map(|v| v.to_string()));
        opt("modalities", self.modalities.clone());
        opt("phases", self.phases.clone());
        opt("cswp_mode", self.cswp_mode.clone());
        opt("optimizer", self.optimizer.clone());
        opt("base_channels", self.base_channels.map(|v| v.to_string()));
        opt("checkpoint_every", self.checkpoint_every.map(|v| v.to_string()));
        opt("swap_disc_labels", self.swap_disc_labels.then(|| "true".to_string()));
        if !self.ablate.is_empty() {
            pairs.push(("ablate", self.ablate.join(",")));
        }
        for (k, v) in pairs {
            cfg.set(k, &v)?;
        }
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| UalError::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.set(k, v)?;
        }
        cfg.validate()
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Corpus directory written by `generate`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Continue from this checkpoint; its configuration is the starting point for the flags.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Checkpoint to evaluate; required unless `--oracle`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Score the ground truth against itself.
    #[arg(long)]
    oracle: bool,
    /// Skip the PNG overlays and heatmaps.
    #[arg(long)]
    no_figures: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// `modality`, `phase` or `ablation`.
    #[arg(long)]
    kind: String,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Output CSV file.
    #[arg(long)]
    out: PathBuf,
    /// `;`-separated variants, e.g. `t1;t2;t1,dwi` or `full;fsc`; defaults to the whole grid.
    #[arg(long)]
    variants: Option<String>,
    /// Variants trained concurrently.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    #[command(flatten)]
    config: ConfigArgs,
}

fn load_corpus(dir: &Path) -> Result<Vec<Sample>> {
    if !dir.is_dir() {
        return Err(UalError::Config(format!("data directory {} does not exist", dir.display())));
    }
    let samples = uald::read_dataset(dir)?;
    if samples.is_empty() {
        return Err(UalError::Config(format!("no samples under {}", dir.display())));
    }
    Ok(samples)
}

fn class_counts(samples: &[Sample]) -> [usize; 3] {
    let mut n = [0; 3];
    for s in samples {
        n[s.cls as usize] += 1;
    }
    n
}

fn cmd_generate(a: &GenerateArgs, exec: Exec) -> Result<()> {
    let mix: Vec<f64> = a
        .mix
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| UalError::Config(format!("bad class fraction {v:?}"))))
        .collect::<Result<_>>()?;
    let mix: [f64; 3] = mix
        .try_into()
        .map_err(|v: Vec<f64>| UalError::Config(format!("--mix needs 3 fractions, got {}", v.len())))?;
    let spec = CorpusSpec::new(a.seed, a.count, a.height, a.width, ClassMix(mix));
    let corpus = generate_corpus_with(&spec, exec)?;
    uald::write_dataset(&corpus, &a.out)?;
    let n = class_counts(&corpus);
    println!("no_tumor={} hemangioma={} hcc={}", n[0], n[1], n[2]);
    Ok(())
}

fn cmd_train(a: &TrainArgs, exec: Exec) -> Result<()> {
    let corpus = load_corpus(&a.data)?;
    let mut cfg = match &a.resume {
        Some(p) => Checkpoint::load(p)?.config,
        None => TrainConfig::default(),
    };
    a.config.apply(&mut cfg)?;
    let opts = TrainOptions {
        out_dir: Some(a.out.clone()),
        resume: a.resume.clone(),
        exec,
    };
    let (_, records) = train(&corpus, &cfg, &opts)?;
    fs::write(a.out.join("config.txt"), cfg.to_text()).map_err(|e| UalError::io(&a.out, e))?;
    if let Some(last) = records.last() {
        println!(
            "trained {} steps: l_seg {:.4} l_cls {:.4} l_reg {:.4} l_disc {:.4}",
            last.step, last.l_seg, last.l_cls, last.l_reg, last.l_disc
        );
    }
    println!("log {}  model {}", a.out.join(LOG_FILE).display(), a.out.join(FINAL_CHECKPOINT).display());
    Ok(())
}

fn print_summary(report: &EvalReport) {
    println!("{:>8} {:>8} {:>8} {:>8} {:>8} {:>8}", "DSC", "p-Acc", "IoU", "TPR", "TNR", "Acc");
    let v = report.summary_values();
    println!("{:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8.2}", v[0], v[1], v[2], v[3], v[4], v[5]);
}

fn cmd_eval(a: &EvalArgs, exec: Exec) -> Result<()> {
    let samples = load_corpus(&a.data)?;
    let fig_dir = a.out.join("figures");
    if !a.no_figures {
        fs::create_dir_all(&fig_dir).map_err(|e| UalError::io(&fig_dir, e))?;
    }
    let report = if a.oracle {
        if !a.no_figures {
            for s in &samples {
                figures::write_overlays(&fig_dir, s, &s.mask, s.bbox.as_ref())?;
                figures::write_heatmap(&fig_dir, &s.sample_id, &s.mask)?;
            }
        }
        EvalReport::oracle(&samples)?
    } else {
        let path = a.checkpoint.as_ref().ok_or_else(|| UalError::Config("eval needs --checkpoint or --oracle".into()))?;
        let ckpt = Checkpoint::load(path)?;
        let net = ckpt.network()?;
        let params = &ckpt.params;
        let records = exec.map(&samples, |s| -> Result<_> {
            let (seg, det) = infer(&net, params, s)?;
            let pred_cls = det.predicted_class();
            if !a.no_figures {
                figures::write_overlays(&fig_dir, s, &seg.probs, (pred_cls >= 1).then_some(&det.bbox))?;
                figures::write_heatmap(&fig_dir, &s.sample_id, &seg.probs)?;
            }
            ual_core::metrics::SampleRecord::new(&s.sample_id, &seg.probs, &s.mask, &det.bbox, s.bbox.as_ref(), s.cls, pred_cls)
        });
        EvalReport::from_records(records.into_iter().collect::<Result<_>>()?)?
    };
    report.write(&a.out)?;
    print_summary(&report);
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let kind: SweepKind = a.kind.parse()?;
    let variants = match &a.variants {
        Some(list) => kind.parse_variants(list)?,
        None => kind.default_variants(),
    };
    let train_set = load_corpus(&a.train)?;
    let test_set = load_corpus(&a.test)?;
    let mut cfg = TrainConfig::default();
    a.config.apply(&mut cfg)?;
    let result = run_sweep(kind, &variants, &cfg, &train_set, &test_set, a.parallel)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| UalError::io(dir, e))?;
    }
    let csv = result.csv();
    fs::write(&a.out, &csv).map_err(|e| UalError::io(&a.out, e))?;
    print!("{csv}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };
    let result = match &cli.command {
        Command::Generate(a) => cmd_generate(a, exec),
        Command::Train(a) => cmd_train(a, exec),
        Command::Eval(a) => cmd_eval(a, exec),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
