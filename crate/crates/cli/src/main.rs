use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use wavemdd::corpus::{gen_corpus, read_dataset, write_dataset, CorpusConfig, PerSplit, Split};
use wavemdd::decode::{decode_all, read_hypotheses, write_hypotheses, BeamConfig};
use wavemdd::frontend::{export_filters, SincFilterbankParams, Waveform, DEFAULT_SAMPLE_RATE_HZ};
use wavemdd::mddeval::{evaluate, read_annotations};
use wavemdd::pipeline::{examples, pipeline_run, PipelineConfig};
use wavemdd::seqmodel::{AsrModel, Frontend, ModelConfig, PhoneVocab};
use wavemdd::train::{grad_check_joint, train_loop, Checkpoint, FrontendKind, TrainConfig};
use wavemdd::{Execution, MddError, Result};

/// Mispronunciation detection and diagnosis from raw audio.
#[derive(Parser, Debug)]
#[command(name = "wavemdd", version)]
struct Cli {
    /// Run every data-parallel loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
    /// Train a recognizer on a corpus directory.
    Train(TrainArgs),
    /// Decode a corpus split with a trained checkpoint.
    Decode(DecodeArgs),
    /// Score hypotheses against annotations.
    EvalMdd(EvalArgs),
    /// Write sinc filter frequency responses as CSV.
    ExportFilters(ExportArgs),
    /// Finite-difference gradient check of a tiny random model.
    GradCheck(GradCheckArgs),
    /// Synthesize, train both front-ends, decode and score.
    Pipeline(PipelineArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    num_utterances: Option<usize>,
    /// Mispronunciation rate applied to every split.
    #[arg(long)]
    error_rate: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Corpus directory.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint file to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    frontend: Option<FrontendKind>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Args, Debug)]
struct DecodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Hypothesis file to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beam_width: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    hyp: PathBuf,
    /// JSON report to write; the table goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExportArgs {
    /// Checkpoint with a sinc front-end; mel initialization when absent.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = SincFilterbankParams::DEFAULT_FILTERS)]
    filters: usize,
    #[arg(long, default_value_t = SincFilterbankParams::DEFAULT_KERNEL_LENGTH)]
    kernel_length: usize,
    #[arg(long, default_value_t = 1024)]
    nfft: usize,
}

#[derive(Args, Debug)]
struct GradCheckArgs {
    #[arg(long, default_value = "sinc")]
    frontend: FrontendKind,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Probe at most this many entries per parameter tensor.
    #[arg(long)]
    max_per_group: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Score the perceived phones instead of trained recognizers.
    #[arg(long)]
    oracle: bool,
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| MddError::io(path, e))?;
    toml::from_str(&text).map_err(|e| MddError::format(path, e.to_string()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| MddError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| MddError::io(path, e))
}

fn echo_config<T: Serialize>(path: &Path, cfg: &T) -> Result<()> {
    let text = toml::to_string(cfg).map_err(|e| MddError::Config(e.to_string()))?;
    write_text(path, &text)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn synth(a: SynthArgs, exec: Execution) -> Result<()> {
    let mut cfg: CorpusConfig = load_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.num_utterances {
        cfg.num_utterances = n;
    }
    if let Some(p) = a.error_rate {
        cfg.error_rate = PerSplit::uniform(p);
    }
    let ds = gen_corpus(&cfg, exec)?;
    write_dataset(&ds, &a.out)?;
    echo_config(&a.out.join("config.toml"), &cfg)?;
    let errors: usize = ds.utterances.iter().map(|u| u.annotation.error_count()).sum();
    println!(
        "wrote {} utterances ({} injected errors) to {}",
        ds.utterances.len(),
        errors,
        a.out.display()
    );
    Ok(())
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct TrainFile {
    train: TrainConfig,
    model: Option<ModelConfig>,
}

fn train(a: TrainArgs, exec: Execution) -> Result<()> {
    let mut file: TrainFile = load_config(a.config.as_deref())?;
    let t = &mut file.train;
    if let Some(v) = a.seed {
        t.seed = v;
    }
    if let Some(v) = a.frontend {
        t.frontend = v;
    }
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.learning_rate {
        t.learning_rate = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.alpha {
        t.alpha = v;
    }
    let ds = read_dataset(&a.data)?;
    let phones = ds.phone_symbols();
    let vocab = PhoneVocab::new(phones.clone())?;
    let mcfg = match file.model.clone() {
        Some(mut m) => {
            m.phones = phones;
            if a.seed.is_some() {
                m.seed = file.train.seed;
            }
            m
        }
        None => file.train.frontend.desk_model(phones, file.train.seed),
    };
    file.model = Some(mcfg.clone());
    echo_config(&with_suffix(&a.out, ".effective.toml"), &file)?;
    let tr = examples(&ds, Split::Train, &vocab)?;
    let dev = examples(&ds, Split::Dev, &vocab)?;
    let outcome = train_loop(mcfg, &file.train, &tr, &dev, exec, |s| {
        eprintln!(
            "epoch {:>3}  train {:.4}  dev {:.4}  infeasible-ctc {}",
            s.epoch, s.train_loss, s.dev_loss, s.infeasible_ctc
        );
    })?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| MddError::io(dir, e))?;
    }
    outcome.checkpoint.save(&a.out)?;
    println!(
        "saved epoch {} (dev loss {:.4}) to {}",
        outcome.checkpoint.epoch,
        outcome.checkpoint.best_dev_loss,
        a.out.display()
    );
    Ok(())
}

fn decode(a: DecodeArgs, exec: Execution) -> Result<()> {
    let mut cfg: BeamConfig = load_config(a.config.as_deref())?;
    if let Some(v) = a.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = a.beam_width {
        cfg.beam_width = v;
    }
    if let Some(v) = a.max_len {
        cfg.max_len = v;
    }
    cfg.validate()?;
    let ckpt = Checkpoint::load(&a.model)?;
    let ds = read_dataset(&a.data)?;
    let utts: Vec<(String, Waveform)> = ds
        .split(a.split)
        .map(|u| (u.utt_id().to_string(), u.wave.clone()))
        .collect();
    let hyps = decode_all(&ckpt.model, &utts, &cfg, exec)?;
    echo_config(&with_suffix(&a.out, ".effective.toml"), &cfg)?;
    let mut buf = Vec::new();
    write_hypotheses(&mut buf, &hyps).map_err(|e| MddError::io(&a.out, e))?;
    write_text(&a.out, &String::from_utf8(buf).expect("hypotheses are UTF-8"))?;
    println!("decoded {} utterances to {}", hyps.len(), a.out.display());
    Ok(())
}

fn eval_mdd(a: EvalArgs) -> Result<()> {
    let anns = read_annotations(&a.annotations)?;
    let hyps: BTreeMap<String, Vec<String>> = read_hypotheses(&a.hyp)?.into_iter().collect();
    let report = evaluate(&anns, &hyps)?;
    print!("{report}");
    if let Some(out) = a.out {
        write_text(&out, &report.to_json())?;
    }
    Ok(())
}

fn export(a: ExportArgs) -> Result<()> {
    let params = match &a.model {
        Some(path) => match Checkpoint::load(path)?.model.frontend {
            Frontend::Sinc(s) => s.filters,
            Frontend::Fbank { .. } => {
                return Err(MddError::Input(format!("{} has no sinc front-end", path.display())))
            }
        },
        None => SincFilterbankParams::mel_init(a.filters, a.kernel_length, DEFAULT_SAMPLE_RATE_HZ)?,
    };
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| MddError::io(dir, e))?;
    }
    export_filters(&params, &a.out, a.nfft)?;
    println!("wrote {} filter responses to {}", params.filter_count(), a.out.display());
    Ok(())
}

fn grad_check(a: GradCheckArgs) -> Result<()> {
    let phones: Vec<String> = ["aa", "iy", "uw"].iter().map(|s| s.to_string()).collect();
    let model = AsrModel::new(a.frontend.tiny_model(phones, a.seed))?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let samples = (0..1200).map(|_| rng.random_range(-0.5..0.5)).collect();
    let wave = Waveform::new(samples, DEFAULT_SAMPLE_RATE_HZ)?;
    let target = [1, 2, 1];
    let report = grad_check_joint(&model, &wave, &target, a.alpha, a.epsilon, a.max_per_group)?;
    let mut out = std::io::stdout().lock();
    for g in &report.groups {
        let _ = writeln!(out, "{:<40} {:>6} {:>12.3e}", g.name, g.checked, g.max_rel_error);
    }
    let _ = writeln!(out, "max relative error {:.3e}", report.max_rel_error());
    if let Some(path) = a.out {
        let json = serde_json::to_string_pretty(&report).map_err(|e| MddError::Config(e.to_string()))?;
        write_text(&path, &json)?;
    }
    Ok(())
}

fn pipeline(a: PipelineArgs, exec: Execution) -> Result<()> {
    let mut cfg: PipelineConfig = load_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg = cfg.with_seed(s);
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    cfg.oracle |= a.oracle;
    std::fs::create_dir_all(&a.out).map_err(|e| MddError::io(&a.out, e))?;
    echo_config(&a.out.join("config.toml"), &cfg)?;
    let report = pipeline_run(&cfg, Some(&a.out), exec, |m| eprintln!("{m}"))?;
    print!("{report}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let result = match cli.command {
        Command::Synth(a) => synth(a, exec),
        Command::Train(a) => train(a, exec),
        Command::Decode(a) => decode(a, exec),
        Command::EvalMdd(a) => eval_mdd(a),
        Command::ExportFilters(a) => export(a),
        Command::GradCheck(a) => grad_check(a),
        Command::Pipeline(a) => pipeline(a, exec),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_data_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
