use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde_json::{json, Value};

use dpc::config::{preset_names, RunConfig};
use dpc::engine::{enhance_streaming, Engine};
use dpc::metrics::{erle, external_pesq, si_snr, stoi};
use dpc::model::init_weights;
use dpc::profiler::count;
use dpc::simulator::{generate, Sampling, Sources};
use dpc::wav::{read_wav, write_wav};
use dpc::weights::WeightContainer;
use dpc::Error;

#[derive(Parser)]
#[command(name = "dpc", version, about = "Joint echo cancellation and noise suppression with dual-path compression")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Enhance a microphone recording given the far-end reference.
    Enhance(EnhanceArgs),
    /// Print the analytic parameter and MAC report as JSON.
    Profile(ProfileArgs),
    /// Synthesize training-style mixtures from source directories.
    Simulate(SimulateArgs),
    /// Score an enhanced file against a clean reference.
    Metrics(MetricsArgs),
    /// Write seeded random weights for a configuration.
    InitWeights(InitArgs),
    /// Print the full run configuration of a preset or file as JSON.
    Config(ConfigArgs),
}

#[derive(Args)]
#[group(multiple = false)]
struct ConfigSel {
    /// Run configuration JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named preset, e.g. `uncompressed` or `dualpath-2x4`.
    #[arg(long)]
    preset: Option<String>,
}

impl ConfigSel {
    fn load(&self) -> dpc::Result<RunConfig> {
        match (&self.config, &self.preset) {
            (Some(p), _) => RunConfig::load(p),
            (None, Some(name)) => RunConfig::preset(name),
            (None, None) => Ok(RunConfig::default()),
        }
    }
}

#[derive(Args)]
struct EnhanceArgs {
    #[arg(long)]
    mic: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    #[command(flatten)]
    cfg: ConfigSel,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Run the chunked streaming path instead of whole-file inference.
    #[arg(long)]
    streaming: bool,
    /// Chunk size in samples for `--streaming`.
    #[arg(long, default_value_t = 160)]
    chunk: usize,
    /// Also write the linear canceller's residual.
    #[arg(long)]
    aec_out: Option<PathBuf>,
}

#[derive(Args)]
struct ProfileArgs {
    #[command(flatten)]
    cfg: ConfigSel,
    /// Baseline configuration for the compression ratio.
    #[arg(long, conflicts_with = "compare_preset")]
    compare: Option<PathBuf>,
    #[arg(long)]
    compare_preset: Option<String>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    near: PathBuf,
    #[arg(long)]
    far: PathBuf,
    #[arg(long)]
    noise: PathBuf,
    #[arg(long)]
    rir: Option<PathBuf>,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    est: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Microphone signal; enables ERLE.
    #[arg(long)]
    mic: Option<PathBuf>,
    #[arg(long)]
    json: bool,
    /// External wideband PESQ executable.
    #[arg(long)]
    pesq_bin: Option<PathBuf>,
}

#[derive(Args)]
struct InitArgs {
    #[command(flatten)]
    cfg: ConfigSel,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConfigArgs {
    #[command(flatten)]
    cfg: ConfigSel,
    /// List preset names instead.
    #[arg(long)]
    list: bool,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Wav { .. } | Error::UnsupportedAudio(_) => 3,
        Error::InvalidConfig(_)
        | Error::Json(_)
        | Error::WeightMismatch(_)
        | Error::BadMagic
        | Error::UnsupportedVersion(_)
        | Error::UnsupportedDtype(_)
        | Error::TruncatedTensor(_)
        | Error::TruncatedFile
        | Error::DuplicateTensor(_) => 4,
        _ => 1,
    }
}

fn load_weights(path: &Path) -> dpc::Result<WeightContainer> {
    WeightContainer::load(path).map_err(|e| match e {
        Error::Io { .. } => e,
        other => Error::WeightMismatch(format!("{}: {other}", path.display())),
    })
}

fn enhance(a: &EnhanceArgs) -> dpc::Result<Value> {
    let cfg = a.cfg.load()?;
    let weights = load_weights(&a.weights)?;
    let engine = Arc::new(Engine::new(&cfg, &weights)?);
    let d = read_wav(&a.mic)?;
    let x = read_wav(&a.reference)?;
    if d.len() != x.len() {
        warn!("reference has {} samples, mic {}; reference is cut or padded", x.len(), d.len());
    }
    let output = if a.streaming {
        enhance_streaming(Arc::clone(&engine), &d, &x, a.chunk)?
    } else {
        engine.enhance(&d, &x)?
    };
    write_wav(&a.out, &output)?;
    if let Some(p) = &a.aec_out {
        write_wav(p, &engine.enhance_detailed(&d, &x)?.aec_error)?;
    }
    info!("wrote {} samples to {}", output.len(), a.out.display());
    Ok(Value::Null)
}

fn profile(a: &ProfileArgs) -> dpc::Result<Value> {
    let cfg = a.cfg.load()?;
    let report = count(&cfg.model, &cfg.stft)?;
    let mut v = serde_json::to_value(&report)?;
    let base = match (&a.compare, &a.compare_preset) {
        (Some(p), _) => Some(RunConfig::load(p)?),
        (None, Some(n)) => Some(RunConfig::preset(n)?),
        (None, None) => None,
    };
    if let Some(base) = base {
        let b = count(&base.model, &base.stft)?;
        v["baseline_macs_per_second"] = json!(b.macs_per_second);
        v["baseline_params"] = json!(b.params);
        v["compression_ratio"] = json!(report.compression_ratio(&b));
    }
    Ok(v)
}

fn simulate(a: &SimulateArgs) -> dpc::Result<Value> {
    let sources = Sources::from_dirs(&a.near, &a.far, &a.noise, a.rir.as_deref())?;
    let manifests = generate(&sources, a.count, a.seed, &Sampling::default(), &a.out)?;
    info!("wrote {} clips to {}", manifests.len(), a.out.display());
    Ok(json!({ "clips": manifests.len(), "out": a.out }))
}

fn metrics(a: &MetricsArgs) -> dpc::Result<Value> {
    let est = read_wav(&a.est)?;
    let reference = read_wav(&a.reference)?;
    let mut v = json!({ "si_snr_db": si_snr(&est, &reference)? });
    v["stoi"] = match stoi(&est, &reference) {
        Ok(s) => json!(s),
        Err(Error::TooShort(msg)) => {
            warn!("stoi skipped: {msg}");
            Value::Null
        }
        Err(e) => return Err(e),
    };
    if let Some(m) = &a.mic {
        v["erle_db"] = json!(erle(&read_wav(m)?, &est)?);
    }
    if let Some(bin) = &a.pesq_bin {
        v["wb_pesq"] = json!(external_pesq(bin, &a.reference, &a.est)?);
    }
    Ok(v)
}

fn init(a: &InitArgs) -> dpc::Result<Value> {
    let cfg = a.cfg.load()?;
    let w = init_weights(&cfg.model, cfg.stft.num_bins(), a.seed)?;
    w.save(&a.out)?;
    info!("wrote {} tensors ({} parameters) to {}", w.len(), w.total_params(), a.out.display());
    Ok(Value::Null)
}

fn show_config(a: &ConfigArgs) -> dpc::Result<Value> {
    if a.list {
        return Ok(json!(preset_names()));
    }
    // printed directly so f32 fields keep their short form
    emit(&a.cfg.load()?.to_json());
    Ok(Value::Null)
}

/// Writes a line to stdout; a closed pipe (e.g. `| head`) ends quietly.
fn emit(line: &str) {
    let mut out = std::io::stdout().lock();
    if let Err(e) = writeln!(out, "{line}") {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        eprintln!("error: writing to stdout: {e}");
        std::process::exit(3);
    }
}

fn run(cli: &Cli) -> dpc::Result<()> {
    let (value, as_json) = match &cli.cmd {
        Cmd::Enhance(a) => (enhance(a)?, false),
        Cmd::Profile(a) => (profile(a)?, true),
        Cmd::Simulate(a) => (simulate(a)?, true),
        Cmd::Metrics(a) => (metrics(a)?, a.json),
        Cmd::InitWeights(a) => (init(a)?, false),
        Cmd::Config(a) => {
            let v = show_config(a)?;
            (v.clone(), !v.is_null())
        }
    };
    if as_json {
        emit(&serde_json::to_string_pretty(&value)?);
    } else if let Value::Object(map) = value {
        for (k, v) in map {
            emit(&format!("{k}: {v}"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DPC_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
