use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fpcg_core::denoise::{denoise_pipeline, DenoiseMethod, ModelSet};
use fpcg_core::ensemble::View;
use fpcg_core::eval::Protocol;
use fpcg_core::pipeline::{
    format_table, load_data, load_view_tables, obtain_denoisers, save_view_tables, AtStage, Bundle, DataConfig, RunConfig, Stage,
    StageError, REPORT_VERSION,
};
use fpcg_core::signal_io::{load_wav, resample, save_wav, segment_recording, Gender, LabeledDataset, SubjectRecord, Waveform};
use fpcg_core::synth::{gen_dataset_pairs, materialize, DatasetSpec};
use fpcg_core::FpcgError;
use serde_json::json;

type CmdResult = Result<(), StageError>;

#[derive(Parser, Debug)]
#[command(name = "fpcg", version, about = "Fetal phonocardiogram gender classification")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment file (TOML); other commands take their defaults from it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// -v for progress, -vv for detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ProtocolArg {
    Holdout,
    Loso,
}

impl From<ProtocolArg> for Protocol {
    fn from(p: ProtocolArg) -> Protocol {
        match p {
            ProtocolArg::Holdout => Protocol::HoldOut,
            ProtocolArg::Loso => Protocol::Loso,
        }
    }
}

#[derive(Args, Debug)]
struct Source {
    /// Recording manifest (CSV).
    #[arg(long, conflicts_with = "features")]
    manifest: Option<PathBuf>,
    /// View tables written by `featurize`.
    #[arg(long)]
    features: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Write a synthetic corpus (WAVs plus manifest).
    Synth {
        #[arg(long)]
        subjects_per_class: Option<usize>,
        #[arg(long)]
        segments: Option<usize>,
        /// Female minus male heart rate, bpm.
        #[arg(long)]
        fhr_delta: Option<f64>,
        #[arg(long)]
        segment_s: Option<f64>,
    },
    /// Cut manifest recordings into segments and write them with a new manifest.
    Segment {
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Denoise one WAV file.
    Denoise {
        input: PathBuf,
        output: PathBuf,
        #[arg(long, default_value = "SCBSS", value_parser = parse_method)]
        method: DenoiseMethod,
        /// Trained denoisers (file or directory holding `denoisers.fpcg`).
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// Train the separator and the DAE.
    TrainDenoiser,
    /// Denoise and build the five feature views.
    Featurize {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value = "SCBSS", value_parser = parse_method)]
        method: DenoiseMethod,
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// Train a stacking ensemble and save it with its denoisers.
    Train {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value = "SCBSS", value_parser = parse_method)]
        method: DenoiseMethod,
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// Classify segments with a trained bundle.
    Predict {
        #[arg(long)]
        bundle: PathBuf,
        #[command(flatten)]
        source: Source,
        /// WAV files to classify instead of a manifest.
        wavs: Vec<PathBuf>,
    },
    /// Score a bundle on labelled data.
    Evaluate {
        #[arg(long)]
        bundle: PathBuf,
        #[command(flatten)]
        source: Source,
        #[arg(long, value_enum, default_value = "holdout")]
        protocol: ProtocolArg,
    },
    /// Run a full experiment from --config.
    Run,
}

fn parse_method(s: &str) -> Result<DenoiseMethod, String> {
    s.parse()
}

/// 2: usage or configuration, 3: data and model incompatibility, 4: numeric failure.
fn exit_code(e: &FpcgError) -> u8 {
    use FpcgError::*;
    match e {
        FileNotFound(_)
        | MissingFile { .. }
        | ParseError { .. }
        | UnknownGender { .. }
        | InvalidConfig(_)
        | InvalidSpec(_)
        | InvalidWindow(_)
        | NonInvertibleConfig(_)
        | TooManyLevels { .. }
        | UnknownWavelet(_)
        | InvalidRate(_)
        | InvalidFrame(_)
        | Io(_) => 2,
        DivergedLoss { .. } | ZeroVariance | ZeroSpectrum => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.common.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    if let Some(n) = cli.common.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: cannot size thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e.source))
        }
    }
}

fn config(common: &Common) -> Result<RunConfig, StageError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p).at(Stage::Config)?,
        None => RunConfig::default(),
    };
    if common.seed.is_some() {
        cfg.seed = common.seed;
    }
    if let Some(o) = &common.out_dir {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

fn io(e: std::io::Error) -> FpcgError {
    FpcgError::Io(e)
}

fn dispatch(cli: &Cli) -> CmdResult {
    let cfg = config(&cli.common)?;
    match &cli.cmd {
        Cmd::Synth { subjects_per_class, segments, fhr_delta, segment_s } => {
            let mut spec = cfg.data.synth.clone().unwrap_or_default();
            if let Some(n) = subjects_per_class {
                spec.n_subjects_per_class = *n;
            }
            if let Some(n) = segments {
                spec.segs_per_subject = *n;
            }
            if let Some(d) = fhr_delta {
                spec.class_delta.fhr_bpm = *d;
            }
            if let Some(s) = segment_s {
                spec.segment_s = *s;
            }
            cmd_synth(&spec, &cfg)
        }
        Cmd::Segment { manifest } => cmd_segment(&cfg, manifest.as_deref()),
        Cmd::Denoise { input, output, method, models } => cmd_denoise(&cfg, input, *method, models.as_deref(), output),
        Cmd::TrainDenoiser => {
            let seed = cfg.seed().at(Stage::Config)?;
            let m = obtain_denoisers(&cfg, seed).at(Stage::TrainDenoiser)?;
            let path = cfg.out_dir.join("models").join("denoisers.fpcg");
            std::fs::create_dir_all(path.parent().unwrap()).map_err(io).at(Stage::TrainDenoiser)?;
            m.save(&path).at(Stage::TrainDenoiser)?;
            println!("{}", path.display());
            Ok(())
        }
        Cmd::Featurize { manifest, method, models } => cmd_featurize(&cfg, manifest.as_deref(), *method, models.as_deref()),
        Cmd::Train { source, method, models } => cmd_train(&cfg, source, *method, models.as_deref()),
        Cmd::Predict { bundle, source, wavs } => cmd_predict(&cfg, bundle, source, wavs),
        Cmd::Evaluate { bundle, source, protocol } => cmd_evaluate(&cfg, bundle, source, (*protocol).into()),
        Cmd::Run => {
            if cli.common.config.is_none() {
                return Err(FpcgError::InvalidConfig("run needs --config".into())).at(Stage::Config);
            }
            let out = fpcg_core::pipeline::run(&cfg)?;
            print!("{}", format_table(&out.report));
            println!("report: {}", out.report_json.display());
            Ok(())
        }
    }
}

fn cmd_synth(spec: &DatasetSpec, cfg: &RunConfig) -> CmdResult {
    let seed = cfg.seed().at(Stage::Config)?;
    let data = gen_dataset_pairs(spec, seed).at(Stage::Data)?.map(|s| s.noisy.clone());
    let manifest = materialize(&data, &cfg.out_dir).at(Stage::Data)?;
    println!("{}", manifest.display());
    Ok(())
}

/// Data config with the manifest overridden from the command line.
fn data_config(cfg: &RunConfig, manifest: Option<&Path>, sample_rate_hz: Option<u32>) -> Result<DataConfig, StageError> {
    let mut d = cfg.data.clone();
    if let Some(m) = manifest {
        d.manifest = Some(m.to_path_buf());
        d.synth = None;
    }
    if let Some(sr) = sample_rate_hz {
        d.sample_rate_hz = sr;
        if let Some(s) = &mut d.synth {
            s.sample_rate_hz = sr;
        }
    }
    match &d.manifest {
        Some(m) if !m.exists() => Err(FpcgError::FileNotFound(m.clone())).at(Stage::Config),
        None if d.synth.is_none() => Err(FpcgError::InvalidConfig("no data: pass --manifest or configure [data]".into())).at(Stage::Config),
        _ => Ok(d),
    }
}

fn load(cfg: &RunConfig, d: &DataConfig) -> Result<LabeledDataset<Waveform>, StageError> {
    // balanced sampling and synthesis both draw from the seed; plain manifests do not need one
    let seed = if d.synth.is_some() || d.balanced_total.is_some() { cfg.seed().at(Stage::Config)? } else { cfg.seed.unwrap_or(0) };
    load_data(d, seed).at(Stage::Data)
}

fn cmd_segment(cfg: &RunConfig, manifest: Option<&Path>) -> CmdResult {
    let d = data_config(cfg, manifest, None)?;
    let data = load(cfg, &d)?;
    let out = materialize(&data, cfg.out_dir.join("segments")).at(Stage::Data)?;
    println!("{} segments -> {}", data.len(), out.display());
    Ok(())
}

fn models_for(cfg: &RunConfig, models: Option<&Path>, stage: Stage) -> Result<ModelSet, StageError> {
    match models {
        Some(p) => {
            let file = if p.is_dir() { p.join("denoisers.fpcg") } else { p.to_path_buf() };
            if !file.exists() {
                return Err(FpcgError::FileNotFound(file)).at(Stage::Config);
            }
            let mut m = ModelSet::load(&file).at(stage)?;
            m.scbss = cfg.denoise.scbss.clone();
            Ok(m)
        }
        None => {
            let seed = cfg.seed().at(Stage::Config)?;
            obtain_denoisers(cfg, seed).at(Stage::TrainDenoiser)
        }
    }
}

fn cmd_denoise(cfg: &RunConfig, input: &Path, method: DenoiseMethod, models: Option<&Path>, output: &Path) -> CmdResult {
    if !input.exists() {
        return Err(FpcgError::FileNotFound(input.to_path_buf())).at(Stage::Config);
    }
    let w = load_wav(input).at(Stage::Data)?;
    let mut c = cfg.clone();
    c.data.sample_rate_hz = w.sample_rate_hz;
    c.data.synth = None;
    let m = models_for(&c, models, Stage::Denoise)?;
    let d = denoise_pipeline(&w, method, &m).at(Stage::Denoise)?;
    save_wav(&d, output).at(Stage::Denoise)?;
    println!("{}", output.display());
    Ok(())
}

fn cmd_featurize(cfg: &RunConfig, manifest: Option<&Path>, method: DenoiseMethod, models: Option<&Path>) -> CmdResult {
    let d = data_config(cfg, manifest, None)?;
    let data = load(cfg, &d)?;
    let mut c = cfg.clone();
    c.data = d;
    let m = models_for(&c, models, Stage::Featurize)?;
    let tables = featurize_with(&data, method, &m, &cfg.ensemble.features)?;
    let dir = cfg.out_dir.join("features").join(method.to_string());
    std::fs::create_dir_all(&dir).map_err(io).at(Stage::Featurize)?;
    for v in View::ALL {
        tables.get(v).write_csv(dir.join(format!("{v}.csv"))).at(Stage::Featurize)?;
    }
    let path = dir.join("views.fpcg");
    save_view_tables(&tables, &path).at(Stage::Featurize)?;
    println!("{}", path.display());
    Ok(())
}

fn featurize_with(
    data: &LabeledDataset<Waveform>,
    method: DenoiseMethod,
    models: &ModelSet,
    features: &fpcg_core::features::FeatureConfig,
) -> Result<fpcg_core::ensemble::ViewTables, StageError> {
    let denoised = fpcg_core::pipeline::denoise_dataset(data, method, models).at(Stage::Featurize)?;
    fpcg_core::ensemble::build_view_tables(&denoised, features).at(Stage::Featurize)
}

fn cmd_train(cfg: &RunConfig, source: &Source, method: DenoiseMethod, models: Option<&Path>) -> CmdResult {
    let seed = cfg.seed().at(Stage::Config)?;
    let (tables, m, sr) = match &source.features {
        Some(f) => {
            if !f.exists() {
                return Err(FpcgError::FileNotFound(f.clone())).at(Stage::Config);
            }
            let t = load_view_tables(f).at(Stage::Featurize)?;
            let m = models_for(cfg, models, Stage::Train)?;
            let sr = cfg.data.synth.as_ref().map_or(cfg.data.sample_rate_hz, |s| s.sample_rate_hz);
            (t, m, sr)
        }
        None => {
            let d = data_config(cfg, source.manifest.as_deref(), None)?;
            let data = load(cfg, &d)?;
            let mut c = cfg.clone();
            c.data = d;
            let m = models_for(&c, models, Stage::Train)?;
            let t = featurize_with(&data, method, &m, &cfg.ensemble.features)?;
            (t, m, data.samples[0].item.sample_rate_hz)
        }
    };
    let bundle = Bundle::train(&tables, method, sr, m, &cfg.ensemble, seed).at(Stage::Train)?;
    let path = cfg.out_dir.join("models").join(format!("bundle-{method}.fpcg"));
    std::fs::create_dir_all(path.parent().unwrap()).map_err(io).at(Stage::Train)?;
    bundle.save(&path).at(Stage::Train)?;
    println!("{}", path.display());
    Ok(())
}

fn load_bundle(path: &Path) -> Result<Bundle, StageError> {
    if !path.exists() {
        return Err(FpcgError::FileNotFound(path.to_path_buf())).at(Stage::Config);
    }
    Bundle::load(path).at(Stage::Train)
}

/// View tables for `source`, featurized by the bundle when given audio.
fn bundle_tables(cfg: &RunConfig, bundle: &Bundle, source: &Source) -> Result<fpcg_core::ensemble::ViewTables, StageError> {
    match &source.features {
        Some(f) => {
            if !f.exists() {
                return Err(FpcgError::FileNotFound(f.clone())).at(Stage::Config);
            }
            load_view_tables(f).at(Stage::Featurize)
        }
        None => {
            let d = data_config(cfg, source.manifest.as_deref(), Some(bundle.sample_rate_hz))?;
            let data = load(cfg, &d)?;
            bundle.featurize(&data).at(Stage::Featurize)
        }
    }
}

fn wav_dataset(cfg: &RunConfig, wavs: &[PathBuf], sample_rate_hz: u32) -> Result<LabeledDataset<Waveform>, StageError> {
    let mut segments = Vec::new();
    for p in wavs {
        if !p.exists() {
            return Err(FpcgError::FileNotFound(p.clone())).at(Stage::Config);
        }
        let w = resample(&load_wav(p).at(Stage::Data)?, sample_rate_hz as i64).at(Stage::Data)?;
        let record = SubjectRecord {
            subject_id: p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned()),
            // unknown: never reported
            gender: Gender::Male,
            file_path: p.display().to_string(),
            duration_s: w.duration_s(),
        };
        segments.extend(segment_recording(&w, &record, &cfg.data.segment).at(Stage::Data)?);
    }
    Ok(LabeledDataset::from(segments))
}

fn cmd_predict(cfg: &RunConfig, bundle: &Path, source: &Source, wavs: &[PathBuf]) -> CmdResult {
    let b = load_bundle(bundle)?;
    let labelled = source.manifest.is_some() || source.features.is_some();
    if labelled == !wavs.is_empty() {
        return Err(FpcgError::InvalidConfig("give either WAV files or one of --manifest/--features".into())).at(Stage::Config);
    }
    let tables = if labelled {
        bundle_tables(cfg, &b, source)?
    } else {
        b.featurize(&wav_dataset(cfg, wavs, b.sample_rate_hz)?).at(Stage::Featurize)?
    };
    let probs = b.predict_tables(&tables).at(Stage::Evaluate)?;
    let mut out = std::io::stdout().lock();
    let header = if labelled { "index,subject_id,truth,predicted,p_male,p_female" } else { "index,subject_id,predicted,p_male,p_female" };
    let mut text = format!("{header}\n");
    for (i, p) in probs.iter().enumerate() {
        let truth = if labelled { format!("{},", tables.genders()[i].token()) } else { String::new() };
        text.push_str(&format!("{i},{},{truth}{},{:.6},{:.6}\n", tables.subject_ids()[i], p.label().token(), p.p[0], p.p[1]));
    }
    out.write_all(text.as_bytes()).map_err(io).at(Stage::Report)?;
    Ok(())
}

fn cmd_evaluate(cfg: &RunConfig, bundle: &Path, source: &Source, protocol: Protocol) -> CmdResult {
    let b = load_bundle(bundle)?;
    if source.manifest.is_none() && source.features.is_none() && cfg.data.manifest.is_none() && cfg.data.synth.is_none() {
        return Err(FpcgError::InvalidConfig("evaluate needs --manifest or --features".into())).at(Stage::Config);
    }
    let tables = bundle_tables(cfg, &b, source)?;
    let seed = match protocol {
        Protocol::HoldOut => cfg.seed.unwrap_or(0),
        Protocol::Loso => cfg.seed().at(Stage::Config)?,
    };
    let report = b.evaluate(&tables, protocol, cfg.eval.positive, seed).at(Stage::Evaluate)?;
    let doc = json!({
        "version": REPORT_VERSION,
        "seed": seed,
        "denoiser": b.method,
        "protocol": protocol,
        "evaluation": report,
    });
    std::fs::create_dir_all(&cfg.out_dir).map_err(io).at(Stage::Report)?;
    let name = match protocol {
        Protocol::HoldOut => "evaluation-holdout.json",
        Protocol::Loso => "evaluation-loso.json",
    };
    let path = cfg.out_dir.join(name);
    let text = serde_json::to_string_pretty(&doc).map_err(FpcgError::from).at(Stage::Report)? + "\n";
    std::fs::write(&path, text).map_err(io).at(Stage::Report)?;
    let m = &report.metrics;
    let f = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.3}"));
    println!("{} {protocol}: Acc {:.3}  PR {}  SN {}  SP {}  (n = {})", b.method, m.acc, f(m.pr), f(m.sn), f(m.sp), m.n);
    let skipped = report.folds.iter().filter(|f| f.skipped.is_some()).count();
    if skipped > 0 {
        println!("{skipped} of {} folds skipped", report.folds.len());
    }
    println!("report: {}", path.display());
    Ok(())
}
