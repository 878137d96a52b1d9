//! Declarative experiment runner: data, denoisers, features, classifiers and reports.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifiers::{self, ClassProbabilities, ModelKind};
use crate::container::Container;
use crate::denoise::{denoise_pipeline, train_dae, train_separator, DaeTrainConfig, DcTrainConfig, DenoiseMethod, ModelSet, ScbssConfig};
use crate::ensemble::{build_view_tables, fit_ensemble_on_views, EnsembleConfig, TrainedEnsemble, View, ViewTables};
use crate::error::{FpcgError, Result};
use crate::eval::{evaluate_holdout, holdout_indices, loso_indices, EvalReport, FoldRecord, MetricsReport, Protocol, SegmentPrediction};
use crate::features::FeatureTable;
use crate::signal_io::{
    balanced_sample, load_manifest, load_wav, resample, save_wav, segment_recording, Gender, LabeledDataset, SegmentConfig, Waveform,
};
use crate::synth::{gen_beats, gen_dataset_pairs, gen_noise, mix_at_snr, BeatSpec, DatasetSpec};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// CSV manifest of recordings; exclusive with `synth`.
    pub manifest: Option<PathBuf>,
    pub synth: Option<DatasetSpec>,
    /// Manifest recordings are resampled to this rate before segmentation.
    pub sample_rate_hz: u32,
    pub segment: SegmentConfig,
    /// Draw this many segments, half per class, after segmentation.
    pub balanced_total: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { manifest: None, synth: None, sample_rate_hz: 8000, segment: SegmentConfig::default(), balanced_total: None }
    }
}

/// Synthetic corpus the denoisers learn from when no trained models are supplied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserTraining {
    pub clips: usize,
    pub clip_s: f64,
    /// SNR range (dB) of the DAE's noisy inputs.
    pub snr_db: (f64, f64),
    pub separator: DcTrainConfig,
    pub dae: DaeTrainConfig,
}

impl Default for DenoiserTraining {
    fn default() -> Self {
        Self {
            clips: 32,
            clip_s: 2.0,
            snr_db: (0.0, 20.0),
            separator: DcTrainConfig { epochs: 20, mixtures_per_epoch: 8, ..DcTrainConfig::default() },
            dae: DaeTrainConfig { epochs: 100, ..DaeTrainConfig::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiseConfig {
    pub methods: Vec<DenoiseMethod>,
    /// Previously trained denoisers; trained from `training` when absent.
    pub models: Option<PathBuf>,
    pub training: DenoiserTraining,
    pub scbss: ScbssConfig,
    /// Write every denoised segment as WAV under `out_dir/denoised`.
    pub save_audio: bool,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        Self {
            methods: DenoiseMethod::ALL.to_vec(),
            models: None,
            training: DenoiserTraining::default(),
            scbss: ScbssConfig::default(),
            save_audio: false,
        }
    }
}

/// Published figures to set beside ours in the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceRow {
    pub denoiser: DenoiseMethod,
    pub features: String,
    pub classifier: String,
    pub protocol: Protocol,
    pub acc: Option<f64>,
    pub pr: Option<f64>,
    pub sn: Option<f64>,
    pub sp: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub protocols: Vec<Protocol>,
    pub test_fraction: f64,
    pub positive: Gender,
    /// Also score every view with every base learner.
    pub single_views: bool,
    pub reference: Vec<ReferenceRow>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            protocols: vec![Protocol::HoldOut, Protocol::Loso],
            test_fraction: 0.2,
            positive: Gender::Male,
            single_views: true,
            reference: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    /// Defaults to `out_dir/cache`.
    pub cache_dir: Option<PathBuf>,
    pub data: DataConfig,
    pub denoise: DenoiseConfig,
    pub ensemble: EnsembleConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            out_dir: PathBuf::from("fpcg-out"),
            cache_dir: None,
            data: DataConfig::default(),
            denoise: DenoiseConfig::default(),
            ensemble: EnsembleConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| FpcgError::InvalidConfig(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(FpcgError::FileNotFound(path.to_path_buf()));
        }
        RunConfig::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| FpcgError::InvalidConfig(e.to_string()))
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| FpcgError::InvalidConfig("seed is mandatory (set `seed` or pass --seed)".into()))
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.out_dir.join("cache"))
    }

    pub fn validate(&self) -> Result<()> {
        self.seed()?;
        match (&self.data.manifest, &self.data.synth) {
            (Some(_), Some(_)) => return Err(FpcgError::InvalidConfig("data: set either `manifest` or `synth`, not both".into())),
            (None, None) => return Err(FpcgError::InvalidConfig("data: one of `manifest` or `synth` is required".into())),
            (Some(m), None) if !m.exists() => return Err(FpcgError::FileNotFound(m.clone())),
            _ => {}
        }
        if let Some(m) = &self.denoise.models {
            if !m.exists() {
                return Err(FpcgError::FileNotFound(m.clone()));
            }
        }
        if self.denoise.methods.is_empty() {
            return Err(FpcgError::InvalidConfig("denoise.methods is empty".into()));
        }
        if self.eval.protocols.is_empty() {
            return Err(FpcgError::InvalidConfig("eval.protocols is empty".into()));
        }
        if !(self.eval.test_fraction > 0.0 && self.eval.test_fraction < 1.0) {
            return Err(FpcgError::InvalidConfig(format!("eval.test_fraction {} must lie in (0, 1)", self.eval.test_fraction)));
        }
        self.ensemble.validate()
    }

    fn sample_rate(&self) -> u32 {
        match &self.data.synth {
            Some(s) => s.sample_rate_hz,
            None => self.data.sample_rate_hz,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Config,
    Data,
    TrainDenoiser,
    Denoise,
    Featurize,
    Evaluate,
    Train,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Data => "data",
            Stage::TrainDenoiser => "train-denoiser",
            Stage::Denoise => "denoise",
            Stage::Featurize => "featurize",
            Stage::Evaluate => "evaluate",
            Stage::Train => "train",
            Stage::Report => "report",
        })
    }
}

/// An error tagged with the pipeline stage that raised it.
#[derive(Debug, thiserror::Error)]
#[error("[{stage}] {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: FpcgError,
}

pub trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

/// Hex SHA-256 of a sequence of byte chunks, each length-prefixed.
pub fn content_hash<'a>(parts: impl IntoIterator<Item = &'a [u8]>) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn dataset_hash(data: &LabeledDataset<Waveform>) -> String {
    let mut h = Sha256::new();
    for s in &data.samples {
        h.update(s.subject_id.as_bytes());
        h.update([0u8]);
        h.update(s.gender.token().as_bytes());
        h.update(s.item.sample_rate_hz.to_le_bytes());
        h.update((s.item.len() as u64).to_le_bytes());
        for v in &s.item.samples {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    Ok(serde_json::to_vec(v)?)
}

/// Loads and segments the manifest, or generates the synthetic corpus.
pub fn load_data(cfg: &DataConfig, seed: u64) -> Result<LabeledDataset<Waveform>> {
    let data = match (&cfg.manifest, &cfg.synth) {
        (Some(path), _) => {
            let manifest = load_manifest(path)?;
            let per_record = manifest
                .records
                .par_iter()
                .map(|r| {
                    let path = manifest.resolve(r);
                    if !path.exists() {
                        return Err(FpcgError::FileNotFound(path));
                    }
                    let w = resample(&load_wav(&path)?, cfg.sample_rate_hz as i64)?;
                    segment_recording(&w, r, &cfg.segment)
                })
                .collect::<Result<Vec<_>>>()?;
            LabeledDataset::from(per_record.into_iter().flatten().collect::<Vec<_>>())
        }
        (None, Some(spec)) => gen_dataset_pairs(spec, seed)?.map(|s| s.noisy.clone()),
        (None, None) => return Err(FpcgError::InvalidConfig("no data source configured".into())),
    };
    if data.is_empty() {
        return Err(FpcgError::EmptyTrainingSet);
    }
    Ok(match cfg.balanced_total {
        Some(n) => balanced_sample(&data, n, seed),
        None => data,
    })
}

/// Trains both denoisers on a synthetic beats-and-noise corpus at `sample_rate`.
pub fn train_denoisers(t: &DenoiserTraining, scbss: &ScbssConfig, sample_rate: u32, seed: u64) -> Result<ModelSet> {
    if t.clips == 0 {
        return Err(FpcgError::InvalidConfig("denoiser training needs at least one clip".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_DE01);
    let mut clean = Vec::with_capacity(t.clips);
    let mut noise = Vec::with_capacity(t.clips);
    let mut pairs = Vec::with_capacity(t.clips);
    for _ in 0..t.clips {
        use rand::Rng;
        let spec = BeatSpec {
            fhr_bpm: rng.random_range(110.0..170.0),
            s1_freq_hz: rng.random_range(40.0..80.0),
            s2_freq_hz: rng.random_range(70.0..120.0),
            amplitude: rng.random_range(0.3..0.9),
            ..BeatSpec::default()
        };
        let c = gen_beats(&spec, t.clip_s, sample_rate, rng.random())?;
        let n = Waveform::new(gen_noise(t.clip_s, sample_rate, &mut rng)?, sample_rate)?;
        let snr = if t.snr_db.1 > t.snr_db.0 { rng.random_range(t.snr_db.0..t.snr_db.1) } else { t.snr_db.0 };
        let noisy = Waveform::new(mix_at_snr(&c.samples, &n.samples, snr), sample_rate)?;
        pairs.push((noisy, c.clone()));
        clean.push(c);
        noise.push(n);
    }
    let clip_len = clean[0].len();
    let sep_cfg =
        DcTrainConfig { mixture_len: t.separator.mixture_len.min(clip_len), seed: seed ^ t.separator.seed, ..t.separator.clone() };
    let dae_cfg = DaeTrainConfig { seed: seed ^ t.dae.seed, ..t.dae.clone() };
    let (separator, dae) = rayon::join(|| train_separator(&clean, &noise, &sep_cfg), || train_dae(&pairs, &dae_cfg));
    Ok(ModelSet { separator: Some(separator?), dae: Some(dae?), scbss: scbss.clone() })
}

/// Denoisers from `models`, the cache, or fresh training (which is then cached).
pub fn obtain_denoisers(cfg: &RunConfig, seed: u64) -> Result<ModelSet> {
    if let Some(path) = &cfg.denoise.models {
        let mut m = ModelSet::load(path)?;
        m.scbss = cfg.denoise.scbss.clone();
        return Ok(m);
    }
    let sr = cfg.sample_rate();
    let key = content_hash([json_bytes(&cfg.denoise.training)?.as_slice(), &sr.to_le_bytes(), &seed.to_le_bytes()]);
    let path = cfg.cache_dir().join(format!("denoisers-{}.fpcg", &key[..16]));
    if path.exists() {
        log::info!("denoisers: cache hit {}", path.display());
        let mut m = ModelSet::load(&path)?;
        m.scbss = cfg.denoise.scbss.clone();
        return Ok(m);
    }
    log::info!("denoisers: training at {sr} Hz");
    let m = train_denoisers(&cfg.denoise.training, &cfg.denoise.scbss, sr, seed)?;
    std::fs::create_dir_all(cfg.cache_dir())?;
    m.save(&path)?;
    Ok(m)
}

pub fn denoise_dataset(data: &LabeledDataset<Waveform>, method: DenoiseMethod, models: &ModelSet) -> Result<LabeledDataset<Waveform>> {
    let out = data.samples.par_iter().map(|s| denoise_pipeline(&s.item, method, models)).collect::<Result<Vec<_>>>()?;
    let mut result = data.clone();
    for (s, w) in result.samples.iter_mut().zip(out) {
        s.item = w;
    }
    Ok(result)
}

pub fn tables_to_container(t: &ViewTables) -> Result<Container> {
    let mut c = Container::new();
    c.put_text("kind", "view_tables");
    for v in View::ALL {
        c.nest(v.name(), t.get(v).to_container()?);
    }
    Ok(c)
}

pub fn tables_from_container(c: &Container) -> Result<ViewTables> {
    if c.text("kind")? != "view_tables" {
        return Err(FpcgError::Container("not a view-table cache".into()));
    }
    let mut tables = Vec::with_capacity(5);
    for v in View::ALL {
        tables.push(FeatureTable::from_container(&c.sub(v.name()))?);
    }
    Ok(ViewTables { tables: tables.try_into().expect("five views") })
}

pub fn save_view_tables(t: &ViewTables, path: impl AsRef<Path>) -> Result<()> {
    tables_to_container(t)?.save(path)
}

pub fn load_view_tables(path: impl AsRef<Path>) -> Result<ViewTables> {
    tables_from_container(&Container::load(path)?)
}

/// Denoisers plus a trained ensemble: everything needed to classify raw audio.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub method: DenoiseMethod,
    pub sample_rate_hz: u32,
    pub denoisers: ModelSet,
    pub ensemble: TrainedEnsemble,
    pub training_subjects: Vec<String>,
}

impl Bundle {
    pub fn train(
        tables: &ViewTables,
        method: DenoiseMethod,
        sample_rate_hz: u32,
        denoisers: ModelSet,
        cfg: &EnsembleConfig,
        seed: u64,
    ) -> Result<Bundle> {
        let ensemble = fit_ensemble_on_views(tables, cfg, seed)?;
        let mut training_subjects: Vec<String> = tables.subject_ids().to_vec();
        training_subjects.sort();
        training_subjects.dedup();
        Ok(Bundle { method, sample_rate_hz, denoisers, ensemble, training_subjects })
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new();
        c.put_text("kind", "bundle");
        c.put_text("method", self.method.to_string());
        c.put_json("sample_rate_hz", &self.sample_rate_hz)?;
        c.put_json("training_subjects", &self.training_subjects)?;
        c.nest("denoisers", self.denoisers.to_container()?);
        c.nest("ensemble", self.ensemble.to_container()?);
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Bundle> {
        if c.text("kind")? != "bundle" {
            return Err(FpcgError::Container(format!("expected a model bundle, found {:?}", c.text("kind")?)));
        }
        Ok(Bundle {
            method: c.text("method")?.parse().map_err(FpcgError::Container)?,
            sample_rate_hz: c.json("sample_rate_hz")?,
            training_subjects: c.json("training_subjects")?,
            denoisers: ModelSet::from_container(&c.sub("denoisers"))?,
            ensemble: TrainedEnsemble::from_container(&c.sub("ensemble"))?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Bundle> {
        Bundle::from_container(&Container::load(path)?)
    }

    /// Denoises with the bundled models and builds the ensemble's views.
    pub fn featurize(&self, data: &LabeledDataset<Waveform>) -> Result<ViewTables> {
        if let Some(s) = data.samples.iter().find(|s| s.item.sample_rate_hz != self.sample_rate_hz) {
            return Err(FpcgError::ShapeMismatch(format!(
                "segment of {} is at {} Hz, bundle expects {} Hz",
                s.subject_id, s.item.sample_rate_hz, self.sample_rate_hz
            )));
        }
        build_view_tables(&denoise_dataset(data, self.method, &self.denoisers)?, &self.ensemble.config.features)
    }

    pub fn predict_tables(&self, t: &ViewTables) -> Result<Vec<ClassProbabilities>> {
        self.ensemble.predict_tables(t)
    }

    /// Scores the bundle on `t`: hold-out replays inference on every row, LOSO
    /// refits the bundle's ensemble configuration once per subject.
    pub fn evaluate(&self, t: &ViewTables, protocol: Protocol, positive: Gender, seed: u64) -> Result<EvalReport> {
        match protocol {
            Protocol::HoldOut => {
                let seen: Vec<&String> = t.subject_ids().iter().filter(|s| self.training_subjects.binary_search(s).is_ok()).collect();
                if !seen.is_empty() {
                    log::warn!("{} evaluation rows belong to subjects the bundle was trained on", seen.len());
                }
                let rows: Vec<usize> = (0..t.n_rows()).collect();
                let probs = self.predict_tables(t)?;
                let predictions = rows
                    .iter()
                    .zip(probs)
                    .map(|(&i, p)| SegmentPrediction {
                        index: i,
                        subject_id: t.subject_ids()[i].clone(),
                        truth: t.genders()[i],
                        predicted: p.label(),
                        p: p.p,
                    })
                    .collect();
                let mut held: Vec<String> = t.subject_ids().to_vec();
                held.sort();
                held.dedup();
                let fold = FoldRecord { held_out: held, n_train: self.ensemble.meta_inputs.nrows(), n_test: t.n_rows(), skipped: None };
                EvalReport::from_predictions(predictions, vec![fold], protocol, positive)
            }
            Protocol::Loso => ensemble_eval(t, protocol, &(Vec::new(), Vec::new()), &self.ensemble.config, positive, seed),
        }
    }
}

/// Denoises and featurizes the dataset, reusing a cached result keyed by content hash.
pub fn featurize(
    data: &LabeledDataset<Waveform>,
    data_hash: &str,
    method: DenoiseMethod,
    models: &ModelSet,
    cfg: &RunConfig,
) -> Result<(ViewTables, Option<LabeledDataset<Waveform>>)> {
    let models_hash = content_hash([models.to_container()?.to_bytes().as_slice()]);
    let key = content_hash([
        data_hash.as_bytes(),
        method.to_string().as_bytes(),
        models_hash.as_bytes(),
        json_bytes(&cfg.ensemble.features)?.as_slice(),
    ]);
    let path = cfg.cache_dir().join(format!("views-{method}-{}.fpcg", &key[..16]));
    if path.exists() && !cfg.denoise.save_audio {
        log::info!("{method} features: cache hit {}", path.display());
        return Ok((tables_from_container(&Container::load(&path)?)?, None));
    }
    log::info!("{method}: denoising {} segments", data.len());
    let denoised = denoise_dataset(data, method, models)?;
    let tables = build_view_tables(&denoised, &cfg.ensemble.features)?;
    std::fs::create_dir_all(cfg.cache_dir())?;
    tables_to_container(&tables)?.save(&path)?;
    Ok((tables, Some(denoised)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub source: String,
    pub n_segments: usize,
    pub n_subjects: usize,
    pub n_male_segments: usize,
    pub n_female_segments: usize,
    pub sample_rate_hz: u32,
}

/// One line of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub denoiser: DenoiseMethod,
    pub features: String,
    pub classifier: String,
    pub protocol: Protocol,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleDetail {
    pub denoiser: DenoiseMethod,
    pub protocol: Protocol,
    pub evaluation: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub reference: ReferenceRow,
    pub ours: Option<MetricsReport>,
    /// `ours - reference` per metric, where both exist.
    pub delta: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub version: u32,
    pub seed: u64,
    pub positive: Gender,
    pub data: DataSummary,
    pub rows: Vec<ResultRow>,
    pub ensemble: Vec<EnsembleDetail>,
    pub comparison: Vec<Comparison>,
}

pub const ENSEMBLE_FEATURES: &str = "ensemble";
pub const META_CLASSIFIER: &str = "stacked-GBT";

fn view_rows(t: &ViewTables, view: View, rows: &[usize]) -> FeatureTable {
    t.get(view).select_rows(rows)
}

fn single_view_eval(
    t: &ViewTables,
    view: View,
    kind: ModelKind,
    protocol: Protocol,
    split: &(Vec<usize>, Vec<usize>),
    cfg: &RunConfig,
    seed: u64,
) -> Result<EvalReport> {
    let table = t.get(view);
    let train_fn = |rows: &[usize]| {
        let sub = view_rows(t, view, rows);
        classifiers::fit(kind, &sub.values, &sub.labels(), &sub.schema, &cfg.ensemble.hyper, seed)
    };
    let predict_fn = |m: &classifiers::TrainedModel, rows: &[usize]| -> Result<Vec<ClassProbabilities>> {
        m.predict_proba_matrix(&view_rows(t, view, rows).values, &table.schema)
    };
    match protocol {
        Protocol::HoldOut => {
            evaluate_holdout(&table.subject_ids, &table.genders, &split.0, &split.1, train_fn, predict_fn, cfg.eval.positive)
        }
        Protocol::Loso => loso_indices(&table.subject_ids, &table.genders, train_fn, predict_fn, cfg.eval.positive),
    }
}

pub fn ensemble_eval(
    t: &ViewTables,
    protocol: Protocol,
    split: &(Vec<usize>, Vec<usize>),
    cfg: &EnsembleConfig,
    positive: Gender,
    seed: u64,
) -> Result<EvalReport> {
    let train_fn = |rows: &[usize]| fit_ensemble_on_views(&t.select_rows(rows), cfg, seed);
    let predict_fn = |e: &TrainedEnsemble, rows: &[usize]| e.predict_tables(&t.select_rows(rows));
    match protocol {
        Protocol::HoldOut => evaluate_holdout(t.subject_ids(), t.genders(), &split.0, &split.1, train_fn, predict_fn, positive),
        Protocol::Loso => loso_indices(t.subject_ids(), t.genders(), train_fn, predict_fn, positive),
    }
}

/// Scores one denoiser's view tables under every configured protocol.
pub fn evaluate_tables(
    t: &ViewTables,
    denoiser: DenoiseMethod,
    cfg: &RunConfig,
    seed: u64,
) -> Result<(Vec<ResultRow>, Vec<EnsembleDetail>)> {
    let split = holdout_indices(t.subject_ids(), t.genders(), cfg.eval.test_fraction, seed)?;
    let mut rows = Vec::new();
    let mut details = Vec::new();
    for &protocol in &cfg.eval.protocols {
        if cfg.eval.single_views {
            let grid: Vec<(View, ModelKind)> = View::ALL.iter().flat_map(|&v| ModelKind::ALL.map(|k| (v, k))).collect();
            let scored = grid
                .par_iter()
                .map(|&(v, k)| single_view_eval(t, v, k, protocol, &split, cfg, seed).map(|r| (v, k, r)))
                .collect::<Result<Vec<_>>>()?;
            for (v, k, r) in scored {
                rows.push(ResultRow { denoiser, features: v.to_string(), classifier: k.to_string(), protocol, metrics: r.metrics });
            }
        }
        log::info!("{denoiser}: ensemble {protocol}");
        let r = ensemble_eval(t, protocol, &split, &cfg.ensemble, cfg.eval.positive, seed)?;
        rows.push(ResultRow {
            denoiser,
            features: ENSEMBLE_FEATURES.into(),
            classifier: META_CLASSIFIER.into(),
            protocol,
            metrics: r.metrics.clone(),
        });
        details.push(EnsembleDetail { denoiser, protocol, evaluation: r });
    }
    Ok((rows, details))
}

fn compare(reference: &[ReferenceRow], rows: &[ResultRow]) -> Vec<Comparison> {
    reference
        .iter()
        .map(|r| {
            let ours = rows
                .iter()
                .find(|o| {
                    o.denoiser == r.denoiser
                        && o.protocol == r.protocol
                        && o.features.eq_ignore_ascii_case(&r.features)
                        && o.classifier.eq_ignore_ascii_case(&r.classifier)
                })
                .map(|o| o.metrics.clone());
            let mut delta = BTreeMap::new();
            if let Some(m) = &ours {
                for (name, theirs, mine) in [("acc", r.acc, Some(m.acc)), ("pr", r.pr, m.pr), ("sn", r.sn, m.sn), ("sp", r.sp, m.sp)] {
                    if let (Some(a), Some(b)) = (theirs, mine) {
                        delta.insert(name.to_string(), b - a);
                    }
                }
            }
            Comparison { reference: r.clone(), ours, delta }
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "  n/a".to_string(), |x| format!("{x:.3}"))
}

/// Fixed-width results table.
pub fn format_table(report: &Report) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{} segments from {} subjects ({}), positive class {}",
        report.data.n_segments,
        report.data.n_subjects,
        report.data.source,
        report.positive.token()
    );
    let _ = writeln!(
        s,
        "{:<7} {:<12} {:<12} {:<9} {:>6} {:>6} {:>6} {:>6} {:>5}",
        "denoise", "features", "classifier", "protocol", "Acc", "PR", "SN", "SP", "n"
    );
    for r in &report.rows {
        let m = &r.metrics;
        let _ = writeln!(
            s,
            "{:<7} {:<12} {:<12} {:<9} {:>6} {:>6} {:>6} {:>6} {:>5}",
            r.denoiser.to_string(),
            r.features,
            r.classifier,
            r.protocol.to_string(),
            format!("{:.3}", m.acc),
            fmt_opt(m.pr),
            fmt_opt(m.sn),
            fmt_opt(m.sp),
            m.n
        );
    }
    for c in &report.comparison {
        let d: Vec<String> = c.delta.iter().map(|(k, v)| format!("{k} {v:+.3}")).collect();
        let _ = writeln!(
            s,
            "reference {} {} {} {}: {}",
            c.reference.denoiser,
            c.reference.features,
            c.reference.classifier,
            c.reference.protocol,
            if d.is_empty() { "no matching result".to_string() } else { d.join(", ") }
        );
    }
    s
}

/// Paths of everything a run wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub report: Report,
    pub report_json: PathBuf,
    pub report_table: PathBuf,
    pub denoisers: PathBuf,
    pub bundles: Vec<PathBuf>,
}

pub fn report_json(report: &Report) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)? + "\n")
}

fn write_denoised(dir: &Path, data: &LabeledDataset<Waveform>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for s in &data.samples {
        let k = counts.entry(&s.subject_id).or_default();
        save_wav(&s.item, dir.join(format!("{}_{:03}.wav", s.subject_id, k)))?;
        *k += 1;
    }
    Ok(())
}

/// Executes the whole experiment and writes its artifacts under `out_dir`.
pub fn run(cfg: &RunConfig) -> std::result::Result<RunOutput, StageError> {
    cfg.validate().at(Stage::Config)?;
    let seed = cfg.seed().at(Stage::Config)?;
    let out = &cfg.out_dir;
    std::fs::create_dir_all(out.join("models")).map_err(FpcgError::from).at(Stage::Config)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml().at(Stage::Config)?).map_err(FpcgError::from).at(Stage::Config)?;

    let data = load_data(&cfg.data, seed).at(Stage::Data)?;
    let data_hash = dataset_hash(&data);
    let genders = data.labels();
    let summary = DataSummary {
        source: if cfg.data.manifest.is_some() { "manifest".into() } else { "synth".into() },
        n_segments: data.len(),
        n_subjects: data.subjects().len(),
        n_male_segments: genders.iter().filter(|&&g| g == Gender::Male).count(),
        n_female_segments: genders.iter().filter(|&&g| g == Gender::Female).count(),
        sample_rate_hz: data.samples[0].item.sample_rate_hz,
    };
    log::info!("data: {} segments, {} subjects", summary.n_segments, summary.n_subjects);

    let models = obtain_denoisers(cfg, seed).at(Stage::TrainDenoiser)?;
    let denoisers = out.join("models").join("denoisers.fpcg");
    models.save(&denoisers).at(Stage::TrainDenoiser)?;

    let mut rows = Vec::new();
    let mut details = Vec::new();
    let mut bundles = Vec::new();
    for &method in &cfg.denoise.methods {
        let (tables, denoised) = featurize(&data, &data_hash, method, &models, cfg).at(Stage::Featurize)?;
        if cfg.denoise.save_audio {
            if let Some(d) = &denoised {
                write_denoised(&out.join("denoised").join(method.to_string()), d).at(Stage::Featurize)?;
            }
        }
        let fdir = out.join("features").join(method.to_string());
        std::fs::create_dir_all(&fdir).map_err(FpcgError::from).at(Stage::Featurize)?;
        for v in View::ALL {
            tables.get(v).write_csv(fdir.join(format!("{v}.csv"))).at(Stage::Featurize)?;
        }
        let (r, d) = evaluate_tables(&tables, method, cfg, seed).at(Stage::Evaluate)?;
        rows.extend(r);
        details.extend(d);
        let b = Bundle::train(&tables, method, summary.sample_rate_hz, models.clone(), &cfg.ensemble, seed).at(Stage::Train)?;
        let path = out.join("models").join(format!("bundle-{method}.fpcg"));
        b.save(&path).at(Stage::Train)?;
        bundles.push(path);
    }
    let comparison = compare(&cfg.eval.reference, &rows);
    let report = Report { version: REPORT_VERSION, seed, positive: cfg.eval.positive, data: summary, rows, ensemble: details, comparison };
    let report_json_path = out.join("report.json");
    let report_table = out.join("report.txt");
    std::fs::write(&report_json_path, report_json(&report).at(Stage::Report)?).map_err(FpcgError::from).at(Stage::Report)?;
    std::fs::write(&report_table, format_table(&report)).map_err(FpcgError::from).at(Stage::Report)?;
    Ok(RunOutput { report, report_json: report_json_path, report_table, denoisers, bundles })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_roundtrips_through_toml() {
        let cfg = RunConfig {
            seed: Some(3),
            data: DataConfig { synth: Some(DatasetSpec::default()), ..DataConfig::default() },
            ..RunConfig::default()
        };
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn minimal_toml() {
        let cfg =
            RunConfig::from_toml("seed = 1\nout_dir = \"x\"\n[data.synth]\nn_subjects_per_class = 3\n[eval]\nprotocols = [\"loso\"]\n")
                .unwrap();
        assert_eq!(cfg.data.synth.as_ref().unwrap().n_subjects_per_class, 3);
        assert_eq!(cfg.eval.protocols, vec![Protocol::Loso]);
        cfg.validate().unwrap();
        assert!(RunConfig::from_toml("sed = 1").is_err());
    }

    #[test]
    fn validation_errors() {
        let mut cfg = RunConfig::default();
        assert!(cfg.validate().is_err());
        cfg.seed = Some(1);
        assert!(cfg.validate().is_err());
        cfg.data.manifest = Some(PathBuf::from("/definitely/not/here.csv"));
        match cfg.validate() {
            Err(FpcgError::FileNotFound(p)) => assert!(p.ends_with("here.csv")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn hashes_depend_on_content() {
        let a = content_hash([b"ab".as_slice(), b"c"]);
        let b = content_hash([b"a".as_slice(), b"bc"]);
        assert_ne!(a, b);
        assert_eq!(a.len(), 64);
    }
}
