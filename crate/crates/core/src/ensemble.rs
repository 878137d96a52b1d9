//! Stacking ensemble: five base learners on five feature views feeding a boosted-tree meta-learner.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::{self, ClassProbabilities, GbtParams, HyperParams, ModelKind, TrainedModel};
use crate::container::Container;
use crate::error::{FpcgError, Result};
use crate::features::{acoustic_matrices, flatten_acoustic, full_statistical_vector, FeatureConfig, FeatureTable, FeatureVector, Summary};
use crate::signal_io::{Gender, LabeledDataset, Waveform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum View {
    Statistical,
    Chroma,
    Mel,
    Mfcc,
    Cqt,
}

impl View {
    /// Fixed concatenation order of the meta-learner input.
    pub const ALL: [View; 5] = [View::Statistical, View::Chroma, View::Mel, View::Mfcc, View::Cqt];

    pub fn index(self) -> usize {
        View::ALL.iter().position(|&v| v == self).expect("listed")
    }

    pub fn name(self) -> &'static str {
        match self {
            View::Statistical => "statistical",
            View::Chroma => "chroma",
            View::Mel => "mel",
            View::Mfcc => "mfcc",
            View::Cqt => "cqt",
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for View {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        View::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown view {s:?} (expected statistical, chroma, mel, mfcc, cqt)"))
    }
}

/// The five feature vectors of one segment, in [`View::ALL`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSet {
    pub views: [FeatureVector; 5],
}

impl ViewSet {
    pub fn get(&self, v: View) -> &FeatureVector {
        &self.views[v.index()]
    }
}

pub fn build_views(s_d: &Waveform, cfg: &FeatureConfig) -> Result<ViewSet> {
    let ac = acoustic_matrices(s_d, cfg)?;
    Ok(ViewSet {
        views: [
            full_statistical_vector(s_d, cfg)?,
            flatten_acoustic(&ac.chroma, Summary::PerBinMean, "chroma")?,
            flatten_acoustic(&ac.mel, Summary::PerBinMean, "mel")?,
            flatten_acoustic(&ac.mfcc, Summary::PerBinMean, "mfcc")?,
            flatten_acoustic(&ac.cqt, Summary::PerBinMean, "cqt")?,
        ],
    })
}

/// One feature table per view over the same rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewTables {
    pub tables: [FeatureTable; 5],
}

impl ViewTables {
    pub fn get(&self, v: View) -> &FeatureTable {
        &self.tables[v.index()]
    }

    pub fn n_rows(&self) -> usize {
        self.tables[0].n_rows()
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.tables[0].subject_ids
    }

    pub fn genders(&self) -> &[Gender] {
        &self.tables[0].genders
    }

    pub fn select_rows(&self, idx: &[usize]) -> ViewTables {
        ViewTables { tables: std::array::from_fn(|i| self.tables[i].select_rows(idx)) }
    }

    pub fn view_set(&self, row: usize) -> ViewSet {
        ViewSet { views: std::array::from_fn(|i| self.tables[i].row(row)) }
    }

    pub fn from_view_sets(sets: Vec<ViewSet>, subject_ids: Vec<String>, genders: Vec<Gender>) -> Result<ViewTables> {
        let mut per_view: [Vec<FeatureVector>; 5] = Default::default();
        for s in sets {
            for (slot, v) in per_view.iter_mut().zip(s.views) {
                slot.push(v);
            }
        }
        let mut tables = Vec::with_capacity(5);
        for rows in &per_view {
            tables.push(FeatureTable::from_rows(rows, subject_ids.clone(), genders.clone())?);
        }
        Ok(ViewTables { tables: tables.try_into().expect("five views") })
    }
}

/// Extracts all five views of every segment (in parallel, order preserved).
pub fn build_view_tables(data: &LabeledDataset<Waveform>, cfg: &FeatureConfig) -> Result<ViewTables> {
    if data.is_empty() {
        return Err(FpcgError::EmptyTrainingSet);
    }
    let sets = data.samples.par_iter().map(|s| build_views(&s.item, cfg)).collect::<Result<Vec<_>>>()?;
    ViewTables::from_view_sets(
        sets,
        data.samples.iter().map(|s| s.subject_id.clone()).collect(),
        data.samples.iter().map(|s| s.gender).collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseSpec {
    pub view: View,
    pub kind: ModelKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub bases: Vec<BaseSpec>,
    pub hyper: HyperParams,
    pub meta: GbtParams,
    pub stacking_folds: usize,
    pub features: FeatureConfig,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            bases: vec![
                BaseSpec { view: View::Statistical, kind: ModelKind::Gbt },
                BaseSpec { view: View::Chroma, kind: ModelKind::Lda },
                BaseSpec { view: View::Mel, kind: ModelKind::Gbt },
                BaseSpec { view: View::Mfcc, kind: ModelKind::Svm },
                BaseSpec { view: View::Cqt, kind: ModelKind::Knn },
            ],
            hyper: HyperParams::default(),
            meta: GbtParams::default(),
            stacking_folds: 5,
            features: FeatureConfig::default(),
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bases.len() != 5 {
            return Err(FpcgError::InvalidConfig(format!("ensemble needs exactly 5 base entries, got {}", self.bases.len())));
        }
        let views: BTreeSet<View> = self.bases.iter().map(|b| b.view).collect();
        if views.len() != 5 {
            return Err(FpcgError::InvalidConfig("ensemble base views must be distinct".into()));
        }
        if self.stacking_folds < 2 {
            return Err(FpcgError::InvalidConfig("stacking_folds must be at least 2".into()));
        }
        Ok(())
    }

    /// Base specs sorted into meta-input order.
    fn ordered_bases(&self) -> Vec<BaseSpec> {
        let mut b = self.bases.clone();
        b.sort_by_key(|s| s.view.index());
        b
    }
}

/// Subject-grouped stratified folds: each gender's subjects are shuffled and
/// dealt round-robin, continuing the deal across genders.
pub fn grouped_folds(subject_ids: &[String], genders: &[Gender], k: usize, seed: u64) -> Result<Vec<Vec<String>>> {
    let mut by_gender: [BTreeSet<String>; 2] = Default::default();
    for (s, g) in subject_ids.iter().zip(genders) {
        by_gender[g.index()].insert(s.clone());
    }
    let counts = [by_gender[0].len(), by_gender[1].len()];
    if counts.iter().any(|&c| c < 2) {
        return Err(FpcgError::InsufficientSubjects(format!(
            "need at least 2 subjects per class, have {} male and {} female",
            counts[0], counts[1]
        )));
    }
    let k = k.min(counts[0] + counts[1]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for group in &by_gender {
        let mut subjects: Vec<String> = group.iter().cloned().collect();
        subjects.shuffle(&mut rng);
        for s in subjects {
            folds[next % k].push(s);
            next += 1;
        }
    }
    folds.iter_mut().for_each(|f| f.sort());
    Ok(folds)
}

/// Seed of the base model for `view` in stacking fold `fold` (fold 0 is the final refit).
pub fn stacking_seed(seed: u64, fold: u64, view: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(fold.wrapping_mul(1_000_003)).wrapping_add(view)
}

/// Record of one stacking fold: which subjects were held out and which rows they cover.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackingFold {
    pub held_out_subjects: Vec<String>,
    pub held_out_rows: Vec<usize>,
    pub train_rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedEnsemble {
    pub config: EnsembleConfig,
    /// In [`View::ALL`] order.
    pub bases: Vec<(View, TrainedModel)>,
    /// `None` when too few subjects per class allowed grouped stacking; the
    /// bases' probabilities are then averaged.
    pub meta: Option<TrainedModel>,
    pub folds: Vec<StackingFold>,
    /// Out-of-fold base probabilities the meta-learner was fit on, `(rows, 10)`.
    pub meta_inputs: Array2<f64>,
}

pub const META_DIM: usize = 10;

pub fn meta_schema() -> Vec<String> {
    View::ALL.iter().flat_map(|v| [format!("meta.{v}.male"), format!("meta.{v}.female")]).collect()
}

fn fit_bases(
    t: &ViewTables,
    rows: &[usize],
    bases: &[BaseSpec],
    hp: &HyperParams,
    seed: u64,
    fold: u64,
) -> Result<Vec<(View, TrainedModel)>> {
    let sub = t.select_rows(rows);
    bases
        .par_iter()
        .map(|b| {
            let table = sub.get(b.view);
            let m = classifiers::fit(
                b.kind,
                &table.values,
                &table.labels(),
                &table.schema,
                hp,
                stacking_seed(seed, fold, b.view.index() as u64),
            )?;
            Ok((b.view, m))
        })
        .collect()
}

fn base_probs(bases: &[(View, TrainedModel)], t: &ViewTables) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((t.n_rows(), META_DIM));
    for (view, m) in bases {
        let table = t.get(*view);
        let p = m.predict_proba_matrix(&table.values, &table.schema)?;
        for (i, q) in p.iter().enumerate() {
            out[[i, 2 * view.index()]] = q.p[0];
            out[[i, 2 * view.index() + 1]] = q.p[1];
        }
    }
    Ok(out)
}

/// Fits the ensemble on precomputed view tables.
pub fn fit_ensemble_on_views(t: &ViewTables, cfg: &EnsembleConfig, seed: u64) -> Result<TrainedEnsemble> {
    cfg.validate()?;
    let bases = cfg.ordered_bases();
    let subject_ids = t.subject_ids();
    let folds = match grouped_folds(subject_ids, t.genders(), cfg.stacking_folds, seed) {
        Ok(f) => f,
        Err(FpcgError::InsufficientSubjects(why)) => {
            log::warn!("stacking disabled ({why}); averaging base probabilities");
            let all: Vec<usize> = (0..t.n_rows()).collect();
            let bases = fit_bases(t, &all, &bases, &cfg.hyper, seed, 0)?;
            return Ok(TrainedEnsemble {
                config: cfg.clone(),
                bases,
                meta: None,
                folds: Vec::new(),
                meta_inputs: Array2::zeros((0, META_DIM)),
            });
        }
        Err(e) => return Err(e),
    };
    let fold_of: BTreeMap<&str, usize> = folds.iter().enumerate().flat_map(|(k, f)| f.iter().map(move |s| (s.as_str(), k))).collect();

    let bookkeeping: Vec<StackingFold> = folds
        .iter()
        .enumerate()
        .map(|(k, subjects)| {
            let (held, train): (Vec<usize>, Vec<usize>) = (0..t.n_rows()).partition(|&i| fold_of[subject_ids[i].as_str()] == k);
            StackingFold { held_out_subjects: subjects.clone(), held_out_rows: held, train_rows: train }
        })
        .collect();

    let fold_probs = bookkeeping
        .par_iter()
        .enumerate()
        .map(|(k, f)| {
            // no subject of the held-out fold may appear among the training rows
            assert!(f.train_rows.iter().all(|&i| !f.held_out_subjects.contains(&subject_ids[i])), "stacking fold {k} leaks a subject");
            let models = fit_bases(t, &f.train_rows, &bases, &cfg.hyper, seed, k as u64 + 1)?;
            base_probs(&models, &t.select_rows(&f.held_out_rows))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut meta_inputs = Array2::from_elem((t.n_rows(), META_DIM), f64::NAN);
    let mut filled = vec![0usize; t.n_rows()];
    for (f, p) in bookkeeping.iter().zip(&fold_probs) {
        for (r, &i) in f.held_out_rows.iter().enumerate() {
            meta_inputs.row_mut(i).assign(&p.row(r));
            filled[i] += 1;
        }
    }
    assert!(filled.iter().all(|&c| c == 1), "every row must receive exactly one out-of-fold prediction");

    let labels: Vec<usize> = t.genders().iter().map(|g| g.index()).collect();
    let meta_hp = HyperParams { gbt: cfg.meta.clone(), ..cfg.hyper.clone() };
    let meta = classifiers::fit(ModelKind::Gbt, &meta_inputs, &labels, &meta_schema(), &meta_hp, stacking_seed(seed, 0, 99))?;
    let all: Vec<usize> = (0..t.n_rows()).collect();
    let final_bases = fit_bases(t, &all, &bases, &cfg.hyper, seed, 0)?;
    Ok(TrainedEnsemble { config: cfg.clone(), bases: final_bases, meta: Some(meta), folds: bookkeeping, meta_inputs })
}

pub fn fit_ensemble(data: &LabeledDataset<Waveform>, cfg: &EnsembleConfig, seed: u64) -> Result<TrainedEnsemble> {
    cfg.validate()?;
    let t = build_view_tables(data, &cfg.features)?;
    fit_ensemble_on_views(&t, cfg, seed)
}

impl TrainedEnsemble {
    /// The 10-dimensional meta input of one segment.
    pub fn meta_input(&self, views: &ViewSet) -> Result<Vec<f64>> {
        let mut x = vec![0.0; META_DIM];
        for (view, m) in &self.bases {
            let p = m.predict_proba(views.get(*view))?;
            x[2 * view.index()] = p.p[0];
            x[2 * view.index() + 1] = p.p[1];
        }
        Ok(x)
    }

    pub fn predict_views(&self, views: &ViewSet) -> Result<(Gender, ClassProbabilities)> {
        let x = self.meta_input(views)?;
        let p = match &self.meta {
            Some(m) => m.predict_proba(&FeatureVector { values: x, schema: meta_schema() })?,
            None => soft_vote(&x),
        };
        Ok((p.label(), p))
    }

    pub fn predict_tables(&self, t: &ViewTables) -> Result<Vec<ClassProbabilities>> {
        let x = base_probs(&self.bases, t)?;
        match &self.meta {
            Some(m) => m.predict_proba_matrix(&x, &meta_schema()),
            None => Ok(x.rows().into_iter().map(|r| soft_vote(r.as_slice().expect("contiguous row"))).collect()),
        }
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new();
        c.put_text("kind", "ensemble");
        c.put_json("config", &self.config)?;
        c.put_json("folds", &self.folds)?;
        c.put_matrix("meta_inputs", &self.meta_inputs);
        for (view, m) in &self.bases {
            c.nest(&format!("base.{view}"), m.to_container()?);
        }
        if let Some(m) = &self.meta {
            c.nest("meta", m.to_container()?);
        }
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<TrainedEnsemble> {
        if c.text("kind")? != "ensemble" {
            return Err(FpcgError::Container("not an ensemble bundle".into()));
        }
        let config: EnsembleConfig = c.json("config")?;
        let mut bases = Vec::with_capacity(5);
        for b in config.ordered_bases() {
            bases.push((b.view, TrainedModel::from_container(&c.sub(&format!("base.{}", b.view)))?));
        }
        Ok(TrainedEnsemble {
            bases,
            meta: if c.has_sub("meta") { Some(TrainedModel::from_container(&c.sub("meta"))?) } else { None },
            folds: c.json("folds")?,
            meta_inputs: c.matrix("meta_inputs")?,
            config,
        })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<TrainedEnsemble> {
        TrainedEnsemble::from_container(&Container::load(path)?)
    }
}

fn soft_vote(meta_input: &[f64]) -> ClassProbabilities {
    let female: f64 = meta_input.iter().skip(1).step_by(2).sum();
    ClassProbabilities::from_female(female / View::ALL.len() as f64)
}

/// Builds the views of a denoised segment and runs the stack.
pub fn predict_ensemble(e: &TrainedEnsemble, s_d: &Waveform) -> Result<(Gender, ClassProbabilities)> {
    e.predict_views(&build_views(s_d, &e.config.features)?)
}
