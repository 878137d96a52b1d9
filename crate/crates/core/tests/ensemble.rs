use fpcg_core::classifiers::{self, HyperParams, ModelKind};
use fpcg_core::ensemble::{
    build_view_tables, build_views, fit_ensemble, fit_ensemble_on_views, predict_ensemble, EnsembleConfig, TrainedEnsemble, View,
    ViewTables, META_DIM,
};
use fpcg_core::eval::holdout_indices;
use fpcg_core::features::{FeatureConfig, FeatureTable, FeatureVector};
use fpcg_core::signal_io::Gender;
use fpcg_core::synth::{gen_dataset, ClassDeltaSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const WIDTHS: [usize; 5] = [70, 12, 40, 20, 36];

/// View tables over `subjects` subjects with `segs` rows each; view `v` carries
/// a class shift of `shift[v]` standard deviations on its first three columns.
fn synthetic_views(subjects: usize, segs: usize, shift: [f64; 5], seed: u64) -> ViewTables {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut ids = Vec::new();
    let mut genders = Vec::new();
    for s in 0..subjects {
        for _ in 0..segs {
            ids.push(format!("S{s:03}"));
            genders.push(Gender::from_index(s % 2));
        }
    }
    let tables: Vec<FeatureTable> = View::ALL
        .iter()
        .map(|v| {
            let d = WIDTHS[v.index()];
            let schema: Vec<String> = (0..d).map(|j| format!("{v}.{j:02}")).collect();
            let rows: Vec<FeatureVector> = genders
                .iter()
                .map(|g| {
                    let sign = if *g == Gender::Female { 0.5 } else { -0.5 };
                    let values = (0..d).map(|j| normal.sample(&mut rng) + if j < 3 { sign * shift[v.index()] } else { 0.0 }).collect();
                    FeatureVector { values, schema: schema.clone() }
                })
                .collect();
            FeatureTable::from_rows(&rows, ids.clone(), genders.clone()).unwrap()
        })
        .collect();
    ViewTables { tables: tables.try_into().unwrap() }
}

fn accuracy(probs: &[fpcg_core::classifiers::ClassProbabilities], truth: &[Gender]) -> f64 {
    probs.iter().zip(truth).filter(|(p, t)| p.label() == **t).count() as f64 / truth.len() as f64
}

/// Hold-out accuracy of the ensemble and of each single view with its configured learner.
fn ensemble_vs_views(t: &ViewTables, seed: u64) -> (f64, [f64; 5]) {
    let (train, test) = holdout_indices(t.subject_ids(), t.genders(), 0.3, seed).unwrap();
    let (tr, te) = (t.select_rows(&train), t.select_rows(&test));
    let cfg = EnsembleConfig::default();
    let e = fit_ensemble_on_views(&tr, &cfg, seed).unwrap();
    let ens = accuracy(&e.predict_tables(&te).unwrap(), te.genders());
    let mut single = [0.0; 5];
    for b in &cfg.bases {
        let a = tr.get(b.view);
        let m = classifiers::fit(b.kind, &a.values, &a.labels(), &a.schema, &HyperParams::default(), seed).unwrap();
        let p = m.predict_proba_matrix(&te.get(b.view).values, &a.schema).unwrap();
        single[b.view.index()] = accuracy(&p, te.genders());
    }
    (ens, single)
}

#[test]
fn only_cqt_informative() {
    let t = synthetic_views(40, 6, [0.0, 0.0, 0.0, 0.0, 2.0], 1);
    let (ens, single) = ensemble_vs_views(&t, 1);
    println!("ensemble {ens:.3} views {single:?}");
    let best = single.iter().cloned().fold(0.0, f64::max);
    assert!(ens >= best - 0.03, "{ens} vs best {best}");
}

#[test]
fn all_views_informative() {
    let t = synthetic_views(40, 6, [0.8; 5], 2);
    let (ens, single) = ensemble_vs_views(&t, 2);
    println!("ensemble {ens:.3} views {single:?}");
    let best = single.iter().cloned().fold(0.0, f64::max);
    assert!(ens >= best - 0.02, "{ens} vs best {best}");
}

#[test]
fn stacking_folds_never_share_subjects() {
    let t = synthetic_views(12, 4, [1.0; 5], 3);
    let e = fit_ensemble_on_views(&t, &EnsembleConfig::default(), 3).unwrap();
    assert_eq!(e.meta_inputs.ncols(), META_DIM);
    assert_eq!(e.meta.as_ref().unwrap().schema.len(), META_DIM);
    let mut covered = vec![0; t.n_rows()];
    for f in &e.folds {
        for &i in &f.train_rows {
            assert!(!f.held_out_subjects.contains(&t.subject_ids()[i]));
        }
        for &i in &f.held_out_rows {
            assert!(f.held_out_subjects.contains(&t.subject_ids()[i]));
            covered[i] += 1;
        }
    }
    assert!(covered.iter().all(|&c| c == 1));
}

#[test]
fn bundle_roundtrip_and_determinism() {
    let data = gen_dataset(3, 2, ClassDeltaSpec { fhr_bpm: 20.0, s1_freq_hz: 10.0 }, 4).unwrap();
    let cfg = EnsembleConfig { stacking_folds: 3, ..EnsembleConfig::default() };
    let e = fit_ensemble(&data, &cfg, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ensemble.fpcg");
    e.save(&path).unwrap();
    let back = TrainedEnsemble::load(&path).unwrap();
    let w = &data.samples[0].item;
    let a = predict_ensemble(&e, w).unwrap();
    assert_eq!(a, predict_ensemble(&e, w).unwrap());
    assert_eq!(a, predict_ensemble(&back, w).unwrap());
    assert_eq!(back.bases.iter().map(|b| b.0).collect::<Vec<_>>(), View::ALL.to_vec());
}

#[test]
fn views_have_documented_shapes() {
    let data = gen_dataset(1, 1, ClassDeltaSpec::none(), 5).unwrap();
    let cfg = FeatureConfig::default();
    let v = build_views(&data.samples[0].item, &cfg).unwrap();
    assert_eq!(v.views.len(), 5);
    assert_eq!(v.get(View::Statistical).len(), 70);
    assert_eq!(v.get(View::Chroma).len(), 12);
    assert_eq!(v.get(View::Mel).len(), cfg.mel.n_mels);
    assert_eq!(v.get(View::Mfcc).len(), cfg.mfcc.n_coeffs);
    assert_eq!(v.get(View::Cqt).len(), cfg.cqt.n_bins());
}

#[test]
fn end_to_end_separable_synthetic() {
    let data = gen_dataset(10, 5, ClassDeltaSpec { fhr_bpm: 20.0, s1_freq_hz: 10.0 }, 6).unwrap();
    let t = build_view_tables(&data, &FeatureConfig::default()).unwrap();
    let (train, test) = holdout_indices(t.subject_ids(), t.genders(), 0.3, 6).unwrap();
    let e = fit_ensemble_on_views(&t.select_rows(&train), &EnsembleConfig::default(), 6).unwrap();
    let te = t.select_rows(&test);
    let acc = accuracy(&e.predict_tables(&te).unwrap(), te.genders());
    println!("end-to-end hold-out accuracy {acc:.3} on {} segments", test.len());
    assert!(acc >= 0.9);
    let _ = ModelKind::ALL;
}
