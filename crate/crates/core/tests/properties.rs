use std::collections::BTreeSet;

use fpcg_core::container::Container;
use fpcg_core::denoise::{dc_loss, snr_db};
use fpcg_core::ensemble::grouped_folds;
use fpcg_core::eval::{compute_metrics, holdout_indices, ConfusionMatrix, Protocol};
use fpcg_core::features::{energy, kurtosis, mean, rms, skewness, spectral_entropy, variance, zcr};
use fpcg_core::signal_io::resample;
use fpcg_core::signal_io::{Gender, Waveform};
use fpcg_core::synth::mix_at_snr;
use fpcg_core::transforms::fft::{dft_exact, fft, ifft, padded_len};
use fpcg_core::transforms::{dwt, idwt, istft, stft};
use ndarray::Array2;
use proptest::prelude::*;

fn signal(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-1.0f64..1.0, 2..max_len)
}

/// Signals with clearly non-zero spread.
fn spread_signal() -> impl Strategy<Value = Vec<f64>> {
    signal(120).prop_filter("needs spread", |x| {
        let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        hi - lo > 1e-3
    })
}

fn subjects() -> impl Strategy<Value = (Vec<String>, Vec<Gender>)> {
    // (segments per subject, gender) for 2..16 subjects
    proptest::collection::vec((1usize..5, any::<bool>()), 2..16).prop_map(|subs| {
        let mut ids = Vec::new();
        let mut genders = Vec::new();
        for (s, (n, female)) in subs.into_iter().enumerate() {
            for _ in 0..n {
                ids.push(format!("s{s:02}"));
                genders.push(if female { Gender::Female } else { Gender::Male });
            }
        }
        (ids, genders)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fft_matches_exact_dft_after_padding(x in signal(300)) {
        let mut padded = x.clone();
        padded.resize(padded_len(x.len()), 0.0);
        let a = fft(&x);
        let b = dft_exact(&padded);
        prop_assert_eq!(a.len(), b.len());
        for (p, q) in a.iter().zip(&b) {
            prop_assert!((p - q).norm() <= 1e-9 * (1.0 + q.norm()));
        }
    }

    #[test]
    fn ifft_inverts_fft(x in signal(300)) {
        let back = ifft(&fft(&x));
        for (i, v) in x.iter().enumerate() {
            prop_assert!((back[i].re - v).abs() < 1e-12 && back[i].im.abs() < 1e-12);
        }
    }

    #[test]
    fn stft_roundtrip_is_exact_in_the_interior(x in proptest::collection::vec(-1.0f64..1.0, 1024..3000), wide in any::<bool>()) {
        let (win, hop) = if wide { (512, 128) } else { (256, 64) };
        let y = istft(&stft(&Waveform::new(x.clone(), 8000).unwrap(), win, hop).unwrap()).unwrap();
        prop_assert_eq!(y.len(), x.len());
        for i in win..x.len() - win {
            prop_assert!((x[i] - y.samples[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn dwt_reconstructs_and_keeps_energy(x in (40usize..190).prop_flat_map(|m| proptest::collection::vec(-1.0f64..1.0, m * 8 - m % 3)), order in 1usize..6, levels in 1usize..4) {
        let dec = dwt(&x, &format!("coif{order}"), levels).unwrap();
        let y = idwt(&dec).unwrap();
        prop_assert_eq!(y.len(), x.len());
        for (a, b) in x.iter().zip(&y) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        // orthogonal only while every level sees an even length
        if x.len() % (1 << levels) == 0 {
            let ex: f64 = x.iter().map(|v| v * v).sum();
            let ec: f64 = dec.approximation.iter().chain(dec.details.iter().flatten()).map(|v| v * v).sum();
            prop_assert!((ex - ec).abs() <= 1e-9 * ex.max(1e-12));
        }
    }

    #[test]
    fn location_and_scale_behaviour_of_statistics(x in spread_signal(), shift in -5.0f64..5.0, scale in 0.1f64..10.0) {
        let y: Vec<f64> = x.iter().map(|v| scale * v + shift).collect();
        let tol = 1e-9;
        prop_assert!((mean(&y).unwrap() - (scale * mean(&x).unwrap() + shift)).abs() < tol * (1.0 + shift.abs() + scale));
        prop_assert!((variance(&y).unwrap() - scale * scale * variance(&x).unwrap()).abs() < tol * scale * scale * (1.0 + variance(&x).unwrap()) * 10.0);
        prop_assert!((skewness(&y).unwrap() - skewness(&x).unwrap()).abs() < 1e-7);
        prop_assert!((kurtosis(&y).unwrap() - kurtosis(&x).unwrap()).abs() < 1e-7);
    }

    #[test]
    fn energy_rms_and_entropy_bounds(x in spread_signal()) {
        let n = x.len() as f64;
        let e = energy(&x).unwrap();
        prop_assert!((rms(&x).unwrap().powi(2) - e / n).abs() < 1e-12 * (1.0 + e));
        let h = spectral_entropy(&x).unwrap();
        prop_assert!(h >= 0.0 && h <= ((x.len() / 2 + 1) as f64).ln() + 1e-12);
        // the sample skewness coefficient is bounded by 3
        prop_assert!(skewness(&x).unwrap().abs() <= 3.0 + 1e-12);
    }

    #[test]
    fn zcr_counts_stay_in_range(x in signal(200), frame in 2usize..10) {
        prop_assume!(x.len() > frame);
        let (frames, m) = zcr(&x, frame).unwrap();
        prop_assert_eq!(frames.len(), (x.len() - 1) / frame);
        prop_assert!(frames.iter().all(|&c| c >= 0.0 && c <= frame as f64 && c.fract() == 0.0));
        prop_assert!((m - frames.iter().sum::<f64>() / frames.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn dc_loss_is_non_negative_and_zero_at_the_labels(labels in proptest::collection::vec(any::<bool>(), 1..40)) {
        let y = Array2::from_shape_fn((labels.len(), 2), |(i, c)| f64::from(u8::from(labels[i] == (c == 1))));
        prop_assert_eq!(dc_loss(&y, &y).unwrap(), 0.0);
        let v = y.mapv(|a| 0.5 * a + 0.1);
        prop_assert!(dc_loss(&v, &y).unwrap() > 0.0);
    }

    #[test]
    fn mixing_hits_the_requested_snr(s in spread_signal(), seed in 0u64..1000, snr in -10.0f64..30.0) {
        let noise: Vec<f64> = (0..s.len()).map(|i| (((i as u64 * 2654435761 + seed) % 1000) as f64 / 500.0) - 1.0).collect();
        prop_assume!(noise.iter().any(|v| v.abs() > 1e-3));
        let mixed = mix_at_snr(&s, &noise, snr);
        prop_assert!((snr_db(&s, &mixed) - snr).abs() < 1e-9);
    }

    #[test]
    fn holdout_partitions_rows_by_subject((ids, genders) in subjects(), fraction in 0.05f64..0.95, seed in 0u64..1000) {
        let n_subjects = ids.iter().collect::<BTreeSet<_>>().len();
        prop_assume!(n_subjects >= 2);
        let (train, test) = holdout_indices(&ids, &genders, fraction, seed).unwrap();
        prop_assert_eq!(train.len() + test.len(), ids.len());
        prop_assert!(!train.is_empty() && !test.is_empty());
        let a: BTreeSet<&String> = train.iter().map(|&i| &ids[i]).collect();
        let b: BTreeSet<&String> = test.iter().map(|&i| &ids[i]).collect();
        prop_assert!(a.is_disjoint(&b));
    }

    #[test]
    fn stacking_folds_partition_subjects((ids, genders) in subjects(), k in 2usize..8, seed in 0u64..1000) {
        let folds = match grouped_folds(&ids, &genders, k, seed) {
            Ok(f) => f,
            Err(_) => return Ok(()),
        };
        let all: BTreeSet<&String> = ids.iter().collect();
        let mut seen = BTreeSet::new();
        for f in &folds {
            prop_assert!(!f.is_empty());
            for s in f {
                prop_assert!(seen.insert(s));
            }
        }
        prop_assert_eq!(seen, all);
        // fold sizes differ by at most one subject
        let sizes: Vec<usize> = folds.iter().map(|f| f.len()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn metrics_are_ratios_of_the_confusion_matrix(tp in 0usize..50, fp in 0usize..50, tn in 0usize..50, fn_ in 0usize..50) {
        prop_assume!(tp + fp + tn + fn_ > 0);
        let cm = ConfusionMatrix { tp, fp, tn, fn_, positive: Gender::Male };
        let m = compute_metrics(&cm, Protocol::HoldOut).unwrap();
        prop_assert!((0.0..=1.0).contains(&m.acc));
        for (v, name) in [(m.pr, "pr"), (m.sn, "sn"), (m.sp, "sp")] {
            match v {
                Some(r) => prop_assert!((0.0..=1.0).contains(&r)),
                None => prop_assert!(m.undefined.iter().any(|u| u == name)),
            }
        }
    }

    #[test]
    fn container_roundtrips(values in proptest::collection::vec(-1e6f64..1e6, 0..50), text in "[a-zA-Z0-9 ]{0,30}") {
        let mut c = Container::new();
        c.put_vec("a.values", &values);
        c.put_text("a.note", text.clone());
        let back = Container::from_bytes(&c.to_bytes()).unwrap();
        prop_assert_eq!(back.vec("a.values").unwrap(), values);
        prop_assert_eq!(back.text("a.note").unwrap(), text.as_str());
    }

    #[test]
    fn resampling_scales_length(x in signal(800), target in prop::sample::select(vec![4000i64, 8000, 11025, 16000])) {
        let w = Waveform::new(x.clone(), 8000).unwrap();
        let y = resample(&w, target).unwrap();
        let expect = (x.len() as f64 * target as f64 / 8000.0).round() as usize;
        prop_assert!((y.len() as i64 - expect as i64).abs() <= 1);
        prop_assert_eq!(y.sample_rate_hz as i64, target);
    }
}
