use fpcg_core::denoise::{
    denoise_dae, embed, separate, snr_db, spectral_gate, train_dae, train_separator, two_means, DaeTrainConfig, DcTrainConfig, GateConfig,
};
use fpcg_core::signal_io::Waveform;
use fpcg_core::synth::{gen_artifact, gen_beats, mix_at_snr, ArtifactKind, BeatSpec};
use fpcg_core::transforms::fft::{dft_exact, ifft_in_place};
use fpcg_core::transforms::stft;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SR: u32 = 8000;

fn beats(seed: u64, secs: f64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = BeatSpec {
        fhr_bpm: rng.random_range(120.0..160.0),
        s1_freq_hz: rng.random_range(45.0..75.0),
        s2_freq_hz: rng.random_range(80.0..110.0),
        amplitude: rng.random_range(0.4..0.9),
        ..BeatSpec::default()
    };
    gen_beats(&spec, secs, SR, seed).unwrap()
}

fn noisy(clean: &Waveform, seed: u64, snr: f64) -> Waveform {
    let hiss = gen_artifact(ArtifactKind::Hiss, clean.duration_s(), SR, seed).unwrap();
    Waveform::new(mix_at_snr(&clean.samples, &hiss.samples, snr), SR).unwrap()
}

/// Keeps only the spectral content inside `[lo, hi)` Hz.
fn band_limit(x: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let mut s = dft_exact(x);
    let n = s.len();
    for (k, c) in s.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * SR as f64 / n as f64;
        if f < lo || f >= hi {
            *c = Complex64::new(0.0, 0.0);
        }
    }
    ifft_in_place(&mut s);
    s.into_iter().map(|c| c.re).collect()
}

fn high_band_noise(seed: u64, secs: f64) -> Waveform {
    let w = gen_artifact(ArtifactKind::Hiss, secs, SR, seed).unwrap();
    Waveform::new(band_limit(&w.samples, 2200.0, 3800.0), SR).unwrap()
}

fn low_band_source(seed: u64, secs: f64) -> Waveform {
    let b = beats(seed, secs);
    let hum = gen_artifact(ArtifactKind::Friction, secs, SR, seed + 7).unwrap();
    let x: Vec<f64> = b.samples.iter().zip(&hum.samples).map(|(a, h)| a + 0.1 * h).collect();
    Waveform::new(band_limit(&x, 0.0, 200.0), SR).unwrap()
}

#[test]
fn gate_improves_snr_on_beats() {
    let clean = beats(1, 4.0);
    let x = noisy(&clean, 2, 0.0);
    let (d, _) = spectral_gate(&x, &GateConfig::default()).unwrap();
    let gain = snr_db(&clean.samples, &d.samples) - snr_db(&clean.samples, &x.samples);
    println!("gate gain on beats: {gain:.2} dB");
    assert!(gain >= 6.0);
}

#[test]
fn dae_improves_held_out_snr() {
    let pairs: Vec<(Waveform, Waveform)> = (0..12)
        .map(|i| {
            let c = beats(100 + i, 2.0);
            (noisy(&c, 200 + i, 0.0), c)
        })
        .collect();
    let cfg = DaeTrainConfig { epochs: 60, seed: 5, ..DaeTrainConfig::default() };
    let t = std::time::Instant::now();
    let model = train_dae(&pairs, &cfg).unwrap();
    println!("dae train {:?}, loss {:.4} -> {:.4}", t.elapsed(), model.loss_trace[0], model.final_loss());
    let mut gains = Vec::new();
    for i in 0..4 {
        let c = beats(900 + i, 2.0);
        let x = noisy(&c, 950 + i, 0.0);
        let d = denoise_dae(&model, &x).unwrap();
        assert_eq!(d.len(), x.len());
        gains.push(snr_db(&c.samples, &d.samples) - snr_db(&c.samples, &x.samples));
    }
    println!("dae gains {gains:?}");
    assert!(gains.iter().sum::<f64>() / gains.len() as f64 >= 3.0);
}

#[test]
fn separator_recovers_ideal_mask() {
    let a: Vec<Waveform> = (0..8).map(|i| low_band_source(300 + i, 2.0)).collect();
    let b: Vec<Waveform> = (0..8).map(|i| high_band_noise(400 + i, 2.0)).collect();
    let cfg = DcTrainConfig { epochs: 20, mixtures_per_epoch: 8, seed: 3, ..DcTrainConfig::default() };
    let t = std::time::Instant::now();
    let model = train_separator(&a, &b, &cfg).unwrap();
    println!("separator train {:?}, loss {:?}", t.elapsed(), model.loss_trace);
    for i in 0..3 {
        let sa = low_band_source(700 + i, 2.0);
        let sb = high_band_noise(800 + i, 2.0);
        let mix = Waveform::new(sa.samples.iter().zip(&sb.samples).map(|(x, y)| x + 0.3 * y).collect(), SR).unwrap();
        let ga = stft(&sa, 256, 64).unwrap();
        let gb = stft(&Waveform::new(sb.samples.iter().map(|v| 0.3 * v).collect(), SR).unwrap(), 256, 64).unwrap();
        let res = separate(&model, &mix).unwrap();
        let gm = stft(&mix, 256, 64).unwrap().magnitudes();
        let peak = gm.iter().fold(0.0f64, |x, &y| x.max(y));
        let mut hit = 0usize;
        let mut total = 0usize;
        for ((t, f), &m) in gm.indexed_iter() {
            if m < peak * 1e-2 {
                continue;
            }
            let ideal = if ga.bins[[t, f]].norm() >= gb.bins[[t, f]].norm() { 1.0 } else { 0.0 };
            total += 1;
            hit += usize::from(res.heartbeat_mask[[t, f]] == ideal);
        }
        let acc = hit as f64 / total as f64;
        println!("mask accuracy {acc:.3} degenerate {}", res.degenerate);
        let _ = (embed, two_means);
        assert!(acc >= 0.9);
    }
}
