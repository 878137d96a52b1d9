//! Coiflet discrete wavelet transform (Mallat cascade).

use serde::{Deserialize, Serialize};

use crate::error::{FpcgError, Result};

// Orthonormal coiflet scaling filters. Values solve the coiflet conditions
// (orthonormality, 2K vanishing wavelet moments, 2K-1 vanishing scaling
// moments about the filter centre) to double precision.
const COIF1: [f64; 6] =
    [-0.015655728135791993, -0.07273261951252645, 0.3848648468648577, 0.8525720202116004, 0.33789766245748176, -0.07273261951252645];

const COIF2: [f64; 12] = [
    -0.000720549445520347,
    -0.001823208870911032,
    0.005611434819368834,
    0.02368017194684777,
    -0.059434418646431085,
    -0.07648859907828076,
    0.41700518442323903,
    0.8127236354494135,
    0.38611006682276283,
    -0.0673725547237256,
    -0.04146493678687178,
    0.01638733646320364,
];

const COIF3: [f64; 18] = [
    -3.4599773197272774e-05,
    -7.0983302506379e-05,
    0.0004662169598204029,
    0.0011175187708306303,
    -0.002574517688136797,
    -0.009007976136730624,
    0.015880544863669452,
    0.03455502757329773,
    -0.08230192710629981,
    -0.07179982161915484,
    0.42848347637737,
    0.7937772226260872,
    0.4051769024091182,
    -0.06112339000297254,
    -0.06577191128146936,
    0.023452696142077165,
    0.0077825964256727454,
    -0.0037935128643808015,
];

const COIF4: [f64; 24] = [
    -1.7849909144933466e-06,
    -3.2596479400307506e-06,
    3.1229861599195265e-05,
    6.233885431278718e-05,
    -0.0002599743371222568,
    -0.0005890202246332164,
    0.0012665610789256603,
    0.003751434697146086,
    -0.0056582838001308835,
    -0.015211728187697211,
    0.025082253337949608,
    0.03933442260558915,
    -0.09622042453595264,
    -0.06662747236681715,
    0.43438603311435653,
    0.7822389344242826,
    0.41530842700068227,
    -0.05607731960356926,
    -0.08126671024919373,
    0.026682304669604834,
    0.016068947131575025,
    -0.00734616793626805,
    -0.0016294924252267858,
    0.000892313902537003,
];

const COIF5: [f64; 30] = [
    -9.604010112767892e-08,
    -1.6237995172048335e-07,
    2.0612203985788783e-06,
    3.7007277113394796e-06,
    -2.1270221672515614e-05,
    -4.12198619242655e-05,
    0.00014035632812373243,
    0.00030185794166824473,
    -0.0006375589261258812,
    -0.0016616273039298788,
    0.0024315754425382886,
    0.006761520220620417,
    -0.009159507338676163,
    -0.019758391600965465,
    0.03267479946705735,
    0.041287530472117834,
    -0.10556315130733723,
    -0.06203775157498195,
    0.4379823066591633,
    0.7742936228603274,
    0.42157126673075435,
    -0.05204667025355476,
    -0.09192158806008609,
    0.028169744270532353,
    0.023408322118927783,
    -0.010131584846900275,
    -0.004159312627578639,
    0.0021782943778456947,
    0.0003585777411617577,
    -0.000212081862067494,
];

/// How the signal is extended past its ends at each analysis step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// Circular extension; the transform is orthogonal (energy preserving)
    /// for even lengths. Odd lengths are padded by repeating the last sample.
    #[default]
    Periodization,
    /// Half-sample symmetric extension; yields `floor((n + L - 1) / 2)`
    /// coefficients per band and reconstructs exactly.
    Symmetric,
}

/// Multi-level decomposition. `details[0]` is the coarsest band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveletDecomposition {
    pub approximation: Vec<f64>,
    pub details: Vec<Vec<f64>>,
    pub wavelet_name: String,
    pub levels: usize,
    pub boundary: Boundary,
    /// Input length at each analysis step, finest first (`lengths[0]` is the signal length).
    pub lengths: Vec<usize>,
}

/// Scaling (low-pass) filter of a supported coiflet.
pub fn coiflet_filter(name: &str) -> Result<&'static [f64]> {
    match name.to_ascii_lowercase().as_str() {
        "coif1" => Ok(&COIF1),
        "coif2" => Ok(&COIF2),
        "coif3" => Ok(&COIF3),
        "coif4" => Ok(&COIF4),
        "coif5" => Ok(&COIF5),
        _ => Err(FpcgError::UnknownWavelet(name.to_string())),
    }
}

/// Alternating flip of the scaling filter.
fn wavelet_filter(h: &[f64]) -> Vec<f64> {
    let l = h.len();
    (0..l).map(|j| if j % 2 == 0 { h[l - 1 - j] } else { -h[l - 1 - j] }).collect()
}

/// Deepest level at which the filter still fits the signal.
pub fn max_level(len: usize, filter_len: usize) -> usize {
    if filter_len < 2 || len < filter_len - 1 {
        return 0;
    }
    ((len as f64 / (filter_len - 1) as f64).log2().floor()) as usize
}

fn symmetric_index(m: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let r = m.rem_euclid(period) as usize;
    if r < n {
        r
    } else {
        2 * n - 1 - r
    }
}

fn analyze(x: &[f64], h: &[f64], g: &[f64], boundary: Boundary) -> (Vec<f64>, Vec<f64>) {
    let l = h.len();
    match boundary {
        Boundary::Periodization => {
            let mut xs = x.to_vec();
            if xs.len() % 2 == 1 {
                xs.push(*xs.last().unwrap());
            }
            let n = xs.len();
            let half = n / 2;
            let mut a = vec![0.0; half];
            let mut d = vec![0.0; half];
            for k in 0..half {
                for j in 0..l {
                    let v = xs[(2 * k + j) % n];
                    a[k] += h[j] * v;
                    d[k] += g[j] * v;
                }
            }
            (a, d)
        }
        Boundary::Symmetric => {
            let n = x.len();
            let k_min = -((l / 2) as isize - 1);
            let k_max = ((n - 1) / 2) as isize;
            let count = (k_max - k_min + 1) as usize;
            let mut a = vec![0.0; count];
            let mut d = vec![0.0; count];
            for (slot, k) in (k_min..=k_max).enumerate() {
                for j in 0..l {
                    let v = x[symmetric_index(2 * k + j as isize, n)];
                    a[slot] += h[j] * v;
                    d[slot] += g[j] * v;
                }
            }
            (a, d)
        }
    }
}

fn band_len(n: usize, filter_len: usize, boundary: Boundary) -> usize {
    match boundary {
        Boundary::Periodization => n.div_ceil(2),
        Boundary::Symmetric => (n + filter_len - 1) / 2,
    }
}

fn synthesize(a: &[f64], d: &[f64], h: &[f64], g: &[f64], boundary: Boundary, n: usize) -> Vec<f64> {
    let l = h.len();
    match boundary {
        Boundary::Periodization => {
            let np = 2 * a.len();
            let mut x = vec![0.0; np];
            for k in 0..a.len() {
                for j in 0..l {
                    x[(2 * k + j) % np] += a[k] * h[j] + d[k] * g[j];
                }
            }
            x.truncate(n);
            x
        }
        Boundary::Symmetric => {
            let k_min = -((l / 2) as isize - 1);
            let mut x = vec![0.0; n];
            for (slot, (&ak, &dk)) in a.iter().zip(d).enumerate() {
                let k = k_min + slot as isize;
                for j in 0..l {
                    let idx = 2 * k + j as isize;
                    if idx >= 0 && (idx as usize) < n {
                        x[idx as usize] += ak * h[j] + dk * g[j];
                    }
                }
            }
            x
        }
    }
}

/// Decomposes `x` into `levels` detail bands plus an approximation.
pub fn dwt(x: &[f64], wavelet: &str, levels: usize) -> Result<WaveletDecomposition> {
    dwt_with_boundary(x, wavelet, levels, Boundary::default())
}

pub fn dwt_with_boundary(x: &[f64], wavelet: &str, levels: usize, boundary: Boundary) -> Result<WaveletDecomposition> {
    let h = coiflet_filter(wavelet)?;
    let g = wavelet_filter(h);
    let max = max_level(x.len(), h.len());
    if levels == 0 || levels > max {
        return Err(FpcgError::TooManyLevels { requested: levels, max, len: x.len() });
    }
    let mut approx = x.to_vec();
    let mut details = Vec::with_capacity(levels);
    let mut lengths = Vec::with_capacity(levels);
    for _ in 0..levels {
        lengths.push(approx.len());
        let (a, d) = analyze(&approx, h, &g, boundary);
        details.push(d);
        approx = a;
    }
    details.reverse();
    Ok(WaveletDecomposition { approximation: approx, details, wavelet_name: wavelet.to_ascii_lowercase(), levels, boundary, lengths })
}

/// Inverse cascade.
pub fn idwt(dec: &WaveletDecomposition) -> Result<Vec<f64>> {
    let h = coiflet_filter(&dec.wavelet_name)?;
    let g = wavelet_filter(h);
    if dec.levels == 0 || dec.details.len() != dec.levels || dec.lengths.len() != dec.levels {
        return Err(FpcgError::InconsistentCoefficients(format!(
            "{} levels, {} detail bands, {} lengths",
            dec.levels,
            dec.details.len(),
            dec.lengths.len()
        )));
    }
    let mut approx = dec.approximation.clone();
    for step in (0..dec.levels).rev() {
        let n = dec.lengths[step];
        let detail = &dec.details[dec.levels - 1 - step];
        let expected = band_len(n, h.len(), dec.boundary);
        if approx.len() != expected || detail.len() != expected {
            return Err(FpcgError::InconsistentCoefficients(format!(
                "level {}: expected {expected} coefficients, found {} / {}",
                step + 1,
                approx.len(),
                detail.len()
            )));
        }
        approx = synthesize(&approx, detail, h, &g, dec.boundary, n);
    }
    Ok(approx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    const NAMES: [&str; 5] = ["coif1", "coif2", "coif3", "coif4", "coif5"];

    #[test]
    fn filters_are_orthonormal_with_vanishing_moments() {
        for (k, name) in NAMES.iter().enumerate() {
            let order = k + 1;
            let h = coiflet_filter(name).unwrap();
            assert_eq!(h.len(), 6 * order);
            assert!((h.iter().sum::<f64>() - 2f64.sqrt()).abs() < 1e-14);
            for m in 0..h.len() / 2 {
                let dot: f64 = (0..h.len() - 2 * m).map(|i| h[i] * h[i + 2 * m]).sum();
                let want = if m == 0 { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-14, "{name} lag {m}: {dot}");
            }
            let g = wavelet_filter(h);
            let centre = h.len() as f64 / 2.0;
            for p in 0..2 * order {
                let moment: f64 = g.iter().enumerate().map(|(i, v)| v * ((i as f64 - centre) / centre).powi(p as i32)).sum();
                assert!(moment.abs() < 1e-12, "{name} moment {p}: {moment}");
            }
        }
    }

    #[test]
    fn unknown_wavelet_and_depth() {
        assert!(matches!(dwt(&[0.0; 64], "db4", 1), Err(FpcgError::UnknownWavelet(_))));
        assert!(matches!(dwt(&[0.0; 64], "coif1", 4), Err(FpcgError::TooManyLevels { max: 3, .. })));
        assert!(matches!(dwt(&[0.0; 64], "coif1", 0), Err(FpcgError::TooManyLevels { .. })));
    }

    #[test]
    fn constant_has_no_detail() {
        for boundary in [Boundary::Periodization, Boundary::Symmetric] {
            let d = dwt_with_boundary(&[3.0; 256], "coif1", 3, boundary).unwrap();
            for band in &d.details {
                assert!(band.iter().all(|v| v.abs() < 1e-12), "{boundary:?}");
            }
            assert!(d.approximation.iter().all(|v| v.abs() > 1.0));
        }
    }

    #[test]
    fn random_roundtrip_all_coiflets() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for name in NAMES {
            for boundary in [Boundary::Periodization, Boundary::Symmetric] {
                for len in [512usize, 777, 1000] {
                    let x: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let levels = max_level(len, coiflet_filter(name).unwrap().len()).min(3);
                    let d = dwt_with_boundary(&x, name, levels, boundary).unwrap();
                    let back = idwt(&d).unwrap();
                    assert_eq!(back.len(), len);
                    let err = x.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                    assert!(err < 1e-10, "{name} {boundary:?} {len}: {err}");
                }
            }
        }
    }

    #[test]
    fn periodized_transform_preserves_energy() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let x: Vec<f64> = (0..512).map(|_| rng.random_range(-1.0..1.0)).collect();
        let e: f64 = x.iter().map(|v| v * v).sum();
        let d = dwt(&x, "coif1", 3).unwrap();
        let ec: f64 = d.approximation.iter().chain(d.details.iter().flatten()).map(|v| v * v).sum();
        assert!((e - ec).abs() / e < 1e-12);
    }

    #[test]
    fn zero_and_scaled_coefficients() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let x: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut d = dwt_with_boundary(&x, "coif2", 2, Boundary::Symmetric).unwrap();
        let mut zero = d.clone();
        zero.approximation.iter_mut().for_each(|v| *v = 0.0);
        zero.details.iter_mut().flatten().for_each(|v| *v = 0.0);
        assert!(idwt(&zero).unwrap().iter().all(|&v| v == 0.0));

        d.approximation.iter_mut().for_each(|v| *v *= -2.0);
        d.details.iter_mut().flatten().for_each(|v| *v *= -2.0);
        for (a, b) in x.iter().zip(idwt(&d).unwrap()) {
            assert!((-2.0 * a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn inconsistent_coefficients_rejected() {
        let mut d = dwt(&[1.0; 128], "coif1", 2).unwrap();
        d.details[0].pop();
        assert!(matches!(idwt(&d), Err(FpcgError::InconsistentCoefficients(_))));
        let mut d = dwt(&[1.0; 128], "coif1", 2).unwrap();
        d.levels = 3;
        assert!(matches!(idwt(&d), Err(FpcgError::InconsistentCoefficients(_))));
    }
}
