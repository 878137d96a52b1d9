//! Spectral gating, the denoising autoencoder, deep-clustering separation
//! and the band-stop fusion that produces the denoised segment.

mod bandstop;
mod dae;
mod dc;
mod gate;
pub mod nn;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use bandstop::{bandstop_by_noise_profile, percentile, stop_bins, BandstopConfig};
pub use dae::{denoise_dae, train_dae, DaeModel, DaeTrainConfig};
pub use dc::{
    dc_loss, dc_loss_grad, dc_objective, embed, separate, train_separator, two_means, DcModel, DcParams, DcTrainConfig, SeparationResult,
    HEARTBEAT_BAND_HZ,
};
pub use gate::{noise_floor, spectral_gate, GateConfig};

use crate::container::Container;
use crate::error::{FpcgError, Result};
use crate::signal_io::Waveform;

/// `10 log10(|clean|^2 / |clean - estimate|^2)` in dB.
pub fn snr_db(clean: &[f64], estimate: &[f64]) -> f64 {
    let s: f64 = clean.iter().map(|v| v * v).sum();
    let e: f64 = clean.iter().zip(estimate).map(|(a, b)| (a - b).powi(2)).sum();
    10.0 * (s / e).log10()
}

/// Sample-wise sum of the separator's noise and the gate's noise estimate.
pub fn fuse_noise(s_n: &Waveform, gated_noise: &Waveform) -> Result<Waveform> {
    if s_n.len() != gated_noise.len() {
        return Err(FpcgError::LengthMismatch { left: s_n.len(), right: gated_noise.len() });
    }
    if s_n.sample_rate_hz != gated_noise.sample_rate_hz {
        return Err(FpcgError::ShapeMismatch("noise estimates have different sample rates".into()));
    }
    Ok(Waveform { samples: s_n.samples.iter().zip(&gated_noise.samples).map(|(a, b)| a + b).collect(), sample_rate_hz: s_n.sample_rate_hz })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum DenoiseMethod {
    Scbss,
    Dae,
}

impl DenoiseMethod {
    pub const ALL: [DenoiseMethod; 2] = [DenoiseMethod::Scbss, DenoiseMethod::Dae];
}

impl fmt::Display for DenoiseMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DenoiseMethod::Scbss => "SCBSS",
            DenoiseMethod::Dae => "DAE",
        })
    }
}

impl FromStr for DenoiseMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "SCBSS" => Ok(DenoiseMethod::Scbss),
            "DAE" => Ok(DenoiseMethod::Dae),
            _ => Err(format!("unknown denoise method {s:?} (expected one of: SCBSS, DAE)")),
        }
    }
}

/// Settings of the separation path that are not learned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScbssConfig {
    pub gate: GateConfig,
    pub bandstop: BandstopConfig,
}

impl Default for ScbssConfig {
    fn default() -> Self {
        // inside the pipeline the stop set is chosen by dominance alone: a
        // percentile cap would leave broadband noise almost untouched
        Self { gate: GateConfig::default(), bandstop: BandstopConfig { percentile: 0.0, ..BandstopConfig::default() } }
    }
}

/// Trained denoisers plus the fixed settings of the separation path.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelSet {
    pub separator: Option<DcModel>,
    pub dae: Option<DaeModel>,
    pub scbss: ScbssConfig,
}

impl ModelSet {
    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new();
        c.put_text("kind", "denoisers");
        c.put_json("scbss", &self.scbss)?;
        if let Some(s) = &self.separator {
            c.nest("separator", s.to_container()?);
        }
        if let Some(d) = &self.dae {
            c.nest("dae", d.to_container()?);
        }
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<ModelSet> {
        if c.text("kind")? != "denoisers" {
            return Err(FpcgError::Container("not a denoiser bundle".into()));
        }
        let sep = c.sub("separator");
        let dae = c.sub("dae");
        Ok(ModelSet {
            separator: if sep.is_empty() { None } else { Some(DcModel::from_container(&sep)?) },
            dae: if dae.is_empty() { None } else { Some(DaeModel::from_container(&dae)?) },
            scbss: c.json("scbss")?,
        })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<ModelSet> {
        ModelSet::from_container(&Container::load(path)?)
    }
}

/// Every intermediate signal of the separation path.
#[derive(Debug, Clone, PartialEq)]
pub struct ScbssTrace {
    pub separation: SeparationResult,
    pub gated_noise: Waveform,
    pub noise_profile: Waveform,
    pub denoised: Waveform,
}

pub fn scbss_trace(s_s: &Waveform, separator: &DcModel, cfg: &ScbssConfig) -> Result<ScbssTrace> {
    let separation = separate(separator, s_s)?;
    let (_, gated_noise) = spectral_gate(s_s, &cfg.gate)?;
    let noise_profile = fuse_noise(&separation.noise, &gated_noise)?;
    let denoised = bandstop_by_noise_profile(s_s, &noise_profile, &cfg.bandstop)?;
    Ok(ScbssTrace { separation, gated_noise, noise_profile, denoised })
}

/// Denoises one segment with the chosen method.
pub fn denoise_pipeline(s_s: &Waveform, method: DenoiseMethod, models: &ModelSet) -> Result<Waveform> {
    match method {
        DenoiseMethod::Scbss => {
            let sep =
                models.separator.as_ref().ok_or_else(|| FpcgError::InvalidConfig("SCBSS denoising needs a trained separator".into()))?;
            Ok(scbss_trace(s_s, sep, &models.scbss)?.denoised)
        }
        DenoiseMethod::Dae => {
            let dae = models.dae.as_ref().ok_or_else(|| FpcgError::InvalidConfig("DAE denoising needs a trained DAE".into()))?;
            denoise_dae(dae, s_s)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fuse_cases() {
        let x = Waveform::new(vec![0.5, -0.25, 1.0], 8000).unwrap();
        let z = Waveform::zeros(3, 8000);
        assert_eq!(fuse_noise(&z, &x).unwrap(), x);
        let neg = Waveform::new(x.samples.iter().map(|v| -v).collect(), 8000).unwrap();
        assert!(fuse_noise(&x, &neg).unwrap().samples.iter().all(|&v| v == 0.0));
        assert!(matches!(fuse_noise(&x, &Waveform::zeros(2, 8000)), Err(FpcgError::LengthMismatch { .. })));
    }

    #[test]
    fn method_names() {
        assert_eq!("scbss".parse::<DenoiseMethod>().unwrap(), DenoiseMethod::Scbss);
        assert_eq!(DenoiseMethod::Dae.to_string(), "DAE");
        let err = "wiener".parse::<DenoiseMethod>().unwrap_err();
        assert!(err.contains("SCBSS, DAE"));
    }

    #[test]
    fn missing_models_reported() {
        let w = Waveform::zeros(100, 8000);
        assert!(denoise_pipeline(&w, DenoiseMethod::Scbss, &ModelSet::default()).is_err());
        assert!(denoise_pipeline(&w, DenoiseMethod::Dae, &ModelSet::default()).is_err());
    }
}
