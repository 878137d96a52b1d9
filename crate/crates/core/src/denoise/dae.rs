use ndarray::{Array1, Array2, Axis};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nn::{mlp_adam, mlp_step, shuffled, Dense, Mlp};
use crate::container::Container;
use crate::error::{FpcgError, Result};
use crate::signal_io::Waveform;
use crate::transforms::{istft, stft, StftConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DaeTrainConfig {
    pub stft: StftConfig,
    /// Frames of context on each side of the centre frame.
    pub context: usize,
    /// Hidden layer widths; the middle one is the bottleneck.
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Offset inside `ln(|X| + log_offset)`.
    pub log_offset: f64,
    pub seed: u64,
}

impl Default for DaeTrainConfig {
    fn default() -> Self {
        Self {
            stft: StftConfig { window_len: 256, hop: 64 },
            context: 2,
            hidden: vec![256, 64, 256],
            epochs: 200,
            learning_rate: 1e-3,
            batch_size: 128,
            log_offset: 1e-3,
            seed: 0,
        }
    }
}

/// Maps a noisy log-magnitude frame (with context) to the clean centre frame,
/// predicted as a non-positive log gain on the noisy centre frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DaeModel {
    pub net: Mlp,
    pub stft: StftConfig,
    pub context: usize,
    pub log_offset: f64,
    pub sample_rate_hz: u32,
    pub in_shift: Array1<f64>,
    pub in_scale: Array1<f64>,
    pub out_shift: Array1<f64>,
    pub out_scale: Array1<f64>,
    /// Mean standardized training loss per epoch.
    pub loss_trace: Vec<f64>,
}

impl DaeModel {
    pub fn final_loss(&self) -> f64 {
        self.loss_trace.last().copied().unwrap_or(f64::NAN)
    }

    pub fn input_dim(&self) -> usize {
        self.in_shift.len()
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new();
        c.put_text("kind", "dae");
        c.put_json("stft", &self.stft)?;
        c.put_scalar("context", self.context as f64);
        c.put_scalar("log_offset", self.log_offset);
        c.put_scalar("sample_rate_hz", self.sample_rate_hz as f64);
        c.put_vec("in_shift", self.in_shift.as_slice().expect("contiguous"));
        c.put_vec("in_scale", self.in_scale.as_slice().expect("contiguous"));
        c.put_vec("out_shift", self.out_shift.as_slice().expect("contiguous"));
        c.put_vec("out_scale", self.out_scale.as_slice().expect("contiguous"));
        c.put_vec("loss_trace", &self.loss_trace);
        put_mlp(&mut c, "net", &self.net);
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<DaeModel> {
        if c.text("kind")? != "dae" {
            return Err(FpcgError::Container("not a DAE model".into()));
        }
        let m = DaeModel {
            net: get_mlp(c, "net")?,
            stft: c.json("stft")?,
            context: c.scalar("context")? as usize,
            log_offset: c.scalar("log_offset")?,
            sample_rate_hz: c.scalar("sample_rate_hz")? as u32,
            in_shift: c.vec("in_shift")?.into(),
            in_scale: c.vec("in_scale")?.into(),
            out_shift: c.vec("out_shift")?.into(),
            out_scale: c.vec("out_scale")?.into(),
            loss_trace: c.vec("loss_trace")?,
        };
        let bins = m.stft.n_bins();
        let sizes = m.net.sizes();
        if sizes[0] != bins * (2 * m.context + 1) || *sizes.last().expect("layers") != bins || m.in_shift.len() != sizes[0] {
            return Err(FpcgError::Container("DAE layer sizes disagree with its STFT config".into()));
        }
        Ok(m)
    }
}

pub(crate) fn put_mlp(c: &mut Container, prefix: &str, net: &Mlp) {
    c.put_vec(format!("{prefix}.sizes"), &net.sizes().iter().map(|&s| s as f64).collect::<Vec<_>>());
    for (i, l) in net.layers.iter().enumerate() {
        c.put_matrix(format!("{prefix}.layer{i}.w"), &l.w);
        c.put_vec(format!("{prefix}.layer{i}.b"), l.b.as_slice().expect("contiguous"));
    }
}

pub(crate) fn get_mlp(c: &Container, prefix: &str) -> Result<Mlp> {
    let sizes: Vec<usize> = c.vec(&format!("{prefix}.sizes"))?.into_iter().map(|s| s as usize).collect();
    if sizes.len() < 2 {
        return Err(FpcgError::Container("network needs at least one layer".into()));
    }
    let mut layers = Vec::new();
    for (i, p) in sizes.windows(2).enumerate() {
        let w = c.matrix(&format!("{prefix}.layer{i}.w"))?;
        let b: Array1<f64> = c.vec(&format!("{prefix}.layer{i}.b"))?.into();
        if w.dim() != (p[0], p[1]) || b.len() != p[1] {
            return Err(FpcgError::Container(format!("layer {i} shape mismatch")));
        }
        layers.push(Dense { w, b });
    }
    Ok(Mlp { layers })
}

/// `1 / rms(w)`: the network sees every segment at unit level.
fn level_gain(w: &Waveform) -> f64 {
    let rms = (w.energy() / w.len().max(1) as f64).sqrt();
    if rms > 1e-12 {
        1.0 / rms
    } else {
        1.0
    }
}

fn log_mag(w: &Waveform, stft_cfg: &StftConfig, offset: f64, gain: f64) -> Result<(Array2<f64>, crate::transforms::TimeFrequencyGrid)> {
    let grid = stft(w, stft_cfg.window_len, stft_cfg.hop)?;
    Ok((grid.bins.mapv(|c| (gain * c.norm() + offset).ln()), grid))
}

/// Stacks each frame with `context` neighbours per side (edges clamped).
fn with_context(l: &Array2<f64>, context: usize) -> Array2<f64> {
    let (t_n, f_n) = l.dim();
    let width = 2 * context + 1;
    Array2::from_shape_fn((t_n, width * f_n), |(t, j)| {
        let off = j / f_n;
        let src = (t + off).saturating_sub(context).min(t_n - 1);
        l[[src, j % f_n]]
    })
}

fn standardizer(x: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
    let mean = x.mean_axis(Axis(0)).expect("rows");
    let std = x.std_axis(Axis(0), 0.0).mapv(|s| s.max(1e-6));
    (mean, std)
}

/// Trains on (noisy, clean) pairs; each pair must be time aligned.
pub fn train_dae(pairs: &[(Waveform, Waveform)], cfg: &DaeTrainConfig) -> Result<DaeModel> {
    if pairs.is_empty() {
        return Err(FpcgError::EmptyTrainingSet);
    }
    cfg.stft.validate()?;
    let sr = pairs[0].0.sample_rate_hz;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (noisy, clean) in pairs {
        if noisy.len() != clean.len() {
            return Err(FpcgError::LengthMismatch { left: noisy.len(), right: clean.len() });
        }
        if noisy.sample_rate_hz != sr || clean.sample_rate_hz != sr {
            return Err(FpcgError::ShapeMismatch("training pairs mix sample rates".into()));
        }
        let gain = level_gain(noisy);
        let (ln, _) = log_mag(noisy, &cfg.stft, cfg.log_offset, gain)?;
        let (lc, _) = log_mag(clean, &cfg.stft, cfg.log_offset, gain)?;
        xs.push(with_context(&ln, cfg.context));
        ys.push(lc - &ln);
    }
    let views: Vec<_> = xs.iter().map(|a| a.view()).collect();
    let x = ndarray::concatenate(Axis(0), &views).map_err(|e| FpcgError::ShapeMismatch(e.to_string()))?;
    let views: Vec<_> = ys.iter().map(|a| a.view()).collect();
    let y = ndarray::concatenate(Axis(0), &views).map_err(|e| FpcgError::ShapeMismatch(e.to_string()))?;

    let (in_shift, in_scale) = standardizer(&x);
    let (out_shift, out_scale) = standardizer(&y);
    let xn = (&x - &in_shift) / &in_scale;
    let yn = (&y - &out_shift) / &out_scale;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sizes = vec![x.ncols()];
    sizes.extend(&cfg.hidden);
    sizes.push(y.ncols());
    let mut net = Mlp::new(&sizes, &mut rng);
    let mut opt = mlp_adam(&net, cfg.learning_rate);
    let batch = cfg.batch_size.max(1);
    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = shuffled(xn.nrows(), &mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let bx = xn.select(Axis(0), chunk);
            let by = yn.select(Axis(0), chunk);
            let (loss, grads) = net.mse_and_grad(&bx, &by);
            if !loss.is_finite() {
                return Err(FpcgError::DivergedLoss { epoch });
            }
            mlp_step(&mut net, &mut opt, &grads);
            total += loss * chunk.len() as f64;
        }
        let epoch_loss = total / xn.nrows() as f64;
        log::debug!("dae epoch {epoch}: loss {epoch_loss:.5}");
        loss_trace.push(epoch_loss);
    }
    if !net.all_finite() {
        return Err(FpcgError::DivergedLoss { epoch: cfg.epochs });
    }
    Ok(DaeModel {
        net,
        stft: cfg.stft,
        context: cfg.context,
        log_offset: cfg.log_offset,
        sample_rate_hz: sr,
        in_shift,
        in_scale,
        out_shift,
        out_scale,
        loss_trace,
    })
}

/// Replaces each frame's magnitude with the model's estimate, keeping the
/// input phase.
pub fn denoise_dae(model: &DaeModel, w: &Waveform) -> Result<Waveform> {
    if w.sample_rate_hz != model.sample_rate_hz {
        return Err(FpcgError::ShapeMismatch(format!("model trained at {} Hz, input is {} Hz", model.sample_rate_hz, w.sample_rate_hz)));
    }
    w.require_non_empty()?;
    let gain = level_gain(w);
    let (l, grid) = log_mag(w, &model.stft, model.log_offset, gain)?;
    let x = with_context(&l, model.context);
    if x.ncols() != model.input_dim() {
        return Err(FpcgError::ShapeMismatch(format!("input has {} features, model expects {}", x.ncols(), model.input_dim())));
    }
    let pred = model.net.predict(&((&x - &model.in_shift) / &model.in_scale)) * &model.out_scale + &model.out_shift;
    let mut bins = grid.bins.clone();
    for ((t, f), c) in bins.indexed_iter_mut() {
        let mag = ((l[[t, f]] + pred[[t, f]].min(0.0)).exp() - model.log_offset).max(0.0) / gain;
        let phase = if c.norm() > 0.0 { *c / c.norm() } else { Complex64::new(1.0, 0.0) };
        *c = phase * mag;
    }
    istft(&grid.with_bins(bins))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn context_stacking_clamps_edges() {
        let l = Array2::from_shape_fn((3, 2), |(t, f)| (10 * t + f) as f64);
        let x = with_context(&l, 1);
        assert_eq!(x.row(0).to_vec(), vec![0.0, 1.0, 0.0, 1.0, 10.0, 11.0]);
        assert_eq!(x.row(2).to_vec(), vec![10.0, 11.0, 20.0, 21.0, 20.0, 21.0]);
    }

    #[test]
    fn errors() {
        assert!(matches!(train_dae(&[], &DaeTrainConfig::default()), Err(FpcgError::EmptyTrainingSet)));
        let a = Waveform::zeros(1000, 8000);
        let b = Waveform::zeros(999, 8000);
        assert!(matches!(train_dae(&[(a, b)], &DaeTrainConfig::default()), Err(FpcgError::LengthMismatch { .. })));
    }
}
