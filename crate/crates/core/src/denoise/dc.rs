use ndarray::{s, Array1, Array2, Axis};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::nn::Adam;
use crate::container::Container;
use crate::error::{FpcgError, Result};
use crate::signal_io::Waveform;
use crate::transforms::{istft, stft, StftConfig, TimeFrequencyGrid};

/// `||V V^T - Y Y^T||_F^2` through the `D x D` Gram identities.
pub fn dc_loss(v: &Array2<f64>, y: &Array2<f64>) -> Result<f64> {
    if v.nrows() != y.nrows() {
        return Err(FpcgError::ShapeMismatch(format!("V has {} rows, Y has {}", v.nrows(), y.nrows())));
    }
    let sq = |m: Array2<f64>| m.iter().map(|x| x * x).sum::<f64>();
    let vv = sq(v.t().dot(v));
    let vy = sq(v.t().dot(y));
    let yy = sq(y.t().dot(y));
    Ok((vv - 2.0 * vy + yy).max(0.0))
}

/// Gradient of [`dc_loss`] with respect to `V`.
pub fn dc_loss_grad(v: &Array2<f64>, y: &Array2<f64>) -> Array2<f64> {
    (v.dot(&v.t().dot(v)) - y.dot(&y.t().dot(v))) * 4.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DcTrainConfig {
    pub stft: StftConfig,
    pub embedding_dim: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub mixtures_per_epoch: usize,
    /// Training mixtures are cropped to this many samples.
    pub mixture_len: usize,
    pub learning_rate: f64,
    /// Bins this far below the loudest bin of a mixture carry no label.
    pub silence_db: f64,
    pub log_offset: f64,
    /// Centroids closer than this mean only one source is present.
    pub min_centroid_distance: f64,
    pub seed: u64,
}

impl Default for DcTrainConfig {
    fn default() -> Self {
        Self {
            stft: StftConfig { window_len: 256, hop: 64 },
            embedding_dim: 20,
            hidden: 32,
            epochs: 40,
            mixtures_per_epoch: 16,
            mixture_len: 16000,
            learning_rate: 5e-3,
            silence_db: 40.0,
            log_offset: 1e-3,
            min_centroid_distance: 0.6,
            seed: 0,
        }
    }
}

/// Separator parameters; also used for their gradients.
///
/// Hidden state `h_t = tanh(x_t W + h_{t-1} U + b)`; the embedding of bin
/// `f` is `P_f h_t + q_f x_{t,f} + c_f`, then unit normalised.
#[derive(Debug, Clone, PartialEq)]
pub struct DcParams {
    /// `(bins, hidden)`
    pub w: Array2<f64>,
    /// `(hidden, hidden)`
    pub u: Array2<f64>,
    pub b: Array1<f64>,
    /// `(bins * dim, hidden)`, row `f * dim + d`.
    pub p: Array2<f64>,
    /// `(bins, dim)`
    pub q: Array2<f64>,
    /// `(bins, dim)`
    pub c: Array2<f64>,
}

impl DcParams {
    fn zeros_like(o: &DcParams) -> DcParams {
        DcParams {
            w: Array2::zeros(o.w.raw_dim()),
            u: Array2::zeros(o.u.raw_dim()),
            b: Array1::zeros(o.b.raw_dim()),
            p: Array2::zeros(o.p.raw_dim()),
            q: Array2::zeros(o.q.raw_dim()),
            c: Array2::zeros(o.c.raw_dim()),
        }
    }

    fn init(bins: usize, hidden: usize, dim: usize, rng: &mut ChaCha8Rng) -> DcParams {
        let mut draw = |shape: (usize, usize), std: f64| {
            let n = Normal::new(0.0, std).expect("positive std");
            Array2::from_shape_fn(shape, |_| n.sample(rng))
        };
        DcParams {
            w: draw((bins, hidden), (1.0 / bins as f64).sqrt()),
            u: draw((hidden, hidden), 0.5 / (hidden as f64).sqrt()),
            b: Array1::zeros(hidden),
            p: draw((bins * dim, hidden), (1.0 / hidden as f64).sqrt()),
            q: draw((bins, dim), 0.1),
            c: draw((bins, dim), 1.0),
        }
    }

    pub fn slices(&self) -> [&[f64]; 6] {
        [
            self.w.as_slice().expect("standard layout"),
            self.u.as_slice().expect("standard layout"),
            self.b.as_slice().expect("standard layout"),
            self.p.as_slice().expect("standard layout"),
            self.q.as_slice().expect("standard layout"),
            self.c.as_slice().expect("standard layout"),
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.w.as_slice_mut().expect("standard layout"),
            self.u.as_slice_mut().expect("standard layout"),
            self.b.as_slice_mut().expect("standard layout"),
            self.p.as_slice_mut().expect("standard layout"),
            self.q.as_slice_mut().expect("standard layout"),
            self.c.as_slice_mut().expect("standard layout"),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DcModel {
    pub params: DcParams,
    pub embedding_dim: usize,
    pub stft: StftConfig,
    pub log_offset: f64,
    pub silence_db: f64,
    pub min_centroid_distance: f64,
    pub sample_rate_hz: u32,
    pub in_shift: Array1<f64>,
    pub in_scale: Array1<f64>,
    /// Mean normalised loss per epoch.
    pub loss_trace: Vec<f64>,
}

/// Forward pass state for one mixture.
struct Forward {
    h: Array2<f64>,
    /// Unnormalised embeddings `(frames, bins * dim)`.
    u: Array2<f64>,
    /// Unit embeddings `(frames * bins, dim)`.
    v: Array2<f64>,
}

fn forward(p: &DcParams, dim: usize, x: &Array2<f64>) -> Forward {
    let (t_n, f_n) = x.dim();
    let hidden = p.b.len();
    let xw = x.dot(&p.w);
    let mut h = Array2::zeros((t_n, hidden));
    let mut prev = Array1::zeros(hidden);
    for t in 0..t_n {
        let a = &xw.row(t) + &prev.dot(&p.u) + &p.b;
        let ht = a.mapv(f64::tanh);
        h.row_mut(t).assign(&ht);
        prev = ht;
    }
    let mut u = h.dot(&p.p.t());
    for t in 0..t_n {
        for f in 0..f_n {
            for d in 0..dim {
                u[[t, f * dim + d]] += p.q[[f, d]] * x[[t, f]] + p.c[[f, d]];
            }
        }
    }
    let mut v = u.clone().into_shape_with_order((t_n * f_n, dim)).expect("contiguous");
    for mut row in v.rows_mut() {
        let r = row.dot(&row).sqrt();
        if r > 1e-12 {
            row /= r;
        }
    }
    Forward { h, u, v }
}

/// Normalised deep-clustering objective `dc_loss / n_active^2` for one
/// mixture and its gradient. `labels[i]` is the dominant source of bin `i`
/// (row-major over `(frame, bin)`), or `None` for silent bins.
pub fn dc_objective(model: &DcModel, x: &Array2<f64>, labels: &[Option<usize>]) -> (f64, DcParams) {
    let p = &model.params;
    let dim = model.embedding_dim;
    let (t_n, f_n) = x.dim();
    let fw = forward(p, dim, x);
    let n_active = labels.iter().filter(|l| l.is_some()).count();
    let mut grads = DcParams::zeros_like(p);
    if n_active == 0 {
        return (0.0, grads);
    }
    let mut vm = fw.v.clone();
    let mut y = Array2::zeros((labels.len(), 2));
    for (i, l) in labels.iter().enumerate() {
        match l {
            Some(k) => y[[i, *k]] = 1.0,
            None => vm.row_mut(i).fill(0.0),
        }
    }
    let norm = (n_active * n_active) as f64;
    let loss = dc_loss(&vm, &y).expect("shapes agree") / norm;
    let mut gv = dc_loss_grad(&vm, &y) / norm;
    for (i, l) in labels.iter().enumerate() {
        if l.is_none() {
            gv.row_mut(i).fill(0.0);
        }
    }
    // through the unit normalisation
    let u_rows = fw.u.view().into_shape_with_order((t_n * f_n, dim)).expect("contiguous");
    for ((mut g, v), u) in gv.rows_mut().into_iter().zip(fw.v.rows()).zip(u_rows.rows()) {
        let r = u.dot(&u).sqrt();
        if r > 1e-12 {
            let proj = v.dot(&g);
            g.zip_mut_with(&v, |gi, &vi| *gi = (*gi - vi * proj) / r);
        }
    }
    let du = gv.into_shape_with_order((t_n, f_n * dim)).expect("contiguous");
    for t in 0..t_n {
        for f in 0..f_n {
            for d in 0..dim {
                let g = du[[t, f * dim + d]];
                grads.q[[f, d]] += g * x[[t, f]];
                grads.c[[f, d]] += g;
            }
        }
    }
    grads.p = du.t().dot(&fw.h).as_standard_layout().into_owned();
    let dh = du.dot(&p.p);
    // backpropagation through time
    let hidden = p.b.len();
    let mut da = Array2::zeros((t_n, hidden));
    let mut carry = Array1::<f64>::zeros(hidden);
    for t in (0..t_n).rev() {
        let ht = fw.h.row(t);
        let a = (&dh.row(t) + &carry) * &ht.mapv(|v| 1.0 - v * v);
        carry = a.dot(&p.u.t());
        da.row_mut(t).assign(&a);
    }
    grads.w = x.t().dot(&da).as_standard_layout().into_owned();
    grads.b = da.sum_axis(Axis(0));
    if t_n > 1 {
        grads.u = fw.h.slice(s![..t_n - 1, ..]).t().dot(&da.slice(s![1.., ..])).as_standard_layout().into_owned();
    }
    (loss, grads)
}

fn log_mag(model_stft: &StftConfig, offset: f64, w: &Waveform) -> Result<(TimeFrequencyGrid, Array2<f64>)> {
    let grid = stft(w, model_stft.window_len, model_stft.hop)?;
    let l = grid.bins.mapv(|c| (c.norm() + offset).ln());
    Ok((grid, l))
}

fn active_bins(mags: &Array2<f64>, silence_db: f64) -> Vec<bool> {
    let peak = mags.iter().fold(0.0f64, |a, &b| a.max(b));
    let thr = peak * 10f64.powf(-silence_db / 20.0);
    mags.iter().map(|&m| peak > 0.0 && m >= thr).collect()
}

fn crop(w: &Waveform, len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if w.len() <= len {
        let mut v = w.samples.clone();
        v.resize(len, 0.0);
        v
    } else {
        let start = rng.random_range(0..=w.len() - len);
        w.samples[start..start + len].to_vec()
    }
}

/// A labelled training mixture: standardised-to-be features, labels.
fn make_mixture(a: &Waveform, b: &Waveform, cfg: &DcTrainConfig, rng: &mut ChaCha8Rng) -> Result<(Array2<f64>, Vec<Option<usize>>)> {
    let sr = a.sample_rate_hz;
    let len = cfg.mixture_len.min(a.len().max(b.len())).max(cfg.stft.window_len);
    let sa = Waveform { samples: crop(a, len, rng), sample_rate_hz: sr };
    let sb = Waveform { samples: crop(b, len, rng), sample_rate_hz: sr };
    let mix = Waveform { samples: sa.samples.iter().zip(&sb.samples).map(|(x, y)| x + y).collect(), sample_rate_hz: sr };
    let ga = stft(&sa, cfg.stft.window_len, cfg.stft.hop)?;
    let gb = stft(&sb, cfg.stft.window_len, cfg.stft.hop)?;
    let (gm, l) = log_mag(&cfg.stft, cfg.log_offset, &mix)?;
    let active = active_bins(&gm.magnitudes(), cfg.silence_db);
    let labels =
        ga.bins.iter().zip(gb.bins.iter()).zip(active).map(|((x, y), on)| on.then_some(if x.norm() >= y.norm() { 0 } else { 1 })).collect();
    Ok((l, labels))
}

/// Trains the embedding network on mixtures of one draw from each source.
pub fn train_separator(source_a: &[Waveform], source_b: &[Waveform], cfg: &DcTrainConfig) -> Result<DcModel> {
    if source_a.is_empty() || source_b.is_empty() {
        return Err(FpcgError::EmptyTrainingSet);
    }
    cfg.stft.validate()?;
    if cfg.embedding_dim < 2 || cfg.hidden == 0 {
        return Err(FpcgError::InvalidConfig("embedding_dim must be >= 2 and hidden >= 1".into()));
    }
    let sr = source_a[0].sample_rate_hz;
    if source_a.iter().chain(source_b).any(|w| w.sample_rate_hz != sr || w.is_empty()) {
        return Err(FpcgError::ShapeMismatch("sources must be non-empty and share one sample rate".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bins = cfg.stft.n_bins();
    let draw = |rng: &mut ChaCha8Rng| -> Result<(Array2<f64>, Vec<Option<usize>>)> {
        let a = &source_a[rng.random_range(0..source_a.len())];
        let b = &source_b[rng.random_range(0..source_b.len())];
        make_mixture(a, b, cfg, rng)
    };

    let mut epochs: Vec<Vec<(Array2<f64>, Vec<Option<usize>>)>> = Vec::with_capacity(cfg.epochs);
    let first: Vec<_> = (0..cfg.mixtures_per_epoch.max(1)).map(|_| draw(&mut rng)).collect::<Result<_>>()?;
    let views: Vec<_> = first.iter().map(|(l, _)| l.view()).collect();
    let all = ndarray::concatenate(Axis(0), &views).map_err(|e| FpcgError::ShapeMismatch(e.to_string()))?;
    let in_shift = all.mean_axis(Axis(0)).expect("rows");
    let in_scale = all.std_axis(Axis(0), 0.0).mapv(|s| s.max(1e-6));
    epochs.push(first);

    let mut model = DcModel {
        params: DcParams::init(bins, cfg.hidden, cfg.embedding_dim, &mut rng),
        embedding_dim: cfg.embedding_dim,
        stft: cfg.stft,
        log_offset: cfg.log_offset,
        silence_db: cfg.silence_db,
        min_centroid_distance: cfg.min_centroid_distance,
        sample_rate_hz: sr,
        in_shift,
        in_scale,
        loss_trace: Vec::with_capacity(cfg.epochs),
    };
    let sizes: Vec<usize> = model.params.slices().iter().map(|s| s.len()).collect();
    let mut opt = Adam::new(cfg.learning_rate, &sizes);
    for epoch in 0..cfg.epochs {
        let batch = if epoch == 0 {
            epochs.pop().expect("first epoch drawn")
        } else {
            (0..cfg.mixtures_per_epoch.max(1)).map(|_| draw(&mut rng)).collect::<Result<_>>()?
        };
        let mut total = 0.0;
        for (l, labels) in &batch {
            let x = (l - &model.in_shift) / &model.in_scale;
            let (loss, grads) = dc_objective(&model, &x, labels);
            if !loss.is_finite() {
                return Err(FpcgError::DivergedLoss { epoch });
            }
            total += loss;
            opt.step(model.params.slices_mut().into_iter(), grads.slices().into_iter());
        }
        let mean = total / batch.len() as f64;
        log::debug!("separator epoch {epoch}: loss {mean:.5}");
        model.loss_trace.push(mean);
    }
    Ok(model)
}

/// Unit embeddings `(frames * bins, dim)` of a waveform, with its grid.
pub fn embed(model: &DcModel, w: &Waveform) -> Result<(TimeFrequencyGrid, Array2<f64>)> {
    if w.sample_rate_hz != model.sample_rate_hz {
        return Err(FpcgError::ShapeMismatch(format!(
            "separator trained at {} Hz, input is {} Hz",
            model.sample_rate_hz, w.sample_rate_hz
        )));
    }
    w.require_non_empty()?;
    let (grid, l) = log_mag(&model.stft, model.log_offset, w)?;
    let x = (&l - &model.in_shift) / &model.in_scale;
    Ok((grid, forward(&model.params, model.embedding_dim, &x).v))
}

/// Two-means clustering of the rows of `points` listed in `fit_rows`.
/// Seeds with `first` and the row farthest from it; returns centroids.
pub fn two_means(points: &Array2<f64>, fit_rows: &[usize], first: usize) -> [Array1<f64>; 2] {
    let dist = |a: ndarray::ArrayView1<f64>, b: &Array1<f64>| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let c0 = points.row(first).to_owned();
    let far = fit_rows
        .iter()
        .copied()
        .max_by(|&a, &b| dist(points.row(a), &c0).total_cmp(&dist(points.row(b), &c0)).then(b.cmp(&a)))
        .unwrap_or(first);
    let mut cents = [c0, points.row(far).to_owned()];
    for _ in 0..100 {
        let mut sums = [Array1::zeros(points.ncols()), Array1::zeros(points.ncols())];
        let mut counts = [0usize; 2];
        for &i in fit_rows {
            let k = usize::from(dist(points.row(i), &cents[1]) < dist(points.row(i), &cents[0]));
            sums[k] += &points.row(i);
            counts[k] += 1;
        }
        let mut moved = false;
        for k in 0..2 {
            if counts[k] > 0 {
                let next = &sums[k] / counts[k] as f64;
                moved |= next != cents[k];
                cents[k] = next;
            }
        }
        if !moved {
            break;
        }
    }
    cents
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparationResult {
    pub heartbeat: Waveform,
    pub noise: Waveform,
    /// Binary heartbeat mask `(frames, bins)`.
    pub heartbeat_mask: Array2<f64>,
    /// Only one source was found; the input is returned as heartbeat.
    pub degenerate: bool,
}

/// Heartbeat energy is expected below this frequency.
pub const HEARTBEAT_BAND_HZ: f64 = 300.0;
/// A noise source with at least this share of its energy below
/// [`HEARTBEAT_BAND_HZ`] is taken for part of the heartbeat.
pub const NOISE_MAX_LOW_SHARE: f64 = 0.5;

/// Clusters the bin embeddings into two masks and resynthesises each source.
/// The source with the larger share of energy below 300 Hz is the heartbeat.
pub fn separate(model: &DcModel, w: &Waveform) -> Result<SeparationResult> {
    let (grid, v) = embed(model, w)?;
    let (t_n, f_n) = grid.bins.dim();
    let mags = grid.magnitudes();
    let active = active_bins(&mags, model.silence_db);
    let fit_rows: Vec<usize> = (0..active.len()).filter(|&i| active[i]).collect();
    let loudest = mags.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0))).map(|(i, _)| i);

    let passthrough = |mask: Array2<f64>| SeparationResult {
        heartbeat: w.clone(),
        noise: Waveform::zeros(w.len(), w.sample_rate_hz),
        heartbeat_mask: mask,
        degenerate: true,
    };
    let Some(first) = loudest.filter(|_| !fit_rows.is_empty()) else {
        return Ok(passthrough(Array2::ones((t_n, f_n))));
    };
    let cents = two_means(&v, &fit_rows, first);
    let gap = cents[0].iter().zip(&cents[1]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let assign: Vec<usize> = v
        .rows()
        .into_iter()
        .map(|r| {
            let d0: f64 = r.iter().zip(&cents[0]).map(|(a, b)| (a - b).powi(2)).sum();
            let d1: f64 = r.iter().zip(&cents[1]).map(|(a, b)| (a - b).powi(2)).sum();
            usize::from(d1 < d0)
        })
        .collect();
    let counts = fit_rows.iter().fold([0usize; 2], |mut c, &i| {
        c[assign[i]] += 1;
        c
    });
    if gap < model.min_centroid_distance || counts.contains(&0) {
        log::warn!("separation found a single source (centroid gap {gap:.3})");
        return Ok(passthrough(Array2::ones((t_n, f_n))));
    }
    let mut low = [0.0; 2];
    let mut total = [0.0; 2];
    for t in 0..t_n {
        for f in 0..f_n {
            let k = assign[t * f_n + f];
            let e = mags[[t, f]].powi(2);
            total[k] += e;
            if grid.bin_hz(f) < HEARTBEAT_BAND_HZ {
                low[k] += e;
            }
        }
    }
    let share = |k: usize| if total[k] > 0.0 { low[k] / total[k] } else { 0.0 };
    let heart = if share(1) > share(0) { 1 } else { 0 };
    if share(1 - heart) >= NOISE_MAX_LOW_SHARE {
        // both clusters live in the heartbeat band: the split cut the heartbeat itself
        log::debug!("both separated sources are heartbeat-like (low-band shares {:.2}, {:.2})", share(0), share(1));
        return Ok(passthrough(Array2::ones((t_n, f_n))));
    }
    let mask = Array2::from_shape_fn((t_n, f_n), |(t, f)| if assign[t * f_n + f] == heart { 1.0 } else { 0.0 });
    let masked = |keep: f64| {
        let bins =
            Array2::from_shape_fn((t_n, f_n), |(t, f)| if mask[[t, f]] == keep { grid.bins[[t, f]] } else { Complex64::new(0.0, 0.0) });
        istft(&grid.with_bins(bins))
    };
    Ok(SeparationResult { heartbeat: masked(1.0)?, noise: masked(0.0)?, heartbeat_mask: mask, degenerate: false })
}

impl DcModel {
    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new();
        c.put_text("kind", "separator");
        c.put_json("stft", &self.stft)?;
        c.put_scalar("embedding_dim", self.embedding_dim as f64);
        c.put_scalar("log_offset", self.log_offset);
        c.put_scalar("silence_db", self.silence_db);
        c.put_scalar("min_centroid_distance", self.min_centroid_distance);
        c.put_scalar("sample_rate_hz", self.sample_rate_hz as f64);
        c.put_vec("in_shift", self.in_shift.as_slice().expect("contiguous"));
        c.put_vec("in_scale", self.in_scale.as_slice().expect("contiguous"));
        c.put_vec("loss_trace", &self.loss_trace);
        let p = &self.params;
        c.put_matrix("w", &p.w);
        c.put_matrix("u", &p.u);
        c.put_vec("b", p.b.as_slice().expect("contiguous"));
        c.put_matrix("p", &p.p);
        c.put_matrix("q", &p.q);
        c.put_matrix("c", &p.c);
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<DcModel> {
        if c.text("kind")? != "separator" {
            return Err(FpcgError::Container("not a separator model".into()));
        }
        let m = DcModel {
            params: DcParams {
                w: c.matrix("w")?,
                u: c.matrix("u")?,
                b: c.vec("b")?.into(),
                p: c.matrix("p")?,
                q: c.matrix("q")?,
                c: c.matrix("c")?,
            },
            embedding_dim: c.scalar("embedding_dim")? as usize,
            stft: c.json("stft")?,
            log_offset: c.scalar("log_offset")?,
            silence_db: c.scalar("silence_db")?,
            min_centroid_distance: c.scalar("min_centroid_distance")?,
            sample_rate_hz: c.scalar("sample_rate_hz")? as u32,
            in_shift: c.vec("in_shift")?.into(),
            in_scale: c.vec("in_scale")?.into(),
            loss_trace: c.vec("loss_trace")?,
        };
        let (bins, hidden, dim) = (m.stft.n_bins(), m.params.b.len(), m.embedding_dim);
        let p = &m.params;
        let ok = p.w.dim() == (bins, hidden)
            && p.u.dim() == (hidden, hidden)
            && p.p.dim() == (bins * dim, hidden)
            && p.q.dim() == (bins, dim)
            && p.c.dim() == (bins, dim)
            && m.in_shift.len() == bins
            && m.in_scale.len() == bins;
        if !ok {
            return Err(FpcgError::Container("separator parameter shapes disagree".into()));
        }
        Ok(m)
    }
}
