//! Reduced-resolution training data, the multi-scale loss, ADAM, and the
//! training loop.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fusenet::{self, FuseNetParams, DEFAULT_BLOCKS};
use crate::pipeline::{fuse_graph, to_tensor, FusionTrace, StageInputs, DEFAULT_LEVELS};
use crate::pyramid::{self, gt_scale_approx};
use crate::raster::{load_mbr, RasterImage};
use crate::tensor::{Graph, Real, Tape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Patch side at ground-truth resolution.
    pub patch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Number of block applications `K`.
    pub blocks: usize,
    /// Number of pyramid levels `J`.
    pub levels: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 20,
            patch_size: 192,
            iterations: 1000,
            seed: 0,
            blocks: DEFAULT_BLOCKS,
            levels: DEFAULT_LEVELS,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

fn parse_value<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Usage(format!("config key {key:?}: cannot parse {value:?}")))
}

impl TrainConfig {
    /// Resolution factor between the multispectral input and the output.
    pub fn factor(&self) -> usize {
        1 << self.levels
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Usage(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.levels == 0 || self.levels > 8 {
            return bad(format!("J must be in 1..=8, got {}", self.levels));
        }
        if self.blocks == 0 {
            return bad("K must be at least 1".into());
        }
        if self.patch_size == 0 || !self.patch_size.is_multiple_of(self.factor()) {
            return bad(format!(
                "patch_size {} must be a positive multiple of {}",
                self.patch_size,
                self.factor()
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        for (k, b) in [
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
        ] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{k} must be in [0, 1), got {b}"));
            }
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return bad(format!("adam_eps must be positive, got {}", self.adam_eps));
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Usage(format!("config line {}: expected key = value", n + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "learning_rate" => cfg.learning_rate = parse_value(key, value)?,
                "batch_size" => cfg.batch_size = parse_value(key, value)?,
                "patch_size" => cfg.patch_size = parse_value(key, value)?,
                "iterations" => cfg.iterations = parse_value(key, value)?,
                "seed" => cfg.seed = parse_value(key, value)?,
                "K" => cfg.blocks = parse_value(key, value)?,
                "J" => cfg.levels = parse_value(key, value)?,
                "adam_beta1" => cfg.adam_beta1 = parse_value(key, value)?,
                "adam_beta2" => cfg.adam_beta2 = parse_value(key, value)?,
                "adam_eps" => cfg.adam_eps = parse_value(key, value)?,
                other => return Err(Error::Usage(format!("unknown config key {other:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::parse(&text)
    }
}

/// `log2(factor)` applications of the pyramid reduction.
pub fn wald_degrade(img: &RasterImage, factor: usize) -> Result<RasterImage> {
    if !factor.is_power_of_two() {
        return Err(Error::Dimension(format!(
            "degradation factor {factor} is not a power of 2"
        )));
    }
    if !img.width().is_multiple_of(factor) || !img.height().is_multiple_of(factor) {
        return Err(Error::Dimension(format!(
            "{}x{} is not divisible by {factor}",
            img.width(),
            img.height()
        )));
    }
    let mut out = img.clone();
    for _ in 0..factor.trailing_zeros() {
        out = pyramid::reduce(&out)?;
    }
    Ok(out)
}

/// One aligned training triple at reduced resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub pan_lr: RasterImage,
    pub ms_lr: RasterImage,
    pub gt: RasterImage,
}

/// Degraded copy of one full-resolution pair, ready for cropping.
#[derive(Debug, Clone)]
pub struct SimulatedPair {
    pub pan_lr: RasterImage,
    pub ms_lr: RasterImage,
    pub gt: RasterImage,
    factor: usize,
}

impl SimulatedPair {
    /// Degrades `pan` and `ms` by `factor`; the original `ms` becomes ground truth.
    pub fn new(pan: &RasterImage, ms: &RasterImage, factor: usize) -> Result<Self> {
        if pan.bands() != 1 {
            return Err(Error::Shape(format!(
                "pan must have one band, got {}",
                pan.bands()
            )));
        }
        if pan.width() != ms.width() * factor || pan.height() != ms.height() * factor {
            return Err(Error::Dimension(format!(
                "pan {}x{} must be {factor}x the multispectral {}x{}",
                pan.width(),
                pan.height(),
                ms.width(),
                ms.height()
            )));
        }
        Ok(SimulatedPair {
            pan_lr: wald_degrade(pan, factor)?,
            ms_lr: wald_degrade(ms, factor)?,
            gt: ms.clone(),
            factor,
        })
    }

    /// Crop with its top-left corner at `(x, y)` in ground-truth pixels.
    pub fn crop(&self, x: usize, y: usize, patch: usize) -> Result<TrainSample> {
        let f = self.factor;
        if !x.is_multiple_of(f) || !y.is_multiple_of(f) || !patch.is_multiple_of(f) {
            return Err(Error::Dimension(format!(
                "crop origin ({x}, {y}) and size {patch} must be multiples of {f}"
            )));
        }
        Ok(TrainSample {
            pan_lr: self.pan_lr.crop(x, y, patch, patch)?,
            ms_lr: self.ms_lr.crop(x / f, y / f, patch / f, patch / f)?,
            gt: self.gt.crop(x, y, patch, patch)?,
        })
    }

    /// Random aligned crop.
    pub fn sample<R: Rng + ?Sized>(&self, patch: usize, rng: &mut R) -> Result<TrainSample> {
        let (w, h) = (self.gt.width(), self.gt.height());
        if patch > w || patch > h {
            return Err(Error::Size(format!(
                "patch {patch} does not fit a {w}x{h} ground truth"
            )));
        }
        let f = self.factor;
        let x = rng.gen_range(0..=(w - patch) / f) * f;
        let y = rng.gen_range(0..=(h - patch) / f) * f;
        self.crop(x, y, patch)
    }
}

/// Degrades every pair and draws `count` crops.
pub fn make_samples<R: Rng + ?Sized>(
    pan: &RasterImage,
    ms: &RasterImage,
    cfg: &TrainConfig,
    count: usize,
    rng: &mut R,
) -> Result<Vec<TrainSample>> {
    cfg.validate()?;
    let pair = SimulatedPair::new(pan, ms, cfg.factor())?;
    (0..count)
        .map(|_| pair.sample(cfg.patch_size, rng))
        .collect()
}

/// Network inputs and per-stage targets of one sample.
#[derive(Debug, Clone)]
pub struct PreparedSample<T> {
    pub inputs: StageInputs<T>,
    /// Target of each stage, coarsest first.
    pub targets: Vec<Tensor<T>>,
}

impl<T: Real> PreparedSample<T> {
    pub fn new(sample: &TrainSample, levels: usize) -> Result<Self> {
        let inputs = StageInputs::from_images(&sample.pan_lr, &sample.ms_lr, levels)?;
        Ok(PreparedSample {
            inputs,
            targets: stage_targets(&sample.gt, levels)?,
        })
    }
}

/// Ground-truth approximation matching each stage's resolution, coarsest first.
pub fn stage_targets<T: Real>(gt: &RasterImage, levels: usize) -> Result<Vec<Tensor<T>>> {
    let approx = gt_scale_approx(gt, levels)?;
    Ok((0..levels).rev().map(|j| to_tensor(&approx[j])).collect())
}

/// Sum over stages of the per-stage mean squared error, and the gradient of
/// that sum with respect to every stage output.
pub fn multiscale_loss<T: Real>(
    outputs: &[Tensor<T>],
    targets: &[Tensor<T>],
) -> Result<(f64, Vec<Tensor<T>>)> {
    if outputs.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} stage outputs for {} targets",
            outputs.len(),
            targets.len()
        )));
    }
    let mut loss = 0.0f64;
    let mut seeds = Vec::with_capacity(outputs.len());
    for (o, t) in outputs.iter().zip(targets) {
        if o.shape() != t.shape() {
            return Err(Error::Shape(format!(
                "stage output {:?} vs target {:?}",
                o.shape(),
                t.shape()
            )));
        }
        let n = o.data().len() as f64;
        let mut sq = 0.0f64;
        let scale = T::from_f64_lossy(2.0 / n);
        let mut seed = Vec::with_capacity(o.data().len());
        for (&a, &b) in o.data().iter().zip(t.data()) {
            let d = a - b;
            let df = d.to_f64_lossy();
            sq += df * df;
            seed.push(d * scale);
        }
        loss += sq / n;
        seeds.push(Tensor::from_vec(o.shape(), seed)?);
    }
    Ok((loss, seeds))
}

/// Loss of a fusion trace against a ground truth at the final resolution.
pub fn trace_loss(trace: &FusionTrace, gt: &RasterImage) -> Result<f64> {
    let levels = trace.per_stage_outputs.len();
    let fin = trace.final_image();
    if !fin.same_dims(gt) {
        return Err(Error::Shape(format!(
            "fused {}x{}x{} vs ground truth {}x{}x{}",
            fin.width(),
            fin.height(),
            fin.bands(),
            gt.width(),
            gt.height(),
            gt.bands()
        )));
    }
    let targets = stage_targets::<f64>(gt, levels)?;
    let outputs: Vec<Tensor<f64>> = trace.per_stage_outputs.iter().map(to_tensor).collect();
    Ok(multiscale_loss(&outputs, &targets)?.0)
}

/// Loss of one prepared sample without recording a tape.
pub fn sample_loss<T: Real>(params: &FuseNetParams<T>, sample: &PreparedSample<T>) -> Result<f64> {
    let mut g = crate::tensor::Eager;
    let outputs = fuse_graph(&mut g, &sample.inputs, params)?;
    Ok(multiscale_loss(&outputs, &sample.targets)?.0)
}

/// Loss of one prepared sample and its gradient with respect to every parameter.
pub fn loss_and_grad<T: Real>(
    params: &FuseNetParams<T>,
    sample: &PreparedSample<T>,
) -> Result<(f64, FuseNetParams<T>)> {
    let mut tape = Tape::new();
    let outputs = fuse_graph(&mut tape, &sample.inputs, params)?;
    let values: Vec<Tensor<T>> = outputs.iter().map(|v| tape.value(v).clone()).collect();
    let (loss, seeds) = multiscale_loss(&values, &sample.targets)?;
    let grads = tape.backward_many(outputs.into_iter().zip(seeds).collect())?;
    Ok((loss, params.gradients_from(&grads)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl From<&TrainConfig> for AdamHyper {
    fn from(c: &TrainConfig) -> Self {
        AdamHyper {
            learning_rate: c.learning_rate,
            beta1: c.adam_beta1,
            beta2: c.adam_beta2,
            eps: c.adam_eps,
        }
    }
}

/// First and second moment buffers, one pair per parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(lens: &[usize]) -> Self {
        AdamState {
            m: lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: lens.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn for_params(p: &FuseNetParams<f32>) -> Self {
        let lens: Vec<usize> = p
            .layers()
            .iter()
            .flat_map(|l| [l.weights.len(), l.bias.len()])
            .collect();
        Self::new(&lens)
    }

    /// One bias-corrected update of `params` against `grads`, buffer by buffer.
    pub fn step(
        &mut self,
        params: &mut [&mut [f32]],
        grads: &[&[f32]],
        hp: &AdamHyper,
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "ADAM state has {} buffers, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return Err(Error::Shape(format!(
                    "buffer {i}: {} moments, {} parameters, {} gradients",
                    self.m[i].len(),
                    p.len(),
                    g.len()
                )));
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - hp.beta1.powi(t);
        let c2 = 1.0 - hp.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                let gj = g[j] as f64;
                m[j] = hp.beta1 * m[j] + (1.0 - hp.beta1) * gj;
                v[j] = hp.beta2 * v[j] + (1.0 - hp.beta2) * gj * gj;
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                p[j] = (p[j] as f64 - hp.learning_rate * mhat / (vhat.sqrt() + hp.eps)) as f32;
            }
        }
        Ok(())
    }
}

/// ADAM update of every network parameter.
pub fn adam_step(
    params: &mut FuseNetParams<f32>,
    grads: &FuseNetParams<f32>,
    state: &mut AdamState,
    hp: &AdamHyper,
) -> Result<()> {
    if params.bands() != grads.bands() || params.blocks() != grads.blocks() {
        return Err(Error::Shape(
            "gradient network does not match parameters".into(),
        ));
    }
    let g: Vec<&[f32]> = grads
        .layers()
        .into_iter()
        .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
        .collect();
    let mut p: Vec<&mut [f32]> = params
        .layers_mut()
        .into_iter()
        .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
        .collect();
    state.step(&mut p, &g, hp)
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: FuseNetParams<f32>,
    /// Mean batch loss before each update.
    pub losses: Vec<f64>,
}

impl TrainOutcome {
    pub fn loss_csv(&self) -> String {
        loss_csv(&self.losses)
    }
}

pub fn loss_csv(losses: &[f64]) -> String {
    let mut s = String::from("iteration,loss\n");
    for (i, l) in losses.iter().enumerate() {
        s.push_str(&format!("{i},{l}\n"));
    }
    s
}

/// Trains from Xavier initialization on in-memory `(pan, ms)` pairs.
///
/// `on_iteration` sees the iteration index and mean batch loss.
pub fn train_pairs(
    pairs: &[(RasterImage, RasterImage)],
    cfg: &TrainConfig,
    mut on_iteration: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let first = pairs
        .first()
        .ok_or_else(|| Error::Usage("training needs at least one image pair".into()))?;
    let bands = first.1.bands();
    let sims = pairs
        .iter()
        .map(|(pan, ms)| {
            if ms.bands() != bands {
                return Err(Error::Shape(format!(
                    "pairs mix {bands}-band and {}-band multispectral images",
                    ms.bands()
                )));
            }
            SimulatedPair::new(pan, ms, cfg.factor())
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = FuseNetParams::xavier(bands, cfg.blocks, &mut rng)?;
    let mut state = AdamState::for_params(&params);
    let hp = AdamHyper::from(cfg);
    let mut losses = Vec::with_capacity(cfg.iterations);

    for it in 0..cfg.iterations {
        let batch = (0..cfg.batch_size)
            .map(|_| {
                let k = rng.gen_range(0..sims.len());
                sims[k].sample(cfg.patch_size, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let results = batch
            .par_iter()
            .map(|s| loss_and_grad(&params, &PreparedSample::new(s, cfg.levels)?))
            .collect::<Result<Vec<_>>>()?;
        let mut grad = FuseNetParams::zeros(bands, cfg.blocks)?;
        let mut loss = 0.0;
        for (l, g) in &results {
            loss += l;
            for (dst, src) in grad.layers_mut().into_iter().zip(g.layers()) {
                dst.add_assign(src);
            }
        }
        let inv = 1.0 / cfg.batch_size as f32;
        for layer in grad.layers_mut() {
            layer
                .weights
                .iter_mut()
                .chain(layer.bias.iter_mut())
                .for_each(|v| *v *= inv);
        }
        loss /= cfg.batch_size as f64;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "loss became {loss} at iteration {it}"
            )));
        }
        on_iteration(it, loss);
        losses.push(loss);
        adam_step(&mut params, &grad, &mut state, &hp)?;
    }
    Ok(TrainOutcome { params, losses })
}

/// Trains on MBR pairs read from disk, then writes the checkpoint and loss log.
pub fn train(
    dataset: &[(impl AsRef<Path>, impl AsRef<Path>)],
    cfg: &TrainConfig,
    checkpoint: impl AsRef<Path>,
    loss_log: impl AsRef<Path>,
) -> Result<TrainOutcome> {
    let pairs = dataset
        .iter()
        .map(|(p, m)| Ok((load_mbr(p)?, load_mbr(m)?)))
        .collect::<Result<Vec<_>>>()?;
    let outcome = train_pairs(&pairs, cfg, |_, _| {})?;
    fusenet::save_checkpoint(&outcome.params, checkpoint)?;
    let log = loss_log.as_ref();
    fs::write(log, outcome.loss_csv()).map_err(|e| Error::io(log, e))?;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise(w: usize, h: usize, b: usize, seed: u64) -> RasterImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..w * h * b).map(|_| rng.gen_range(0.1..0.9)).collect();
        RasterImage::new(w, h, b, data, 2047.0).unwrap()
    }

    #[test]
    fn config_parsing() {
        let cfg = TrainConfig::parse(
            "learning_rate = 0.01\n# note\nK = 2\nJ=1 # inline\npatch_size = 16\n",
        )
        .unwrap();
        assert_eq!(cfg.learning_rate, 0.01);
        assert_eq!((cfg.blocks, cfg.levels, cfg.patch_size), (2, 1, 16));
        assert_eq!(cfg.batch_size, 20);
        match TrainConfig::parse("lr = 1") {
            Err(Error::Usage(m)) => assert!(m.contains("\"lr\"")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            TrainConfig::parse("patch_size = 18"),
            Err(Error::Usage(_))
        ));
        assert!(matches!(
            TrainConfig::parse("batch_size = 0"),
            Err(Error::Usage(_))
        ));
        assert!(matches!(
            TrainConfig::parse("seed = x"),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn wald_degrade_examples() {
        let c = RasterImage::filled(16, 16, 2, 0.3);
        let d = wald_degrade(&c, 4).unwrap();
        assert_eq!((d.width(), d.height()), (4, 4));
        assert!(d.data().iter().all(|&v| (v - 0.3).abs() < 1e-6));
        let x = noise(32, 16, 1, 1);
        let twice = pyramid::reduce(&pyramid::reduce(&x).unwrap()).unwrap();
        assert!(wald_degrade(&x, 4).unwrap().bitwise_eq(&twice));
        assert!(matches!(wald_degrade(&x, 3), Err(Error::Dimension(_))));
        assert!(matches!(
            wald_degrade(&noise(6, 6, 1, 1), 4),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn samples_are_aligned_and_deterministic() {
        let pan = noise(128, 128, 1, 2);
        let ms = noise(32, 32, 3, 3);
        let cfg = TrainConfig {
            patch_size: 16,
            ..TrainConfig::default()
        };
        let a = make_samples(&pan, &ms, &cfg, 5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = make_samples(&pan, &ms, &cfg, 5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        let sim = SimulatedPair::new(&pan, &ms, 4).unwrap();
        let s = sim.crop(8, 12, 16).unwrap();
        assert!(s.ms_lr.bitwise_eq(&sim.ms_lr.crop(2, 3, 4, 4).unwrap()));
        assert_eq!(
            (s.pan_lr.width(), s.gt.width(), s.ms_lr.width()),
            (16, 16, 4)
        );
        let big = TrainConfig {
            patch_size: 64,
            ..TrainConfig::default()
        };
        assert!(matches!(
            make_samples(&pan, &ms, &big, 1, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::Size(_))
        ));
    }

    #[test]
    fn loss_examples() {
        let t = Tensor::<f64>::full([1, 2, 4, 4], 0.5);
        let o = Tensor::<f64>::full([1, 2, 4, 4], 0.75);
        let (l, seeds) =
            multiscale_loss(std::slice::from_ref(&o), std::slice::from_ref(&t)).unwrap();
        assert!((l - 0.0625).abs() < 1e-15);
        assert!(seeds[0]
            .data()
            .iter()
            .all(|&g| (g - 2.0 * 0.25 / 32.0).abs() < 1e-15));
        assert_eq!(
            multiscale_loss(std::slice::from_ref(&t), std::slice::from_ref(&t))
                .unwrap()
                .0,
            0.0
        );
        assert!(multiscale_loss(&[o], &[Tensor::zeros([1, 2, 4, 2])]).is_err());
    }

    #[test]
    fn adam_single_and_double_step() {
        let hp = AdamHyper {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        let mut st = AdamState::new(&[3]);
        let mut p = vec![1.0f32, -2.0, 0.5];
        let g = vec![0.3f32, -4.0, 0.0];
        st.step(&mut [&mut p], &[&g], &hp).unwrap();
        assert!((p[0] - (1.0 - 1e-3)).abs() < 1e-6);
        assert!((p[1] - (-2.0 + 1e-3)).abs() < 1e-6);
        assert_eq!(p[2], 0.5);
        assert_eq!(st.t, 1);

        // hand-rolled second step
        let p1 = p.clone();
        st.step(&mut [&mut p], &[&g], &hp).unwrap();
        for j in 0..3 {
            let gj = g[j] as f64;
            let m = 0.9 * (0.1 * gj) + 0.1 * gj;
            let v = 0.999 * (0.001 * gj * gj) + 0.001 * gj * gj;
            let mh = m / (1.0 - 0.81);
            let vh = v / (1.0 - 0.999f64.powi(2));
            let expect = p1[j] as f64 - 1e-3 * mh / (vh.sqrt() + 1e-8);
            assert!((p[j] as f64 - expect).abs() <= 1e-7);
        }
        assert!(st.step(&mut [&mut p], &[&g[..2]], &hp).is_err());
    }

    #[test]
    fn zero_iterations_is_xavier() {
        let pan = noise(32, 32, 1, 4);
        let ms = noise(8, 8, 2, 5);
        let cfg = TrainConfig {
            patch_size: 8,
            iterations: 0,
            blocks: 1,
            seed: 17,
            ..TrainConfig::default()
        };
        let out = train_pairs(&[(pan, ms)], &cfg, |_, _| {}).unwrap();
        let init = FuseNetParams::xavier(2, 1, &mut ChaCha8Rng::seed_from_u64(17)).unwrap();
        assert!(out.params.bitwise_eq(&init));
        assert_eq!(out.loss_csv(), "iteration,loss\n");
    }

    #[test]
    fn a_few_steps_reduce_loss() {
        let pan = noise(32, 32, 1, 6);
        let ms = noise(8, 8, 2, 7);
        let cfg = TrainConfig {
            patch_size: 8,
            batch_size: 2,
            iterations: 30,
            blocks: 1,
            learning_rate: 3e-3,
            ..TrainConfig::default()
        };
        let out = train_pairs(&[(pan, ms)], &cfg, |_, _| {}).unwrap();
        assert!(out.losses.last().unwrap() < &out.losses[0]);
    }

    #[test]
    fn trace_loss_zero_on_targets() {
        let gt = noise(16, 16, 2, 8);
        let approx = gt_scale_approx(&gt, 2).unwrap();
        let trace = FusionTrace {
            per_stage_outputs: vec![approx[1].clone(), approx[0].clone()],
        };
        assert!(trace_loss(&trace, &gt).unwrap() < 1e-12);
    }
}
