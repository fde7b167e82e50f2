//! Recursive coarse-to-fine fusion.
//!
//! The panchromatic image is decomposed into `J` detail bands. Starting from
//! the expanded multispectral image, each stage stacks the pan detail band of
//! the same resolution in front of the current multispectral approximation,
//! runs the network, adds the approximation back (residual skip) and expands
//! the result for the next stage. The last stage is already at pan resolution
//! and is not expanded. All stages share one parameter set.

use crate::error::{Error, Result};
use crate::fusenet::{self, FuseNetParams};
use crate::pyramid::{self, check_divisible};
use crate::raster::RasterImage;
use crate::tensor::{Eager, Graph, Real, Tensor};

/// Default number of pyramid levels: a 4:1 pan/multispectral ratio.
pub const DEFAULT_LEVELS: usize = 2;

/// Single-item `(1, B, H, W)` tensor holding every band of `img`.
pub fn to_tensor<T: Real>(img: &RasterImage) -> Tensor<T> {
    Tensor::from_vec(
        [1, img.bands(), img.height(), img.width()],
        img.data()
            .iter()
            .map(|&v| T::from_f64_lossy(v as f64))
            .collect(),
    )
    .expect("raster layout matches tensor layout")
}

/// Batch item `n` of `t` as a raster.
pub fn to_raster<T: Real>(t: &Tensor<T>, n: usize, radiometric_max: f32) -> RasterImage {
    RasterImage::new(
        t.width(),
        t.height(),
        t.channels(),
        t.item(n).iter().map(|v| v.to_f64_lossy() as f32).collect(),
        radiometric_max,
    )
    .expect("tensor layout matches raster layout")
}

/// Network input `[pan_detail, ms_1, ..., ms_B]`.
pub fn build_stack(pan_detail: &RasterImage, ms_approx: &RasterImage) -> Result<Tensor<f32>> {
    if !pan_detail.same_dims(ms_approx) {
        return Err(Error::Shape(format!(
            "pan detail {}x{} and multispectral {}x{} differ in size",
            pan_detail.width(),
            pan_detail.height(),
            ms_approx.width(),
            ms_approx.height()
        )));
    }
    if pan_detail.bands() != 1 {
        return Err(Error::Shape(format!(
            "pan detail must have one band, got {}",
            pan_detail.bands()
        )));
    }
    crate::tensor::concat_channels(&[&to_tensor(pan_detail), &to_tensor(ms_approx)])
}

/// Pan detail bands ordered by stage, plus the multispectral input.
#[derive(Debug, Clone)]
pub struct StageInputs<T> {
    /// `pan_details[s]` is the detail band consumed by stage `s + 1`.
    pub pan_details: Vec<Tensor<T>>,
    pub ms: Tensor<T>,
}

impl<T: Real> StageInputs<T> {
    pub fn levels(&self) -> usize {
        self.pan_details.len()
    }

    /// Decomposes a `(1, 1, H, W)` pan tensor against a `(1, B, H/2^J, W/2^J)`
    /// multispectral tensor.
    pub fn new(pan: &Tensor<T>, ms: Tensor<T>, levels: usize) -> Result<Self> {
        check_resolutions(
            (pan.width(), pan.height(), pan.channels()),
            (ms.width(), ms.height()),
            levels,
        )?;
        let mut lowpass = pan.clone();
        let mut details = Vec::with_capacity(levels);
        for _ in 0..levels {
            let next = pyramid::reduce_tensor(&lowpass)?;
            let up = pyramid::expand_tensor(&next);
            let mut d = lowpass;
            for (a, &b) in d.data_mut().iter_mut().zip(up.data()) {
                *a -= b;
            }
            details.push(d);
            lowpass = next;
        }
        // finest detail is consumed last
        details.reverse();
        Ok(StageInputs {
            pan_details: details,
            ms,
        })
    }

    pub fn from_images(pan: &RasterImage, ms: &RasterImage, levels: usize) -> Result<Self> {
        if pan.bands() != 1 {
            return Err(Error::Shape(format!(
                "pan must have one band, got {}",
                pan.bands()
            )));
        }
        StageInputs::new(&to_tensor(pan), to_tensor(ms), levels)
    }
}

fn check_resolutions(pan: (usize, usize, usize), ms: (usize, usize), levels: usize) -> Result<()> {
    let (pw, ph, pc) = pan;
    if pc != 1 {
        return Err(Error::Shape(format!("pan must have one band, got {pc}")));
    }
    check_divisible(pw, ph, levels)?;
    let f = 1usize << levels;
    if pw != ms.0 * f || ph != ms.1 * f {
        return Err(Error::Dimension(format!(
            "pan {pw}x{ph} must be {f}x the multispectral {}x{}",
            ms.0, ms.1
        )));
    }
    Ok(())
}

/// Runs every stage on graph `g`, returning the post-residual output of each
/// stage, coarsest first.
pub fn fuse_graph<'p, T: Real, G: Graph<'p, T>>(
    g: &mut G,
    inputs: &StageInputs<T>,
    params: &'p FuseNetParams<T>,
) -> Result<Vec<G::Var>> {
    if inputs.ms.channels() != params.bands() {
        return Err(Error::Shape(format!(
            "network for {} bands given {}-band input",
            params.bands(),
            inputs.ms.channels()
        )));
    }
    let ms = g.input(inputs.ms.clone());
    let mut approx = g.expand(&ms);
    let mut outputs = Vec::with_capacity(inputs.levels());
    for (s, detail) in inputs.pan_details.iter().enumerate() {
        let d = g.input(detail.clone());
        let stack = g.concat(&[&d, &approx])?;
        let residual = fusenet::forward(g, &stack, params)?;
        let out = g.add(&residual, &approx)?;
        if s + 1 < inputs.levels() {
            approx = g.expand(&out);
        }
        outputs.push(out);
    }
    Ok(outputs)
}

/// Per-stage outputs of one fusion.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionTrace {
    /// Output of stage `s + 1` after the residual addition, coarsest first.
    pub per_stage_outputs: Vec<RasterImage>,
}

impl FusionTrace {
    /// Full-resolution fused image (the last stage's output).
    pub fn final_image(&self) -> &RasterImage {
        self.per_stage_outputs.last().expect("at least one stage")
    }

    pub fn into_final(mut self) -> RasterImage {
        self.per_stage_outputs.pop().expect("at least one stage")
    }
}

/// Fuses a pan image with a multispectral image `2^levels` times coarser.
pub fn fuse(
    pan: &RasterImage,
    ms: &RasterImage,
    params: &FuseNetParams<f32>,
    levels: usize,
) -> Result<FusionTrace> {
    if levels == 0 {
        return Err(Error::Dimension("fusion needs at least one level".into()));
    }
    let inputs = StageInputs::from_images(pan, ms, levels)?;
    let mut g = Eager;
    let outputs = fuse_graph(&mut g, &inputs, params)?;
    Ok(FusionTrace {
        per_stage_outputs: outputs
            .iter()
            .map(|t| to_raster(t, 0, ms.radiometric_max()))
            .collect(),
    })
}

/// Pure pyramid interpolation of the multispectral image, `levels` expansions.
pub fn interpolate(ms: &RasterImage, levels: usize) -> RasterImage {
    (0..levels).fold(ms.clone(), |acc, _| pyramid::expand(&acc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{ParamKey, Tape};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn noise(w: usize, h: usize, bands: usize, seed: u64) -> RasterImage {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..w * h * bands).map(|_| rng.gen::<f32>()).collect();
        RasterImage::new(w, h, bands, data, 2047.0).unwrap()
    }

    #[test]
    fn stack_ordering_and_shape() {
        let p = RasterImage::new(1, 1, 1, vec![0.3], 1.0).unwrap();
        let m = RasterImage::new(1, 1, 1, vec![0.7], 1.0).unwrap();
        let s = build_stack(&p, &m).unwrap();
        assert_eq!(s.data(), &[0.3, 0.7]);
        let s8 = build_stack(&noise(4, 4, 1, 1), &noise(4, 4, 8, 2)).unwrap();
        assert_eq!(s8.shape(), [1, 9, 4, 4]);
        assert!(matches!(
            build_stack(&noise(4, 4, 1, 1), &noise(2, 4, 8, 2)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn zero_network_is_pyramid_interpolation() {
        let params = FuseNetParams::<f32>::zeros(3, 2).unwrap();
        let ms = noise(4, 4, 3, 5);
        let pan = noise(16, 16, 1, 6);
        let trace = fuse(&pan, &ms, &params, 2).unwrap();
        assert_eq!(trace.per_stage_outputs.len(), 2);
        assert_eq!(trace.per_stage_outputs[0].width(), 8);
        let want = interpolate(&ms, 2);
        let got = trace.final_image();
        assert_eq!((got.width(), got.bands()), (16, 3));
        let err = got
            .data()
            .iter()
            .zip(want.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(err <= 1e-5);
    }

    #[test]
    fn smooth_pan_single_level() {
        // pan == expand(reduce(pan)) has no detail
        let pan = pyramid::expand(&noise(4, 4, 1, 9));
        let ms = noise(4, 4, 2, 10);
        let params = FuseNetParams::<f32>::zeros(2, 1).unwrap();
        let out = fuse(&pan, &ms, &params, 1).unwrap();
        assert_eq!(out.final_image(), &pyramid::expand(&ms));
    }

    #[test]
    fn resolution_mismatch() {
        let params = FuseNetParams::<f32>::zeros(2, 1).unwrap();
        let err = fuse(&noise(16, 16, 1, 1), &noise(8, 8, 2, 1), &params, 2);
        assert!(matches!(err, Err(Error::Dimension(_))));
        let err = fuse(&noise(12, 12, 1, 1), &noise(3, 3, 2, 1), &params, 3);
        assert!(matches!(err, Err(Error::Dimension(_))));
        let err = fuse(&noise(16, 16, 1, 1), &noise(4, 4, 3, 1), &params, 2);
        assert!(matches!(err, Err(Error::Shape(_))));
    }

    #[test]
    fn stages_share_one_parameter_object() {
        let params = FuseNetParams::xavier(2, 2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let before = params.clone();
        let inputs = StageInputs::from_images(&noise(16, 16, 1, 3), &noise(4, 4, 2, 4), 2).unwrap();
        let mut tape = Tape::new();
        let outs = fuse_graph(&mut tape, &inputs, &params).unwrap();
        assert_eq!(outs.len(), 2);
        let refs = tape.param_refs();
        let heads: Vec<_> = refs
            .iter()
            .filter(|(k, _)| *k == ParamKey::new(0, 0))
            .collect();
        assert_eq!(heads.len(), 2, "one head application per stage");
        assert!(heads.iter().all(|(_, p)| std::ptr::eq(*p, &params.head)));
        let blocks: Vec<_> = refs.iter().filter(|(k, _)| k.slot == 1).collect();
        assert_eq!(blocks.len(), 4, "K applications per stage");
        assert!(blocks
            .iter()
            .all(|(_, p)| std::ptr::eq(*p, &params.block.conv1)));
        drop(tape);
        assert_eq!(params, before);
    }

    #[test]
    fn residual_path_is_accumulated_network_output() {
        // J = 1: fuse(pan, ms) - expand(ms) == network(stack)
        let params = FuseNetParams::xavier(2, 1, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let pan = noise(8, 8, 1, 11);
        let ms = noise(4, 4, 2, 12);
        let fused = fuse(&pan, &ms, &params, 1).unwrap().into_final();
        let interp = pyramid::expand(&ms);
        let stack = pyramid::decompose(&pan, 1).unwrap();
        let net = params
            .apply(&build_stack(stack.detail(1), &interp).unwrap())
            .unwrap();
        for ((f, i), n) in fused.data().iter().zip(interp.data()).zip(net.data()) {
            assert!(((f - i) - n).abs() < 1e-6);
        }
    }
}
