//! Laplacian pyramid analysis and synthesis.
//!
//! `reduce` low-pass filters with a separable symmetric kernel and keeps the
//! even-indexed samples; `expand` inserts zeros and filters with twice the
//! kernel. Both extend the boundary by mirroring without repeating the edge
//! sample. A detail band is `prev - expand(reduce(prev))`, so synthesis is
//! exact up to floating-point rounding.

use crate::error::{Error, Result};
use crate::raster::RasterImage;
use crate::tensor::{mirror_index, Real, Tensor};

/// Odd-length, symmetric, unit-sum 1-D filter.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel1D {
    taps: Vec<f64>,
}

impl Kernel1D {
    pub fn new(taps: Vec<f64>) -> Result<Self> {
        if taps.len().is_multiple_of(2) {
            return Err(Error::Shape(format!(
                "kernel length {} must be odd",
                taps.len()
            )));
        }
        let sum: f64 = taps.iter().sum();
        if (sum - 1.0).abs() > 1e-7 {
            return Err(Error::Range(format!("kernel taps sum to {sum}, not 1")));
        }
        let n = taps.len();
        if (0..n).any(|i| taps[i] != taps[n - 1 - i]) {
            return Err(Error::Range("kernel taps are not symmetric".into()));
        }
        Ok(Kernel1D { taps })
    }

    /// `[1, 4, 6, 4, 1] / 16`, the Burt-Adelson generating kernel with `a = 0.375`.
    pub fn burt() -> Self {
        Kernel1D {
            taps: vec![1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0],
        }
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    fn radius(&self) -> isize {
        (self.taps.len() / 2) as isize
    }

    fn cast<T: Real>(&self, gain: f64) -> Vec<T> {
        self.taps
            .iter()
            .map(|&t| T::from_f64_lossy(gain * t))
            .collect()
    }
}

impl Default for Kernel1D {
    fn default() -> Self {
        Kernel1D::burt()
    }
}

// ---------------------------------------------------------------------------
// plane kernels

/// Filters and decimates one `w x h` plane to `w/2 x h/2`.
pub fn reduce_plane<T: Real>(src: &[T], w: usize, h: usize, kernel: &Kernel1D) -> Result<Vec<T>> {
    if !w.is_multiple_of(2) || !h.is_multiple_of(2) {
        return Err(Error::Dimension(format!(
            "reduce needs even dimensions, got {w}x{h}"
        )));
    }
    debug_assert_eq!(src.len(), w * h);
    let taps: Vec<T> = kernel.cast(1.0);
    let r = kernel.radius();
    let (w2, h2) = (w / 2, h / 2);

    let mut rows = vec![T::zero(); w2 * h];
    let col_src: Vec<Vec<usize>> = (0..w2)
        .map(|x| {
            (0..taps.len())
                .map(|t| mirror_index(2 * x as isize + t as isize - r, w))
                .collect()
        })
        .collect();
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        let out = &mut rows[y * w2..(y + 1) * w2];
        for (o, idx) in out.iter_mut().zip(&col_src) {
            let mut acc = T::zero();
            for (&k, &i) in taps.iter().zip(idx) {
                acc += k * line[i];
            }
            *o = acc;
        }
    }

    let mut out = vec![T::zero(); w2 * h2];
    for y in 0..h2 {
        let dst = &mut out[y * w2..(y + 1) * w2];
        for (t, &k) in taps.iter().enumerate() {
            let sy = mirror_index(2 * y as isize + t as isize - r, h);
            for (d, &s) in dst.iter_mut().zip(&rows[sy * w2..(sy + 1) * w2]) {
                *d += k * s;
            }
        }
    }
    Ok(out)
}

/// Zero-inserts and filters one `w x h` plane to `2w x 2h`.
pub fn expand_plane<T: Real>(src: &[T], w: usize, h: usize, kernel: &Kernel1D) -> Vec<T> {
    debug_assert_eq!(src.len(), w * h);
    let taps: Vec<T> = kernel.cast(2.0);
    let r = kernel.radius();
    let (w2, h2) = (2 * w, 2 * h);

    // Horizontal: each output sample only sees the even (non-zero) taps.
    let col_src: Vec<Vec<(usize, T)>> = (0..w2)
        .map(|x| {
            taps.iter()
                .enumerate()
                .filter_map(|(t, &k)| {
                    let m = mirror_index(x as isize + t as isize - r, w2);
                    m.is_multiple_of(2).then_some((m / 2, k))
                })
                .collect()
        })
        .collect();
    let mut rows = vec![T::zero(); w2 * h];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        let out = &mut rows[y * w2..(y + 1) * w2];
        for (o, idx) in out.iter_mut().zip(&col_src) {
            let mut acc = T::zero();
            for &(i, k) in idx {
                acc += k * line[i];
            }
            *o = acc;
        }
    }

    let mut out = vec![T::zero(); w2 * h2];
    for y in 0..h2 {
        let dst = &mut out[y * w2..(y + 1) * w2];
        for (t, &k) in taps.iter().enumerate() {
            let m = mirror_index(y as isize + t as isize - r, h2);
            if !m.is_multiple_of(2) {
                continue;
            }
            let sy = m / 2;
            for (d, &s) in dst.iter_mut().zip(&rows[sy * w2..(sy + 1) * w2]) {
                *d += k * s;
            }
        }
    }
    out
}

/// Adjoint of [`expand_plane`]: maps a `w2 x h2` gradient to `w2/2 x h2/2`.
pub fn expand_plane_adjoint<T: Real>(
    grad: &[T],
    w2: usize,
    h2: usize,
    kernel: &Kernel1D,
) -> Vec<T> {
    debug_assert!(w2.is_multiple_of(2) && h2.is_multiple_of(2));
    debug_assert_eq!(grad.len(), w2 * h2);
    let taps: Vec<T> = kernel.cast(2.0);
    let r = kernel.radius();
    let (w, h) = (w2 / 2, h2 / 2);

    // transpose of the vertical pass
    let mut rows = vec![T::zero(); w2 * h];
    for y in 0..h2 {
        let g = &grad[y * w2..(y + 1) * w2];
        for (t, &k) in taps.iter().enumerate() {
            let m = mirror_index(y as isize + t as isize - r, h2);
            if !m.is_multiple_of(2) {
                continue;
            }
            let dst = &mut rows[(m / 2) * w2..(m / 2 + 1) * w2];
            for (d, &s) in dst.iter_mut().zip(g) {
                *d += k * s;
            }
        }
    }

    // transpose of the horizontal pass
    let mut out = vec![T::zero(); w * h];
    for y in 0..h {
        let g = &rows[y * w2..(y + 1) * w2];
        let dst = &mut out[y * w..(y + 1) * w];
        for (x, &gx) in g.iter().enumerate() {
            for (t, &k) in taps.iter().enumerate() {
                let m = mirror_index(x as isize + t as isize - r, w2);
                if m.is_multiple_of(2) {
                    dst[m / 2] += k * gx;
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// images

fn map_bands(
    img: &RasterImage,
    width: usize,
    height: usize,
    f: impl Fn(&[f32]) -> Result<Vec<f32>>,
) -> Result<RasterImage> {
    let mut data = Vec::with_capacity(width * height * img.bands());
    for b in 0..img.bands() {
        data.extend(f(img.band(b))?);
    }
    RasterImage::new(width, height, img.bands(), data, img.radiometric_max())
}

/// Half-resolution low-pass approximation of every band.
pub fn reduce(img: &RasterImage) -> Result<RasterImage> {
    let (w, h) = (img.width(), img.height());
    if w % 2 != 0 || h % 2 != 0 {
        return Err(Error::Dimension(format!(
            "reduce needs even dimensions, got {w}x{h}"
        )));
    }
    let k = Kernel1D::burt();
    map_bands(img, w / 2, h / 2, |p| reduce_plane(p, w, h, &k))
}

/// Double-resolution interpolation of every band.
pub fn expand(img: &RasterImage) -> RasterImage {
    let (w, h) = (img.width(), img.height());
    let k = Kernel1D::burt();
    map_bands(img, 2 * w, 2 * h, |p| Ok(expand_plane(p, w, h, &k)))
        .expect("expand preserves band layout")
}

/// High-frequency band `prev - expand(reduced)` at `prev`'s resolution.
pub fn detail(prev: &RasterImage, reduced: &RasterImage) -> Result<RasterImage> {
    if prev.width() != 2 * reduced.width()
        || prev.height() != 2 * reduced.height()
        || prev.bands() != reduced.bands()
    {
        return Err(Error::Dimension(format!(
            "detail needs a half-size reduced image: {}x{}x{} vs {}x{}x{}",
            prev.width(),
            prev.height(),
            prev.bands(),
            reduced.width(),
            reduced.height(),
            reduced.bands()
        )));
    }
    let up = expand(reduced);
    let data = prev
        .data()
        .iter()
        .zip(up.data())
        .map(|(a, b)| a - b)
        .collect();
    RasterImage::new(
        prev.width(),
        prev.height(),
        prev.bands(),
        data,
        prev.radiometric_max(),
    )
}

/// Low-pass approximations `lowpass[0..=J]` (full resolution first) and
/// detail bands, where `details[j - 1]` is level `j`'s detail at the
/// resolution of `lowpass[j - 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidStack {
    pub lowpass: Vec<RasterImage>,
    pub details: Vec<RasterImage>,
}

impl PyramidStack {
    pub fn levels(&self) -> usize {
        self.details.len()
    }

    /// Detail band of level `j` (1-based).
    pub fn detail(&self, j: usize) -> &RasterImage {
        &self.details[j - 1]
    }

    /// Coarse-to-fine synthesis: `lowpass[j-1] = details[j-1] + expand(lowpass[j])`.
    pub fn reconstruct(&self) -> RasterImage {
        let mut current = self.lowpass.last().expect("stack has a base level").clone();
        for d in self.details.iter().rev() {
            let up = expand(&current);
            let data = d.data().iter().zip(up.data()).map(|(a, b)| a + b).collect();
            current = RasterImage::new(d.width(), d.height(), d.bands(), data, d.radiometric_max())
                .expect("detail and expansion share dimensions");
        }
        current
    }
}

pub(crate) fn check_divisible(w: usize, h: usize, levels: usize) -> Result<()> {
    let f = 1usize << levels;
    if !w.is_multiple_of(f) || !h.is_multiple_of(f) || w == 0 || h == 0 {
        return Err(Error::Dimension(format!(
            "{w}x{h} is not divisible by 2^{levels} = {f}"
        )));
    }
    Ok(())
}

/// Laplacian decomposition into `levels` detail bands.
pub fn decompose(img: &RasterImage, levels: usize) -> Result<PyramidStack> {
    check_divisible(img.width(), img.height(), levels)?;
    let mut lowpass = vec![img.clone()];
    let mut details = Vec::with_capacity(levels);
    for _ in 0..levels {
        let prev = lowpass.last().unwrap();
        let next = reduce(prev)?;
        details.push(detail(prev, &next)?);
        lowpass.push(next);
    }
    Ok(PyramidStack { lowpass, details })
}

/// Ground-truth approximations at every pyramid resolution, finest first:
/// element `j < J` is `detail_{j+1} + expand(lowpass_{j+1})`, the last is the
/// coarsest low-pass band.
pub fn gt_scale_approx(gt: &RasterImage, levels: usize) -> Result<Vec<RasterImage>> {
    let stack = decompose(gt, levels)?;
    let mut out = Vec::with_capacity(levels + 1);
    for j in 0..levels {
        let hi = &stack.details[j];
        let lo = expand(&stack.lowpass[j + 1]);
        let data = hi
            .data()
            .iter()
            .zip(lo.data())
            .map(|(a, b)| a + b)
            .collect();
        out.push(RasterImage::new(
            hi.width(),
            hi.height(),
            hi.bands(),
            data,
            hi.radiometric_max(),
        )?);
    }
    out.push(stack.lowpass[levels].clone());
    Ok(out)
}

// ---------------------------------------------------------------------------
// tensors

pub fn reduce_tensor<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.shape();
    let k = Kernel1D::burt();
    let mut data = Vec::with_capacity(n * c * (h / 2) * (w / 2));
    for b in 0..n {
        for ch in 0..c {
            data.extend(reduce_plane(x.plane(b, ch), w, h, &k)?);
        }
    }
    Tensor::from_vec([n, c, h / 2, w / 2], data)
}

pub fn expand_tensor<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let k = Kernel1D::burt();
    let mut data = Vec::with_capacity(n * c * 4 * h * w);
    for b in 0..n {
        for ch in 0..c {
            data.extend(expand_plane(x.plane(b, ch), w, h, &k));
        }
    }
    Tensor::from_vec([n, c, 2 * h, 2 * w], data).expect("expand shape")
}

pub fn expand_tensor_adjoint<T: Real>(g: &Tensor<T>) -> Tensor<T> {
    let [n, c, h2, w2] = g.shape();
    let k = Kernel1D::burt();
    let mut data = Vec::with_capacity(n * c * h2 * w2 / 4);
    for b in 0..n {
        for ch in 0..c {
            data.extend(expand_plane_adjoint(g.plane(b, ch), w2, h2, &k));
        }
    }
    Tensor::from_vec([n, c, h2 / 2, w2 / 2], data).expect("adjoint shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct 2-D filtering with the 5x5 outer-product kernel, single-fold
    /// mirror padding, then even-index decimation.
    fn reduce_oracle(src: &[f64], w: usize, h: usize) -> Vec<f64> {
        let k = [1.0, 4.0, 6.0, 4.0, 1.0];
        let refl = |i: isize, n: usize| -> usize {
            let n = n as isize;
            (if i < 0 {
                -i
            } else if i >= n {
                2 * (n - 1) - i
            } else {
                i
            }) as usize
        };
        let mut out = Vec::new();
        for y in (0..h).step_by(2) {
            for x in (0..w).step_by(2) {
                let mut acc = 0.0;
                for i in 0..5 {
                    for j in 0..5 {
                        let sy = refl(y as isize + i as isize - 2, h);
                        let sx = refl(x as isize + j as isize - 2, w);
                        acc += k[i] * k[j] / 256.0 * src[sy * w + sx];
                    }
                }
                out.push(acc);
            }
        }
        out
    }

    /// Explicit zero-insertion followed by direct 2-D filtering with 4 h h^T.
    fn expand_oracle(src: &[f64], w: usize, h: usize) -> Vec<f64> {
        let k = [1.0, 4.0, 6.0, 4.0, 1.0];
        let (w2, h2) = (2 * w, 2 * h);
        let mut up = vec![0.0; w2 * h2];
        for y in 0..h {
            for x in 0..w {
                up[2 * y * w2 + 2 * x] = src[y * w + x];
            }
        }
        // fold repeatedly: the zero-inserted 2x2 case pads past the far edge
        let refl = |mut i: isize, n: usize| -> usize {
            let n = n as isize;
            if n == 1 {
                return 0;
            }
            while i < 0 || i >= n {
                i = if i < 0 { -i } else { 2 * (n - 1) - i };
            }
            i as usize
        };
        let mut out = vec![0.0; w2 * h2];
        for y in 0..h2 {
            for x in 0..w2 {
                let mut acc = 0.0;
                for i in 0..5 {
                    for j in 0..5 {
                        let sy = refl(y as isize + i as isize - 2, h2);
                        let sx = refl(x as isize + j as isize - 2, w2);
                        acc += 4.0 * k[i] * k[j] / 256.0 * up[sy * w2 + sx];
                    }
                }
                out[y * w2 + x] = acc;
            }
        }
        out
    }

    fn ramp4() -> Vec<f64> {
        (0..16).map(|i| (i % 4) as f64).collect()
    }

    #[test]
    fn kernel_validation() {
        assert!(Kernel1D::new(vec![0.25, 0.5, 0.25]).is_ok());
        assert!(Kernel1D::new(vec![0.5, 0.5]).is_err());
        assert!(Kernel1D::new(vec![0.2, 0.5, 0.2]).is_err());
        assert!(Kernel1D::new(vec![0.3, 0.5, 0.2]).is_err());
        let b = Kernel1D::burt();
        assert!((b.taps().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reduce_ramp_matches_direct_oracle() {
        let src = ramp4();
        let got = reduce_plane(&src, 4, 4, &Kernel1D::burt()).unwrap();
        let want = reduce_oracle(&src, 4, 4);
        // frozen oracle values: rows are [12/16, 30/16]
        assert_eq!(want, vec![0.75, 1.875, 0.75, 1.875]);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn expand_single_pixel_matches_oracle() {
        let got = expand_plane(&[1.0f64], 1, 1, &Kernel1D::burt());
        let want = expand_oracle(&[1.0], 1, 1);
        assert_eq!(want, vec![1.0; 4]);
        assert_eq!(got.len(), 4);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn expand_matches_oracle_on_random_plane() {
        let src: Vec<f64> = (0..35).map(|i| ((i * 37 % 11) as f64).sin()).collect();
        let got = expand_plane(&src, 7, 5, &Kernel1D::burt());
        let want = expand_oracle(&src, 7, 5);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn detail_of_ramp_composes_oracles() {
        let src = ramp4();
        let reduced = reduce_oracle(&src, 4, 4);
        let up = expand_oracle(&reduced, 2, 2);
        let want: Vec<f64> = src.iter().zip(&up).map(|(a, b)| a - b).collect();

        let img = RasterImage::new(4, 4, 1, src.iter().map(|&v| v as f32).collect(), 1.0).unwrap();
        let r = reduce(&img).unwrap();
        let d = detail(&img, &r).unwrap();
        for (g, w) in d.data().iter().zip(&want) {
            assert!((*g as f64 - w).abs() < 1e-6);
        }
    }

    #[test]
    fn constants_are_preserved() {
        let img = RasterImage::filled(8, 6, 2, 0.37);
        let r = reduce(&img).unwrap();
        assert_eq!((r.width(), r.height()), (4, 3));
        assert!(r.data().iter().all(|v| (v - 0.37).abs() <= 1e-6));
        let e = expand(&img);
        assert_eq!((e.width(), e.height()), (16, 12));
        assert!(e.data().iter().all(|v| (v - 0.37).abs() <= 1e-6));
    }

    #[test]
    fn odd_dimension_rejected() {
        let img = RasterImage::filled(5, 4, 1, 0.0);
        assert!(matches!(reduce(&img), Err(Error::Dimension(_))));
        assert!(matches!(
            decompose(&RasterImage::filled(12, 12, 1, 0.0), 3),
            Err(Error::Dimension(_))
        ));
        let small = RasterImage::filled(3, 3, 1, 0.0);
        assert!(matches!(detail(&img, &small), Err(Error::Dimension(_))));
    }

    #[test]
    fn shapes() {
        let img = RasterImage::filled(512, 512, 1, 0.5);
        assert_eq!(reduce(&img).unwrap().width(), 256);
        let small = RasterImage::filled(256, 256, 1, 0.5);
        assert_eq!(expand(&small).width(), 512);
        let st = decompose(&img, 2).unwrap();
        let lw: Vec<usize> = st.lowpass.iter().map(|l| l.width()).collect();
        let dw: Vec<usize> = st.details.iter().map(|d| d.width()).collect();
        assert_eq!(lw, vec![512, 256, 128]);
        assert_eq!(dw, vec![512, 256]);
        let zero = decompose(&img, 0).unwrap();
        assert_eq!(zero.lowpass.len(), 1);
        assert!(zero.details.is_empty());
    }

    #[test]
    fn detail_of_expansion_is_zero() {
        let x = RasterImage::new(3, 2, 1, vec![0.1, 0.5, 0.9, 0.3, 0.2, 0.7], 1.0).unwrap();
        let d = detail(&expand(&x), &x).unwrap();
        assert!(d.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gt_scale_approx_levels() {
        let data: Vec<f32> = (0..64).map(|i| ((i * 13) % 17) as f32 / 17.0).collect();
        let gt = RasterImage::new(8, 8, 1, data, 1.0).unwrap();
        let a = gt_scale_approx(&gt, 1).unwrap();
        assert_eq!(a.len(), 2);
        assert!(a[0]
            .data()
            .iter()
            .zip(gt.data())
            .all(|(x, y)| (x - y).abs() < 1e-6));
        assert_eq!(a[1], reduce(&gt).unwrap());
        let c = gt_scale_approx(&RasterImage::filled(16, 16, 2, 0.25), 2).unwrap();
        for level in c {
            assert!(level.data().iter().all(|v| (v - 0.25).abs() < 1e-6));
        }
    }

    #[test]
    fn expand_adjoint_inner_product() {
        let x: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).cos()).collect();
        let g: Vec<f64> = (0..48).map(|i| (i as f64 * 0.3).sin()).collect();
        let k = Kernel1D::burt();
        let ex = expand_plane(&x, 4, 3, &k);
        let atg = expand_plane_adjoint(&g, 8, 6, &k);
        let lhs: f64 = ex.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&atg).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
