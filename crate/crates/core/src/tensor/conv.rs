use super::{matmul, mirror_index, Real, Tensor};
use crate::error::{Error, Result};

/// Weights `(C_out, C_in, k_h, k_w)` and bias `(C_out)` of one convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    c_out: usize,
    c_in: usize,
    kh: usize,
    kw: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvParams<T> {
    pub fn new(
        c_out: usize,
        c_in: usize,
        kh: usize,
        kw: usize,
        weights: Vec<T>,
        bias: Vec<T>,
    ) -> Result<Self> {
        if kh.is_multiple_of(2) || kw.is_multiple_of(2) {
            return Err(Error::Shape(format!("kernel {kh}x{kw} must be odd")));
        }
        if weights.len() != c_out * c_in * kh * kw || bias.len() != c_out {
            return Err(Error::Shape(format!(
                "conv {c_out}x{c_in}x{kh}x{kw} got {} weights and {} biases",
                weights.len(),
                bias.len()
            )));
        }
        Ok(ConvParams {
            c_out,
            c_in,
            kh,
            kw,
            weights,
            bias,
        })
    }

    pub fn zeros(c_out: usize, c_in: usize, kh: usize, kw: usize) -> Self {
        assert!(kh % 2 == 1 && kw % 2 == 1, "kernel {kh}x{kw} must be odd");
        ConvParams {
            c_out,
            c_in,
            kh,
            kw,
            weights: vec![T::zero(); c_out * c_in * kh * kw],
            bias: vec![T::zero(); c_out],
        }
    }

    /// `(C_out, C_in, k_h, k_w)`.
    pub fn shape(&self) -> [usize; 4] {
        [self.c_out, self.c_in, self.kh, self.kw]
    }

    pub fn c_out(&self) -> usize {
        self.c_out
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn cast<U: Real>(&self) -> ConvParams<U> {
        let cast = |v: &[T]| {
            v.iter()
                .map(|x| U::from_f64_lossy(x.to_f64_lossy()))
                .collect()
        };
        ConvParams {
            c_out: self.c_out,
            c_in: self.c_in,
            kh: self.kh,
            kw: self.kw,
            weights: cast(&self.weights),
            bias: cast(&self.bias),
        }
    }

    pub fn zeros_like(&self) -> Self {
        ConvParams::zeros(self.c_out, self.c_in, self.kh, self.kw)
    }

    pub fn add_assign(&mut self, other: &ConvParams<T>) {
        assert_eq!(self.shape(), other.shape(), "conv parameter shape mismatch");
        for (a, &b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, &b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }

    fn taps(&self) -> usize {
        self.c_in * self.kh * self.kw
    }
}

/// Gathers mirrored `k_h x k_w` neighbourhoods into a `(C_in k_h k_w) x (H W)` matrix.
fn im2col<T: Real>(x: &[T], c_in: usize, h: usize, w: usize, kh: usize, kw: usize, cols: &mut [T]) {
    let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
    let hw = h * w;
    let col_index: Vec<Vec<usize>> = (0..kw)
        .map(|j| {
            (0..w)
                .map(|xx| mirror_index(xx as isize + j as isize - pw, w))
                .collect()
        })
        .collect();
    let mut r = 0;
    for c in 0..c_in {
        let plane = &x[c * hw..(c + 1) * hw];
        for i in 0..kh {
            for cols_j in &col_index {
                let dst = &mut cols[r * hw..(r + 1) * hw];
                for y in 0..h {
                    let sy = mirror_index(y as isize + i as isize - ph, h);
                    let src = &plane[sy * w..(sy + 1) * w];
                    let out = &mut dst[y * w..(y + 1) * w];
                    for (o, &sx) in out.iter_mut().zip(cols_j) {
                        *o = src[sx];
                    }
                }
                r += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back through the mirror map.
fn col2im<T: Real>(
    cols: &[T],
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    dx: &mut [T],
) {
    let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
    let hw = h * w;
    let col_index: Vec<Vec<usize>> = (0..kw)
        .map(|j| {
            (0..w)
                .map(|xx| mirror_index(xx as isize + j as isize - pw, w))
                .collect()
        })
        .collect();
    let mut r = 0;
    for c in 0..c_in {
        let plane = &mut dx[c * hw..(c + 1) * hw];
        for i in 0..kh {
            for cols_j in &col_index {
                let src = &cols[r * hw..(r + 1) * hw];
                for y in 0..h {
                    let sy = mirror_index(y as isize + i as isize - ph, h);
                    let row = &mut plane[sy * w..(sy + 1) * w];
                    for (&g, &sx) in src[y * w..(y + 1) * w].iter().zip(cols_j) {
                        row[sx] += g;
                    }
                }
                r += 1;
            }
        }
    }
}

fn check_input<T: Real>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<()> {
    if x.channels() != p.c_in {
        return Err(Error::Shape(format!(
            "conv expects {} input channels, got {}",
            p.c_in,
            x.channels()
        )));
    }
    Ok(())
}

/// Same-size 2-D cross-correlation with mirror boundary extension of
/// `(k - 1) / 2` samples per side, plus bias.
pub fn conv2d<T: Real>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    check_input(x, p)?;
    let [n, _, h, w] = x.shape();
    let hw = h * w;
    let mut out = Tensor::zeros([n, p.c_out, h, w]);
    let pointwise = p.kh == 1 && p.kw == 1;
    let mut cols = if pointwise {
        Vec::new()
    } else {
        vec![T::zero(); p.taps() * hw]
    };
    for b in 0..n {
        let dst = out.item_mut(b);
        for (o, &bias) in p.bias.iter().enumerate() {
            dst[o * hw..(o + 1) * hw].fill(bias);
        }
        let rhs: &[T] = if pointwise {
            x.item(b)
        } else {
            im2col(x.item(b), p.c_in, h, w, p.kh, p.kw, &mut cols);
            &cols
        };
        matmul(
            p.c_out,
            p.taps(),
            hw,
            &p.weights,
            false,
            rhs,
            false,
            dst,
            true,
        );
    }
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to its input and its parameters.
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    p: &ConvParams<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, ConvParams<T>)> {
    check_input(x, p)?;
    let [n, _, h, w] = x.shape();
    if grad_out.shape() != [n, p.c_out, h, w] {
        return Err(Error::Shape(format!(
            "conv output gradient has shape {:?}, expected {:?}",
            grad_out.shape(),
            [n, p.c_out, h, w]
        )));
    }
    let hw = h * w;
    let taps = p.taps();
    let pointwise = p.kh == 1 && p.kw == 1;
    let mut dx = Tensor::zeros(x.shape());
    let mut dp = p.zeros_like();
    let mut cols = vec![T::zero(); if pointwise { 0 } else { taps * hw }];
    let mut dcols = vec![T::zero(); if pointwise { 0 } else { taps * hw }];
    let mut dbias = vec![0.0f64; p.c_out];
    for b in 0..n {
        let dy = grad_out.item(b);
        for (o, db) in dbias.iter_mut().enumerate() {
            *db += dy[o * hw..(o + 1) * hw]
                .iter()
                .map(|v| v.to_f64_lossy())
                .sum::<f64>();
        }
        if pointwise {
            matmul(
                p.c_out,
                hw,
                taps,
                dy,
                false,
                x.item(b),
                true,
                &mut dp.weights,
                true,
            );
            matmul(
                taps,
                p.c_out,
                hw,
                &p.weights,
                true,
                dy,
                false,
                dx.item_mut(b),
                false,
            );
        } else {
            im2col(x.item(b), p.c_in, h, w, p.kh, p.kw, &mut cols);
            matmul(
                p.c_out,
                hw,
                taps,
                dy,
                false,
                &cols,
                true,
                &mut dp.weights,
                true,
            );
            matmul(
                taps, p.c_out, hw, &p.weights, true, dy, false, &mut dcols, false,
            );
            col2im(&dcols, p.c_in, h, w, p.kh, p.kw, dx.item_mut(b));
        }
    }
    for (dst, v) in dp.bias.iter_mut().zip(dbias) {
        *dst = T::from_f64_lossy(v);
    }
    Ok((dx, dp))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop cross-correlation with explicit mirror padding.
    fn naive_conv(x: &Tensor<f64>, p: &ConvParams<f64>) -> Tensor<f64> {
        let [n, c_in, h, w] = x.shape();
        let [c_out, _, kh, kw] = p.shape();
        let mut out = Tensor::zeros([n, c_out, h, w]);
        for b in 0..n {
            for o in 0..c_out {
                for y in 0..h {
                    for xx in 0..w {
                        let mut acc = p.bias[o];
                        for c in 0..c_in {
                            for i in 0..kh {
                                for j in 0..kw {
                                    let sy = y as isize + i as isize - (kh / 2) as isize;
                                    let sx = xx as isize + j as isize - (kw / 2) as isize;
                                    let sy = reflect(sy, h);
                                    let sx = reflect(sx, w);
                                    acc += p.weights[((o * c_in + c) * kh + i) * kw + j]
                                        * x.plane(b, c)[sy * w + sx];
                                }
                            }
                        }
                        out.plane_mut(b, o)[y * w + xx] = acc;
                    }
                }
            }
        }
        out
    }

    // independent single-fold reflection, valid while the pad is smaller than the size
    fn reflect(i: isize, n: usize) -> usize {
        let n = n as isize;
        let r = if i < 0 {
            -i
        } else if i >= n {
            2 * (n - 1) - i
        } else {
            i
        };
        r as usize
    }

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }

    #[test]
    fn identity_and_bias_only() {
        let x = Tensor::from_vec([1, 1, 2, 3], vec![1.0f32, -2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let id = ConvParams::new(1, 1, 1, 1, vec![1.0], vec![0.0]).unwrap();
        assert_eq!(conv2d(&x, &id).unwrap(), x);
        let bias = ConvParams::new(1, 1, 3, 3, vec![0.0; 9], vec![7.0]).unwrap();
        assert!(conv2d(&x, &bias).unwrap().data().iter().all(|&v| v == 7.0));
    }

    #[test]
    fn box_filter_on_1_to_9() {
        let x = Tensor::from_vec([1, 1, 3, 3], (1..=9).map(|v| v as f64).collect()).unwrap();
        let p = ConvParams::new(1, 1, 3, 3, vec![1.0 / 9.0; 9], vec![0.0]).unwrap();
        let y = conv2d(&x, &p).unwrap();
        assert!((y.data()[4] - 5.0).abs() < 1e-12);
        // Mirror padding: the top-left window is rows/cols {1,0,1} of the grid
        // {5,4,5 / 2,1,2 / 5,4,5} -> 33 / 9.
        let oracle = naive_conv(&x, &p);
        assert!((oracle.data()[0] - 33.0 / 9.0).abs() < 1e-12);
        assert!(y.max_abs_diff(&oracle) < 1e-12);
    }

    #[test]
    fn matches_naive_oracle_multichannel() {
        let mut s = 7u64;
        let x = Tensor::from_vec([2, 3, 6, 5], (0..180).map(|_| lcg(&mut s)).collect()).unwrap();
        let p = ConvParams::new(
            4,
            3,
            5,
            3,
            (0..180).map(|_| lcg(&mut s)).collect(),
            (0..4).map(|_| lcg(&mut s)).collect(),
        )
        .unwrap();
        let y = conv2d(&x, &p).unwrap();
        assert!(y.max_abs_diff(&naive_conv(&x, &p)) < 1e-12);
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let x = Tensor::<f32>::zeros([1, 2, 4, 4]);
        let p = ConvParams::<f32>::zeros(1, 3, 3, 3);
        assert!(matches!(conv2d(&x, &p), Err(Error::Shape(_))));
        assert!(ConvParams::<f32>::new(1, 1, 2, 3, vec![0.0; 6], vec![0.0]).is_err());
    }

    #[test]
    fn linear_in_input() {
        let mut s = 99u64;
        let shape = [1, 2, 7, 7];
        let a = Tensor::from_vec(shape, (0..98).map(|_| lcg(&mut s)).collect()).unwrap();
        let b = Tensor::from_vec(shape, (0..98).map(|_| lcg(&mut s)).collect()).unwrap();
        let p = ConvParams::new(
            3,
            2,
            5,
            5,
            (0..150).map(|_| lcg(&mut s)).collect(),
            vec![0.0; 3],
        )
        .unwrap();
        let combo = Tensor::from_vec(
            shape,
            a.data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| 2.0 * x - 0.5 * y)
                .collect(),
        )
        .unwrap();
        let ya = conv2d(&a, &p).unwrap();
        let yb = conv2d(&b, &p).unwrap();
        let yc = conv2d(&combo, &p).unwrap();
        for ((c, a), b) in yc.data().iter().zip(ya.data()).zip(yb.data()) {
            assert!((c - (2.0 * a - 0.5 * b)).abs() < 1e-5);
        }
    }

    #[test]
    fn weight_gradient_of_sum_is_window_sum() {
        // d(sum y)/d w[c,i,j] = sum over pixels of the mirrored input window
        let mut s = 3u64;
        let x = Tensor::from_vec([1, 1, 4, 5], (0..20).map(|_| lcg(&mut s)).collect()).unwrap();
        let p = ConvParams::new(1, 1, 3, 3, vec![0.1; 9], vec![0.0]).unwrap();
        let ones = Tensor::full([1, 1, 4, 5], 1.0);
        let (_, dp) = conv2d_backward(&x, &p, &ones).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for y in 0..4 {
                    for xx in 0..5 {
                        let sy = reflect(y as isize + i as isize - 1, 4);
                        let sx = reflect(xx as isize + j as isize - 1, 5);
                        acc += x.data()[sy * 5 + sx];
                    }
                }
                assert!((dp.weights[i * 3 + j] - acc).abs() < 1e-12);
            }
        }
        assert!((dp.bias[0] - 20.0).abs() < 1e-12);
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <conv(x), g> - bias term == <x, dx(g)> for a linear map
        let mut s = 11u64;
        let x = Tensor::from_vec([1, 2, 3, 4], (0..24).map(|_| lcg(&mut s)).collect()).unwrap();
        let g = Tensor::from_vec([1, 2, 3, 4], (0..24).map(|_| lcg(&mut s)).collect()).unwrap();
        let p = ConvParams::new(
            2,
            2,
            5,
            5,
            (0..100).map(|_| lcg(&mut s)).collect(),
            vec![0.0; 2],
        )
        .unwrap();
        let y = conv2d(&x, &p).unwrap();
        let (dx, _) = conv2d_backward(&x, &p, &g).unwrap();
        let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(dx.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }
}
