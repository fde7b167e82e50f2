//! Reduced-scale (SAM, ERGAS, QAVE, SCC) and full-scale (D_lambda, D_s, QNR)
//! quality indices.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::raster::RasterImage;
use crate::tensor::mirror_index;
use crate::training::wald_degrade;

/// Side of the sliding window used by the Q index.
pub const Q_WINDOW: usize = 32;
/// Resolution ratio between pan and multispectral inputs.
pub const RESOLUTION_RATIO: usize = 4;

const DEGENERATE_EPS: f64 = 1e-12;

fn check_same(a: &RasterImage, b: &RasterImage, what: &str) -> Result<()> {
    if !a.same_dims(b) {
        return Err(Error::Shape(format!(
            "{what}: {}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.bands(),
            b.width(),
            b.height(),
            b.bands()
        )));
    }
    Ok(())
}

/// Mean spectral angle in degrees. Pixels where either vector is zero are skipped.
pub fn sam(fused: &RasterImage, reference: &RasterImage) -> Result<f64> {
    check_same(fused, reference, "sam")?;
    let bands = fused.bands();
    if bands < 2 {
        return Err(Error::Arity(format!(
            "sam needs at least 2 bands, got {bands}"
        )));
    }
    let n = fused.width() * fused.height();
    let (mut total, mut counted) = (0.0f64, 0usize);
    for i in 0..n {
        let (mut nv, mut nw) = (0.0f64, 0.0f64);
        for b in 0..bands {
            nv += (fused.band(b)[i] as f64).powi(2);
            nw += (reference.band(b)[i] as f64).powi(2);
        }
        if nv == 0.0 || nw == 0.0 {
            continue;
        }
        // angle = 2 atan(|v/|v| - w/|w|| / |v/|v| + w/|w||), exact for parallel vectors
        let (nv, nw) = (nv.sqrt(), nw.sqrt());
        let (mut diff, mut sum) = (0.0f64, 0.0f64);
        for b in 0..bands {
            let v = fused.band(b)[i] as f64 / nv;
            let w = reference.band(b)[i] as f64 / nw;
            diff += (v - w).powi(2);
            sum += (v + w).powi(2);
        }
        total += 2.0 * diff.sqrt().atan2(sum.sqrt());
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::DegenerateBand(
            "sam: every spectral vector is zero".into(),
        ));
    }
    Ok((total / counted as f64).to_degrees())
}

/// Relative dimensionless global error in synthesis for a 1/4 resolution ratio.
pub fn ergas(fused: &RasterImage, reference: &RasterImage) -> Result<f64> {
    check_same(fused, reference, "ergas")?;
    let bands = fused.bands();
    let mut acc = 0.0f64;
    for b in 0..bands {
        let (f, r) = (fused.band(b), reference.band(b));
        let n = r.len() as f64;
        let mean = r.iter().map(|&v| v as f64).sum::<f64>() / n;
        if mean == 0.0 {
            return Err(Error::DegenerateBand(format!(
                "ergas: band {b} has zero mean"
            )));
        }
        let mse = f
            .iter()
            .zip(r)
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum::<f64>()
            / n;
        acc += mse / (mean * mean);
    }
    Ok(100.0 / RESOLUTION_RATIO as f64 * (acc / bands as f64).sqrt())
}

/// Q of one window from its first and second moments.
///
/// Returns `None` when both variances vanish. When both means vanish the
/// luminance factor is taken as 1.
pub(crate) fn window_q(mx: f64, my: f64, vx: f64, vy: f64, cxy: f64) -> Option<f64> {
    let contrast = vx + vy;
    if contrast <= DEGENERATE_EPS {
        return None;
    }
    let lum_den = mx * mx + my * my;
    let lum = if lum_den <= DEGENERATE_EPS {
        1.0
    } else {
        2.0 * mx * my / lum_den
    };
    Some(2.0 * cxy / contrast * lum)
}

struct Integral {
    w: usize,
    data: Vec<f64>,
}

impl Integral {
    fn new(w: usize, h: usize, f: impl Fn(usize) -> f64) -> Self {
        let stride = w + 1;
        let mut data = vec![0.0f64; stride * (h + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += f(y * w + x);
                data[(y + 1) * stride + x + 1] = data[y * stride + x + 1] + row;
            }
        }
        Integral { w, data }
    }

    fn sum(&self, x0: usize, y0: usize, size: usize) -> f64 {
        let s = self.w + 1;
        let (x1, y1) = (x0 + size, y0 + size);
        self.data[y1 * s + x1] - self.data[y0 * s + x1] - self.data[y1 * s + x0]
            + self.data[y0 * s + x0]
    }
}

/// Universal image quality index of two planes, averaged over every
/// `window`×`window` window at stride 1.
pub fn q_index_plane(x: &[f32], y: &[f32], w: usize, h: usize, window: usize) -> Result<f64> {
    if x.len() != w * h || y.len() != w * h {
        return Err(Error::Length(format!(
            "q_index planes must hold {} samples, got {} and {}",
            w * h,
            x.len(),
            y.len()
        )));
    }
    if window == 0 || w < window || h < window {
        return Err(Error::Size(format!(
            "q_index window {window} does not fit a {w}x{h} image"
        )));
    }
    // Centering on the global means keeps the integral images well conditioned.
    let n = (w * h) as f64;
    let gx = x.iter().map(|&v| v as f64).sum::<f64>() / n;
    let gy = y.iter().map(|&v| v as f64).sum::<f64>() / n;
    let cx = |i: usize| x[i] as f64 - gx;
    let cy = |i: usize| y[i] as f64 - gy;
    let sx = Integral::new(w, h, cx);
    let sy = Integral::new(w, h, cy);
    let sxx = Integral::new(w, h, |i| cx(i) * cx(i));
    let syy = Integral::new(w, h, |i| cy(i) * cy(i));
    let sxy = Integral::new(w, h, |i| cx(i) * cy(i));
    let m = (window * window) as f64;
    let (mut total, mut counted) = (0.0f64, 0usize);
    for y0 in 0..=h - window {
        for x0 in 0..=w - window {
            let ax = sx.sum(x0, y0, window) / m;
            let ay = sy.sum(x0, y0, window) / m;
            let vx = (sxx.sum(x0, y0, window) / m - ax * ax).max(0.0);
            let vy = (syy.sum(x0, y0, window) / m - ay * ay).max(0.0);
            let cxy = sxy.sum(x0, y0, window) / m - ax * ay;
            if let Some(q) = window_q(ax + gx, ay + gy, vx, vy, cxy) {
                total += q;
                counted += 1;
            }
        }
    }
    if counted == 0 {
        return Err(Error::DegenerateBand(
            "q_index: every window has zero variance".into(),
        ));
    }
    Ok(total / counted as f64)
}

/// Q index of two single-band images.
pub fn q_index(x: &RasterImage, y: &RasterImage, window: usize) -> Result<f64> {
    check_same(x, y, "q_index")?;
    if x.bands() != 1 {
        return Err(Error::Shape(format!(
            "q_index expects single-band images, got {} bands",
            x.bands()
        )));
    }
    q_index_plane(x.band(0), y.band(0), x.width(), x.height(), window)
}

/// Per-band Q index between two images.
pub fn q_per_band(fused: &RasterImage, reference: &RasterImage) -> Result<Vec<f64>> {
    check_same(fused, reference, "qave")?;
    (0..fused.bands())
        .map(|b| {
            q_index_plane(
                fused.band(b),
                reference.band(b),
                fused.width(),
                fused.height(),
                Q_WINDOW,
            )
        })
        .collect()
}

/// Q index averaged over bands.
pub fn qave(fused: &RasterImage, reference: &RasterImage) -> Result<f64> {
    let q = q_per_band(fused, reference)?;
    Ok(q.iter().sum::<f64>() / q.len() as f64)
}

/// 3×3 Laplacian high-pass (8 at the center, -1 around it) with mirrored borders.
pub fn high_pass(plane: &[f32], w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 9.0 * plane[y * w + x] as f64;
            for dy in -1isize..=1 {
                let sy = mirror_index(y as isize + dy, h);
                for dx in -1isize..=1 {
                    let sx = mirror_index(x as isize + dx, w);
                    acc -= plane[sy * w + sx] as f64;
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&u, &v) in a.iter().zip(b) {
        let (du, dv) = (u - ma, v - mb);
        sab += du * dv;
        saa += du * du;
        sbb += dv * dv;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some(sab / (saa.sqrt() * sbb.sqrt()))
}

/// Per-band spatial correlation coefficient.
pub fn scc_per_band(fused: &RasterImage, reference: &RasterImage) -> Result<Vec<f64>> {
    check_same(fused, reference, "scc")?;
    let (w, h) = (fused.width(), fused.height());
    (0..fused.bands())
        .map(|b| {
            let hf = high_pass(fused.band(b), w, h);
            let hr = high_pass(reference.band(b), w, h);
            pearson(&hf, &hr).ok_or_else(|| {
                Error::DegenerateBand(format!("scc: band {b} has no high-frequency content"))
            })
        })
        .collect()
}

/// Spatial correlation coefficient averaged over bands.
pub fn scc(fused: &RasterImage, reference: &RasterImage) -> Result<f64> {
    let s = scc_per_band(fused, reference)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

fn check_ratio(full: &RasterImage, low: &RasterImage, what: &str) -> Result<()> {
    if full.width() != RESOLUTION_RATIO * low.width()
        || full.height() != RESOLUTION_RATIO * low.height()
    {
        return Err(Error::Shape(format!(
            "{what}: {}x{} is not {RESOLUTION_RATIO}x {}x{}",
            full.width(),
            full.height(),
            low.width(),
            low.height()
        )));
    }
    Ok(())
}

fn inter_band_q(img: &RasterImage) -> Result<Vec<f64>> {
    let b = img.bands();
    let mut q = vec![0.0; b * b];
    for i in 0..b {
        for j in i + 1..b {
            let v = q_index_plane(
                img.band(i),
                img.band(j),
                img.width(),
                img.height(),
                Q_WINDOW,
            )?;
            q[i * b + j] = v;
            q[j * b + i] = v;
        }
    }
    Ok(q)
}

/// Spectral distortion: mean absolute change of inter-band Q from the
/// multispectral input to the fused product.
pub fn d_lambda(fused: &RasterImage, ms: &RasterImage) -> Result<f64> {
    check_ratio(fused, ms, "d_lambda")?;
    let b = fused.bands();
    if b < 2 || ms.bands() != b {
        return Err(Error::Arity(format!(
            "d_lambda needs matching band counts of at least 2, got {b} and {}",
            ms.bands()
        )));
    }
    let qf = inter_band_q(fused)?;
    let qm = inter_band_q(ms)?;
    let total: f64 = qf.iter().zip(&qm).map(|(a, c)| (a - c).abs()).sum();
    Ok(total / (b * (b - 1)) as f64)
}

/// Spatial distortion: mean absolute change of each band's Q against the pan
/// image between the two resolutions.
pub fn d_s(fused: &RasterImage, ms: &RasterImage, pan: &RasterImage) -> Result<f64> {
    check_ratio(fused, ms, "d_s")?;
    if pan.width() != fused.width() || pan.height() != fused.height() || pan.bands() != 1 {
        return Err(Error::Shape(format!(
            "d_s: pan must be single-band {}x{}, got {}x{}x{}",
            fused.width(),
            fused.height(),
            pan.width(),
            pan.height(),
            pan.bands()
        )));
    }
    if ms.bands() != fused.bands() {
        return Err(Error::Shape(format!(
            "d_s: fused has {} bands, ms has {}",
            fused.bands(),
            ms.bands()
        )));
    }
    let pan_low = wald_degrade(pan, RESOLUTION_RATIO)?;
    let mut total = 0.0;
    for b in 0..fused.bands() {
        let high = q_index_plane(
            fused.band(b),
            pan.band(0),
            pan.width(),
            pan.height(),
            Q_WINDOW,
        )?;
        let low = q_index_plane(
            ms.band(b),
            pan_low.band(0),
            ms.width(),
            ms.height(),
            Q_WINDOW,
        )?;
        total += (high - low).abs();
    }
    Ok(total / fused.bands() as f64)
}

/// Quality with no reference, `(1 - d_lambda)(1 - d_s)`.
pub fn qnr(d_lambda: f64, d_s: f64) -> f64 {
    (1.0 - d_lambda) * (1.0 - d_s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Context {
    Reduced,
    Full,
}

impl Context {
    pub fn keys(self) -> &'static [&'static str] {
        match self {
            Context::Reduced => &["QAVE", "SAM", "ERGAS", "SCC"],
            Context::Full => &["D_lambda", "D_s", "QNR"],
        }
    }
}

/// Named scalar results of one evaluation, in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub context: Context,
    pub values: Vec<(String, f64)>,
    /// Per-band breakdowns, e.g. `("Q", [..])`.
    pub per_band: Vec<(String, Vec<f64>)>,
}

impl MetricsReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.iter().find(|(k, _)| k == name).map(|&(_, v)| v)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        for (k, v) in &self.values {
            let _ = writeln!(s, "{k},{v}");
        }
        s
    }

    /// Parses the output of [`MetricsReport::to_csv`]. Per-band detail is not
    /// part of the CSV and comes back empty.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some("metric,value") {
            return Err(Error::Format(
                "metrics CSV must start with \"metric,value\"".into(),
            ));
        }
        let mut values = Vec::new();
        for line in lines {
            let (k, v) = line
                .split_once(',')
                .ok_or_else(|| Error::Format(format!("malformed metrics row {line:?}")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("bad metric value in {line:?}")))?;
            values.push((k.trim().to_string(), v));
        }
        let context = [Context::Reduced, Context::Full]
            .into_iter()
            .find(|c| {
                c.keys().len() == values.len()
                    && c.keys().iter().zip(&values).all(|(a, (b, _))| a == b)
            })
            .ok_or_else(|| Error::Format("metrics CSV has an unknown key set".into()))?;
        Ok(MetricsReport {
            context,
            values,
            per_band: Vec::new(),
        })
    }

    /// Markdown table with one row per labelled report, metrics as columns.
    pub fn markdown_table(rows: &[(&str, &MetricsReport)]) -> Result<String> {
        let context = match rows.first() {
            Some((_, r)) => r.context,
            None => return Ok(String::new()),
        };
        if rows.iter().any(|(_, r)| r.context != context) {
            return Err(Error::Shape(
                "cannot tabulate reduced and full reports together".into(),
            ));
        }
        let keys = context.keys();
        let mut s = String::from("| Method |");
        for k in keys {
            let _ = write!(s, " {k} |");
        }
        s.push_str("\n|---|");
        s.push_str(&"---:|".repeat(keys.len()));
        s.push('\n');
        for (label, r) in rows {
            let _ = write!(s, "| {label} |");
            for k in keys {
                let _ = write!(s, " {:.4} |", r.get(k).unwrap_or(f64::NAN));
            }
            s.push('\n');
        }
        Ok(s)
    }

    pub fn to_markdown(&self, label: &str) -> String {
        Self::markdown_table(&[(label, self)]).expect("single report")
    }

    /// Metric-wise mean of reports sharing a context. QNR is averaged per image,
    /// not recomposed from the averaged distortions.
    pub fn mean(reports: &[MetricsReport]) -> Result<MetricsReport> {
        let first = reports
            .first()
            .ok_or_else(|| Error::Arity("cannot average zero reports".into()))?;
        if reports.iter().any(|r| r.context != first.context) {
            return Err(Error::Shape(
                "cannot average reduced and full reports together".into(),
            ));
        }
        let n = reports.len() as f64;
        let values = first
            .context
            .keys()
            .iter()
            .map(|&k| {
                let sum: f64 = reports.iter().map(|r| r.get(k).unwrap_or(f64::NAN)).sum();
                (k.to_string(), sum / n)
            })
            .collect();
        Ok(MetricsReport {
            context: first.context,
            values,
            per_band: Vec::new(),
        })
    }
}

/// Reference-based evaluation against a ground truth at the same resolution.
pub fn evaluate_reduced(fused: &RasterImage, gt: &RasterImage) -> Result<MetricsReport> {
    let q = q_per_band(fused, gt)?;
    let s = scc_per_band(fused, gt)?;
    let qave = q.iter().sum::<f64>() / q.len() as f64;
    let scc = s.iter().sum::<f64>() / s.len() as f64;
    Ok(MetricsReport {
        context: Context::Reduced,
        values: vec![
            ("QAVE".into(), qave),
            ("SAM".into(), sam(fused, gt)?),
            ("ERGAS".into(), ergas(fused, gt)?),
            ("SCC".into(), scc),
        ],
        per_band: vec![("Q".into(), q), ("SCC".into(), s)],
    })
}

/// No-reference evaluation at the pan resolution.
pub fn evaluate_full(
    fused: &RasterImage,
    ms: &RasterImage,
    pan: &RasterImage,
) -> Result<MetricsReport> {
    let dl = d_lambda(fused, ms)?;
    let ds = d_s(fused, ms, pan)?;
    Ok(MetricsReport {
        context: Context::Full,
        values: vec![
            ("D_lambda".into(), dl),
            ("D_s".into(), ds),
            ("QNR".into(), qnr(dl, ds)),
        ],
        per_band: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(w: usize, h: usize, b: usize, seed: u64) -> RasterImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..w * h * b).map(|_| rng.gen_range(0.05..0.95)).collect();
        RasterImage::new(w, h, b, data, 2047.0).unwrap()
    }

    // Straight per-window statistics, no integral images.
    fn naive_q(x: &[f32], y: &[f32], w: usize, h: usize, win: usize) -> f64 {
        let m = (win * win) as f64;
        let (mut total, mut n) = (0.0, 0);
        for y0 in 0..=h - win {
            for x0 in 0..=w - win {
                let mut px = Vec::new();
                let mut py = Vec::new();
                for yy in y0..y0 + win {
                    for xx in x0..x0 + win {
                        px.push(x[yy * w + xx] as f64);
                        py.push(y[yy * w + xx] as f64);
                    }
                }
                let mx = px.iter().sum::<f64>() / m;
                let my = py.iter().sum::<f64>() / m;
                let vx = px.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / m;
                let vy = py.iter().map(|v| (v - my).powi(2)).sum::<f64>() / m;
                let cxy = px
                    .iter()
                    .zip(&py)
                    .map(|(a, b)| (a - mx) * (b - my))
                    .sum::<f64>()
                    / m;
                if vx + vy <= 1e-12 {
                    continue;
                }
                let lum = if mx * mx + my * my <= 1e-12 {
                    1.0
                } else {
                    2.0 * mx * my / (mx * mx + my * my)
                };
                total += 2.0 * cxy / (vx + vy) * lum;
                n += 1;
            }
        }
        total / n as f64
    }

    #[test]
    fn q_matches_naive_oracle_40x40() {
        let x = noise(40, 40, 1, 1);
        let mut y = noise(40, 40, 1, 2);
        for (v, &u) in y.band_mut(0).iter_mut().zip(x.band(0)) {
            *v = 0.6 * u + 0.4 * *v;
        }
        let fast = q_index(&x, &y, 32).unwrap();
        let slow = naive_q(x.band(0), y.band(0), 40, 40, 32);
        assert!((fast - slow).abs() <= 1e-6, "{fast} vs {slow}");
        assert!((fast - q_index(&y, &x, 32).unwrap()).abs() <= 1e-9);
    }

    #[test]
    fn q_identity_and_anticorrelation() {
        let x = noise(36, 36, 1, 3);
        assert!((q_index(&x, &x, 32).unwrap() - 1.0).abs() < 1e-9);
        let checker: Vec<f32> = (0..36 * 36)
            .map(|i| {
                if (i / 36 + i % 36) % 2 == 0 {
                    0.5
                } else {
                    -0.5
                }
            })
            .collect();
        let neg: Vec<f32> = checker.iter().map(|v| -v).collect();
        let q = q_index_plane(&checker, &neg, 36, 36, 32).unwrap();
        assert!((q + 1.0).abs() < 1e-9, "{q}");
    }

    #[test]
    fn q_errors() {
        let x = noise(20, 20, 1, 1);
        assert!(matches!(q_index(&x, &x, 32), Err(Error::Size(_))));
        let flat = RasterImage::filled(32, 32, 1, 0.3);
        assert!(matches!(
            q_index(&flat, &flat, 32),
            Err(Error::DegenerateBand(_))
        ));
    }

    #[test]
    fn q_skips_flat_windows() {
        // left half flat in both, right half textured
        let mut x = noise(64, 32, 1, 5);
        for y in 0..32 {
            for xx in 0..32 {
                x.band_mut(0)[y * 64 + xx] = 0.4;
            }
        }
        let q = q_index(&x, &x, 32).unwrap();
        assert!(q.is_finite() && (q - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sam_examples() {
        let r = noise(4, 4, 3, 1);
        assert!(sam(&r, &r).unwrap().abs() < 1e-6);
        let mut doubled = r.clone();
        doubled.band_mut(0).iter_mut().for_each(|v| *v *= 2.0);
        doubled.band_mut(1).iter_mut().for_each(|v| *v *= 2.0);
        doubled.band_mut(2).iter_mut().for_each(|v| *v *= 2.0);
        assert!(sam(&doubled, &r).unwrap().abs() < 1e-3);

        let a = RasterImage::new(2, 1, 2, vec![1.0, 1.0, 0.0, 1.0], 1.0).unwrap();
        let b = RasterImage::new(2, 1, 2, vec![0.0, 1.0, 1.0, 1.0], 1.0).unwrap();
        assert!((sam(&b, &a).unwrap() - 45.0).abs() < 1e-9);
        assert!(matches!(
            sam(&noise(4, 4, 1, 1), &noise(4, 4, 1, 2)),
            Err(Error::Arity(_))
        ));
    }

    #[test]
    fn ergas_closed_form() {
        let b = 4;
        let r = noise(8, 8, b, 9);
        let mut f = r.clone();
        let d = 0.05f32;
        f.band_mut(2).iter_mut().for_each(|v| *v += d);
        let m = r.band(2).iter().map(|&v| v as f64).sum::<f64>() / 64.0;
        let expected = 25.0 * d as f64 / (m * (b as f64).sqrt());
        assert!((ergas(&f, &r).unwrap() - expected).abs() < 1e-6);
        assert!(ergas(&r, &r).unwrap() == 0.0);
        let zero = RasterImage::filled(4, 4, 1, 0.0);
        assert!(matches!(ergas(&zero, &zero), Err(Error::DegenerateBand(_))));
    }

    #[test]
    fn scc_properties() {
        let r = noise(16, 16, 2, 4);
        assert!((scc(&r, &r).unwrap() - 1.0).abs() < 1e-9);
        let mut shifted = r.clone();
        shifted.band_mut(0).iter_mut().for_each(|v| *v += 0.1);
        shifted.band_mut(1).iter_mut().for_each(|v| *v += 0.1);
        assert!((scc(&shifted, &r).unwrap() - 1.0).abs() < 1e-6);
        let flat = RasterImage::filled(16, 16, 2, 0.5);
        assert!(matches!(scc(&flat, &r), Err(Error::DegenerateBand(_))));
    }

    #[test]
    fn scc_matches_direct_oracle() {
        let (w, h) = (9, 7);
        let f = noise(w, h, 1, 10);
        let r = noise(w, h, 1, 11);
        let refl = |i: isize, n: usize| -> usize {
            if i < 0 {
                (-i) as usize
            } else if i as usize >= n {
                2 * (n - 1) - i as usize
            } else {
                i as usize
            }
        };
        let hp = |p: &[f32]| -> Vec<f64> {
            let mut out = Vec::new();
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let mut s = 0.0;
                    for dy in -1..=1 {
                        for dx in -1..=1 {
                            let k = if dx == 0 && dy == 0 { 8.0 } else { -1.0 };
                            s += k * p[refl(y + dy, h) * w + refl(x + dx, w)] as f64;
                        }
                    }
                    out.push(s);
                }
            }
            out
        };
        let (a, b) = (hp(f.band(0)), hp(r.band(0)));
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        let expected = cov / (va * vb).sqrt();
        assert!((scc(&f, &r).unwrap() - expected).abs() <= 1e-6);
    }

    #[test]
    fn qnr_examples() {
        assert_eq!(qnr(0.0, 0.0), 1.0);
        assert!((qnr(0.0504, 0.1237) - 0.8321).abs() < 5e-5);
        assert_eq!(qnr(1.0, 0.3), 0.0);
    }

    #[test]
    fn d_s_zero_when_bands_are_pan() {
        let pan = noise(128, 128, 1, 6);
        let low = wald_degrade(&pan, 4).unwrap();
        let fused = RasterImage::from_planes(
            128,
            128,
            &[pan.band(0).to_vec(), pan.band(0).to_vec()],
            2047.0,
        )
        .unwrap();
        let ms = RasterImage::from_planes(
            32,
            32,
            &[low.band(0).to_vec(), low.band(0).to_vec()],
            2047.0,
        )
        .unwrap();
        assert!(d_s(&fused, &ms, &pan).unwrap().abs() < 1e-12);
    }

    #[test]
    fn d_lambda_bounds_and_arity() {
        let fused = noise(128, 128, 3, 7);
        let ms = noise(32, 32, 3, 8);
        let d = d_lambda(&fused, &ms).unwrap();
        assert!((0.0..=1.0).contains(&d));
        assert!(matches!(
            d_lambda(&noise(128, 128, 1, 1), &noise(32, 32, 1, 1)),
            Err(Error::Arity(_))
        ));
        assert!(matches!(
            d_lambda(&fused, &noise(30, 30, 3, 1)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn report_round_trips_csv() {
        let r = noise(40, 40, 3, 12);
        let f = noise(40, 40, 3, 13);
        let rep = evaluate_reduced(&f, &r).unwrap();
        let keys: Vec<_> = rep.values.iter().map(|(k, _)| k.as_str()).collect();
        assert_eq!(keys, Context::Reduced.keys());
        let back = MetricsReport::from_csv(&rep.to_csv()).unwrap();
        assert_eq!(back.values, rep.values);
        assert_eq!(back.context, Context::Reduced);
        assert!(MetricsReport::from_csv("metric,value\nlr,1\n").is_err());
        let md = rep.to_markdown("ours");
        assert!(md.starts_with("| Method | QAVE | SAM | ERGAS | SCC |"));
    }
}
