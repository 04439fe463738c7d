//! Image quality metrics and the differentiable losses built from them.
//!
//! SSIM uses an 11×11 Gaussian window (σ = 1.5) over the valid region with
//! `C1 = (0.01·peak)²`, `C2 = (0.03·peak)²`, peak 1, averaged over channels.
//! The multi-scale variant multiplies the contrast-structure terms of the two
//! finer scales with the full SSIM of the coarsest (2× box downsampling, no
//! per-scale exponents).

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capture::CameraId;
use crate::frame::RenderedFrame;

/// Reported PSNR for identical images.
pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const MS_SSIM_SCALES: usize = 3;
/// Smallest side that supports every multi-scale level.
pub const MS_SSIM_MIN_SIDE: u32 = 44;

const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("image shapes differ: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(u32, u32, u32, u32),
    #[error("image {0}x{1} is smaller than the {SSIM_WINDOW}px SSIM window")]
    TooSmall(u32, u32),
    #[error("peak must be positive")]
    BadPeak,
    #[error("report io: {0}")]
    Io(String),
}

fn check_shapes(a: &RenderedFrame, b: &RenderedFrame) -> Result<(), MetricError> {
    if a.width != b.width || a.height != b.height || a.pixels.len() != b.pixels.len() {
        return Err(MetricError::ShapeMismatch(a.width, a.height, b.width, b.height));
    }
    Ok(())
}

pub fn mse(a: &RenderedFrame, b: &RenderedFrame) -> Result<f64, MetricError> {
    check_shapes(a, b)?;
    let n = a.pixels.len() as f64;
    Ok(a.pixels
        .iter()
        .zip(&b.pixels)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n)
}

/// `10·log10(peak² / MSE)`, or [`PSNR_CAP`] when the images are identical.
pub fn psnr(a: &RenderedFrame, b: &RenderedFrame, peak: f64) -> Result<f64, MetricError> {
    if !(peak > 0.0) {
        return Err(MetricError::BadPeak);
    }
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak * peak / m).log10()).min(PSNR_CAP))
}

/// Normalized 1D Gaussian window.
pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// A single-channel image.
#[derive(Clone, Debug)]
struct Plane {
    w: usize,
    h: usize,
    data: Vec<f64>,
}

impl Plane {
    fn zeros(w: usize, h: usize) -> Self {
        Self {
            w,
            h,
            data: vec![0.0; w * h],
        }
    }

    fn map2(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane {
            w: self.w,
            h: self.h,
            data: self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect(),
        }
    }

    /// Valid-region separable correlation with the SSIM window.
    fn filter(&self, k: &[f64; SSIM_WINDOW]) -> Plane {
        let ow = self.w - SSIM_WINDOW + 1;
        let oh = self.h - SSIM_WINDOW + 1;
        let mut tmp = Plane::zeros(ow, self.h);
        for y in 0..self.h {
            let row = &self.data[y * self.w..(y + 1) * self.w];
            for x in 0..ow {
                tmp.data[y * ow + x] = k.iter().zip(&row[x..x + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
            }
        }
        let mut out = Plane::zeros(ow, oh);
        for y in 0..oh {
            for x in 0..ow {
                let mut s = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    s += kv * tmp.data[(y + i) * ow + x];
                }
                out.data[y * ow + x] = s;
            }
        }
        out
    }

    /// Adjoint of [`Plane::filter`] back to a `w×h` plane.
    fn filter_adjoint(&self, k: &[f64; SSIM_WINDOW], w: usize, h: usize) -> Plane {
        let (ow, oh) = (self.w, self.h);
        let mut tmp = Plane::zeros(ow, h);
        for y in 0..oh {
            for x in 0..ow {
                let g = self.data[y * ow + x];
                for (i, kv) in k.iter().enumerate() {
                    tmp.data[(y + i) * ow + x] += kv * g;
                }
            }
        }
        let mut out = Plane::zeros(w, h);
        for y in 0..h {
            for x in 0..ow {
                let g = tmp.data[y * ow + x];
                let row = &mut out.data[y * w + x..y * w + x + SSIM_WINDOW];
                for (o, kv) in row.iter_mut().zip(k) {
                    *o += kv * g;
                }
            }
        }
        out
    }

    /// 2×2 box average; odd trailing rows/columns are dropped.
    fn downsample(&self) -> Plane {
        let (w, h) = (self.w / 2, self.h / 2);
        let mut out = Plane::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                let i = 2 * y * self.w + 2 * x;
                out.data[y * w + x] =
                    0.25 * (self.data[i] + self.data[i + 1] + self.data[i + self.w] + self.data[i + self.w + 1]);
            }
        }
        out
    }

    fn downsample_adjoint(&self, w: usize, h: usize) -> Plane {
        let mut out = Plane::zeros(w, h);
        for y in 0..self.h {
            for x in 0..self.w {
                let g = 0.25 * self.data[y * self.w + x];
                let i = 2 * y * w + 2 * x;
                out.data[i] += g;
                out.data[i + 1] += g;
                out.data[i + w] += g;
                out.data[i + w + 1] += g;
            }
        }
        out
    }
}

fn split_channels(f: &RenderedFrame) -> [Plane; 3] {
    let (w, h) = (f.width as usize, f.height as usize);
    std::array::from_fn(|ch| Plane {
        w,
        h,
        data: f.pixels.iter().skip(ch).step_by(3).copied().collect(),
    })
}

/// Local statistics of one channel pair.
struct Stats {
    mu_a: Plane,
    mu_b: Plane,
    var_a: Plane,
    var_b: Plane,
    cov: Plane,
}

fn local_stats(a: &Plane, b: &Plane, k: &[f64; SSIM_WINDOW]) -> Stats {
    let mu_a = a.filter(k);
    let mu_b = b.filter(k);
    let aa = a.map2(a, |x, y| x * y).filter(k);
    let bb = b.map2(b, |x, y| x * y).filter(k);
    let ab = a.map2(b, |x, y| x * y).filter(k);
    Stats {
        var_a: aa.map2(&mu_a, |e, m| e - m * m),
        var_b: bb.map2(&mu_b, |e, m| e - m * m),
        cov: ab.map2(&mu_a.map2(&mu_b, |x, y| x * y), |e, m| e - m),
        mu_a,
        mu_b,
    }
}

/// Mean SSIM (or contrast-structure term) of one channel and its gradient w.r.t. `a`.
fn channel_term(a: &Plane, b: &Plane, k: &[f64; SSIM_WINDOW], full: bool, want_grad: bool) -> (f64, Option<Plane>) {
    let s = local_stats(a, b, k);
    let n = s.mu_a.data.len();
    let mut total = 0.0;
    let mut g_mu = Plane::zeros(s.mu_a.w, s.mu_a.h);
    let mut g_ab = g_mu.clone();
    let mut g_aa = g_mu.clone();
    for i in 0..n {
        let (ma, mb) = (s.mu_a.data[i], s.mu_b.data[i]);
        let a2 = 2.0 * s.cov.data[i] + C2;
        let b2 = s.var_a.data[i] + s.var_b.data[i] + C2;
        let cs = a2 / b2;
        let (val, lum_grad) = if full {
            let a1 = 2.0 * ma * mb + C1;
            let b1 = ma * ma + mb * mb + C1;
            let v = a1 / b1 * cs;
            (v, v * (2.0 * mb / a1 - 2.0 * ma / b1))
        } else {
            (cs, 0.0)
        };
        total += val;
        if want_grad {
            // ∂/∂E[ab] and ∂/∂E[a²] of the local term
            let d_ab = 2.0 * val / a2;
            let d_aa = -val / b2;
            g_mu.data[i] = lum_grad - d_ab * mb - 2.0 * d_aa * ma;
            g_ab.data[i] = d_ab;
            g_aa.data[i] = d_aa;
        }
    }
    let mean = total / n as f64;
    if !want_grad {
        return (mean, None);
    }
    let scale = 1.0 / n as f64;
    let t_mu = g_mu.filter_adjoint(k, a.w, a.h);
    let t_ab = g_ab.filter_adjoint(k, a.w, a.h);
    let t_aa = g_aa.filter_adjoint(k, a.w, a.h);
    let mut grad = Plane::zeros(a.w, a.h);
    for i in 0..grad.data.len() {
        grad.data[i] = scale * (t_mu.data[i] + b.data[i] * t_ab.data[i] + 2.0 * a.data[i] * t_aa.data[i]);
    }
    (mean, Some(grad))
}

fn merge_channels(planes: &[Plane; 3]) -> Vec<f64> {
    let n = planes[0].data.len();
    let mut out = vec![0.0; 3 * n];
    for (ch, p) in planes.iter().enumerate() {
        for (i, v) in p.data.iter().enumerate() {
            out[3 * i + ch] = *v;
        }
    }
    out
}

fn check_ssim(a: &RenderedFrame, b: &RenderedFrame) -> Result<(), MetricError> {
    check_shapes(a, b)?;
    if (a.width.min(a.height) as usize) < SSIM_WINDOW {
        return Err(MetricError::TooSmall(a.width, a.height));
    }
    Ok(())
}

/// Mean SSIM over the valid region and the three channels.
pub fn ssim(a: &RenderedFrame, b: &RenderedFrame) -> Result<f64, MetricError> {
    check_ssim(a, b)?;
    let k = gaussian_window();
    let (pa, pb) = (split_channels(a), split_channels(b));
    Ok((0..3)
        .map(|c| channel_term(&pa[c], &pb[c], &k, true, false).0)
        .sum::<f64>()
        / 3.0)
}

/// SSIM and its gradient with respect to the pixels of `a` (RGB interleaved).
pub fn ssim_with_grad(a: &RenderedFrame, b: &RenderedFrame) -> Result<(f64, Vec<f64>), MetricError> {
    check_ssim(a, b)?;
    let k = gaussian_window();
    let (pa, pb) = (split_channels(a), split_channels(b));
    let mut total = 0.0;
    let grads: [Plane; 3] = std::array::from_fn(|c| {
        let (v, g) = channel_term(&pa[c], &pb[c], &k, true, true);
        total += v;
        let mut g = g.expect("gradient requested");
        g.data.iter_mut().for_each(|x| *x /= 3.0);
        g
    });
    Ok((total / 3.0, merge_channels(&grads)))
}

/// Perceptual distance `1 − MS-SSIM`, clamped to `[0, 2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MsSsim {
    pub distance: f64,
    /// Scales actually used; 1 means the image was too small and plain SSIM was used.
    pub scales: usize,
    pub fallback: bool,
}

pub fn ms_ssim_distance(a: &RenderedFrame, b: &RenderedFrame) -> Result<MsSsim, MetricError> {
    ms_ssim_impl(a, b, false).map(|(m, _)| m)
}

/// [`ms_ssim_distance`] and its gradient with respect to `a`.
pub fn ms_ssim_distance_with_grad(a: &RenderedFrame, b: &RenderedFrame) -> Result<(MsSsim, Vec<f64>), MetricError> {
    ms_ssim_impl(a, b, true).map(|(m, g)| (m, g.expect("gradient requested")))
}

fn ms_ssim_impl(
    a: &RenderedFrame,
    b: &RenderedFrame,
    want_grad: bool,
) -> Result<(MsSsim, Option<Vec<f64>>), MetricError> {
    check_ssim(a, b)?;
    let fallback = a.width.min(a.height) < MS_SSIM_MIN_SIDE;
    let scales = if fallback { 1 } else { MS_SSIM_SCALES };
    let k = gaussian_window();
    let mut pyr_a = vec![split_channels(a)];
    let mut pyr_b = vec![split_channels(b)];
    for s in 1..scales {
        pyr_a.push(std::array::from_fn(|c| pyr_a[s - 1][c].downsample()));
        pyr_b.push(std::array::from_fn(|c| pyr_b[s - 1][c].downsample()));
    }
    // per scale: channel-mean term and its gradient planes
    let mut terms = Vec::with_capacity(scales);
    let mut term_grads = Vec::with_capacity(scales);
    for s in 0..scales {
        let full = s + 1 == scales;
        let mut v = 0.0;
        let mut gs = Vec::new();
        for c in 0..3 {
            let (t, g) = channel_term(&pyr_a[s][c], &pyr_b[s][c], &k, full, want_grad);
            v += t / 3.0;
            gs.push(g);
        }
        terms.push(v);
        term_grads.push(gs);
    }
    let product: f64 = terms.iter().product();
    let raw = 1.0 - product;
    let distance = raw.clamp(0.0, 2.0);
    let result = MsSsim {
        distance,
        scales,
        fallback,
    };
    if !want_grad {
        return Ok((result, None));
    }
    let (w, h) = (a.width as usize, a.height as usize);
    let mut grad: [Plane; 3] = std::array::from_fn(|_| Plane::zeros(w, h));
    if raw == distance {
        for c in 0..3 {
            // walk scales from coarse to fine, pulling gradients up the pyramid
            let mut acc: Option<Plane> = None;
            for s in (0..scales).rev() {
                let others: f64 = terms
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != s)
                    .map(|(_, t)| t)
                    .product();
                let g = term_grads[s][c].as_ref().expect("gradient requested");
                let mut here = g.clone();
                here.data.iter_mut().for_each(|x| *x *= -others / 3.0);
                if let Some(coarse) = acc.take() {
                    let up = coarse.downsample_adjoint(here.w, here.h);
                    for (x, u) in here.data.iter_mut().zip(&up.data) {
                        *x += u;
                    }
                }
                acc = Some(here);
            }
            grad[c] = acc.expect("at least one scale");
        }
    }
    Ok((result, Some(merge_channels(&grad))))
}

/// Mean absolute error and its (sub)gradient with respect to `a`.
pub fn l1_with_grad(a: &RenderedFrame, b: &RenderedFrame) -> Result<(f64, Vec<f64>), MetricError> {
    check_shapes(a, b)?;
    let n = a.pixels.len() as f64;
    let mut total = 0.0;
    let grad = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(x, y)| {
            let d = x - y;
            total += d.abs();
            if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect();
    Ok((total / n, grad))
}

/// Whether an evaluation time is seen by a synchronous rig.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridLabel {
    OnGrid,
    Intermediate,
}

impl GridLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            GridLabel::OnGrid => "on_grid",
            GridLabel::Intermediate => "intermediate",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub camera_id: CameraId,
    pub timestamp: f64,
    pub label: GridLabel,
    pub psnr: f64,
    pub ssim: f64,
    pub ms_ssim_distance: f64,
}

/// Mean and minimum over a subset of frames.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub mean_psnr: f64,
    pub min_psnr: f64,
    pub mean_ssim: f64,
    pub min_ssim: f64,
    pub mean_ms_ssim_distance: f64,
}

impl Aggregate {
    fn of<'a>(frames: impl Iterator<Item = &'a FrameMetrics>) -> Self {
        let v: Vec<&FrameMetrics> = frames.collect();
        if v.is_empty() {
            return Self::default();
        }
        let n = v.len() as f64;
        Self {
            count: v.len(),
            mean_psnr: v.iter().map(|f| f.psnr).sum::<f64>() / n,
            min_psnr: v.iter().map(|f| f.psnr).fold(f64::INFINITY, f64::min),
            mean_ssim: v.iter().map(|f| f.ssim).sum::<f64>() / n,
            min_ssim: v.iter().map(|f| f.ssim).fold(f64::INFINITY, f64::min),
            mean_ms_ssim_distance: v.iter().map(|f| f.ms_ssim_distance).sum::<f64>() / n,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub frames: Vec<FrameMetrics>,
}

pub const REPORT_HEADER: [&str; 6] = [
    "camera_id",
    "timestamp_s",
    "grid",
    "psnr_db",
    "ssim",
    "MS-SSIM-distance",
];

impl MetricReport {
    pub fn all(&self) -> Aggregate {
        Aggregate::of(self.frames.iter())
    }

    pub fn on_grid(&self) -> Aggregate {
        Aggregate::of(self.frames.iter().filter(|f| f.label == GridLabel::OnGrid))
    }

    pub fn intermediate(&self) -> Aggregate {
        Aggregate::of(self.frames.iter().filter(|f| f.label == GridLabel::Intermediate))
    }

    /// Per-frame CSV with header [`REPORT_HEADER`].
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), MetricError> {
        let mut wtr = csv::Writer::from_writer(w);
        let io = |e: csv::Error| MetricError::Io(e.to_string());
        wtr.write_record(REPORT_HEADER).map_err(io)?;
        for f in &self.frames {
            wtr.write_record([
                f.camera_id.to_string(),
                format!("{:.6}", f.timestamp),
                f.label.as_str().to_string(),
                format!("{:.6}", f.psnr),
                format!("{:.6}", f.ssim),
                format!("{:.6}", f.ms_ssim_distance),
            ])
            .map_err(io)?;
        }
        wtr.flush().map_err(|e| MetricError::Io(e.to_string()))
    }

    /// One-line summaries per split, for logs and tables.
    pub fn summary(&self) -> String {
        let line = |name: &str, a: Aggregate| {
            format!(
                "{name:<12} n={:<4} PSNR {:7.3} dB (min {:7.3})  SSIM {:.4}  MS-SSIM-distance {:.4}",
                a.count, a.mean_psnr, a.min_psnr, a.mean_ssim, a.mean_ms_ssim_distance
            )
        };
        [
            line("all", self.all()),
            line("on-grid", self.on_grid()),
            line("intermediate", self.intermediate()),
        ]
        .join("\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(w: u32, h: u32, f: impl Fn(usize) -> f64) -> RenderedFrame {
        let mut r = RenderedFrame::filled(w, h, [0.0; 3], 0.0, 0);
        for (i, v) in r.pixels.iter_mut().enumerate() {
            *v = f(i);
        }
        r
    }

    #[test]
    fn psnr_of_uniform_error() {
        let a = frame(4, 4, |_| 0.5);
        let b = frame(4, 4, |_| 0.6);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = frame(8, 8, |_| 0.5);
        assert_eq!(ssim(&a, &a), Err(MetricError::TooSmall(8, 8)));
    }

    #[test]
    fn ms_ssim_falls_back_below_three_scales() {
        let a = frame(20, 20, |i| (i as f64 * 0.37).sin() * 0.5 + 0.5);
        let m = ms_ssim_distance(&a, &a).unwrap();
        assert!(m.fallback);
        assert_eq!(m.scales, 1);
        assert!(m.distance.abs() < 1e-12);
    }
}
