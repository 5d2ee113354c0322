//! Confusion accounting, pooled IoU, calibration (ECE), the 10 m inference
//! protocol and PNG rendering.

use crate::error::{CoreError, Result};
use crate::model::{softmax_probs, SegNet};
use crate::num::Scalar;
use crate::raster::{resample, ClassMask, Code, Raster, ResampleMethod};
use std::path::Path;

/// Water is the positive class. Truth CLOUD/INVALID pixels are not counted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn add(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }

    pub fn scored(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

pub fn confusion(pred: &ClassMask, truth: &ClassMask) -> Result<ConfusionCounts> {
    if pred.width() != truth.width() || pred.height() != truth.height() {
        return Err(CoreError::Schema("confusion shape mismatch".into()));
    }
    let mut c = ConfusionCounts::default();
    for (p, t) in pred.codes().iter().zip(truth.codes()) {
        if !t.is_scored() {
            continue;
        }
        match (*p == Code::Water, *t == Code::Water) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Micro IoU: counts are summed across images before the ratio is taken.
pub fn pooled_iou(counts: &[ConfusionCounts]) -> Result<f64> {
    let mut total = ConfusionCounts::default();
    for c in counts {
        total.add(c);
    }
    let denom = total.tp + total.fp + total.fn_;
    if denom == 0 {
        return Err(CoreError::Degenerate(
            "pooled IoU undefined: no water in predictions or truth".into(),
        ));
    }
    Ok(total.tp as f64 / denom as f64)
}

/// Thresholds the water probability at 0.5 (ties go to WATER).
pub fn probs_to_mask<F: Scalar>(p_water: &[F], width: usize, height: usize) -> Result<ClassMask> {
    if p_water.len() != width * height {
        return Err(CoreError::Schema("probability grid shape mismatch".into()));
    }
    let half = F::from_f64(0.5);
    let codes = p_water
        .iter()
        .map(|&p| if p >= half { Code::Water } else { Code::Dry })
        .collect();
    ClassMask::new(width, height, codes)
}

/// Forward + softmax on an already-normalized input raster whose resolution
/// matches the training grid. Returns the water-probability plane.
pub fn predict_water_probs<F: Scalar>(net: &SegNet<F>, input: &Raster<F>) -> Result<Vec<F>> {
    let (h, w) = (input.height(), input.width());
    let mut x = Vec::with_capacity(input.n_bands() * h * w);
    for (_, data) in input.bands() {
        x.extend_from_slice(data);
    }
    let (logits, _) = net.forward(&x, h, w)?;
    let probs = softmax_probs(&logits);
    Ok(probs[h * w..].to_vec())
}

/// §4.3 protocol: bilinearly downsample a 10 m scene to the 16 m training
/// grid, run the net, then upsample the class probabilities back to the input
/// grid and renormalize per pixel. Returns a two-band raster (p_dry, p_water)
/// at the input resolution.
pub fn infer_10m<F: Scalar>(net: &SegNet<F>, s1_10m: &Raster<F>) -> Result<Raster<F>> {
    let (w, h) = (s1_10m.width(), s1_10m.height());
    let res = s1_10m.resolution_m() as f64;
    let dw = (w as f64 * res / 16.0).round() as usize;
    let dh = (h as f64 * res / 16.0).round() as usize;
    if dw == 0 || dh == 0 || dw % 16 != 0 || dh % 16 != 0 {
        return Err(CoreError::Schema(format!(
            "downsampled dims {dw}×{dh} must be positive multiples of 16"
        )));
    }
    let small = resample(s1_10m, dw, dh, ResampleMethod::Bilinear)?;
    let mut x = Vec::with_capacity(small.n_bands() * dh * dw);
    for (_, data) in small.bands() {
        x.extend_from_slice(data);
    }
    let (logits, _) = net.forward(&x, dh, dw)?;
    let probs = softmax_probs(&logits);
    let n = dh * dw;
    let prob_raster = Raster::new(
        dw,
        dh,
        16.0,
        vec![
            ("p_dry".to_string(), probs[..n].to_vec()),
            ("p_water".to_string(), probs[n..].to_vec()),
        ],
    )?;
    let up = resample(&prob_raster, w, h, ResampleMethod::Bilinear)?;
    // bilinear keeps per-pixel sums at 1 up to rounding; renormalize exactly
    let mut dry = up.band("p_dry")?.to_vec();
    let mut water = up.band("p_water")?.to_vec();
    for i in 0..w * h {
        let s = dry[i] + water[i];
        if s > F::zero() {
            dry[i] /= s;
        } else {
            dry[i] = F::from_f64(0.5);
        }
        water[i] = F::one() - dry[i];
    }
    Raster::new(
        w,
        h,
        s1_10m.resolution_m(),
        vec![("p_dry".to_string(), dry), ("p_water".to_string(), water)],
    )
}

/// Expected calibration error over equal-width confidence bins of the
/// predicted class.
pub fn ece<F: Scalar>(p_water: &[F], truth: &ClassMask, n_bins: usize) -> Result<f64> {
    if p_water.len() != truth.width() * truth.height() {
        return Err(CoreError::Schema("ece shape mismatch".into()));
    }
    if n_bins == 0 {
        return Err(CoreError::Config("n_bins must be >= 1".into()));
    }
    let mut counts = vec![0u64; n_bins];
    let mut conf_sum = vec![0.0f64; n_bins];
    let mut acc_sum = vec![0.0f64; n_bins];
    let mut n = 0u64;
    for (i, &t) in truth.codes().iter().enumerate() {
        if !t.is_scored() {
            continue;
        }
        let p = p_water[i].as_f64().clamp(0.0, 1.0);
        let pred_water = p >= 0.5;
        let conf = if pred_water { p } else { 1.0 - p };
        let correct = pred_water == (t == Code::Water);
        let bin = ((conf * n_bins as f64) as usize).min(n_bins - 1);
        counts[bin] += 1;
        conf_sum[bin] += conf;
        acc_sum[bin] += if correct { 1.0 } else { 0.0 };
        n += 1;
    }
    if n == 0 {
        return Err(CoreError::Degenerate("no scored pixels for ece".into()));
    }
    let mut total = 0.0;
    for b in 0..n_bins {
        if counts[b] == 0 {
            continue;
        }
        let frac = counts[b] as f64 / n as f64;
        let acc = acc_sum[b] / counts[b] as f64;
        let conf = conf_sum[b] / counts[b] as f64;
        total += frac * (acc - conf).abs();
    }
    Ok(total)
}

fn mask_color(code: Code) -> [u8; 3] {
    match code {
        Code::Dry => [0, 128, 0],
        Code::Water => [0, 0, 255],
        Code::Cloud => [255, 255, 255],
        Code::Invalid => [0, 0, 0],
    }
}

pub fn render_mask_png(mask: &ClassMask, path: impl AsRef<Path>) -> Result<()> {
    let mut img = image::RgbImage::new(mask.width() as u32, mask.height() as u32);
    for r in 0..mask.height() {
        for c in 0..mask.width() {
            img.put_pixel(c as u32, r as u32, image::Rgb(mask_color(mask.get(r, c))));
        }
    }
    img.save(path.as_ref())
        .map_err(|e| CoreError::Format(format!("png write failed: {e}")))
}

/// Water probabilities as a blue ramp: 0 → black, 1 → pure blue.
pub fn render_probs_png<F: Scalar>(
    p_water: &[F],
    width: usize,
    height: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    if p_water.len() != width * height {
        return Err(CoreError::Schema("probability grid shape mismatch".into()));
    }
    let mut img = image::RgbImage::new(width as u32, height as u32);
    for r in 0..height {
        for c in 0..width {
            let p = p_water[r * width + c].as_f64().clamp(0.0, 1.0);
            let b = (p * 255.0).round() as u8;
            img.put_pixel(c as u32, r as u32, image::Rgb([0, 0, b]));
        }
    }
    img.save(path.as_ref())
        .map_err(|e| CoreError::Format(format!("png write failed: {e}")))
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ReportRow {
    pub split: String,
    pub n_images: usize,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub iou: f64,
    pub ece: f64,
}

pub fn write_report(rows: &[ReportRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut wtr = csv::Writer::from_path(path).map_err(|e| {
        CoreError::io(path, std::io::Error::new(std::io::ErrorKind::Other, e))
    })?;
    for row in rows {
        wtr.serialize(row)
            .map_err(|e| CoreError::Format(format!("report row: {e}")))?;
    }
    wtr.flush().map_err(|e| CoreError::io(path, e))?;
    Ok(())
}

pub fn read_report(path: impl AsRef<Path>) -> Result<Vec<ReportRow>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| {
        CoreError::io(path, std::io::Error::new(std::io::ErrorKind::Other, e))
    })?;
    let mut rows = Vec::new();
    for rec in rdr.deserialize() {
        rows.push(rec.map_err(|e| CoreError::Format(format!("report row: {e}")))?);
    }
    Ok(rows)
}
