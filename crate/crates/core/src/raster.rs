//! Multi-band rasters and per-pixel class masks.
//!
//! Rasters carry a per-pixel resolution in meters and an ordered list of named
//! float bands in row-major layout. No projection math: resolution metadata only.

use crate::error::{CoreError, Result};
use crate::num::Scalar;

/// Per-pixel class codes. DRY/WATER are the two semantic classes; CLOUD and
/// INVALID are ignore codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Code {
    Dry = 0,
    Water = 1,
    Cloud = 2,
    Invalid = 3,
}

impl Code {
    pub fn from_u8(v: u8) -> Result<Code> {
        match v {
            0 => Ok(Code::Dry),
            1 => Ok(Code::Water),
            2 => Ok(Code::Cloud),
            3 => Ok(Code::Invalid),
            other => Err(CoreError::Format(format!("invalid class code {other}"))),
        }
    }

    /// DRY or WATER: the pixel participates in losses and metrics.
    pub fn is_scored(self) -> bool {
        matches!(self, Code::Dry | Code::Water)
    }

    pub fn is_ignore(self) -> bool {
        !self.is_scored()
    }
}

/// Named multi-band float grid with resolution metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster<F: Scalar> {
    width: usize,
    height: usize,
    resolution_m: f32,
    bands: Vec<(String, Vec<F>)>,
}

impl<F: Scalar> Raster<F> {
    pub fn new(
        width: usize,
        height: usize,
        resolution_m: f32,
        bands: Vec<(String, Vec<F>)>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(CoreError::Schema("raster dimensions must be >= 1".into()));
        }
        if !(resolution_m > 0.0) {
            return Err(CoreError::Schema("resolution_m must be > 0".into()));
        }
        if bands.is_empty() {
            return Err(CoreError::Schema("raster must have at least one band".into()));
        }
        for (name, data) in &bands {
            if data.len() != width * height {
                return Err(CoreError::Schema(format!(
                    "band '{name}' has {} cells, expected {}",
                    data.len(),
                    width * height
                )));
            }
        }
        for i in 1..bands.len() {
            if bands[..i].iter().any(|(n, _)| n == &bands[i].0) {
                return Err(CoreError::Schema(format!(
                    "duplicate band name '{}'",
                    bands[i].0
                )));
            }
        }
        Ok(Raster {
            width,
            height,
            resolution_m,
            bands,
        })
    }

    pub fn filled(
        width: usize,
        height: usize,
        resolution_m: f32,
        names: &[&str],
        value: F,
    ) -> Result<Self> {
        let bands = names
            .iter()
            .map(|n| (n.to_string(), vec![value; width * height]))
            .collect();
        Raster::new(width, height, resolution_m, bands)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution_m(&self) -> f32 {
        self.resolution_m
    }

    pub fn n_bands(&self) -> usize {
        self.bands.len()
    }

    pub fn bands(&self) -> &[(String, Vec<F>)] {
        &self.bands
    }

    pub fn band_names(&self) -> impl Iterator<Item = &str> {
        self.bands.iter().map(|(n, _)| n.as_str())
    }

    pub fn band(&self, name: &str) -> Result<&[F]> {
        self.bands
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, d)| d.as_slice())
            .ok_or_else(|| CoreError::Schema(format!("missing band '{name}'")))
    }

    pub fn band_mut(&mut self, name: &str) -> Result<&mut [F]> {
        self.bands
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, d)| d.as_mut_slice())
            .ok_or_else(|| CoreError::Schema(format!("missing band '{name}'")))
    }

    pub fn same_shape<G: Scalar>(&self, other: &Raster<G>) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Per-pixel class raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMask {
    width: usize,
    height: usize,
    codes: Vec<Code>,
}

impl ClassMask {
    pub fn new(width: usize, height: usize, codes: Vec<Code>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(CoreError::Schema("mask dimensions must be >= 1".into()));
        }
        if codes.len() != width * height {
            return Err(CoreError::Schema(format!(
                "mask has {} cells, expected {}",
                codes.len(),
                width * height
            )));
        }
        Ok(ClassMask {
            width,
            height,
            codes,
        })
    }

    pub fn filled(width: usize, height: usize, code: Code) -> Self {
        ClassMask {
            width,
            height,
            codes: vec![code; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn codes(&self) -> &[Code] {
        &self.codes
    }

    pub fn codes_mut(&mut self) -> &mut [Code] {
        &mut self.codes
    }

    pub fn get(&self, row: usize, col: usize) -> Code {
        self.codes[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, code: Code) {
        self.codes[row * self.width + col] = code;
    }

    pub fn count(&self, code: Code) -> usize {
        self.codes.iter().filter(|&&c| c == code).count()
    }

    pub fn matches_shape<F: Scalar>(&self, raster: &Raster<F>) -> bool {
        self.width == raster.width() && self.height == raster.height()
    }
}

/// Clip `v` to `[lo, hi]` then scale linearly to `[0, 1]`.
fn clip_scale<F: Scalar>(v: F, lo: f64, hi: f64) -> F {
    let lo = F::from_f64(lo);
    let hi = F::from_f64(hi);
    let v = v.max(lo).min(hi);
    (v - lo) / (hi - lo)
}

/// Normalize Sentinel-1-style dB backscatter: VV clipped to [-20, 0], VH to
/// [-30, 0], each scaled to [0, 1]. Bands other than VV/VH pass through.
pub fn normalize_s1<F: Scalar>(raster: &Raster<F>) -> Result<Raster<F>> {
    raster.band("VV")?;
    raster.band("VH")?;
    let bands = raster
        .bands()
        .iter()
        .map(|(name, data)| {
            let data = match name.as_str() {
                "VV" => data.iter().map(|&v| clip_scale(v, -20.0, 0.0)).collect(),
                "VH" => data.iter().map(|&v| clip_scale(v, -30.0, 0.0)).collect(),
                _ => data.clone(),
            };
            (name.clone(), data)
        })
        .collect();
    Raster::new(raster.width(), raster.height(), raster.resolution_m(), bands)
}

/// Normalize Sentinel-2-style reflectance: B2/B3/B4/B8 clipped to [0, 3000]
/// and scaled to [0, 1].
pub fn normalize_s2<F: Scalar>(raster: &Raster<F>) -> Result<Raster<F>> {
    const S2_BANDS: [&str; 4] = ["B2", "B3", "B4", "B8"];
    for b in S2_BANDS {
        raster.band(b)?;
    }
    let bands = raster
        .bands()
        .iter()
        .map(|(name, data)| {
            let data = if S2_BANDS.contains(&name.as_str()) {
                data.iter().map(|&v| clip_scale(v, 0.0, 3000.0)).collect()
            } else {
                data.clone()
            };
            (name.clone(), data)
        })
        .collect();
    Raster::new(raster.width(), raster.height(), raster.resolution_m(), bands)
}

/// NDWI = (B3 - B8) / (B3 + B8), defined as 0 where the denominator is 0.
pub fn ndwi<F: Scalar>(s2: &Raster<F>) -> Result<Raster<F>> {
    let b3 = s2.band("B3")?;
    let b8 = s2.band("B8")?;
    let data = b3
        .iter()
        .zip(b8)
        .map(|(&g, &n)| {
            let denom = g + n;
            if denom == F::zero() {
                F::zero()
            } else {
                (g - n) / denom
            }
        })
        .collect();
    Raster::new(
        s2.width(),
        s2.height(),
        s2.resolution_m(),
        vec![("NDWI".to_string(), data)],
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResampleMethod {
    Bilinear,
    Nearest,
}

/// Bilinear sample of a single band at fractional source coordinates, using
/// pixel-center alignment and edge clamping.
pub(crate) fn bilinear_sample<F: Scalar>(
    data: &[F],
    w: usize,
    h: usize,
    x: f64,
    y: f64,
) -> F {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = F::from_f64(x - x0 as f64);
    let fy = F::from_f64(y - y0 as f64);
    let one = F::one();
    let v00 = data[y0 * w + x0];
    let v01 = data[y0 * w + x1];
    let v10 = data[y1 * w + x0];
    let v11 = data[y1 * w + x1];
    let top = v00 * (one - fx) + v01 * fx;
    let bot = v10 * (one - fx) + v11 * fx;
    top * (one - fy) + bot * fy
}

/// Source coordinate of output pixel `i` under pixel-center alignment.
pub(crate) fn src_coord(i: usize, out_n: usize, in_n: usize) -> f64 {
    (i as f64 + 0.5) * in_n as f64 / out_n as f64 - 0.5
}

/// Resample every band to `out_w`×`out_h`. Resolution metadata is rescaled by
/// the width ratio.
pub fn resample<F: Scalar>(
    raster: &Raster<F>,
    out_w: usize,
    out_h: usize,
    method: ResampleMethod,
) -> Result<Raster<F>> {
    if out_w == 0 || out_h == 0 {
        return Err(CoreError::Schema("output dimensions must be >= 1".into()));
    }
    let (in_w, in_h) = (raster.width(), raster.height());
    let bands = raster
        .bands()
        .iter()
        .map(|(name, data)| {
            let mut out = Vec::with_capacity(out_w * out_h);
            for r in 0..out_h {
                let sy = src_coord(r, out_h, in_h);
                for c in 0..out_w {
                    let sx = src_coord(c, out_w, in_w);
                    let v = match method {
                        ResampleMethod::Bilinear => bilinear_sample(data, in_w, in_h, sx, sy),
                        ResampleMethod::Nearest => {
                            let nx = sx.round().clamp(0.0, (in_w - 1) as f64) as usize;
                            let ny = sy.round().clamp(0.0, (in_h - 1) as f64) as usize;
                            data[ny * in_w + nx]
                        }
                    };
                    out.push(v);
                }
            }
            (name.clone(), out)
        })
        .collect();
    let res = raster.resolution_m() * in_w as f32 / out_w as f32;
    Raster::new(out_w, out_h, res, bands)
}

/// Nearest-neighbor resample of a class mask.
pub fn resample_mask(mask: &ClassMask, out_w: usize, out_h: usize) -> Result<ClassMask> {
    if out_w == 0 || out_h == 0 {
        return Err(CoreError::Schema("output dimensions must be >= 1".into()));
    }
    let (in_w, in_h) = (mask.width(), mask.height());
    let mut codes = Vec::with_capacity(out_w * out_h);
    for r in 0..out_h {
        let sy = src_coord(r, out_h, in_h).round().clamp(0.0, (in_h - 1) as f64) as usize;
        for c in 0..out_w {
            let sx = src_coord(c, out_w, in_w).round().clamp(0.0, (in_w - 1) as f64) as usize;
            codes.push(mask.codes()[sy * in_w + sx]);
        }
    }
    ClassMask::new(out_w, out_h, codes)
}

/// Fraction of CLOUD pixels among non-INVALID pixels; 0 when nothing is valid.
pub fn cloud_fraction(mask: &ClassMask) -> f64 {
    let mut cloud = 0usize;
    let mut valid = 0usize;
    for &c in mask.codes() {
        if c != Code::Invalid {
            valid += 1;
            if c == Code::Cloud {
                cloud += 1;
            }
        }
    }
    if valid == 0 {
        0.0
    } else {
        cloud as f64 / valid as f64
    }
}

/// One tile cut from a raster/mask pair.
#[derive(Debug, Clone)]
pub struct Tile<F: Scalar> {
    pub raster: Raster<F>,
    pub mask: ClassMask,
    /// Top-left pixel of this tile in the source grid.
    pub origin: (usize, usize),
}

/// Non-overlapping tiling anchored at (0,0). Edge tiles are padded with 0 in
/// the bands and INVALID in the mask. Tiles whose cloud fraction (over
/// non-INVALID cells) exceeds `max_cloud` are dropped.
pub fn tile<F: Scalar>(
    raster: &Raster<F>,
    mask: &ClassMask,
    size: usize,
    max_cloud: f64,
) -> Result<Vec<Tile<F>>> {
    if size == 0 {
        return Err(CoreError::Schema("tile size must be >= 1".into()));
    }
    if !mask.matches_shape(raster) {
        return Err(CoreError::Schema("mask shape does not match raster".into()));
    }
    let (w, h) = (raster.width(), raster.height());
    let tiles_y = h.div_ceil(size);
    let tiles_x = w.div_ceil(size);
    let mut out = Vec::new();
    for ty in 0..tiles_y {
        for tx in 0..tiles_x {
            let origin = (ty * size, tx * size);
            let mut codes = vec![Code::Invalid; size * size];
            for r in 0..size {
                let sr = origin.0 + r;
                if sr >= h {
                    break;
                }
                for c in 0..size {
                    let sc = origin.1 + c;
                    if sc >= w {
                        break;
                    }
                    codes[r * size + c] = mask.codes()[sr * w + sc];
                }
            }
            let tile_mask = ClassMask::new(size, size, codes)?;
            if cloud_fraction(&tile_mask) > max_cloud {
                continue;
            }
            let bands = raster
                .bands()
                .iter()
                .map(|(name, data)| {
                    let mut out_band = vec![F::zero(); size * size];
                    for r in 0..size {
                        let sr = origin.0 + r;
                        if sr >= h {
                            break;
                        }
                        for c in 0..size {
                            let sc = origin.1 + c;
                            if sc >= w {
                                break;
                            }
                            out_band[r * size + c] = data[sr * w + sc];
                        }
                    }
                    (name.clone(), out_band)
                })
                .collect();
            let tile_raster = Raster::new(size, size, raster.resolution_m(), bands)?;
            out.push(Tile {
                raster: tile_raster,
                mask: tile_mask,
                origin,
            });
        }
    }
    Ok(out)
}
