//! Weak-label production and correction, Otsu thresholding, and morphological
//! edge/weight maps.

use crate::error::{CoreError, Result};
use crate::num::Scalar;
use crate::raster::{ClassMask, Code, Raster};

/// Binary grid used for morphology.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryGrid {
    pub width: usize,
    pub height: usize,
    pub cells: Vec<bool>,
}

impl BinaryGrid {
    pub fn new(width: usize, height: usize, cells: Vec<bool>) -> Self {
        assert_eq!(cells.len(), width * height);
        BinaryGrid {
            width,
            height,
            cells,
        }
    }

    pub fn empty(width: usize, height: usize) -> Self {
        BinaryGrid {
            width,
            height,
            cells: vec![false; width * height],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&b| b).count()
    }

    /// Water pixels of a class mask as a binary grid.
    pub fn from_mask(mask: &ClassMask, code: Code) -> Self {
        BinaryGrid {
            width: mask.width(),
            height: mask.height(),
            cells: mask.codes().iter().map(|&c| c == code).collect(),
        }
    }
}

/// Long-term surface-water occurrence probability per pixel.
#[derive(Debug, Clone)]
pub struct OccurrenceMap<F: Scalar> {
    raster: Raster<F>,
}

impl<F: Scalar> OccurrenceMap<F> {
    /// Wraps a single-band "occurrence" raster; values are clamped to [0, 1].
    pub fn new(raster: &Raster<F>) -> Result<Self> {
        let data = raster.band("occurrence")?;
        let clamped: Vec<F> = data
            .iter()
            .map(|&v| v.max(F::zero()).min(F::one()))
            .collect();
        let raster = Raster::new(
            raster.width(),
            raster.height(),
            raster.resolution_m(),
            vec![("occurrence".to_string(), clamped)],
        )?;
        Ok(OccurrenceMap { raster })
    }

    pub fn raster(&self) -> &Raster<F> {
        &self.raster
    }

    pub fn values(&self) -> &[F] {
        self.raster.band("occurrence").expect("occurrence band")
    }

    pub fn width(&self) -> usize {
        self.raster.width()
    }

    pub fn height(&self) -> usize {
        self.raster.height()
    }
}

fn erode_once(grid: &BinaryGrid) -> BinaryGrid {
    let (w, h) = (grid.width, grid.height);
    let mut out = BinaryGrid::empty(w, h);
    for r in 0..h {
        for c in 0..w {
            let mut keep = grid.get(r, c);
            if keep {
                'nb: for dr in -1i64..=1 {
                    for dc in -1i64..=1 {
                        let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                        // outside the image counts as background
                        if nr < 0 || nc < 0 || nr >= h as i64 || nc >= w as i64 {
                            keep = false;
                            break 'nb;
                        }
                        if !grid.get(nr as usize, nc as usize) {
                            keep = false;
                            break 'nb;
                        }
                    }
                }
            }
            out.cells[r * w + c] = keep;
        }
    }
    out
}

fn dilate_once(grid: &BinaryGrid) -> BinaryGrid {
    let (w, h) = (grid.width, grid.height);
    let mut out = BinaryGrid::empty(w, h);
    for r in 0..h {
        for c in 0..w {
            let mut hit = false;
            'nb: for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                    if nr >= 0 && nc >= 0 && nr < h as i64 && nc < w as i64
                        && grid.get(nr as usize, nc as usize)
                    {
                        hit = true;
                        break 'nb;
                    }
                }
            }
            out.cells[r * w + c] = hit;
        }
    }
    out
}

/// Morphological erosion with a 3×3 square structuring element per iteration.
pub fn erode(grid: &BinaryGrid, iterations: usize) -> BinaryGrid {
    let mut g = grid.clone();
    for _ in 0..iterations {
        g = erode_once(&g);
    }
    g
}

/// Morphological dilation with a 3×3 square structuring element per iteration.
pub fn dilate(grid: &BinaryGrid, iterations: usize) -> BinaryGrid {
    let mut g = grid.clone();
    for _ in 0..iterations {
        g = dilate_once(&g);
    }
    g
}

/// Grow the CLOUD region by `radius` in Chebyshev distance. INVALID pixels are
/// preserved; DRY/WATER pixels inside the grown region become CLOUD.
pub fn dilate_cloud_mask(mask: &ClassMask, radius: usize) -> ClassMask {
    let cloud = BinaryGrid::from_mask(mask, Code::Cloud);
    let grown = dilate(&cloud, radius);
    let codes = mask
        .codes()
        .iter()
        .zip(&grown.cells)
        .map(|(&c, &in_cloud)| {
            if c == Code::Invalid {
                c
            } else if in_cloud {
                Code::Cloud
            } else {
                c
            }
        })
        .collect();
    ClassMask::new(mask.width(), mask.height(), codes).expect("same shape")
}

/// Threshold NDWI at 0: strictly positive pixels become WATER, the rest DRY.
/// CLOUD/INVALID codes from the cloud mask take precedence.
pub fn weak_label_from_ndwi<F: Scalar>(ndwi: &Raster<F>, cloud: &ClassMask) -> Result<ClassMask> {
    if !cloud.matches_shape(ndwi) {
        return Err(CoreError::Schema(
            "cloud mask shape does not match NDWI raster".into(),
        ));
    }
    let values = ndwi.band("NDWI")?;
    let codes = values
        .iter()
        .zip(cloud.codes())
        .map(|(&v, &c)| match c {
            Code::Cloud | Code::Invalid => c,
            _ => {
                if v > F::zero() {
                    Code::Water
                } else {
                    Code::Dry
                }
            }
        })
        .collect();
    ClassMask::new(ndwi.width(), ndwi.height(), codes)
}

/// Mark DRY pixels with occurrence strictly above `threshold` as WATER.
/// WATER/CLOUD/INVALID pixels are never changed.
pub fn improve_weak_label<F: Scalar>(
    weak: &ClassMask,
    occ: &OccurrenceMap<F>,
    threshold: f64,
) -> Result<ClassMask> {
    if occ.width() != weak.width() || occ.height() != weak.height() {
        return Err(CoreError::Schema(
            "occurrence map shape does not match label".into(),
        ));
    }
    let t = F::from_f64(threshold);
    let codes = weak
        .codes()
        .iter()
        .zip(occ.values())
        .map(|(&c, &p)| {
            if c == Code::Dry && p > t {
                Code::Water
            } else {
                c
            }
        })
        .collect();
    ClassMask::new(weak.width(), weak.height(), codes)
}

/// Otsu threshold over an `n_bins` histogram of the band's finite values.
/// Returns the bin-boundary value maximizing between-class variance; ties break
/// toward the lower threshold.
pub fn otsu_threshold<F: Scalar>(band: &[F], n_bins: usize) -> Result<f64> {
    if n_bins < 2 {
        return Err(CoreError::Config("n_bins must be >= 2".into()));
    }
    let values: Vec<f64> = band
        .iter()
        .filter(|v| v.is_finite())
        .map(|v| v.as_f64())
        .collect();
    if values.is_empty() {
        return Err(CoreError::Degenerate("no finite values".into()));
    }
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        return Err(CoreError::Degenerate(
            "constant band has no threshold".into(),
        ));
    }
    let mut hist = vec![0u64; n_bins];
    let scale = n_bins as f64 / (max - min);
    for &v in &values {
        let bin = (((v - min) * scale) as usize).min(n_bins - 1);
        hist[bin] += 1;
    }
    let total = values.len() as f64;
    let bin_center = |i: usize| min + (i as f64 + 0.5) * (max - min) / n_bins as f64;
    let sum_total: f64 = hist
        .iter()
        .enumerate()
        .map(|(i, &h)| bin_center(i) * h as f64)
        .sum();
    let mut w0 = 0.0;
    let mut sum0 = 0.0;
    let mut best_var = f64::NEG_INFINITY;
    let mut best_k = 0usize;
    // split after bin k: class 0 = bins 0..=k, class 1 = rest
    for k in 0..n_bins - 1 {
        w0 += hist[k] as f64;
        sum0 += bin_center(k) * hist[k] as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_total - sum0) / w1;
        let var = w0 * w1 * (m0 - m1) * (m0 - m1);
        if var > best_var {
            best_var = var;
            best_k = k;
        }
    }
    if best_var.is_infinite() {
        return Err(CoreError::Degenerate(
            "no valid histogram split found".into(),
        ));
    }
    Ok(min + (best_k as f64 + 1.0) * (max - min) / n_bins as f64)
}

/// Segment a SAR band by Otsu thresholding: below-threshold pixels (low
/// backscatter) become WATER, the rest DRY.
pub fn otsu_segment<F: Scalar>(s1: &Raster<F>, band_name: &str) -> Result<ClassMask> {
    let band = s1.band(band_name)?;
    let t = otsu_threshold(band, 256)?;
    let codes = band
        .iter()
        .map(|&v| {
            if v.as_f64() < t {
                Code::Water
            } else {
                Code::Dry
            }
        })
        .collect();
    ClassMask::new(s1.width(), s1.height(), codes)
}

/// Inner and outer morphological edge bands of a water label.
#[derive(Debug, Clone)]
pub struct EdgeMaps {
    pub inner: BinaryGrid,
    pub outer: BinaryGrid,
}

/// inner = water − erode(water), outer = dilate(water) − water, with
/// CLOUD/INVALID pixels excluded from both.
pub fn edge_maps(label: &ClassMask, iterations: usize) -> EdgeMaps {
    let water = BinaryGrid::from_mask(label, Code::Water);
    let eroded = erode(&water, iterations);
    let dilated = dilate(&water, iterations);
    let n = water.cells.len();
    let mut inner = BinaryGrid::empty(label.width(), label.height());
    let mut outer = BinaryGrid::empty(label.width(), label.height());
    for i in 0..n {
        if label.codes()[i].is_ignore() {
            continue;
        }
        inner.cells[i] = water.cells[i] && !eroded.cells[i];
        outer.cells[i] = dilated.cells[i] && !water.cells[i];
    }
    EdgeMaps { inner, outer }
}

/// Per-pixel non-negative loss weights.
#[derive(Debug, Clone)]
pub struct WeightMap<F: Scalar> {
    pub width: usize,
    pub height: usize,
    pub weights: Vec<F>,
}

/// Inner-edge pixels get `w_inner`, outer-edge `w_outer`, CLOUD/INVALID 0,
/// everything else 1.
pub fn weight_map<F: Scalar>(label: &ClassMask, w_inner: f64, w_outer: f64) -> WeightMap<F> {
    let edges = edge_maps(label, 1);
    let weights = label
        .codes()
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            if c.is_ignore() {
                F::zero()
            } else if edges.inner.cells[i] {
                F::from_f64(w_inner)
            } else if edges.outer.cells[i] {
                F::from_f64(w_outer)
            } else {
                F::one()
            }
        })
        .collect();
    WeightMap {
        width: label.width(),
        height: label.height(),
        weights,
    }
}
