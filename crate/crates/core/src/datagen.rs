//! Synthetic paired-scene generation, weak-label corruption, dataset
//! manifests, pairing filter, balanced batch sampling and augmentations.
//!
//! The generator stands in for satellite acquisition: it renders a meandering
//! river plus optional flood lobes, emits SAR-like dB backscatter with
//! multiplicative speckle, optical-like bands whose NDWI sign matches the
//! ground truth, a water occurrence map that is high only on the permanent
//! river, and cloud polygons that occlude the optical bands.

use crate::error::{CoreError, Result};
use crate::labeling::{dilate, BinaryGrid, OccurrenceMap};
use crate::num::{derive_seed, Scalar};
use crate::raster::{ClassMask, Code, Raster};
use chrono::{DateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

/// One synthetic acquisition: paired SAR/optical rasters, ground truth,
/// occurrence map and cloud mask.
#[derive(Debug, Clone)]
pub struct SceneBundle<F: Scalar> {
    pub s1: Raster<F>,
    pub s2: Raster<F>,
    pub truth: ClassMask,
    pub occurrence: OccurrenceMap<F>,
    pub cloud: ClassMask,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SceneParams {
    /// 0 disables water entirely; 1 is the default scene.
    pub water_amount: f64,
    /// Mean river width in pixels.
    pub river_width: f64,
    pub n_flood_lobes: usize,
    pub lobe_radius: f64,
    /// Target cloud cover fraction of the scene.
    pub cloud_cover: f64,
    /// Number of looks for multiplicative speckle; 0 disables speckle.
    pub speckle_looks: u32,
    /// Std-dev of additive terrain texture in dB; 0 for noise-free SAR.
    pub s1_texture_db: f64,
    /// Std-dev of additive reflectance noise; 0 for noise-free optical bands.
    pub s2_noise: f64,
    /// Occurrence value on permanent-river pixels.
    pub occ_river: f64,
    /// Occurrence value on flood-lobe pixels.
    pub occ_lobe: f64,
    /// Occurrence value on dry land.
    pub occ_background: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            water_amount: 1.0,
            river_width: 5.0,
            n_flood_lobes: 2,
            lobe_radius: 6.0,
            cloud_cover: 0.1,
            speckle_looks: 4,
            s1_texture_db: 1.0,
            s2_noise: 20.0,
            occ_river: 0.9,
            occ_lobe: 0.15,
            occ_background: 0.05,
        }
    }
}

impl SceneParams {
    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.water_amount) {
            return Err(CoreError::Config("water_amount must be in [0,1]".into()));
        }
        if self.river_width <= 0.0 || self.lobe_radius <= 0.0 {
            return Err(CoreError::Config("river_width/lobe_radius must be > 0".into()));
        }
        if !(0.0..=0.95).contains(&self.cloud_cover) {
            return Err(CoreError::Config("cloud_cover must be in [0, 0.95]".into()));
        }
        if self.s1_texture_db < 0.0 || self.s2_noise < 0.0 {
            return Err(CoreError::Config("noise sigmas must be >= 0".into()));
        }
        if !(self.occ_river > 0.5) {
            return Err(CoreError::Config(
                "occ_river must exceed 0.5 (permanent water)".into(),
            ));
        }
        if self.occ_lobe > 0.5 || self.occ_background > 0.5 {
            return Err(CoreError::Config(
                "occ_lobe/occ_background must not exceed 0.5".into(),
            ));
        }
        Ok(())
    }
}

fn gauss(rng: &mut ChaCha20Rng) -> f64 {
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Mean-one multiplicative speckle: gamma(L)/L as a sum of L exponentials.
fn speckle(rng: &mut ChaCha20Rng, looks: u32) -> f64 {
    let mut prod = 1.0f64;
    for _ in 0..looks {
        prod *= rng.gen_range(1e-12..1.0f64);
    }
    -prod.ln() / looks as f64
}

// Reflectance levels for the optical bands; water keeps B3 > B8 and land
// B8 > B3 by a clamped margin so the NDWI sign always matches the truth.
const S2_LAND: [f64; 4] = [800.0, 900.0, 1000.0, 2200.0];
const S2_WATER: [f64; 4] = [600.0, 1500.0, 700.0, 300.0];
const S2_CLOUD: f64 = 2800.0;
const NDWI_MARGIN: f64 = 200.0;

const VV_LAND: f64 = -8.0;
const VV_WATER: f64 = -17.0;
const VH_LAND: f64 = -14.0;
const VH_WATER: f64 = -25.0;

/// Deterministic synthetic scene. All randomness flows from `seed`.
pub fn generate_scene<F: Scalar>(
    seed: u64,
    size: usize,
    params: &SceneParams,
) -> Result<SceneBundle<F>> {
    if size < 32 {
        return Err(CoreError::Config("scene size must be >= 32".into()));
    }
    params.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, 0x5ce9e));
    let (w, h) = (size, size);
    let n = w * h;

    // river center line: sum of two sinusoids across the full width
    let a1 = rng.gen_range(0.08..0.18) * h as f64;
    let a2 = rng.gen_range(0.03..0.08) * h as f64;
    let f1 = rng.gen_range(0.8..1.6);
    let f2 = rng.gen_range(2.0..3.5);
    let p1 = rng.gen_range(0.0..2.0 * PI);
    let p2 = rng.gen_range(0.0..2.0 * PI);
    let wobble_f = rng.gen_range(1.0..2.5);
    let wobble_p = rng.gen_range(0.0..2.0 * PI);
    let center = |x: f64| -> f64 {
        h as f64 / 2.0
            + a1 * (2.0 * PI * f1 * x / w as f64 + p1).sin()
            + a2 * (2.0 * PI * f2 * x / w as f64 + p2).sin()
    };
    let half_width = |x: f64| -> f64 {
        let www = params.river_width
            * (1.0 + 0.3 * (2.0 * PI * wobble_f * x / w as f64 + wobble_p).sin());
        www / 2.0
    };

    let mut river = BinaryGrid::empty(w, h);
    if params.water_amount > 0.0 {
        for c in 0..w {
            let yc = center(c as f64);
            let hw = half_width(c as f64).max(0.5);
            let lo = ((yc - hw).floor().max(0.0)) as usize;
            let hi = ((yc + hw).ceil().min((h - 1) as f64)) as usize;
            for r in lo..=hi {
                if (r as f64 - yc).abs() <= hw {
                    river.cells[r * w + c] = true;
                }
            }
        }
    }

    // flood lobes: ellipses attached to the river
    let mut lobes = BinaryGrid::empty(w, h);
    if params.water_amount > 0.0 {
        for _ in 0..params.n_flood_lobes {
            let cx = rng.gen_range(0.15..0.85) * w as f64;
            let cy = center(cx) + rng.gen_range(-0.5..0.5) * params.lobe_radius;
            let rx = params.lobe_radius * rng.gen_range(0.6..1.4);
            let ry = params.lobe_radius * rng.gen_range(0.6..1.4);
            for r in 0..h {
                for c in 0..w {
                    let dx = (c as f64 - cx) / rx;
                    let dy = (r as f64 - cy) / ry;
                    if dx * dx + dy * dy <= 1.0 {
                        lobes.cells[r * w + c] = true;
                    }
                }
            }
        }
    }

    let water: Vec<bool> = river
        .cells
        .iter()
        .zip(&lobes.cells)
        .map(|(&a, &b)| a || b)
        .collect();
    let truth_codes: Vec<Code> = water
        .iter()
        .map(|&is_water| if is_water { Code::Water } else { Code::Dry })
        .collect();
    let truth = ClassMask::new(w, h, truth_codes)?;

    // occurrence: permanent river high, lobes and background low
    let occ_data: Vec<F> = (0..n)
        .map(|i| {
            let v = if river.cells[i] {
                params.occ_river
            } else if lobes.cells[i] {
                params.occ_lobe
            } else {
                params.occ_background
            };
            F::from_f64(v)
        })
        .collect();
    let occ_raster = Raster::new(w, h, 16.0, vec![("occurrence".to_string(), occ_data)])?;
    let occurrence = OccurrenceMap::new(&occ_raster)?;

    // clouds: stamp ellipses until the target cover fraction is reached
    let mut cloud_grid = BinaryGrid::empty(w, h);
    let target = (params.cloud_cover * n as f64) as usize;
    let mut covered = 0usize;
    let mut attempts = 0;
    while covered < target && attempts < 64 {
        attempts += 1;
        let cx = rng.gen_range(0.0..w as f64);
        let cy = rng.gen_range(0.0..h as f64);
        let rx = rng.gen_range(0.08..0.2) * w as f64;
        let ry = rng.gen_range(0.08..0.2) * h as f64;
        for r in 0..h {
            for c in 0..w {
                let dx = (c as f64 - cx) / rx;
                let dy = (r as f64 - cy) / ry;
                if dx * dx + dy * dy <= 1.0 && !cloud_grid.cells[r * w + c] {
                    cloud_grid.cells[r * w + c] = true;
                    covered += 1;
                }
            }
        }
    }
    let cloud_codes: Vec<Code> = cloud_grid
        .cells
        .iter()
        .map(|&c| if c { Code::Cloud } else { Code::Dry })
        .collect();
    let cloud = ClassMask::new(w, h, cloud_codes)?;

    // SAR bands in dB with terrain texture and multiplicative speckle
    let mut vv = Vec::with_capacity(n);
    let mut vh = Vec::with_capacity(n);
    for i in 0..n {
        let (vv_mean, vh_mean) = if water[i] {
            (VV_WATER, VH_WATER)
        } else {
            (VV_LAND, VH_LAND)
        };
        for (mean, out) in [(vv_mean, &mut vv), (vh_mean, &mut vh)] {
            let mut db = mean + params.s1_texture_db * gauss(&mut rng);
            if params.speckle_looks > 0 {
                let linear = 10f64.powf(db / 10.0) * speckle(&mut rng, params.speckle_looks);
                db = 10.0 * linear.log10();
            }
            out.push(F::from_f64(db.clamp(-35.0, 5.0)));
        }
    }
    let s1 = Raster::new(
        w,
        h,
        16.0,
        vec![("VV".to_string(), vv), ("VH".to_string(), vh)],
    )?;

    // optical bands; clouds overwrite with bright values
    let mut s2_bands: Vec<Vec<F>> = vec![Vec::with_capacity(n); 4];
    for i in 0..n {
        let base = if water[i] { &S2_WATER } else { &S2_LAND };
        let mut vals = [0.0f64; 4];
        for b in 0..4 {
            vals[b] = base[b] + params.s2_noise * gauss(&mut rng);
        }
        // keep the NDWI sign consistent with the truth
        if water[i] {
            vals[3] = vals[3].min(vals[1] - NDWI_MARGIN);
        } else {
            vals[3] = vals[3].max(vals[1] + NDWI_MARGIN);
        }
        if cloud_grid.cells[i] {
            for v in vals.iter_mut() {
                *v = S2_CLOUD + params.s2_noise * gauss(&mut rng);
            }
        }
        for b in 0..4 {
            s2_bands[b].push(F::from_f64(vals[b].clamp(0.0, 3500.0)));
        }
    }
    let names = ["B2", "B3", "B4", "B8"];
    let s2 = Raster::new(
        w,
        h,
        16.0,
        names
            .iter()
            .zip(s2_bands)
            .map(|(n, d)| (n.to_string(), d))
            .collect(),
    )?;

    Ok(SceneBundle {
        s1,
        s2,
        truth,
        occurrence,
        cloud,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorruptMode {
    /// Remove a connected fraction of the water pixels.
    RiverDropout,
    /// Dilate the water region by severity-scaled iterations.
    Overflood,
    /// Flip isolated pixels with probability `severity`.
    SpeckleNoise,
}

impl CorruptMode {
    pub fn parse(s: &str) -> Result<CorruptMode> {
        match s {
            "river_dropout" => Ok(CorruptMode::RiverDropout),
            "overflood" => Ok(CorruptMode::Overflood),
            "speckle_noise" => Ok(CorruptMode::SpeckleNoise),
            other => Err(CoreError::Config(format!("unknown corrupt mode '{other}'"))),
        }
    }
}

const OVERFLOOD_MAX_ITERS: f64 = 5.0;

/// Degrade a label to emulate gross weak-label error regimes. Deterministic in
/// `seed`; `severity` = 0 is the identity.
pub fn corrupt_weak_label(
    truth: &ClassMask,
    mode: CorruptMode,
    severity: f64,
    seed: u64,
) -> Result<ClassMask> {
    if !(0.0..=1.0).contains(&severity) {
        return Err(CoreError::Config("severity must be in [0,1]".into()));
    }
    if severity == 0.0 {
        return Ok(truth.clone());
    }
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, 0xc0ab));
    let (w, h) = (truth.width(), truth.height());
    let mut out = truth.clone();
    match mode {
        CorruptMode::RiverDropout => {
            let water_idx: Vec<usize> = truth
                .codes()
                .iter()
                .enumerate()
                .filter(|(_, &c)| c == Code::Water)
                .map(|(i, _)| i)
                .collect();
            let target = (severity * water_idx.len() as f64).round() as usize;
            let mut removed = vec![false; w * h];
            let mut n_removed = 0usize;
            while n_removed < target {
                let remaining: Vec<usize> = water_idx
                    .iter()
                    .copied()
                    .filter(|&i| !removed[i])
                    .collect();
                if remaining.is_empty() {
                    break;
                }
                let start = remaining[rng.gen_range(0..remaining.len())];
                let mut queue = VecDeque::new();
                queue.push_back(start);
                removed[start] = true;
                n_removed += 1;
                while n_removed < target {
                    let Some(i) = queue.pop_front() else { break };
                    let (r, c) = (i / w, i % w);
                    for dr in -1i64..=1 {
                        for dc in -1i64..=1 {
                            let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                            if nr < 0 || nc < 0 || nr >= h as i64 || nc >= w as i64 {
                                continue;
                            }
                            let ni = nr as usize * w + nc as usize;
                            if truth.codes()[ni] == Code::Water && !removed[ni] {
                                removed[ni] = true;
                                n_removed += 1;
                                queue.push_back(ni);
                                if n_removed >= target {
                                    break;
                                }
                            }
                        }
                        if n_removed >= target {
                            break;
                        }
                    }
                }
            }
            for (i, &gone) in removed.iter().enumerate() {
                if gone {
                    out.codes_mut()[i] = Code::Dry;
                }
            }
        }
        CorruptMode::Overflood => {
            let iters = (severity * OVERFLOOD_MAX_ITERS).round() as usize;
            let water = BinaryGrid::from_mask(truth, Code::Water);
            let grown = dilate(&water, iters);
            for (i, &wet) in grown.cells.iter().enumerate() {
                if wet && truth.codes()[i] == Code::Dry {
                    out.codes_mut()[i] = Code::Water;
                }
            }
        }
        CorruptMode::SpeckleNoise => {
            for i in 0..w * h {
                let c = truth.codes()[i];
                if c.is_scored() && rng.gen_bool(severity) {
                    out.codes_mut()[i] = if c == Code::Water {
                        Code::Dry
                    } else {
                        Code::Water
                    };
                }
            }
        }
    }
    Ok(out)
}

/// Pick the optical acquisition paired with a SAR timestamp: within 12 h,
/// cloud cover at most 12%, closest in time (ties break to the earlier
/// timestamp, then the lower index). `None` means the data point is discarded.
pub fn pair_filter(
    s1_ts: DateTime<Utc>,
    candidates: &[(DateTime<Utc>, f64)],
) -> Option<usize> {
    const MAX_DELTA_SECS: i64 = 12 * 3600;
    const MAX_CLOUD: f64 = 0.12;
    let mut best: Option<(usize, i64, DateTime<Utc>)> = None;
    for (i, &(ts, cloud)) in candidates.iter().enumerate() {
        let dt = (ts - s1_ts).num_seconds().abs();
        if dt > MAX_DELTA_SECS || cloud > MAX_CLOUD {
            continue;
        }
        let better = match best {
            None => true,
            Some((_, best_dt, best_ts)) => dt < best_dt || (dt == best_dt && ts < best_ts),
        };
        if better {
            best = Some((i, dt, ts));
        }
    }
    best.map(|(i, _, _)| i)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    A,
    B,
}

/// Infinite iterator over batches drawn half from each source. Each source is
/// an independent seeded shuffle that reshuffles per pass.
pub struct BalancedBatches {
    batch: usize,
    a: SourceCycle,
    b: SourceCycle,
}

struct SourceCycle {
    len: usize,
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha20Rng,
}

impl SourceCycle {
    fn new(len: usize, seed: u64) -> Self {
        let mut s = SourceCycle {
            len,
            order: (0..len).collect(),
            pos: 0,
            rng: ChaCha20Rng::seed_from_u64(seed),
        };
        s.shuffle();
        s
    }

    fn shuffle(&mut self) {
        // Fisher-Yates with our own rng stream
        for i in (1..self.len).rev() {
            let j = self.rng.gen_range(0..=i);
            self.order.swap(i, j);
        }
        self.pos = 0;
    }

    fn next_index(&mut self) -> usize {
        if self.pos >= self.len {
            self.shuffle();
        }
        let i = self.order[self.pos];
        self.pos += 1;
        i
    }
}

impl BalancedBatches {
    pub fn new(a_len: usize, b_len: usize, batch: usize, seed: u64) -> Result<Self> {
        if a_len == 0 || b_len == 0 {
            return Err(CoreError::Config("both sources must be non-empty".into()));
        }
        if batch == 0 || batch % 2 != 0 {
            return Err(CoreError::Config("batch size must be even and > 0".into()));
        }
        Ok(BalancedBatches {
            batch,
            a: SourceCycle::new(a_len, derive_seed(seed, 0xa)),
            b: SourceCycle::new(b_len, derive_seed(seed, 0xb)),
        })
    }
}

impl Iterator for BalancedBatches {
    type Item = Vec<(Source, usize)>;

    fn next(&mut self) -> Option<Self::Item> {
        let half = self.batch / 2;
        let mut out = Vec::with_capacity(self.batch);
        for _ in 0..half {
            out.push((Source::A, self.a.next_index()));
        }
        for _ in 0..half {
            out.push((Source::B, self.b.next_index()));
        }
        Some(out)
    }
}

#[derive(Debug, Clone)]
pub struct AugmentConfig {
    pub flip_h: bool,
    pub flip_v: bool,
    /// Per-axis crop scale range; (1, 1) disables cropping.
    pub crop_scale_range: (f64, f64),
    /// Std-dev of per-band additive jitter noise applied to image bands.
    pub jitter_sigma: f64,
}

impl AugmentConfig {
    pub fn off() -> Self {
        AugmentConfig {
            flip_h: false,
            flip_v: false,
            crop_scale_range: (1.0, 1.0),
            jitter_sigma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.crop_scale_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(CoreError::Config(
                "crop_scale_range must satisfy 0 < min <= max <= 1".into(),
            ));
        }
        if self.jitter_sigma < 0.0 {
            return Err(CoreError::Config("jitter_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip_h: true,
            flip_v: true,
            crop_scale_range: (0.7, 1.0),
            jitter_sigma: 0.02,
        }
    }
}

/// A sampled augmentation: one geometric transform shared by all rasters and
/// the mask, plus a photometric jitter stream for image bands.
#[derive(Debug, Clone)]
pub struct AugmentOp {
    flip_h: bool,
    flip_v: bool,
    /// (row0, col0, crop_h, crop_w) in source pixels; None = full frame.
    crop: Option<(usize, usize, usize, usize)>,
    jitter_sigma: f64,
    jitter_seed: u64,
}

impl AugmentOp {
    /// Sample one transform for an `h`×`w` frame. Deterministic in `seed`.
    pub fn sample(config: &AugmentConfig, h: usize, w: usize, seed: u64) -> Result<AugmentOp> {
        config.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, 0xa06));
        let flip_h = config.flip_h && rng.gen_bool(0.5);
        let flip_v = config.flip_v && rng.gen_bool(0.5);
        let (lo, hi) = config.crop_scale_range;
        let crop = if hi < 1.0 || lo < 1.0 {
            // independent per-axis scale gives aspect distortion
            let sy = rng.gen_range(lo..=hi);
            let sx = rng.gen_range(lo..=hi);
            let ch = ((sy * h as f64).round() as usize).clamp(1, h);
            let cw = ((sx * w as f64).round() as usize).clamp(1, w);
            let row0 = rng.gen_range(0..=h - ch);
            let col0 = rng.gen_range(0..=w - cw);
            if ch == h && cw == w && row0 == 0 && col0 == 0 {
                None
            } else {
                Some((row0, col0, ch, cw))
            }
        } else {
            None
        };
        Ok(AugmentOp {
            flip_h,
            flip_v,
            crop,
            jitter_sigma: config.jitter_sigma,
            jitter_seed: derive_seed(seed, 0x71e),
        })
    }

    pub fn identity() -> AugmentOp {
        AugmentOp {
            flip_h: false,
            flip_v: false,
            crop: None,
            jitter_sigma: 0.0,
            jitter_seed: 0,
        }
    }

    /// Apply the geometric transform to every band; when `jitter` is set, add
    /// the photometric noise and clamp back to [0, 1].
    pub fn apply_raster<F: Scalar>(&self, raster: &Raster<F>, jitter: bool) -> Raster<F> {
        let (w, h) = (raster.width(), raster.height());
        let bands = raster
            .bands()
            .iter()
            .enumerate()
            .map(|(bi, (name, data))| {
                let mut out = self.geometric_band(data, w, h);
                if jitter && self.jitter_sigma > 0.0 {
                    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(
                        self.jitter_seed,
                        bi as u64,
                    ));
                    for v in out.iter_mut() {
                        let noisy =
                            v.as_f64() + self.jitter_sigma * gauss(&mut rng);
                        *v = F::from_f64(noisy.clamp(0.0, 1.0));
                    }
                }
                (name.clone(), out)
            })
            .collect();
        Raster::new(w, h, raster.resolution_m(), bands).expect("same shape")
    }

    fn geometric_band<F: Scalar>(&self, data: &[F], w: usize, h: usize) -> Vec<F> {
        let mut out = Vec::with_capacity(w * h);
        for r in 0..h {
            for c in 0..w {
                let (sr, sc) = self.source_coord(r, c, w, h);
                let v = match self.crop {
                    Some(_) => crate::raster::bilinear_sample(data, w, h, sc, sr),
                    None => data[sr.round() as usize * w + sc.round() as usize],
                };
                out.push(v);
            }
        }
        out
    }

    /// Source coordinate (row, col) for output pixel (r, c).
    fn source_coord(&self, r: usize, c: usize, w: usize, h: usize) -> (f64, f64) {
        let r = if self.flip_v { h - 1 - r } else { r };
        let c = if self.flip_h { w - 1 - c } else { c };
        match self.crop {
            None => (r as f64, c as f64),
            Some((row0, col0, ch, cw)) => {
                let sr = row0 as f64 + crate::raster::src_coord(r, h, ch);
                let sc = col0 as f64 + crate::raster::src_coord(c, w, cw);
                (
                    sr.clamp(row0 as f64, (row0 + ch - 1) as f64),
                    sc.clamp(col0 as f64, (col0 + cw - 1) as f64),
                )
            }
        }
    }

    /// Nearest-neighbor version of the same geometry for class masks.
    pub fn apply_mask(&self, mask: &ClassMask) -> ClassMask {
        let (w, h) = (mask.width(), mask.height());
        let mut codes = Vec::with_capacity(w * h);
        for r in 0..h {
            for c in 0..w {
                let (sr, sc) = self.source_coord(r, c, w, h);
                let sr = sr.round().clamp(0.0, (h - 1) as f64) as usize;
                let sc = sc.round().clamp(0.0, (w - 1) as f64) as usize;
                codes.push(mask.codes()[sr * w + sc]);
            }
        }
        ClassMask::new(w, h, codes).expect("same shape")
    }
}

/// Apply one sampled augmentation jointly to a set of rasters and their mask.
pub fn augment<F: Scalar>(
    rasters: &[&Raster<F>],
    mask: &ClassMask,
    config: &AugmentConfig,
    seed: u64,
) -> Result<(Vec<Raster<F>>, ClassMask)> {
    let op = AugmentOp::sample(config, mask.height(), mask.width(), seed)?;
    let out = rasters.iter().map(|r| op.apply_raster(r, true)).collect();
    Ok((out, op.apply_mask(mask)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SourceTag {
    #[serde(rename = "handlabel")]
    HandLabel,
    #[serde(rename = "weak_sen1floods11-like")]
    WeakSen1Floods11Like,
    #[serde(rename = "weak_floods208-like")]
    WeakFloods208Like,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleRecord {
    pub scene_id: String,
    pub source: SourceTag,
    pub s1_path: String,
    pub s2_path: String,
    pub label_path: String,
    pub occurrence_path: String,
    pub cloud_path: String,
    pub timestamp: DateTime<Utc>,
    pub cloud_fraction: f64,
}

/// CSV-backed dataset manifest. Paths are stored relative to the manifest
/// file's directory.
#[derive(Debug, Clone, Default)]
pub struct Manifest {
    pub records: Vec<SampleRecord>,
}

impl Manifest {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| {
            CoreError::Data(format!("cannot write manifest {}: {e}", path.display()))
        })?;
        if self.records.is_empty() {
            // serde-based writers emit headers only with the first record
            w.write_record([
                "scene_id",
                "source",
                "s1_path",
                "s2_path",
                "label_path",
                "occurrence_path",
                "cloud_path",
                "timestamp",
                "cloud_fraction",
            ])
            .map_err(|e| CoreError::Data(format!("manifest header: {e}")))?;
        }
        for rec in &self.records {
            w.serialize(rec)
                .map_err(|e| CoreError::Data(format!("manifest write: {e}")))?;
        }
        w.flush().map_err(|e| CoreError::io(path, e))
    }

    /// Load and validate: unique scene ids, all referenced files present.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Manifest> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path).map_err(|e| {
            CoreError::Data(format!("cannot read manifest {}: {e}", path.display()))
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut records: Vec<SampleRecord> = Vec::new();
        for rec in r.deserialize() {
            let rec: SampleRecord =
                rec.map_err(|e| CoreError::Data(format!("manifest row: {e}")))?;
            if records.iter().any(|r| r.scene_id == rec.scene_id) {
                return Err(CoreError::Data(format!(
                    "duplicate scene_id '{}'",
                    rec.scene_id
                )));
            }
            for p in [
                &rec.s1_path,
                &rec.s2_path,
                &rec.label_path,
                &rec.occurrence_path,
                &rec.cloud_path,
            ] {
                if !base.join(p).exists() {
                    return Err(CoreError::Data(format!(
                        "manifest references missing file '{p}'"
                    )));
                }
            }
            records.push(rec);
        }
        Ok(Manifest { records })
    }

    pub fn resolve(&self, manifest_path: &Path, rel: &str) -> PathBuf {
        manifest_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(rel)
    }
}
