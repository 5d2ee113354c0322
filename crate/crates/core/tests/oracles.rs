//! Brute-force oracle equivalence and property tests: morphology, Otsu,
//! confusion/IoU, edge maps, format round-trips, and loss invariances.

use floodseg_core::eval::{confusion, pooled_iou, ConfusionCounts};
use floodseg_core::io::{read_raster, write_raster};
use floodseg_core::labeling::{
    dilate, edge_maps, erode, otsu_threshold, BinaryGrid,
};
use floodseg_core::losses::{distill_kd, weighted_ce};
use floodseg_core::labeling::WeightMap;
use floodseg_core::model::softmax_probs;
use floodseg_core::raster::{resample, ClassMask, Code, Raster, ResampleMethod};
use proptest::prelude::*;

fn arb_grid(max_side: usize) -> impl Strategy<Value = BinaryGrid> {
    (1..=max_side, 1..=max_side).prop_flat_map(|(w, h)| {
        proptest::collection::vec(any::<bool>(), w * h)
            .prop_map(move |cells| BinaryGrid::new(w, h, cells))
    })
}

fn arb_mask(max_side: usize) -> impl Strategy<Value = ClassMask> {
    (1..=max_side, 1..=max_side).prop_flat_map(|(w, h)| {
        proptest::collection::vec(0u8..4, w * h).prop_map(move |v| {
            let codes = v.iter().map(|&b| Code::from_u8(b).unwrap()).collect();
            ClassMask::new(w, h, codes).unwrap()
        })
    })
}

/// All-neighbors loop with explicit bounds handling; out-of-frame counts as
/// background.
fn erode_oracle(g: &BinaryGrid) -> BinaryGrid {
    let (w, h) = (g.width, g.height);
    let mut out = Vec::with_capacity(w * h);
    for r in 0..h {
        for c in 0..w {
            let mut keep = true;
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                    let inside = nr >= 0 && nr < h as i64 && nc >= 0 && nc < w as i64;
                    if !inside || !g.get(nr as usize, nc as usize) {
                        keep = false;
                    }
                }
            }
            out.push(keep && g.get(r, c));
        }
    }
    BinaryGrid::new(w, h, out)
}

fn dilate_oracle(g: &BinaryGrid) -> BinaryGrid {
    let (w, h) = (g.width, g.height);
    let mut out = Vec::with_capacity(w * h);
    for r in 0..h {
        for c in 0..w {
            let mut any = false;
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                    if nr >= 0
                        && nr < h as i64
                        && nc >= 0
                        && nc < w as i64
                        && g.get(nr as usize, nc as usize)
                    {
                        any = true;
                    }
                }
            }
            out.push(any);
        }
    }
    BinaryGrid::new(w, h, out)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn erode_matches_bruteforce(g in arb_grid(12)) {
        prop_assert_eq!(erode(&g, 1).cells, erode_oracle(&g).cells);
    }

    #[test]
    fn dilate_matches_bruteforce(g in arb_grid(12)) {
        prop_assert_eq!(dilate(&g, 1).cells, dilate_oracle(&g).cells);
    }

    #[test]
    fn iterated_morphology_composes(g in arb_grid(10)) {
        prop_assert_eq!(dilate(&g, 2).cells, dilate(&dilate(&g, 1), 1).cells);
        prop_assert_eq!(erode(&g, 2).cells, erode(&erode(&g, 1), 1).cells);
    }

    #[test]
    fn edge_maps_match_bruteforce(mask in arb_mask(12)) {
        let maps = edge_maps(&mask, 1);
        let water = BinaryGrid::from_mask(&mask, Code::Water);
        let er = erode_oracle(&water);
        let di = dilate_oracle(&water);
        for i in 0..water.cells.len() {
            if mask.codes()[i] == Code::Cloud || mask.codes()[i] == Code::Invalid {
                prop_assert!(!maps.inner.cells[i] && !maps.outer.cells[i]);
                continue;
            }
            prop_assert_eq!(maps.inner.cells[i], water.cells[i] && !er.cells[i]);
            prop_assert_eq!(maps.outer.cells[i], di.cells[i] && !water.cells[i]);
        }
    }

    #[test]
    fn confusion_matches_per_pixel_loop(pred in arb_mask(12), seedmask in arb_mask(12)) {
        // regenerate truth at pred's shape so shapes always match
        let truth = {
            let n = pred.width() * pred.height();
            let codes: Vec<Code> = seedmask.codes().iter().cycle().take(n).copied().collect();
            ClassMask::new(pred.width(), pred.height(), codes).unwrap()
        };
        let c = confusion(&pred, &truth).unwrap();
        let mut oracle = ConfusionCounts::default();
        for i in 0..truth.codes().len() {
            let t = truth.codes()[i];
            if t == Code::Cloud || t == Code::Invalid {
                continue;
            }
            let pw = pred.codes()[i] == Code::Water;
            let tw = t == Code::Water;
            match (pw, tw) {
                (true, true) => oracle.tp += 1,
                (true, false) => oracle.fp += 1,
                (false, true) => oracle.fn_ += 1,
                (false, false) => oracle.tn += 1,
            }
        }
        prop_assert_eq!(c, oracle);
    }

    #[test]
    fn confusion_symmetric_under_class_swap(raw in arb_mask(10)) {
        // predictions are binary; only truth carries ignore codes
        let pred = {
            let codes = raw
                .codes()
                .iter()
                .map(|&c| if c == Code::Water { Code::Water } else { Code::Dry })
                .collect();
            ClassMask::new(raw.width(), raw.height(), codes).unwrap()
        };
        let truth = {
            let mut codes = raw.codes().to_vec();
            codes.rotate_left(1);
            ClassMask::new(raw.width(), raw.height(), codes).unwrap()
        };
        let swap = |m: &ClassMask| {
            let codes = m
                .codes()
                .iter()
                .map(|&c| match c {
                    Code::Water => Code::Dry,
                    Code::Dry => Code::Water,
                    other => other,
                })
                .collect();
            ClassMask::new(m.width(), m.height(), codes).unwrap()
        };
        let a = confusion(&pred, &truth).unwrap();
        let b = confusion(&swap(&pred), &swap(&truth)).unwrap();
        prop_assert_eq!((a.tp, a.fp, a.fn_, a.tn), (b.tn, b.fn_, b.fp, b.tp));
    }
}

#[test]
fn pooled_iou_matches_concatenation_on_many_instances() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(7);
    for case in 0..60 {
        let n_imgs = rng.gen_range(1..6);
        let mut counts = Vec::new();
        let mut all_pred = Vec::new();
        let mut all_truth = Vec::new();
        for _ in 0..n_imgs {
            let n = rng.gen_range(4..40usize);
            let pred: Vec<Code> = (0..n)
                .map(|_| if rng.gen_bool(0.5) { Code::Water } else { Code::Dry })
                .collect();
            let truth: Vec<Code> = (0..n)
                .map(|_| match rng.gen_range(0..5) {
                    0 => Code::Cloud,
                    1 if rng.gen_bool(0.5) => Code::Invalid,
                    x if x < 3 => Code::Water,
                    _ => Code::Dry,
                })
                .collect();
            let p = ClassMask::new(n, 1, pred.clone()).unwrap();
            let t = ClassMask::new(n, 1, truth.clone()).unwrap();
            counts.push(confusion(&p, &t).unwrap());
            all_pred.extend(pred);
            all_truth.extend(truth);
        }
        let n_all = all_pred.len();
        let concat_p = ClassMask::new(n_all, 1, all_pred).unwrap();
        let concat_t = ClassMask::new(n_all, 1, all_truth).unwrap();
        let single = confusion(&concat_p, &concat_t).unwrap();
        match (pooled_iou(&counts), pooled_iou(&[single])) {
            (Ok(a), Ok(b)) => assert_eq!(a, b, "case {case}"),
            (Err(_), Err(_)) => {}
            (a, b) => panic!("case {case}: {a:?} vs {b:?}"),
        }
    }
}

/// Independent Otsu: same binning rule, but the split statistics are computed
/// by direct passes over the data rather than cumulative histogram sums.
#[test]
fn otsu_matches_bruteforce_split_search() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(13);
    let n_bins = 32usize;
    for case in 0..60 {
        let n = rng.gen_range(10..200usize);
        let bimodal = rng.gen_bool(0.7);
        let data: Vec<f64> = (0..n)
            .map(|_| {
                if bimodal && rng.gen_bool(0.5) {
                    rng.gen_range(-20.0..-14.0)
                } else {
                    rng.gen_range(-10.0..-4.0)
                }
            })
            .collect();
        let min = data.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if min == max {
            continue;
        }
        // classic histogram Otsu, recomputed per split with plain loops
        let width = (max - min) / n_bins as f64;
        let bin_of = |v: f64| (((v - min) / width) as usize).min(n_bins - 1);
        let center = |i: usize| min + (i as f64 + 0.5) * width;
        let mut hist = vec![0u64; n_bins];
        for &v in &data {
            hist[bin_of(v)] += 1;
        }
        let mut best_k = 0usize;
        let mut best_score = f64::NEG_INFINITY;
        for k in 0..n_bins - 1 {
            let c0: u64 = hist[..=k].iter().sum();
            let c1: u64 = hist[k + 1..].iter().sum();
            if c0 == 0 || c1 == 0 {
                continue;
            }
            let w0 = c0 as f64 / n as f64;
            let w1 = c1 as f64 / n as f64;
            let m0: f64 = hist[..=k]
                .iter()
                .enumerate()
                .map(|(i, &h)| center(i) * h as f64)
                .sum::<f64>()
                / c0 as f64;
            let m1: f64 = hist[k + 1..]
                .iter()
                .enumerate()
                .map(|(i, &h)| center(k + 1 + i) * h as f64)
                .sum::<f64>()
                / c1 as f64;
            let score = w0 * w1 * (m0 - m1) * (m0 - m1);
            if score > best_score {
                best_score = score;
                best_k = k;
            }
        }
        let expected = min + (best_k + 1) as f64 * width;
        let got = otsu_threshold(&data, n_bins).unwrap();
        assert!(
            (got - expected).abs() < 1e-9,
            "case {case}: got {got}, oracle {expected}"
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn raster_roundtrip_is_byte_identical(
        w in 1..12usize,
        h in 1..12usize,
        n_bands in 1..4usize,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        let bands = (0..n_bands)
            .map(|i| {
                (
                    format!("band{i}"),
                    (0..w * h).map(|_| rng.gen_range(-50.0f32..50.0)).collect(),
                )
            })
            .collect();
        let raster = Raster::new(w, h, 16.0, bands).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.fsr");
        let p2 = dir.path().join("b.fsr");
        write_raster(&raster, &p1).unwrap();
        let back: Raster<f32> = read_raster(&p1).unwrap();
        write_raster(&back, &p2).unwrap();
        prop_assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn constant_raster_resamples_to_constant(
        w in 1..20usize, h in 1..20usize, ow in 1..20usize, oh in 1..20usize, v in -5.0f32..5.0,
    ) {
        let raster = Raster::filled(w, h, 10.0, &["x"], v).unwrap();
        let out = resample(&raster, ow, oh, ResampleMethod::Bilinear).unwrap();
        for &p in out.band("x").unwrap() {
            prop_assert!((p - v).abs() < 1e-5);
        }
    }

    #[test]
    fn ce_and_kd_are_permutation_invariant(seed in any::<u64>()) {
        use rand::{seq::SliceRandom, Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        let n = 24usize;
        let logits: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let codes: Vec<Code> = (0..n)
            .map(|_| if rng.gen_bool(0.5) { Code::Water } else { Code::Dry })
            .collect();
        let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..3.0)).collect();
        let teacher = softmax_probs(&(0..2 * n).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<f64>>());
        let valid = vec![true; n];

        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let permute_plane = |v: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; 2 * n];
            for (new, &old) in perm.iter().enumerate() {
                out[new] = v[old];
                out[n + new] = v[n + old];
            }
            out
        };

        let label = ClassMask::new(n, 1, codes.clone()).unwrap();
        let wm = WeightMap { width: n, height: 1, weights: weights.clone() };
        let base = weighted_ce(&logits, &label, &wm).unwrap();

        let p_codes: Vec<Code> = perm.iter().map(|&old| codes[old]).collect();
        let p_weights: Vec<f64> = perm.iter().map(|&old| weights[old]).collect();
        let p_label = ClassMask::new(n, 1, p_codes).unwrap();
        let p_wm = WeightMap { width: n, height: 1, weights: p_weights };
        let permuted = weighted_ce(&permute_plane(&logits), &p_label, &p_wm).unwrap();
        prop_assert!((base.value - permuted.value).abs() < 1e-12);

        let kd_base = distill_kd(&teacher, &logits, &valid).unwrap();
        let kd_perm = distill_kd(&permute_plane(&teacher), &permute_plane(&logits), &valid).unwrap();
        prop_assert!((kd_base.value - kd_perm.value).abs() < 1e-12);
    }
}
