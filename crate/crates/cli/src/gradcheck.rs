//! Finite-difference verification of the network and loss gradients. The
//! oracle runs the generic code paths at f64 so FD truncation noise stays far
//! below the acceptance tolerance.

use floodseg_core::error::{CoreError, Result};
use floodseg_core::labeling::weight_map;
use floodseg_core::losses::{distill_kd, tversky_focal, weighted_ce, LossOutput};
use floodseg_core::model::{softmax_probs, SegNet, SegNetConfig};
use floodseg_core::num::derive_seed;
use floodseg_core::raster::{ClassMask, Code};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

#[derive(Debug, Clone, Copy, Default)]
pub struct GradCheckReport {
    pub net_max: f64,
    pub ce_max: f64,
    pub kd_max: f64,
    pub tversky_max: f64,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.net_max
            .max(self.ce_max)
            .max(self.kd_max)
            .max(self.tversky_max)
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn random_label(rng: &mut ChaCha20Rng, n: usize) -> ClassMask {
    let codes = (0..n)
        .map(|_| match rng.gen_range(0..10) {
            0 => Code::Cloud,
            1 => Code::Invalid,
            x if x < 6 => Code::Dry,
            _ => Code::Water,
        })
        .collect();
    ClassMask::new(n, 1, codes).unwrap()
}

/// Max relative error of the analytic parameter gradient of
/// J(θ) = weighted_ce(net_θ(x), label) against central differences over every
/// parameter.
fn check_net(seed: u64, size: usize) -> Result<f64> {
    let config = SegNetConfig::new(2, 1, vec![4, 2], derive_seed(seed, 1));
    let mut net: SegNet<f64> = SegNet::init(&config)?;
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, 2));
    let n = size * size;
    let x: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let codes: Vec<Code> = (0..n)
        .map(|_| {
            if rng.gen_bool(0.3) {
                Code::Water
            } else {
                Code::Dry
            }
        })
        .collect();
    let label = ClassMask::new(size, size, codes)?;
    let weights = weight_map::<f64>(&label, 10.0, 5.0);

    let objective = |net: &SegNet<f64>| -> Result<f64> {
        let (logits, _) = net.forward(&x, size, size)?;
        Ok(weighted_ce(&logits, &label, &weights)?.value)
    };

    let (logits, trace) = net.forward(&x, size, size)?;
    let loss = weighted_ce(&logits, &label, &weights)?;
    let analytic = net.backward(&trace, &loss.grad_logits)?;

    let eps = 1e-5;
    let mut max_rel = 0.0f64;
    let n_tensors = net.params().len();
    for ti in 0..n_tensors {
        for pi in 0..net.params()[ti].len() {
            let orig = net.params()[ti][pi];
            net.params_mut()[ti][pi] = orig + eps;
            let plus = objective(&net)?;
            net.params_mut()[ti][pi] = orig - eps;
            let minus = objective(&net)?;
            net.params_mut()[ti][pi] = orig;
            let fd = (plus - minus) / (2.0 * eps);
            max_rel = max_rel.max(rel_err(analytic.tensors[ti][pi], fd));
        }
    }
    Ok(max_rel)
}

fn check_loss<L>(loss: L, logits: &mut [f64]) -> f64
where
    L: Fn(&[f64]) -> LossOutput<f64>,
{
    let out = loss(logits);
    let eps = 1e-6;
    let mut max_rel = 0.0f64;
    for i in 0..logits.len() {
        let orig = logits[i];
        logits[i] = orig + eps;
        let plus = loss(logits).value;
        logits[i] = orig - eps;
        let minus = loss(logits).value;
        logits[i] = orig;
        let fd = (plus - minus) / (2.0 * eps);
        max_rel = max_rel.max(rel_err(out.grad_logits[i], fd));
    }
    max_rel
}

pub fn run_gradcheck(seeds: u64, size: usize) -> Result<GradCheckReport> {
    if size == 0 || size % 16 != 0 {
        return Err(CoreError::Config(
            "gradcheck size must be a positive multiple of 16".into(),
        ));
    }
    let mut report = GradCheckReport::default();
    let n = size * size;
    for seed in 0..seeds {
        report.net_max = report.net_max.max(check_net(seed, size)?);

        let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, 3));
        let mut logits: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let label = random_label(&mut rng, n);
        let weights = weight_map::<f64>(&label, 10.0, 5.0);
        report.ce_max = report.ce_max.max(check_loss(
            |l| weighted_ce(l, &label, &weights).unwrap(),
            &mut logits,
        ));

        let teacher_raw: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let teacher = softmax_probs(&teacher_raw);
        let valid: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.9)).collect();
        report.kd_max = report.kd_max.max(check_loss(
            |l| distill_kd(&teacher, l, &valid).unwrap(),
            &mut logits,
        ));

        report.tversky_max = report.tversky_max.max(check_loss(
            |l| tversky_focal(l, &label, 0.7, 0.3, 0.75).unwrap(),
            &mut logits,
        ));
    }
    Ok(report)
}
