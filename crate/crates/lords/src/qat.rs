use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::blockwise::compute_block_scales;
use crate::codebook::{build_codebook, nearest_level, nearest_scaled_level, Codebook, CodebookId};
use crate::engine::{init_from_svd, FactorPair};
use crate::error::{Error, Result};
use crate::matrix::{matmul, DenseMatrix};

/// Sign-preserving magnitude floor applied to scales before any division.
/// Zero entries clamp to +EPS_CLAMP.
pub const EPS_CLAMP: f64 = 1e-6;

/// Saved forward-pass state: level values q, clamped scales s, and the
/// clamped ratio u = w / s.
#[derive(Debug, Clone)]
pub struct FakeQuantCache {
    pub q: DenseMatrix,
    pub s: DenseMatrix,
    pub u: DenseMatrix,
}

fn clamp_scale(s: f64) -> f64 {
    if s.abs() >= EPS_CLAMP {
        s
    } else if s == 0.0 {
        EPS_CLAMP
    } else {
        s.signum() * EPS_CLAMP
    }
}

/// Differentiable fake quantization: w_hat = Round(w / (BA)) o (BA), with
/// rounding to the nearest codebook level of the clamped ratio.
pub fn fake_quant_forward(
    w: &DenseMatrix,
    f: &FactorPair,
    cb: &Codebook,
) -> Result<(DenseMatrix, FakeQuantCache)> {
    let raw = f.product()?;
    w.check_same_shape(&raw)?;
    let count = w.rows() * w.cols();
    let mut q = Vec::with_capacity(count);
    let mut s = Vec::with_capacity(count);
    let mut u = Vec::with_capacity(count);
    let mut w_hat = Vec::with_capacity(count);
    for k in 0..count {
        let sk = clamp_scale(raw.data()[k]);
        let uk = w.data()[k] / sk;
        let (_, level) = nearest_level(uk, cb);
        q.push(level);
        s.push(sk);
        u.push(uk);
        w_hat.push(level * sk);
    }
    let cache = FakeQuantCache {
        q: DenseMatrix::from_parts(w.rows(), w.cols(), q),
        s: DenseMatrix::from_parts(w.rows(), w.cols(), s),
        u: DenseMatrix::from_parts(w.rows(), w.cols(), u),
    };
    Ok((DenseMatrix::from_parts(w.rows(), w.cols(), w_hat), cache))
}

/// Straight-through backward pass. grad_w is the upstream gradient
/// unchanged; grad_s = upstream o (q - u) chains into the factors as
/// grad_b = grad_s A^T and grad_a = B^T grad_s.
pub fn fake_quant_backward(
    upstream: &DenseMatrix,
    cache: &FakeQuantCache,
    f: &FactorPair,
) -> Result<(DenseMatrix, DenseMatrix, DenseMatrix)> {
    upstream.check_same_shape(&cache.q)?;
    let grad_w = upstream.clone();
    let grad_s = upstream.zip_with(&cache.q, |g, q| g * q)?.zip_with(
        &upstream.zip_with(&cache.u, |g, u| g * u)?,
        |a, b| a - b,
    )?;
    let grad_b = matmul(&grad_s, &f.a().transpose())?;
    let grad_a = matmul(&f.b().transpose(), &grad_s)?;
    Ok((grad_w, grad_b, grad_a))
}

/// Verifies that the local derivative of the fake-quantized output with
/// respect to the scales equals q (rounding is locally constant), by central
/// finite differences. Errors if any ratio sits within 1e-4 of a rounding
/// boundary, where the local-constancy argument breaks down.
pub fn local_dequant_derivative_check(
    w: &DenseMatrix,
    f: &FactorPair,
    cb: &Codebook,
) -> Result<bool> {
    let raw = f.product()?;
    w.check_same_shape(&raw)?;
    let levels = cb.levels();
    for k in 0..w.data().len() {
        let s = clamp_scale(raw.data()[k]);
        let u = w.data()[k] / s;
        for pair in levels.windows(2) {
            let midpoint = 0.5 * (pair[0] + pair[1]);
            if (u - midpoint).abs() < 1e-4 {
                return Err(Error::invalid(format!(
                    "ratio {u} is within 1e-4 of the rounding boundary {midpoint}"
                )));
            }
        }
    }
    let mut ok = true;
    for k in 0..w.data().len() {
        let s = clamp_scale(raw.data()[k]);
        let wv = w.data()[k];
        let h = 1e-6 * s.abs().max(1.0);
        let eval = |sv: f64| {
            let (_, level) = nearest_level(wv / sv, cb);
            level * sv
        };
        let fd = (eval(s + h) - eval(s - h)) / (2.0 * h);
        let (_, q) = nearest_level(wv / s, cb);
        if (fd - q).abs() > 1e-5 {
            ok = false;
        }
    }
    Ok(ok)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// Update weights and both scale factors.
    Joint,
    /// Update weights only; factors stay at their initialization.
    WeightsOnly,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr: f64,
    pub steps: usize,
    pub mode: TrainMode,
    /// Per-tensor L2 gradient norm ceiling; None disables clipping.
    pub clip_norm: Option<f64>,
}

/// Synthetic regression pairs: x holds one sample per column, y the matching
/// targets.
#[derive(Debug, Clone)]
pub struct RegressionSet {
    pub x: DenseMatrix,
    pub y: DenseMatrix,
}

impl RegressionSet {
    pub fn samples(&self) -> usize {
        self.x.cols()
    }
}

fn clip_to_norm(g: &DenseMatrix, limit: Option<f64>) -> DenseMatrix {
    match limit {
        Some(c) => {
            let n = g.frob_norm();
            if n > c {
                g.scale(c / n)
            } else {
                g.clone()
            }
        }
        None => g.clone(),
    }
}

/// Plain-SGD training of a one-layer fake-quantized linear regression
/// y = w_hat x. Returns the loss after init and after every step
/// (steps + 1 entries). Errors out if the loss turns NaN.
pub fn toy_qat_train(
    data: &RegressionSet,
    w0: &DenseMatrix,
    f0: &FactorPair,
    cb: &Codebook,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    if data.x.cols() == 0 {
        return Err(Error::invalid("dataset must hold at least one sample".to_string()));
    }
    if data.x.rows() != w0.cols() || data.y.rows() != w0.rows() || data.x.cols() != data.y.cols() {
        return Err(Error::shape(format!(
            "regression shapes inconsistent: w {}x{}, x {}x{}, y {}x{}",
            w0.rows(),
            w0.cols(),
            data.x.rows(),
            data.x.cols(),
            data.y.rows(),
            data.y.cols()
        )));
    }
    let n_samples = data.x.cols() as f64;
    let mut w = w0.clone();
    let mut f = f0.clone();
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    for step in 0..=cfg.steps {
        let (w_hat, cache) = fake_quant_forward(&w, &f, cb)?;
        let err = matmul(&w_hat, &data.x)?.sub(&data.y)?;
        let loss = err.data().iter().map(|e| e * e).sum::<f64>() / n_samples;
        if loss.is_nan() {
            return Err(Error::numeric(format!("training diverged: loss is NaN at step {step}")));
        }
        trace.push(loss);
        if step == cfg.steps {
            break;
        }
        let upstream = matmul(&err, &data.x.transpose())?.scale(2.0 / n_samples);
        let (g_w, g_b, g_a) = fake_quant_backward(&upstream, &cache, &f)?;
        let g_w = clip_to_norm(&g_w, cfg.clip_norm);
        w = w.sub(&g_w.scale(cfg.lr))?;
        if cfg.mode == TrainMode::Joint {
            let g_b = clip_to_norm(&g_b, cfg.clip_norm);
            let g_a = clip_to_norm(&g_a, cfg.clip_norm);
            let b = f.b().sub(&g_b.scale(cfg.lr))?;
            let a = f.a().sub(&g_a.scale(cfg.lr))?;
            f = FactorPair::new(b, a)?;
        }
    }
    Ok(trace)
}

/// One seeded instance of the scale-recalibration demonstration.
#[derive(Debug, Clone)]
pub struct QatDemo {
    pub data: RegressionSet,
    pub w0: DenseMatrix,
    pub factors: FactorPair,
    pub codebook: Codebook,
}

pub const DEMO_DIM: usize = 8;
pub const DEMO_RANK: usize = 2;
pub const DEMO_SAMPLES: usize = 64;
/// Init scales are inflated by this factor over the absmax calibration.
pub const DEMO_INFLATION: f64 = 2.0;
/// The teacher quantizes at this fraction of the inflated scales (0.5 puts
/// it back at the true absmax calibration).
pub const DEMO_TEACHER_FRACTION: f64 = 0.5;

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    let data = (0..rows * cols)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    DenseMatrix::from_parts(rows, cols, data)
}

/// Builds the paired-comparison instance: targets come from a teacher
/// quantized at well-calibrated scales while the trainable layer starts from
/// deliberately coarse (2x) scales. Joint training can walk the factors back
/// to calibration; weights-only training is stuck with the coarse grid.
pub fn qat_demo_instance(seed: u64) -> Result<QatDemo> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, m) = (DEMO_DIM, DEMO_DIM);
    let w_true = gaussian_matrix(&mut rng, n, m);
    let x = gaussian_matrix(&mut rng, m, DEMO_SAMPLES);

    let block = m / DEMO_RANK;
    let base = compute_block_scales(&w_true, block)?;
    let s_init = crate::blockwise::expand_scales(&base).scale(DEMO_INFLATION);
    let factors = init_from_svd(&s_init, DEMO_RANK)?;

    let codebook = build_codebook(CodebookId::Nf4);
    let s_teacher = s_init.scale(DEMO_TEACHER_FRACTION);
    let w_teacher = w_true.zip_with(&s_teacher, |wv, sv| {
        nearest_scaled_level(wv, sv, &codebook).1 * sv
    })?;
    let y = matmul(&w_teacher, &x)?;

    Ok(QatDemo {
        data: RegressionSet { x, y },
        w0: w_true,
        factors,
        codebook,
    })
}

/// Training configuration the demo was calibrated with.
pub fn qat_demo_config(mode: TrainMode) -> TrainConfig {
    TrainConfig {
        lr: 3e-3,
        steps: 400,
        mode,
        clip_norm: Some(1.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::CodebookId;

    fn unit_factors(n: usize, m: usize) -> FactorPair {
        FactorPair::new(
            DenseMatrix::new(n, 1, vec![1.0; n]).unwrap(),
            DenseMatrix::new(1, m, vec![1.0; m]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn forward_unit_scale_is_nearest_level() {
        let cb = build_codebook(CodebookId::Int4s);
        let w = DenseMatrix::new(1, 3, vec![0.9, -0.4, 0.05]).unwrap();
        let (w_hat, cache) = fake_quant_forward(&w, &unit_factors(1, 3), &cb).unwrap();
        for j in 0..3 {
            assert_eq!(w_hat.get(0, j), nearest_level(w.get(0, j), &cb).1);
        }
        assert!((cache.q.get(0, 0) - 6.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn forward_grid_fixed_point_and_idempotence() {
        let cb = build_codebook(CodebookId::Nf4);
        let f = FactorPair::new(
            DenseMatrix::new(2, 1, vec![1.5, 0.5]).unwrap(),
            DenseMatrix::new(1, 2, vec![2.0, 3.0]).unwrap(),
        )
        .unwrap();
        let s = f.product().unwrap();
        let w = s.zip_with(&s, |sv, _| sv * 0.3379151367131279).unwrap();
        let (w_hat, _) = fake_quant_forward(&w, &f, &cb).unwrap();
        assert_eq!(w_hat.data(), w.data());
        let (again, _) = fake_quant_forward(&w_hat, &f, &cb).unwrap();
        assert_eq!(again.data(), w_hat.data());
    }

    #[test]
    fn backward_is_ste_identity_on_w() {
        let cb = build_codebook(CodebookId::Nf4);
        let w = DenseMatrix::new(2, 2, vec![0.3, -0.8, 1.4, -0.1]).unwrap();
        let f = unit_factors(2, 2);
        let (_, cache) = fake_quant_forward(&w, &f, &cb).unwrap();
        let upstream = DenseMatrix::new(2, 2, vec![0.25, -1.5, 3.0, 0.0]).unwrap();
        let (g_w, _, _) = fake_quant_backward(&upstream, &cache, &f).unwrap();
        assert_eq!(g_w.data(), upstream.data());
    }

    #[test]
    fn backward_zero_upstream_zeroes_everything() {
        let cb = build_codebook(CodebookId::Nf4);
        let w = DenseMatrix::new(2, 2, vec![0.3, -0.8, 1.4, -0.1]).unwrap();
        let f = unit_factors(2, 2);
        let (_, cache) = fake_quant_forward(&w, &f, &cb).unwrap();
        let upstream = DenseMatrix::zeros(2, 2);
        let (g_w, g_b, g_a) = fake_quant_backward(&upstream, &cache, &f).unwrap();
        assert!(g_w.max_abs() == 0.0 && g_b.max_abs() == 0.0 && g_a.max_abs() == 0.0);
    }

    #[test]
    fn scalar_scale_gradient_value() {
        let cb = build_codebook(CodebookId::Int4s);
        let w = DenseMatrix::new(1, 1, vec![0.9]).unwrap();
        let f = unit_factors(1, 1);
        let (_, cache) = fake_quant_forward(&w, &f, &cb).unwrap();
        let upstream = DenseMatrix::new(1, 1, vec![1.0]).unwrap();
        let (_, g_b, g_a) = fake_quant_backward(&upstream, &cache, &f).unwrap();
        let expected = 6.0 / 7.0 - 0.9;
        assert!((g_b.get(0, 0) - expected).abs() < 1e-15);
        assert!((g_a.get(0, 0) - expected).abs() < 1e-15);
    }

    #[test]
    fn derivative_check_flags_boundary() {
        let cb = build_codebook(CodebookId::Int4s);
        let f = unit_factors(1, 1);
        let w_mid = DenseMatrix::new(1, 1, vec![13.0 / 14.0]).unwrap();
        assert!(local_dequant_derivative_check(&w_mid, &f, &cb).is_err());
        let w_off = DenseMatrix::new(1, 1, vec![0.9]).unwrap();
        assert!(local_dequant_derivative_check(&w_off, &f, &cb).unwrap());
    }

    #[test]
    fn zero_lr_trace_is_constant() {
        let demo = qat_demo_instance(7).unwrap();
        let cfg = TrainConfig {
            lr: 0.0,
            steps: 10,
            mode: TrainMode::Joint,
            clip_norm: Some(1.0),
        };
        let trace = toy_qat_train(&demo.data, &demo.w0, &demo.factors, &demo.codebook, &cfg).unwrap();
        assert_eq!(trace.len(), 11);
        assert!(trace.iter().all(|&l| l == trace[0]));
    }

    #[test]
    fn empty_dataset_rejected() {
        let demo = qat_demo_instance(7).unwrap();
        let empty = RegressionSet {
            x: DenseMatrix::new(8, 1, vec![0.1; 8]).unwrap(),
            y: DenseMatrix::new(4, 1, vec![0.1; 4]).unwrap(),
        };
        let cfg = qat_demo_config(TrainMode::Joint);
        assert!(toy_qat_train(&empty, &demo.w0, &demo.factors, &demo.codebook, &cfg).is_err());
    }

    #[test]
    fn demo_is_deterministic_per_seed() {
        let a = qat_demo_instance(42).unwrap();
        let b = qat_demo_instance(42).unwrap();
        assert_eq!(a.w0.data(), b.w0.data());
        assert_eq!(a.data.y.data(), b.data.y.data());
        let c = qat_demo_instance(43).unwrap();
        assert_ne!(a.w0.data(), c.w0.data());
    }

    #[test]
    fn joint_beats_weights_only_on_demo_seed() {
        let demo = qat_demo_instance(1).unwrap();
        let joint = toy_qat_train(
            &demo.data,
            &demo.w0,
            &demo.factors,
            &demo.codebook,
            &qat_demo_config(TrainMode::Joint),
        )
        .unwrap();
        let wonly = toy_qat_train(
            &demo.data,
            &demo.w0,
            &demo.factors,
            &demo.codebook,
            &qat_demo_config(TrainMode::WeightsOnly),
        )
        .unwrap();
        assert!(joint.last().unwrap() < wonly.last().unwrap());
    }
}
