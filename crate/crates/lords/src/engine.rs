use std::time::{Duration, Instant};

use crate::blockwise::{compute_block_scales, expand_scales};
use crate::codebook::{build_codebook, nearest_scaled_level, Codebook, CodebookId};
use crate::error::{Error, Result};
use crate::matrix::{matmul, DenseMatrix};
use crate::svd::{nuclear_norm, truncated_svd};

/// Low-rank scale factorization S = B * A.
#[derive(Debug, Clone)]
pub struct FactorPair {
    pub(crate) b: DenseMatrix,
    pub(crate) a: DenseMatrix,
}

impl FactorPair {
    pub fn new(b: DenseMatrix, a: DenseMatrix) -> Result<Self> {
        if b.cols() != a.rows() {
            return Err(Error::shape(format!(
                "factor shapes {}x{} and {}x{} do not chain",
                b.rows(),
                b.cols(),
                a.rows(),
                a.cols()
            )));
        }
        if b.cols() == 0 {
            return Err(Error::shape("factor rank must be at least 1".to_string()));
        }
        Ok(FactorPair { b, a })
    }

    pub fn b(&self) -> &DenseMatrix {
        &self.b
    }

    pub fn a(&self) -> &DenseMatrix {
        &self.a
    }

    pub fn rank(&self) -> usize {
        self.b.cols()
    }

    /// The dense scale matrix B * A.
    pub fn product(&self) -> Result<DenseMatrix> {
        matmul(&self.b, &self.a)
    }
}

/// AdamW hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct AdamWParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWParams {
    fn default() -> Self {
        AdamWParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Optimizer state over a fixed list of parameter tensors. Moment buffers
/// start at zero and the step counter at zero.
#[derive(Debug, Clone)]
pub struct AdamWState {
    t: u64,
    m: Vec<DenseMatrix>,
    v: Vec<DenseMatrix>,
    hyper: AdamWParams,
}

impl AdamWState {
    pub fn new(shapes: &[(usize, usize)], hyper: AdamWParams) -> Self {
        AdamWState {
            t: 0,
            m: shapes.iter().map(|&(r, c)| DenseMatrix::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| DenseMatrix::zeros(r, c)).collect(),
            hyper,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One decoupled-weight-decay Adam update with bias correction across the
    /// whole parameter list.
    pub fn step(&mut self, params: &mut [&mut DenseMatrix], grads: &[&DenseMatrix], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(format!(
                "optimizer covers {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for i in 0..params.len() {
            params[i].check_same_shape(&self.m[i])?;
            grads[i].check_same_shape(&self.m[i])?;
        }
        self.t += 1;
        let h = self.hyper;
        let bc1 = 1.0 - h.beta1.powi(self.t as i32);
        let bc2 = 1.0 - h.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let g = grads[i].data();
            let p = params[i].data_mut();
            for k in 0..p.len() {
                m[k] = h.beta1 * m[k] + (1.0 - h.beta1) * g[k];
                v[k] = h.beta2 * v[k] + (1.0 - h.beta2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] = p[k] * (1.0 - lr * h.weight_decay) - lr * m_hat / (v_hat.sqrt() + h.eps);
            }
        }
        Ok(())
    }
}

/// Hyperparameters of the alternating refinement. Deterministic: there is no
/// seed anywhere in the procedure.
#[derive(Debug, Clone)]
pub struct RefineConfig {
    pub rank: usize,
    pub steps: usize,
    pub lr: f64,
    pub codebook: CodebookId,
}

impl RefineConfig {
    fn validate(&self, n: usize, m: usize) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.rank < 1 || self.rank > n.min(m) {
            return Err(Error::invalid(format!(
                "rank {} out of range 1..={} for a {n}x{m} matrix",
                self.rank,
                n.min(m)
            )));
        }
        Ok(())
    }
}

/// Per-iteration error trace and residual summary of one refinement run.
#[derive(Debug, Clone)]
pub struct RefineReport {
    /// Frobenius residual after init and after each iteration; length steps+1.
    pub trace: Vec<f64>,
    pub nuclear_before: f64,
    pub nuclear_after: f64,
    pub wall_clock: Duration,
}

impl RefineReport {
    /// CSV with columns (iter, frob_error) and a labeled footer row carrying
    /// the nuclear residual before and after refinement.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,frob_error\n");
        for (i, e) in self.trace.iter().enumerate() {
            out.push_str(&format!("{i},{e}\n"));
        }
        out.push_str(&format!("nuclear,{},{}\n", self.nuclear_before, self.nuclear_after));
        out
    }
}

/// Truncated-SVD initialization of the factor pair: B = U_r sqrt(Sigma_r),
/// A = sqrt(Sigma_r) V_r^T.
pub fn init_from_svd(s: &DenseMatrix, r: usize) -> Result<FactorPair> {
    let t = truncated_svd(s, r)?;
    let mut b = DenseMatrix::zeros(s.rows(), r);
    let mut a = DenseMatrix::zeros(r, s.cols());
    for j in 0..r {
        let root = t.sigma[j].sqrt();
        for i in 0..s.rows() {
            b.set(i, j, t.u.get(i, j) * root);
        }
        for c in 0..s.cols() {
            a.set(j, c, root * t.vt.get(j, c));
        }
    }
    FactorPair::new(b, a)
}

/// Quantization step: per-element argmin over the codebook of
/// ((BA)_ij * v - W_ij)^2 with the factors held fixed.
pub fn quantization_step(w: &DenseMatrix, f: &FactorPair, cb: &Codebook) -> Result<Vec<u8>> {
    let s = f.product()?;
    w.check_same_shape(&s)?;
    let mut codes = Vec::with_capacity(w.rows() * w.cols());
    for (wv, sv) in w.data().iter().zip(s.data()) {
        codes.push(nearest_scaled_level(*wv, *sv, cb).0);
    }
    Ok(codes)
}

/// Gradients of L = ||W - (BA) o Q||_F^2 with respect to B and A, with the
/// codes held fixed: dL/dS = -2 R o Q, g_B = (dL/dS) A^T, g_A = B^T (dL/dS).
pub fn adaptation_gradients(
    w: &DenseMatrix,
    f: &FactorPair,
    codes: &[u8],
    cb: &Codebook,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let s = f.product()?;
    w.check_same_shape(&s)?;
    if codes.len() != w.rows() * w.cols() {
        return Err(Error::shape(format!(
            "expected {} codes, got {}",
            w.rows() * w.cols(),
            codes.len()
        )));
    }
    let mut ds = DenseMatrix::zeros(w.rows(), w.cols());
    {
        let d = ds.data_mut();
        for (k, &c) in codes.iter().enumerate() {
            let q = cb.level(c);
            let r = w.data()[k] - s.data()[k] * q;
            d[k] = -2.0 * r * q;
        }
    }
    let g_b = matmul(&ds, &f.a.transpose())?;
    let g_a = matmul(&f.b.transpose(), &ds)?;
    Ok((g_b, g_a))
}

/// Frobenius residual ||W - (BA) o Q||_F for the current factors and codes.
fn frob_residual(w: &DenseMatrix, s: &DenseMatrix, codes: &[u8], cb: &Codebook) -> f64 {
    let mut acc = 0.0;
    for (k, &c) in codes.iter().enumerate() {
        let r = w.data()[k] - s.data()[k] * cb.level(c);
        acc += r * r;
    }
    acc.sqrt()
}

fn residual_matrix(w: &DenseMatrix, s: &DenseMatrix, codes: &[u8], cb: &Codebook) -> DenseMatrix {
    let data = codes
        .iter()
        .enumerate()
        .map(|(k, &c)| w.data()[k] - s.data()[k] * cb.level(c))
        .collect();
    DenseMatrix::from_parts(w.rows(), w.cols(), data)
}

/// Smallest divisor of m that is at least r. Exists because m divides m.
pub(crate) fn init_block_count(m: usize, r: usize) -> usize {
    (r..=m).find(|&k| m.is_multiple_of(k)).unwrap_or(m)
}

/// Full alternating refinement: scale init at block size m/r (rounded to a
/// divisor), truncated-SVD factor init, then `steps` alternations of the
/// quantization and adaptation steps with one AdamW update each. The
/// returned codes are re-synchronized against the final factors.
pub fn refine(w: &DenseMatrix, cfg: &RefineConfig) -> Result<(FactorPair, Vec<u8>, RefineReport)> {
    let start = Instant::now();
    let (n, m) = (w.rows(), w.cols());
    cfg.validate(n, m)?;
    let cb = build_codebook(cfg.codebook);

    let blocks = init_block_count(m, cfg.rank);
    let scales = compute_block_scales(w, m / blocks)?;
    let s0 = expand_scales(&scales);
    let mut f = init_from_svd(&s0, cfg.rank)?;

    let mut codes = quantization_step(w, &f, &cb)?;
    let s_init = f.product()?;
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    trace.push(frob_residual(w, &s_init, &codes, &cb));
    let nuclear_before = nuclear_norm(&residual_matrix(w, &s_init, &codes, &cb))?;

    let mut opt = AdamWState::new(
        &[(n, cfg.rank), (cfg.rank, m)],
        AdamWParams::default(),
    );
    for _ in 0..cfg.steps {
        codes = quantization_step(w, &f, &cb)?;
        let (g_b, g_a) = adaptation_gradients(w, &f, &codes, &cb)?;
        opt.step(&mut [&mut f.b, &mut f.a], &[&g_b, &g_a], cfg.lr)?;
        let s = f.product()?;
        trace.push(frob_residual(w, &s, &codes, &cb));
    }

    codes = quantization_step(w, &f, &cb)?;
    let s_final = f.product()?;
    let nuclear_after = nuclear_norm(&residual_matrix(w, &s_final, &codes, &cb))?;

    let report = RefineReport {
        trace,
        nuclear_before,
        nuclear_after,
        wall_clock: start.elapsed(),
    };
    Ok((f, codes, report))
}
