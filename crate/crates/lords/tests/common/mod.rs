//! Independent oracles shared by the integration suites. Everything here is
//! implemented from first principles, without calling into the code under
//! test, so agreement is meaningful.
#![allow(dead_code)]

use lords::DenseMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn seeded_gaussian(seed: u64, rows: usize, cols: usize) -> DenseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    DenseMatrix::new(rows, cols, data).unwrap()
}

pub fn seeded_uniform(seed: u64, rows: usize, cols: usize, lo: f64, hi: f64) -> DenseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    DenseMatrix::new(rows, cols, data).unwrap()
}

/// Plain triple-loop matrix product, used when recomputing losses for finite
/// differences.
pub fn matmul_oracle(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    assert_eq!(a.cols(), b.rows());
    let mut out = DenseMatrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let mut acc = 0.0;
            for k in 0..a.cols() {
                acc += a.get(i, k) * b.get(k, j);
            }
            out.set(i, j, acc);
        }
    }
    out
}

/// Inverse standard normal CDF, Wichura's PPND16 rational approximations
/// (Algorithm AS 241), accurate to about 1e-16 over (0, 1).
// The coefficients are transcribed digit for digit from the published
// algorithm, beyond f64 precision on purpose.
#[allow(clippy::excessive_precision)]
pub fn inverse_normal_cdf(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "p must lie in (0, 1), got {p}");
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        const A: [f64; 8] = [
            3.3871328727963666080e0,
            1.3314166789178437745e2,
            1.9715909503065514427e3,
            1.3731693765509461125e4,
            4.5921953931549871457e4,
            6.7265770927008700853e4,
            3.3430575583588128105e4,
            2.5090809287301226727e3,
        ];
        const B: [f64; 8] = [
            1.0,
            4.2313330701600911252e1,
            6.8718700749205790830e2,
            5.3941960214247511077e3,
            2.1213794301586595867e4,
            3.9307895800092710610e4,
            2.8729085735721942674e4,
            5.2264952788528545610e3,
        ];
        let r = 0.180625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let value = if r <= 5.0 {
        const C: [f64; 8] = [
            1.42343711074968357734e0,
            4.63033784615654529590e0,
            5.76949722146069140550e0,
            3.64784832476320460504e0,
            1.27045825245236838258e0,
            2.41780725177450611770e-1,
            2.27238449892691845833e-2,
            7.74545014278341407640e-4,
        ];
        const D: [f64; 8] = [
            1.0,
            2.05319162663775882187e0,
            1.67638483018380384940e0,
            6.89767334985100004550e-1,
            1.48103976427480074590e-1,
            1.51986665636164571966e-2,
            5.47593808499534494600e-4,
            1.05075007164441684324e-9,
        ];
        let r = r - 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        const E: [f64; 8] = [
            6.65790464350110377720e0,
            5.46378491116411436990e0,
            1.78482653991729133580e0,
            2.96560571828504891230e-1,
            2.65321895265761230930e-2,
            1.24266094738807843860e-3,
            2.71155556874348757815e-5,
            2.01033439929228813265e-7,
        ];
        const F: [f64; 8] = [
            1.0,
            5.99832206555887937690e-1,
            1.36929880922735805310e-1,
            1.48753612908506148525e-2,
            7.86869131145613259100e-4,
            1.84631831751005468180e-6,
            1.42151175831644588870e-15,
            2.04426310338993978564e-15,
        ];
        let r = r - 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -value
    } else {
        value
    }
}

fn poly(coeffs: &[f64; 8], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// Regenerates a NormalFloat level table from the quantile construction:
/// tail mass 0.5 * (1/32 + 1/30), 2^(b-1) positive quantiles, 2^(b-1) - 1
/// negative ones, an exact zero, normalized by the largest magnitude.
pub fn nf_levels(bits: u32) -> Vec<f64> {
    let offset = 0.5 * (1.0 / 32.0 + 1.0 / 30.0);
    let hi = 1.0 - offset;
    let n_pos = 1usize << (bits - 1);
    let n_neg = n_pos - 1;
    let mut v = Vec::with_capacity(2 * n_pos);
    for i in 0..n_neg {
        let p = hi + (0.5 - hi) * i as f64 / n_neg as f64;
        v.push(-inverse_normal_cdf(p));
    }
    v.push(0.0);
    for i in 0..n_pos {
        let p = hi + (0.5 - hi) * i as f64 / n_pos as f64;
        v.push(inverse_normal_cdf(p));
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    v.iter().map(|x| x / max).collect()
}

/// Eigenvalues of a symmetric matrix by the classical cyclic Jacobi
/// rotation method, descending.
pub fn sym_eigenvalues(a: &DenseMatrix) -> Vec<f64> {
    assert_eq!(a.rows(), a.cols());
    let n = a.rows();
    let mut m: Vec<f64> = a.data().to_vec();
    let idx = |i: usize, j: usize| i * n + j;
    for _sweep in 0..200 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(m[idx(p, q)].abs());
            }
        }
        let scale = (0..n).fold(0.0f64, |s, i| s.max(m[idx(i, i)].abs()));
        if off <= 1e-15 * scale.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[idx(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[idx(q, q)] - m[idx(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[idx(k, p)];
                    let akq = m[idx(k, q)];
                    m[idx(k, p)] = c * akp - s * akq;
                    m[idx(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[idx(p, k)];
                    let aqk = m[idx(q, k)];
                    m[idx(p, k)] = c * apk - s * aqk;
                    m[idx(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut evals: Vec<f64> = (0..n).map(|i| m[idx(i, i)]).collect();
    evals.sort_by(|a, b| b.partial_cmp(a).unwrap());
    evals
}

/// Singular values by eigendecomposing the smaller Gram matrix, independent
/// of the one-sided Jacobi code under test.
pub fn singular_values_oracle(m: &DenseMatrix) -> Vec<f64> {
    let gram = if m.rows() >= m.cols() {
        matmul_oracle(&m.transpose(), m)
    } else {
        matmul_oracle(m, &m.transpose())
    };
    sym_eigenvalues(&gram)
        .into_iter()
        .map(|l| l.max(0.0).sqrt())
        .collect()
}

/// Decoupled-weight-decay Adam in the folded step-size form
/// alpha_t = lr * sqrt(1 - beta2^t) / (1 - beta1^t), algebraically equal to
/// the bias-corrected form but computed differently.
pub struct RefAdamW {
    pub t: u32,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl RefAdamW {
    pub fn new(sizes: &[usize]) -> Self {
        RefAdamW {
            t: 0,
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn step(&mut self, params: &mut [Vec<f64>], grads: &[Vec<f64>], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let alpha = lr * bc2.sqrt() / bc1;
        let eps_t = self.eps * bc2.sqrt();
        for i in 0..params.len() {
            for k in 0..params[i].len() {
                self.m[i][k] = self.beta1 * self.m[i][k] + (1.0 - self.beta1) * grads[i][k];
                self.v[i][k] = self.beta2 * self.v[i][k] + (1.0 - self.beta2) * grads[i][k] * grads[i][k];
                params[i][k] = params[i][k] * (1.0 - lr * self.weight_decay)
                    - alpha * self.m[i][k] / (self.v[i][k].sqrt() + eps_t);
            }
        }
    }
}
