use crate::error::{Error, Result};
use crate::matrix::{matmul, DenseMatrix};

/// Full or truncated singular value decomposition u * diag(sigma) * vt.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: DenseMatrix,
    pub sigma: Vec<f64>,
    pub vt: DenseMatrix,
}

impl SvdResult {
    pub fn rank_count(&self) -> usize {
        self.sigma.len()
    }

    /// Recomposes u * diag(sigma) * vt.
    pub fn reconstruct(&self) -> Result<DenseMatrix> {
        let k = self.sigma.len();
        let mut scaled = self.vt.clone();
        for j in 0..k {
            let s = self.sigma[j];
            let row = &mut scaled.data_mut()[j * self.vt.cols()..(j + 1) * self.vt.cols()];
            for v in row {
                *v *= s;
            }
        }
        matmul(&self.u, &scaled)
    }
}

const MAX_SWEEPS: usize = 64;
const ORTH_TOL: f64 = 1e-12;
/// Columns whose norm falls below this fraction of the largest column norm
/// are numerically zero: rotating them further only churns rounding noise
/// (rank-deficient inputs otherwise never settle), so they are frozen and
/// reported as exact zero singular values.
const DEAD_COL_REL: f64 = 1e-14;

/// Full SVD via one-sided Jacobi orthogonalization.
///
/// Deterministic sign convention: the largest-magnitude entry of each left
/// singular vector is positive, ties broken by lowest row index; the paired
/// right singular vector flips with it.
pub fn svd(m: &DenseMatrix) -> Result<SvdResult> {
    let result = if m.rows() >= m.cols() {
        jacobi_tall(m)?
    } else {
        let t = jacobi_tall(&m.transpose())?;
        SvdResult {
            u: t.vt.transpose(),
            sigma: t.sigma,
            vt: t.u.transpose(),
        }
    };
    Ok(apply_sign_convention(result))
}

/// Top-r part of the SVD.
pub fn truncated_svd(m: &DenseMatrix, r: usize) -> Result<SvdResult> {
    let k = m.rows().min(m.cols());
    if r < 1 || r > k {
        return Err(Error::invalid(format!(
            "rank {r} out of range 1..={k} for a {}x{} matrix",
            m.rows(),
            m.cols()
        )));
    }
    let full = svd(m)?;
    let mut u = DenseMatrix::zeros(m.rows(), r);
    let mut vt = DenseMatrix::zeros(r, m.cols());
    for i in 0..m.rows() {
        for j in 0..r {
            u.set(i, j, full.u.get(i, j));
        }
    }
    for i in 0..r {
        for j in 0..m.cols() {
            vt.set(i, j, full.vt.get(i, j));
        }
    }
    Ok(SvdResult {
        u,
        sigma: full.sigma[..r].to_vec(),
        vt,
    })
}

/// Sum of singular values.
pub fn nuclear_norm(m: &DenseMatrix) -> Result<f64> {
    Ok(svd(m)?.sigma.iter().sum())
}

/// One-sided Jacobi on a matrix with rows >= cols. Works on a column-major
/// copy; rotations touch two contiguous columns at a time.
fn jacobi_tall(m: &DenseMatrix) -> Result<SvdResult> {
    let (n, k) = (m.rows(), m.cols());
    debug_assert!(n >= k);

    let mut g = vec![0.0f64; n * k];
    for i in 0..n {
        for j in 0..k {
            g[j * n + i] = m.get(i, j);
        }
    }
    let mut v = vec![0.0f64; k * k];
    for j in 0..k {
        v[j * k + j] = 1.0;
    }

    let mut converged = false;
    for _sweep in 0..MAX_SWEEPS {
        let mut norms2: Vec<f64> = (0..k)
            .map(|j| g[j * n..(j + 1) * n].iter().map(|x| x * x).sum())
            .collect();
        let dead2 = DEAD_COL_REL * DEAD_COL_REL * norms2.iter().fold(0.0f64, |m, &x| m.max(x));
        let mut rotated = false;
        for p in 0..k {
            for q in (p + 1)..k {
                let (a, b) = (norms2[p], norms2[q]);
                if a <= dead2 || b <= dead2 {
                    continue;
                }
                let mut c = 0.0;
                for i in 0..n {
                    c += g[p * n + i] * g[q * n + i];
                }
                if c.abs() <= ORTH_TOL * (a * b).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (b - a) / (2.0 * c);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                rotate_columns(&mut g, n, p, q, cs, sn);
                rotate_columns(&mut v, k, p, q, cs, sn);
                norms2[p] = (a - 2.0 * t * c + t * t * b) / (1.0 + t * t);
                norms2[q] = (b + 2.0 * t * c + t * t * a) / (1.0 + t * t);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::numeric(format!(
            "svd did not converge within {MAX_SWEEPS} sweeps on a {n}x{k} matrix"
        )));
    }

    let norms: Vec<f64> = (0..k)
        .map(|j| g[j * n..(j + 1) * n].iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let dead = DEAD_COL_REL * norms.iter().fold(0.0f64, |m, &x| m.max(x));
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap());

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut sigma = Vec::with_capacity(k);
    let mut vt = DenseMatrix::zeros(k, k.max(1));
    for (slot, &j) in order.iter().enumerate() {
        let col = &g[j * n..(j + 1) * n];
        if norms[j] > dead {
            sigma.push(norms[j]);
            u_cols.push(col.iter().map(|x| x / norms[j]).collect());
        } else {
            sigma.push(0.0);
            u_cols.push(complete_orthonormal(&u_cols, n)?);
        }
        for i in 0..k {
            vt.set(slot, i, v[j * k + i]);
        }
    }

    let mut u = DenseMatrix::zeros(n, k);
    for (j, col) in u_cols.iter().enumerate() {
        for (i, &val) in col.iter().enumerate() {
            u.set(i, j, val);
        }
    }
    Ok(SvdResult { u, sigma, vt })
}

/// In-place Givens rotation of columns p and q of a column-major buffer.
fn rotate_columns(buf: &mut [f64], stride: usize, p: usize, q: usize, cs: f64, sn: f64) {
    let (lo, hi) = (p.min(q), p.max(q));
    let (head, tail) = buf.split_at_mut(hi * stride);
    let cp = &mut head[lo * stride..lo * stride + stride];
    let cq = &mut tail[..stride];
    if p < q {
        for i in 0..stride {
            let (x, y) = (cp[i], cq[i]);
            cp[i] = cs * x - sn * y;
            cq[i] = sn * x + cs * y;
        }
    } else {
        for i in 0..stride {
            let (x, y) = (cq[i], cp[i]);
            cq[i] = cs * x - sn * y;
            cp[i] = sn * x + cs * y;
        }
    }
}

/// First standard basis vector with a substantial component outside the span
/// of `cols`, orthogonalized and normalized. Deterministic.
fn complete_orthonormal(cols: &[Vec<f64>], n: usize) -> Result<Vec<f64>> {
    for k in 0..n {
        let mut cand = vec![0.0; n];
        cand[k] = 1.0;
        for _ in 0..2 {
            for col in cols {
                let dot: f64 = cand.iter().zip(col).map(|(x, y)| x * y).sum();
                for i in 0..n {
                    cand[i] -= dot * col[i];
                }
            }
        }
        let norm = cand.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm >= 0.5 {
            for x in &mut cand {
                *x /= norm;
            }
            return Ok(cand);
        }
    }
    Err(Error::numeric(
        "failed to complete an orthonormal basis for null singular directions".to_string(),
    ))
}

fn apply_sign_convention(mut r: SvdResult) -> SvdResult {
    let (n, k, m) = (r.u.rows(), r.sigma.len(), r.vt.cols());
    for j in 0..k {
        let mut best_i = 0;
        let mut best = -1.0f64;
        for i in 0..n {
            let a = r.u.get(i, j).abs();
            if a > best {
                best = a;
                best_i = i;
            }
        }
        if r.u.get(best_i, j) < 0.0 {
            for i in 0..n {
                let v = r.u.get(i, j);
                r.u.set(i, j, -v);
            }
            for c in 0..m {
                let v = r.vt.get(j, c);
                r.vt.set(j, c, -v);
            }
        }
    }
    r
}
