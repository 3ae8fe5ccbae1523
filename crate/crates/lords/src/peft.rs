use crate::codebook::Codebook;
use crate::engine::FactorPair;
use crate::error::{Error, Result};
use crate::matrix::{hadamard, matmul, DenseMatrix};
use crate::svd::svd;

fn level_matrix(codes: &[u8], cb: &Codebook, rows: usize, cols: usize) -> Result<DenseMatrix> {
    if codes.len() != rows * cols {
        return Err(Error::shape(format!(
            "expected {} codes for a {rows}x{cols} tensor, got {}",
            rows * cols,
            codes.len()
        )));
    }
    if let Some(bad) = codes.iter().find(|&&c| c as usize >= cb.len()) {
        return Err(Error::encoding(format!(
            "code index {bad} out of range for a {}-level codebook",
            cb.len()
        )));
    }
    Ok(DenseMatrix::from_parts(
        rows,
        cols,
        codes.iter().map(|&c| cb.level(c)).collect(),
    ))
}

fn check_factor_agreement(base: &FactorPair, tuned: &FactorPair) -> Result<()> {
    if base.rank() != tuned.rank()
        || base.b().rows() != tuned.b().rows()
        || base.a().cols() != tuned.a().cols()
    {
        return Err(Error::shape(format!(
            "base factors {}x{} * {}x{} and tuned factors {}x{} * {}x{} do not agree",
            base.b().rows(),
            base.b().cols(),
            base.a().rows(),
            base.a().cols(),
            tuned.b().rows(),
            tuned.b().cols(),
            tuned.a().rows(),
            tuned.a().cols()
        )));
    }
    Ok(())
}

/// Multiplicative adaptation delta on frozen codes:
/// delta = levels[codes] o (B'A' - BA).
pub fn peft_delta(
    codes: &[u8],
    cb: &Codebook,
    base: &FactorPair,
    tuned: &FactorPair,
) -> Result<DenseMatrix> {
    check_factor_agreement(base, tuned)?;
    let q = level_matrix(codes, cb, base.b().rows(), base.a().cols())?;
    let diff = tuned.product()?.sub(&base.product()?)?;
    hadamard(&q, &diff)
}

/// Zero-overhead merge: the tuned factors simply replace the base ones, so
/// the merged weights are levels[codes] o (B'A').
pub fn merged_dequantize(codes: &[u8], cb: &Codebook, tuned: &FactorPair) -> Result<DenseMatrix> {
    let q = level_matrix(codes, cb, tuned.b().rows(), tuned.a().cols())?;
    hadamard(&q, &tuned.product()?)
}

/// Number of singular values above rel_tol times the largest one; zero for a
/// zero matrix.
pub fn effective_rank(delta: &DenseMatrix, rel_tol: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&rel_tol) || rel_tol <= 0.0 {
        return Err(Error::invalid(format!(
            "relative tolerance must lie in (0, 1), got {rel_tol}"
        )));
    }
    let sigma = svd(delta)?.sigma;
    let top = sigma.first().copied().unwrap_or(0.0);
    if top == 0.0 {
        return Ok(0);
    }
    Ok(sigma.iter().filter(|&&s| s > rel_tol * top).count())
}

/// Effective rank of a plain additive low-rank update B_lora * A_lora; by
/// construction at most the factor rank. Comparison baseline for the
/// multiplicative form.
pub fn additive_delta_rank_reference(
    b_lora: &DenseMatrix,
    a_lora: &DenseMatrix,
    rel_tol: f64,
) -> Result<usize> {
    let delta = matmul(b_lora, a_lora)?;
    effective_rank(&delta, rel_tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::{build_codebook, CodebookId};

    fn pair(b: Vec<f64>, a: Vec<f64>, n: usize, r: usize, m: usize) -> FactorPair {
        FactorPair::new(
            DenseMatrix::new(n, r, b).unwrap(),
            DenseMatrix::new(r, m, a).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn identity_adaptation_is_zero() {
        let cb = build_codebook(CodebookId::Nf4);
        let base = pair(vec![1.0, 2.0], vec![3.0, 4.0], 2, 1, 2);
        let codes = vec![3u8, 9, 14, 0];
        let delta = peft_delta(&codes, &cb, &base, &base.clone()).unwrap();
        assert!(delta.max_abs() == 0.0);
    }

    #[test]
    fn zero_level_codes_kill_delta() {
        let cb = build_codebook(CodebookId::Nf4);
        let base = pair(vec![1.0, 2.0], vec![3.0, 4.0], 2, 1, 2);
        let tuned = pair(vec![5.0, -1.0], vec![2.0, 0.5], 2, 1, 2);
        let codes = vec![cb.zero_index(); 4];
        let delta = peft_delta(&codes, &cb, &base, &tuned).unwrap();
        assert!(delta.max_abs() == 0.0);
    }

    #[test]
    fn scalar_merge_identity() {
        let cb = build_codebook(CodebookId::Int4s);
        let base = pair(vec![2.0], vec![1.0], 1, 1, 1);
        let tuned = pair(vec![3.0], vec![1.0], 1, 1, 1);
        let codes = vec![14u8];
        let merged = merged_dequantize(&codes, &cb, &tuned).unwrap();
        let delta = peft_delta(&codes, &cb, &base, &tuned).unwrap();
        assert_eq!(merged.get(0, 0), 3.0);
        assert_eq!(delta.get(0, 0), 1.0);
    }

    #[test]
    fn delta_is_antisymmetric() {
        let cb = build_codebook(CodebookId::Nf4);
        let base = pair(vec![1.0, -2.0, 0.5, 1.5], vec![0.3, 1.2, -0.7, 2.0], 2, 2, 2);
        let tuned = pair(vec![1.1, -1.7, 0.4, 1.9], vec![0.5, 1.0, -0.9, 2.2], 2, 2, 2);
        let codes = vec![2u8, 11, 5, 14];
        let fwd = peft_delta(&codes, &cb, &base, &tuned).unwrap();
        let rev = peft_delta(&codes, &cb, &tuned, &base).unwrap();
        assert!(fwd.add(&rev).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn rank_mismatch_rejected() {
        let cb = build_codebook(CodebookId::Nf4);
        let base = pair(vec![1.0, 2.0], vec![3.0, 4.0], 2, 1, 2);
        let tuned = pair(vec![1.0, 0.0, 2.0, 1.0], vec![3.0, 1.0, 4.0, 0.0], 2, 2, 2);
        assert!(peft_delta(&[0, 0, 0, 0], &cb, &base, &tuned).is_err());
    }

    #[test]
    fn effective_rank_edge_cases() {
        assert_eq!(effective_rank(&DenseMatrix::zeros(4, 4), 1e-6).unwrap(), 0);
        let outer = pair(vec![1.0, 2.0, 3.0], vec![4.0, 5.0], 3, 1, 2)
            .product()
            .unwrap();
        assert_eq!(effective_rank(&outer, 1e-8).unwrap(), 1);
        assert!(effective_rank(&outer, 0.0).is_err());
        assert!(effective_rank(&outer, 1.0).is_err());
    }

    #[test]
    fn additive_reference_bounded_by_rank() {
        let b = DenseMatrix::new(4, 2, vec![0.3, 1.0, -0.5, 0.2, 0.9, -1.1, 0.4, 0.7]).unwrap();
        let a = DenseMatrix::new(2, 4, vec![1.2, -0.3, 0.8, 0.1, -0.6, 0.5, 0.2, 1.4]).unwrap();
        assert!(additive_delta_rank_reference(&b, &a, 1e-10).unwrap() <= 2);
        let z = DenseMatrix::zeros(4, 2);
        assert_eq!(
            additive_delta_rank_reference(&z, &DenseMatrix::zeros(2, 4), 1e-10).unwrap(),
            0
        );
    }
}
