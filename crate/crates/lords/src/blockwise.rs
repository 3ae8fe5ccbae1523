use crate::codebook::{build_codebook, nearest_scaled_level, Codebook, CodebookId};
use crate::engine::FactorPair;
use crate::error::{Error, Result};
use crate::matrix::{hadamard, DenseMatrix};

/// Per-block absmax scaling factors, one per contiguous run of `block_size`
/// elements within a row.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockScales {
    scales: DenseMatrix,
    block_size: usize,
}

impl BlockScales {
    pub fn new(scales: DenseMatrix, block_size: usize) -> Result<Self> {
        if block_size == 0 {
            return Err(Error::shape("block size must be at least 1".to_string()));
        }
        if scales.data().iter().any(|&s| s < 0.0) {
            return Err(Error::invalid("block scales must be nonnegative".to_string()));
        }
        Ok(BlockScales { scales, block_size })
    }

    pub fn scales(&self) -> &DenseMatrix {
        &self.scales
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }
}

/// How a quantized tensor stores its scales: the block-wise baseline keeps
/// the raw per-block factors, the factored form keeps the low-rank pair.
#[derive(Debug, Clone)]
pub enum ScaleRepr {
    Blocks(BlockScales),
    Factors(FactorPair),
}

/// The deployable artifact: packed level indices plus a scale representation.
#[derive(Debug, Clone)]
pub struct QuantizedTensor {
    rows: usize,
    cols: usize,
    codebook: CodebookId,
    codes: Vec<u8>,
    repr: ScaleRepr,
}

impl QuantizedTensor {
    pub fn new(
        rows: usize,
        cols: usize,
        codebook: CodebookId,
        codes: Vec<u8>,
        repr: ScaleRepr,
    ) -> Result<Self> {
        if codes.len() != rows * cols {
            return Err(Error::shape(format!(
                "expected {} codes for a {rows}x{cols} tensor, got {}",
                rows * cols,
                codes.len()
            )));
        }
        let level_count = build_codebook(codebook).len() as u8;
        if let Some(bad) = codes.iter().find(|&&c| c >= level_count) {
            return Err(Error::encoding(format!(
                "code index {bad} out of range for {} ({level_count} levels)",
                codebook.name()
            )));
        }
        match &repr {
            ScaleRepr::Blocks(bs) => {
                let (sn, sm) = (bs.scales.rows(), bs.scales.cols());
                if sn != rows || sm * bs.block_size != cols {
                    return Err(Error::shape(format!(
                        "scales {sn}x{sm} with block size {} do not cover a {rows}x{cols} tensor",
                        bs.block_size
                    )));
                }
            }
            ScaleRepr::Factors(f) => {
                if f.b().rows() != rows || f.a().cols() != cols {
                    return Err(Error::shape(format!(
                        "factors {}x{} * {}x{} do not produce a {rows}x{cols} tensor",
                        f.b().rows(),
                        f.b().cols(),
                        f.a().rows(),
                        f.a().cols()
                    )));
                }
            }
        }
        Ok(QuantizedTensor {
            rows,
            cols,
            codebook,
            codes,
            repr,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn codebook(&self) -> CodebookId {
        self.codebook
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    pub fn repr(&self) -> &ScaleRepr {
        &self.repr
    }

    /// The dense scale matrix this artifact implies.
    pub fn scale_matrix(&self) -> Result<DenseMatrix> {
        match &self.repr {
            ScaleRepr::Blocks(bs) => Ok(expand_scales(bs)),
            ScaleRepr::Factors(f) => f.product(),
        }
    }

    /// Codes as their real level values.
    pub fn level_matrix(&self) -> DenseMatrix {
        let cb = build_codebook(self.codebook);
        DenseMatrix::from_parts(
            self.rows,
            self.cols,
            self.codes.iter().map(|&c| cb.level(c)).collect(),
        )
    }
}

/// Absmax scale per contiguous block of `block_size` elements within a row.
/// Blocks never cross row boundaries.
pub fn compute_block_scales(w: &DenseMatrix, block_size: usize) -> Result<BlockScales> {
    if block_size == 0 || !w.cols().is_multiple_of(block_size) {
        return Err(Error::shape(format!(
            "block size {block_size} does not divide column count {}",
            w.cols()
        )));
    }
    let nb = w.cols() / block_size;
    let mut scales = DenseMatrix::zeros(w.rows(), nb);
    for i in 0..w.rows() {
        for b in 0..nb {
            let mut m = 0.0f64;
            for j in b * block_size..(b + 1) * block_size {
                m = m.max(w.get(i, j).abs());
            }
            scales.set(i, b, m);
        }
    }
    BlockScales::new(scales, block_size)
}

/// Repeats each block scale across its block: S = s (x) 1_{1xB}.
pub fn expand_scales(s: &BlockScales) -> DenseMatrix {
    let (n, nb, bs) = (s.scales.rows(), s.scales.cols(), s.block_size);
    let mut out = DenseMatrix::zeros(n, nb * bs);
    for i in 0..n {
        for b in 0..nb {
            let v = s.scales.get(i, b);
            for j in b * bs..(b + 1) * bs {
                out.set(i, j, v);
            }
        }
    }
    out
}

/// Baseline block-wise quantization: absmax scales, then per-element nearest
/// scaled level. All-zero blocks take the exact-zero level.
pub fn blockwise_quantize(
    w: &DenseMatrix,
    block_size: usize,
    cb: &Codebook,
) -> Result<QuantizedTensor> {
    let scales = compute_block_scales(w, block_size)?;
    let zero = cb.zero_index();
    let mut codes = Vec::with_capacity(w.rows() * w.cols());
    for i in 0..w.rows() {
        for j in 0..w.cols() {
            let s = scales.scales.get(i, j / block_size);
            if s == 0.0 {
                codes.push(zero);
            } else {
                codes.push(nearest_scaled_level(w.get(i, j), s, cb).0);
            }
        }
    }
    QuantizedTensor::new(
        w.rows(),
        w.cols(),
        cb.id(),
        codes,
        ScaleRepr::Blocks(scales),
    )
}

/// Reconstructs real weights: levels[codes] elementwise times the scale
/// matrix.
pub fn dequantize(q: &QuantizedTensor) -> Result<DenseMatrix> {
    hadamard(&q.level_matrix(), &q.scale_matrix()?)
}

/// Rank at which the factor-pair parameter count r(n+m) matches the
/// block-scale count nm/B.
pub fn equivalent_rank(n: usize, m: usize, block_size: usize) -> Result<usize> {
    if n == 0 || m == 0 || block_size == 0 {
        return Err(Error::invalid(
            "rows, cols, and block size must be at least 1".to_string(),
        ));
    }
    let r = (n * m) / (block_size * (n + m));
    if r < 1 {
        return Err(Error::invalid(format!(
            "shape {n}x{m} at block size {block_size} has no rank budget (floor is 0)"
        )));
    }
    Ok(r)
}

/// Equivalent rank plus the adapter rank of the parameter-aligned variant.
pub fn aligned_rank(n: usize, m: usize, block_size: usize, adapter_rank: usize) -> Result<usize> {
    Ok(equivalent_rank(n, m, block_size)? + adapter_rank)
}

/// Mixed-precision target: average bit width over the layer stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixedBits {
    Three,
    TwoPointFive,
    TwoPointTwoFive,
    Two,
}

impl MixedBits {
    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "3" => Ok(MixedBits::Three),
            "2.5" => Ok(MixedBits::TwoPointFive),
            "2.25" => Ok(MixedBits::TwoPointTwoFive),
            "2" => Ok(MixedBits::Two),
            other => Err(Error::invalid(format!(
                "unknown bits target '{other}' (expected 3, 2.5, 2.25, or 2)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MixedBits::Three => "3",
            MixedBits::TwoPointFive => "2.5",
            MixedBits::TwoPointTwoFive => "2.25",
            MixedBits::Two => "2",
        }
    }
}

/// First floor(p*L) layers NF4 (p = 1/2, 1/4, 1/8, 0 by target), the rest
/// NF2.
pub fn mixed_precision_plan(num_layers: usize, target: MixedBits) -> Result<Vec<CodebookId>> {
    if num_layers == 0 {
        return Err(Error::invalid("layer count must be at least 1".to_string()));
    }
    let nf4_count = match target {
        MixedBits::Three => num_layers / 2,
        MixedBits::TwoPointFive => num_layers / 4,
        MixedBits::TwoPointTwoFive => num_layers / 8,
        MixedBits::Two => 0,
    };
    Ok((0..num_layers)
        .map(|i| if i < nf4_count { CodebookId::Nf4 } else { CodebookId::Nf2 })
        .collect())
}
