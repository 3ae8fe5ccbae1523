use crate::error::{Error, Result};

/// Identifier of a quantization level table. The discriminant doubles as the
/// on-disk tag byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CodebookId {
    Nf4 = 0,
    Nf2 = 1,
    Int4s = 2,
}

impl CodebookId {
    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(CodebookId::Nf4),
            1 => Ok(CodebookId::Nf2),
            2 => Ok(CodebookId::Int4s),
            other => Err(Error::encoding(format!("unknown codebook tag {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CodebookId::Nf4 => "nf4",
            CodebookId::Nf2 => "nf2",
            CodebookId::Int4s => "int4s",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "nf4" => Ok(CodebookId::Nf4),
            "nf2" => Ok(CodebookId::Nf2),
            "int4s" => Ok(CodebookId::Int4s),
            other => Err(Error::invalid(format!(
                "unknown codebook '{other}' (expected nf4, nf2, or int4s)"
            ))),
        }
    }
}

/// NormalFloat4 levels: quantiles of the standard normal in the asymmetric
/// 8 + 7 + zero layout, normalized to [-1, 1]. Generated once from the
/// quantile construction and frozen here; a test regenerates the table from
/// an independent inverse normal CDF and compares.
pub const NF4_LEVELS: [f64; 16] = [
    -1.0,
    -0.696192805632343,
    -0.5250729594465005,
    -0.3949174259199071,
    -0.28444130892108205,
    -0.1847734028004556,
    -0.09104997598578049,
    0.0,
    0.07958031495840909,
    0.1609301443802907,
    0.2461122513474594,
    0.3379151367131279,
    0.44070973186421625,
    0.5626168879699849,
    0.7229566441594734,
    1.0,
];

/// Two-bit NormalFloat analogue from the same construction.
pub const NF2_LEVELS: [f64; 4] = [-1.0, 0.0, 0.3379151367131279, 1.0];

/// Symmetric 4-bit integer grid {k/7 : k = -7..7}, 15 levels with an exact
/// zero.
pub fn int4s_levels() -> [f64; 15] {
    let mut levels = [0.0; 15];
    for (i, k) in (-7..=7).enumerate() {
        levels[i] = k as f64 / 7.0;
    }
    levels
}

/// An ordered quantization level table.
#[derive(Debug, Clone)]
pub struct Codebook {
    id: CodebookId,
    levels: Vec<f64>,
    bits: u8,
}

/// Builds the level table for the given id.
pub fn build_codebook(id: CodebookId) -> Codebook {
    match id {
        CodebookId::Nf4 => Codebook {
            id,
            levels: NF4_LEVELS.to_vec(),
            bits: 4,
        },
        CodebookId::Nf2 => Codebook {
            id,
            levels: NF2_LEVELS.to_vec(),
            bits: 2,
        },
        CodebookId::Int4s => Codebook {
            id,
            levels: int4s_levels().to_vec(),
            bits: 4,
        },
    }
}

impl Codebook {
    pub fn id(&self) -> CodebookId {
        self.id
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index of the exact-zero level.
    pub fn zero_index(&self) -> u8 {
        self.levels.iter().position(|&v| v == 0.0).expect("codebooks contain 0") as u8
    }

    pub fn level(&self, index: u8) -> f64 {
        self.levels[index as usize]
    }
}

/// Nearest level to x by squared distance; ties resolve to the lower index.
pub fn nearest_level(x: f64, cb: &Codebook) -> (u8, f64) {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (i, &v) in cb.levels.iter().enumerate() {
        let d = (x - v) * (x - v);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    (best as u8, cb.levels[best])
}

/// Level minimizing (s*v - w)^2; ties resolve to the lower index. Well
/// defined for any s, including zero and negatives: no division happens.
pub fn nearest_scaled_level(w: f64, s: f64, cb: &Codebook) -> (u8, f64) {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (i, &v) in cb.levels.iter().enumerate() {
        let d = (s * v - w) * (s * v - w);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    (best as u8, cb.levels[best])
}

/// Packs level indices into bytes.
///
/// 4-bit layout: element 2k in the low nibble and 2k+1 in the high nibble of
/// byte k. 2-bit layout: element 4k+j in bits 2j..2j+2 of byte k. Odd tails
/// pad with zero indices.
pub fn pack_codes(indices: &[u8], bits: u8) -> Result<Vec<u8>> {
    let per_byte = match bits {
        4 => 2,
        2 => 4,
        other => return Err(Error::invalid(format!("unsupported pack width {other}"))),
    };
    let limit = 1u8 << bits;
    if let Some(bad) = indices.iter().find(|&&i| i >= limit) {
        return Err(Error::encoding(format!(
            "index {bad} does not fit in {bits} bits"
        )));
    }
    let mut out = vec![0u8; indices.len().div_ceil(per_byte)];
    for (pos, &idx) in indices.iter().enumerate() {
        let shift = (pos % per_byte) as u8 * bits;
        out[pos / per_byte] |= idx << shift;
    }
    Ok(out)
}

/// Exact inverse of `pack_codes` on the first `count` elements.
pub fn unpack_codes(bytes: &[u8], count: usize, bits: u8) -> Result<Vec<u8>> {
    let per_byte = match bits {
        4 => 2,
        2 => 4,
        other => return Err(Error::invalid(format!("unsupported pack width {other}"))),
    };
    let expected = count.div_ceil(per_byte);
    if bytes.len() != expected {
        return Err(Error::Truncated {
            expected: expected as u64,
            found: bytes.len() as u64,
        });
    }
    let mask = (1u16 << bits) as u8 - 1;
    let mut out = Vec::with_capacity(count);
    for pos in 0..count {
        let shift = (pos % per_byte) as u8 * bits;
        out.push((bytes[pos / per_byte] >> shift) & mask);
    }
    Ok(out)
}
