use std::fs;
use std::path::Path;

use crate::blockwise::{BlockScales, QuantizedTensor, ScaleRepr};
use crate::codebook::{build_codebook, pack_codes, unpack_codes, CodebookId};
use crate::engine::FactorPair;
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

pub const TENSOR_MAGIC: [u8; 4] = *b"LRT1";
pub const PACKED_MAGIC: [u8; 4] = *b"LRQ1";
const FORMAT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

const REPR_BLOCKS: u8 = 0;
const REPR_FACTORS: u8 = 1;

/// Byte-stream reader with truncation accounting against the full file
/// length.
struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Cursor { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Truncated {
                expected: (self.pos + n) as u64,
                found: self.buf.len() as u64,
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Truncated {
                expected: self.pos as u64,
                found: self.buf.len() as u64,
            });
        }
        Ok(())
    }
}

fn check_magic(cursor: &mut Cursor, expected: [u8; 4]) -> Result<()> {
    let found: [u8; 4] = cursor.take(4)?.try_into().unwrap();
    if found != expected {
        return Err(Error::BadMagic { expected, found });
    }
    Ok(())
}

fn check_version(cursor: &mut Cursor) -> Result<()> {
    let v = cursor.u32()?;
    if v != FORMAT_VERSION {
        return Err(Error::Unsupported(format!("version {v} (expected {FORMAT_VERSION})")));
    }
    Ok(())
}

fn dim(v: u64) -> Result<usize> {
    usize::try_from(v).map_err(|_| Error::Unsupported(format!("dimension {v} exceeds this platform")))
}

fn f32_payload(cursor: &mut Cursor, count: usize) -> Result<Vec<f64>> {
    let bytes = cursor.take(count * 4)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect())
}

fn push_f32(out: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

/// Writes bytes through a temporary file in the destination directory and
/// renames it into place, so readers never observe a partial file.
fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => std::path::PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Atomically writes a text file. Reports and traces go through the same
/// temp-then-rename path as binary artifacts.
pub fn write_text(text: &str, path: &Path) -> Result<()> {
    atomic_write(path, text.as_bytes())
}

/// Serializes a matrix as a 32-bit tensor file. Internal 64-bit values
/// round to nearest even on conversion.
pub fn write_tensor(m: &DenseMatrix, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(26 + m.data().len() * 4);
    out.extend_from_slice(&TENSOR_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(DTYPE_F32);
    out.push(2);
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    push_f32(&mut out, m.data());
    atomic_write(path, &out)
}

/// Reads a 32-bit tensor file back into a 64-bit matrix.
pub fn read_tensor(path: &Path) -> Result<DenseMatrix> {
    let bytes = fs::read(path)?;
    let mut cur = Cursor::new(&bytes);
    check_magic(&mut cur, TENSOR_MAGIC)?;
    check_version(&mut cur)?;
    let dtype = cur.u8()?;
    if dtype != DTYPE_F32 {
        return Err(Error::Unsupported(format!("dtype {dtype} (expected {DTYPE_F32})")));
    }
    let ndim = cur.u8()?;
    if ndim != 2 {
        return Err(Error::Unsupported(format!("ndim {ndim} (expected 2)")));
    }
    let rows = dim(cur.u64()?)?;
    let cols = dim(cur.u64()?)?;
    let expected =
        26u64.saturating_add((rows as u64).saturating_mul(cols as u64).saturating_mul(4));
    if bytes.len() as u64 != expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len() as u64,
        });
    }
    let data = f32_payload(&mut cur, rows * cols)?;
    cur.finish()?;
    DenseMatrix::new(rows, cols, data)
}

/// Serializes a quantized tensor: header, scale representation, then packed
/// codes in the codebook's bit layout.
pub fn write_packed(q: &QuantizedTensor, path: &Path) -> Result<()> {
    let cb = build_codebook(q.codebook());
    let mut out = Vec::new();
    out.extend_from_slice(&PACKED_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(q.codebook().tag());
    match q.repr() {
        ScaleRepr::Blocks(_) => out.push(REPR_BLOCKS),
        ScaleRepr::Factors(_) => out.push(REPR_FACTORS),
    }
    out.extend_from_slice(&(q.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(q.cols() as u64).to_le_bytes());
    match q.repr() {
        ScaleRepr::Blocks(bs) => {
            out.extend_from_slice(&(bs.block_size() as u32).to_le_bytes());
            push_f32(&mut out, bs.scales().data());
        }
        ScaleRepr::Factors(f) => {
            out.extend_from_slice(&(f.rank() as u32).to_le_bytes());
            push_f32(&mut out, f.b().data());
            push_f32(&mut out, f.a().data());
        }
    }
    out.extend_from_slice(&pack_codes(q.codes(), cb.bits())?);
    atomic_write(path, &out)
}

/// Reads a packed artifact, validating every header field and the exact
/// byte length.
pub fn read_packed(path: &Path) -> Result<QuantizedTensor> {
    let bytes = fs::read(path)?;
    let mut cur = Cursor::new(&bytes);
    check_magic(&mut cur, PACKED_MAGIC)?;
    check_version(&mut cur)?;
    let codebook = CodebookId::from_tag(cur.u8()?)?;
    let cb = build_codebook(codebook);
    let repr_tag = cur.u8()?;
    let rows = dim(cur.u64()?)?;
    let cols = dim(cur.u64()?)?;
    if rows == 0 || cols == 0 {
        return Err(Error::shape(format!("dimensions must be positive, got {rows}x{cols}")));
    }
    let repr = match repr_tag {
        REPR_BLOCKS => {
            let block_size = cur.u32()? as usize;
            if block_size == 0 || cols % block_size != 0 {
                return Err(Error::shape(format!(
                    "block size {block_size} does not divide column count {cols}"
                )));
            }
            let scales = f32_payload(&mut cur, rows * (cols / block_size))?;
            ScaleRepr::Blocks(BlockScales::new(
                DenseMatrix::new(rows, cols / block_size, scales)?,
                block_size,
            )?)
        }
        REPR_FACTORS => {
            let rank = cur.u32()? as usize;
            if rank == 0 || rank > rows.min(cols) {
                return Err(Error::shape(format!(
                    "rank {rank} out of range for a {rows}x{cols} tensor"
                )));
            }
            let b = f32_payload(&mut cur, rows * rank)?;
            let a = f32_payload(&mut cur, rank * cols)?;
            ScaleRepr::Factors(FactorPair::new(
                DenseMatrix::new(rows, rank, b)?,
                DenseMatrix::new(rank, cols, a)?,
            )?)
        }
        other => return Err(Error::encoding(format!("unknown representation tag {other}"))),
    };
    let per_byte = 8 / cb.bits() as usize;
    let packed = cur.take((rows * cols).div_ceil(per_byte))?;
    cur.finish()?;
    let codes = unpack_codes(packed, rows * cols, cb.bits())?;
    QuantizedTensor::new(rows, cols, codebook, codes, repr)
}
