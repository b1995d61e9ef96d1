//! On-disk formats.
//!
//! Matrix file (`BTRI`): header `{magic "BTRI", version u32, precision u32
//! (32|64), N u64, n u64}` followed by `N*n*n` scalars for the diagonal
//! blocks then `(N-1)*n*n` for the off-diagonals, ascending block index,
//! row-major within each block, little-endian throughout.
//!
//! Right-hand-side file (`BRHS`): header `{magic "BRHS", version u32,
//! precision u32, N u64, n u64, m u64}` followed by `N*n*m` scalars, same
//! conventions.

use std::io::{Read, Write};
use std::path::Path;

use crate::block::DenseBlock;
use crate::error::{Error, Result};
use crate::matrix::{BlockTridiag, RhsBlocks};
use crate::scalar::Scalar;

pub const BTRI_MAGIC: &[u8; 4] = b"BTRI";
pub const BRHS_MAGIC: &[u8; 4] = b"BRHS";
pub const FORMAT_VERSION: u32 = 1;

fn write_scalar<S: Scalar, W: Write>(w: &mut W, v: S) -> Result<()> {
    if S::PRECISION_BITS == 32 {
        w.write_all(&(v.to_f64() as f32).to_le_bytes())?;
    } else {
        w.write_all(&v.to_f64().to_le_bytes())?;
    }
    Ok(())
}

fn read_scalar<S: Scalar, R: Read>(r: &mut R) -> Result<S> {
    if S::PRECISION_BITS == 32 {
        let mut buf = [0u8; 4];
        r.read_exact(&mut buf)?;
        Ok(S::from_f64(f32::from_le_bytes(buf) as f64))
    } else {
        let mut buf = [0u8; 8];
        r.read_exact(&mut buf)?;
        Ok(S::from_f64(f64::from_le_bytes(buf)))
    }
}

fn write_header<W: Write>(w: &mut W, magic: &[u8; 4], precision: u32, dims: &[u64]) -> Result<()> {
    w.write_all(magic)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&precision.to_le_bytes())?;
    for d in dims {
        w.write_all(&d.to_le_bytes())?;
    }
    Ok(())
}

fn read_header<R: Read>(r: &mut R, magic: &[u8; 4], ndims: usize) -> Result<(u32, Vec<u64>)> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&m),
            String::from_utf8_lossy(magic)
        )));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    r.read_exact(&mut b4)?;
    let precision = u32::from_le_bytes(b4);
    let mut dims = Vec::with_capacity(ndims);
    let mut b8 = [0u8; 8];
    for _ in 0..ndims {
        r.read_exact(&mut b8)?;
        dims.push(u64::from_le_bytes(b8));
    }
    Ok((precision, dims))
}

fn check_precision<S: Scalar>(precision: u32) -> Result<()> {
    if precision != S::PRECISION_BITS {
        return Err(Error::Format(format!(
            "file holds {precision}-bit scalars, expected {}",
            S::PRECISION_BITS
        )));
    }
    Ok(())
}

fn read_block<S: Scalar, R: Read>(r: &mut R, rows: usize, cols: usize) -> Result<DenseBlock<S>> {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(read_scalar::<S, _>(r)?);
    }
    Ok(DenseBlock::from_data(rows, cols, data))
}

pub fn write_btri<S: Scalar>(path: &Path, m: &BlockTridiag<S>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_header(
        &mut w,
        BTRI_MAGIC,
        S::PRECISION_BITS,
        &[m.nblocks() as u64, m.block_size() as u64],
    )?;
    for i in 0..m.nblocks() {
        for v in m.diag(i).data() {
            write_scalar(&mut w, *v)?;
        }
    }
    for i in 0..m.nblocks() - 1 {
        for v in m.offdiag(i).data() {
            write_scalar(&mut w, *v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_btri<S: Scalar>(path: &Path) -> Result<BlockTridiag<S>> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let (precision, dims) = read_header(&mut r, BTRI_MAGIC, 2)?;
    check_precision::<S>(precision)?;
    let (nblocks, n) = (dims[0] as usize, dims[1] as usize);
    if nblocks < 1 || n < 1 {
        return Err(Error::Format(format!("bad dimensions N={nblocks} n={n}")));
    }
    let mut diag = Vec::with_capacity(nblocks);
    for _ in 0..nblocks {
        diag.push(read_block::<S, _>(&mut r, n, n)?);
    }
    let mut offdiag = Vec::with_capacity(nblocks - 1);
    for _ in 0..nblocks - 1 {
        offdiag.push(read_block::<S, _>(&mut r, n, n)?);
    }
    Ok(BlockTridiag::new(diag, offdiag))
}

pub fn write_rhs<S: Scalar>(path: &Path, b: &RhsBlocks<S>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_header(
        &mut w,
        BRHS_MAGIC,
        S::PRECISION_BITS,
        &[b.nblocks() as u64, b.block_rows() as u64, b.ncols() as u64],
    )?;
    for i in 0..b.nblocks() {
        for v in b.block(i).data() {
            write_scalar(&mut w, *v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_rhs<S: Scalar>(path: &Path) -> Result<RhsBlocks<S>> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let (precision, dims) = read_header(&mut r, BRHS_MAGIC, 3)?;
    check_precision::<S>(precision)?;
    let (nblocks, n, m) = (dims[0] as usize, dims[1] as usize, dims[2] as usize);
    if nblocks < 1 || n < 1 || m < 1 {
        return Err(Error::Format(format!(
            "bad dimensions N={nblocks} n={n} m={m}"
        )));
    }
    let mut blocks = Vec::with_capacity(nblocks);
    for _ in 0..nblocks {
        blocks.push(read_block::<S, _>(&mut r, n, m)?);
    }
    Ok(RhsBlocks::from_blocks(blocks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probgen::{generate_rhs, generate_spd};

    #[test]
    fn btri_roundtrip_f64() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.btri");
        let m = generate_spd::<f64>(5, 3, 7);
        write_btri(&path, &m).unwrap();
        let back = read_btri::<f64>(&path).unwrap();
        for i in 0..5 {
            assert_eq!(m.diag(i), back.diag(i));
        }
        for i in 0..4 {
            assert_eq!(m.offdiag(i), back.offdiag(i));
        }
    }

    #[test]
    fn btri_roundtrip_f32_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.btri");
        let m = generate_spd::<f32>(3, 2, 1);
        write_btri(&path, &m).unwrap();
        let back = read_btri::<f32>(&path).unwrap();
        assert_eq!(m.diag(0), back.diag(0));
        assert!(matches!(read_btri::<f64>(&path), Err(Error::Format(_))));
    }

    #[test]
    fn rhs_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.brhs");
        let b = generate_rhs::<f64>(4, 3, 2, 11);
        write_rhs(&path, &b).unwrap();
        assert_eq!(read_rhs::<f64>(&path).unwrap(), b);
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.btri");
        std::fs::write(&path, b"BTRI\x01\x00").unwrap();
        assert!(read_btri::<f64>(&path).is_err());
    }
}
