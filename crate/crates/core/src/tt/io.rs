//! Binary container for QTT vectors and operators.
//!
//! Layout (all integers little-endian `u64` unless noted):
//! magic `b"QTT\0"`, `u32` version, `u8` kind (0 vector, 1 operator), core
//! count `N`, the mode sizes (one per core for vectors, row then column for
//! operators), the `N + 1` bond dimensions, then each core as row-major
//! little-endian `f64`.

use std::io::{Read, Write};

use ndarray::{Array3, Array4};

use super::{QttOperator, QttVector};
use crate::error::{QttError, Result};

const MAGIC: &[u8; 4] = b"QTT\0";
pub const FORMAT_VERSION: u32 = 1;
const MAX_CORES: u64 = 1 << 16;
const MAX_ENTRIES: u64 = 1 << 32;

fn put_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn write_header<W: Write>(w: &mut W, kind: u8, modes: &[usize], bonds: &[usize], n: usize) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&[kind])?;
    put_u64(w, n as u64)?;
    for &m in modes {
        put_u64(w, m as u64)?;
    }
    for &b in bonds {
        put_u64(w, b as u64)?;
    }
    Ok(())
}

fn read_header<R: Read>(r: &mut R, kind: u8) -> Result<(usize, Vec<usize>, Vec<usize>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(QttError::Format("bad magic".into()));
    }
    let mut vb = [0u8; 4];
    r.read_exact(&mut vb)?;
    let version = u32::from_le_bytes(vb);
    if version != FORMAT_VERSION {
        return Err(QttError::Format(format!("unsupported version {}", version)));
    }
    let mut kb = [0u8; 1];
    r.read_exact(&mut kb)?;
    if kb[0] != kind {
        return Err(QttError::Format("container holds a different object kind".into()));
    }
    let n = get_u64(r)?;
    if n == 0 || n > MAX_CORES {
        return Err(QttError::Format(format!("implausible core count {}", n)));
    }
    let n = n as usize;
    let per = if kind == 0 { 1 } else { 2 };
    let mut modes = Vec::with_capacity(n * per);
    for _ in 0..n * per {
        let m = get_u64(r)?;
        if m == 0 || m > MAX_ENTRIES {
            return Err(QttError::Format("bad mode size".into()));
        }
        modes.push(m as usize);
    }
    let mut bonds = Vec::with_capacity(n + 1);
    for _ in 0..=n {
        let b = get_u64(r)?;
        if b == 0 || b > MAX_ENTRIES {
            return Err(QttError::Format("bad bond dimension".into()));
        }
        bonds.push(b as usize);
    }
    Ok((n, modes, bonds))
}

fn read_f64s<R: Read>(r: &mut R, count: usize) -> Result<Vec<f64>> {
    if count as u64 > MAX_ENTRIES {
        return Err(QttError::Format("core too large".into()));
    }
    let mut buf = vec![0u8; count * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn write_f64s<'a, W: Write, I: Iterator<Item = &'a f64>>(w: &mut W, it: I) -> Result<()> {
    for v in it {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_vector<W: Write>(w: &mut W, x: &QttVector) -> Result<()> {
    write_header(w, 0, &x.mode_sizes(), &x.bond_dims(), x.num_cores())?;
    for c in x.cores() {
        write_f64s(w, c.iter())?;
    }
    Ok(())
}

pub fn read_vector<R: Read>(r: &mut R) -> Result<QttVector> {
    let (n, modes, bonds) = read_header(r, 0)?;
    let mut cores = Vec::with_capacity(n);
    for k in 0..n {
        let shape = (bonds[k], modes[k], bonds[k + 1]);
        let data = read_f64s(r, shape.0 * shape.1 * shape.2)?;
        cores.push(Array3::from_shape_vec(shape, data).unwrap());
    }
    QttVector::from_cores(cores)
}

pub fn write_operator<W: Write>(w: &mut W, a: &QttOperator) -> Result<()> {
    let modes: Vec<usize> = a.row_modes().into_iter().chain(a.col_modes()).collect();
    write_header(w, 1, &modes, &a.bond_dims(), a.num_cores())?;
    for c in a.cores() {
        write_f64s(w, c.iter())?;
    }
    Ok(())
}

pub fn read_operator<R: Read>(r: &mut R) -> Result<QttOperator> {
    let (n, modes, bonds) = read_header(r, 1)?;
    let mut cores = Vec::with_capacity(n);
    for k in 0..n {
        let shape = (bonds[k], modes[k], modes[n + k], bonds[k + 1]);
        let data = read_f64s(r, shape.0 * shape.1 * shape.2 * shape.3)?;
        cores.push(Array4::from_shape_vec(shape, data).unwrap());
    }
    QttOperator::from_cores(cores)
}

pub fn save_vector(path: &std::path::Path, x: &QttVector) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_vector(&mut f, x)?;
    f.flush()?;
    Ok(())
}

pub fn load_vector(path: &std::path::Path) -> Result<QttVector> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_vector(&mut f)
}
