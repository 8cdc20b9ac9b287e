//! Little-endian binary files for coefficient bundles and reference states.
//!
//! Coefficient file:
//!
//! ```text
//! magic   8 bytes  "ETDCOEFS"
//! version u32      1
//! N       u64
//! tau     f64
//! tau1    f64      auxiliary stepsize actually used
//! order   u32      2, 3 or 4
//! then N·N f64 row-major for each present matrix, in the order
//! Q, Q_half, M1, M1_half, M2, M3 (order 2 stores Q, M1, M2 only)
//! ```
//!
//! Reference state file: magic `"ETDSTATE"`, version `u32`, `N` as `u64`,
//! time `f64`, then `N` values.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::coeffs::EtdCoefficients;
use crate::error::{EtdError, Result};
use crate::matrix::DenseMatrix;
use crate::system::State;

const COEF_MAGIC: &[u8; 8] = b"ETDCOEFS";
const STATE_MAGIC: &[u8; 8] = b"ETDSTATE";
const VERSION: u32 = 1;

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_u64(w: &mut impl Write, v: u64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_f64s(w: &mut impl Write, vs: &[f64]) -> Result<()> {
    for v in vs {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn get_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

fn check_magic(r: &mut impl Read, magic: &[u8; 8]) -> Result<()> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    if &b != magic {
        return Err(EtdError::Cache(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&b),
            String::from_utf8_lossy(magic)
        )));
    }
    let version = get_u32(r)?;
    if version != VERSION {
        return Err(EtdError::Cache(format!("unsupported version {version}")));
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

pub fn write_coefficients(path: &Path, coef: &EtdCoefficients) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(COEF_MAGIC)?;
    put_u32(&mut w, VERSION)?;
    put_u64(&mut w, coef.dim() as u64)?;
    put_f64s(&mut w, &[coef.tau(), coef.aux_stepsize()])?;
    put_u32(&mut w, coef.order() as u32)?;
    for (_, m) in coef.matrices() {
        put_f64s(&mut w, m.as_slice())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_coefficients(path: &Path) -> Result<EtdCoefficients> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, COEF_MAGIC)?;
    let n = get_u64(&mut r)? as usize;
    let tau = get_f64(&mut r)?;
    let tau1 = get_f64(&mut r)?;
    let order = get_u32(&mut r)?;
    if !(2..=4).contains(&order) {
        return Err(EtdError::Cache(format!("invalid order {order}")));
    }
    let mut next = || -> Result<DenseMatrix> { DenseMatrix::from_row_major(n, n, get_f64s(&mut r, n * n)?) };
    let q = next()?;
    let q_half = if order >= 3 { Some(next()?) } else { None };
    let m1 = next()?;
    let m1_half = if order >= 3 { Some(next()?) } else { None };
    let m2 = next()?;
    let m3 = if order >= 3 { Some(next()?) } else { None };
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(EtdError::Cache("trailing bytes after last matrix".into()));
    }
    EtdCoefficients::from_parts(tau, order as u8, tau1, q, q_half, m1, m1_half, m2, m3)
}

pub fn write_state(path: &Path, state: &State) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(STATE_MAGIC)?;
    put_u32(&mut w, VERSION)?;
    put_u64(&mut w, state.dim() as u64)?;
    put_f64s(&mut w, &[state.time])?;
    put_f64s(&mut w, &state.values)?;
    w.flush()?;
    Ok(())
}

pub fn read_state(path: &Path) -> Result<State> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, STATE_MAGIC)?;
    let n = get_u64(&mut r)? as usize;
    let time = get_f64(&mut r)?;
    let values = get_f64s(&mut r, n)?;
    Ok(State::new(values, time))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{build_coefficients, BuildOptions};
    use crate::system::MatrixSystem;

    fn sample(order: u8) -> EtdCoefficients {
        let l = DenseMatrix::from_rows(&[vec![-2.0, 1.0], vec![1.0, -2.0]]).unwrap();
        let sys = MatrixSystem::linear(l).unwrap();
        build_coefficients(&sys, 0.1, 1e-3, order, BuildOptions::default()).unwrap()
    }

    #[test]
    fn coefficient_header_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        let coef = sample(2);
        write_coefficients(&path, &coef).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], b"ETDCOEFS");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[12..20].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(bytes[20..28].try_into().unwrap()), 0.1);
        assert_eq!(u32::from_le_bytes(bytes[36..40].try_into().unwrap()), 2);
        assert_eq!(bytes.len(), 40 + 3 * 4 * 8);
        assert_eq!(f64::from_le_bytes(bytes[40..48].try_into().unwrap()), coef.q[(0, 0)]);
    }

    #[test]
    fn coefficients_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for order in [2, 4] {
            let path = dir.path().join(format!("c{order}.bin"));
            let coef = sample(order);
            write_coefficients(&path, &coef).unwrap();
            let back = read_coefficients(&path).unwrap();
            assert_eq!(back.order(), order);
            assert_eq!(back.aux_stepsize(), coef.aux_stepsize());
            assert_eq!(back.matrices(), coef.matrices());
        }
    }

    #[test]
    fn rejects_wrong_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.bin");
        write_state(&path, &State::new(vec![1.0, -2.5], 3.0)).unwrap();
        assert!(matches!(read_coefficients(&path), Err(EtdError::Cache(_))));
        let state = read_state(&path).unwrap();
        assert_eq!(state, State::new(vec![1.0, -2.5], 3.0));

        let coef_path = dir.path().join("c.bin");
        write_coefficients(&coef_path, &sample(2)).unwrap();
        let bytes = fs::read(&coef_path).unwrap();
        fs::write(&coef_path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(read_coefficients(&coef_path).is_err());
    }
}
