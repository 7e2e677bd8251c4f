//! Binary storage of posterior precisions as sparse triplets.
//!
//! Layout (little endian): magic `HPLQ`, version u32, league count u32;
//! per league: name length u32, UTF-8 name, dimension u32, entry count u64,
//! then `(row u32, col u32, value f64)` for every non-zero entry.

use std::io::{self, Read, Write};

use nalgebra::DMatrix;

const MAGIC: &[u8; 4] = b"HPLQ";
const VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

pub fn write_precisions<W: Write>(w: &mut W, items: &[(&str, &DMatrix<f64>)]) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(items.len() as u32).to_le_bytes())?;
    for (name, q) in items {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        let n = q.nrows();
        w.write_all(&(n as u32).to_le_bytes())?;
        let nnz = q.iter().filter(|v| **v != 0.0).count() as u64;
        w.write_all(&nnz.to_le_bytes())?;
        for i in 0..n {
            for j in 0..n {
                let v = q[(i, j)];
                if v != 0.0 {
                    w.write_all(&(i as u32).to_le_bytes())?;
                    w.write_all(&(j as u32).to_le_bytes())?;
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
    }
    w.flush()
}

fn u32_from<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_precisions<R: Read>(r: &mut R) -> io::Result<Vec<(String, DMatrix<f64>)>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("not a precision file"));
    }
    let version = u32_from(r)?;
    if version != VERSION {
        return Err(bad(format!("unsupported precision file version {version}")));
    }
    let count = u32_from(r)?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = u32_from(r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| bad("league name is not UTF-8"))?;
        let n = u32_from(r)? as usize;
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let nnz = u64::from_le_bytes(b8);
        let mut q = DMatrix::<f64>::zeros(n, n);
        for _ in 0..nnz {
            let (i, j) = (u32_from(r)? as usize, u32_from(r)? as usize);
            r.read_exact(&mut b8)?;
            if i >= n || j >= n {
                return Err(bad(format!("entry ({i}, {j}) outside a {n}x{n} matrix")));
            }
            q[(i, j)] = f64::from_le_bytes(b8);
        }
        out.push((name, q));
    }
    Ok(out)
}
