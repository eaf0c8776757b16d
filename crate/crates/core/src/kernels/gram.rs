use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_GRAM_CAP: usize = 2048;

const NPKG_MAGIC: &[u8; 4] = b"NPKG";

/// FNV-1a over the little-endian bytes of every coordinate, as hex.
pub fn fingerprint(points: &[Vec<f64>]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in points {
        for v in p {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// Symmetric kernel matrix over a point set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramMatrix {
    pub n: usize,
    /// Row-major, `n * n`.
    pub data: Vec<f64>,
    pub tag: String,
    pub fingerprint: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsdReport {
    pub min_eigenvalue: f64,
    pub trace: f64,
    /// `-1e-8 * trace / n`.
    pub floor: f64,
    pub passed: bool,
}

/// Fills the upper triangle in parallel and mirrors it. Fails on the first
/// pair whose kernel evaluation fails, reporting its indices.
pub fn gram<K>(points: &[Vec<f64>], tag: &str, cap: usize, kernel: K) -> Result<GramMatrix>
where
    K: Fn(&[f64], &[f64]) -> Result<f64> + Sync,
{
    let n = points.len();
    if n == 0 {
        return Err(Error::invalid("Gram matrix of an empty point set"));
    }
    if n > cap {
        return Err(Error::invalid(format!(
            "{n} points exceed the Gram cap of {cap}"
        )));
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i..n)
                .map(|j| {
                    let v = kernel(&points[i], &points[j]).map_err(|e| Error::KernelPair {
                        i,
                        j,
                        source: Box::new(e),
                    })?;
                    if !v.is_finite() {
                        return Err(Error::KernelPair {
                            i,
                            j,
                            source: Box::new(Error::NonFinite(format!("kernel value {v}"))),
                        });
                    }
                    Ok(v)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut data = vec![0.0; n * n];
    for (i, row) in rows.iter().enumerate() {
        for (k, &v) in row.iter().enumerate() {
            let j = i + k;
            data[i * n + j] = v;
            data[j * n + i] = v;
        }
    }
    Ok(GramMatrix {
        n,
        data,
        tag: tag.to_string(),
        fingerprint: fingerprint(points),
    })
}

impl GramMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for j in i + 1..self.n {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let m = DMatrix::from_row_slice(self.n, self.n, &self.data);
        let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// Minimum eigenvalue against the floor `-1e-8 * trace / n`.
    pub fn check_psd(&self) -> PsdReport {
        let min_eigenvalue = self.eigenvalues()[0];
        let trace = self.trace();
        let floor = -1e-8 * trace.abs() / self.n as f64;
        PsdReport {
            min_eigenvalue,
            trace,
            floor,
            passed: min_eigenvalue >= floor,
        }
    }

    /// Header `# kernel=<tag> fingerprint=<hex> n=<n>`, then one
    /// comma-separated row per line in shortest round-trip notation.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "# kernel={} fingerprint={} n={}",
            self.tag, self.fingerprint, self.n
        )?;
        for i in 0..self.n {
            let line: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut tag = String::from("unknown");
        let mut fp = String::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut offset = 0u64;
        for line in BufReader::new(r).lines() {
            let line = line.map_err(|e| Error::Parse {
                offset,
                message: e.to_string(),
            })?;
            let len = line.len() as u64 + 1;
            let t = line.trim();
            if let Some(header) = t.strip_prefix('#') {
                for field in header.split_whitespace() {
                    if let Some(v) = field.strip_prefix("kernel=") {
                        tag = v.to_string();
                    } else if let Some(v) = field.strip_prefix("fingerprint=") {
                        fp = v.to_string();
                    }
                }
            } else if !t.is_empty() {
                let row = t
                    .split(',')
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::Parse {
                        offset,
                        message: e.to_string(),
                    })?;
                rows.push(row);
            }
            offset += len;
        }
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(Error::Parse {
                offset: 0,
                message: "Gram CSV is not a non-empty square matrix".into(),
            });
        }
        Ok(Self {
            n,
            data: rows.concat(),
            tag,
            fingerprint: fp,
        })
    }

    /// `NPKG`, `n` as u32, then `n * n` f64 row-major, all little-endian.
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(NPKG_MAGIC)?;
        w.write_all(&(self.n as u32).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| Error::Parse {
            offset: 0,
            message: e.to_string(),
        })?;
        if bytes.len() < 8 || &bytes[..4] != NPKG_MAGIC {
            return Err(Error::Parse {
                offset: 0,
                message: "missing NPKG header".into(),
            });
        }
        let n = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let want = 8 + n * n * 8;
        if bytes.len() != want {
            return Err(Error::Parse {
                offset: bytes.len().min(want) as u64,
                message: format!("expected {want} bytes for n = {n}, found {}", bytes.len()),
            });
        }
        let data = bytes[8..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Self {
            n,
            data,
            tag: "unknown".into(),
            fingerprint: String::new(),
        })
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
            .map_err(|e| Error::io(path, e))
    }

    pub fn save_binary(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_binary(std::io::BufWriter::new(f))
            .map_err(|e| Error::io(path, e))
    }
}
