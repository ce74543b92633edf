//! On-disk spectrum cache.
//!
//! Layout (little endian): magic, `u32` version, 32-byte model hash, `u32` site count,
//! `f64` energy scale, then for each doubled spin `t = 0..=N`: `u64` multiplet count,
//! `u64` rows, the energies and the column-major highest-weight eigenvectors.
//! Lowering chains are regenerated on load.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{
    build_hamiltonian_with_limit, build_spin_operators_with_limit, SpinModelSpec, DEFAULT_MAX_SITES,
};

use super::{decompose, SpectrumTable};

const MAGIC: &[u8; 8] = b"NAETHSPC";
pub const CACHE_VERSION: u32 = 1;

pub fn cache_path(dir: &Path, hash: &[u8; 32]) -> PathBuf {
    let hex: String = hash.iter().map(|b| format!("{b:02x}")).collect();
    dir.join(format!("spectrum-{hex}.bin"))
}

fn cache_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Cache {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

pub fn store_cached(table: &SpectrumTable, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = cache_path(dir, table.model_spec_hash());
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_all(&CACHE_VERSION.to_le_bytes())?;
        w.write_all(table.model_spec_hash())?;
        w.write_all(&(table.n_sites() as u32).to_le_bytes())?;
        w.write_all(&table.energy_scale().to_le_bytes())?;
        for t in 0..=table.n_sites() {
            let labels =
                table.labels_with_spin(crate::spin_algebra::HalfInteger::from_twice(t as i32));
            let hw = table.highest_weight(t);
            w.write_all(&(labels.len() as u64).to_le_bytes())?;
            w.write_all(&(hw.nrows() as u64).to_le_bytes())?;
            for &e in &table.energies()[labels] {
                w.write_all(&e.to_le_bytes())?;
            }
            for &x in hw.as_slice() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()?;
    }
    fs::rename(&tmp, &path)?;
    Ok(path)
}

struct Reader<'a, R> {
    inner: R,
    path: &'a Path,
}

impl<R: Read> Reader<'_, R> {
    fn bytes<const K: usize>(&mut self) -> Result<[u8; K]> {
        let mut buf = [0u8; K];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| cache_err(self.path, format!("truncated: {e}")))?;
        Ok(buf)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
}

/// Loads a cached table. `Ok(None)` if there is no file for this hash.
pub fn load_cached(dir: &Path, hash: &[u8; 32]) -> Result<Option<SpectrumTable>> {
    let path = cache_path(dir, hash);
    let file = match fs::File::open(&path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let mut r = Reader {
        inner: BufReader::new(file),
        path: &path,
    };
    if &r.bytes::<8>()? != MAGIC {
        return Err(cache_err(&path, "bad magic"));
    }
    let version = r.u32()?;
    if version != CACHE_VERSION {
        return Err(cache_err(
            &path,
            format!("version {version}, expected {CACHE_VERSION}"),
        ));
    }
    let stored: [u8; 32] = r.bytes()?;
    if &stored != hash {
        return Err(cache_err(&path, "model hash mismatch"));
    }
    let n_sites = r.u32()? as usize;
    if n_sites == 0 || n_sites > 30 {
        return Err(cache_err(
            &path,
            format!("implausible site count {n_sites}"),
        ));
    }
    let energy_scale = r.f64()?;
    let mut per_spin = Vec::with_capacity(n_sites + 1);
    let mut total = 0usize;
    for t in 0..=n_sites {
        let count = r.u64()? as usize;
        let rows = r.u64()? as usize;
        let expected_rows = if count == 0 {
            0
        } else {
            binomial(n_sites, (n_sites + t) / 2)
        };
        if rows != expected_rows || count > rows.max(1) {
            return Err(cache_err(&path, format!("bad block shape at 2s={t}")));
        }
        let energies = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let data = (0..rows * count)
            .map(|_| r.f64())
            .collect::<Result<Vec<_>>>()?;
        total += count * (t + 1);
        per_spin.push((energies, DMatrix::from_vec(rows, count, data)));
    }
    if total != 1usize << n_sites {
        return Err(cache_err(&path, "multiplet dimensions do not sum to 2^N"));
    }
    let mut trailing = [0u8; 1];
    if r.inner.read(&mut trailing)? != 0 {
        return Err(cache_err(&path, "trailing bytes"));
    }
    Ok(Some(SpectrumTable::from_parts(
        n_sites,
        *hash,
        energy_scale,
        per_spin,
    )))
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// Decomposes the model, reusing `cache_dir` when a matching file exists.
/// Unreadable cache files are replaced.
pub fn load_or_decompose(spec: &SpinModelSpec, cache_dir: Option<&Path>) -> Result<SpectrumTable> {
    load_or_decompose_with_limit(spec, cache_dir, DEFAULT_MAX_SITES)
}

pub fn load_or_decompose_with_limit(
    spec: &SpinModelSpec,
    cache_dir: Option<&Path>,
    max_sites: usize,
) -> Result<SpectrumTable> {
    if spec.n_sites > max_sites {
        return Err(Error::Resource {
            n_sites: spec.n_sites,
            limit: max_sites,
        });
    }
    let hash = spec.digest();
    if let Some(dir) = cache_dir {
        match load_cached(dir, &hash) {
            Ok(Some(table)) => return Ok(table),
            Ok(None) => {}
            Err(e) => log::warn!("ignoring spectrum cache: {e}"),
        }
    }
    let h = build_hamiltonian_with_limit(spec, max_sites)?;
    let ops = build_spin_operators_with_limit(spec.n_sites, max_sites)?;
    let table = decompose(&h, &ops)?.with_model_hash(hash);
    if let Some(dir) = cache_dir {
        store_cached(&table, dir)?;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_reproduces_vectors() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SpinModelSpec::default_random(6, 5);
        let a = load_or_decompose(&spec, Some(dir.path())).unwrap();
        let path = cache_path(dir.path(), &spec.digest());
        assert!(path.exists());
        let b = load_cached(dir.path(), &spec.digest()).unwrap().unwrap();
        assert_eq!(a.energies(), b.energies());
        assert_eq!(a.digest(), b.digest());
        for u in 0..=6 {
            assert_eq!(a.sector(u), b.sector(u));
        }
    }

    #[test]
    fn corrupt_file_is_reported_then_replaced() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SpinModelSpec::default_random(4, 1);
        let path = cache_path(dir.path(), &spec.digest());
        fs::write(&path, b"NAETHSPC garbage").unwrap();
        assert!(matches!(
            load_cached(dir.path(), &spec.digest()),
            Err(Error::Cache { .. })
        ));
        let t = load_or_decompose(&spec, Some(dir.path())).unwrap();
        assert_eq!(t.len(), 6);
        assert!(load_cached(dir.path(), &spec.digest()).unwrap().is_some());
    }

    #[test]
    fn missing_file_is_none() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_cached(dir.path(), &[0; 32]).unwrap().is_none());
    }
}
