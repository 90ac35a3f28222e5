//! Binary file formats and the kernel-table cache.
//!
//! All numbers are little-endian; counts are `u64`, everything else `f64`.
//!
//! ```text
//! MSADK1  s d eps | len radii[len] | len v[len] | len g[len]
//! MSADP1  n N d t step_index seed | positions[n*N*d]      (alpha, i, coordinate)
//! MSADF1  n d m L t | values[n*m^d]                        (species, row-major)
//! ```
//!
//! In the snapshot header `n`, `N`, `d`, `step_index` and `seed` are `u64`
//! and `t` is `f64`; in the field header `n`, `d`, `m` are `u64`.

use std::fs;
use std::path::{Path, PathBuf};

use crate::kernels::{build_kernel_table, KernelTable, MollifierSpec, RieszSpec};
use crate::particles::ParticleState;
use crate::pde::{DensityField, Grid};
use crate::{Error, Result};

pub const KERNEL_MAGIC: &[u8; 6] = b"MSADK1";
pub const SNAPSHOT_MAGIC: &[u8; 6] = b"MSADP1";
pub const FIELD_MAGIC: &[u8; 6] = b"MSADF1";
/// Environment variable naming the kernel-table cache directory.
pub const CACHE_ENV: &str = "MSAD_CACHE_DIR";
/// Upper bound on array lengths accepted by the readers.
const MAX_ELEMENTS: u64 = 1 << 32;

struct Writer(Vec<u8>);

impl Writer {
    fn new(magic: &[u8; 6]) -> Self {
        Writer(magic.to_vec())
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64s(&mut self, v: &[f64]) {
        self.0.reserve(8 * v.len());
        for x in v {
            self.f64(*x);
        }
    }

    fn finish(self, path: &Path) -> Result<()> {
        write_atomic(path, &self.0)
    }
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Reader<'a> {
    fn new(path: &'a Path, bytes: &'a [u8], magic: &[u8; 6]) -> Result<Self> {
        let mut r = Reader {
            path,
            bytes,
            offset: 0,
        };
        let found = r.take(6)?;
        if found != magic {
            return Err(Error::Format {
                path: path.to_path_buf(),
                offset: 0,
                msg: format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(found),
                    String::from_utf8_lossy(magic)
                ),
            });
        }
        Ok(r)
    }

    fn error(&self, msg: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            offset: self.offset as u64,
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.offset < n {
            return Err(self.error(format!(
                "unexpected end of file: needed {n} bytes, {} left",
                self.bytes.len() - self.offset
            )));
        }
        let s = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn count(&mut self, what: &str) -> Result<usize> {
        let start = self.offset;
        let v = self.u64()?;
        if v > MAX_ELEMENTS {
            self.offset = start;
            return Err(self.error(format!("{what} = {v} is implausibly large")));
        }
        Ok(v as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(8 * n)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn finish(self) -> Result<()> {
        if self.offset != self.bytes.len() {
            return Err(self.error(format!(
                "{} trailing bytes",
                self.bytes.len() - self.offset
            )));
        }
        Ok(())
    }
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes through a sibling temporary file and renames it into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_kernel_table(path: &Path, table: &KernelTable) -> Result<()> {
    let mut w = Writer::new(KERNEL_MAGIC);
    w.f64(table.s());
    w.f64(table.d() as f64);
    w.f64(table.eps());
    for arr in [table.radii(), table.v_eps(), table.g_eps()] {
        w.u64(arr.len() as u64);
        w.f64s(arr);
    }
    w.finish(path)
}

pub fn read_kernel_table(path: &Path) -> Result<KernelTable> {
    let bytes = read_all(path)?;
    let mut r = Reader::new(path, &bytes, KERNEL_MAGIC)?;
    let s = r.f64()?;
    let d_at = r.offset;
    let d = r.f64()?;
    if !(d >= 1.0 && d.fract() == 0.0 && d < 64.0) {
        r.offset = d_at;
        return Err(r.error(format!("dimension {d} is not a small positive integer")));
    }
    let eps = r.f64()?;
    let mut arrays = Vec::with_capacity(3);
    for name in ["radii", "values", "derivatives"] {
        let len = r.count(name)?;
        arrays.push(r.f64s(len)?);
    }
    let end = r.offset;
    r.finish()?;
    let g = arrays.pop().expect("three arrays");
    let v = arrays.pop().expect("three arrays");
    let radii = arrays.pop().expect("three arrays");
    KernelTable::from_parts(s, d as usize, eps, radii, v, g).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        offset: end as u64,
        msg: e.to_string(),
    })
}

pub fn write_snapshot(path: &Path, state: &ParticleState) -> Result<()> {
    let mut w = Writer::new(SNAPSHOT_MAGIC);
    w.u64(state.n_species as u64);
    w.u64(state.n_particles as u64);
    w.u64(state.d as u64);
    w.f64(state.t);
    w.u64(state.step_index);
    w.u64(state.seed);
    w.f64s(&state.positions);
    w.finish(path)
}

pub fn read_snapshot(path: &Path) -> Result<ParticleState> {
    let bytes = read_all(path)?;
    let mut r = Reader::new(path, &bytes, SNAPSHOT_MAGIC)?;
    let n_species = r.count("species count")?;
    let n_particles = r.count("particle count")?;
    let d = r.count("dimension")?;
    let t = r.f64()?;
    let step_index = r.u64()?;
    let seed = r.u64()?;
    let len = n_species
        .checked_mul(n_particles)
        .and_then(|v| v.checked_mul(d))
        .ok_or_else(|| r.error("position count overflows"))?;
    let positions = r.f64s(len)?;
    r.finish()?;
    Ok(ParticleState {
        t,
        step_index,
        seed,
        n_species,
        n_particles,
        d,
        positions,
    })
}

pub fn write_field(path: &Path, field: &DensityField) -> Result<()> {
    let mut w = Writer::new(FIELD_MAGIC);
    w.u64(field.n_species() as u64);
    w.u64(field.grid.d() as u64);
    w.u64(field.grid.m() as u64);
    w.f64(field.grid.half_width());
    w.f64(field.t);
    for f in &field.species {
        w.f64s(f);
    }
    w.finish(path)
}

pub fn read_field(path: &Path) -> Result<DensityField> {
    let bytes = read_all(path)?;
    let mut r = Reader::new(path, &bytes, FIELD_MAGIC)?;
    let n = r.count("species count")?;
    let header = r.offset;
    let d = r.count("dimension")?;
    let m = r.count("grid size")?;
    let half_width = r.f64()?;
    let t = r.f64()?;
    let grid = Grid::new(d, m, half_width).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        offset: header as u64,
        msg: e.to_string(),
    })?;
    let species = (0..n).map(|_| r.f64s(grid.len())).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    DensityField::new(grid, t, species)
}

/// The cache directory: `$MSAD_CACHE_DIR`, else `msad-cache` in the system
/// temporary directory.
pub fn cache_dir() -> PathBuf {
    std::env::var_os(CACHE_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("msad-cache"))
}

/// Cache file name, keyed by the exact bit patterns of the parameters.
pub fn kernel_cache_name(riesz: &RieszSpec, eps: f64, n_points: usize, r_max: f64) -> String {
    format!(
        "kernel-s{:016x}-d{}-e{:016x}-p{}-r{:016x}.msadk1",
        riesz.s().to_bits(),
        riesz.d(),
        eps.to_bits(),
        n_points,
        r_max.to_bits()
    )
}

/// Loads a kernel table from the cache, building and storing it on a miss.
/// Unreadable cache entries are rebuilt.
pub fn cached_kernel_table(
    riesz: &RieszSpec,
    moll: &MollifierSpec,
    n_points: usize,
    r_max: f64,
) -> Result<KernelTable> {
    let dir = cache_dir();
    let path = dir.join(kernel_cache_name(riesz, moll.eps(), n_points, r_max));
    if path.exists() {
        match read_kernel_table(&path) {
            Ok(t) if t.s() == riesz.s() && t.d() == riesz.d() && t.eps() == moll.eps() => return Ok(t),
            Ok(_) => log::warn!("{} holds a different table; rebuilding", path.display()),
            Err(e) => log::warn!("discarding kernel cache entry: {e}"),
        }
    }
    let table = build_kernel_table(riesz, moll, n_points, r_max)?;
    if let Err(e) = fs::create_dir_all(&dir)
        .map_err(|e| Error::io(&dir, e))
        .and_then(|_| write_kernel_table(&path, &table))
    {
        log::warn!("kernel table not cached: {e}");
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> KernelTable {
        build_kernel_table(
            &RieszSpec::coulomb(3).unwrap(),
            &MollifierSpec::from_eps(0.5).unwrap(),
            128,
            20.0,
        )
        .unwrap()
    }

    #[test]
    fn kernel_table_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.msadk1");
        let t = table();
        write_kernel_table(&path, &t).unwrap();
        let back = read_kernel_table(&path).unwrap();
        assert_eq!(back.radii(), t.radii());
        assert_eq!(back.v_eps(), t.v_eps());
        assert_eq!(back.g_eps(), t.g_eps());
        assert_eq!((back.s(), back.d(), back.eps()), (t.s(), t.d(), t.eps()));
    }

    #[test]
    fn snapshot_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.msadp1");
        let s = ParticleState {
            t: 0.25,
            step_index: 7,
            seed: u64::MAX - 3,
            n_species: 2,
            n_particles: 3,
            d: 3,
            positions: (0..18).map(|k| k as f64 * 0.1 - 0.7).collect(),
        };
        write_snapshot(&path, &s).unwrap();
        assert_eq!(read_snapshot(&path).unwrap(), s);
        assert_eq!(fs::metadata(&path).unwrap().len(), 6 + 6 * 8 + 18 * 8);
    }

    #[test]
    fn field_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.msadf1");
        let grid = Grid::new(3, 32, 4.0).unwrap();
        let species = vec![(0..grid.len()).map(|k| k as f64).collect(), vec![0.5; grid.len()]];
        let f = DensityField::new(grid, 0.125, species).unwrap();
        write_field(&path, &f).unwrap();
        assert_eq!(read_field(&path).unwrap(), f);
    }

    #[test]
    fn corrupt_files_report_path_and_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.msadp1");
        fs::write(&path, b"MSADX1\0\0").unwrap();
        match read_snapshot(&path) {
            Err(Error::Format { path: p, offset, .. }) => {
                assert_eq!(p, path);
                assert_eq!(offset, 0);
            }
            other => panic!("unexpected {other:?}"),
        }
        // valid header, truncated payload
        let s = ParticleState {
            t: 0.0,
            step_index: 0,
            seed: 1,
            n_species: 1,
            n_particles: 2,
            d: 3,
            positions: vec![0.0; 6],
        };
        write_snapshot(&path, &s).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 4);
        fs::write(&path, &bytes).unwrap();
        match read_snapshot(&path) {
            Err(Error::Format { offset, msg, .. }) => {
                assert_eq!(offset, 54);
                assert!(msg.contains("end of file"), "{msg}");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(read_field(&path), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let err = read_field(Path::new("/nonexistent/msad.f")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn cache_hit_returns_identical_table() {
        let riesz = RieszSpec::coulomb(3).unwrap();
        let moll = MollifierSpec::from_eps(0.75).unwrap();
        let a = cached_kernel_table(&riesz, &moll, 96, 16.0).unwrap();
        let path = cache_dir().join(kernel_cache_name(&riesz, 0.75, 96, 16.0));
        assert!(path.exists());
        let b = cached_kernel_table(&riesz, &moll, 96, 16.0).unwrap();
        assert_eq!(a.g_eps(), b.g_eps());
    }
}
