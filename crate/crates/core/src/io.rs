//! Sample files keyed by exact grid coordinates, plus atomic file output.
//!
//! Binary layout (little endian): magic `MBSP`, version u32, count u64, then
//! `count` records of {n i64, k u16, q u32, re f64, im f64}. The CSV form has
//! the header `n,k,q,re,im`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::reconstructor::{GridKey, SampleSource};

const MAGIC: &[u8; 4] = b"MBSP";
const VERSION: u32 = 1;
const RECORD_LEN: usize = 8 + 2 + 4 + 8 + 8;

/// Samples keyed by grid point. Serves as a `SampleSource`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleSet {
    samples: BTreeMap<GridKey, Complex64>,
}

impl SampleSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: GridKey, value: Complex64) {
        self.samples.insert(key, value);
    }

    pub fn get(&self, key: &GridKey) -> Option<Complex64> {
        self.samples.get(key).copied()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&GridKey, &Complex64)> {
        self.samples.iter()
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Complex64> {
        self.samples.values_mut()
    }

    pub fn keys(&self) -> impl Iterator<Item = &GridKey> {
        self.samples.keys()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(16 + RECORD_LEN * self.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for (key, v) in &self.samples {
            let k = u16::try_from(key.k).map_err(|_| Error::Format(format!("grid index k={} exceeds u16", key.k)))?;
            out.extend_from_slice(&key.n.to_le_bytes());
            out.extend_from_slice(&k.to_le_bytes());
            out.extend_from_slice(&key.q.to_le_bytes());
            out.extend_from_slice(&v.re.to_le_bytes());
            out.extend_from_slice(&v.im.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(Error::Format("missing MBSP header".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let body = &bytes[16..];
        if count.checked_mul(RECORD_LEN as u64) != Some(body.len() as u64) {
            return Err(Error::Format(format!("header announces {count} records, body holds {} bytes", body.len())));
        }
        let mut set = SampleSet::new();
        for rec in body.chunks_exact(RECORD_LEN) {
            let n = i64::from_le_bytes(rec[0..8].try_into().unwrap());
            let k = u16::from_le_bytes(rec[8..10].try_into().unwrap()) as usize;
            let q = u32::from_le_bytes(rec[10..14].try_into().unwrap());
            let re = f64::from_le_bytes(rec[14..22].try_into().unwrap());
            let im = f64::from_le_bytes(rec[22..30].try_into().unwrap());
            set.insert(GridKey { n, k, q }, Complex64::new(re, im));
        }
        Ok(set)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,k,q,re,im\n");
        for (key, v) in &self.samples {
            s.push_str(&format!("{},{},{},{:e},{:e}\n", key.n, key.k, key.q, v.re, v.im));
        }
        s
    }

    pub fn from_csv(reader: impl Read) -> Result<Self> {
        let mut set = SampleSet::new();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || (i == 0 && line.starts_with('n')) {
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 5 {
                return Err(Error::Format(format!("line {}: expected 5 fields", i + 1)));
            }
            let bad = |_| Error::Format(format!("line {}: unparsable field", i + 1));
            let key = GridKey {
                n: f[0].parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                k: f[1].parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                q: f[2].parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            };
            let re: f64 = f[3].parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?;
            let im: f64 = f[4].parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?;
            set.insert(key, Complex64::new(re, im));
        }
        Ok(set)
    }

    /// Reads either format; `.csv` files are parsed as text.
    pub fn load(path: &Path) -> Result<Self> {
        if is_csv(path) {
            Self::from_csv(fs::File::open(path)?)
        } else {
            Self::from_bytes(&fs::read(path)?)
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if is_csv(path) {
            write_atomic(path, self.to_csv().as_bytes())
        } else {
            write_atomic(path, &self.to_bytes()?)
        }
    }
}

impl FromIterator<(GridKey, Complex64)> for SampleSet {
    fn from_iter<I: IntoIterator<Item = (GridKey, Complex64)>>(iter: I) -> Self {
        SampleSet { samples: iter.into_iter().collect() }
    }
}

impl SampleSource for SampleSet {
    fn sample(&self, key: GridKey) -> Result<Complex64> {
        self.get(&key).ok_or(Error::MissingSample { n: key.n, k: key.k, q: key.q })
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().ok_or_else(|| Error::invalid(format!("{} is not a file path", path.display())))?;
    let mut tmp = PathBuf::from(dir);
    tmp.push(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        w.write_all(bytes)?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    }
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        e.into()
    })
}

/// CSV text with a header row from rows of numbers.
pub fn csv_table(header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}
