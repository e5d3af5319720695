//! Binary trajectory files.
//!
//! Layout, all little-endian, no padding:
//!
//! | bytes | field |
//! |---|---|
//! | 4 | magic `DONL` |
//! | 4 | format version (u32) |
//! | 1 | equation tag |
//! | 1 | resolution tag |
//! | 8 | sample count `N` (u64) |
//! | 8 | `n_t` (u64) |
//! | 8 | `n_x` (u64) |
//! | 8 | `dt` (f64) |
//! | 8 | `dx` (f64) |
//! | 8 n_x | x grid |
//! | 8 n_t | t grid |
//! | 8 N n_t n_x | `u[sample][time][space]` |

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::pde::{EquationKind, Resolution, TrajectorySet};

pub const MAGIC: &[u8; 4] = b"DONL";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 50;

/// Serializes a set; refuses non-finite values.
pub fn encode_dataset(set: &TrajectorySet) -> Result<Vec<u8>> {
    set.validate()?;
    if let Some(i) = set
        .u
        .iter()
        .chain(&set.xs)
        .chain(&set.ts)
        .position(|v| !v.is_finite())
    {
        return Err(Error::NonFinite {
            value: f64::NAN,
            context: format!("dataset value #{i} is not finite"),
        });
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * (set.xs.len() + set.ts.len() + set.u.len()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(set.equation.tag());
    out.push(set.resolution.tag());
    out.extend_from_slice(&(set.len() as u64).to_le_bytes());
    out.extend_from_slice(&(set.n_t() as u64).to_le_bytes());
    out.extend_from_slice(&(set.n_x() as u64).to_le_bytes());
    out.extend_from_slice(&set.dt.to_le_bytes());
    out.extend_from_slice(&set.dx.to_le_bytes());
    for v in set.xs.iter().chain(&set.ts).chain(&set.u) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                message: format!(
                    "truncated {what}: expected {n} bytes, {} remain",
                    self.buf.len() - self.pos
                ),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(n * 8, what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

fn format_err(offset: usize, message: String) -> Error {
    Error::Format {
        offset: offset as u64,
        message,
    }
}

pub fn decode_dataset(buf: &[u8]) -> Result<TrajectorySet> {
    let mut r = Reader { buf, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(format_err(0, format!("bad magic {magic:?}")));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(format_err(4, format!("unsupported version {version}")));
    }
    let eq_tag = r.u8("equation tag")?;
    let equation = EquationKind::from_tag(eq_tag)
        .ok_or_else(|| format_err(8, format!("unknown equation tag {eq_tag}")))?;
    let res_tag = r.u8("resolution tag")?;
    let resolution = Resolution::from_tag(res_tag)
        .ok_or_else(|| format_err(9, format!("unknown resolution tag {res_tag}")))?;
    let n = r.u64("sample count")?;
    let n_t = r.u64("n_t")?;
    let n_x = r.u64("n_x")?;
    let dt = r.f64("dt")?;
    let dx = r.f64("dx")?;
    let values = n
        .checked_mul(n_t)
        .and_then(|v| v.checked_mul(n_x))
        .and_then(|v| v.checked_add(n_t + n_x))
        .and_then(|v| v.checked_mul(8))
        .ok_or_else(|| format_err(10, "header sizes overflow".into()))?;
    let actual = (buf.len() - HEADER_LEN) as u64;
    if actual != values {
        return Err(format_err(
            HEADER_LEN,
            format!("payload length: expected {values} bytes, found {actual}"),
        ));
    }
    let xs = r.f64s(n_x as usize, "x grid")?;
    let ts = r.f64s(n_t as usize, "t grid")?;
    let u = r.f64s((n * n_t * n_x) as usize, "values")?;
    Ok(TrajectorySet {
        equation,
        resolution,
        dt,
        dx,
        xs,
        ts,
        u,
    })
}

/// Writes to a temporary file next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_dataset(path: &Path, set: &TrajectorySet) -> Result<()> {
    write_atomic(path, &encode_dataset(set)?)
}

pub fn read_dataset(path: &Path) -> Result<TrajectorySet> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_set() -> TrajectorySet {
        TrajectorySet {
            equation: EquationKind::Bbm,
            resolution: Resolution::Low,
            dt: 0.375,
            dx: 0.2,
            xs: vec![0.0, 0.2, 0.4],
            ts: vec![0.0, 0.375],
            u: vec![1.0, -0.0, 3.5, 1e-300, 2.0, f64::MIN_POSITIVE, 7.0, 8.0, 9.0, 1.5, 2.5, -4.0],
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let set = sample_set();
        let bytes = encode_dataset(&set).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 8 * (3 + 2 + 12));
        let back = decode_dataset(&bytes).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.u), bits(&set.u));
        assert_eq!(encode_dataset(&back).unwrap(), bytes);
    }

    #[test]
    fn truncation_reports_lengths() {
        let bytes = encode_dataset(&sample_set()).unwrap();
        let err = decode_dataset(&bytes[..bytes.len() - 3]).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Format { offset: 50, .. }), "{msg}");
        assert!(msg.contains("expected 136") && msg.contains("found 133"), "{msg}");
        assert!(matches!(
            decode_dataset(&bytes[..20]),
            Err(Error::Format { offset: 18, .. })
        ));
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = encode_dataset(&sample_set()).unwrap();
        bytes[4] = 9;
        assert!(matches!(decode_dataset(&bytes), Err(Error::Format { offset: 4, .. })));
        bytes[0] = b'X';
        assert!(matches!(decode_dataset(&bytes), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn nan_rejected_on_write() {
        let mut set = sample_set();
        set.u[3] = f64::NAN;
        assert!(encode_dataset(&set).is_err());
    }
}
