//! Field series container and the `WF01` binary format.
//!
//! A `WF01` file is the 4-byte magic `WF01`, then `T`, `H`, `W` as
//! little-endian `u32`, then `T·H·W` little-endian `f32` values in t-major,
//! row-major order.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{s, Array2, Array3, ArrayView2};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"WF01";
pub const HEADER_LEN: usize = 16;

/// A window of hourly fields. `t0_hour` is the hour of day of frame 0.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSeries {
    data: Array3<f64>,
    t0_hour: u32,
    dt_hours: u32,
}

impl FieldSeries {
    /// Day window of 24 frames starting at 00:00, or 36 frames starting at 18:00
    /// of the previous day.
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let t0_hour = match data.dim().0 {
            24 => 0,
            36 => 18,
            t => return Err(Error::Shape(format!("a field series holds 24 or 36 frames, got {t}"))),
        };
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("field series contains non-finite values".into()));
        }
        Ok(Self { data, t0_hour, dt_hours: 1 })
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }

    pub fn t0_hour(&self) -> u32 {
        self.t0_hour
    }

    pub fn dt_hours(&self) -> u32 {
        self.dt_hours
    }

    pub fn len(&self) -> usize {
        self.data.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn frame(&self, t: usize) -> ArrayView2<'_, f64> {
        self.data.slice(s![t, .., ..])
    }

    /// The 24 frames 00:00–23:00 of a 36-frame window.
    pub fn crop24(&self) -> Result<FieldSeries> {
        if self.len() != 36 {
            return Err(Error::Shape("crop24 needs a 36-frame window".into()));
        }
        FieldSeries::new(self.data.slice(s![6..30, .., ..]).to_owned())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_fields(path, &self.data)
    }

    pub fn read(path: &Path) -> Result<Self> {
        FieldSeries::new(read_fields(path)?)
    }
}

/// Write any `T×H×W` array in `WF01` format, rounding values to `f32`.
pub fn write_fields(path: &Path, data: &Array3<f64>) -> Result<()> {
    let (t, h, w) = data.dim();
    let dims: Vec<u32> = [t, h, w]
        .iter()
        .map(|&d| u32::try_from(d).map_err(|_| Error::invalid(format!("dimension {d} exceeds u32"))))
        .collect::<Result<_>>()?;
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * data.len());
    buf.extend_from_slice(MAGIC);
    for d in dims {
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for &v in data.iter() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_fields(path: &Path) -> Result<Array3<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_fields(&bytes).map_err(|reason| Error::format(path, reason))
}

fn decode_fields(bytes: &[u8]) -> std::result::Result<Array3<f64>, String> {
    if bytes.len() < HEADER_LEN {
        return Err(format!("truncated header ({} bytes)", bytes.len()));
    }
    if &bytes[..4] != MAGIC {
        return Err(format!("bad magic {:?}", String::from_utf8_lossy(&bytes[..4])));
    }
    let dim = |k: usize| u32::from_le_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().unwrap()) as usize;
    let (t, h, w) = (dim(0), dim(1), dim(2));
    let n = t
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| format!("dimensions {t}x{h}x{w} overflow"))?;
    if bytes.len() - HEADER_LEN != n {
        return Err(format!("payload has {} bytes, header implies {n}", bytes.len() - HEADER_LEN));
    }
    let values: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Array3::from_shape_vec((t, h, w), values).map_err(|e| e.to_string())
}

/// Round every value to the nearest `f32`, so in-memory fields agree with
/// what `WF01` stores.
pub fn round_f32(a: &mut Array3<f64>) {
    a.mapv_inplace(|v| v as f32 as f64);
}

/// Broadcast a 2D plane over `t` frames.
pub fn repeat_plane(plane: &Array2<f64>, t: usize) -> Array3<f64> {
    let (h, w) = plane.dim();
    Array3::from_shape_fn((t, h, w), |(_, i, j)| plane[[i, j]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(seed: u64) -> FieldSeries {
        let mut x = seed;
        let data = Array3::from_shape_fn((24, 9, 11), |_| {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((x >> 40) as f64 / (1u64 << 24) as f64 * 20.0) as f32 as f64
        });
        FieldSeries::new(data).unwrap()
    }

    #[test]
    fn round_trip_and_size() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wf");
        let s = series(3);
        s.write(&p).unwrap();
        assert_eq!(FieldSeries::read(&p).unwrap(), s);

        let big = FieldSeries::new(Array3::zeros((24, 64, 64))).unwrap();
        big.write(&p).unwrap();
        assert_eq!(fs::metadata(&p).unwrap().len(), 16 + 24 * 64 * 64 * 4);
    }

    #[test]
    fn rejects_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wf");
        series(1).write(&p).unwrap();
        let mut bytes = fs::read(&p).unwrap();

        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XX01");
        assert!(decode_fields(&bad).unwrap_err().contains("magic"));

        bytes.truncate(bytes.len() - 3);
        assert!(decode_fields(&bytes).is_err());
        assert!(decode_fields(&bytes[..10]).is_err());

        let mut huge = MAGIC.to_vec();
        for _ in 0..3 {
            huge.extend_from_slice(&u32::MAX.to_le_bytes());
        }
        assert!(decode_fields(&huge).is_err());
    }

    #[test]
    fn window_lengths() {
        assert!(FieldSeries::new(Array3::zeros((10, 8, 8))).is_err());
        let w = FieldSeries::new(Array3::from_shape_fn((36, 8, 8), |(t, _, _)| t as f64)).unwrap();
        assert_eq!(w.t0_hour(), 18);
        let c = w.crop24().unwrap();
        assert_eq!(c.t0_hour(), 0);
        assert_eq!(c.frame(0)[[0, 0]], 6.0);
        assert_eq!(c.frame(23)[[0, 0]], 29.0);
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(vals in proptest::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 3 * 8 * 8)) {
            let data = Array3::from_shape_vec((3, 8, 8), vals.iter().map(|&v| v as f64).collect()).unwrap();
            let mut buf = Vec::new();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("p.wf");
            write_fields(&p, &data).unwrap();
            buf.extend(fs::read(&p).unwrap());
            let back = decode_fields(&buf).unwrap();
            for (a, b) in data.iter().zip(back.iter()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
