use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ClassId;

const MAGIC: &str = "gwpc";
const VERSION: &str = "v1";
const RECORD_BYTES: usize = 6 * 4;

/// A labeled or unlabeled point cloud. Values are kept at file precision.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub positions: Vec<[f32; 3]>,
    pub colors: Vec<[f32; 3]>,
    pub labels: Option<Vec<ClassId>>,
}

impl PointCloud {
    pub fn new(
        positions: Vec<[f32; 3]>,
        colors: Vec<[f32; 3]>,
        labels: Option<Vec<ClassId>>,
    ) -> Result<Self> {
        let cloud = Self {
            positions,
            colors,
            labels,
        };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        if self.colors.len() != n {
            return Err(Error::DimensionMismatch {
                what: "point colors",
                expected: n,
                actual: self.colors.len(),
            });
        }
        if let Some(labels) = &self.labels {
            if labels.len() != n {
                return Err(Error::DimensionMismatch {
                    what: "point labels",
                    expected: n,
                    actual: labels.len(),
                });
            }
        }
        for (i, c) in self.colors.iter().enumerate() {
            if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::invariant(format!("color of point {i} outside [0,1]")));
            }
        }
        for (i, p) in self.positions.iter().enumerate() {
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: "point positions",
                    row: i,
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn position(&self, i: usize) -> [f64; 3] {
        self.positions[i].map(f64::from)
    }

    pub fn color(&self, i: usize) -> [f64; 3] {
        self.colors[i].map(f64::from)
    }

    /// Returns a copy with the given labels attached.
    pub fn with_labels(&self, labels: Vec<ClassId>) -> Result<Self> {
        Self::new(self.positions.clone(), self.colors.clone(), Some(labels))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let has_labels = self.labels.is_some();
        let header = format!(
            "{MAGIC} {VERSION} {} {}\n",
            self.len(),
            u8::from(has_labels)
        );
        let per_point = RECORD_BYTES + if has_labels { 2 } else { 0 };
        let mut out = Vec::with_capacity(header.len() + per_point * self.len());
        out.extend_from_slice(header.as_bytes());
        for i in 0..self.len() {
            for v in self.positions[i].iter().chain(self.colors[i].iter()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
            if let Some(labels) = &self.labels {
                out.extend_from_slice(&labels[i].to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::format(0, "missing header line"))?;
        let header = std::str::from_utf8(&bytes[..newline])
            .map_err(|_| Error::format(0, "header is not ASCII"))?;
        let fields: Vec<&str> = header.split_ascii_whitespace().collect();
        if fields.len() != 4 || fields[0] != MAGIC {
            return Err(Error::format(0, format!("malformed header {header:?}")));
        }
        if fields[1] != VERSION {
            return Err(Error::format(
                (MAGIC.len() + 1) as u64,
                format!("unsupported version {:?}", fields[1]),
            ));
        }
        let n: usize = fields[2]
            .parse()
            .map_err(|_| Error::format(0, format!("bad point count {:?}", fields[2])))?;
        let has_labels = match fields[3] {
            "0" => false,
            "1" => true,
            other => return Err(Error::format(0, format!("bad label flag {other:?}"))),
        };

        let per_point = RECORD_BYTES + if has_labels { 2 } else { 0 };
        let body = &bytes[newline + 1..];
        let base = (newline + 1) as u64;
        let expected = n
            .checked_mul(per_point)
            .ok_or_else(|| Error::format(0, "point count overflows"))?;
        if body.len() < expected {
            let full = body.len() / per_point;
            return Err(Error::format(
                base + (full * per_point) as u64,
                format!("truncated record {full} of {n}"),
            ));
        }
        if body.len() > expected {
            return Err(Error::format(
                base + expected as u64,
                format!("{} trailing bytes after {n} records", body.len() - expected),
            ));
        }

        let mut positions = Vec::with_capacity(n);
        let mut colors = Vec::with_capacity(n);
        let mut labels = has_labels.then(|| Vec::with_capacity(n));
        let read_f32 = |at: usize| f32::from_le_bytes(body[at..at + 4].try_into().unwrap());
        for i in 0..n {
            let at = i * per_point;
            let p = [read_f32(at), read_f32(at + 4), read_f32(at + 8)];
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::format(base + at as u64, "non-finite position"));
            }
            let mut c = [0.0f32; 3];
            for (k, slot) in c.iter_mut().enumerate() {
                let off = at + 12 + 4 * k;
                let v = read_f32(off);
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::format(
                        base + off as u64,
                        format!("color value {v} outside [0,1]"),
                    ));
                }
                *slot = v;
            }
            positions.push(p);
            colors.push(c);
            if let Some(labels) = labels.as_mut() {
                labels.push(u16::from_le_bytes([body[at + 24], body[at + 25]]));
            }
        }
        Ok(Self {
            positions,
            colors,
            labels,
        })
    }
}

pub fn load_point_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    PointCloud::from_bytes(&bytes)
}

pub fn save_point_cloud(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&cloud.to_bytes())
        .map_err(|e| Error::io(path, e))
}
