//! Per-point descriptors: handcrafted local geometry or ingested feature files.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::data::block::SampledBlock;
use crate::error::{Error, Result};

const MAGIC: &str = "gwfeat";
const VERSION: &str = "v1";

/// Width of one handcrafted geometry descriptor.
pub const GEOMETRY_DIM: usize = 8;
pub const DEFAULT_K_NEIGHBORS: usize = 16;
/// Largest eigenvalue at or below this is treated as a coincident neighborhood.
const DEGENERATE_EIGENVALUE: f64 = 1e-12;
/// Length scale of the density feature, meters.
const DENSITY_RADIUS: f64 = 0.1;

/// Row-major `rows x cols` matrix of finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    normalized: bool,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                what: "feature values",
                expected: rows * cols,
                actual: values.len(),
            });
        }
        if cols == 0 {
            return Err(Error::invalid("feature dimension must be >= 1"));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "features",
                row: bad / cols,
            });
        }
        Ok(Self {
            rows,
            cols,
            values,
            normalized: false,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch {
                what: "feature row",
                expected: cols,
                actual: rows[bad].len(),
            });
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.cols)
    }

    /// Scales every row to unit L2 norm; all-zero rows become the first basis vector.
    pub fn normalize(&mut self) {
        for row in self.values.chunks_exact_mut(self.cols) {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 {
                row.iter_mut().for_each(|v| *v /= n);
            } else {
                row.fill(0.0);
                row[0] = 1.0;
            }
        }
        self.normalized = true;
    }

    pub fn normalized(mut self) -> Self {
        self.normalize();
        self
    }

    /// Gathers rows by index, keeping the normalization flag.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            if i >= self.rows {
                return Err(Error::invalid(format!(
                    "row {i} out of range for {} rows",
                    self.rows
                )));
            }
            values.extend_from_slice(self.row(i));
        }
        Ok(Self {
            rows: indices.len(),
            cols: self.cols,
            values,
            normalized: self.normalized,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = format!("{MAGIC} {VERSION} {} {}\n", self.rows, self.cols);
        let mut out = Vec::with_capacity(header.len() + 4 * self.values.len());
        out.extend_from_slice(header.as_bytes());
        for v in &self.values {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::format(0, "missing feature header"))?;
        let header = std::str::from_utf8(&bytes[..newline])
            .map_err(|_| Error::format(0, "header is not ASCII"))?;
        let fields: Vec<&str> = header.split_ascii_whitespace().collect();
        if fields.len() != 4 || fields[0] != MAGIC || fields[1] != VERSION {
            return Err(Error::format(0, format!("malformed feature header {header:?}")));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::format(0, format!("bad dimension {s:?}")))
        };
        let (rows, cols) = (parse(fields[2])?, parse(fields[3])?);
        let body = &bytes[newline + 1..];
        let expected = rows * cols * 4;
        if body.len() != expected {
            return Err(Error::Truncated {
                expected,
                actual: body.len(),
            });
        }
        let values: Vec<f64> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Self::new(rows, cols, values)
    }
}

pub fn save_features(features: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, features.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Reads a feature file as stored, without normalizing.
pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureMatrix::from_bytes(&bytes)
}

/// Loads precomputed per-point features and L2-normalizes them.
pub fn ingest_features(path: impl AsRef<Path>, expected_points: usize) -> Result<FeatureMatrix> {
    let features = read_features(path)?;
    if features.rows() != expected_points {
        return Err(Error::DimensionMismatch {
            what: "feature rows",
            expected: expected_points,
            actual: features.rows(),
        });
    }
    Ok(features.normalized())
}

/// Covariance-based shape of one neighborhood, before normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalGeometry {
    pub linearity: f64,
    pub planarity: f64,
    pub sphericity: f64,
    pub anisotropy: f64,
    pub surface_variation: f64,
    /// `|n_z|` of the smallest-eigenvalue direction.
    pub verticality: f64,
    /// `tanh` of the height above the block floor.
    pub height: f64,
    /// `exp(-r_k / DENSITY_RADIUS)` with `r_k` the neighborhood radius.
    pub density: f64,
}

impl LocalGeometry {
    pub fn to_array(&self) -> [f64; GEOMETRY_DIM] {
        [
            self.linearity,
            self.planarity,
            self.sphericity,
            self.anisotropy,
            self.surface_variation,
            self.verticality,
            self.height,
            self.density,
        ]
    }

    /// Shape of `neighborhood` (which includes the query point itself).
    pub fn of(query: [f64; 3], neighborhood: &[[f64; 3]], floor_z: f64) -> Self {
        let k = neighborhood.len() as f64;
        let mut mean = Vector3::zeros();
        for p in neighborhood {
            mean += Vector3::from(*p);
        }
        mean /= k;
        let mut cov = Matrix3::zeros();
        let mut radius2: f64 = 0.0;
        for p in neighborhood {
            let d = Vector3::from(*p) - mean;
            cov += d * d.transpose();
            let q = Vector3::from(*p) - Vector3::from(query);
            radius2 = radius2.max(q.norm_squared());
        }
        cov /= k;

        let height = (query[2] - floor_z).max(0.0).tanh();
        let density = (-radius2.sqrt() / DENSITY_RADIUS).exp();

        let eig = cov.symmetric_eigen();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let l = order.map(|i| eig.eigenvalues[i].max(0.0));
        if l[0] <= DEGENERATE_EIGENVALUE {
            return Self {
                linearity: 0.0,
                planarity: 0.0,
                sphericity: 0.0,
                anisotropy: 0.0,
                surface_variation: 0.0,
                verticality: 1.0,
                height,
                density,
            };
        }
        let normal = eig.eigenvectors.column(order[2]);
        Self {
            linearity: (l[0] - l[1]) / l[0],
            planarity: (l[1] - l[2]) / l[0],
            sphericity: l[2] / l[0],
            anisotropy: (l[0] - l[2]) / l[0],
            surface_variation: l[2] / (l[0] + l[1] + l[2]),
            verticality: normal[2].abs().min(1.0),
            height,
            density,
        }
    }
}

/// Indices of the `k` nearest points to each point (self included), nearest first,
/// ties by index.
pub fn neighbor_lists(positions: &[[f64; 3]], k: usize) -> Vec<Vec<usize>> {
    let k = k.min(positions.len());
    positions
        .par_iter()
        .map(|q| {
            let mut d: Vec<(f64, usize)> = positions
                .iter()
                .enumerate()
                .map(|(j, p)| {
                    let dx = p[0] - q[0];
                    let dy = p[1] - q[1];
                    let dz = p[2] - q[2];
                    (dx * dx + dy * dy + dz * dz, j)
                })
                .collect();
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k < d.len() {
                d.select_nth_unstable_by(k - 1, cmp);
                d.truncate(k);
            }
            d.sort_by(cmp);
            d.into_iter().map(|(_, j)| j).collect()
        })
        .collect()
}

fn geometry_rows(
    positions: &[[f64; 3]],
    neighbors: &[Vec<usize>],
    k: usize,
    floor_z: f64,
) -> Vec<LocalGeometry> {
    neighbors
        .par_iter()
        .enumerate()
        .map(|(i, list)| {
            let hood: Vec<[f64; 3]> = list[..k.min(list.len())]
                .iter()
                .map(|&j| positions[j])
                .collect();
            LocalGeometry::of(positions[i], &hood, floor_z)
        })
        .collect()
}

fn check_k(k: usize, m: usize) -> Result<()> {
    if k < 3 || k > m {
        return Err(Error::invalid(format!(
            "neighbor count must be in [3, {m}], got {k}"
        )));
    }
    Ok(())
}

fn floor_of(positions: &[[f64; 3]]) -> f64 {
    positions
        .iter()
        .map(|p| p[2])
        .fold(f64::INFINITY, f64::min)
}

/// Raw (unnormalized) local geometry of every row of a block.
pub fn local_geometry(block: &SampledBlock, k_neighbors: usize) -> Result<Vec<LocalGeometry>> {
    check_k(k_neighbors, block.len())?;
    let positions = block.positions();
    let neighbors = neighbor_lists(&positions, k_neighbors);
    Ok(geometry_rows(&positions, &neighbors, k_neighbors, floor_of(&positions)))
}

/// The low-level descriptor: one 8-wide geometry row per point, L2-normalized.
pub fn compute_local_descriptors(block: &SampledBlock, k_neighbors: usize) -> Result<FeatureMatrix> {
    let rows = local_geometry(block, k_neighbors)?;
    let values = rows.iter().flat_map(|g| g.to_array()).collect();
    Ok(FeatureMatrix::new(rows.len(), GEOMETRY_DIM, values)?.normalized())
}

/// Configuration of the richer per-point semantic descriptor.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SemanticDescriptorConfig {
    /// Neighborhood sizes; one geometry block is emitted per scale.
    pub scales: Vec<usize>,
    /// Append the point's RGB.
    pub color: bool,
}

impl Default for SemanticDescriptorConfig {
    fn default() -> Self {
        Self {
            scales: vec![8, 32],
            color: true,
        }
    }
}

impl SemanticDescriptorConfig {
    pub fn dim(&self) -> usize {
        self.scales.len() * GEOMETRY_DIM + if self.color { 3 } else { 0 }
    }
}

/// Multi-scale geometry plus color, L2-normalized.
pub fn compute_semantic_descriptors(
    block: &SampledBlock,
    config: &SemanticDescriptorConfig,
) -> Result<FeatureMatrix> {
    if config.dim() == 0 {
        return Err(Error::invalid("semantic descriptor has no components"));
    }
    let positions = block.positions();
    let k_max = config.scales.iter().copied().max().unwrap_or(3);
    for &k in &config.scales {
        check_k(k, block.len())?;
    }
    let neighbors = neighbor_lists(&positions, k_max);
    let floor = floor_of(&positions);
    let per_scale: Vec<Vec<LocalGeometry>> = config
        .scales
        .iter()
        .map(|&k| geometry_rows(&positions, &neighbors, k, floor))
        .collect();
    let dim = config.dim();
    let mut values = Vec::with_capacity(block.len() * dim);
    for i in 0..block.len() {
        for scale in &per_scale {
            values.extend_from_slice(&scale[i].to_array());
        }
        if config.color {
            values.extend_from_slice(&block.input_features[i][3..6]);
        }
    }
    Ok(FeatureMatrix::new(block.len(), dim, values)?.normalized())
}
