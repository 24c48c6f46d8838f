use std::path::Path;

use super::eigen::symmetric_eigen;
use crate::binio::{ByteReader, ByteWriter};
use crate::error::{check_dim, invalid, Error, Result};
use crate::vectorstore::{dot, dot_rows, Datastore};

const PCA_MAGIC: &[u8; 6] = b"KNNPC1";
const EIGEN_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 1000;

/// Mean vector plus an orthonormal projection onto the top principal
/// components.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    input_dim: usize,
    output_dim: usize,
    mean: Vec<f32>,
    /// `input_dim × output_dim`, row-major.
    projection: Vec<f32>,
    /// Transposed copy, `output_dim × input_dim`, for contiguous dot products.
    components: Vec<f32>,
    /// Each component dotted with the mean.
    offsets: Vec<f32>,
    explained_variance: Vec<f32>,
}

/// Fit on the datastore keys. Components are sorted by decreasing variance
/// and sign-normalized so each column's largest-magnitude entry is positive.
pub fn fit_pca(ds: &Datastore, d: usize) -> Result<PcaModel> {
    let dim = ds.dim();
    if d == 0 || d > dim {
        return Err(invalid(format!("output dimension {d} must be in 1..={dim}")));
    }
    let n = ds.len();
    if n < 2 {
        return Err(invalid(format!("PCA needs at least 2 entries, got {n}")));
    }
    let mut mean = vec![0f64; dim];
    for key in ds.keys().chunks_exact(dim) {
        for (m, &x) in mean.iter_mut().zip(key) {
            *m += x as f64;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = vec![0f64; dim * dim];
    let mut centered = vec![0f64; dim];
    for key in ds.keys().chunks_exact(dim) {
        for ((c, &x), m) in centered.iter_mut().zip(key).zip(&mean) {
            *c = x as f64 - m;
        }
        for i in 0..dim {
            let ci = centered[i];
            let row = &mut cov[i * dim..(i + 1) * dim];
            for (r, &cj) in row[i..].iter_mut().zip(&centered[i..]) {
                *r += ci * cj;
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..dim {
        for j in i..dim {
            let v = cov[i * dim + j] / denom;
            cov[i * dim + j] = v;
            cov[j * dim + i] = v;
        }
    }
    let (values, vectors) = symmetric_eigen(&cov, dim, EIGEN_TOL, MAX_SWEEPS);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));

    let mut components = Vec::with_capacity(d * dim);
    let mut explained_variance = Vec::with_capacity(d);
    for &j in &order[..d] {
        let mut col: Vec<f64> = (0..dim).map(|i| vectors[i * dim + j]).collect();
        let pivot = col
            .iter()
            .copied()
            .reduce(|best, x| if x.abs() > best.abs() { x } else { best })
            .unwrap_or(0.0);
        if pivot < 0.0 {
            col.iter_mut().for_each(|x| *x = -*x);
        }
        components.extend(col.iter().map(|&x| x as f32));
        explained_variance.push(values[j].max(0.0) as f32);
    }
    Ok(PcaModel::from_parts(
        dim,
        d,
        mean.iter().map(|&m| m as f32).collect(),
        transpose(&components, d, dim),
        explained_variance,
    ))
}

fn transpose(m: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut t = vec![0f32; m.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = m[r * cols + c];
        }
    }
    t
}

impl PcaModel {
    fn from_parts(
        input_dim: usize,
        output_dim: usize,
        mean: Vec<f32>,
        projection: Vec<f32>,
        explained_variance: Vec<f32>,
    ) -> Self {
        let components = transpose(&projection, input_dim, output_dim);
        let offsets = components
            .chunks_exact(input_dim)
            .map(|c| dot(c, &mean))
            .collect();
        Self {
            input_dim,
            output_dim,
            mean,
            projection,
            components,
            offsets,
            explained_variance,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn mean(&self) -> &[f32] {
        &self.mean
    }

    /// Row-major `input_dim × output_dim`.
    pub fn projection(&self) -> &[f32] {
        &self.projection
    }

    pub fn explained_variance(&self) -> &[f32] {
        &self.explained_variance
    }

    /// `projectionᵀ · (v − mean)`.
    pub fn apply(&self, v: &[f32]) -> Result<Vec<f32>> {
        let mut out = vec![0f32; self.output_dim];
        self.apply_into(v, &mut out)?;
        Ok(out)
    }

    pub fn apply_into(&self, v: &[f32], out: &mut [f32]) -> Result<()> {
        check_dim(self.input_dim, v.len())?;
        check_dim(self.output_dim, out.len())?;
        dot_rows(v, &self.components, out);
        for (o, off) in out.iter_mut().zip(&self.offsets) {
            *o -= off;
        }
        Ok(())
    }

    /// Reduces every key; values are unchanged.
    pub fn apply_datastore(&self, ds: &Datastore) -> Result<Datastore> {
        check_dim(self.input_dim, ds.dim())?;
        let mut keys = vec![0f32; ds.len() * self.output_dim];
        for (key, out) in ds
            .keys()
            .chunks_exact(self.input_dim)
            .zip(keys.chunks_exact_mut(self.output_dim))
        {
            self.apply_into(key, out)?;
        }
        Datastore::new(self.output_dim, keys, ds.values().to_vec())
    }

    /// Maps a reduced vector back to the input space.
    pub fn reconstruct(&self, z: &[f32]) -> Result<Vec<f32>> {
        check_dim(self.output_dim, z.len())?;
        Ok(self
            .projection
            .chunks_exact(self.output_dim)
            .zip(&self.mean)
            .map(|(row, m)| m + dot(row, z))
            .collect())
    }

    /// `KNNPC1`, u32 input_dim, u32 output_dim, mean, projection (row-major),
    /// explained variance; all float32 little-endian.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = ByteWriter::create(path.as_ref(), PCA_MAGIC)?;
        w.u32(self.input_dim as u32)?;
        w.u32(self.output_dim as u32)?;
        w.f32s(&self.mean)?;
        w.f32s(&self.projection)?;
        w.f32s(&self.explained_variance)?;
        w.finish()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = ByteReader::open(path.as_ref(), PCA_MAGIC)?;
        let input_dim = r.u32()? as usize;
        let output_dim = r.u32()? as usize;
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::ZeroDimension);
        }
        if output_dim > input_dim {
            return Err(Error::Corrupt(format!(
                "output dimension {output_dim} exceeds input dimension {input_dim}"
            )));
        }
        r.require(4 * (input_dim + input_dim * output_dim + output_dim) as u64)?;
        let mean = r.f32s(input_dim)?;
        let projection = r.f32s(input_dim * output_dim)?;
        let explained_variance = r.f32s(output_dim)?;
        r.expect_end()?;
        Ok(Self::from_parts(input_dim, output_dim, mean, projection, explained_variance))
    }
}
