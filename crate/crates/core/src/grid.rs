//! Uniform periodic grids and nodal fields, with the "PHF1" binary format.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_NODES: usize = 8;
const MAGIC: &[u8; 4] = b"PHF1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorusGrid {
    pub dim: usize,
    pub n: Vec<usize>,
    pub period: Vec<f64>,
    /// Coordinates of node 0.
    pub origin: Vec<f64>,
}

impl TorusGrid {
    pub fn new(dim: usize, n: usize, period: f64) -> Result<Self> {
        Self::with_axes(vec![n; dim], vec![period; dim], vec![0.0; dim])
    }

    /// Grid on [−period/2, period/2)^d.
    pub fn centered(dim: usize, n: usize, period: f64) -> Result<Self> {
        Self::with_axes(vec![n; dim], vec![period; dim], vec![-0.5 * period; dim])
    }

    pub fn with_axes(n: Vec<usize>, period: Vec<f64>, origin: Vec<f64>) -> Result<Self> {
        let dim = n.len();
        if !(dim == 1 || dim == 2) || period.len() != dim || origin.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "axis data lengths {}, {}, {} must agree and be 1 or 2",
                dim,
                period.len(),
                origin.len()
            )));
        }
        if let Some(&k) = n.iter().find(|&&k| k < MIN_NODES) {
            return Err(Error::InvalidGrid(format!(
                "{k} nodes per axis, need >= {MIN_NODES}"
            )));
        }
        if period.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(Error::InvalidGrid(format!(
                "periods {period:?} must be positive"
            )));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidGrid("non-finite origin".into()));
        }
        Ok(TorusGrid {
            dim,
            n,
            period,
            origin,
        })
    }

    pub fn len(&self) -> usize {
        self.n.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.period[axis] / self.n[axis] as f64
    }

    /// Multi-index of a flat (row-major, axis 0 slowest) index.
    pub fn multi_index(&self, idx: usize) -> [usize; 2] {
        if self.dim == 1 {
            [idx, 0]
        } else {
            [idx / self.n[1], idx % self.n[1]]
        }
    }

    pub fn flat_index(&self, m: [usize; 2]) -> usize {
        if self.dim == 1 {
            m[0]
        } else {
            m[0] * self.n[1] + m[1]
        }
    }

    /// Flat index of the node shifted by `steps` along each axis (periodic).
    pub fn offset(&self, idx: usize, steps: [i64; 2]) -> usize {
        let m = self.multi_index(idx);
        let mut out = [0usize; 2];
        for a in 0..self.dim {
            let n = self.n[a] as i64;
            out[a] = (m[a] as i64 + steps[a]).rem_euclid(n) as usize;
        }
        self.flat_index(out)
    }

    pub fn coords(&self, idx: usize) -> [f64; 2] {
        let m = self.multi_index(idx);
        let mut x = [0.0; 2];
        for a in 0..self.dim {
            x[a] = self.origin[a] + m[a] as f64 * self.spacing(a);
        }
        x
    }

    /// Node nearest to the point `x` (periodic).
    pub fn nearest_node(&self, x: &[f64]) -> usize {
        let mut m = [0usize; 2];
        for a in 0..self.dim {
            let k = ((x[a] - self.origin[a]) / self.spacing(a)).round() as i64;
            m[a] = k.rem_euclid(self.n[a] as i64) as usize;
        }
        self.flat_index(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    pub grid: TorusGrid,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn new(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        Ok(GridField { grid, values })
    }

    pub fn zeros(grid: TorusGrid) -> Self {
        let n = grid.len();
        GridField {
            grid,
            values: vec![0.0; n],
        }
    }

    pub fn oscillation(&self) -> f64 {
        let (lo, hi) = self
            .values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
                (l.min(v), h.max(v))
            });
        hi - lo
    }

    /// Writes "PHF1", d, N per axis (u64), period per axis (f64), then the
    /// values, all little-endian. The origin is not stored.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.grid.dim as u64).to_le_bytes())?;
        for &n in &self.grid.n {
            w.write_all(&(n as u64).to_le_bytes())?;
        }
        for &p in &self.grid.period {
            w.write_all(&p.to_le_bytes())?;
        }
        for &v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}")));
        }
        let mut b = [0u8; 8];
        let mut next_u64 = |r: &mut dyn Read| -> Result<u64> {
            r.read_exact(&mut b)?;
            Ok(u64::from_le_bytes(b))
        };
        let dim = next_u64(&mut r)? as usize;
        if !(dim == 1 || dim == 2) {
            return Err(Error::Format(format!("dimension {dim}")));
        }
        let mut n = Vec::with_capacity(dim);
        for _ in 0..dim {
            n.push(next_u64(&mut r)? as usize);
        }
        let mut period = Vec::with_capacity(dim);
        for _ in 0..dim {
            period.push(f64::from_bits(next_u64(&mut r)?));
        }
        let grid = TorusGrid::with_axes(n, period, vec![0.0; dim])
            .map_err(|e| Error::Format(e.to_string()))?;
        let mut values = Vec::with_capacity(grid.len());
        for _ in 0..grid.len() {
            values.push(f64::from_bits(next_u64(&mut r)?));
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes", rest.len())));
        }
        Ok(GridField { grid, values })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}
