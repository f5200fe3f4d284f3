//! Monomial to control-point conversions on the unit parameter interval.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisKind {
    Bernstein,
    Minvo,
}

impl std::fmt::Display for BasisKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BasisKind::Bernstein => f.write_str("bernstein"),
            BasisKind::Minvo => f.write_str("minvo"),
        }
    }
}

/// Maps the monomial coefficients `a` of a degree-`q` polynomial on
/// `s ∈ [0, 1]` to control points `P = M a` whose convex hull contains the
/// curve.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPointBasis {
    kind: BasisKind,
    tables: BTreeMap<usize, DMatrix<f64>>,
}

/// On-disk layout of a conversion table file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasisTableFile {
    pub tables: Vec<BasisTableEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasisTableEntry {
    pub degree: usize,
    /// `(degree + 1)²` entries, row-major.
    pub entries: Vec<f64>,
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

/// `[M]_{lj} = C(l, j) / C(q, j)` for `j <= l`.
pub fn bernstein_conversion(q: usize) -> DMatrix<f64> {
    DMatrix::from_fn(
        q + 1,
        q + 1,
        |l, j| {
            if j <= l {
                binomial(l, j) / binomial(q, j)
            } else {
                0.0
            }
        },
    )
}

impl Default for ControlPointBasis {
    fn default() -> Self {
        Self::bernstein()
    }
}

impl ControlPointBasis {
    pub fn bernstein() -> Self {
        Self {
            kind: BasisKind::Bernstein,
            tables: BTreeMap::new(),
        }
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    /// Builds a table-backed basis, certifying every table.
    pub fn from_tables(kind: BasisKind, tables: BTreeMap<usize, DMatrix<f64>>) -> Result<Self> {
        for (&q, m) in &tables {
            certify(q, m)?;
        }
        Ok(Self { kind, tables })
    }

    pub fn from_table_file(kind: BasisKind, file: &BasisTableFile) -> Result<Self> {
        let mut tables = BTreeMap::new();
        for entry in &file.tables {
            let size = entry.degree + 1;
            if entry.entries.len() != size * size {
                return Err(Error::Basis(format!(
                    "degree {} table needs {} entries, found {}",
                    entry.degree,
                    size * size,
                    entry.entries.len()
                )));
            }
            if tables
                .insert(entry.degree, DMatrix::from_row_slice(size, size, &entry.entries))
                .is_some()
            {
                return Err(Error::Basis(format!("duplicate table for degree {}", entry.degree)));
            }
        }
        Self::from_tables(kind, tables)
    }

    /// Loads a MINVO table file.
    pub fn load_minvo(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Basis(format!("cannot read {}: {e}", path.display())))?;
        let file: BasisTableFile =
            serde_json::from_str(&text).map_err(|e| Error::Basis(format!("{}: {e}", path.display())))?;
        Self::from_table_file(BasisKind::Minvo, &file)
    }

    /// Conversion matrix for degree `q`.
    pub fn conversion(&self, q: usize) -> Result<DMatrix<f64>> {
        match self.kind {
            BasisKind::Bernstein if self.tables.is_empty() => Ok(bernstein_conversion(q)),
            _ => self
                .tables
                .get(&q)
                .cloned()
                .ok_or_else(|| Error::Basis(format!("no {} table for degree {q}", self.kind))),
        }
    }
}

/// Checks invertibility and that the induced basis functions
/// `φ(s) = M^-T b(s)` are a nonnegative partition of unity on `[0, 1]`.
pub fn certify(q: usize, m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != q + 1 || m.ncols() != q + 1 {
        return Err(Error::Basis(format!("degree {q} table must be {0}x{0}", q + 1)));
    }
    let inv_t = m
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Basis(format!("degree {q} table is singular")))?
        .transpose();
    const SAMPLES: usize = 1001;
    for step in 0..SAMPLES {
        let s = step as f64 / (SAMPLES - 1) as f64;
        let b = DVector::from_fn(q + 1, |r, _| s.powi(r as i32));
        let phi = &inv_t * b;
        let min = phi.min();
        let sum = phi.sum();
        if min < -1e-9 || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Basis(format!(
                "degree {q} table fails the convex-hull certificate at s = {s} (min {min:e}, sum {sum})"
            )));
        }
    }
    Ok(())
}
