use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A sparse matrix of raw fixed-point mantissas. Entries are kept sorted by
/// `(row, col)` with zeros omitted, so equal matrices serialize identically.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    entries: Vec<(u32, u32, i64)>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            entries: Vec::new(),
        }
    }

    pub fn from_dense(rows: &[Vec<i64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut m = Self::zeros(rows.len(), cols);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::Spec(format!(
                    "ragged matrix: row {r} has {} entries, expected {cols}",
                    row.len()
                )));
            }
            for (c, &v) in row.iter().enumerate() {
                m.set(r, c, v);
            }
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> i64 {
        match self.entries.binary_search_by_key(&(r as u32, c as u32), |&(a, b, _)| (a, b)) {
            Ok(k) => self.entries[k].2,
            Err(_) => 0,
        }
    }

    /// Sets one entry. Panics if out of shape.
    pub fn set(&mut self, r: usize, c: usize, v: i64) {
        assert!(r < self.rows && c < self.cols, "({r}, {c}) outside {:?}", self.shape());
        let key = (r as u32, c as u32);
        match self.entries.binary_search_by_key(&key, |&(a, b, _)| (a, b)) {
            Ok(k) if v == 0 => {
                self.entries.remove(k);
            }
            Ok(k) => self.entries[k].2 = v,
            Err(_) if v == 0 => {}
            Err(k) => self.entries.insert(k, (key.0, key.1, v)),
        }
    }

    pub fn nonzeros(&self) -> impl Iterator<Item = (usize, usize, i64)> + '_ {
        self.entries.iter().map(|&(r, c, v)| (r as usize, c as usize, v))
    }

    pub fn to_dense(&self) -> Vec<Vec<i64>> {
        let mut out = vec![vec![0; self.cols]; self.rows];
        for (r, c, v) in self.nonzeros() {
            out[r][c] = v;
        }
        out
    }

    /// Exact product with a raw vector; the result carries the sum of both
    /// operands' scales.
    pub fn mul_vec(&self, x: &[i64]) -> Result<Vec<i128>> {
        if x.len() != self.cols {
            return Err(Error::Spec(format!(
                "vector of length {} applied to a {}x{} matrix",
                x.len(),
                self.rows,
                self.cols
            )));
        }
        let mut out = vec![0i128; self.rows];
        for &(r, c, v) in &self.entries {
            let xv = x[c as usize];
            if xv != 0 {
                let prod = (v as i128)
                    .checked_mul(xv as i128)
                    .ok_or(Error::Overflow("matrix-vector product"))?;
                out[r as usize] = out[r as usize]
                    .checked_add(prod)
                    .ok_or(Error::Overflow("matrix-vector product"))?;
            }
        }
        Ok(out)
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixRepr {
    rows: usize,
    cols: usize,
    entries: Vec<(u32, u32, i64)>,
}

impl Serialize for Matrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MatrixRepr {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Matrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = MatrixRepr::deserialize(d)?;
        let mut m = Matrix::zeros(repr.rows, repr.cols);
        for (r, c, v) in repr.entries {
            if r as usize >= repr.rows || c as usize >= repr.cols {
                return Err(serde::de::Error::custom(format!(
                    "entry ({r}, {c}) outside {}x{}",
                    repr.rows, repr.cols
                )));
            }
            m.set(r as usize, c as usize, v);
        }
        Ok(m)
    }
}
