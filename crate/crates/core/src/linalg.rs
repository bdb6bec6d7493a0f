//! Small dense helpers shared across modules.

use nalgebra::{DMatrix, DVector};

/// `(M + Mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return f64::NEG_INFINITY;
    }
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return f64::INFINITY;
    }
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Converts nested rows into a matrix; an empty row list gives a `0 × cols`
/// matrix.
pub fn matrix_from_rows(rows: &[Vec<f64>], cols: usize) -> Option<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != cols) {
        return None;
    }
    Some(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

pub fn vector_to_vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

/// Block-embeds `block` into an `n × n` zero matrix at `(r, c)`.
pub fn embed(n: usize, r: usize, c: usize, block: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(n, n);
    out.view_mut((r, c), block.shape()).copy_from(block);
    out
}

/// Symmetric matrix with `block` at `(r, c)` and its transpose at `(c, r)`.
pub fn embed_sym(n: usize, r: usize, c: usize, block: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = embed(n, r, c, block);
    if r != c {
        let t = block.transpose();
        out.view_mut((c, r), t.shape()).copy_from(&t);
    } else {
        out = symmetrize(&out);
    }
    out
}

/// Serde adapters: vectors as JSON arrays, matrices as lists of rows.
pub(crate) mod serde_dvec {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

pub(crate) mod serde_dvec_list {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[DVector<f64>], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(super::vector_to_vec))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DVector<f64>>, D::Error> {
        Ok(Vec::<Vec<f64>>::deserialize(d)?
            .into_iter()
            .map(DVector::from_vec)
            .collect())
    }
}

pub(crate) mod serde_opt_dvec {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<DVector<f64>>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(v) => s.serialize_some(&super::vector_to_vec(v)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DVector<f64>>, D::Error> {
        Ok(Option::<Vec<f64>>::deserialize(d)?.map(DVector::from_vec))
    }
}

pub(crate) mod serde_dmat {
    use nalgebra::DMatrix;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(super::matrix_to_rows(m))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let cols = rows.first().map_or(0, Vec::len);
        super::matrix_from_rows(&rows, cols).ok_or_else(|| D::Error::custom("ragged matrix rows"))
    }
}
