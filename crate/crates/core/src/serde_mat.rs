//! Serde adapter storing a `DMatrix<f64>` as `{ "rows", "cols", "data" }`
//! with `data` in row-major order.

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Serialize, Deserialize)]
struct MatrixRepr {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    MatrixRepr {
        rows: m.nrows(),
        cols: m.ncols(),
        data: m.transpose().as_slice().to_vec(),
    }
    .serialize(s)
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
    let r = MatrixRepr::deserialize(d)?;
    if r.data.len() != r.rows * r.cols {
        return Err(serde::de::Error::custom(format!(
            "matrix data has {} entries, expected {}x{}",
            r.data.len(),
            r.rows,
            r.cols
        )));
    }
    Ok(DMatrix::from_row_slice(r.rows, r.cols, &r.data))
}
