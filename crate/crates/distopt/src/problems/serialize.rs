//! JSON round-tripping for problem instances, so runs are replayable from
//! the stored data without re-deriving anything from the seed. Matrices
//! serialize as row-major nested arrays.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub mod dmatrix {
    use super::*;

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = (0..m.nrows())
            .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
            .collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(serde::de::Error::custom("ragged matrix rows"));
        }
        Ok(DMatrix::from_fn(nrows, ncols, |r, c| rows[r][c]))
    }
}

pub mod dvector {
    use super::*;

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        let data: Vec<f64> = Vec::deserialize(d)?;
        Ok(DVector::from_vec(data))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize, Deserialize)]
    struct Wrap {
        #[serde(with = "dmatrix")]
        m: DMatrix<f64>,
        #[serde(with = "dvector")]
        v: DVector<f64>,
    }

    #[test]
    fn round_trip() {
        let w = Wrap {
            m: DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
            v: DVector::from_vec(vec![7.0, 8.0]),
        };
        let json = serde_json::to_string(&w).unwrap();
        assert!(json.contains("[[1.0,2.0,3.0],[4.0,5.0,6.0]]"));
        let back: Wrap = serde_json::from_str(&json).unwrap();
        assert_eq!(back.m, w.m);
        assert_eq!(back.v, w.v);
    }
}
