//! Isometry between the mean-one hyperplane of R^d and R^(d-1).

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Result};

/// Helmert-type orthonormal basis of the complement of the all-ones vector.
///
/// Row `k` (1-based) is `(1, ..., 1, -k, 0, ..., 0) / sqrt(k (k + 1))` with `k`
/// leading ones.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperplaneMap {
    basis: DMatrix<f64>,
}

impl HyperplaneMap {
    pub fn new(d: usize) -> Self {
        assert!(d >= 2, "hyperplane map needs d >= 2");
        let mut basis = DMatrix::zeros(d - 1, d);
        for k in 1..d {
            let scale = 1.0 / ((k * (k + 1)) as f64).sqrt();
            for j in 0..k {
                basis[(k - 1, j)] = scale;
            }
            basis[(k - 1, k)] = -(k as f64) * scale;
        }
        Self { basis }
    }

    /// Ambient dimension `d`.
    pub fn ambient_dim(&self) -> usize {
        self.basis.ncols()
    }

    /// Coordinate dimension `d - 1`.
    pub fn coord_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn forward(&self, values: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.ambient_dim(), values.len())?;
        let centered = DVector::from_iterator(values.len(), values.iter().map(|v| v - 1.0));
        Ok((&self.basis * centered).as_slice().to_vec())
    }

    pub fn backward(&self, coords: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.coord_dim(), coords.len())?;
        let z = DVector::from_column_slice(coords);
        let x = self.basis.tr_mul(&z);
        Ok(x.iter().map(|v| v + 1.0).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn basis_is_orthonormal_and_annihilates_ones() {
        for d in [2, 3, 7, 21] {
            let map = HyperplaneMap::new(d);
            let b = map.basis();
            let gram = b * b.transpose();
            assert!((gram - DMatrix::identity(d - 1, d - 1)).amax() < 1e-10);
            let ones = DVector::from_element(d, 1.0);
            assert!((b * ones).amax() < 1e-10);
        }
    }

    #[test]
    fn center_maps_to_origin() {
        let map = HyperplaneMap::new(5);
        assert!(map.forward(&[1.0; 5]).unwrap().iter().all(|v| v.abs() < 1e-15));
        assert_eq!(map.backward(&[0.0; 4]).unwrap(), vec![1.0; 5]);
        assert!(map.forward(&[1.0; 4]).is_err());
        assert!(map.backward(&[1.0; 5]).is_err());
    }

    #[test]
    fn deterministic_basis() {
        assert_eq!(HyperplaneMap::new(18), HyperplaneMap::new(18));
    }

    fn mean_one(raw: &[f64]) -> Vec<f64> {
        let m = raw.iter().sum::<f64>() / raw.len() as f64;
        raw.iter().map(|v| v - m + 1.0).collect()
    }

    proptest! {
        #[test]
        fn round_trip_and_isometry(
            u in prop::collection::vec(-3.0f64..3.0, 12),
            v in prop::collection::vec(-3.0f64..3.0, 12),
            z in prop::collection::vec(-3.0f64..3.0, 11),
        ) {
            let map = HyperplaneMap::new(12);
            let (u, v) = (mean_one(&u), mean_one(&v));
            let fu = map.forward(&u).unwrap();
            let fv = map.forward(&v).unwrap();
            let back = map.backward(&fu).unwrap();
            for (a, b) in back.iter().zip(&u) {
                prop_assert!((a - b).abs() < 1e-10);
            }
            let direct: f64 = u.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let mapped: f64 = fu.iter().zip(&fv).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            prop_assert!((direct - mapped).abs() < 1e-10);

            let x = map.backward(&z).unwrap();
            let mean = x.iter().sum::<f64>() / 12.0;
            prop_assert!((mean - 1.0).abs() < 1e-12);
        }
    }
}
