use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::{ColumnStats, DataError};

const M3_PER_FT3: f64 = 0.0283168;
const SECONDS_PER_DAY: f64 = 86_400.0;

/// Converts discharge in ft³/s to depth in mm/day over a catchment of
/// `area_km2`. Missing values pass through.
pub fn convert_flow_units(q_cfs: &[f64], area_km2: f64) -> Result<Vec<f64>, DataError> {
    if !(area_km2 > 0.0) {
        return Err(DataError::NonPositiveArea(area_km2));
    }
    // m³/day over m², then m → mm
    let factor = M3_PER_FT3 * SECONDS_PER_DAY / (area_km2 * 1e6) * 1e3;
    Ok(q_cfs.iter().map(|&q| if q.is_nan() { q } else { q * factor }).collect())
}

/// z-scores every column. Without `stats`, the population mean and standard
/// deviation are fit from `matrix` itself; with `stats`, they are applied as
/// given. Zero-variance columns map to zero.
pub fn standardize_columns(
    matrix: ArrayView2<'_, f64>,
    stats: Option<&ColumnStats>,
) -> Result<(Array2<f64>, ColumnStats), DataError> {
    let (n, d) = matrix.dim();
    if n == 0 {
        return Err(DataError::Empty("standardize_columns needs at least one row"));
    }
    let stats = match stats {
        Some(s) if s.width() != d => {
            return Err(DataError::DimensionMismatch {
                expected: s.width(),
                found: d,
            })
        }
        Some(s) => s.clone(),
        None => {
            let mean = matrix.mean_axis(Axis(0)).expect("n >= 1");
            let std = matrix.std_axis(Axis(0), 0.0);
            ColumnStats {
                mean: mean.to_vec(),
                std: std.to_vec(),
            }
        }
    };
    let mut out = matrix.to_owned();
    for (j, mut col) in out.columns_mut().into_iter().enumerate() {
        col.mapv_inplace(|x| stats.apply(j, x));
    }
    Ok((out, stats))
}

/// Averages pixel-level embedding rows (all years and pixels) into one
/// basin-level vector.
pub fn aggregate_pixel_embeddings(rows: &[Vec<f64>]) -> Result<Array1<f64>, DataError> {
    let first = rows.first().ok_or(DataError::Empty("no pixel rows"))?;
    let width = first.len();
    let mut sum = Array1::<f64>::zeros(width);
    for (i, r) in rows.iter().enumerate() {
        if r.len() != width {
            return Err(DataError::Ragged {
                row: i,
                expected: width,
                found: r.len(),
            });
        }
        sum.iter_mut().zip(r).for_each(|(s, &x)| *s += x);
    }
    Ok(sum / rows.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn one_cfs_over_one_km2() {
        // 0.0283168 * 86400 / 1e6 * 1e3, evaluated by hand
        let q = convert_flow_units(&[1.0, 0.0], 1.0).unwrap();
        assert_abs_diff_eq!(q[0], 2.446_571_52, epsilon = 1e-5);
        assert_eq!(q[1], 0.0);
        let q = convert_flow_units(&[1.0], 2.446571).unwrap();
        assert_abs_diff_eq!(q[0], 1.0, epsilon = 1e-5);
    }

    #[test]
    fn conversion_keeps_missing_and_rejects_bad_area() {
        let q = convert_flow_units(&[f64::NAN], 3.0).unwrap();
        assert!(q[0].is_nan());
        assert!(convert_flow_units(&[1.0], 0.0).is_err());
        assert!(convert_flow_units(&[1.0], -2.0).is_err());
    }

    #[test]
    fn standardize_hand_case() {
        let m = array![[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]];
        let (z, stats) = standardize_columns(m.view(), None).unwrap();
        assert_abs_diff_eq!(stats.std[0], 0.8165, epsilon = 1e-4);
        assert_abs_diff_eq!(z[[0, 0]], -1.2247, epsilon = 1e-4);
        assert_abs_diff_eq!(z[[1, 0]], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(z[[2, 0]], 1.2247, epsilon = 1e-4);
        assert_eq!(z.column(1).to_vec(), vec![0.0, 0.0, 0.0]);
        let (again, _) = standardize_columns(m.view(), Some(&stats)).unwrap();
        assert_eq!(again, z);
    }

    #[test]
    fn standardize_rejects_mismatched_stats() {
        let m = array![[1.0, 2.0]];
        let stats = ColumnStats {
            mean: vec![0.0],
            std: vec![1.0],
        };
        assert!(matches!(
            standardize_columns(m.view(), Some(&stats)),
            Err(DataError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn pixel_aggregation_cases() {
        let v: Vec<f64> = (0..64).map(|i| i as f64 * 0.1).collect();
        assert_eq!(aggregate_pixel_embeddings(std::slice::from_ref(&v)).unwrap().to_vec(), v);
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        assert!(aggregate_pixel_embeddings(&[v.clone(), neg]).unwrap().iter().all(|&x| x == 0.0));
        let mut a = vec![0.0; 64];
        let mut b = vec![0.0; 64];
        a[0] = 1.0;
        b[0] = 3.0;
        assert_eq!(aggregate_pixel_embeddings(&[a, b]).unwrap()[0], 2.0);
        assert!(aggregate_pixel_embeddings(&[]).is_err());
        assert!(aggregate_pixel_embeddings(&[vec![1.0; 64], vec![1.0; 63]]).is_err());
    }

    proptest! {
        #[test]
        fn conversion_is_linear(q in 0.0f64..1e4, a in 0.01f64..100.0, area in 0.1f64..1e4) {
            let lhs = convert_flow_units(&[a * q], area).unwrap()[0];
            let rhs = a * convert_flow_units(&[q], area).unwrap()[0];
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1e-300));
        }

        #[test]
        fn standardized_columns_have_zero_mean_unit_sd(
            data in proptest::collection::vec(-1e3f64..1e3, 12..60)
        ) {
            let n = data.len() / 3;
            let m = Array2::from_shape_vec((n, 3), data[..n * 3].to_vec()).unwrap();
            let (z, stats) = standardize_columns(m.view(), None).unwrap();
            for j in 0..3 {
                if stats.std[j] > 1e-6 {
                    let col = z.column(j);
                    let mean = col.mean().unwrap();
                    let sd = col.std(0.0);
                    prop_assert!(mean.abs() < 1e-10);
                    prop_assert!((sd - 1.0).abs() < 1e-10);
                }
            }
        }

        #[test]
        fn aggregation_is_permutation_invariant(
            rows in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 4), 1..8),
            rot in 0usize..8
        ) {
            let mut permuted = rows.clone();
            let k = rot % permuted.len();
            permuted.rotate_left(k);
            permuted.reverse();
            let a = aggregate_pixel_embeddings(&rows).unwrap();
            let b = aggregate_pixel_embeddings(&permuted).unwrap();
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
