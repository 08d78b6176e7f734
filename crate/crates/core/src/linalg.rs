//! Small dense helpers.

/// Determinant of a row-major `n × n` matrix by LU decomposition with partial
/// pivoting.
pub fn determinant(a: &[f64], n: usize) -> f64 {
    assert_eq!(a.len(), n * n, "determinant: matrix is not {n}x{n}");
    let mut m = a.to_vec();
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i * n + col].abs().total_cmp(&m[j * n + col].abs()))
            .unwrap();
        if m[pivot * n + col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            for k in 0..n {
                m.swap(col * n + k, pivot * n + k);
            }
            det = -det;
        }
        let d = m[col * n + col];
        det *= d;
        for row in col + 1..n {
            let f = m[row * n + col] / d;
            if f != 0.0 {
                for k in col..n {
                    m[row * n + k] -= f * m[col * n + k];
                }
            }
        }
    }
    det
}

/// Dense Jacobian of `f: R^n -> R^m` by central differences, row-major `m × n`.
pub fn jacobian_central<F, E>(f: F, x: &[f64], step: f64) -> Result<(Vec<f64>, usize), E>
where
    F: Fn(&[f64]) -> Result<Vec<f64>, E>,
{
    let n = x.len();
    let mut columns = Vec::with_capacity(n);
    let mut m = 0;
    for j in 0..n {
        let mut plus = x.to_vec();
        let mut minus = x.to_vec();
        plus[j] += step;
        minus[j] -= step;
        let fp = f(&plus)?;
        let fm = f(&minus)?;
        m = fp.len();
        columns.push(
            fp.iter()
                .zip(&fm)
                .map(|(a, b)| (a - b) / (2.0 * step))
                .collect::<Vec<_>>(),
        );
    }
    let mut jac = vec![0.0; m * n];
    for (j, col) in columns.iter().enumerate() {
        for i in 0..m {
            jac[i * n + j] = col[i];
        }
    }
    Ok((jac, m))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn determinant_small_cases() {
        assert_eq!(determinant(&[3.0], 1), 3.0);
        assert!((determinant(&[1.0, 2.0, 3.0, 4.0], 2) + 2.0).abs() < 1e-12);
        // needs a row swap
        assert!((determinant(&[0.0, 1.0, 1.0, 0.0], 2) + 1.0).abs() < 1e-12);
        let a = [2.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 2.0];
        assert!((determinant(&a, 3) - 4.0).abs() < 1e-12);
        assert_eq!(determinant(&[1.0, 2.0, 2.0, 4.0], 2), 0.0);
    }

    #[test]
    fn jacobian_of_linear_map() {
        let f = |x: &[f64]| -> Result<Vec<f64>, ()> { Ok(vec![2.0 * x[0] + x[1], -x[1]]) };
        let (j, m) = jacobian_central(f, &[0.3, 0.7], 1e-6).unwrap();
        assert_eq!(m, 2);
        for (a, b) in j.iter().zip([2.0, 1.0, 0.0, -1.0]) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
