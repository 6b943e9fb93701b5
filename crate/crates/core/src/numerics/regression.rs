use crate::error::{Error, Result};

/// Least-squares affine fit `y ≈ intercept + slope·x`.
pub fn ols_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() {
        return Err(Error::invalid(format!(
            "ols_fit: {} x values but {} y values",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::invalid("ols_fit needs at least two points"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let dx = x - mx;
        sxx += dx * dx;
        sxy += dx * (y - my);
    }
    let scale = xs.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
    if sxx <= (n * f64::EPSILON * scale).powi(2) {
        return Err(Error::invalid("ols_fit: degenerate design (all x equal)"));
    }
    let slope = sxy / sxx;
    Ok((my - slope * mx, slope))
}

/// Solves the symmetric positive semi-definite system `a·x = b` in place by
/// Gaussian elimination with partial pivoting. Returns `None` when a pivot
/// falls below `rel_tol` times the largest diagonal entry.
pub(crate) fn solve_small(a: &mut [f64], b: &mut [f64], n: usize, rel_tol: f64) -> Option<()> {
    let diag_max = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max);
    if diag_max == 0.0 {
        return None;
    }
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap();
        if a[piv * n + col].abs() <= rel_tol * diag_max {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap(piv * n + k, col * n + k);
            }
            b.swap(piv, col);
        }
        let p = a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] / p;
            if factor != 0.0 {
                for k in col..n {
                    a[row * n + k] -= factor * a[col * n + k];
                }
                b[row] -= factor * b[col];
            }
        }
    }
    for row in (0..n).rev() {
        let mut s = b[row];
        for k in row + 1..n {
            s -= a[row * n + k] * b[k];
        }
        b[row] = s / a[row * n + row];
    }
    Some(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn two_points() {
        let (a, b) = ols_fit(&[0.0, 1.0], &[0.0, 1.0]).unwrap();
        assert_relative_eq!(a, 0.0, epsilon = 1e-15);
        assert_relative_eq!(b, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn exact_line() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 * 0.37 - 2.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 + 3.0 * x).collect();
        let (a, b) = ols_fit(&xs, &ys).unwrap();
        assert_relative_eq!(a, 2.0, epsilon = 1e-12);
        assert_relative_eq!(b, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_response() {
        let (a, b) = ols_fit(&[0.0, 1.0, 2.0], &[1.0, 1.0, 1.0]).unwrap();
        assert_relative_eq!(a, 1.0, epsilon = 1e-15);
        assert_relative_eq!(b, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn degenerate_design() {
        assert!(ols_fit(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(ols_fit(&[1.0], &[1.0]).is_err());
        assert!(ols_fit(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn small_solver() {
        let mut a = vec![4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0];
        let x = [1.0, -2.0, 0.5];
        let mut b: Vec<f64> = (0..3).map(|i| (0..3).map(|j| a[i * 3 + j] * x[j]).sum()).collect();
        solve_small(&mut a, &mut b, 3, 1e-12).unwrap();
        for i in 0..3 {
            assert_relative_eq!(b[i], x[i], epsilon = 1e-13);
        }
        let mut singular = vec![1.0, 1.0, 1.0, 1.0];
        let mut rhs = vec![1.0, 1.0];
        assert!(solve_small(&mut singular, &mut rhs, 2, 1e-12).is_none());
    }
}
