//! Small shared numerics: tridiagonal solves and grid quadrature.

use crate::error::{Error, Result};

/// Solve a tridiagonal system in place (Thomas algorithm).
///
/// `lower[i]` multiplies x[i-1] in row i (lower[0] unused), `diag[i]` x[i],
/// `upper[i]` x[i+1] (upper[n-1] unused). Overwrites `rhs` with the solution.
pub fn solve_tridiagonal(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    rhs: &mut [f64],
) -> Result<()> {
    let n = diag.len();
    assert!(lower.len() == n && upper.len() == n && rhs.len() == n);
    let mut c = vec![0.0; n];
    let mut d = diag[0];
    if d == 0.0 {
        return Err(Error::numerical("tridiagonal solve: zero pivot at row 0"));
    }
    c[0] = upper[0] / d;
    rhs[0] /= d;
    for i in 1..n {
        d = diag[i] - lower[i] * c[i - 1];
        if d == 0.0 {
            return Err(Error::numerical(format!(
                "tridiagonal solve: zero pivot at row {i}"
            )));
        }
        c[i] = upper[i] / d;
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / d;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
    Ok(())
}

/// Composite Simpson rule over `m` uniform intervals of width `h`
/// (values has m+1 nodes). For odd `m` the last three intervals use
/// Simpson 3/8 so the rule stays fourth order.
pub fn simpson(values: &[f64], h: f64) -> f64 {
    let m = values.len() - 1;
    if m == 0 {
        return 0.0;
    }
    if m == 1 {
        return 0.5 * h * (values[0] + values[1]);
    }
    if m == 2 {
        return h / 3.0 * (values[0] + 4.0 * values[1] + values[2]);
    }
    let (even_part, rest) = if m % 2 == 0 {
        (m, 0usize)
    } else {
        (m - 3, 3usize)
    };
    let mut sum = 0.0;
    if even_part > 0 {
        sum += values[0] + values[even_part];
        for (i, v) in values.iter().enumerate().take(even_part).skip(1) {
            sum += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
        }
        sum *= h / 3.0;
    }
    if rest == 3 {
        let a = even_part;
        sum += 3.0 * h / 8.0
            * (values[a] + 3.0 * values[a + 1] + 3.0 * values[a + 2] + values[a + 3]);
    }
    sum
}

/// Trapezoid rule over uniform nodes with spacing `h`.
pub fn trapezoid(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mut sum = 0.5 * (values[0] + values[n - 1]);
    for v in &values[1..n - 1] {
        sum += v;
    }
    sum * h
}

/// Ordinary least squares fit y = a + b x; returns (a, b, r_squared).
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        sxx += (xi - mx) * (xi - mx);
        sxy += (xi - mx) * (yi - my);
        syy += (yi - my) * (yi - my);
    }
    let b = sxy / sxx;
    let a = my - b * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (a, b, r2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn tridiagonal_reproduces_dense_solution() {
        let n = 7;
        let lower = vec![-1.0; n];
        let diag = vec![2.5; n];
        let upper = vec![-1.0; n];
        let mut rhs: Vec<f64> = (0..n).map(|i| (i as f64).sin() + 1.0).collect();
        let expect = {
            let a = nalgebra::DMatrix::<f64>::from_fn(n, n, |i, j| {
                if i == j {
                    2.5
                } else if i.abs_diff(j) == 1 {
                    -1.0
                } else {
                    0.0
                }
            });
            let b = nalgebra::DVector::from_vec(rhs.clone());
            a.lu().solve(&b).unwrap()
        };
        solve_tridiagonal(&lower, &diag, &upper, &mut rhs).unwrap();
        for i in 0..n {
            assert_relative_eq!(rhs[i], expect[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn simpson_is_exact_on_cubics() {
        // even and odd interval counts
        for m in [8usize, 9, 64, 65] {
            let h = 1.0 / m as f64;
            let vals: Vec<f64> = (0..=m)
                .map(|i| {
                    let x = i as f64 * h;
                    3.0 * x * x * x - 2.0 * x * x + x - 0.5
                })
                .collect();
            // integral over [0,1] of the cubic above
            let exact = 3.0 / 4.0 - 2.0 / 3.0 + 0.5 - 0.5;
            assert_relative_eq!(simpson(&vals, h), exact, epsilon = 1e-13);
        }
    }

    #[test]
    fn linear_fit_recovers_line() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|xi| 3.0 - 0.5 * xi).collect();
        let (a, b, r2) = linear_fit(&x, &y);
        assert_relative_eq!(a, 3.0, epsilon = 1e-12);
        assert_relative_eq!(b, -0.5, epsilon = 1e-12);
        assert_relative_eq!(r2, 1.0, epsilon = 1e-12);
    }
}
