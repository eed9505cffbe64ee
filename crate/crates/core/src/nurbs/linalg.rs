use crate::{Error, Result, Vec3};

const PIVOT_EPS: f64 = 1e-12;

/// Solves `a · x = rhs` for square `a` (row-major rows) by Gaussian
/// elimination with partial pivoting.
pub fn solve(a: &[Vec<f64>], rhs: &[Vec3]) -> Result<Vec<Vec3>> {
    let n = a.len();
    assert_eq!(rhs.len(), n);
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut b: Vec<Vec3> = rhs.to_vec();
    for col in 0..n {
        let (piv, best) = (col..n)
            .map(|r| (r, m[r][col].abs()))
            .fold((col, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if best < PIVOT_EPS {
            return Err(Error::Singular(best));
        }
        m.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = m[r][col] / m[col][col];
            if f == 0.0 {
                continue;
            }
            let (upper, lower) = m.split_at_mut(r);
            for (x, p) in lower[0][col..].iter_mut().zip(&upper[col][col..]) {
                *x -= f * p;
            }
            let bc = b[col];
            b[r] -= bc * f;
        }
    }
    let mut x = vec![Vec3::zeros(); n];
    for r in (0..n).rev() {
        let mut acc = b[r];
        for c in r + 1..n {
            acc -= x[c] * m[r][c];
        }
        x[r] = acc / m[r][r];
    }
    Ok(x)
}

/// Max-norm residual `‖a·x − rhs‖∞`.
pub(crate) fn residual(a: &[Vec<f64>], x: &[Vec3], rhs: &[Vec3]) -> f64 {
    a.iter()
        .zip(rhs)
        .map(|(row, q)| {
            let ax = row.iter().zip(x).fold(Vec3::zeros(), |acc, (&c, p)| acc + p * c);
            (ax - q).amax()
        })
        .fold(0.0, f64::max)
}

/// Solve and verify the residual against `tol` scaled by the data magnitude.
pub(crate) fn solve_checked(a: &[Vec<f64>], rhs: &[Vec3], tol: f64) -> Result<Vec<Vec3>> {
    let x = solve(a, rhs)?;
    let scale = rhs.iter().map(|q| q.amax()).fold(1.0, f64::max);
    let res = residual(a, &x, rhs);
    if res > tol * scale {
        return Err(Error::Residual(res));
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        let a = vec![vec![0.0, 2.0, 1.0], vec![1.0, 1.0, 0.0], vec![3.0, 0.0, 1.0]];
        let x_true = vec![Vec3::new(1.0, 2.0, 3.0), Vec3::new(-1.0, 0.5, 0.0), Vec3::new(2.0, 2.0, 2.0)];
        let rhs: Vec<Vec3> = a
            .iter()
            .map(|row| row.iter().zip(&x_true).fold(Vec3::zeros(), |acc, (&c, p)| acc + p * c))
            .collect();
        let x = solve(&a, &rhs).unwrap();
        for (a, b) in x.iter().zip(&x_true) {
            assert!((a - b).norm() < 1e-12);
        }
        assert!(residual(&a, &x, &rhs) < 1e-12);
    }

    #[test]
    fn singular_detected() {
        let a = vec![vec![1.0, 2.0], vec![2.0, 4.0]];
        assert!(matches!(solve(&a, &[Vec3::x(), Vec3::y()]), Err(Error::Singular(_))));
    }
}
