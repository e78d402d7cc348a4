//! Small dense helpers shared across modules: 2×2 symmetric algebra,
//! randomized operator-norm probes and log-log slope fits.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Vec2 = [f64; 2];
pub type Mat2 = [[f64; 2]; 2];

pub const IDENTITY: Mat2 = [[1.0, 0.0], [0.0, 1.0]];

#[inline]
pub fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn mat_vec(m: &Mat2, v: Vec2) -> Vec2 {
    [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
}

#[inline]
pub fn quad_form(m: &Mat2, v: Vec2) -> f64 {
    dot(v, mat_vec(m, v))
}

#[inline]
pub fn det(m: &Mat2) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

/// Inverse of a 2×2 matrix restricted to the leading `dim`×`dim` block; the
/// unused diagonal entry is set to one.
pub fn inverse(m: &Mat2, dim: usize) -> Mat2 {
    if dim == 1 {
        return [[1.0 / m[0][0], 0.0], [0.0, 1.0]];
    }
    let d = det(m);
    [[m[1][1] / d, -m[0][1] / d], [-m[1][0] / d, m[0][0] / d]]
}

pub fn transpose(m: &Mat2) -> Mat2 {
    [[m[0][0], m[1][0]], [m[0][1], m[1][1]]]
}

pub fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

/// Eigenvalues (ascending) of a symmetric matrix on its leading `dim` block.
pub fn sym_eigenvalues(m: &Mat2, dim: usize) -> Vec2 {
    if dim == 1 {
        return [m[0][0], m[0][0]];
    }
    let tr = m[0][0] + m[1][1];
    let disc = ((m[0][0] - m[1][1]).powi(2) + 4.0 * m[0][1] * m[1][0]).max(0.0).sqrt();
    [(tr - disc) / 2.0, (tr + disc) / 2.0]
}

/// Symmetric square root on the leading `dim` block.
pub fn sym_sqrt(m: &Mat2, dim: usize) -> Mat2 {
    if dim == 1 {
        return [[m[0][0].sqrt(), 0.0], [0.0, 1.0]];
    }
    // sqrt(M) = (M + sqrt(det) I) / sqrt(tr + 2 sqrt(det)) for SPD 2x2
    let s = det(m).sqrt();
    let t = (m[0][0] + m[1][1] + 2.0 * s).sqrt();
    [[(m[0][0] + s) / t, m[0][1] / t], [m[1][0] / t, (m[1][1] + s) / t]]
}

/// A linear operator on complex grid functions with an adjoint.
pub trait LinearOperator: Send + Sync {
    fn len(&self) -> usize;
    fn apply(&self, u: &[Complex64]) -> Vec<Complex64>;
    fn apply_adjoint(&self, u: &[Complex64]) -> Vec<Complex64>;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn norm2(u: &[Complex64]) -> f64 {
    u.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn inner(u: &[Complex64], v: &[Complex64]) -> Complex64 {
    u.iter().zip(v).map(|(a, b)| a * b.conj()).sum()
}

pub fn random_complex(n: usize, rng: &mut impl Rng) -> Vec<Complex64> {
    (0..n)
        .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
        .collect()
}

/// Outcome of a randomized power-iteration norm probe.
#[derive(Debug, Clone, Copy)]
pub struct NormProbe {
    pub norm: f64,
    /// relative change of the estimate over the last iteration of the best
    /// restart
    pub last_change: f64,
}

/// Estimates `‖A‖` by power iteration on `A*A` from several random starts.
pub fn probe_norm(op: &dyn LinearOperator, iterations: usize, restarts: usize, seed: u64) -> NormProbe {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = op.len();
    let mut best = NormProbe { norm: 0.0, last_change: f64::INFINITY };
    for _ in 0..restarts.max(1) {
        let mut v = random_complex(n, &mut rng);
        let nv = norm2(&v);
        v.iter_mut().for_each(|z| *z /= nv);
        let mut estimate = 0.0;
        let mut change = f64::INFINITY;
        for _ in 0..iterations {
            let w = op.apply_adjoint(&op.apply(&v));
            let nw = norm2(&w);
            if nw == 0.0 {
                estimate = 0.0;
                change = 0.0;
                break;
            }
            let next = nw.sqrt();
            change = ((next - estimate) / next).abs();
            estimate = next;
            v = w.into_iter().map(|z| z / nw).collect();
        }
        // both quantities are lower bounds on ‖A‖
        let value = norm2(&op.apply(&v)).max(estimate);
        if value >= best.norm {
            best = NormProbe { norm: value, last_change: change };
        }
    }
    best
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn hermitian_min_eigenvalue(m: DMatrix<Complex64>) -> f64 {
    let eig = SymmetricEigen::new(m);
    eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Diag(Vec<f64>);
    impl LinearOperator for Diag {
        fn len(&self) -> usize {
            self.0.len()
        }
        fn apply(&self, u: &[Complex64]) -> Vec<Complex64> {
            u.iter().zip(&self.0).map(|(a, d)| a * d).collect()
        }
        fn apply_adjoint(&self, u: &[Complex64]) -> Vec<Complex64> {
            self.apply(u)
        }
    }

    #[test]
    fn power_iteration_finds_largest_modulus() {
        let op = Diag(vec![0.5, -3.0, 2.0, 1.0]);
        let p = probe_norm(&op, 60, 3, 7);
        assert!((p.norm - 3.0).abs() < 1e-8, "{p:?}");
    }

    #[test]
    fn sqrt_and_inverse_of_spd() {
        let m = [[4.0, 1.0], [1.0, 3.0]];
        let s = sym_sqrt(&m, 2);
        let back = mat_mul(&s, &s);
        for i in 0..2 {
            for j in 0..2 {
                assert!((back[i][j] - m[i][j]).abs() < 1e-14);
            }
        }
        let inv = inverse(&m, 2);
        let id = mat_mul(&inv, &m);
        assert!((id[0][0] - 1.0).abs() < 1e-15 && id[0][1].abs() < 1e-15);
        let ev = sym_eigenvalues(&m, 2);
        assert!((ev[0] * ev[1] - det(&m)).abs() < 1e-12);
    }

    #[test]
    fn slope_of_power_law() {
        let x = [0.1, 0.05, 0.025];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(1.5)).collect();
        assert!((loglog_slope(&x, &y) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn hermitian_min_eig() {
        let m = DMatrix::from_row_slice(
            2,
            2,
            &[Complex64::new(2.0, 0.0), Complex64::new(0.0, 1.0), Complex64::new(0.0, -1.0), Complex64::new(2.0, 0.0)],
        );
        assert!((hermitian_min_eigenvalue(m) - 1.0).abs() < 1e-12);
    }
}
