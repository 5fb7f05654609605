//! Small dense eigenvalue routines.
//!
//! The matrices handled here are return-map Jacobians and Lyapunov matrices
//! of modest size, so plain Householder/QR and cyclic Jacobi are enough.

use nalgebra::{Complex, DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("eigenvalue iteration did not converge")]
    NoConvergence,
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
}

fn check_square(a: &DMatrix<f64>) -> Result<usize, LinalgError> {
    if a.nrows() != a.ncols() {
        return Err(LinalgError::NotSquare { rows: a.nrows(), cols: a.ncols() });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    Ok(a.nrows())
}

/// Reduces `a` to upper Hessenberg form by Householder reflections.
fn hessenberg(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    if n < 3 {
        return;
    }
    for k in 0..n - 2 {
        let mut v: Vec<f64> = (k + 1..n).map(|i| a[(i, k)]).collect();
        let alpha = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if alpha == 0.0 {
            continue;
        }
        let sign = if v[0] >= 0.0 { 1.0 } else { -1.0 };
        v[0] += sign * alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        // A <- H A H with H = I - 2 v vᵀ / (vᵀv) acting on rows/cols k+1..n
        for j in 0..n {
            let dot: f64 = (0..v.len()).map(|i| v[i] * a[(k + 1 + i, j)]).sum();
            let f = 2.0 * dot / vnorm2;
            for i in 0..v.len() {
                a[(k + 1 + i, j)] -= f * v[i];
            }
        }
        for i in 0..n {
            let dot: f64 = (0..v.len()).map(|j| a[(i, k + 1 + j)] * v[j]).sum();
            let f = 2.0 * dot / vnorm2;
            for j in 0..v.len() {
                a[(i, k + 1 + j)] -= f * v[j];
            }
        }
        for i in k + 2..n {
            a[(i, k)] = 0.0;
        }
    }
}

/// All eigenvalues of a general real matrix via Hessenberg reduction and
/// Francis double-shift QR.
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex<f64>>, LinalgError> {
    let n = check_square(a)?;
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut h = a.clone();
    hessenberg(&mut h);
    let mut wr = vec![0.0; n];
    let mut wi = vec![0.0; n];

    let mut anorm = 0.0;
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            anorm += h[(i, j)].abs();
        }
    }
    let mut nn = n as isize - 1;
    let mut t = 0.0;
    while nn >= 0 {
        let mut its = 0;
        loop {
            let nu = nn as usize;
            let mut l = nn;
            while l >= 1 {
                let lu = l as usize;
                let mut s = h[(lu - 1, lu - 1)].abs() + h[(lu, lu)].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if h[(lu, lu - 1)].abs() + s == s {
                    h[(lu, lu - 1)] = 0.0;
                    break;
                }
                l -= 1;
            }
            let mut x = h[(nu, nu)];
            if l == nn {
                wr[nu] = x + t;
                wi[nu] = 0.0;
                nn -= 1;
                break;
            }
            let mut y = h[(nu - 1, nu - 1)];
            let mut w = h[(nu, nu - 1)] * h[(nu - 1, nu)];
            if l == nn - 1 {
                let p = 0.5 * (y - x);
                let q = p * p + w;
                let z = q.abs().sqrt();
                x += t;
                if q >= 0.0 {
                    let z = p + z.copysign(p);
                    wr[nu - 1] = x + z;
                    wr[nu] = if z != 0.0 { x - w / z } else { x + z };
                    wi[nu - 1] = 0.0;
                    wi[nu] = 0.0;
                } else {
                    wr[nu - 1] = x + p;
                    wr[nu] = x + p;
                    wi[nu - 1] = -z;
                    wi[nu] = z;
                }
                nn -= 2;
                break;
            }
            if its == 60 {
                return Err(LinalgError::NoConvergence);
            }
            if its == 10 || its == 20 {
                t += x;
                for i in 0..=nu {
                    h[(i, i)] -= x;
                }
                let s = h[(nu, nu - 1)].abs() + h[(nu - 1, nu - 2)].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            its += 1;
            let (mut p, mut q, mut r);
            let mut m = nn - 2;
            loop {
                let mu = m as usize;
                let z = h[(mu, mu)];
                let r0 = x - z;
                let s0 = y - z;
                p = (r0 * s0 - w) / h[(mu + 1, mu)] + h[(mu, mu + 1)];
                q = h[(mu + 1, mu + 1)] - z - r0 - s0;
                r = h[(mu + 2, mu + 1)];
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u = h[(mu, mu - 1)].abs() * (q.abs() + r.abs());
                let v = p.abs() * (h[(mu - 1, mu - 1)].abs() + z.abs() + h[(mu + 1, mu + 1)].abs());
                if u + v == v {
                    break;
                }
                m -= 1;
            }
            let mu = m as usize;
            for i in mu + 2..=nu {
                h[(i, i - 2)] = 0.0;
                if i != mu + 2 {
                    h[(i, i - 3)] = 0.0;
                }
            }
            let mut k = mu;
            while k < nu {
                let mut xk = 0.0;
                if k != mu {
                    p = h[(k, k - 1)];
                    q = h[(k + 1, k - 1)];
                    r = if k + 1 != nu { h[(k + 2, k - 1)] } else { 0.0 };
                    xk = p.abs() + q.abs() + r.abs();
                    if xk != 0.0 {
                        p /= xk;
                        q /= xk;
                        r /= xk;
                    }
                }
                let s = (p * p + q * q + r * r).sqrt().copysign(p);
                if s != 0.0 {
                    if k == mu {
                        if l != m {
                            h[(k, k - 1)] = -h[(k, k - 1)];
                        }
                    } else {
                        h[(k, k - 1)] = -s * xk;
                    }
                    p += s;
                    let xx = p / s;
                    let yy = q / s;
                    let zz = r / s;
                    q /= p;
                    r /= p;
                    for j in k..=nu {
                        let mut pp = h[(k, j)] + q * h[(k + 1, j)];
                        if k + 1 != nu {
                            pp += r * h[(k + 2, j)];
                            h[(k + 2, j)] -= pp * zz;
                        }
                        h[(k + 1, j)] -= pp * yy;
                        h[(k, j)] -= pp * xx;
                    }
                    let mmin = if nu < k + 3 { nu } else { k + 3 };
                    for i in l as usize..=mmin {
                        let mut pp = xx * h[(i, k)] + yy * h[(i, k + 1)];
                        if k + 1 != nu {
                            pp += zz * h[(i, k + 2)];
                            h[(i, k + 2)] -= pp * r;
                        }
                        h[(i, k + 1)] -= pp * q;
                        h[(i, k)] -= pp;
                    }
                }
                k += 1;
            }
            if l >= nn - 1 {
                break;
            }
        }
    }
    Ok(wr.into_iter().zip(wi).map(|(re, im)| Complex::new(re, im)).collect())
}

/// Largest eigenvalue magnitude.
pub fn spectral_radius(a: &DMatrix<f64>) -> Result<f64, LinalgError> {
    Ok(eigenvalues(a)?.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Symmetric eigen-decomposition by cyclic Jacobi rotations.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    /// Ascending.
    pub values: Vec<f64>,
    /// Column `i` pairs with `values[i]`.
    pub vectors: DMatrix<f64>,
}

pub fn max_asymmetry(p: &DMatrix<f64>) -> f64 {
    let n = p.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            worst = worst.max((p[(i, j)] - p[(j, i)]).abs());
        }
    }
    worst
}

pub fn symmetric_eigen(p: &DMatrix<f64>) -> Result<SymmetricEigen, LinalgError> {
    let n = check_square(p)?;
    let scale = p.amax().max(f64::MIN_POSITIVE);
    let asym = max_asymmetry(p);
    if asym > 1e-12 * scale {
        return Err(LinalgError::NotSymmetric(asym));
    }
    let mut a = (p + p.transpose()) * 0.5;
    let mut v = DMatrix::<f64>::identity(n, n);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off.sqrt() <= 1e-15 * scale {
            let mut pairs: Vec<(f64, usize)> = (0..n).map(|i| (a[(i, i)], i)).collect();
            pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
            let values = pairs.iter().map(|p| p.0).collect();
            let mut vectors = DMatrix::zeros(n, n);
            for (col, &(_, src)) in pairs.iter().enumerate() {
                vectors.set_column(col, &v.column(src));
            }
            return Ok(SymmetricEigen { values, vectors });
        }
        for i in 0..n {
            for j in i + 1..n {
                let apq = a[(i, j)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(j, j)] - a[(i, i)]) / (2.0 * apq);
                let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                let t = sign / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let aki = a[(k, i)];
                    let akj = a[(k, j)];
                    a[(k, i)] = c * aki - s * akj;
                    a[(k, j)] = s * aki + c * akj;
                }
                for k in 0..n {
                    let aik = a[(i, k)];
                    let ajk = a[(j, k)];
                    a[(i, k)] = c * aik - s * ajk;
                    a[(j, k)] = s * aik + c * ajk;
                }
                for k in 0..n {
                    let vki = v[(k, i)];
                    let vkj = v[(k, j)];
                    v[(k, i)] = c * vki - s * vkj;
                    v[(k, j)] = s * vki + c * vkj;
                }
            }
        }
    }
    Err(LinalgError::NoConvergence)
}

pub fn frobenius(a: &DMatrix<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Euclidean norm after dividing each coordinate by `scale`.
pub fn scaled_norm(x: &DVector<f64>, scale: &[f64]) -> f64 {
    x.iter().zip(scale).map(|(v, s)| (v / s).powi(2)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sorted_moduli(a: &DMatrix<f64>) -> Vec<f64> {
        let mut m: Vec<f64> = eigenvalues(a).unwrap().iter().map(|z| z.norm()).collect();
        m.sort_by(|x, y| x.total_cmp(y));
        m
    }

    #[test]
    fn one_by_one() {
        assert_eq!(spectral_radius(&DMatrix::from_element(1, 1, 0.8)).unwrap(), 0.8);
    }

    #[test]
    fn rotation_scaling() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -0.5, 0.5, 0.0]);
        let ev = eigenvalues(&a).unwrap();
        assert!((spectral_radius(&a).unwrap() - 0.5).abs() < 1e-15);
        assert!(ev.iter().all(|z| z.re.abs() < 1e-15 && (z.im.abs() - 0.5).abs() < 1e-15));
    }

    #[test]
    fn constructed_spectrum() {
        // Block-diagonal real Schur form with known eigenvalues, conjugated by
        // a well-conditioned random similarity.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let (l1, l2): (f64, f64) = (rng.random_range(-0.9..0.9), rng.random_range(-0.9..0.9));
            let (re, im): (f64, f64) = (rng.random_range(-0.6..0.6), rng.random_range(0.05..0.6));
            let lam = DMatrix::from_row_slice(
                4,
                4,
                &[l1, 0.0, 0.0, 0.0, 0.0, l2, 0.0, 0.0, 0.0, 0.0, re, im, 0.0, 0.0, -im, re],
            );
            let q = DMatrix::from_fn(4, 4, |i, j| {
                (if i == j { 2.0 } else { 0.0 }) + rng.random_range(-0.5..0.5)
            });
            let a = &q * &lam * q.clone().try_inverse().unwrap();
            let mut expect = vec![l1.abs(), l2.abs(), (re * re + im * im).sqrt(), (re * re + im * im).sqrt()];
            expect.sort_by(|x, y| x.total_cmp(y));
            let got = sorted_moduli(&a);
            for (g, e) in got.iter().zip(&expect) {
                assert!((g - e).abs() < 1e-10, "{got:?} vs {expect:?}");
            }
        }
    }

    #[test]
    fn triangular_and_defective() {
        let a = DMatrix::from_row_slice(3, 3, &[0.5, 1.0, 2.0, 0.0, 0.5, 3.0, 0.0, 0.0, -0.25]);
        let m = sorted_moduli(&a);
        assert!((m[0] - 0.25).abs() < 1e-7 && (m[2] - 0.5).abs() < 1e-7);
    }

    #[test]
    fn non_square_rejected() {
        assert!(matches!(eigenvalues(&DMatrix::zeros(2, 3)), Err(LinalgError::NotSquare { .. })));
    }

    #[test]
    fn jacobi_diagonal_and_identity() {
        let e = symmetric_eigen(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(e.values, vec![1.0, 1.0, 1.0]);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![2.77778, 1.3333]));
        let e = symmetric_eigen(&d).unwrap();
        assert_eq!(e.values, vec![1.3333, 2.77778]);
    }

    #[test]
    fn jacobi_rejects_asymmetric() {
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(symmetric_eigen(&p), Err(LinalgError::NotSymmetric(_))));
    }

    #[test]
    fn jacobi_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = DMatrix::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
        let p = &b * b.transpose();
        let e = symmetric_eigen(&p).unwrap();
        let rebuilt = &e.vectors * DMatrix::from_diagonal(&DVector::from_vec(e.values.clone())) * e.vectors.transpose();
        assert!(frobenius(&(rebuilt - &p)) < 1e-12 * frobenius(&p));
    }
}
