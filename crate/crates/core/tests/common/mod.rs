//! Shared test oracles, independent of the library's solver paths.
#![allow(dead_code)]

use ndarray::{Array1, Array2};

/// Plain Gauss-Jordan inverse with partial pivoting.
pub fn dense_inverse(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let mut m = a.clone();
    let mut inv = Array2::<f64>::eye(n);
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if m[[r, col]].abs() > m[[piv, col]].abs() {
                piv = r;
            }
        }
        if piv != col {
            for c in 0..n {
                m.swap([col, c], [piv, c]);
                inv.swap([col, c], [piv, c]);
            }
        }
        let d = m[[col, col]];
        for c in 0..n {
            m[[col, c]] /= d;
            inv[[col, c]] /= d;
        }
        for r in 0..n {
            if r != col {
                let f = m[[r, col]];
                for c in 0..n {
                    m[[r, c]] -= f * m[[col, c]];
                    inv[[r, c]] -= f * inv[[col, c]];
                }
            }
        }
    }
    inv
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// `(eigenvalues, eigenvectors-as-columns)` and checks its own
/// reconstruction to 1e-10 relative.
pub fn jacobi_eigen(a: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = a.nrows();
    let mut m = a.clone();
    let mut v = Array2::<f64>::eye(n);
    for _sweep in 0..200 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += m[[i, j]] * m[[i, j]];
            }
        }
        if off.sqrt() < 1e-14 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[[p, q]];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (m[[k, p]], m[[k, q]]);
                    m[[k, p]] = c * akp - s * akq;
                    m[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (m[[p, k]], m[[q, k]]);
                    m[[p, k]] = c * apk - s * aqk;
                    m[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[[k, p]], v[[k, q]]);
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let vals = Array1::from_shape_fn(n, |i| m[[i, i]]);
    // Self-check: A V = V diag(vals).
    let av = a.dot(&v);
    let scale = vals.iter().fold(1.0f64, |acc, &x| acc.max(x.abs()));
    for i in 0..n {
        for j in 0..n {
            let want = v[[i, j]] * vals[j];
            assert!(
                (av[[i, j]] - want).abs() <= 1e-10 * scale.max(1.0),
                "jacobi self-check failed at ({i},{j})"
            );
        }
    }
    (vals, v)
}

/// Moore-Penrose pseudoinverse of a symmetric PSD matrix via the Jacobi
/// eigendecomposition, dropping eigenvalues below `1e-12 * max`.
pub fn pseudoinverse_psd(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let (vals, vecs) = jacobi_eigen(a);
    let cutoff = 1e-12 * vals.iter().fold(0.0f64, |acc, &x| acc.max(x.abs()));
    let mut pinv = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        if vals[j] > cutoff {
            let col = vecs.column(j);
            let inv_l = 1.0 / vals[j];
            for r in 0..n {
                for c in 0..n {
                    pinv[[r, c]] += inv_l * col[r] * col[c];
                }
            }
        }
    }
    pinv
}
