//! Small dense complex linear algebra for per-bin c×c problems (c ≤ 8).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use num_complex::Complex64;

pub fn mat_vec(m: ArrayView2<'_, Complex64>, v: ArrayView1<'_, Complex64>) -> Array1<Complex64> {
    m.dot(&v)
}

/// `aᴴ b`.
pub fn inner(a: ArrayView1<'_, Complex64>, b: ArrayView1<'_, Complex64>) -> Complex64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm(v: ArrayView1<'_, Complex64>) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn trace(m: ArrayView2<'_, Complex64>) -> f64 {
    m.diag().iter().map(|z| z.re).sum()
}

/// Largest deviation from Hermitian symmetry.
pub fn hermitian_defect(m: ArrayView2<'_, Complex64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            worst = worst.max((m[[i, j]] - m[[j, i]].conj()).norm());
        }
    }
    worst
}

/// Lower Cholesky factor of a Hermitian positive-definite matrix, or `None`
/// when a pivot is not strictly positive.
pub fn cholesky(m: ArrayView2<'_, Complex64>) -> Option<Array2<Complex64>> {
    let n = m.nrows();
    let mut l = Array2::<Complex64>::zeros((n, n));
    for j in 0..n {
        let mut d = m[[j, j]].re;
        for k in 0..j {
            d -= l[[j, k]].norm_sqr();
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let djj = d.sqrt();
        l[[j, j]] = Complex64::new(djj, 0.0);
        for i in j + 1..n {
            let mut s = m[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]].conj();
            }
            l[[i, j]] = s / djj;
        }
    }
    Some(l)
}

/// Solves `L Lᴴ x = b` given the lower factor `L`.
pub fn cholesky_solve(l: ArrayView2<'_, Complex64>, b: ArrayView1<'_, Complex64>) -> Array1<Complex64> {
    let n = l.nrows();
    let mut y = Array1::<Complex64>::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    let mut x = Array1::<Complex64>::zeros(n);
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[[k, i]].conj() * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// Rotates `v` so its first non-negligible component is real and
/// non-negative.
pub fn canonical_phase(v: &mut Array1<Complex64>) {
    let scale = norm(v.view());
    if scale == 0.0 {
        return;
    }
    if let Some(pivot) = v.iter().find(|z| z.norm() > 1e-300_f64.max(1e-15 * scale)).copied() {
        let rot = pivot.conj() / pivot.norm();
        v.mapv_inplace(|z| z * rot);
        // remove rounding residue on the pivot's imaginary part
        if let Some(p) = v.iter_mut().find(|z| z.norm() > 1e-15 * scale) {
            *p = Complex64::new(p.norm(), 0.0);
        }
    }
}

pub struct PowerIteration {
    pub vector: Array1<Complex64>,
    pub eigenvalue: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Principal eigenvector of a Hermitian PSD matrix. Iterates
/// `v ← Rv/‖Rv‖` (phase-canonicalized) until successive iterates differ by
/// less than `tol` in 2-norm.
pub fn power_iteration(
    m: ArrayView2<'_, Complex64>,
    start: ArrayView1<'_, Complex64>,
    tol: f64,
    max_iter: usize,
) -> Option<PowerIteration> {
    let mut v = start.to_owned();
    let n0 = norm(v.view());
    if n0 == 0.0 {
        return None;
    }
    v.mapv_inplace(|z| z / n0);
    canonical_phase(&mut v);
    for it in 1..=max_iter {
        let mut w = mat_vec(m, v.view());
        let nw = norm(w.view());
        if nw == 0.0 || !nw.is_finite() {
            return None;
        }
        w.mapv_inplace(|z| z / nw);
        canonical_phase(&mut w);
        let change = norm((&w - &v).view());
        v = w;
        if change < tol {
            let eigenvalue = inner(v.view(), mat_vec(m, v.view()).view()).re;
            return Some(PowerIteration { vector: v, eigenvalue, iterations: it, converged: true });
        }
    }
    let eigenvalue = inner(v.view(), mat_vec(m, v.view()).view()).re;
    Some(PowerIteration { vector: v, eigenvalue, iterations: max_iter, converged: false })
}
