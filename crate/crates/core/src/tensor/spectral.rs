use nalgebra::DVector;

use super::{c, Matrix, Operator, C64};
use crate::error::{Error, Result};

/// Largest tolerated anti-Hermitian part before a spectral routine refuses input.
pub const HERMITIAN_TOL: f64 = 1e-9;
/// Eigenvalues at or above `-PSD_TOL` count as nonnegative and are clipped to 0.
pub const PSD_TOL: f64 = 1e-8;

/// Hermitian eigendecomposition `(eigenvalues ascending, eigenvectors as columns)`.
///
/// The input is replaced by `(M + M†)/2` when the anti-Hermitian part is
/// within [`HERMITIAN_TOL`]; otherwise the call fails.
pub fn eigh(m: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let defect = anti_hermitian_norm(m);
    if defect > HERMITIAN_TOL * (1.0 + max_abs(m)) {
        return Err(Error::NotHermitian(defect));
    }
    let h = (m + m.adjoint()) * c(0.5);
    let n = h.nrows();
    if n == 1 {
        return Ok((vec![h[(0, 0)].re], Matrix::identity(1, 1)));
    }
    let (vals, vecs) = hermitian_eigen(&h, true)?;
    let vecs = vecs.expect("requested");
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
    let sorted = idx.iter().map(|&i| vals[i]).collect();
    Ok((sorted, Matrix::from_fn(n, n, |r, k| vecs[(r, idx[k])])))
}

/// Eigenvalues only, ascending.
pub fn eigvalsh(m: &Matrix) -> Result<Vec<f64>> {
    let defect = anti_hermitian_norm(m);
    if defect > HERMITIAN_TOL * (1.0 + max_abs(m)) {
        return Err(Error::NotHermitian(defect));
    }
    let h = (m + m.adjoint()) * c(0.5);
    let mut vals: Vec<f64> = if h.nrows() == 1 {
        vec![h[(0, 0)].re]
    } else {
        hermitian_eigen(&h, false)?.0
    };
    vals.sort_by(f64::total_cmp);
    Ok(vals)
}

// nalgebra's complex Hermitian solver can stop early or return non-finite
// values on large or very sparse inputs, so faer is used. Choi matrices of
// structured channels are often block diagonal up to a permutation; the blocks
// (connected components of the nonzero pattern) are diagonalized separately,
// which is exact and avoids convergence failures on highly degenerate spectra.
fn hermitian_eigen(h: &Matrix, vectors: bool) -> Result<(Vec<f64>, Option<Matrix>)> {
    let n = h.nrows();
    let mut vals = Vec::with_capacity(n);
    let mut vecs = vectors.then(|| Matrix::zeros(n, n));
    for block in pattern_components(h) {
        let sub = Matrix::from_fn(block.len(), block.len(), |i, j| h[(block[i], block[j])]);
        let (bv, bu) = dense_hermitian_eigen(&sub, vectors)?;
        if let (Some(out), Some(bu)) = (vecs.as_mut(), bu) {
            for k in 0..block.len() {
                for (i, &row) in block.iter().enumerate() {
                    out[(row, vals.len() + k)] = bu[(i, k)];
                }
            }
        }
        vals.extend(bv);
    }
    Ok((vals, vecs))
}

/// Index sets of the connected components of the graph `i ~ j ⇔ h_ij ≠ 0`.
fn pattern_components(h: &Matrix) -> Vec<Vec<usize>> {
    let n = h.nrows();
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for root in 0..n {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        let mut block = vec![root];
        let mut head = 0;
        while head < block.len() {
            let i = block[head];
            head += 1;
            for j in 0..n {
                if !seen[j] && (h[(i, j)] != C64::new(0.0, 0.0) || h[(j, i)] != C64::new(0.0, 0.0)) {
                    seen[j] = true;
                    block.push(j);
                }
            }
        }
        block.sort_unstable();
        out.push(block);
    }
    out
}

fn dense_hermitian_eigen(h: &Matrix, vectors: bool) -> Result<(Vec<f64>, Option<Matrix>)> {
    let n = h.nrows();
    if n == 1 {
        return Ok((vec![h[(0, 0)].re], vectors.then(|| Matrix::identity(1, 1))));
    }
    let m = faer::Mat::<C64>::from_fn(n, n, |i, j| h[(i, j)]);
    match m.self_adjoint_eigen(faer::Side::Lower) {
        Ok(eig) => {
            let s = eig.S().column_vector();
            let u = eig.U();
            Ok(((0..n).map(|k| s[k].re).collect(), vectors.then(|| Matrix::from_fn(n, n, |i, j| u[(i, j)]))))
        }
        Err(e) => {
            // last resort, accepted only if the decomposition checks out
            let eig = h.clone().symmetric_eigen();
            let lam = Matrix::from_diagonal(&eig.eigenvalues.map(c));
            let resid = (h * &eig.eigenvectors - &eig.eigenvectors * lam).norm();
            if resid.is_nan() || resid > 1e-10 * (1.0 + h.norm()) {
                return Err(Error::DimensionMismatch(format!("eigensolver failed: {e:?}")));
            }
            Ok((eig.eigenvalues.iter().copied().collect(), vectors.then_some(eig.eigenvectors)))
        }
    }
}

fn anti_hermitian_norm(m: &Matrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in 0..=j {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm() * 0.5);
        }
    }
    worst
}

fn max_abs(m: &Matrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn is_hermitian(m: &Matrix) -> bool {
    anti_hermitian_norm(m) <= 1e-12 * (1.0 + max_abs(m))
}

fn singular_values(m: &Matrix) -> Vec<f64> {
    let f = faer::Mat::<C64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    match f.singular_values() {
        Ok(v) => v,
        Err(_) => m.clone().singular_values().iter().copied().collect(),
    }
}

/// Sum of singular values.
pub fn trace_norm_matrix(m: &Matrix) -> f64 {
    if is_hermitian(m) {
        if let Ok(vals) = eigvalsh(m) {
            return vals.iter().map(|v| v.abs()).sum();
        }
    }
    singular_values(m).iter().sum()
}

/// Largest singular value.
pub fn op_norm_matrix(m: &Matrix) -> f64 {
    if is_hermitian(m) {
        if let Ok(vals) = eigvalsh(m) {
            return vals.iter().map(|v| v.abs()).fold(0.0, f64::max);
        }
    }
    singular_values(m).iter().copied().fold(0.0, f64::max)
}

pub fn trace_norm(op: &Operator) -> f64 {
    trace_norm_matrix(op.matrix())
}

pub fn op_norm(op: &Operator) -> f64 {
    op_norm_matrix(op.matrix())
}

pub fn min_eigenvalue(op: &Operator) -> Result<f64> {
    Ok(eigvalsh(op.matrix())?[0])
}

pub fn max_eigenvalue(op: &Operator) -> Result<f64> {
    Ok(*eigvalsh(op.matrix())?.last().expect("nonempty"))
}

fn rebuild(vals: &[f64], vecs: &Matrix) -> Matrix {
    let scaled = Matrix::from_fn(vecs.nrows(), vecs.ncols(), |i, k| vecs[(i, k)] * c(vals[k]));
    scaled * vecs.adjoint()
}

/// Apply `f` to the spectrum of a Hermitian operator. Eigenvalues with
/// `|λ| <= cutoff` map to 0 (pseudo-inverse convention on the kernel).
pub fn herm_fn<F: Fn(f64) -> f64>(op: &Operator, f: F, cutoff: f64) -> Result<Operator> {
    let (vals, vecs) = eigh(op.matrix())?;
    let mapped: Vec<f64> = vals.iter().map(|&v| if v.abs() <= cutoff { 0.0 } else { f(v) }).collect();
    Operator::new(rebuild(&mapped, &vecs), op.shape().clone())
}

/// Spectrum of a PSD operator with eigenvalues in `[-PSD_TOL, 0)` clipped to 0.
pub fn psd_eigh(op: &Operator) -> Result<(Vec<f64>, Matrix)> {
    let (mut vals, vecs) = eigh(op.matrix())?;
    if vals[0] < -PSD_TOL {
        return Err(Error::NotPsd(vals[0]));
    }
    for v in vals.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok((vals, vecs))
}

pub fn sqrt_psd(op: &Operator) -> Result<Operator> {
    let (vals, vecs) = psd_eigh(op)?;
    let mapped: Vec<f64> = vals.iter().map(|v| v.sqrt()).collect();
    Operator::new(rebuild(&mapped, &vecs), op.shape().clone())
}

/// `op^{-1/2}` on the support; eigenvalues `<= cutoff` map to 0.
pub fn inv_sqrt_psd(op: &Operator, cutoff: f64) -> Result<Operator> {
    let (vals, vecs) = psd_eigh(op)?;
    let mapped: Vec<f64> = vals.iter().map(|&v| if v <= cutoff { 0.0 } else { 1.0 / v.sqrt() }).collect();
    Operator::new(rebuild(&mapped, &vecs), op.shape().clone())
}

/// Nearest PSD operator in Frobenius norm (negative eigenvalues set to 0).
pub fn project_psd(m: &Matrix) -> Result<Matrix> {
    let (vals, vecs) = eigh(m)?;
    if vals[0] >= 0.0 {
        return Ok((m + m.adjoint()) * c(0.5));
    }
    let clipped: Vec<f64> = vals.iter().map(|v| v.max(0.0)).collect();
    Ok(rebuild(&clipped, &vecs))
}

/// Uhlmann fidelity, evaluated as `‖sqrt(ρ) sqrt(σ)‖₁²` (stable for rank-deficient inputs).
pub fn fidelity(rho: &Operator, sigma: &Operator) -> Result<f64> {
    if rho.dim() != sigma.dim() {
        return Err(Error::DimensionMismatch("fidelity of operators of different size".into()));
    }
    let a = sqrt_psd(rho)?;
    let b = sqrt_psd(sigma)?;
    let root: f64 = (a.matrix() * b.matrix()).singular_values().iter().sum();
    Ok(root * root)
}

/// `<v|M|v>` for a Hermitian `M`, real part.
pub fn expectation(m: &Matrix, v: &DVector<C64>) -> f64 {
    (v.adjoint() * m * v)[(0, 0)].re
}
