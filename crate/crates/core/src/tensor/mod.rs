//! Dense complex operators on labelled tensor-product spaces.
//!
//! An [`Operator`] is a square column-major complex matrix together with a
//! [`Factorization`] naming each tensor factor. Flat indices follow the
//! Kronecker convention: the first factor is the most significant digit.
//!
//! Register labels used across the crate: `A` (training register), `X1..Xn`
//! (test inputs), `Y1..Yn` (outputs), `Yp1..Ypn` (reference labels).

mod spectral;
mod symmetric;

pub use spectral::*;
pub use symmetric::*;

use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type Matrix = DMatrix<C64>;
pub type Vector = DVector<C64>;

/// Largest operator side length handled densely.
pub const DENSE_LIMIT: usize = 4096;

pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Ordered list of labelled tensor factors.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Factorization {
    factors: Vec<(String, usize)>,
}

impl Factorization {
    pub fn new<I, S>(factors: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, usize)>,
        S: Into<String>,
    {
        let mut out: Vec<(String, usize)> = Vec::new();
        for (label, dim) in factors {
            let label = label.into();
            if dim == 0 {
                return Err(Error::DimensionMismatch(format!("factor `{label}` has dimension 0")));
            }
            if out.iter().any(|(l, _)| *l == label) {
                return Err(Error::LabelCollision(label));
            }
            out.push((label, dim));
        }
        Ok(Self { factors: out })
    }

    pub fn single(label: &str, dim: usize) -> Self {
        Self::new([(label, dim)]).expect("single factor")
    }

    pub fn factors(&self) -> &[(String, usize)] {
        &self.factors
    }

    pub fn labels(&self) -> Vec<&str> {
        self.factors.iter().map(|(l, _)| l.as_str()).collect()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|(_, d)| *d).collect()
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn total_dim(&self) -> usize {
        self.factors.iter().map(|(_, d)| *d).product()
    }

    pub fn position(&self, label: &str) -> Option<usize> {
        self.factors.iter().position(|(l, _)| l == label)
    }

    pub fn contains(&self, label: &str) -> bool {
        self.position(label).is_some()
    }

    pub fn dim_of(&self, label: &str) -> Result<usize> {
        self.position(label)
            .map(|p| self.factors[p].1)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn concat(&self, other: &Factorization) -> Result<Self> {
        Self::new(self.factors.iter().chain(other.factors.iter()).cloned())
    }

    fn strides(&self) -> Vec<usize> {
        let dims = self.dims();
        let mut strides = vec![1; dims.len()];
        for k in (0..dims.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * dims[k + 1];
        }
        strides
    }

    fn positions(&self, labels: &[&str]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(labels.len());
        for l in labels {
            let p = self.position(l).ok_or_else(|| Error::UnknownLabel(l.to_string()))?;
            if out.contains(&p) {
                return Err(Error::LabelCollision(l.to_string()));
            }
            out.push(p);
        }
        Ok(out)
    }

    /// Flat offsets of every multi-index over `positions`, first position most significant.
    fn offsets(&self, positions: &[usize]) -> Vec<usize> {
        let dims = self.dims();
        let strides = self.strides();
        let mut out = vec![0usize];
        for &p in positions {
            let mut next = Vec::with_capacity(out.len() * dims[p]);
            for &o in &out {
                for i in 0..dims[p] {
                    next.push(o + i * strides[p]);
                }
            }
            out = next;
        }
        out
    }

    fn complement(&self, positions: &[usize]) -> Vec<usize> {
        (0..self.len()).filter(|p| !positions.contains(p)).collect()
    }
}

/// Square complex matrix on a labelled tensor-product space.
#[derive(Clone, Debug)]
pub struct Operator {
    matrix: Matrix,
    shape: Factorization,
}

impl Operator {
    pub fn new(matrix: Matrix, shape: Factorization) -> Result<Self> {
        let dim = shape.total_dim();
        if matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(Error::DimensionMismatch(format!(
                "matrix is {}x{} but factorization has dimension {dim}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Self { matrix, shape })
    }

    /// Single-factor operator.
    pub fn on(label: &str, matrix: Matrix) -> Result<Self> {
        let d = matrix.nrows();
        Self::new(matrix, Factorization::single(label, d))
    }

    pub fn identity(shape: Factorization) -> Self {
        let d = shape.total_dim();
        Self { matrix: Matrix::identity(d, d), shape }
    }

    pub fn zeros(shape: Factorization) -> Self {
        let d = shape.total_dim();
        Self { matrix: Matrix::zeros(d, d), shape }
    }

    /// Maximally mixed state `𝟙/d` on `shape`.
    pub fn maximally_mixed(shape: Factorization) -> Self {
        let d = shape.total_dim() as f64;
        Self::identity(shape).scale(1.0 / d)
    }

    /// Rank-one projector `|v><v|`.
    pub fn projector(v: &Vector, shape: Factorization) -> Result<Self> {
        Self::new(v * v.adjoint(), shape)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> Matrix {
        self.matrix
    }

    pub fn shape(&self) -> &Factorization {
        &self.shape
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    pub fn adjoint(&self) -> Self {
        Self { matrix: self.matrix.adjoint(), shape: self.shape.clone() }
    }

    pub fn transpose(&self) -> Self {
        Self { matrix: self.matrix.transpose(), shape: self.shape.clone() }
    }

    pub fn scale(mut self, f: f64) -> Self {
        self.matrix *= c(f);
        self
    }

    pub fn scale_complex(mut self, f: C64) -> Self {
        self.matrix *= f;
        self
    }

    /// Largest entry of `(M - M†)/2` in absolute value.
    pub fn hermiticity_defect(&self) -> f64 {
        let m = &self.matrix;
        let n = m.nrows();
        let mut worst = 0.0f64;
        for j in 0..n {
            for i in 0..=j {
                let d = (m[(i, j)] - m[(j, i)].conj()).norm() * 0.5;
                worst = worst.max(d);
            }
        }
        worst
    }

    /// Largest absolute entry of `self - other`.
    pub fn max_abs_diff(&self, other: &Operator) -> f64 {
        assert_eq!(self.dim(), other.dim(), "dimension mismatch");
        self.matrix
            .iter()
            .zip(other.matrix.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Rename every factor, keeping dims and order.
    pub fn relabel(&self, labels: &[&str]) -> Result<Self> {
        if labels.len() != self.shape.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} factors",
                labels.len(),
                self.shape.len()
            )));
        }
        let shape = Factorization::new(labels.iter().zip(self.shape.dims()).map(|(l, d)| (*l, d)))?;
        Ok(Self { matrix: self.matrix.clone(), shape })
    }

    /// Kronecker product; the factorization is the concatenation.
    pub fn tensor(&self, other: &Operator) -> Result<Self> {
        let shape = self.shape.concat(&other.shape)?;
        Ok(Self { matrix: self.matrix.kronecker(&other.matrix), shape })
    }

    /// Trace over every factor not in `keep`. Kept factors retain their order.
    pub fn partial_trace(&self, keep: &[&str]) -> Result<Self> {
        let keep_pos = {
            let mut p = self.shape.positions(keep)?;
            p.sort_unstable();
            p
        };
        let traced = self.shape.complement(&keep_pos);
        let ko = self.shape.offsets(&keep_pos);
        let to = self.shape.offsets(&traced);
        let d = ko.len();
        let m = &self.matrix;
        let out = Matrix::from_fn(d, d, |r, col| {
            let (br, bc) = (ko[r], ko[col]);
            to.iter().map(|&t| m[(br + t, bc + t)]).sum()
        });
        let shape = Factorization::new(keep_pos.iter().map(|&p| self.shape.factors[p].clone()))?;
        Ok(Self { matrix: out, shape })
    }

    /// Trace over the listed factors.
    pub fn trace_out(&self, labels: &[&str]) -> Result<Self> {
        self.shape.positions(labels)?;
        let keep: Vec<&str> = self.shape.labels().into_iter().filter(|l| !labels.contains(l)).collect();
        self.partial_trace(&keep)
    }

    /// Transpose on the listed factors only.
    pub fn partial_transpose(&self, subset: &[&str]) -> Result<Self> {
        let sel = self.shape.positions(subset)?;
        let rest = self.shape.complement(&sel);
        let so = self.shape.offsets(&sel);
        let ro = self.shape.offsets(&rest);
        let d = self.dim();
        let m = &self.matrix;
        let mut out = Matrix::zeros(d, d);
        for &ra in &ro {
            for &rb in &ro {
                for &sc in &so {
                    for &sd in &so {
                        out[(ra + sd, rb + sc)] = m[(ra + sc, rb + sd)];
                    }
                }
            }
        }
        Ok(Self { matrix: out, shape: self.shape.clone() })
    }

    /// Reorder factors (contents move with their labels).
    pub fn reorder(&self, order: &[&str]) -> Result<Self> {
        if order.len() != self.shape.len() {
            return Err(Error::DimensionMismatch(format!(
                "reorder needs {} labels, got {}",
                self.shape.len(),
                order.len()
            )));
        }
        let pos = self.shape.positions(order)?;
        if pos.iter().enumerate().all(|(k, &p)| k == p) {
            return Ok(self.clone());
        }
        let map = self.shape.offsets(&pos);
        let m = &self.matrix;
        let d = self.dim();
        let out = Matrix::from_fn(d, d, |i, j| m[(map[i], map[j])]);
        let shape = Factorization::new(pos.iter().map(|&p| self.shape.factors[p].clone()))?;
        Ok(Self { matrix: out, shape })
    }

    /// `Π ω Π†` where `Π` moves the contents of site `k` onto site `perm[k]`.
    /// Each site is a group of labels; all sites must share dims.
    pub fn permute_sites(&self, sites: &[Vec<String>], perm: &[usize]) -> Result<Self> {
        assert_eq!(sites.len(), perm.len(), "one image per site");
        let mut inv = vec![0; perm.len()];
        for (k, &p) in perm.iter().enumerate() {
            inv[p] = k;
        }
        let labels = self.shape.labels();
        let mut source: Vec<&str> = Vec::with_capacity(labels.len());
        for l in &labels {
            let found = sites
                .iter()
                .enumerate()
                .find_map(|(s, group)| group.iter().position(|g| g == l).map(|j| (s, j)));
            match found {
                Some((s, j)) => source.push(sites[inv[s]][j].as_str()),
                None => source.push(l),
            }
        }
        let moved = self.reorder(&source)?;
        let mut out = moved.relabel(&labels)?;
        out.shape = self.shape.clone();
        Ok(out)
    }

    /// Tensor with identities on the factors of `target` missing from `self`,
    /// then reorder to `target`'s order.
    pub fn embed(&self, target: &Factorization) -> Result<Self> {
        let mut missing = Vec::new();
        for (l, d) in target.factors() {
            match self.shape.position(l) {
                Some(p) if self.shape.factors[p].1 != *d => {
                    return Err(Error::DimensionMismatch(format!("factor `{l}` dims differ")));
                }
                Some(_) => {}
                None => missing.push((l.clone(), *d)),
            }
        }
        if self.shape.len() + missing.len() != target.len() {
            return Err(Error::DimensionMismatch("operator has factors absent from target".into()));
        }
        let full = if missing.is_empty() {
            self.clone()
        } else {
            self.tensor(&Operator::identity(Factorization::new(missing)?))?
        };
        full.reorder(&target.labels())
    }

    pub fn mul_op(&self, other: &Operator) -> Self {
        assert_eq!(self.dim(), other.dim(), "dimension mismatch");
        Self { matrix: &self.matrix * &other.matrix, shape: self.shape.clone() }
    }

    /// `tr[self · other]` without forming the product.
    pub fn trace_product(&self, other: &Operator) -> C64 {
        assert_eq!(self.dim(), other.dim(), "dimension mismatch");
        let a = &self.matrix;
        let b = &other.matrix;
        let n = a.nrows();
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..n {
            for k in 0..n {
                acc += a[(i, k)] * b[(k, i)];
            }
        }
        acc
    }
}

impl Add for &Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        assert_eq!(self.shape.dims(), rhs.shape.dims(), "shape mismatch");
        Operator { matrix: &self.matrix + &rhs.matrix, shape: self.shape.clone() }
    }
}

impl Sub for &Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        assert_eq!(self.shape.dims(), rhs.shape.dims(), "shape mismatch");
        Operator { matrix: &self.matrix - &rhs.matrix, shape: self.shape.clone() }
    }
}

impl Mul for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        self.mul_op(rhs)
    }
}

/// Tensor product of a list of operators.
pub fn tensor_all(ops: &[Operator]) -> Result<Operator> {
    let mut it = ops.iter();
    let first = it.next().ok_or_else(|| Error::DimensionMismatch("empty tensor product".into()))?;
    it.try_fold(first.clone(), |acc, op| acc.tensor(op))
}

/// Reduced state `Σ_c p_c tr_{not keep}|v_c><v_c|` of a mixture of vectors on
/// `shape`, without forming any full density matrix. Kept factors retain their order.
pub fn mixture_partial_trace(components: &[(f64, &Vector)], shape: &Factorization, keep: &[&str]) -> Result<Operator> {
    let mut keep_pos = shape.positions(keep)?;
    keep_pos.sort_unstable();
    let traced = shape.complement(&keep_pos);
    let ko = shape.offsets(&keep_pos);
    let to = shape.offsets(&traced);
    let mut out = Matrix::zeros(ko.len(), ko.len());
    for (p, v) in components {
        if v.len() != shape.total_dim() {
            return Err(Error::DimensionMismatch("vector does not match its factorization".into()));
        }
        let m = Matrix::from_fn(ko.len(), to.len(), |i, j| v[ko[i] + to[j]]);
        out += (&m * m.adjoint()) * c(*p);
    }
    let reduced = Factorization::new(keep_pos.iter().map(|&p| shape.factors[p].clone()))?;
    Operator::new(out, reduced)
}

/// Kronecker power `v^{⊗n}` of a vector.
pub fn vector_power(v: &Vector, n: usize) -> Vector {
    let mut out = Vector::from_element(1, c(1.0));
    for _ in 0..n {
        out = out.kronecker(v);
    }
    out
}

#[derive(Serialize, Deserialize)]
struct OperatorJson {
    labels: Vec<String>,
    dims: Vec<usize>,
    re: Vec<Vec<f64>>,
    im: Vec<Vec<f64>>,
}

impl Serialize for Operator {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let n = self.dim();
        let rows = |f: fn(&C64) -> f64| -> Vec<Vec<f64>> {
            (0..n).map(|i| (0..n).map(|j| f(&self.matrix[(i, j)])).collect()).collect()
        };
        OperatorJson {
            labels: self.shape.labels().iter().map(|s| s.to_string()).collect(),
            dims: self.shape.dims(),
            re: rows(|z| z.re),
            im: rows(|z| z.im),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Operator {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = OperatorJson::deserialize(d)?;
        if raw.labels.len() != raw.dims.len() {
            return Err(D::Error::custom("labels and dims differ in length"));
        }
        let shape = Factorization::new(raw.labels.into_iter().zip(raw.dims)).map_err(D::Error::custom)?;
        let n = shape.total_dim();
        if raw.re.len() != n || raw.im.len() != n || raw.re.iter().chain(raw.im.iter()).any(|r| r.len() != n) {
            return Err(D::Error::custom("matrix rows do not match dims"));
        }
        let matrix = Matrix::from_fn(n, n, |i, j| C64::new(raw.re[i][j], raw.im[i][j]));
        Operator::new(matrix, shape).map_err(D::Error::custom)
    }
}
