//! Quantum de Finetti construction on the symmetric subspace.
//!
//! A symmetric extension `ω` on `A ⊗ B^{⊗n}` is held in Dicke coordinates
//! over an effective site basis, either as a mixture of vectors or as a
//! product ensemble `Σ_j A_j ⊗ (c_j c_j†)^{⊗n}`. Mixed extensions that are not
//! supported on `A ⊗ Sym^n(B)` are purified pairwise, doubling the site to
//! `B ⊗ B̄`. The coherent-state POVM `D·(φ_g φ_g†)^{⊗n}` is never formed:
//! measure elements are contractions against the coordinates of `φ_g^{⊗n}`.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{haar_vector, seeded};
use crate::tensor::{
    c, eigh, mixture_partial_trace, multinomial_sqrt, occupations, permutations, product_dicke_coords, psd_eigh,
    sym_dim, trace_norm_matrix, Factorization, Matrix, Operator, Vector, C64,
};

/// Largest eigenvalue at or above `1 - PURE_TOL` selects the pure-state branch.
pub const PURE_TOL: f64 = 1e-10;
/// Eigenvalues below this are outside the support.
const SUPPORT_TOL: f64 = 1e-10;
/// Maximum entrywise deviation under a site transposition.
const SYMMETRY_TOL: f64 = 1e-8;
/// Squared norm that may be lost when projecting onto the symmetric subspace.
const SYM_LOSS_TOL: f64 = 1e-9;
/// Above this symmetric-subspace dimension the resolution residual is a certified upper bound.
pub const EXACT_RESIDUAL_MAX_DIM: usize = 600;

#[derive(Clone, Copy, Debug)]
pub struct ExtensionOptions {
    /// Restrict the site to the support of its one-site marginal.
    pub reduce_support: bool,
}

impl Default for ExtensionOptions {
    fn default() -> Self {
        Self { reduce_support: true }
    }
}

/// Factors of site `i` (1-based): every base label suffixed with `i`.
pub fn site_factors(site: &Factorization, i: usize) -> Vec<(String, usize)> {
    site.factors().iter().map(|(l, d)| (format!("{l}{i}"), *d)).collect()
}

fn bar(factors: &[(String, usize)]) -> Vec<(String, usize)> {
    factors.iter().map(|(l, d)| (format!("{l}bar"), *d)).collect()
}

/// `A, site_1, ..., site_n` with the given site template.
pub fn extension_shape(d_a: usize, site: &Factorization, n: usize) -> Factorization {
    let mut f = vec![("A".to_string(), d_a)];
    for i in 1..=n {
        f.extend(site_factors(site, i));
    }
    Factorization::new(f).expect("distinct labels")
}

fn doubled_shape(d_a: usize, a_doubled: bool, site: &Factorization, site_doubled: bool, n: usize) -> Factorization {
    let mut f = vec![("A".to_string(), d_a)];
    if a_doubled {
        f.push(("Abar".to_string(), d_a));
    }
    for i in 1..=n {
        let s = site_factors(site, i);
        if site_doubled {
            f.extend(s.iter().cloned());
            f.extend(bar(&s));
        } else {
            f.extend(s);
        }
    }
    Factorization::new(f).expect("distinct labels")
}

#[derive(Clone, Debug)]
enum Body {
    /// `(p_c, C_c)`: mixture weight and `d_A' x D` coefficients in the Dicke basis.
    Vectors(Vec<(f64, Matrix)>),
    /// `(A_j, e_j)`: operator on `A` and a unit site vector in effective coordinates.
    Products(Vec<(Matrix, Vector)>),
}

/// Permutation-symmetric state on `A' ⊗ B'^{⊗n}`, possibly purified.
#[derive(Clone, Debug)]
pub struct SymmetricExtension {
    d_a: usize,
    a_doubled: bool,
    site: Factorization,
    site_doubled: bool,
    n: usize,
    /// `d_B' x d_eff` with orthonormal columns.
    basis: Matrix,
    /// Support dimension of the physical one-site marginal: the `d` of `4d²k/n`.
    d_bound: usize,
    body: Body,
}

impl SymmetricExtension {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d_a(&self) -> usize {
        self.d_a
    }

    pub fn site(&self) -> &Factorization {
        &self.site
    }

    /// Dimension of the effective site space the grid lives on.
    pub fn d_eff(&self) -> usize {
        self.basis.ncols()
    }

    /// Local dimension entering the bound `4d²k/n` (undoubled, after support reduction).
    pub fn bound_dim(&self) -> usize {
        self.d_bound
    }

    pub fn purified(&self) -> bool {
        self.site_doubled
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    pub fn is_product_ensemble(&self) -> bool {
        matches!(self.body, Body::Products(_))
    }

    fn a_ext(&self) -> usize {
        if self.a_doubled {
            self.d_a * self.d_a
        } else {
            self.d_a
        }
    }

    /// Physical site vector `W e` reduced to a state on the undoubled site.
    fn site_state(&self, e: &Vector) -> Matrix {
        let phys = &self.basis * e;
        let outer = &phys * phys.adjoint();
        if self.site_doubled {
            let d = self.site.total_dim();
            Matrix::from_fn(d, d, |i, j| (0..d).map(|t| outer[(i * d + t, j * d + t)]).sum())
        } else {
            outer
        }
    }

    /// Reduced state on `A, site_1..site_k` (physical, undoubled factors).
    pub fn reduced_state(&self, k: usize) -> Result<Operator> {
        if k > self.n {
            return Err(Error::DimensionMismatch(format!("k = {k} exceeds n = {}", self.n)));
        }
        let target = extension_shape(self.d_a, &self.site, k);
        match &self.body {
            Body::Products(terms) => {
                let mut acc = Matrix::zeros(target.total_dim(), target.total_dim());
                for (a, e) in terms {
                    let s = self.site_state(e);
                    let mut m = a.clone();
                    for _ in 0..k {
                        m = m.kronecker(&s);
                    }
                    acc += m;
                }
                Operator::new(acc, target)
            }
            Body::Vectors(_) => {
                let shape = doubled_shape(self.d_a, self.a_doubled, &self.site, self.site_doubled, self.n);
                let vecs = self.physical_vectors()?;
                let comps: Vec<(f64, &Vector)> = vecs.iter().map(|(p, v)| (*p, v)).collect();
                let keep = target.labels();
                mixture_partial_trace(&comps, &shape, &keep)
            }
        }
    }

    /// Components expanded to full vectors on the (possibly doubled) physical space.
    fn physical_vectors(&self) -> Result<Vec<(f64, Vector)>> {
        let Body::Vectors(comps) = &self.body else {
            return Err(Error::DimensionMismatch("product ensembles have no vector form".into()));
        };
        let e = self.d_eff();
        let occ = occupations(self.n, e);
        let index = occupation_index(&occ);
        let strings = e.pow(self.n as u32);
        let mut out = Vec::with_capacity(comps.len());
        for (p, coeffs) in comps {
            let a = coeffs.nrows();
            let mut u = Vector::zeros(a * strings);
            let mut counts = vec![0usize; e];
            for s in 0..strings {
                let m = string_occupation(s, self.n, e, &mut counts);
                let col = index[m];
                let scale = 1.0 / multinomial_sqrt(m);
                for r in 0..a {
                    u[r * strings + s] = coeffs[(r, col)] * scale;
                }
            }
            out.push((*p, apply_sites(&u, a, self.n, &self.basis)));
        }
        Ok(out)
    }
}

fn occupation_index(occ: &[Vec<usize>]) -> HashMap<Vec<usize>, usize> {
    occ.iter().cloned().enumerate().map(|(i, m)| (m, i)).collect()
}

fn string_occupation(mut s: usize, n: usize, d: usize, counts: &mut [usize]) -> &[usize] {
    counts.iter_mut().for_each(|x| *x = 0);
    for _ in 0..n {
        counts[s % d] += 1;
        s /= d;
    }
    counts
}

/// `(𝟙_left ⊗ M^{⊗n}) v` where `v` has `left` leading entries per site string.
fn apply_sites(v: &Vector, left: usize, n: usize, m: &Matrix) -> Vector {
    let (d_out, d_in) = (m.nrows(), m.ncols());
    let mut cur = v.clone();
    for k in 0..n {
        // layout: left, d_out^k done sites, current site d_in, d_in^(n-k-1) remaining
        let l = left * d_out.pow(k as u32);
        let r = d_in.pow((n - k - 1) as u32);
        let mut next = Vector::zeros(l * d_out * r);
        for a in 0..l {
            for s in 0..d_in {
                for j in 0..d_out {
                    let w = m[(j, s)];
                    if w == C64::new(0.0, 0.0) {
                        continue;
                    }
                    for t in 0..r {
                        next[(a * d_out + j) * r + t] += w * cur[(a * d_in + s) * r + t];
                    }
                }
            }
        }
        cur = next;
    }
    cur
}

/// Dicke coordinates (`left x D`) of `(𝟙 ⊗ W†^{⊗n}) v` and the fraction of `‖v‖²` they retain.
fn dicke_coordinates(v: &Vector, left: usize, n: usize, basis: &Matrix) -> (Matrix, f64) {
    let e = basis.ncols();
    let u = apply_sites(v, left, n, &basis.adjoint());
    let occ = occupations(n, e);
    let index = occupation_index(&occ);
    let strings = e.pow(n as u32);
    let mut coords = Matrix::zeros(left, occ.len());
    let mut counts = vec![0usize; e];
    for s in 0..strings {
        let m = string_occupation(s, n, e, &mut counts);
        let col = index[m];
        let scale = 1.0 / multinomial_sqrt(m);
        for r in 0..left {
            coords[(r, col)] += u[r * strings + s] * scale;
        }
    }
    let total = v.norm_squared();
    let kept = coords.norm_squared();
    (coords, if total > 0.0 { kept / total } else { 1.0 })
}

/// Orthonormal basis of the support of `rho` (or the full space), obtained by
/// Gram–Schmidt on the support projector applied to the standard basis in order.
fn support_basis(rho: &Matrix, reduce: bool) -> Result<Matrix> {
    let d = rho.nrows();
    if !reduce {
        return Ok(Matrix::identity(d, d));
    }
    let (vals, vecs) = eigh(rho)?;
    let scale = vals.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    let mut proj = Matrix::zeros(d, d);
    for (k, &v) in vals.iter().enumerate() {
        if v > SUPPORT_TOL * scale {
            let col = vecs.column(k);
            proj += col * col.adjoint();
        }
    }
    let mut cols: Vec<Vector> = Vec::new();
    for k in 0..d {
        let mut v: Vector = proj.column(k).into_owned();
        for q in &cols {
            let overlap = q.dotc(&v);
            v -= q * overlap;
        }
        let norm = v.norm();
        if norm > 1e-8 {
            cols.push(v / c(norm));
        }
    }
    if cols.is_empty() {
        return Err(Error::DimensionMismatch("extension has empty support".into()));
    }
    Ok(Matrix::from_columns(&cols))
}

fn support_rank(rho: &Matrix, reduce: bool) -> Result<usize> {
    let tr = rho.trace().re;
    Ok(support_basis(&(rho / c(tr)), reduce)?.ncols())
}

fn check_symmetric(omega: &Operator, site: &Factorization, n: usize) -> Result<()> {
    let sites: Vec<Vec<String>> =
        (1..=n).map(|i| site_factors(site, i).into_iter().map(|(l, _)| l).collect()).collect();
    // adjacent transpositions generate S_n
    for k in 0..n.saturating_sub(1) {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.swap(k, k + 1);
        let dev = omega.permute_sites(&sites, &perm)?.max_abs_diff(omega);
        if dev > SYMMETRY_TOL {
            return Err(Error::AsymmetricInput(dev));
        }
    }
    Ok(())
}

/// Symmetric extension from a dense state on `A ⊗ site^{⊗n}` (factor order
/// `A, site_1, ..., site_n`).
///
/// Branches: pure (largest eigenvalue ≥ 1 − 1e-10) and Bose-symmetric; mixed but
/// supported on `A ⊗ Sym^n`, kept as its spectral mixture; otherwise purified
/// as `Σ_k sqrt(ω)|k> ⊗ |k>` with `(B_i, B̄_i)` grouped per site.
pub fn purify_extension(
    omega: &Matrix,
    d_a: usize,
    site: &Factorization,
    n: usize,
    opts: ExtensionOptions,
) -> Result<SymmetricExtension> {
    let shape = extension_shape(d_a, site, n);
    let op = Operator::new(omega.clone(), shape.clone())?;
    check_symmetric(&op, site, n)?;
    let (vals, vecs) = psd_eigh(&op)?;
    let trace: f64 = vals.iter().sum();
    let top = *vals.last().expect("nonempty");
    let d_site = site.total_dim();

    let comps: Vec<(f64, Vector)> = if top >= (1.0 - PURE_TOL) * trace {
        vec![(1.0, vecs.column(vals.len() - 1).into_owned())]
    } else {
        vals.iter()
            .enumerate()
            .filter(|(_, &v)| v > SUPPORT_TOL * trace)
            .map(|(k, &v)| (v / trace, vecs.column(k).into_owned()))
            .collect()
    };
    if let Some(ext) = symmetric_mixture(&comps, d_a, site, n, opts)? {
        return Ok(ext);
    }

    // purification: entry (k, k̄) of sqrt(ω) lands at the paired index
    let root = crate::tensor::sqrt_psd(&op)?;
    let root = root.matrix();
    let dim = shape.total_dim();
    let pair = d_site * d_site;
    let mut psi = Vector::zeros(dim * dim);
    let mut digits = vec![0usize; n];
    let mut digits_bar = vec![0usize; n];
    let decode = |mut k: usize, out: &mut [usize]| -> usize {
        for i in (0..n).rev() {
            out[i] = k % d_site;
            k /= d_site;
        }
        k
    };
    for k in 0..dim {
        let a = decode(k, &mut digits);
        for kb in 0..dim {
            let z = root[(k, kb)];
            if z == C64::new(0.0, 0.0) {
                continue;
            }
            let ab = decode(kb, &mut digits_bar);
            let mut idx = a * d_a + ab;
            for i in 0..n {
                idx = idx * pair + digits[i] * d_site + digits_bar[i];
            }
            psi[idx] = z;
        }
    }
    let norm = psi.norm();
    psi /= c(norm);
    let full = doubled_shape(d_a, true, site, true, n);
    let mut keep: Vec<String> = site_factors(site, 1).into_iter().map(|(l, _)| l).collect();
    keep.extend(bar(&site_factors(site, 1)).into_iter().map(|(l, _)| l));
    let keep: Vec<&str> = keep.iter().map(String::as_str).collect();
    let marginal = mixture_partial_trace(&[(1.0, &psi)], &full, &keep)?;
    let basis = support_basis(marginal.matrix(), opts.reduce_support)?;
    let (coords, kept) = dicke_coordinates(&psi, d_a * d_a, n, &basis);
    if kept < 1.0 - SYM_LOSS_TOL {
        return Err(Error::AsymmetricInput(1.0 - kept));
    }
    let site_keep: Vec<String> = site_factors(site, 1).into_iter().map(|(l, _)| l).collect();
    let site_keep: Vec<&str> = site_keep.iter().map(String::as_str).collect();
    let physical = op.partial_trace(&site_keep)?;
    let d_bound = support_rank(physical.matrix(), opts.reduce_support)?;
    Ok(SymmetricExtension {
        d_a,
        a_doubled: true,
        site: site.clone(),
        site_doubled: true,
        n,
        basis,
        d_bound,
        body: Body::Vectors(vec![(1.0, coords)]),
    })
}

/// The mixture as an extension if every component is Bose-symmetric.
fn symmetric_mixture(
    comps: &[(f64, Vector)],
    d_a: usize,
    site: &Factorization,
    n: usize,
    opts: ExtensionOptions,
) -> Result<Option<SymmetricExtension>> {
    let shape = extension_shape(d_a, site, n);
    let keep: Vec<String> = site_factors(site, 1).into_iter().map(|(l, _)| l).collect();
    let keep: Vec<&str> = keep.iter().map(String::as_str).collect();
    let refs: Vec<(f64, &Vector)> = comps.iter().map(|(p, v)| (*p, v)).collect();
    let marginal = mixture_partial_trace(&refs, &shape, &keep)?;
    let basis = support_basis(marginal.matrix(), opts.reduce_support)?;
    let mut body = Vec::with_capacity(comps.len());
    for (p, v) in comps {
        let (coords, kept) = dicke_coordinates(v, d_a, n, &basis);
        if kept < 1.0 - SYM_LOSS_TOL {
            return Ok(None);
        }
        body.push((*p, coords));
    }
    Ok(Some(SymmetricExtension {
        d_a,
        a_doubled: false,
        site: site.clone(),
        site_doubled: false,
        n,
        d_bound: basis.ncols(),
        basis,
        body: Body::Vectors(body),
    }))
}

/// Extension `Σ_j A_j ⊗ φ_j^{⊗n}` given as a product ensemble. Mixed `φ_j`
/// are purified individually (`vec(sqrt(φ_j))` on `B ⊗ B̄`), in which case every
/// term is carried on the doubled site.
pub fn product_extension(
    terms: &[(Matrix, Operator)],
    n: usize,
    opts: ExtensionOptions,
) -> Result<SymmetricExtension> {
    let (first_a, first_phi) = terms.first().ok_or_else(|| Error::DimensionMismatch("empty ensemble".into()))?;
    let d_a = first_a.nrows();
    let site = first_phi.shape().clone();
    let d_site = site.total_dim();
    let mut spectra = Vec::with_capacity(terms.len());
    for (a, phi) in terms {
        if a.nrows() != d_a || a.ncols() != d_a || phi.shape().dims() != site.dims() {
            return Err(Error::DimensionMismatch("ensemble terms differ in shape".into()));
        }
        psd_eigh(&Operator::on("A", a.clone())?)?;
        spectra.push(psd_eigh(phi)?);
    }
    let doubled = spectra.iter().any(|(vals, _)| {
        let tr: f64 = vals.iter().sum();
        *vals.last().expect("nonempty") < (1.0 - PURE_TOL) * tr
    });
    let mut vectors = Vec::with_capacity(terms.len());
    for ((a, _), (vals, vecs)) in terms.iter().zip(&spectra) {
        let tr: f64 = vals.iter().sum();
        let v = if doubled {
            // Σ_k sqrt(φ)|k> ⊗ |k>
            let mut v = Vector::zeros(d_site * d_site);
            for (k, &lam) in vals.iter().enumerate() {
                if lam <= 0.0 {
                    continue;
                }
                let col = vecs.column(k);
                let coeff = c((lam / tr).sqrt());
                for i in 0..d_site {
                    for j in 0..d_site {
                        v[i * d_site + j] += coeff * col[i] * col[j].conj();
                    }
                }
            }
            v
        } else {
            vecs.column(vals.len() - 1).into_owned()
        };
        vectors.push((a.clone(), v));
    }
    let mut physical = Matrix::zeros(d_site, d_site);
    for (a, phi) in terms {
        physical += phi.matrix() * a.trace();
    }
    let d_bound = support_rank(&physical, opts.reduce_support)?;
    let site_dim = vectors[0].1.len();
    let mut marginal = Matrix::zeros(site_dim, site_dim);
    for (a, v) in &vectors {
        marginal += (v * v.adjoint()) * a.trace();
    }
    let tr = marginal.trace().re;
    let basis = support_basis(&(marginal / c(tr)), opts.reduce_support)?;
    let body = vectors
        .into_iter()
        .map(|(a, v)| {
            let e = basis.adjoint() * &v;
            (a, e)
        })
        .collect();
    Ok(SymmetricExtension {
        d_a,
        a_doubled: false,
        site,
        site_doubled: doubled,
        n,
        basis,
        d_bound,
        body: Body::Products(body),
    })
}

/// How grid nodes are chosen.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GridSpec {
    /// `count` Haar-random unit vectors from a seeded stream, equal weights.
    Haar { seed: u64, count: usize },
    /// Exact qubit designs with equal weights.
    Design,
}

impl FromStr for GridSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "design" {
            return Ok(GridSpec::Design);
        }
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["haar", seed, count] => {
                let seed = seed.parse().map_err(|_| Error::Config(format!("bad grid seed in `{s}`")))?;
                let count = count.parse().map_err(|_| Error::Config(format!("bad grid count in `{s}`")))?;
                Ok(GridSpec::Haar { seed, count })
            }
            _ => Err(Error::Config(format!("grid must be `design` or `haar:SEED:COUNT`, got `{s}`"))),
        }
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridSpec::Haar { seed, count } => write!(f, "haar:{seed}:{count}"),
            GridSpec::Design => write!(f, "design"),
        }
    }
}

/// Weighted unit vectors whose `n`-th tensor powers resolve the symmetric projector.
#[derive(Clone, Debug)]
pub struct MeasureGrid {
    spec: GridSpec,
    d_eff: usize,
    n: usize,
    points: Vec<Vector>,
    weights: Vec<f64>,
    residual: f64,
}

impl MeasureGrid {
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn d_eff(&self) -> usize {
        self.d_eff
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn points(&self) -> &[Vector] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `‖D Σ_g w_g (φ_g φ_g†)^{⊗n} − P_sym‖₁` (or a certified upper bound on it
    /// when `D` exceeds [`EXACT_RESIDUAL_MAX_DIM`]).
    pub fn resolution_residual(&self) -> f64 {
        self.residual
    }

    /// The same nodes with reordered entries; used to check order independence.
    pub fn permuted(&self, order: &[usize]) -> MeasureGrid {
        MeasureGrid {
            points: order.iter().map(|&i| self.points[i].clone()).collect(),
            weights: order.iter().map(|&i| self.weights[i]).collect(),
            ..self.clone()
        }
    }
}

/// Grid of coherent states on `C^{d_eff}` for `n` copies.
pub fn build_grid(d_eff: usize, n: usize, spec: &GridSpec) -> Result<MeasureGrid> {
    let needed = sym_dim(n, d_eff);
    let points = match spec {
        GridSpec::Haar { seed, count } => {
            if *count < needed {
                return Err(Error::GridTooSmall { count: *count, needed });
            }
            let mut rng = seeded(*seed);
            (0..*count).map(|_| haar_vector(&mut rng, d_eff)).collect()
        }
        GridSpec::Design => design_points(d_eff, n)?,
    };
    let weights = vec![1.0 / points.len() as f64; points.len()];
    let residual = resolution_residual(&points, &weights, n);
    Ok(MeasureGrid { spec: spec.clone(), d_eff, n, points, weights, residual })
}

/// Qubit state with Bloch vector `(x, y, z)` (unit length).
fn bloch_state(x: f64, y: f64, z: f64) -> Vector {
    let theta = z.clamp(-1.0, 1.0).acos();
    let phi = y.atan2(x);
    Vector::from_vec(vec![c((theta / 2.0).cos()), C64::from_polar((theta / 2.0).sin(), phi)])
}

/// Equal-weight nodes of an exact `n`-design: the octahedron (3-design) up to
/// three copies, the icosahedron (5-design) up to five.
fn design_points(d_eff: usize, n: usize) -> Result<Vec<Vector>> {
    match d_eff {
        1 => Ok(vec![Vector::from_element(1, c(1.0))]),
        2 if n <= 3 => {
            let axes = [(1.0, 0.0, 0.0), (-1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, -1.0, 0.0), (0.0, 0.0, 1.0), (0.0, 0.0, -1.0)];
            Ok(axes.iter().map(|&(x, y, z)| bloch_state(x, y, z)).collect())
        }
        2 if n <= 5 => {
            let g = (1.0 + 5f64.sqrt()) / 2.0;
            let norm = (1.0 + g * g).sqrt();
            let mut pts = Vec::with_capacity(12);
            for s1 in [1.0, -1.0] {
                for s2 in [1.0, -1.0] {
                    let (a, b) = (s1, s2 * g);
                    pts.push((0.0, a, b));
                    pts.push((a, b, 0.0));
                    pts.push((b, 0.0, a));
                }
            }
            Ok(pts.iter().map(|&(x, y, z)| bloch_state(x / norm, y / norm, z / norm)).collect())
        }
        _ => Err(Error::DesignUnavailable { d: d_eff, n }),
    }
}

fn resolution_residual(points: &[Vector], weights: &[f64], n: usize) -> f64 {
    let d_eff = points[0].len();
    let dim = sym_dim(n, d_eff);
    let df = dim as f64;
    if dim <= EXACT_RESIDUAL_MAX_DIM {
        let cols: Vec<Vector> = points
            .par_iter()
            .zip(weights)
            .map(|(p, &w)| product_dicke_coords(p, n) * c((w * df).sqrt()))
            .collect();
        let t = Matrix::from_columns(&cols);
        let frame = &t * t.adjoint();
        return trace_norm_matrix(&(frame - Matrix::identity(dim, dim)));
    }
    // ‖F − 𝟙‖₁ ≤ sqrt(D) ‖F − 𝟙‖_F with ‖F − 𝟙‖_F² = D² Σ_gh w_g w_h |<φ_g|φ_h>|^{2n} − D
    let gram: f64 = points
        .par_iter()
        .zip(weights)
        .map(|(p, &wp)| {
            points.iter().zip(weights).map(|(q, &wq)| wp * wq * p.dotc(q).norm_sqr().powi(n as i32)).sum::<f64>()
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    let frob2 = (df * df * gram - df).max(0.0);
    df.sqrt() * frob2.sqrt()
}

/// One grid node's share: `M_g` on `A` and the factor state `φ_g` on the site.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ApproxItem {
    pub m: Operator,
    pub phi: Operator,
}

/// `Σ_j M_j ⊗ φ_j^{⊗k}` approximation of the `k`-site marginals of an extension.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DeFinettiApprox {
    pub items: Vec<ApproxItem>,
    pub source_n: usize,
    pub d_eff: usize,
    pub grid_residual: f64,
}

impl DeFinettiApprox {
    pub fn d_a(&self) -> usize {
        self.items[0].m.dim()
    }

    pub fn site(&self) -> &Factorization {
        self.items[0].phi.shape()
    }

    /// `Σ_j M_j`.
    pub fn total_measure(&self) -> Matrix {
        let d = self.d_a();
        self.items.iter().fold(Matrix::zeros(d, d), |acc, it| acc + it.m.matrix())
    }

    /// `Σ_j M_j ⊗ φ_j^{⊗k}` on `A, site_1..site_k`.
    pub fn reconstruct(&self, k: usize) -> Result<Operator> {
        let shape = extension_shape(self.d_a(), self.site(), k);
        let dim = shape.total_dim();
        let mut acc = Matrix::zeros(dim, dim);
        for it in &self.items {
            let mut m = it.m.matrix().clone();
            for _ in 0..k {
                m = m.kronecker(it.phi.matrix());
            }
            acc += m;
        }
        Operator::new(acc, shape)
    }
}

/// Operator-valued measure `M_g = w_g D tr_{B'}[(𝟙 ⊗ (φ_g φ_g†)^{⊗n}) Ψ]` and the
/// factor states, reduced over `Ā` and `B̄` when the extension is purified.
pub fn extract_measure(ext: &SymmetricExtension, grid: &MeasureGrid) -> Result<DeFinettiApprox> {
    if grid.d_eff != ext.d_eff() || grid.n != ext.n {
        return Err(Error::DimensionMismatch(format!(
            "grid built for d_eff = {}, n = {} but extension has d_eff = {}, n = {}",
            grid.d_eff,
            grid.n,
            ext.d_eff(),
            ext.n
        )));
    }
    let dim = sym_dim(ext.n, ext.d_eff()) as f64;
    let a_ext = ext.a_ext();
    let n = ext.n;
    let items: Vec<Result<ApproxItem>> = grid
        .points
        .par_iter()
        .zip(&grid.weights)
        .map(|(phi, &w)| {
            let mut m = Matrix::zeros(a_ext, a_ext);
            match &ext.body {
                Body::Vectors(comps) => {
                    let t = product_dicke_coords(phi, n).conjugate();
                    for (p, coeffs) in comps {
                        let v = coeffs * &t;
                        m += (&v * v.adjoint()) * c(*p);
                    }
                }
                Body::Products(terms) => {
                    for (a, e) in terms {
                        m += a * c(phi.dotc(e).norm_sqr().powi(n as i32));
                    }
                }
            }
            m *= c(w * dim);
            if ext.a_doubled {
                let d = ext.d_a;
                m = Matrix::from_fn(d, d, |i, j| (0..d).map(|t| m[(i * d + t, j * d + t)]).sum());
            }
            Ok(ApproxItem { m: Operator::on("A", m)?, phi: Operator::new(ext.site_state(phi), ext.site.clone())? })
        })
        .collect();
    Ok(DeFinettiApprox {
        items: items.into_iter().collect::<Result<Vec<_>>>()?,
        source_n: ext.n,
        d_eff: ext.d_eff(),
        grid_residual: grid.residual,
    })
}

/// `Δ_k = ‖ω_k − Σ_j M_j ⊗ φ_j^{⊗k}‖₁`.
pub fn approx_error(omega_k: &Operator, approx: &DeFinettiApprox, k: usize) -> Result<f64> {
    if k > approx.source_n {
        return Err(Error::DimensionMismatch(format!("k = {k} exceeds n = {}", approx.source_n)));
    }
    let recon = approx.reconstruct(k)?;
    if recon.shape().dims() != omega_k.shape().dims() {
        return Err(Error::DimensionMismatch("marginal and approximation differ in shape".into()));
    }
    Ok(trace_norm_matrix(&(omega_k.matrix() - recon.matrix())))
}

/// The de Finetti bound `4 d² k / n`.
pub fn definetti_bound(d: usize, k: usize, n: usize) -> f64 {
    4.0 * (d * d) as f64 * k as f64 / n as f64
}

/// Average of a dense state on `A ⊗ site^{⊗n}` over all site permutations.
pub fn symmetrize_state(omega: &Operator, site: &Factorization, n: usize) -> Result<Operator> {
    if n > crate::channels::MAX_SYMMETRIZE_N {
        return Err(Error::TooManyInstances(n));
    }
    let sites: Vec<Vec<String>> =
        (1..=n).map(|i| site_factors(site, i).into_iter().map(|(l, _)| l).collect()).collect();
    let perms = permutations(n);
    let mut acc = Matrix::zeros(omega.dim(), omega.dim());
    for p in &perms {
        acc += omega.permute_sites(&sites, p)?.matrix();
    }
    Operator::new(acc / c(perms.len() as f64), omega.shape().clone())
}

#[derive(Serialize, Deserialize)]
struct GridJson {
    mode: String,
    seed: Option<u64>,
    count: usize,
    d_eff: usize,
    n: usize,
    /// One `[re, im]` pair per amplitude.
    vectors: Vec<Vec<[f64; 2]>>,
    weights: Vec<f64>,
    residual: f64,
}

impl Serialize for MeasureGrid {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let (mode, seed) = match self.spec {
            GridSpec::Haar { seed, .. } => ("haar", Some(seed)),
            GridSpec::Design => ("design", None),
        };
        GridJson {
            mode: mode.into(),
            seed,
            count: self.points.len(),
            d_eff: self.d_eff,
            n: self.n,
            vectors: self.points.iter().map(|v| v.iter().map(|z| [z.re, z.im]).collect()).collect(),
            weights: self.weights.clone(),
            residual: self.residual,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for MeasureGrid {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let g = GridJson::deserialize(d)?;
        let spec = match (g.mode.as_str(), g.seed) {
            ("haar", Some(seed)) => GridSpec::Haar { seed, count: g.count },
            ("design", _) => GridSpec::Design,
            _ => return Err(D::Error::custom("grid mode must be `haar` (with seed) or `design`")),
        };
        if g.vectors.len() != g.count || g.weights.len() != g.count {
            return Err(D::Error::custom("grid count does not match vectors/weights"));
        }
        let points = g
            .vectors
            .iter()
            .map(|v| Vector::from_iterator(v.len(), v.iter().map(|[re, im]| C64::new(*re, *im))))
            .collect();
        Ok(MeasureGrid { spec, d_eff: g.d_eff, n: g.n, points, weights: g.weights, residual: g.residual })
    }
}

#[cfg(test)]
mod tests;
