//! Choi-matrix calculus for multi-instance channels `A ⊗ X^{⊗n} -> Y^{⊗n}`.
//!
//! Choi matrices use the trace-one convention `φ = (id ⊗ Φ)(Ω)` with a
//! normalized maximally entangled `Ω`, so every formula carries explicit
//! dimension factors. Factor order is always `A, X1, Y1, ..., Xn, Yn`.

mod dykstra;

pub use dykstra::{project_nonsignalling, random_nonsignalling_choi, DykstraParams};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{
    c, min_eigenvalue, permutations, trace_norm, Factorization, Matrix, Operator, Vector, C64,
};

pub fn x_label(i: usize) -> String {
    format!("X{i}")
}

pub fn y_label(i: usize) -> String {
    format!("Y{i}")
}

pub fn yp_label(i: usize) -> String {
    format!("Yp{i}")
}

/// Canonical factorization `A, X1, Y1, ..., Xn, Yn`.
pub fn choi_shape(d_a: usize, d_x: usize, d_y: usize, n: usize) -> Factorization {
    let mut f = vec![("A".to_string(), d_a)];
    for i in 1..=n {
        f.push((x_label(i), d_x));
        f.push((y_label(i), d_y));
    }
    Factorization::new(f).expect("canonical labels are distinct")
}

fn labels_of(prefix: fn(usize) -> String, range: std::ops::RangeInclusive<usize>) -> Vec<String> {
    range.map(prefix).collect()
}

fn as_strs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

/// Choi matrix of a (multi-instance) channel with its dimension metadata.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChoiChannel {
    omega: Operator,
    #[serde(rename = "d_A")]
    d_a: usize,
    #[serde(rename = "d_X")]
    d_x: usize,
    #[serde(rename = "d_Y")]
    d_y: usize,
    n: usize,
}

impl ChoiChannel {
    /// Wrap an operator already laid out as `A, X1, Y1, ...`. Labels are
    /// replaced by the canonical ones; dims must match.
    pub fn new(omega: Operator, d_a: usize, d_x: usize, d_y: usize, n: usize) -> Result<Self> {
        let shape = choi_shape(d_a, d_x, d_y, n);
        if omega.shape().dims() != shape.dims() {
            return Err(Error::DimensionMismatch(format!(
                "Choi operator dims {:?} do not match {:?}",
                omega.shape().dims(),
                shape.dims()
            )));
        }
        let omega = omega.relabel(&shape.labels())?;
        Ok(Self { omega, d_a, d_x, d_y, n })
    }

    pub fn from_matrix(m: Matrix, d_a: usize, d_x: usize, d_y: usize, n: usize) -> Result<Self> {
        let shape = choi_shape(d_a, d_x, d_y, n);
        Self::new(Operator::new(m, shape)?, d_a, d_x, d_y, n)
    }

    pub fn omega(&self) -> &Operator {
        &self.omega
    }

    pub fn d_a(&self) -> usize {
        self.d_a
    }

    pub fn d_x(&self) -> usize {
        self.d_x
    }

    pub fn d_y(&self) -> usize {
        self.d_y
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Input dimension `d_A d_X^n`.
    pub fn input_dim(&self) -> usize {
        self.d_a * self.d_x.pow(self.n as u32)
    }

    pub fn x_labels(&self) -> Vec<String> {
        labels_of(x_label, 1..=self.n)
    }

    pub fn y_labels(&self) -> Vec<String> {
        labels_of(y_label, 1..=self.n)
    }

    /// `(X_i, Y_i)` label pairs, one per instance.
    pub fn sites(&self) -> Vec<Vec<String>> {
        (1..=self.n).map(|i| vec![x_label(i), y_label(i)]).collect()
    }

    /// Single-instance Choi matrix as an operator on `X ⊗ Y` (only for `d_A = 1`, `n = 1`).
    pub fn single_xy(&self) -> Result<Operator> {
        if self.n != 1 || self.d_a != 1 {
            return Err(Error::DimensionMismatch("expected a single-instance channel without A".into()));
        }
        self.omega.partial_trace(&["X1", "Y1"])?.relabel(&["X", "Y"])
    }

    /// Single-instance channel from a state on `X ⊗ Y`.
    pub fn from_single_xy(phi: &Operator) -> Result<Self> {
        let dims = phi.shape().dims();
        if dims.len() != 2 {
            return Err(Error::DimensionMismatch("expected an operator on X ⊗ Y".into()));
        }
        let m = phi.matrix().clone();
        Self::from_matrix(m, 1, dims[0], dims[1], 1)
    }
}

/// Choi matrix of `K ↦ Σ K ρ K†` for Kraus operators mapping `A ⊗ X^{⊗n}`
/// (in that order) to `Y^{⊗n}`.
pub fn choi_of_kraus_multi(
    kraus: &[Matrix],
    d_a: usize,
    d_x: usize,
    d_y: usize,
    n: usize,
) -> Result<ChoiChannel> {
    let d_in = d_a * d_x.pow(n as u32);
    let d_out = d_y.pow(n as u32);
    if kraus.is_empty() {
        return Err(Error::DimensionMismatch("empty Kraus set".into()));
    }
    let mut gram = Matrix::zeros(d_in, d_in);
    for k in kraus {
        if k.nrows() != d_out || k.ncols() != d_in {
            return Err(Error::DimensionMismatch(format!(
                "Kraus operator is {}x{}, expected {d_out}x{d_in}",
                k.nrows(),
                k.ncols()
            )));
        }
        gram += k.adjoint() * k;
    }
    let dev = (gram - Matrix::identity(d_in, d_in)).iter().map(|z| z.norm()).fold(0.0, f64::max);
    if dev > 1e-10 {
        return Err(Error::NotTracePreserving(dev));
    }
    let total = d_in * d_out;
    let norm = c(1.0 / (d_in as f64).sqrt());
    let mut omega = Matrix::zeros(total, total);
    for k in kraus {
        // (1 ⊗ K)|Ω>: entry (i, y) = K[y, i] / sqrt(d_in)
        let v = Vector::from_fn(total, |idx, _| k[(idx % d_out, idx / d_out)] * norm);
        omega += &v * v.adjoint();
    }
    let mut grouped = vec![("A".to_string(), d_a)];
    grouped.extend((1..=n).map(|i| (x_label(i), d_x)));
    grouped.extend((1..=n).map(|i| (y_label(i), d_y)));
    let op = Operator::new(omega, Factorization::new(grouped)?)?;
    let canonical = choi_shape(d_a, d_x, d_y, n);
    ChoiChannel::new(op.reorder(&canonical.labels())?, d_a, d_x, d_y, n)
}

/// Choi matrix of a single-instance channel `X -> Y` from Kraus operators.
pub fn choi_of_kraus(kraus: &[Matrix]) -> Result<ChoiChannel> {
    let first = kraus.first().ok_or_else(|| Error::DimensionMismatch("empty Kraus set".into()))?;
    choi_of_kraus_multi(kraus, 1, first.ncols(), first.nrows(), 1)
}

/// `Φ(X) = d_X tr_X[φ^{⊤_X} (X ⊗ 𝟙_Y)]` for a single-instance channel.
pub fn apply_channel(phi: &ChoiChannel, x: &Matrix) -> Result<Operator> {
    let xy = phi.single_xy()?;
    let d_x = phi.d_x();
    if x.nrows() != d_x || x.ncols() != d_x {
        return Err(Error::DimensionMismatch(format!("input is {}x{}, channel expects {d_x}", x.nrows(), x.ncols())));
    }
    let lifted = Operator::on("X", x.clone())?.embed(xy.shape())?;
    let prod = &xy.partial_transpose(&["X"])? * &lifted;
    Ok(prod.partial_trace(&["Y"])?.scale(d_x as f64))
}

/// `Φ*(Y) = d_X tr_Y[φ^{⊤_X} (𝟙_X ⊗ Y)]`.
pub fn adjoint_apply(phi: &ChoiChannel, y: &Matrix) -> Result<Operator> {
    let xy = phi.single_xy()?;
    let d_y = phi.d_y();
    if y.nrows() != d_y || y.ncols() != d_y {
        return Err(Error::DimensionMismatch(format!("observable is {}x{}, channel outputs {d_y}", y.nrows(), y.ncols())));
    }
    let lifted = Operator::on("Y", y.clone())?.embed(xy.shape())?;
    let prod = &xy.partial_transpose(&["X"])? * &lifted;
    Ok(prod.partial_trace(&["X"])?.scale(phi.d_x() as f64))
}

/// `(Q ⊗ id)(ρ)` where `ρ` lives on `A, X1..Xn` plus passive factors.
///
/// Uses the block form `D Σ_{αβ} ω_{αβ} ⊗ ρ_{αβ}` with `α, β` running over
/// the input basis, so the full input ⊗ output ⊗ passive space is never formed.
/// Output factors are `Y1..Yn` followed by the passive factors in `ρ`'s order.
pub fn apply_with_reference(q: &ChoiChannel, rho: &Operator) -> Result<Operator> {
    let mut inputs = vec!["A".to_string()];
    inputs.extend(q.x_labels());
    let passive: Vec<String> = rho
        .shape()
        .labels()
        .into_iter()
        .filter(|l| !inputs.iter().any(|i| i == l))
        .map(str::to_string)
        .collect();
    let mut rho_order = inputs.clone();
    rho_order.extend(passive.iter().cloned());
    let rho = rho.reorder(&as_strs(&rho_order)).map_err(|_| {
        Error::DimensionMismatch("input state must carry A and every X register".into())
    })?;
    for l in &inputs {
        let want = if l == "A" { q.d_a() } else { q.d_x() };
        if rho.shape().dim_of(l)? != want {
            return Err(Error::DimensionMismatch(format!("register {l} has the wrong dimension")));
        }
    }
    let mut omega_order = inputs.clone();
    omega_order.extend(q.y_labels());
    let omega = q.omega().reorder(&as_strs(&omega_order))?;

    let d_in = q.input_dim();
    let d_out = q.d_y().pow(q.n() as u32);
    let d_p = rho.dim() / d_in;
    let (w, r) = (omega.matrix(), rho.matrix());
    let scale = d_in as f64;
    let mut out = Matrix::zeros(d_out * d_p, d_out * d_p);
    for a in 0..d_in {
        for b in 0..d_in {
            for y1 in 0..d_out {
                for y2 in 0..d_out {
                    let wv = w[(a * d_out + y1, b * d_out + y2)];
                    if wv == C64::new(0.0, 0.0) {
                        continue;
                    }
                    let wv = wv * scale;
                    for p1 in 0..d_p {
                        for p2 in 0..d_p {
                            out[(y1 * d_p + p1, y2 * d_p + p2)] += wv * r[(a * d_p + p1, b * d_p + p2)];
                        }
                    }
                }
            }
        }
    }
    let mut shape: Vec<(String, usize)> = q.y_labels().into_iter().map(|l| (l, q.d_y())).collect();
    for l in &passive {
        shape.push((l.clone(), rho.shape().dim_of(l)?));
    }
    Operator::new(out, Factorization::new(shape)?)
}

/// Outcome of [`is_cptp`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CptpReport {
    pub psd_violation: f64,
    pub tp_violation: f64,
}

impl CptpReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.psd_violation <= tol && self.tp_violation <= tol
    }
}

pub fn is_cptp(phi: &ChoiChannel) -> Result<CptpReport> {
    let min = min_eigenvalue(phi.omega())?;
    let mut inputs = vec!["A".to_string()];
    inputs.extend(phi.x_labels());
    let marginal = phi.omega().partial_trace(&as_strs(&inputs))?;
    let target = Operator::maximally_mixed(marginal.shape().clone());
    Ok(CptpReport {
        psd_violation: if min < 0.0 { -min } else { 0.0 },
        tp_violation: trace_norm(&(&marginal - &target)),
    })
}

/// Outcome of [`is_nonsignalling`]: one residual per output register.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NonSignallingReport {
    pub per_i_violation: Vec<f64>,
}

impl NonSignallingReport {
    pub fn max(&self) -> f64 {
        self.per_i_violation.iter().copied().fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max() <= tol
    }
}

/// For each `i`, the trace-norm distance between `M_i = tr_{Y_j, j≠i} ω` and
/// `tr_{X_j, j≠i}[M_i] ⊗ 𝟙/d_X^{n-1}`.
pub fn is_nonsignalling(q: &ChoiChannel) -> Result<NonSignallingReport> {
    let mut out = Vec::with_capacity(q.n());
    for i in 1..=q.n() {
        let mut keep = vec!["A".to_string()];
        keep.extend(q.x_labels());
        keep.push(y_label(i));
        let m_i = q.omega().partial_trace(&as_strs(&keep))?;
        out.push(trace_norm(&signalling_part(&m_i, q, i)?));
    }
    Ok(NonSignallingReport { per_i_violation: out })
}

/// `M_i - tr_{X≠i}[M_i] ⊗ 𝟙/d_X^{n-1}` laid out like `M_i`.
fn signalling_part(m_i: &Operator, q: &ChoiChannel, i: usize) -> Result<Operator> {
    let local = m_i.partial_trace(&["A", &x_label(i), &y_label(i)])?;
    let others = (q.n() - 1) as i32;
    let spread = local.embed(m_i.shape())?.scale((q.d_x() as f64).powi(-others));
    Ok(m_i - &spread)
}

/// Restriction of a non-signalling channel to its first `k` instances.
/// Returns the reduced channel and the residual of
/// `tr_{Y_{k+1:n}} ω = ω_{1:k} ⊗ 𝟙/d_X^{n-k}` in trace norm.
pub fn marginal_channel(q: &ChoiChannel, k: usize, tol: f64) -> Result<(ChoiChannel, f64)> {
    if k > q.n() {
        return Err(Error::DimensionMismatch(format!("k = {k} exceeds n = {}", q.n())));
    }
    if k == q.n() {
        return Ok((q.clone(), 0.0));
    }
    let reduced_shape = choi_shape(q.d_a(), q.d_x(), q.d_y(), k);
    let reduced = q.omega().partial_trace(&reduced_shape.labels())?;
    let tail_y: Vec<String> = labels_of(y_label, k + 1..=q.n());
    let lhs = q.omega().trace_out(&as_strs(&tail_y))?;
    let rhs = reduced.embed(lhs.shape())?.scale((q.d_x() as f64).powi(-((q.n() - k) as i32)));
    let residual = trace_norm(&(&lhs - &rhs));
    if residual > tol {
        return Err(Error::Signalling(residual));
    }
    Ok((ChoiChannel::new(reduced, q.d_a(), q.d_x(), q.d_y(), k)?, residual))
}

/// Largest `n` accepted by exact permutation averages.
pub const MAX_SYMMETRIZE_N: usize = 6;

/// Average of the Choi matrix over simultaneous permutations of the `(X_i, Y_i)` pairs.
pub fn symmetrize_channel(q: &ChoiChannel) -> Result<ChoiChannel> {
    if q.n() > MAX_SYMMETRIZE_N {
        return Err(Error::TooManyInstances(q.n()));
    }
    let sites = q.sites();
    let perms = permutations(q.n());
    let mut acc = Matrix::zeros(q.omega().dim(), q.omega().dim());
    for p in &perms {
        acc += q.omega().permute_sites(&sites, p)?.matrix();
    }
    acc /= c(perms.len() as f64);
    ChoiChannel::from_matrix(acc, q.d_a(), q.d_x(), q.d_y(), q.n())
}

/// Largest deviation of `ω` from its images under pair permutations.
pub fn permutation_asymmetry(q: &ChoiChannel) -> Result<f64> {
    let sites = q.sites();
    let mut worst = 0.0f64;
    for p in permutations(q.n()).iter().skip(1) {
        worst = worst.max(q.omega().permute_sites(&sites, p)?.max_abs_diff(q.omega()));
    }
    Ok(worst)
}

/// Choi matrix `Σ_j (M_j^⊤ / d_A) ⊗ φ_j^{⊗n}` of "measure `A` with `{M_j}`,
/// then apply `Φ_j` to every test instance".
pub fn measure_and_prepare_choi(povm: &[Matrix], channels: &[ChoiChannel], n: usize) -> Result<ChoiChannel> {
    if povm.len() != channels.len() || povm.is_empty() {
        return Err(Error::DimensionMismatch("one channel per POVM element required".into()));
    }
    let d_a = povm[0].nrows();
    let mut total = Matrix::zeros(d_a, d_a);
    for m in povm {
        if m.nrows() != d_a || m.ncols() != d_a {
            return Err(Error::DimensionMismatch("POVM elements differ in size".into()));
        }
        total += m;
    }
    let dev = trace_norm_of(&(total - Matrix::identity(d_a, d_a)));
    if dev > 1e-8 {
        return Err(Error::PovmIncomplete(dev));
    }
    let (d_x, d_y) = (channels[0].d_x(), channels[0].d_y());
    // Elements sharing a channel are merged before the tensor powers are formed.
    let mut groups: Vec<(Matrix, &ChoiChannel)> = Vec::new();
    for (m, ch) in povm.iter().zip(channels) {
        if ch.d_x() != d_x || ch.d_y() != d_y || ch.n() != 1 || ch.d_a() != 1 {
            return Err(Error::DimensionMismatch("channels must be single-instance X -> Y maps".into()));
        }
        match groups.iter_mut().find(|(_, g)| g.omega().matrix() == ch.omega().matrix()) {
            Some((acc, _)) => *acc += m,
            None => groups.push((m.clone(), ch)),
        }
    }
    for (_, ch) in &groups {
        let report = is_cptp(ch)?;
        if report.tp_violation > 1e-8 {
            return Err(Error::NotTracePreserving(report.tp_violation));
        }
    }
    let shape = choi_shape(d_a, d_x, d_y, n);
    let mut omega = Matrix::zeros(shape.total_dim(), shape.total_dim());
    for (m, ch) in &groups {
        let phi = ch.omega().matrix();
        let mut term = m.transpose() / c(d_a as f64);
        for _ in 0..n {
            term = term.kronecker(phi);
        }
        omega += term;
    }
    ChoiChannel::from_matrix(omega, d_a, d_x, d_y, n)
}

fn trace_norm_of(m: &Matrix) -> f64 {
    crate::tensor::trace_norm_matrix(m)
}

/// Completely depolarizing channel `X -> Y` (Choi `𝟙/(d_X d_Y)`).
pub fn depolarizing_channel(d_x: usize, d_y: usize) -> ChoiChannel {
    let d = d_x * d_y;
    ChoiChannel::from_matrix(Matrix::identity(d, d) / c(d as f64), 1, d_x, d_y, 1).expect("valid dims")
}

/// Identity channel on `C^d` (Choi `|Ω><Ω|`).
pub fn identity_channel(d: usize) -> ChoiChannel {
    choi_of_kraus(&[Matrix::identity(d, d)]).expect("unitary Kraus set")
}

/// `Φ^{⊗n}` as an `n`-instance channel with trivial `A`.
pub fn product_channel(phi: &ChoiChannel, n: usize) -> Result<ChoiChannel> {
    measure_and_prepare_choi(&[Matrix::identity(1, 1)], std::slice::from_ref(phi), n)
}

/// `Φ_1 ⊗ ... ⊗ Φ_n` for single-instance channels with equal dims.
pub fn tensor_channels(parts: &[ChoiChannel]) -> Result<ChoiChannel> {
    let first = parts.first().ok_or_else(|| Error::DimensionMismatch("no channels".into()))?;
    let mut m = Matrix::identity(1, 1);
    for p in parts {
        if p.n() != 1 || p.d_a() != 1 || p.d_x() != first.d_x() || p.d_y() != first.d_y() {
            return Err(Error::DimensionMismatch("parts must be single-instance with equal dims".into()));
        }
        m = m.kronecker(p.omega().matrix());
    }
    ChoiChannel::from_matrix(m, 1, first.d_x(), first.d_y(), parts.len())
}
