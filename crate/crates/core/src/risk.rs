//! Learning tasks, expected risk and the collective-versus-LOCC gap.
//!
//! A task is a test distribution `ρ_{XY'}`, a training state `ρ_A` and a
//! risk observable `S` on `Y ⊗ Y'`. Instance `i` of an `n`-instance protocol
//! reads `X_i` and writes `Y_i`; the reference label stays in `Y'_i`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channels::{
    apply_with_reference, is_nonsignalling, marginal_channel, symmetrize_channel, x_label, y_label, yp_label,
    ChoiChannel,
};
use crate::definetti::GridSpec;
use crate::error::{Error, Result};
use crate::locc::{build_locc_protocol, risk_gap_bound, LoccOptions, LoccProtocol};
use crate::tensor::{
    c, dicke_basis, min_eigenvalue, op_norm, sym_dim, Factorization, Matrix, Operator, C64,
};

const STATE_TOL: f64 = 1e-9;

/// How `S̄` combines the per-instance observables.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum RiskNormalization {
    /// `S̄ = (1/n) Σ_i S_i`.
    #[default]
    Average,
    /// `S̄ = Σ_i S_i`.
    Sum,
}

impl RiskNormalization {
    fn factor(self, n: usize) -> f64 {
        match self {
            RiskNormalization::Average => 1.0,
            RiskNormalization::Sum => n as f64,
        }
    }
}

impl FromStr for RiskNormalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average" => Ok(Self::Average),
            "sum" => Ok(Self::Sum),
            _ => Err(Error::Config(format!("normalization must be `average` or `sum`, got `{s}`"))),
        }
    }
}

impl fmt::Display for RiskNormalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RiskNormalization::Average => "average",
            RiskNormalization::Sum => "sum",
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LearningTask {
    rho_xy: Operator,
    rho_a: Operator,
    s: Operator,
    n: usize,
    normalization: RiskNormalization,
}

fn check_state(m: &Matrix, what: &str) -> Result<()> {
    let op = Operator::on("S", m.clone())?;
    if op.hermiticity_defect() > STATE_TOL {
        return Err(Error::NotHermitian(op.hermiticity_defect()));
    }
    let min = min_eigenvalue(&op)?;
    if min < -STATE_TOL {
        return Err(Error::NotPsd(min));
    }
    let tr = m.trace().re;
    if (tr - 1.0).abs() > STATE_TOL {
        return Err(Error::InvalidDistribution(format!("{what} has trace {tr}")));
    }
    Ok(())
}

impl LearningTask {
    /// `rho_xy` on `X ⊗ Y'`, `rho_a` on `A`, `s` on `Y ⊗ Y'` with `d_Y = d_{Y'}`.
    pub fn new(rho_xy: Matrix, d_x: usize, rho_a: Matrix, s: Matrix, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::DimensionMismatch("n must be at least 1".into()));
        }
        if !rho_xy.nrows().is_multiple_of(d_x) || d_x == 0 {
            return Err(Error::DimensionMismatch(format!("ρ_XY' of size {} not divisible by d_X = {d_x}", rho_xy.nrows())));
        }
        let d_y = rho_xy.nrows() / d_x;
        if s.nrows() != d_y * d_y || s.ncols() != d_y * d_y {
            return Err(Error::DimensionMismatch(format!("S must act on Y ⊗ Y' of dim {}", d_y * d_y)));
        }
        check_state(&rho_xy, "ρ_XY'")?;
        check_state(&rho_a, "ρ_A")?;
        let s_op = Operator::new(s, Factorization::new([("Y", d_y), ("Yp", d_y)])?)?;
        if s_op.hermiticity_defect() > STATE_TOL {
            return Err(Error::NotHermitian(s_op.hermiticity_defect()));
        }
        Ok(Self {
            rho_xy: Operator::new(rho_xy, Factorization::new([("X", d_x), ("Yp", d_y)])?)?,
            rho_a: Operator::on("A", rho_a)?,
            s: s_op,
            n,
            normalization: RiskNormalization::Average,
        })
    }

    pub fn rho_xy(&self) -> &Operator {
        &self.rho_xy
    }

    pub fn rho_a(&self) -> &Operator {
        &self.rho_a
    }

    pub fn observable(&self) -> &Operator {
        &self.s
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn normalization(&self) -> RiskNormalization {
        self.normalization
    }

    pub fn d_a(&self) -> usize {
        self.rho_a.dim()
    }

    pub fn d_x(&self) -> usize {
        self.rho_xy.shape().factors()[0].1
    }

    pub fn d_y(&self) -> usize {
        self.s.shape().factors()[0].1
    }

    pub fn with_observable(mut self, s: Matrix) -> Result<Self> {
        let s = Operator::new(s, self.s.shape().clone())?;
        if s.hermiticity_defect() > STATE_TOL {
            return Err(Error::NotHermitian(s.hermiticity_defect()));
        }
        self.s = s;
        Ok(self)
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn with_normalization(mut self, normalization: RiskNormalization) -> Self {
        self.normalization = normalization;
        self
    }
}

fn basis_projector(d: usize, k: usize) -> Matrix {
    let mut m = Matrix::zeros(d, d);
    m[(k, k)] = c(1.0);
    m
}

/// 0-1 loss `𝟙 − Σ_y |y⟩⟨y| ⊗ |y⟩⟨y|` for `labels` classes.
pub fn zero_one_loss(labels: usize) -> Matrix {
    let mut s = Matrix::identity(labels * labels, labels * labels);
    for y in 0..labels {
        s[(y * labels + y, y * labels + y)] -= c(1.0);
    }
    s
}

/// `SWAP` on `C^d ⊗ C^d`.
pub fn swap(d: usize) -> Matrix {
    Matrix::from_fn(d * d, d * d, |r, col| if r == (col % d) * d + col / d { c(1.0) } else { c(0.0) })
}

/// `𝟙 − SWAP`; `tr[(ρ ⊗ σ)(𝟙 − SWAP)] = 1 − tr[ρσ]`.
pub fn overlap_loss(d: usize) -> Matrix {
    Matrix::identity(d * d, d * d) - swap(d)
}

fn check_priors(priors: &[f64], count: usize) -> Result<()> {
    if priors.len() != count || count == 0 {
        return Err(Error::DimensionMismatch(format!("{} priors for {count} states", priors.len())));
    }
    let total: f64 = priors.iter().sum();
    if (total - 1.0).abs() > STATE_TOL || priors.iter().any(|p| *p < 0.0) {
        return Err(Error::InvalidDistribution(format!("priors sum to {total}")));
    }
    Ok(())
}

fn training_state(states: &[Matrix], copies: usize) -> Matrix {
    let mut rho = Matrix::identity(1, 1);
    for s in states {
        for _ in 0..copies {
            rho = rho.kronecker(s);
        }
    }
    rho
}

fn common_dim(states: &[Matrix]) -> Result<usize> {
    let d = states[0].nrows();
    if states.iter().any(|s| s.nrows() != d || s.ncols() != d) {
        return Err(Error::DimensionMismatch("states differ in dimension".into()));
    }
    Ok(d)
}

/// `ρ_{XY'} = Σ_y p_y ρ^{(y)} ⊗ |y⟩⟨y|` with 0-1 loss; `ρ_A = ⊗_y (ρ^{(y)})^{⊗copies}`.
pub fn classification_task(priors: &[f64], states: &[Matrix], n: usize, copies: usize) -> Result<LearningTask> {
    check_priors(priors, states.len())?;
    let d_x = common_dim(states)?;
    let labels = states.len();
    let mut rho_xy = Matrix::zeros(d_x * labels, d_x * labels);
    for (y, (p, s)) in priors.iter().zip(states).enumerate() {
        rho_xy += s.kronecker(&basis_projector(labels, y)) * c(*p);
    }
    LearningTask::new(rho_xy, d_x, training_state(states, copies), zero_one_loss(labels), n)
}

/// `ρ_{XY'} = Σ_x p_x |x⟩⟨x| ⊗ ρ^{(x)}` with `S = 𝟙 − SWAP`; `ρ_A = ⊗_x (ρ^{(x)})^{⊗copies}`.
pub fn tomography_task(priors: &[f64], states: &[Matrix], n: usize, copies: usize) -> Result<LearningTask> {
    check_priors(priors, states.len())?;
    let d_y = common_dim(states)?;
    let d_x = states.len();
    let mut rho_xy = Matrix::zeros(d_x * d_y, d_x * d_y);
    for (x, (p, s)) in priors.iter().zip(states).enumerate() {
        rho_xy += basis_projector(d_x, x).kronecker(s) * c(*p);
    }
    LearningTask::new(rho_xy, d_x, training_state(states, copies), overlap_loss(d_y), n)
}

/// `S̄` on `Y1..Yn, Y'1..Y'n`.
pub fn symmetrized_risk_observable(s: &Operator, n: usize, normalization: RiskNormalization) -> Result<Operator> {
    let d_y = s.shape().factors()[0].1;
    let mut factors: Vec<(String, usize)> = (1..=n).map(|i| (y_label(i), d_y)).collect();
    factors.extend((1..=n).map(|i| (yp_label(i), d_y)));
    let shape = Factorization::new(factors)?;
    let mut acc = Operator::zeros(shape.clone());
    for i in 1..=n {
        let local = s.relabel(&[&y_label(i), &yp_label(i)])?;
        acc = &acc + &local.embed(&shape)?;
    }
    let scale = match normalization {
        RiskNormalization::Average => 1.0 / n as f64,
        RiskNormalization::Sum => 1.0,
    };
    Ok(acc.scale(scale))
}

/// `r = tr_{Y'}[(ρ_{XY'}^{⊤_X} ⊗ 𝟙_Y)(𝟙_X ⊗ S)]` on `X, Y`.
pub fn instance_kernel(task: &LearningTask) -> Result<Operator> {
    let shape = Factorization::new([("X", task.d_x()), ("Y", task.d_y()), ("Yp", task.d_y())])?;
    let rho = task.rho_xy.partial_transpose(&["X"])?.embed(&shape)?;
    let s = task.s.embed(&shape)?;
    (&rho * &s).partial_trace(&["X", "Y"])
}

/// `R = tr_{Y'}[(ρ_{AXY'} ⊗ 𝟙_Y)^{⊤_{AX}} (𝟙_{AX} ⊗ S)] = ρ_A^⊤ ⊗ r` on `A, X, Y`.
pub fn r_operator(task: &LearningTask) -> Result<Operator> {
    task.rho_a.transpose().tensor(&instance_kernel(task)?)
}

fn check_dims(q: &ChoiChannel, task: &LearningTask) -> Result<()> {
    if q.d_a() != task.d_a() || q.d_x() != task.d_x() || q.d_y() != task.d_y() || q.n() != task.n {
        return Err(Error::DimensionMismatch(format!(
            "channel (d_A, d_X, d_Y, n) = ({}, {}, {}, {}) but task has ({}, {}, {}, {})",
            q.d_a(),
            q.d_x(),
            q.d_y(),
            q.n(),
            task.d_a(),
            task.d_x(),
            task.d_y(),
            task.n
        )));
    }
    Ok(())
}

/// `tr[(Q ⊗ id)(ρ_A ⊗ ρ_{XY'}^{⊗n}) S̄]`, by applying `Q` to the full input.
pub fn expected_risk(q: &ChoiChannel, task: &LearningTask) -> Result<f64> {
    check_dims(q, task)?;
    let mut rho = task.rho_a.clone();
    for i in 1..=task.n {
        rho = rho.tensor(&task.rho_xy.relabel(&[&x_label(i), &yp_label(i)])?)?;
    }
    let out = apply_with_reference(q, &rho)?;
    let mut total = 0.0;
    for i in 1..=task.n {
        let pair = out.partial_trace(&[&y_label(i), &yp_label(i)])?;
        total += pair.trace_product(&task.s.relabel(&[&y_label(i), &yp_label(i)])?).re;
    }
    let per = match task.normalization {
        RiskNormalization::Average => total / task.n as f64,
        RiskNormalization::Sum => total,
    };
    Ok(per)
}

/// `d_A d_X tr[ω̄_{AXY} R]` from the one-instance marginal of the symmetrized channel.
pub fn expected_risk_marginal(q: &ChoiChannel, task: &LearningTask) -> Result<f64> {
    check_dims(q, task)?;
    let sym = symmetrize_channel(q)?;
    let (single, _) = marginal_channel(&sym, 1, 1e-6)?;
    let r = r_operator(task)?.relabel(&["A", &x_label(1), &y_label(1)])?;
    let value = (task.d_a() * task.d_x()) as f64 * single.omega().trace_product(&r).re;
    Ok(value * task.normalization.factor(task.n))
}

/// Risk of a measure-then-apply protocol: `Σ_j tr[M̂_j ρ_A] · d_X tr[φ̃_j r]`.
pub fn protocol_risk(protocol: &LoccProtocol, task: &LearningTask) -> Result<f64> {
    if protocol.d_a() != task.d_a() {
        return Err(Error::DimensionMismatch("protocol and task disagree on d_A".into()));
    }
    let r = instance_kernel(task)?;
    let mut total = 0.0;
    for (m, ch) in protocol.povm.iter().zip(&protocol.channels) {
        if ch.d_x() != task.d_x() || ch.d_y() != task.d_y() {
            return Err(Error::DimensionMismatch("protocol channel dims differ from the task".into()));
        }
        let p = m.trace_product(&task.rho_a).re;
        let score = task.d_x() as f64 * ch.omega().relabel(&["A", "X", "Y"])?.partial_trace(&["X", "Y"])?.trace_product(&r).re;
        total += p * score;
    }
    Ok(total * task.normalization.factor(task.n))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RiskReport {
    pub n: usize,
    pub risk_collective: f64,
    pub risk_locc: f64,
    pub gap: f64,
    /// Leading term of the risk-gap bound with the measured `‖R‖_∞`.
    pub bound: f64,
    pub r_norm: f64,
    pub grid_residual: f64,
}

impl RiskReport {
    pub const CSV_HEADER: &'static str = "n,risk_collective,risk_locc,gap,bound,grid_residual,seed";

    pub fn csv_row(&self, seed: u64) -> String {
        format!(
            "{},{:.12},{:.12},{:.12},{:.12},{:.12},{}",
            self.n, self.risk_collective, self.risk_locc, self.gap, self.bound, self.grid_residual, seed
        )
    }

    /// `gap ≤ bound + grid_residual`.
    pub fn within_bound(&self) -> bool {
        self.gap <= self.bound + self.grid_residual
    }
}

/// Build the LOCC protocol for `q`, evaluate both risks and the bound.
pub fn risk_gap_experiment(
    task: &LearningTask,
    q: &ChoiChannel,
    grid: &GridSpec,
    opts: &LoccOptions,
) -> Result<(RiskReport, LoccProtocol)> {
    check_dims(q, task)?;
    let ns = is_nonsignalling(q)?.max();
    if ns > opts.ns_tol {
        return Err(Error::Signalling(ns));
    }
    let protocol = build_locc_protocol(q, grid, opts)?;
    let risk_collective = expected_risk(q, task)?;
    let risk_locc = protocol_risk(&protocol, task)?;
    let r_norm = op_norm(&r_operator(task)?);
    let report = RiskReport {
        n: task.n,
        risk_collective,
        risk_locc,
        gap: (risk_collective - risk_locc).abs(),
        bound: risk_gap_bound(task.d_a(), task.d_x(), task.d_y(), task.n, r_norm),
        r_norm,
        grid_residual: protocol.provenance.grid_residual,
    };
    Ok((report, protocol))
}

/// Two-outcome programmable discriminator on `(q_0, q_1, X)`:
/// `E_0 = 𝟙/2 + (SWAP_{q_0 X} − SWAP_{q_1 X})/4`, `E_1 = 𝟙 − E_0`.
pub fn swap_test_povm(d_x: usize) -> [Matrix; 2] {
    let d = d_x;
    let dim = d * d * d;
    let perm = |f: &dyn Fn(usize, usize, usize) -> (usize, usize, usize)| {
        Matrix::from_fn(dim, dim, |r, col| {
            let (a, b, x) = (col / (d * d), (col / d) % d, col % d);
            let (a2, b2, x2) = f(a, b, x);
            if r == (a2 * d + b2) * d + x2 {
                c(1.0)
            } else {
                c(0.0)
            }
        })
    };
    let s0 = perm(&|a, b, x| (x, b, a));
    let s1 = perm(&|a, b, x| (a, x, b));
    let e0 = Matrix::identity(dim, dim) * c(0.5) + (s0 - s1) * c(0.25);
    let e1 = Matrix::identity(dim, dim) - &e0;
    [e0, e1]
}

/// `C(|b⟩⟨a|)` for the universal symmetric `1 → n` cloner
/// `C(ρ) = (d/D) P_sym (ρ ⊗ 𝟙^{⊗(n−1)}) P_sym`, `D = dim Sym^n(C^d)`.
fn cloner_images(d: usize, n: usize) -> Result<Vec<Matrix>> {
    let v = dicke_basis(n, d)?;
    let rest = d.pow((n - 1) as u32);
    let scale = d as f64 / sym_dim(n, d) as f64;
    let blocks: Vec<Matrix> = (0..d).map(|a| v.rows(a * rest, rest).into_owned()).collect();
    let mut out = Vec::with_capacity(d * d);
    for b in 0..d {
        for a in 0..d {
            let inner = blocks[b].adjoint() * &blocks[a];
            out.push(&v * inner * v.adjoint() * c(scale));
        }
    }
    Ok(out)
}

/// `Σ Π_i G_i[c_i, c'_i] K[c', c]` over all `(y_i, x_i, x'_i)` choices, site by site.
/// `blocks[y][x][x']` is the `d × d` block `⟨x|E_y|x'⟩` on the cloned register.
/// Result is indexed by `(y⃗, x⃗, x⃗')` flattened with site 1 most significant.
fn contract_sites(k: &Matrix, d: usize, n: usize, blocks: &[Vec<Vec<Matrix>>]) -> Vec<C64> {
    let labels = blocks.len();
    let d_x = blocks[0].len();
    let branch = labels * d_x * d_x;
    // (tensor over sites 1..m, index of the choices made for sites m+1..n)
    let mut layer: Vec<Matrix> = vec![k.clone()];
    for m in (1..=n).rev() {
        let size = d.pow((m - 1) as u32);
        let mut next = Vec::with_capacity(layer.len() * branch);
        for t in &layer {
            for y in 0..labels {
                for x in 0..d_x {
                    for xp in 0..d_x {
                        let g = &blocks[y][x][xp];
                        next.push(Matrix::from_fn(size, size, |r, s| {
                            let mut acc = c(0.0);
                            for i in 0..d {
                                for j in 0..d {
                                    acc += g[(j, i)] * t[(r * d + i, s * d + j)];
                                }
                            }
                            acc
                        }));
                    }
                }
            }
        }
        layer = next;
    }
    // `layer` is ordered with site n most significant; reorder to site 1 first.
    let mut out = vec![c(0.0); layer.len()];
    for (idx, t) in layer.iter().enumerate() {
        let mut rem = idx;
        let mut digits = vec![0usize; n];
        for slot in digits.iter_mut() {
            *slot = rem % branch;
            rem /= branch;
        }
        // digits[0] is site 1 (least significant in `layer`, chosen last).
        let flat = digits.iter().fold(0, |acc, &dg| acc * branch + dg);
        out[flat] = t[(0, 0)];
    }
    out
}

/// Collective non-signalling classifier for two-label tasks: clone the training
/// register `A = (q_0, q_1)` with the universal symmetric cloner and run
/// [`swap_test_povm`] on every `(clone_i, X_i)`. The label is written to `Y_i`.
pub fn cloning_discriminator(d_x: usize, n: usize) -> Result<ChoiChannel> {
    if n == 0 {
        return Err(Error::DimensionMismatch("n must be at least 1".into()));
    }
    let d_a = d_x * d_x;
    let povm = swap_test_povm(d_x);
    let blocks: Vec<Vec<Vec<Matrix>>> = povm
        .iter()
        .map(|e| {
            (0..d_x)
                .map(|x| {
                    (0..d_x)
                        .map(|xp| Matrix::from_fn(d_a, d_a, |cc, cp| e[(cc * d_x + x, cp * d_x + xp)]))
                        .collect()
                })
                .collect()
        })
        .collect();
    let images = cloner_images(d_a, n)?;
    let branch = 2 * d_x * d_x;
    let values: Vec<Vec<C64>> = {
        use rayon::prelude::*;
        images.par_iter().map(|k| contract_sites(k, d_a, n, &blocks)).collect()
    };
    // F_y[(a, x⃗), (b, x⃗')] = tr[(⊗ E_{y_i}^{(x_i x'_i)}) C(|b⟩⟨a|)]; ω = Σ_y F_y^⊤/d_in ⊗ |y⃗⟩⟨y⃗|.
    let d_in = d_a * d_x.pow(n as u32);
    let shape = crate::channels::choi_shape(d_a, d_x, 2, n);
    let dim = shape.total_dim();
    let mut omega = Matrix::zeros(dim, dim);
    let site_digits = |flat: usize| -> Vec<(usize, usize, usize)> {
        let mut v = Vec::with_capacity(n);
        let mut rem = flat;
        for _ in 0..n {
            let dg = rem % branch;
            rem /= branch;
            v.push((dg / (d_x * d_x), (dg / d_x) % d_x, dg % d_x));
        }
        v.reverse();
        v
    };
    for b in 0..d_a {
        for a in 0..d_a {
            let vals = &values[b * d_a + a];
            for (flat, &val) in vals.iter().enumerate() {
                if val == c(0.0) {
                    continue;
                }
                // F_y[(a, x⃗), (b, x⃗')] feeds ω[(b, x⃗', y⃗), (a, x⃗, y⃗)].
                let digits = site_digits(flat);
                let (mut row, mut col) = (b, a);
                for &(y, x, xp) in &digits {
                    row = (row * d_x + xp) * 2 + y;
                    col = (col * d_x + x) * 2 + y;
                }
                omega[(row, col)] += val / c(d_in as f64);
            }
        }
    }
    ChoiChannel::from_matrix(omega, d_a, d_x, 2, n)
}

/// Minimal single-copy error `(1 − ‖p_0 ρ_0 − p_1 ρ_1‖₁)/2` for two hypotheses.
pub fn helstrom_risk(p0: f64, rho0: &Matrix, rho1: &Matrix) -> f64 {
    let diff = rho0 * c(p0) - rho1 * c(1.0 - p0);
    0.5 * (1.0 - crate::tensor::trace_norm_matrix(&diff))
}
