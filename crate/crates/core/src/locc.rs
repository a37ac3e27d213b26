//! From a de Finetti approximation to an executable measure-then-apply protocol.
//!
//! The pipeline symmetrizes a non-signalling channel, extracts the operator
//! valued measure from its Choi matrix, repairs every factor channel to be
//! trace preserving (or substitutes a fallback) and completes the POVM.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channels::{
    depolarizing_channel, is_nonsignalling, measure_and_prepare_choi, symmetrize_channel, ChoiChannel,
};
use crate::definetti::{
    build_grid, extract_measure, purify_extension, DeFinettiApprox, ExtensionOptions, GridSpec,
};
use crate::error::{Error, Result};
use crate::tensor::{
    c, eigh, fidelity, inv_sqrt_psd, max_eigenvalue, min_eigenvalue, op_norm_matrix, project_psd, trace_norm,
    trace_norm_matrix, Factorization, Matrix, Operator,
};

/// Default eigenvalue cutoff for `τ^{-1/2}`.
pub const DEFAULT_CUTOFF: f64 = 1e-8;
/// Completeness tolerance for the emitted POVM.
pub const POVM_TOL: f64 = 1e-8;

fn first_label(phi: &Operator) -> Result<String> {
    if phi.shape().len() != 2 {
        return Err(Error::DimensionMismatch("expected an operator on X ⊗ Y".into()));
    }
    Ok(phi.shape().labels()[0].to_string())
}

/// `τ = tr_Y[φ]` for `φ` on `X ⊗ Y` (first factor is `X`).
pub fn marginal_input(phi: &Operator) -> Result<Operator> {
    let x = first_label(phi)?;
    phi.partial_trace(&[&x])
}

/// `φ̃ = (1/d_X)(τ^{-1/2} ⊗ 𝟙) φ (τ^{-1/2} ⊗ 𝟙)`, so that `tr_Y φ̃ = 𝟙/d_X`.
pub fn tp_repair(phi: &Operator, cutoff: f64) -> Result<Operator> {
    let tau = marginal_input(phi)?;
    let min = min_eigenvalue(&tau)?;
    if min <= cutoff {
        return Err(Error::Singular(min));
    }
    let d_x = tau.dim();
    let inv = inv_sqrt_psd(&tau, cutoff)?.embed(phi.shape())?;
    Ok((&(&inv * phi) * &inv).scale(1.0 / d_x as f64))
}

/// Both sides of the repair distance inequality.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RepairBound {
    /// `‖φ − φ̃‖₁`.
    pub lhs: f64,
    /// `sqrt(1 − tr[τ^{1/2}]²/d_X)`.
    pub rhs: f64,
    /// `F(φ, φ̃)`, which equals `tr[τ^{1/2}]²/d_X`.
    pub fidelity: f64,
}

impl RepairBound {
    /// The stated inequality `lhs ≤ rhs`.
    pub fn holds(&self, slack: f64) -> bool {
        self.lhs <= self.rhs + slack
    }

    /// The Fuchs–van de Graaf form `lhs ≤ 2 sqrt(1 − F)`.
    pub fn holds_fvdg(&self, slack: f64) -> bool {
        self.lhs <= 2.0 * self.rhs + slack
    }
}

pub fn repair_distance_bound(phi: &Operator) -> Result<RepairBound> {
    let repaired = tp_repair(phi, DEFAULT_CUTOFF)?;
    let tau = marginal_input(phi)?;
    let (vals, _) = eigh(tau.matrix())?;
    let tr_sqrt: f64 = vals.iter().map(|v| v.max(0.0).sqrt()).sum();
    let f = tr_sqrt * tr_sqrt / tau.dim() as f64;
    Ok(RepairBound {
        lhs: trace_norm(&(phi - &repaired)),
        rhs: (1.0 - f).max(0.0).sqrt(),
        fidelity: fidelity(phi, &repaired)?,
    })
}

/// Empirical tail probability and the operator Chebyshev bound.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ChebyshevCheck {
    pub empirical_prob: f64,
    pub bound: f64,
}

/// `Pr[‖X − μ‖_∞ ≥ ε]` against `(d²/ε²)‖E[X⊗X] − μ⊗μ‖_∞` for a finite ensemble.
pub fn operator_chebyshev(samples: &[(Matrix, f64)], epsilon: f64) -> Result<ChebyshevCheck> {
    let first = samples.first().ok_or_else(|| Error::InvalidDistribution("empty ensemble".into()))?;
    let d = first.0.nrows();
    let total: f64 = samples.iter().map(|(_, p)| p).sum();
    if (total - 1.0).abs() > 1e-9 || samples.iter().any(|(_, p)| *p < 0.0) {
        return Err(Error::InvalidDistribution(format!("probabilities sum to {total}")));
    }
    let mut mu = Matrix::zeros(d, d);
    let mut second = Matrix::zeros(d * d, d * d);
    for (x, p) in samples {
        if x.nrows() != d || x.ncols() != d {
            return Err(Error::DimensionMismatch("ensemble members differ in size".into()));
        }
        mu += x * c(*p);
        second += x.kronecker(x) * c(*p);
    }
    let empirical_prob =
        samples.iter().filter(|(x, _)| op_norm_matrix(&(x - &mu)) >= epsilon).map(|(_, p)| p).sum();
    let spread = op_norm_matrix(&(second - mu.kronecker(&mu)));
    Ok(ChebyshevCheck { empirical_prob, bound: (d * d) as f64 / (epsilon * epsilon) * spread })
}

/// Moments `E_k[G] = Σ_j tr[M_j] τ_j^{⊗k}` and the concentration statements.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub e1: Operator,
    /// `(k, ‖E_k[G] − 𝟙/d_X^k‖₁)` for `k = 1, 2`.
    pub ek_norm_residuals: Vec<(usize, f64)>,
    /// `(k, k·δ + grid_residual)`: right-hand sides of the first statement.
    pub ek_bounds: Vec<(usize, f64)>,
    /// `Σ_j tr[M_j] [‖τ_j − E_1‖_∞ < ε]`.
    pub r_eps_mass: f64,
    /// Mass of the complement.
    pub complement_mass: f64,
    /// `(d_X²/ε²)(2δ'(1 + 1/d_X) + δ'²)` with `δ' = δ + grid_residual`.
    pub bound_rhs: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub grid_residual: f64,
}

impl ConcentrationReport {
    pub fn statement1_holds(&self) -> bool {
        self.ek_norm_residuals.iter().zip(&self.ek_bounds).all(|((_, r), (_, b))| r <= b)
    }

    pub fn statement2_holds(&self) -> bool {
        self.complement_mass <= self.bound_rhs + 1e-12
    }
}

fn tau_of(phi: &Operator) -> Result<Matrix> {
    Ok(marginal_input(phi)?.into_matrix())
}

pub fn concentration_report(approx: &DeFinettiApprox, epsilon: f64, delta: f64) -> Result<ConcentrationReport> {
    let taus: Vec<Matrix> = approx.items.iter().map(|it| tau_of(&it.phi)).collect::<Result<_>>()?;
    let masses: Vec<f64> = approx.items.iter().map(|it| it.m.trace().re).collect();
    let d_x = taus[0].nrows();
    let mut e1 = Matrix::zeros(d_x, d_x);
    let mut e2 = Matrix::zeros(d_x * d_x, d_x * d_x);
    for (t, &w) in taus.iter().zip(&masses) {
        e1 += t * c(w);
        e2 += t.kronecker(t) * c(w);
    }
    let id1 = Matrix::identity(d_x, d_x) / c(d_x as f64);
    let id2 = Matrix::identity(d_x * d_x, d_x * d_x) / c((d_x * d_x) as f64);
    let r1 = trace_norm_matrix(&(&e1 - id1));
    let r2 = trace_norm_matrix(&(&e2 - id2));
    let mut inside = 0.0;
    let mut outside = 0.0;
    for (t, &w) in taus.iter().zip(&masses) {
        if op_norm_matrix(&(t - &e1)) < epsilon {
            inside += w;
        } else {
            outside += w;
        }
    }
    let res = approx.grid_residual;
    let dp = delta + res;
    let dx = d_x as f64;
    let x_label = approx.site().labels()[0].to_string();
    Ok(ConcentrationReport {
        e1: Operator::new(e1, Factorization::single(&x_label, d_x))?,
        ek_norm_residuals: vec![(1, r1), (2, r2)],
        ek_bounds: vec![(1, delta + res), (2, 2.0 * delta + res)],
        r_eps_mass: inside,
        complement_mass: outside,
        bound_rhs: dx * dx / (epsilon * epsilon) * (2.0 * dp * (1.0 + 1.0 / dx) + dp * dp),
        epsilon,
        delta,
        grid_residual: res,
    })
}

/// How the concentration radius `ε` is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum EpsilonRule {
    /// `ε = δ^{1/3}`.
    CubeRootDelta,
    Fixed(f64),
}

impl EpsilonRule {
    pub fn epsilon(&self, delta: f64) -> f64 {
        match self {
            EpsilonRule::CubeRootDelta => delta.cbrt(),
            EpsilonRule::Fixed(e) => *e,
        }
    }
}

impl FromStr for EpsilonRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "cbrt" {
            return Ok(EpsilonRule::CubeRootDelta);
        }
        s.parse::<f64>()
            .ok()
            .filter(|e| *e > 0.0)
            .map(EpsilonRule::Fixed)
            .ok_or_else(|| Error::Config(format!("epsilon must be `cbrt` or a positive number, got `{s}`")))
    }
}

impl fmt::Display for EpsilonRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EpsilonRule::CubeRootDelta => write!(f, "cbrt"),
            EpsilonRule::Fixed(e) => write!(f, "{e}"),
        }
    }
}

/// What to do when the extracted POVM elements overshoot the identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlackPolicy {
    /// Fail with [`Error::SlackNotPsd`].
    Strict,
    /// Scale every element by `1/λ_max(Σ M̂_j)` first; the scale is reported.
    Rescale,
}

#[derive(Clone, Copy, Debug)]
pub struct LoccOptions {
    pub cutoff: f64,
    pub epsilon: EpsilonRule,
    pub slack: SlackPolicy,
    pub reduce_support: bool,
    /// Largest accepted non-signalling residual of the input.
    pub ns_tol: f64,
}

impl Default for LoccOptions {
    fn default() -> Self {
        Self {
            cutoff: DEFAULT_CUTOFF,
            epsilon: EpsilonRule::CubeRootDelta,
            slack: SlackPolicy::Strict,
            reduce_support: true,
            ns_tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Provenance {
    pub epsilon: f64,
    pub delta: f64,
    pub repaired_count: usize,
    pub fallback_count: usize,
    pub grid_residual: f64,
    pub grid_size: usize,
    pub d_eff: usize,
    pub bound_dim: usize,
    pub purified: bool,
    /// `tr[slack]/d_A`.
    pub slack_mass: f64,
    /// Factor applied to every extracted element before completing the POVM.
    pub povm_scale: f64,
}

/// Finite POVM on `A` with one trace-preserving single-instance channel per outcome.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LoccProtocol {
    pub povm: Vec<Operator>,
    pub channels: Vec<ChoiChannel>,
    pub provenance: Provenance,
}

impl LoccProtocol {
    pub fn d_a(&self) -> usize {
        self.povm[0].dim()
    }

    /// `‖Σ_j M̂_j − 𝟙‖₁`.
    pub fn completeness_defect(&self) -> f64 {
        let d = self.d_a();
        let total = self.povm.iter().fold(Matrix::zeros(d, d), |acc, m| acc + m.matrix());
        trace_norm_matrix(&(total - Matrix::identity(d, d)))
    }

    /// The `n`-instance Choi matrix `Σ_j (M̂_j^⊤/d_A) ⊗ φ̃_j^{⊗n}`.
    pub fn to_choi(&self, n: usize) -> Result<ChoiChannel> {
        let povm: Vec<Matrix> = self.povm.iter().map(|m| m.matrix().clone()).collect();
        measure_and_prepare_choi(&povm, &self.channels, n)
    }

    /// `η_{AXY} = Σ_j (M̂_j^⊤/d_A) ⊗ φ̃_j`, the one-instance marginal without forming powers.
    pub fn single_instance_choi(&self) -> Result<ChoiChannel> {
        self.to_choi(1)
    }
}

/// Symmetrize, extract, repair and complete: the measure-then-apply protocol
/// approximating `q`.
pub fn build_locc_protocol(q: &ChoiChannel, grid: &GridSpec, opts: &LoccOptions) -> Result<LoccProtocol> {
    let ns = is_nonsignalling(q)?.max();
    if ns > opts.ns_tol {
        return Err(Error::Signalling(ns));
    }
    let sym = symmetrize_channel(q)?;
    let site = Factorization::new([("X", q.d_x()), ("Y", q.d_y())])?;
    let ext = purify_extension(
        sym.omega().matrix(),
        q.d_a(),
        &site,
        q.n(),
        ExtensionOptions { reduce_support: opts.reduce_support },
    )?;
    let grid = build_grid(ext.d_eff(), q.n(), grid)?;
    let approx = extract_measure(&ext, &grid)?;
    let d = ext.bound_dim();
    let delta = 4.0 * (d * d) as f64 / q.n() as f64;
    protocol_from_approx(&approx, q.d_a(), delta, ext.d_eff(), d, ext.purified(), opts)
}

/// Repair and POVM completion for an already extracted approximation.
pub fn protocol_from_approx(
    approx: &DeFinettiApprox,
    d_a: usize,
    delta: f64,
    d_eff: usize,
    bound_dim: usize,
    purified: bool,
    opts: &LoccOptions,
) -> Result<LoccProtocol> {
    let epsilon = opts.epsilon.epsilon(delta);
    let d_x = approx.site().factors()[0].1;
    let d_y = approx.site().factors()[1].1;
    let fallback = depolarizing_channel(d_x, d_y);
    let mut e1 = Matrix::zeros(d_x, d_x);
    for it in &approx.items {
        e1 += tau_of(&it.phi)? * it.m.trace();
    }
    let repaired: Vec<Option<ChoiChannel>> = approx
        .items
        .par_iter()
        .map(|it| -> Result<Option<ChoiChannel>> {
            let tau = tau_of(&it.phi)?;
            let close = op_norm_matrix(&(&tau - &e1)) < epsilon;
            if !close {
                return Ok(None);
            }
            match tp_repair(&it.phi, opts.cutoff) {
                Ok(fixed) => Ok(Some(ChoiChannel::from_matrix(fixed.into_matrix(), 1, d_x, d_y, 1)?)),
                Err(Error::Singular(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;

    let mut povm: Vec<Matrix> = approx.items.iter().map(|it| it.m.matrix().transpose() * c(d_a as f64)).collect();
    let total = povm.iter().fold(Matrix::zeros(d_a, d_a), |acc, m| acc + m);
    let top = max_eigenvalue(&Operator::on("A", total.clone())?)?;
    let mut scale = 1.0;
    let mut slack = Matrix::identity(d_a, d_a) - &total;
    let slack_min = min_eigenvalue(&Operator::on("A", slack.clone())?)?;
    if slack_min < -POVM_TOL {
        match opts.slack {
            SlackPolicy::Strict => return Err(Error::SlackNotPsd(slack_min)),
            SlackPolicy::Rescale => {
                scale = 1.0 / top;
                for m in povm.iter_mut() {
                    *m *= c(scale);
                }
                slack = Matrix::identity(d_a, d_a) - total * c(scale);
            }
        }
    }
    let slack = project_psd(&slack)?;
    let slack_mass = slack.trace().re / d_a as f64;
    povm.push(slack);

    let mut channels = Vec::with_capacity(povm.len());
    let (mut repaired_count, mut fallback_count) = (0, 0);
    for r in repaired {
        match r {
            Some(ch) => {
                repaired_count += 1;
                channels.push(ch);
            }
            None => {
                fallback_count += 1;
                channels.push(fallback.clone());
            }
        }
    }
    channels.push(fallback);
    let povm = povm.into_iter().map(|m| Operator::on("A", m)).collect::<Result<Vec<_>>>()?;
    Ok(LoccProtocol {
        povm,
        channels,
        provenance: Provenance {
            epsilon,
            delta,
            repaired_count,
            fallback_count,
            grid_residual: approx.grid_residual,
            grid_size: approx.items.len(),
            d_eff,
            bound_dim,
            purified,
            slack_mass,
            povm_scale: scale,
        },
    })
}

/// Leading term `4^{1/6} d_A d_X^{11/6} d_Y^{1/3} n^{-1/6} ‖R‖_∞` of the risk-gap bound;
/// the `O(n^{-1/3})` remainder is not included.
pub fn risk_gap_bound(d_a: usize, d_x: usize, d_y: usize, n: usize, r_infnorm: f64) -> f64 {
    4f64.powf(1.0 / 6.0)
        * d_a as f64
        * (d_x as f64).powf(11.0 / 6.0)
        * (d_y as f64).powf(1.0 / 3.0)
        * (n as f64).powf(-1.0 / 6.0)
        * r_infnorm
}

#[cfg(test)]
mod tests;
