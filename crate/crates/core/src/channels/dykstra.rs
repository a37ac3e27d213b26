//! Random non-signalling Choi matrices by Dykstra's alternating projections.
//!
//! The feasible set is the intersection of the PSD cone with affine sets:
//! trace preservation and one non-signalling constraint per output register.
//! Only the cone carries a Dykstra correction; the affine projections are
//! exact orthogonal projections and need none.

use rand::Rng;

use super::{as_strs, choi_shape, is_cptp, is_nonsignalling, signalling_part, y_label, ChoiChannel};
use crate::error::{Error, Result};
use crate::rng::{ginibre, seeded};
use crate::tensor::{c, project_psd, trace_norm, Matrix, Operator};

#[derive(Clone, Copy, Debug)]
pub struct DykstraParams {
    pub iters: usize,
    pub tol: f64,
}

impl Default for DykstraParams {
    fn default() -> Self {
        Self { iters: 5000, tol: 1e-8 }
    }
}

/// Seeded random non-signalling CPTP Choi matrix. The starting point is a
/// normalized complex Wishart matrix `G G† / tr` with square Ginibre `G`.
pub fn random_nonsignalling_choi(
    d_a: usize,
    d_x: usize,
    d_y: usize,
    n: usize,
    seed: u64,
    params: DykstraParams,
) -> Result<ChoiChannel> {
    let mut rng = seeded(seed);
    let start = wishart(&mut rng, choi_shape(d_a, d_x, d_y, n).total_dim());
    project_nonsignalling(ChoiChannel::from_matrix(start, d_a, d_x, d_y, n)?, params)
}

fn wishart<R: Rng>(rng: &mut R, dim: usize) -> Matrix {
    let g = ginibre(rng, dim, dim);
    let w = &g * g.adjoint();
    let tr = w.trace().re;
    w / c(tr)
}

/// Dykstra projection of `start` onto the CPTP non-signalling set.
pub fn project_nonsignalling(start: ChoiChannel, params: DykstraParams) -> Result<ChoiChannel> {
    let (d_a, d_x, d_y, n) = (start.d_a(), start.d_x(), start.d_y(), start.n());
    let shape = start.omega().shape().clone();
    let mut x = start.omega().matrix().clone();
    let mut correction = Matrix::zeros(x.nrows(), x.ncols());
    let mut last = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    for _ in 0..params.iters {
        let ch = ChoiChannel::from_matrix(x.clone(), d_a, d_x, d_y, n)?;
        let affine = project_affine(&ch)?;
        let shifted = affine.omega().matrix() + &correction;
        let projected = project_psd(&shifted)?;
        correction = shifted - &projected;
        x = projected;

        // x is PSD by construction; only the affine residuals need checking.
        let candidate = ChoiChannel::new(Operator::new(x.clone(), shape.clone())?, d_a, d_x, d_y, n)?;
        let tp = tp_violation(&candidate)?;
        let ns = is_nonsignalling(&candidate)?.max();
        last = (0.0, tp, ns);
        if tp <= params.tol && ns <= params.tol {
            let cptp = is_cptp(&candidate)?;
            if cptp.passes(params.tol) {
                return Ok(candidate);
            }
        }
    }
    Err(Error::NoConvergence { iters: params.iters, psd: last.0, tp: last.1, ns: last.2 })
}

/// One sweep of exact projections onto the affine constraints (TP, then each
/// non-signalling constraint), repeated until the sweep is stationary.
fn project_affine(q: &ChoiChannel) -> Result<ChoiChannel> {
    let mut cur = q.clone();
    for _ in 0..64 {
        let before = cur.omega().matrix().clone();
        cur = project_tp(&cur)?;
        for i in 1..=cur.n() {
            cur = project_ns(&cur, i)?;
        }
        let moved = (cur.omega().matrix() - before).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if moved < 1e-14 {
            break;
        }
    }
    Ok(cur)
}

fn tp_violation(q: &ChoiChannel) -> Result<f64> {
    let mut inputs = vec!["A".to_string()];
    inputs.extend(q.x_labels());
    let marginal = q.omega().partial_trace(&as_strs(&inputs))?;
    let target = Operator::maximally_mixed(marginal.shape().clone());
    Ok(trace_norm(&(&marginal - &target)))
}

/// Replace the `Y`-marginal by `𝟙/(d_A d_X^n)`.
fn project_tp(q: &ChoiChannel) -> Result<ChoiChannel> {
    let mut inputs = vec!["A".to_string()];
    inputs.extend(q.x_labels());
    let marginal = q.omega().partial_trace(&as_strs(&inputs))?;
    let target = Operator::maximally_mixed(marginal.shape().clone());
    let excess = &marginal - &target;
    let d_out = (q.d_y() as f64).powi(q.n() as i32);
    let fix = excess.embed(q.omega().shape())?.scale(1.0 / d_out);
    ChoiChannel::new(q.omega() - &fix, q.d_a(), q.d_x(), q.d_y(), q.n())
}

/// Remove the signalling component of `M_i = tr_{Y≠i} ω`, spread evenly over `Y_{≠i}`.
fn project_ns(q: &ChoiChannel, i: usize) -> Result<ChoiChannel> {
    if q.n() < 2 {
        return Ok(q.clone());
    }
    let mut keep = vec!["A".to_string()];
    keep.extend(q.x_labels());
    keep.push(y_label(i));
    let m_i = q.omega().partial_trace(&as_strs(&keep))?;
    let bad = signalling_part(&m_i, q, i)?;
    let spread = (q.d_y() as f64).powi(q.n() as i32 - 1);
    let fix = bad.embed(q.omega().shape())?.scale(1.0 / spread);
    ChoiChannel::new(q.omega() - &fix, q.d_a(), q.d_x(), q.d_y(), q.n())
}
