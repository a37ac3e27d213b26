//! Classical learning protocols `P(y_{1:n} | a, x_{1:n})` over finite alphabets
//! and their reduction to mixtures of deterministic classifiers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::tensor::permutations;

/// Largest accepted alphabet size.
pub const MAX_ALPHABET: usize = 8;
/// Largest accepted number of test instances.
pub const MAX_INSTANCES: usize = 4;
/// Largest number of classifying functions `|Y|^{|X|}` enumerated.
pub const MAX_FUNCTIONS: u128 = 1_000_000;
const SLICE_TOL: f64 = 1e-12;

/// Dense conditional table, row-major over `[a][x_1..x_n][y_1..y_n]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassicalProtocol {
    pub nx: usize,
    pub ny: usize,
    pub na: usize,
    pub n: usize,
    pub probs: Vec<f64>,
}

fn digits(mut idx: usize, base: usize, len: usize) -> Vec<usize> {
    let mut out = vec![0; len];
    for slot in out.iter_mut().rev() {
        *slot = idx % base;
        idx /= base;
    }
    out
}

fn number(ds: &[usize], base: usize) -> usize {
    ds.iter().fold(0, |acc, &d| acc * base + d)
}

impl ClassicalProtocol {
    pub fn new(nx: usize, ny: usize, na: usize, n: usize, probs: Vec<f64>) -> Result<Self> {
        let p = Self { nx, ny, na, n, probs };
        p.validate()?;
        Ok(p)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || self.na == 0 || self.n == 0 {
            return Err(Error::Config("alphabet sizes and n must be positive".into()));
        }
        if self.nx > MAX_ALPHABET || self.ny > MAX_ALPHABET {
            return Err(Error::AlphabetTooLarge(self.nx.max(self.ny) as u128));
        }
        if self.n > MAX_INSTANCES {
            return Err(Error::TooManyInstances(self.n));
        }
        let expected = self.na * self.contexts() * self.outcomes();
        if self.probs.len() != expected {
            return Err(Error::DimensionMismatch(format!("table has {} entries, expected {expected}", self.probs.len())));
        }
        if let Some(v) = self.probs.iter().find(|p| **p < 0.0 || !p.is_finite()) {
            return Err(Error::InvalidDistribution(format!("entry {v}")));
        }
        for slice in self.probs.chunks(self.outcomes()) {
            let total: f64 = slice.iter().sum();
            if (total - 1.0).abs() > SLICE_TOL {
                return Err(Error::InvalidDistribution(format!("conditional slice sums to {total}")));
            }
        }
        Ok(())
    }

    /// `|X|^n`.
    pub fn contexts(&self) -> usize {
        self.nx.pow(self.n as u32)
    }

    /// `|Y|^n`.
    pub fn outcomes(&self) -> usize {
        self.ny.pow(self.n as u32)
    }

    fn offset(&self, a: usize, x: usize, y: usize) -> usize {
        (a * self.contexts() + x) * self.outcomes() + y
    }

    pub fn prob(&self, a: usize, xs: &[usize], ys: &[usize]) -> f64 {
        self.probs[self.offset(a, number(xs, self.nx), number(ys, self.ny))]
    }

    /// `P_i(y | a, x_{1:n})`, indexed `[a][x context][y]`.
    fn site_marginal(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.na * self.contexts() * self.ny];
        for a in 0..self.na {
            for x in 0..self.contexts() {
                for y in 0..self.outcomes() {
                    let yi = digits(y, self.ny, self.n)[i];
                    out[(a * self.contexts() + x) * self.ny + yi] += self.probs[self.offset(a, x, y)];
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassicalNsReport {
    /// Per instance `i`: largest change of `P_i(y_i | a, x)` when `x_j`, `j ≠ i`, vary.
    pub per_i_deviation: Vec<f64>,
}

impl ClassicalNsReport {
    pub fn max(&self) -> f64 {
        self.per_i_deviation.iter().cloned().fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max() <= tol
    }
}

pub fn is_nonsignalling_classical(p: &ClassicalProtocol) -> ClassicalNsReport {
    let per_i_deviation = (0..p.n)
        .map(|i| {
            let marg = p.site_marginal(i);
            let mut worst = 0.0f64;
            for a in 0..p.na {
                for xi in 0..p.nx {
                    for yi in 0..p.ny {
                        let vals = (0..p.contexts())
                            .filter(|&x| digits(x, p.nx, p.n)[i] == xi)
                            .map(|x| marg[(a * p.contexts() + x) * p.ny + yi]);
                        let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
                        worst = worst.max(hi - lo);
                    }
                }
            }
            worst
        })
        .collect();
    ClassicalNsReport { per_i_deviation }
}

/// Average of `P(σy | a, σx)` over all permutations `σ` of the instances.
pub fn symmetrize_classical(p: &ClassicalProtocol) -> Result<ClassicalProtocol> {
    if p.n > crate::channels::MAX_SYMMETRIZE_N {
        return Err(Error::TooManyInstances(p.n));
    }
    let perms = permutations(p.n);
    let mut probs = vec![0.0; p.probs.len()];
    for a in 0..p.na {
        for x in 0..p.contexts() {
            let xs = digits(x, p.nx, p.n);
            for y in 0..p.outcomes() {
                let ys = digits(y, p.ny, p.n);
                let total: f64 = perms
                    .iter()
                    .map(|s| {
                        let px: Vec<usize> = s.iter().map(|&k| xs[k]).collect();
                        let py: Vec<usize> = s.iter().map(|&k| ys[k]).collect();
                        p.prob(a, &px, &py)
                    })
                    .sum();
                probs[p.offset(a, x, y)] = total / perms.len() as f64;
            }
        }
    }
    Ok(ClassicalProtocol { probs, ..p.clone() })
}

/// `q_a(y | x)` of instance 1 with the other inputs fixed to 0, indexed `[a][x][y]`,
/// and the largest variation over those other inputs.
pub fn first_marginal(p: &ClassicalProtocol) -> (Vec<Vec<Vec<f64>>>, f64) {
    let marg = p.site_marginal(0);
    let stride = p.nx.pow((p.n - 1) as u32);
    let mut variation = 0.0f64;
    let tables = (0..p.na)
        .map(|a| {
            (0..p.nx)
                .map(|x1| {
                    let reference: Vec<f64> =
                        (0..p.ny).map(|y| marg[(a * p.contexts() + x1 * stride) * p.ny + y]).collect();
                    for rest in 0..stride {
                        for (y, r) in reference.iter().enumerate() {
                            let v = marg[(a * p.contexts() + x1 * stride + rest) * p.ny + y];
                            variation = variation.max((v - r).abs());
                        }
                    }
                    reference
                })
                .collect()
        })
        .collect();
    (tables, variation)
}

/// Weights `μ(f)` over deterministic classifiers `f: X → Y`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierMixture {
    pub nx: usize,
    pub ny: usize,
    /// `functions[k][x] = f_k(x)`.
    pub functions: Vec<Vec<usize>>,
    pub weights: Vec<f64>,
}

impl ClassifierMixture {
    /// `Σ_f μ(f) δ_{y, f(x)}`, indexed `[x][y]`.
    pub fn reconstruct(&self) -> Vec<Vec<f64>> {
        let mut q = vec![vec![0.0; self.ny]; self.nx];
        for (f, w) in self.functions.iter().zip(&self.weights) {
            for (x, &y) in f.iter().enumerate() {
                q[x][y] += w;
            }
        }
        q
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Product measure `μ(f) = Π_x q(f(x) | x)` over all `|Y|^{|X|}` functions, in
/// lexicographic order with `f(0)` most significant. Zero-weight functions are kept.
pub fn decompose_classifier_mixture(q: &[Vec<f64>]) -> Result<ClassifierMixture> {
    let nx = q.len();
    let ny = q.first().map_or(0, Vec::len);
    if nx == 0 || ny == 0 || q.iter().any(|row| row.len() != ny) {
        return Err(Error::DimensionMismatch("q must be a non-empty |X| x |Y| table".into()));
    }
    for row in q {
        let total: f64 = row.iter().sum();
        if (total - 1.0).abs() > SLICE_TOL || row.iter().any(|v| *v < 0.0) {
            return Err(Error::InvalidDistribution(format!("q(.|x) sums to {total}")));
        }
    }
    let count = (ny as u128).checked_pow(nx as u32).unwrap_or(u128::MAX);
    if count > MAX_FUNCTIONS {
        return Err(Error::AlphabetTooLarge(count));
    }
    let count = count as usize;
    let mut functions = Vec::with_capacity(count);
    let mut weights = Vec::with_capacity(count);
    for k in 0..count {
        let f = digits(k, ny, nx);
        weights.push(f.iter().enumerate().map(|(x, &y)| q[x][y]).product());
        functions.push(f);
    }
    Ok(ClassifierMixture { nx, ny, functions, weights })
}

/// `P̃(y_{1:n} | a, x_{1:n}) = Σ_f μ_a(f) Π_i δ_{y_i, f(x_i)}`.
pub fn reconstruct_protocol(mixtures: &[ClassifierMixture], n: usize) -> Result<ClassicalProtocol> {
    let first = mixtures.first().ok_or_else(|| Error::DimensionMismatch("no mixtures".into()))?;
    let (nx, ny) = (first.nx, first.ny);
    if mixtures.iter().any(|m| m.nx != nx || m.ny != ny) {
        return Err(Error::DimensionMismatch("mixtures differ in alphabets".into()));
    }
    let contexts = nx.pow(n as u32);
    let outcomes = ny.pow(n as u32);
    let mut probs = vec![0.0; mixtures.len() * contexts * outcomes];
    for (a, mix) in mixtures.iter().enumerate() {
        for x in 0..contexts {
            let xs = digits(x, nx, n);
            for (f, w) in mix.functions.iter().zip(&mix.weights) {
                let ys: Vec<usize> = xs.iter().map(|&xi| f[xi]).collect();
                probs[(a * contexts + x) * outcomes + number(&ys, ny)] += w;
            }
        }
    }
    ClassicalProtocol::new(nx, ny, mixtures.len(), n, probs)
}

/// `E[P | a] = Σ (1/n) Σ_i [y_i ≠ y'_i] P(y | a, x) Π_i P_XY(x_i, y'_i)`, with
/// `dist[x][y']` a joint pmf.
pub fn classical_expected_risk(p: &ClassicalProtocol, dist: &[Vec<f64>], a: usize) -> Result<f64> {
    if dist.len() != p.nx || dist.iter().any(|row| row.len() != p.ny) {
        return Err(Error::DimensionMismatch("dist must be |X| x |Y|".into()));
    }
    let total: f64 = dist.iter().flatten().sum();
    if (total - 1.0).abs() > SLICE_TOL || dist.iter().flatten().any(|v| *v < 0.0) {
        return Err(Error::InvalidDistribution(format!("P_XY sums to {total}")));
    }
    if a >= p.na {
        return Err(Error::DimensionMismatch(format!("a = {a} outside alphabet of size {}", p.na)));
    }
    // Per instance the loss only involves (x_i, y_i, y'_i), so the sum over y' factorizes:
    // E = (1/n) Σ_i Σ_{x, y} P(y|a,x) Π_{j≠i} p(x_j) · P_XY(x_i, y'_i ≠ y_i).
    let px: Vec<f64> = dist.iter().map(|row| row.iter().sum()).collect();
    let mut risk = 0.0;
    for x in 0..p.contexts() {
        let xs = digits(x, p.nx, p.n);
        for y in 0..p.outcomes() {
            let pr = p.probs[p.offset(a, x, y)];
            if pr == 0.0 {
                continue;
            }
            let ys = digits(y, p.ny, p.n);
            let mut loss = 0.0;
            for i in 0..p.n {
                let others: f64 = (0..p.n).filter(|&j| j != i).map(|j| px[xs[j]]).product();
                loss += others * (px[xs[i]] - dist[xs[i]][ys[i]]);
            }
            risk += pr * loss;
        }
    }
    Ok(risk / p.n as f64)
}

/// Symmetrize, take the first marginal, decompose and rebuild.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MixtureReduction {
    pub symmetrized: ClassicalProtocol,
    pub mixtures: Vec<ClassifierMixture>,
    pub reconstructed: ClassicalProtocol,
    /// Largest dependence of the symmetrized first marginal on the other inputs.
    pub marginal_variation: f64,
}

pub fn mixture_reduction(p: &ClassicalProtocol) -> Result<MixtureReduction> {
    let symmetrized = symmetrize_classical(p)?;
    let (tables, marginal_variation) = first_marginal(&symmetrized);
    let mixtures = tables.iter().map(|q| decompose_classifier_mixture(q)).collect::<Result<Vec<_>>>()?;
    let reconstructed = reconstruct_protocol(&mixtures, p.n)?;
    Ok(MixtureReduction { symmetrized, mixtures, reconstructed, marginal_variation })
}

fn random_simplex<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    // Exponential spacings give the uniform distribution on the simplex.
    let raw: Vec<f64> = (0..k).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Seeded non-signalling protocol: per `a`, a mixture of a product of random
/// per-instance classifiers `Π_i q_{a,i}(y_i | x_i)` and a generalized PR box
/// `P(y|x) = |Y|^{-(n-1)} [Σ_i y_i ≡ g_a(x) mod |Y|]` with random `g_a`.
pub fn random_nonsignalling_classical(nx: usize, ny: usize, na: usize, n: usize, seed: u64) -> Result<ClassicalProtocol> {
    let mut rng = seeded(seed);
    let contexts = nx.pow(n as u32);
    let outcomes = ny.pow(n as u32);
    let mut probs = vec![0.0; na * contexts * outcomes];
    for a in 0..na {
        let w: f64 = rng.gen();
        let local: Vec<Vec<Vec<f64>>> =
            (0..n).map(|_| (0..nx).map(|_| random_simplex(&mut rng, ny)).collect()).collect();
        let g: Vec<usize> = (0..contexts).map(|_| rng.gen_range(0..ny)).collect();
        let box_weight = (ny as f64).powi(-(n as i32 - 1));
        for x in 0..contexts {
            let xs = digits(x, nx, n);
            for y in 0..outcomes {
                let ys = digits(y, ny, n);
                let prod: f64 = (0..n).map(|i| local[i][xs[i]][ys[i]]).product();
                let pr = if ys.iter().sum::<usize>() % ny == g[x] { box_weight } else { 0.0 };
                probs[(a * contexts + x) * outcomes + y] = w * prod + (1.0 - w) * pr;
            }
        }
    }
    ClassicalProtocol::new(nx, ny, na, n, probs)
}

#[cfg(test)]
mod tests;
