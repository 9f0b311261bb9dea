//! Finite reversible Markov chains: hitting-time Laplace transforms, the spectral gap of
//! I - Q^2, Lyapunov certificates and geometric decay, all by dense linear algebra.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Dirichlet, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ROW_TOL: f64 = 1e-12;
pub const REVERSIBLE_TOL: f64 = 1e-10;
pub const STATIONARY_TOL: f64 = 1e-10;
/// TV values below this are left out of the rate fit: rounding in Q^n - pi is about
/// 1e-16 n absolute, and the n-th root turns relative noise at 1e-9 into rate noise above 1e-9.
pub const TV_FLOOR: f64 = 1e-6;

/// JSON chain document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainDoc {
    pub states: Vec<String>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    pub target: String,
}

#[derive(Debug, Clone)]
pub struct ChainModel {
    pub states: Vec<String>,
    pub q: DMatrix<f64>,
    pub pi: DVector<f64>,
    pub reversible: bool,
    pub a: usize,
}

pub fn load_chain(doc: &ChainDoc) -> Result<ChainModel> {
    let n = doc.states.len();
    if n == 0 {
        return Err(Error::Chain("no states".into()));
    }
    if doc.q.len() != n {
        return Err(Error::Chain(format!("Q has {} rows, expected {n}", doc.q.len())));
    }
    for (i, row) in doc.q.iter().enumerate() {
        if row.len() != n {
            return Err(Error::Chain(format!("row {i} has {} entries, expected {n}", row.len())));
        }
    }
    let a = doc
        .states
        .iter()
        .position(|s| *s == doc.target)
        .ok_or_else(|| Error::Chain(format!("target {:?} is not a state", doc.target)))?;
    let q = DMatrix::from_fn(n, n, |i, j| doc.q[i][j]);
    ChainModel::new(doc.states.clone(), q, a)
}

impl ChainModel {
    pub fn new(states: Vec<String>, q: DMatrix<f64>, a: usize) -> Result<Self> {
        let n = q.nrows();
        if q.ncols() != n || states.len() != n {
            return Err(Error::Chain("Q must be square with one row per state".into()));
        }
        if a >= n {
            return Err(Error::Chain(format!("target index {a} out of range")));
        }
        for i in 0..n {
            for j in 0..n {
                let v = q[(i, j)];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::Chain(format!("entry ({i}, {j}) = {v} is not a probability")));
                }
            }
            let s: f64 = q.row(i).sum();
            if (s - 1.0).abs() > ROW_TOL {
                return Err(Error::Chain(format!("row {i} not stochastic (sum {s})")));
            }
        }
        check_irreducible(&q)?;
        check_aperiodic(&q)?;
        let pi = stationary(&q)?;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((pi[i] * q[(i, j)] - pi[j] * q[(j, i)]).abs());
            }
        }
        Ok(ChainModel { states, q, pi, reversible: worst <= REVERSIBLE_TOL, a })
    }

    /// Chain on states "0".."n-1" with target `a`.
    pub fn from_matrix(q: DMatrix<f64>, a: usize) -> Result<Self> {
        let states = (0..q.nrows()).map(|i| i.to_string()).collect();
        Self::new(states, q, a)
    }

    pub fn n(&self) -> usize {
        self.q.nrows()
    }

    fn others(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| i != self.a).collect()
    }

    /// Q restricted to states other than a, and the column of one-step probabilities into a.
    fn killed(&self) -> (DMatrix<f64>, DVector<f64>) {
        let idx = self.others();
        let m = idx.len();
        let qt = DMatrix::from_fn(m, m, |i, j| self.q[(idx[i], idx[j])]);
        let qa = DVector::from_fn(m, |i, _| self.q[(idx[i], self.a)]);
        (qt, qa)
    }

    /// Spectral radius of the killed kernel.
    pub fn killed_radius(&self) -> f64 {
        let (qt, _) = self.killed();
        if qt.nrows() == 0 {
            return 0.0;
        }
        qt.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Divergence threshold 1/r(Q~) of the resolvent.
    pub fn rho_star(&self) -> f64 {
        let r = self.killed_radius();
        if r == 0.0 { f64::INFINITY } else { 1.0 / r }
    }
}

fn reach(q: &DMatrix<f64>, transpose: bool) -> bool {
    let n = q.nrows();
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for j in 0..n {
            let p = if transpose { q[(j, i)] } else { q[(i, j)] };
            if p > 0.0 && !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen.iter().all(|&s| s)
}

fn check_irreducible(q: &DMatrix<f64>) -> Result<()> {
    if reach(q, false) && reach(q, true) {
        Ok(())
    } else {
        Err(Error::Chain("chain is reducible".into()))
    }
}

/// Primitive iff some power up to the Wielandt bound (n-1)^2 + 1 is strictly positive.
fn check_aperiodic(q: &DMatrix<f64>) -> Result<()> {
    let n = q.nrows();
    let pattern = DMatrix::from_fn(n, n, |i, j| if q[(i, j)] > 0.0 { 1u8 } else { 0 });
    let mut p = pattern.clone();
    let cap = (n - 1) * (n - 1) + 1;
    for _ in 1..=cap {
        if p.iter().all(|&v| v > 0) {
            return Ok(());
        }
        let next = DMatrix::from_fn(n, n, |i, j| (0..n).any(|k| p[(i, k)] > 0 && pattern[(k, j)] > 0) as u8);
        p = next;
    }
    Err(Error::Chain("chain is periodic".into()))
}

fn stationary(q: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = q.nrows();
    let mut m = q.transpose() - DMatrix::identity(n, n);
    let mut rhs = DVector::zeros(n);
    for j in 0..n {
        m[(n - 1, j)] = 1.0;
    }
    rhs[n - 1] = 1.0;
    let pi = m.lu().solve(&rhs).ok_or_else(|| Error::Chain("stationarity system is singular".into()))?;
    if pi.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::Chain("stationary distribution not strictly positive".into()));
    }
    let res = (q.transpose() * &pi - &pi).amax();
    if res > STATIONARY_TOL {
        return Err(Error::Chain(format!("pi Q = pi fails by {res:e}")));
    }
    Ok(pi)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Laplace {
    Finite { values: Vec<f64> },
    Divergent { radius: f64 },
}

impl Laplace {
    pub fn values(&self) -> Option<&[f64]> {
        match self {
            Laplace::Finite { values } => Some(values),
            Laplace::Divergent { .. } => None,
        }
    }
}

/// E_x[rho^{T_a}] for all x, with T_a = inf{n >= 0 : X_n = a}.
pub fn hitting_laplace(model: &ChainModel, rho: f64) -> Laplace {
    let r = model.killed_radius();
    if rho * r >= 1.0 {
        return Laplace::Divergent { radius: rho * r };
    }
    let (qt, qa) = model.killed();
    let m = qt.nrows();
    let sys = DMatrix::identity(m, m) - qt * rho;
    let h = match sys.lu().solve(&(qa * rho)) {
        Some(h) => h,
        None => return Laplace::Divergent { radius: rho * r },
    };
    let mut values = vec![1.0; model.n()];
    for (k, &i) in model.others().iter().enumerate() {
        values[i] = h[k];
    }
    Laplace::Finite { values }
}

/// sum_{n <= horizon} rho^n P_x(T_a = n) by dynamic programming on the killed kernel.
pub fn laplace_path_sum(model: &ChainModel, rho: f64, horizon: usize) -> Vec<f64> {
    let (qt, qa) = model.killed();
    // f_n = rho^n Q~^{n-1} q_a
    let mut f = qa * rho;
    let mut acc = f.clone();
    for _ in 2..=horizon {
        f = (&qt * f) * rho;
        acc += &f;
    }
    let mut values = vec![1.0; model.n()];
    for (k, &i) in model.others().iter().enumerate() {
        values[i] = acc[k];
    }
    values
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainGap {
    pub gap2: f64,
    pub c_p_chain: f64,
    pub lambda_op: f64,
    /// Eigenvalues of Q in decreasing order.
    pub eigenvalues: Vec<f64>,
}

/// D^{1/2} Q D^{-1/2}, symmetric under detailed balance.
fn symmetrized(model: &ChainModel) -> DMatrix<f64> {
    let n = model.n();
    let s = DMatrix::from_fn(n, n, |i, j| model.q[(i, j)] * (model.pi[i] / model.pi[j]).sqrt());
    (&s + s.transpose()) * 0.5
}

pub fn chain_gap(model: &ChainModel) -> Result<ChainGap> {
    if !model.reversible {
        return Err(Error::NotReversible);
    }
    let eig = symmetrized(model).symmetric_eigen();
    let mut ev: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
    ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let lambda_op = ev[1..].iter().map(|v| v.abs()).fold(0.0, f64::max);
    let gap2 = 1.0 - lambda_op * lambda_op;
    Ok(ChainGap { gap2, c_p_chain: 1.0 / gap2, lambda_op, eigenvalues: ev })
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainLyapunov {
    pub w: Vec<f64>,
    pub alpha: f64,
    pub b: f64,
    /// max over states of (QW - W + alpha W - b 1_a).
    pub replay: f64,
}

/// W = E_x[rho^{T_a}] with Q W - W <= -alpha W + b 1_a, alpha = 1 - 1/rho.
pub fn chain_lyapunov(model: &ChainModel, rho: f64) -> Result<ChainLyapunov> {
    if !(rho > 1.0) {
        return Err(Error::Invalid(format!("rho = {rho} must exceed 1")));
    }
    let w = match hitting_laplace(model, rho) {
        Laplace::Finite { values } => values,
        Laplace::Divergent { radius } => {
            return Err(Error::Chain(format!("rho = {rho} is beyond the resolvent threshold (radius {radius})")))
        }
    };
    let wv = DVector::from_vec(w.clone());
    let qw = &model.q * &wv;
    let alpha = 1.0 - 1.0 / rho;
    let a = model.a;
    let b = (qw[a] - w[a] + alpha * w[a]).max(0.0);
    let replay = (0..model.n())
        .map(|i| qw[i] - w[i] + alpha * w[i] - if i == a { b } else { 0.0 })
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(ChainLyapunov { w, alpha, b, replay })
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainDecay {
    /// Fitted geometric rate: smallest theta with TV_n(x) <= C(x) theta^n for all n, x.
    pub theta: f64,
    /// C(x) = sqrt((1 - pi_x)/pi_x)/2.
    pub c: Vec<f64>,
    pub horizon: usize,
    /// tv[x][n-1] = ||Q^n(x, .) - pi||_TV.
    pub tv: Vec<Vec<f64>>,
    pub lambda_op: Option<f64>,
    /// max over test functions and n of Var(Q^n f)/(lambda_op^{2n} Var f); None if not reversible.
    pub var_ratio: Option<f64>,
}

pub fn chain_decay(model: &ChainModel, horizon: usize) -> Result<ChainDecay> {
    if horizon == 0 || horizon > 10_000 {
        return Err(Error::Invalid("horizon must be in 1..=10000".into()));
    }
    let n = model.n();
    let c: Vec<f64> = model.pi.iter().map(|&p| 0.5 * ((1.0 - p) / p).sqrt()).collect();
    let qt = model.q.transpose();
    let mut theta: f64 = 0.0;
    let mut tv = Vec::with_capacity(n);
    for x in 0..n {
        let mut p = DVector::zeros(n);
        p[x] = 1.0;
        let mut row = Vec::with_capacity(horizon);
        for k in 1..=horizon {
            p = &qt * p;
            let d = 0.5 * (&p - &model.pi).abs().sum();
            row.push(d);
            if d > TV_FLOOR && c[x] > 0.0 {
                theta = theta.max((d / c[x]).powf(1.0 / k as f64));
            }
        }
        tv.push(row);
    }
    let (lambda_op, var_ratio) = if model.reversible {
        let g = chain_gap(model)?;
        (Some(g.lambda_op), Some(variance_ratio(model, g.lambda_op, horizon.min(100))))
    } else {
        (None, None)
    };
    Ok(ChainDecay { theta, c, horizon, tv, lambda_op, var_ratio })
}

fn var_pi(model: &ChainModel, f: &DVector<f64>) -> f64 {
    let mean = model.pi.dot(f);
    f.iter().zip(model.pi.iter()).map(|(v, p)| p * (v - mean) * (v - mean)).sum()
}

/// Worst Var(Q^n f)/(lambda^{2n} Var f) over indicator test functions and n <= horizon.
fn variance_ratio(model: &ChainModel, lambda: f64, horizon: usize) -> f64 {
    let n = model.n();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let mut f = DVector::zeros(n);
        f[i] = 1.0;
        worst = worst.max(decay_ratio(model, &f, lambda, horizon));
    }
    worst
}

/// max over n <= horizon of Var(Q^n f)/(lambda^{2n} Var f).
pub fn decay_ratio(model: &ChainModel, f: &DVector<f64>, lambda: f64, horizon: usize) -> f64 {
    let v0 = var_pi(model, f);
    if v0 <= 0.0 {
        return 0.0;
    }
    let mut g = f.clone();
    let mut worst: f64 = 0.0;
    for k in 1..=horizon {
        g = &model.q * g;
        let vk = var_pi(model, &g);
        let scale = lambda.powi(2 * k as i32) * v0;
        if scale > 0.0 {
            worst = worst.max(vk / scale);
        } else if vk > 1e-300 {
            worst = f64::INFINITY;
        }
    }
    worst
}

/// Reversible chain with uniform stationary law: Metropolis correction of Dirichlet(1) rows.
pub fn random_reversible_chain<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let dir = Dirichlet::new_with_size(1.0, n).expect("n >= 2");
    let k: Vec<Vec<f64>> = (0..n).map(|_| dir.sample(rng)).collect();
    let mut q = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut off = 0.0;
        for j in 0..n {
            if i != j {
                q[(i, j)] = k[i][j].min(k[j][i]);
                off += q[(i, j)];
            }
        }
        q[(i, i)] = 1.0 - off;
    }
    q
}
