//! Euler-Maruyama sampling of hitting times for dX = -V'(X) dt + sqrt(2) dB.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::bounds::{BoundEntry, Status};
use crate::error::{Error, Result};
use crate::measure1d::Measure1D;

/// Immediate hits are reported at this fraction of dt.
pub const IMMEDIATE_FRACTION: f64 = 1e-3;
/// Starting points this close to the boundary of U count as already inside.
pub const BOUNDARY_TOL: f64 = 1e-9;
/// Normal quantile for two-sided 95% intervals.
pub const Z95: f64 = 1.959963984540054;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StartPoint {
    Point(f64),
    Stationary,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimConfig {
    pub x0: StartPoint,
    pub u: (f64, f64),
    pub dt: f64,
    pub t_max: f64,
    pub n_paths: usize,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt <= 1e-2) {
            return Err(Error::Invalid(format!("dt = {} must lie in (0, 1e-2]", self.dt)));
        }
        if !(self.t_max >= 10.0 * self.dt) {
            return Err(Error::Invalid(format!("t_max = {} must be at least 10 dt", self.t_max)));
        }
        if self.n_paths == 0 {
            return Err(Error::Invalid("n_paths must be positive".into()));
        }
        if !(self.u.0 < self.u.1) {
            return Err(Error::Invalid("U must have lo < hi".into()));
        }
        if let StartPoint::Point(x) = self.x0 {
            if x > self.u.0 + BOUNDARY_TOL && x < self.u.1 - BOUNDARY_TOL {
                return Err(Error::Invalid(format!("x0 = {x} lies inside U")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HittingSample {
    pub times: Vec<f64>,
    pub censored: Vec<bool>,
    pub immediate: Vec<bool>,
    pub censored_fraction: f64,
    pub config: SimConfig,
}

impl HittingSample {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Fraction of paths with T > t; None once t reaches the censoring horizon.
    pub fn tail(&self, t: f64) -> Option<(usize, usize)> {
        if t >= self.config.t_max {
            return None;
        }
        let k = self.times.iter().filter(|&&s| s > t).count();
        Some((k, self.times.len()))
    }
}

#[derive(Debug, Clone, Copy)]
struct PathOutcome {
    time: f64,
    censored: bool,
    immediate: bool,
}

fn inside(u: (f64, f64), x: f64) -> bool {
    x > u.0 - BOUNDARY_TOL && x < u.1 + BOUNDARY_TOL
}

fn run_path(m: &Measure1D, cfg: &SimConfig, path: u64) -> Result<PathOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(path);
    let mut x = match cfg.x0 {
        StartPoint::Point(x) => x,
        StartPoint::Stationary => m.quantile(rng.gen::<f64>()),
    };
    let (ua, ub) = cfg.u;
    if inside(cfg.u, x) {
        return Ok(PathOutcome { time: IMMEDIATE_FRACTION * cfg.dt, censored: false, immediate: true });
    }
    let spec = &m.spec;
    let reflect = spec.compact_support();
    let (lo, hi) = (m.lo, m.hi);
    let sd = (2.0 * cfg.dt).sqrt();
    let steps = (cfg.t_max / cfg.dt).ceil() as u64;
    let mut t = 0.0;
    for k in 0..steps {
        let drift = spec.dv(x);
        if !drift.is_finite() {
            return Err(Error::Simulation(format!("non-finite drift at x = {x}, path {path}, step {k}")));
        }
        let z: f64 = rng.sample(StandardNormal);
        let mut y = x - drift * cfg.dt + sd * z;
        if reflect {
            if y > hi {
                y = 2.0 * hi - y;
            }
            if y < lo {
                y = 2.0 * lo - y;
            }
            y = y.clamp(lo, hi);
        }
        let b = if x >= ub { ub } else { ua };
        let crossed = if x >= ub { y < ub } else { y > ua };
        let hit = if crossed {
            Some(t + cfg.dt * (x - b) / (x - y))
        } else {
            // Brownian bridge excursion into U between the two grid points
            let p = (-(x - b) * (y - b) / cfg.dt).exp();
            let r: f64 = rng.gen();
            if r < p { Some(t + 0.5 * cfg.dt) } else { None }
        };
        if let Some(th) = hit {
            if th <= cfg.t_max {
                return Ok(PathOutcome { time: th.max(IMMEDIATE_FRACTION * cfg.dt), censored: false, immediate: false });
            }
            break;
        }
        x = y;
        t = (k + 1) as f64 * cfg.dt;
    }
    Ok(PathOutcome { time: cfg.t_max, censored: true, immediate: false })
}

/// Path i uses ChaCha8 stream i under the run seed, so the sample does not depend on
/// how paths are scheduled.
pub fn simulate_hitting(m: &Measure1D, cfg: &SimConfig) -> Result<HittingSample> {
    cfg.validate()?;
    let outcomes: Vec<PathOutcome> =
        (0..cfg.n_paths as u64).into_par_iter().map(|i| run_path(m, cfg, i)).collect::<Result<_>>()?;
    Ok(assemble(outcomes, cfg.clone()))
}

/// Paths `range` only; concatenating consecutive ranges reproduces `simulate_hitting`.
pub fn simulate_range(m: &Measure1D, cfg: &SimConfig, range: std::ops::Range<u64>) -> Result<HittingSample> {
    cfg.validate()?;
    let outcomes: Vec<PathOutcome> = range.into_par_iter().map(|i| run_path(m, cfg, i)).collect::<Result<_>>()?;
    Ok(assemble(outcomes, cfg.clone()))
}

fn assemble(outcomes: Vec<PathOutcome>, config: SimConfig) -> HittingSample {
    let n = outcomes.len();
    let censored: Vec<bool> = outcomes.iter().map(|o| o.censored).collect();
    let k = censored.iter().filter(|&&c| c).count();
    HittingSample {
        times: outcomes.iter().map(|o| o.time).collect(),
        immediate: outcomes.iter().map(|o| o.immediate).collect(),
        censored,
        censored_fraction: if n == 0 { 0.0 } else { k as f64 / n as f64 },
        config,
    }
}

pub fn merge(parts: Vec<HittingSample>) -> HittingSample {
    let config = parts[0].config.clone();
    let mut times = Vec::new();
    let mut censored = Vec::new();
    let mut immediate = Vec::new();
    for p in parts {
        times.extend(p.times);
        censored.extend(p.censored);
        immediate.extend(p.immediate);
    }
    let n = times.len();
    let k = censored.iter().filter(|&&c| c).count();
    HittingSample { times, censored, immediate, censored_fraction: k as f64 / n as f64, config }
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentEstimate {
    pub estimate: f64,
    pub ci_halfwidth: f64,
    pub reliable: bool,
    pub notes: String,
}

/// Pairwise sum, so the result does not depend on chunking.
fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

fn mean_ci(vals: &[f64]) -> (f64, f64) {
    let n = vals.len() as f64;
    let mean = pairwise_sum(vals) / n;
    let dev: Vec<f64> = vals.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = if vals.len() > 1 { pairwise_sum(&dev) / (n - 1.0) } else { 0.0 };
    (mean, Z95 * (var / n).sqrt())
}

/// Mean of exp(theta T) with a normal-approximation interval.
pub fn exp_moment_estimate(s: &HittingSample, theta: f64) -> Result<MomentEstimate> {
    if !(theta > 0.0) {
        return Err(Error::Invalid("theta must be positive".into()));
    }
    let vals: Vec<f64> = s.times.iter().map(|t| (theta * t).exp()).collect();
    let (estimate, ci_halfwidth) = mean_ci(&vals);
    let mut sorted = vals.clone();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let top = (sorted.len() / 100).max(1);
    let top_share = pairwise_sum(&sorted[..top]) / pairwise_sum(&sorted);
    let mut notes = Vec::new();
    if s.censored_fraction > 0.0 {
        notes.push(format!("censored fraction {:.3e}: estimate is a lower bound", s.censored_fraction));
    }
    if top_share > 0.5 {
        notes.push(format!("top 1% carries {:.1}% of the mass", 100.0 * top_share));
    }
    Ok(MomentEstimate { estimate, ci_halfwidth, reliable: notes.is_empty(), notes: notes.join("; ") })
}

/// Mean of T^q.
pub fn poly_moment_estimate(s: &HittingSample, q: u32) -> MomentEstimate {
    let vals: Vec<f64> = s.times.iter().map(|t| t.powi(q as i32)).collect();
    let (estimate, ci_halfwidth) = mean_ci(&vals);
    let reliable = s.censored_fraction == 0.0;
    let notes = if reliable { String::new() } else { "censored paths: estimate is a lower bound".into() };
    MomentEstimate { estimate, ci_halfwidth, reliable, notes }
}

/// Wilson score interval for k successes out of n.
pub fn wilson(k: usize, n: usize, z: f64) -> (f64, f64) {
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let den = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / den;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / den;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Compare empirical P(T > t) with exp(-rate t) at each t.
pub fn tail_check_rate(s: &HittingSample, rate: f64, t_grid: &[f64], id: &str) -> Result<Vec<BoundEntry>> {
    if s.config.x0 != StartPoint::Stationary {
        return Err(Error::Invalid("tail check needs a stationary start".into()));
    }
    Ok(t_grid
        .iter()
        .map(|&t| {
            let bound = (-rate * t).exp();
            let mut e = BoundEntry::new(id)
                .input("t", t)
                .input("rate", rate)
                .input("n_paths", s.len() as f64);
            match s.tail(t) {
                None => {
                    e.lhs = f64::NAN;
                    e.rhs = bound;
                    e.status = Status::Inconclusive;
                    e.notes = "t beyond the censoring horizon".into();
                }
                Some((k, n)) => {
                    let (lo, hi) = wilson(k, n, Z95);
                    e.lhs = k as f64 / n as f64;
                    e.rhs = bound;
                    e.lower = Some(lo);
                    e.status = if hi <= bound {
                        Status::Pass
                    } else if lo > bound {
                        Status::Fail
                    } else {
                        Status::Inconclusive
                    };
                    e.notes = format!("Wilson 95% interval [{lo:.4e}, {hi:.4e}]");
                    e = e.input("ci_upper", hi);
                }
            }
            e
        })
        .collect())
}

/// P_mu(T_U > t) <= exp(-t mu(U)/(8 C_P (1 - mu(U)))), valid for mu(U) <= 1/2.
pub fn tail_check(s: &HittingSample, c_p: f64, mu_u: f64, t_grid: &[f64]) -> Result<Vec<BoundEntry>> {
    if mu_u > 0.5 {
        return Err(Error::LargeSet(mu_u));
    }
    let rate = mu_u / (8.0 * c_p * (1.0 - mu_u));
    tail_check_rate(s, rate, t_grid, "queue_tail")
}

/// Large-set branch with rate mu(U)^2/(2 C_P).
pub fn tail_check_large(s: &HittingSample, c_p: f64, mu_u: f64, t_grid: &[f64]) -> Result<Vec<BoundEntry>> {
    if mu_u < 0.5 {
        return Err(Error::Invalid(format!("mu(U) = {mu_u} < 1/2; use the small-set bound")));
    }
    tail_check_rate(s, mu_u * mu_u / (2.0 * c_p), t_grid, "queue_tail_large")
}
