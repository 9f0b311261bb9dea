//! One-dimensional Gibbs measures mu(dx) = Z^-1 exp(-V(x)) dx on a uniform midpoint grid.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::log_sum_exp;

/// Tail cut: the domain ends where V - min V reaches this level.
pub const TRUNCATION_LEVEL: f64 = 40.0;
/// Half-width cap for families whose truncation point is astronomically far.
pub const HALF_WIDTH_CAP: f64 = 64.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Gaussian,
    ExpPower,
    DoubleWell,
    HeavyTail,
    Uniform,
    CustomTable,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::ExpPower => "exp_power",
            Family::DoubleWell => "double_well",
            Family::HeavyTail => "heavy_tail",
            Family::Uniform => "uniform",
            Family::CustomTable => "custom_table",
        }
    }

    fn keys(self) -> &'static [(&'static str, f64)] {
        match self {
            Family::Gaussian => &[("sigma", 1.0)],
            Family::ExpPower => &[("p", 1.0)],
            Family::DoubleWell => &[("a", 1.0), ("h", 1.0)],
            Family::HeavyTail => &[("alpha", 3.0)],
            Family::Uniform => &[("r", 1.0)],
            Family::CustomTable => &[],
        }
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "gaussian" => Family::Gaussian,
            "exp_power" => Family::ExpPower,
            "double_well" => Family::DoubleWell,
            "heavy_tail" => Family::HeavyTail,
            "uniform" => Family::Uniform,
            "custom_table" => Family::CustomTable,
            other => return Err(Error::Spec(format!("unknown family '{other}'"))),
        })
    }
}

/// A potential family with parameters. Every family also accepts `shift` (c) and
/// `scale` (u), meaning x -> V0(u (x - c)).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub family: Family,
    pub params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<(f64, f64)>>,
}

impl PotentialSpec {
    fn with(family: Family, kv: &[(&str, f64)]) -> Self {
        PotentialSpec {
            family,
            params: kv.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            domain: None,
            table: None,
        }
    }

    pub fn gaussian(sigma: f64) -> Self {
        Self::with(Family::Gaussian, &[("sigma", sigma)])
    }

    pub fn exp_power(p: f64) -> Self {
        Self::with(Family::ExpPower, &[("p", p)])
    }

    pub fn double_well(a: f64, h: f64) -> Self {
        Self::with(Family::DoubleWell, &[("a", a), ("h", h)])
    }

    pub fn heavy_tail(alpha: f64) -> Self {
        Self::with(Family::HeavyTail, &[("alpha", alpha)])
    }

    pub fn uniform(r: f64) -> Self {
        Self::with(Family::Uniform, &[("r", r)])
    }

    /// Piecewise-linear V through the given (x, V) points; support is the table range
    /// unless a domain is set.
    pub fn custom_table(points: Vec<(f64, f64)>) -> Self {
        PotentialSpec { family: Family::CustomTable, params: BTreeMap::new(), domain: None, table: Some(points) }
    }

    pub fn with_domain(mut self, lo: f64, hi: f64) -> Self {
        self.domain = Some((lo, hi));
        self
    }

    pub fn shifted(mut self, c: f64) -> Self {
        let old = self.shift();
        self.params.insert("shift".into(), old + c);
        if let Some((lo, hi)) = self.domain {
            self.domain = Some((lo + c, hi + c));
        }
        self
    }

    pub fn scaled(mut self, u: f64) -> Self {
        let c = self.shift();
        let old = self.scale();
        self.params.insert("scale".into(), old * u);
        if let Some((lo, hi)) = self.domain {
            self.domain = Some((c + (lo - c) / u, c + (hi - c) / u));
        }
        self
    }

    pub fn param(&self, key: &str) -> f64 {
        if let Some(v) = self.params.get(key) {
            return *v;
        }
        match key {
            "shift" => 0.0,
            "scale" => 1.0,
            _ => self.family.keys().iter().find(|(k, _)| *k == key).map(|(_, v)| *v).unwrap_or(f64::NAN),
        }
    }

    fn shift(&self) -> f64 {
        self.param("shift")
    }

    fn scale(&self) -> f64 {
        self.param("scale")
    }

    pub fn validate(&self) -> Result<()> {
        for (k, v) in &self.params {
            let known = k == "shift" || k == "scale" || self.family.keys().iter().any(|(kk, _)| kk == k);
            if !known {
                return Err(Error::Spec(format!("unknown parameter '{k}' for {}", self.family.name())));
            }
            if !v.is_finite() {
                return Err(Error::Spec(format!("parameter '{k}' is not finite")));
            }
        }
        if self.scale() <= 0.0 {
            return Err(Error::Spec("scale must be positive".into()));
        }
        let pos = |k: &str| -> Result<()> {
            if self.param(k) > 0.0 {
                Ok(())
            } else {
                Err(Error::Spec(format!("parameter '{k}' must be positive")))
            }
        };
        match self.family {
            Family::Gaussian => pos("sigma")?,
            Family::ExpPower => pos("p")?,
            Family::DoubleWell => {
                pos("h")?;
                if self.param("a") < 0.0 {
                    return Err(Error::Spec("parameter 'a' must be nonnegative".into()));
                }
            }
            Family::HeavyTail => pos("alpha")?,
            Family::Uniform => pos("r")?,
            Family::CustomTable => {
                let t = self.table.as_ref().ok_or_else(|| Error::Spec("custom_table needs a table".into()))?;
                if t.len() < 2 {
                    return Err(Error::Spec("custom_table needs at least two points".into()));
                }
                if t.windows(2).any(|w| w[1].0 <= w[0].0) || t.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
                    return Err(Error::Spec("custom_table abscissae must be finite and strictly increasing".into()));
                }
            }
        }
        if let Some((lo, hi)) = self.domain {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Spec(format!("bad domain [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    fn base_v(&self, y: f64) -> f64 {
        match self.family {
            Family::Gaussian => {
                let s = self.param("sigma");
                y * y / (2.0 * s * s)
            }
            Family::ExpPower => y.abs().powf(self.param("p")),
            Family::DoubleWell => {
                let a = self.param("a");
                let d = y * y - a * a;
                self.param("h") * d * d
            }
            Family::HeavyTail => 0.5 * (1.0 + self.param("alpha")) * (y * y).ln_1p(),
            Family::Uniform => {
                let r = self.param("r");
                if y.abs() <= r * (1.0 + 1e-12) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            Family::CustomTable => self.table_eval(y).0,
        }
    }

    fn base_dv(&self, y: f64) -> f64 {
        match self.family {
            Family::Gaussian => {
                let s = self.param("sigma");
                y / (s * s)
            }
            Family::ExpPower => {
                if y == 0.0 {
                    0.0
                } else {
                    let p = self.param("p");
                    p * y.signum() * y.abs().powf(p - 1.0)
                }
            }
            Family::DoubleWell => {
                let a = self.param("a");
                4.0 * self.param("h") * y * (y * y - a * a)
            }
            Family::HeavyTail => (1.0 + self.param("alpha")) * y / (1.0 + y * y),
            Family::Uniform => 0.0,
            Family::CustomTable => self.table_eval(y).1,
        }
    }

    fn base_d2v(&self, y: f64) -> f64 {
        match self.family {
            Family::Gaussian => {
                let s = self.param("sigma");
                1.0 / (s * s)
            }
            Family::ExpPower => {
                let p = self.param("p");
                if p == 1.0 {
                    0.0
                } else {
                    p * (p - 1.0) * y.abs().powf(p - 2.0)
                }
            }
            Family::DoubleWell => {
                let a = self.param("a");
                self.param("h") * (12.0 * y * y - 4.0 * a * a)
            }
            Family::HeavyTail => {
                let q = 1.0 + y * y;
                (1.0 + self.param("alpha")) * (1.0 - y * y) / (q * q)
            }
            Family::Uniform | Family::CustomTable => 0.0,
        }
    }

    fn table_eval(&self, y: f64) -> (f64, f64) {
        let t = self.table.as_ref().expect("custom_table without table");
        let n = t.len();
        let k = t.partition_point(|p| p.0 <= y).clamp(1, n - 1);
        let (x0, v0) = t[k - 1];
        let (x1, v1) = t[k];
        let slope = (v1 - v0) / (x1 - x0);
        (v0 + slope * (y - x0), slope)
    }

    pub fn v(&self, x: f64) -> f64 {
        self.base_v(self.scale() * (x - self.shift()))
    }

    /// Weak derivative; 0 at |x|-type kinks.
    pub fn dv(&self, x: f64) -> f64 {
        let u = self.scale();
        u * self.base_dv(u * (x - self.shift()))
    }

    pub fn d2v(&self, x: f64) -> f64 {
        let u = self.scale();
        u * u * self.base_d2v(u * (x - self.shift()))
    }

    pub fn compact_support(&self) -> bool {
        matches!(self.family, Family::Uniform | Family::CustomTable)
    }

    /// Half-width of the base (unshifted, unscaled) truncation and whether the cap was hit.
    fn base_half_width(&self) -> (f64, bool) {
        let l = TRUNCATION_LEVEL;
        let w = match self.family {
            Family::Gaussian => self.param("sigma") * (2.0 * l).sqrt(),
            Family::ExpPower => l.powf(1.0 / self.param("p")),
            Family::DoubleWell => {
                let a = self.param("a");
                (a * a + (l / self.param("h")).sqrt()).sqrt()
            }
            Family::HeavyTail => {
                let k = 0.5 * (1.0 + self.param("alpha"));
                ((l / k).exp() - 1.0).sqrt()
            }
            Family::Uniform => self.param("r"),
            Family::CustomTable => f64::NAN,
        };
        if w > HALF_WIDTH_CAP {
            (HALF_WIDTH_CAP, true)
        } else {
            (w, false)
        }
    }

    /// Domain after the truncation rule (or the explicit domain when set).
    pub fn resolved_domain(&self) -> (f64, f64) {
        if let Some(d) = self.domain {
            return d;
        }
        if self.family == Family::CustomTable {
            let t = self.table.as_ref().expect("custom_table without table");
            return (t[0].0, t[t.len() - 1].0);
        }
        let (w, _) = self.base_half_width();
        let c = self.shift();
        let u = self.scale();
        (c - w / u, c + w / u)
    }

    /// True when the default truncation was limited by the half-width cap.
    pub fn truncation_capped(&self) -> bool {
        self.domain.is_none() && self.family != Family::CustomTable && self.base_half_width().1
    }

    /// Untruncated polynomial tails: no exponential moment of any hitting time is finite.
    pub fn polynomial_tails(&self) -> bool {
        self.domain.is_none() && self.family == Family::HeavyTail
    }

    pub fn parse(s: &str) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for PotentialSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (fam, rest) = match s.split_once(':') {
            Some((f, r)) => (f, r),
            None => (s, ""),
        };
        let family: Family = fam.parse()?;
        if family == Family::CustomTable {
            return Err(Error::Spec("custom_table is available through the library only".into()));
        }
        let mut spec = PotentialSpec { family, params: BTreeMap::new(), domain: None, table: None };
        let mut lo = None;
        let mut hi = None;
        for item in rest.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::Spec(format!("expected key=value, got '{item}'")))?;
            let val: f64 = v.trim().parse().map_err(|_| Error::Spec(format!("bad number '{}'", v.trim())))?;
            match k.trim() {
                "lo" => lo = Some(val),
                "hi" => hi = Some(val),
                key => {
                    spec.params.insert(key.to_string(), val);
                }
            }
        }
        match (lo, hi) {
            (Some(l), Some(h)) => spec.domain = Some((l, h)),
            (None, None) => {}
            _ => return Err(Error::Spec("lo and hi must be given together".into())),
        }
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for PotentialSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.family.name())?;
        let mut parts: Vec<String> = self.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
        if let Some((lo, hi)) = self.domain {
            parts.push(format!("lo={lo}"));
            parts.push(format!("hi={hi}"));
        }
        if !parts.is_empty() {
            write!(f, ":{}", parts.join(","))?;
        }
        Ok(())
    }
}

/// A discretized Gibbs measure. Cell i covers [lo + i dx, lo + (i+1) dx] and carries
/// the midpoint weight w_i proportional to exp(-V(x_i)) dx.
#[derive(Debug, Clone)]
pub struct Measure1D {
    pub spec: PotentialSpec,
    pub lo: f64,
    pub hi: f64,
    pub dx: f64,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub weights: Vec<f64>,
    /// Cumulative weight at the cell faces, length n+1.
    pub face_cdf: Vec<f64>,
    pub log_z: f64,
    pub z: f64,
    pub mean: f64,
    pub variance: f64,
    pub median: f64,
    pub mean_abs_dev: f64,
    pub a_min: f64,
    pub v_min: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MeasureSummary {
    pub potential: String,
    pub n_points: usize,
    pub lo: f64,
    pub hi: f64,
    pub dx: f64,
    pub z: f64,
    pub mean: f64,
    pub variance: f64,
    pub median: f64,
    pub mean_abs_dev: f64,
    pub a_min: f64,
    pub truncation_capped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelRadii {
    pub r_minus: f64,
    pub r_plus: f64,
    pub capped_minus: bool,
    pub capped_plus: bool,
}

impl LevelRadii {
    pub fn r(&self) -> f64 {
        self.r_minus.max(self.r_plus)
    }

    pub fn capped(&self) -> bool {
        self.capped_minus || self.capped_plus
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuperlinearCertificate {
    pub beta: f64,
    pub r_minus: f64,
    pub r_plus: f64,
    pub r: f64,
    pub c_beta: f64,
    pub h_beta: f64,
    pub valid: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl Measure1D {
    /// Build on the spec's resolved domain with `n_points` cells.
    pub fn build(spec: &PotentialSpec, n_points: usize) -> Result<Self> {
        spec.validate()?;
        let (lo, hi) = spec.resolved_domain();
        Self::build_on(spec, lo, hi, n_points)
    }

    pub fn build_on(spec: &PotentialSpec, lo: f64, hi: f64, n_points: usize) -> Result<Self> {
        if n_points < 64 {
            return Err(Error::Invalid(format!("n_points = {n_points} < 64")));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Invalid(format!("domain [{lo}, {hi}] must be finite and nonempty")));
        }
        let dx = (hi - lo) / n_points as f64;
        let x: Vec<f64> = (0..n_points).map(|i| lo + (i as f64 + 0.5) * dx).collect();
        let mut v = Vec::with_capacity(n_points);
        for &xi in &x {
            let vi = spec.v(xi);
            if !vi.is_finite() {
                return Err(Error::NonFinite(xi));
            }
            v.push(vi);
        }
        Self::from_values(spec.clone(), lo, hi, x, v)
    }

    fn from_values(spec: PotentialSpec, lo: f64, hi: f64, x: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        let n = x.len();
        let dx = (hi - lo) / n as f64;
        let v_min = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let lw: Vec<f64> = v.iter().map(|vi| -(vi - v_min)).collect();
        let lse = log_sum_exp(&lw);
        if !lse.is_finite() {
            return Err(Error::ZeroMass);
        }
        let weights: Vec<f64> = lw.iter().map(|l| (l - lse).exp()).collect();
        let log_z = -v_min + lse + dx.ln();
        let mut face_cdf = Vec::with_capacity(n + 1);
        let mut acc = 0.0;
        face_cdf.push(0.0);
        for w in &weights {
            acc += w;
            face_cdf.push(acc);
        }
        let total = acc;
        for f in face_cdf.iter_mut() {
            *f /= total;
        }
        let mean: f64 = weights.iter().zip(&x).map(|(w, xi)| w * xi).sum();
        let variance: f64 = weights.iter().zip(&x).map(|(w, xi)| w * (xi - mean).powi(2)).sum();
        let mean_abs_dev: f64 = weights.iter().zip(&x).map(|(w, xi)| w * (xi - mean).abs()).sum();
        let tol = 1e-12 * v_min.abs().max(1.0);
        let first = v.iter().position(|&vi| vi <= v_min + tol).unwrap_or(0);
        let mut last = first;
        while last + 1 < n && v[last + 1] <= v_min + tol {
            last += 1;
        }
        let a_min = 0.5 * (x[first] + x[last]);
        let mut m = Measure1D {
            spec,
            lo,
            hi,
            dx,
            x,
            v,
            weights,
            face_cdf,
            log_z,
            z: log_z.exp(),
            mean,
            variance,
            median: 0.0,
            mean_abs_dev,
            a_min,
            v_min,
        };
        m.median = m.quantile(0.5);
        Ok(m)
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn face(&self, k: usize) -> f64 {
        self.lo + k as f64 * self.dx
    }

    pub fn summary(&self) -> MeasureSummary {
        MeasureSummary {
            potential: self.spec.to_string(),
            n_points: self.n(),
            lo: self.lo,
            hi: self.hi,
            dx: self.dx,
            z: self.z,
            mean: self.mean,
            variance: self.variance,
            median: self.median,
            mean_abs_dev: self.mean_abs_dev,
            a_min: self.a_min,
            truncation_capped: self.spec.truncation_capped(),
        }
    }

    /// Normalized Lebesgue density exp(-V(x))/Z.
    pub fn density(&self, x: f64) -> f64 {
        (-self.spec.v(x) - self.log_z).exp()
    }

    /// Cumulative weight, piecewise linear between faces; clamped to 0 and 1 outside.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.lo {
            return 0.0;
        }
        if x >= self.hi {
            return 1.0;
        }
        let s = (x - self.lo) / self.dx;
        let k = (s.floor() as usize).min(self.n() - 1);
        let t = s - k as f64;
        (self.face_cdf[k] + t * (self.face_cdf[k + 1] - self.face_cdf[k])).clamp(0.0, 1.0)
    }

    /// Inverse of `cdf`, p in [0, 1].
    pub fn quantile(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        let n = self.n();
        let k = self.face_cdf.partition_point(|&f| f <= p).clamp(1, n) - 1;
        let w = self.face_cdf[k + 1] - self.face_cdf[k];
        let t = if w > 0.0 { ((p - self.face_cdf[k]) / w).clamp(0.0, 1.0) } else { 0.0 };
        self.face(k) + t * self.dx
    }

    /// mu([a, b]) for a <= b.
    pub fn mass(&self, a: f64, b: f64) -> f64 {
        (self.cdf(b) - self.cdf(a)).max(0.0)
    }

    /// Quadrature of f against mu.
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.weights.iter().zip(&self.x).map(|(w, &x)| w * f(x)).sum()
    }

    /// Grid convexity of V (second differences >= -tol).
    pub fn is_log_concave(&self, tol: f64) -> bool {
        let scale = self.dx * self.dx;
        self.v.windows(3).all(|w| (w[2] - 2.0 * w[1] + w[0]) / scale >= -tol)
    }

    /// sup over the grid of V'' - V'^2/2.
    pub fn c_m(&self) -> f64 {
        self.x
            .iter()
            .map(|&x| {
                let d = self.spec.dv(x);
                self.spec.d2v(x) - 0.5 * d * d
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Radii of the beta-level segment around a_min. The crossing is located by linear
    /// interpolation between grid steps; radii stop at the domain edge with a cap flag.
    pub fn level_radii(&self, beta: f64) -> LevelRadii {
        let a = self.a_min;
        let va = self.spec.v(a);
        let side = |dir: f64| -> (f64, bool) {
            let limit = if dir > 0.0 { self.hi - a } else { a - self.lo };
            let mut prev_u = 0.0;
            let mut prev_g = 0.0;
            let mut k = 1usize;
            loop {
                let u = k as f64 * self.dx;
                if u >= limit {
                    let g = self.spec.v(a + dir * limit) - va;
                    if g > beta {
                        let t = (beta - prev_g) / (g - prev_g);
                        return (prev_u + t * (limit - prev_u), false);
                    }
                    return (limit, true);
                }
                let g = self.spec.v(a + dir * u) - va;
                if g > beta {
                    let t = (beta - prev_g) / (g - prev_g);
                    return (prev_u + t * (u - prev_u), false);
                }
                prev_u = u;
                prev_g = g;
                k += 1;
            }
        };
        let (r_plus, capped_plus) = side(1.0);
        let (r_minus, capped_minus) = side(-1.0);
        LevelRadii { r_minus, r_plus, capped_minus, capped_plus }
    }

    /// Tail grid points (t, V(a +- t) - V(a)) beyond the level radii.
    fn tail_points(&self, lr: &LevelRadii) -> Vec<(f64, f64)> {
        let a = self.a_min;
        let va = self.spec.v(a);
        let mut pts = Vec::new();
        for (&x, &vx) in self.x.iter().zip(&self.v) {
            let t = (x - a).abs();
            let r = if x >= a { lr.r_plus } else { lr.r_minus };
            if t >= r && t > 0.0 {
                pts.push((t, vx - va));
            }
        }
        pts
    }

    /// Canonical (c_beta, h_beta): h = 0 with the largest admissible slope when that
    /// slope is positive; otherwise a geometric scan of 512 slopes.
    pub fn superlinear_certificate(&self, beta: f64) -> SuperlinearCertificate {
        let lr = self.level_radii(beta);
        let r = lr.r();
        let mut cert = SuperlinearCertificate {
            beta,
            r_minus: lr.r_minus,
            r_plus: lr.r_plus,
            r,
            c_beta: f64::INFINITY,
            h_beta: 0.0,
            valid: false,
            reason: None,
        };
        if lr.capped_minus || lr.capped_plus {
            cert.reason = Some("compact support".into());
            return cert;
        }
        let pts = self.tail_points(&lr);
        let has_right = self.x.iter().any(|&x| x - self.a_min >= lr.r_plus && x > self.a_min);
        let has_left = self.x.iter().any(|&x| self.a_min - x >= lr.r_minus && x < self.a_min);
        if pts.is_empty() || !has_left || !has_right || r <= 0.0 {
            cert.reason = Some("compact support".into());
            return cert;
        }
        let c0 = r * pts.iter().map(|(t, g)| g / t).fold(f64::INFINITY, f64::min);
        if c0.is_finite() && c0 > 0.0 {
            cert.c_beta = c0;
            cert.h_beta = 0.0;
            cert.valid = true;
            return cert;
        }
        let h_of = |c: f64| -> f64 { pts.iter().map(|(t, g)| c / r * t - g).fold(0.0, f64::max) };
        let cmax = r * pts.iter().map(|(t, g)| g / t).fold(0.0, f64::max);
        if !(cmax > 0.0) {
            cert.reason = Some("no positive slope works".into());
            return cert;
        }
        let ns = 512;
        let cmin = cmax * 1e-6;
        let mut best: Option<(f64, f64)> = None;
        let mut smallest_h: Option<(f64, f64)> = None;
        for k in (0..ns).rev() {
            let c = cmin * (cmax / cmin).powf(k as f64 / (ns - 1) as f64);
            let h = h_of(c);
            if h <= 2.0 * beta && best.is_none() {
                best = Some((c, h));
            }
            if smallest_h.is_none_or(|(_, hh)| h < hh) {
                smallest_h = Some((c, h));
            }
        }
        let (c, h) = best.or(smallest_h).expect("nonempty slope scan");
        cert.c_beta = c;
        cert.h_beta = h;
        cert.valid = true;
        cert
    }

    /// Largest violation of the superlinear inequality over the tail grid (<= 0 means sound).
    pub fn certificate_violation(&self, cert: &SuperlinearCertificate) -> f64 {
        let lr = LevelRadii { r_minus: cert.r_minus, r_plus: cert.r_plus, capped_minus: false, capped_plus: false };
        self.tail_points(&lr)
            .iter()
            .map(|(t, g)| cert.c_beta / cert.r * t - cert.h_beta - g)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// mu_beta: density exp(-V) outside N_beta and the constant exp(-(V(a)+beta)) inside.
    pub fn modified_measure(&self, beta: f64) -> Result<Measure1D> {
        let cert = self.superlinear_certificate(beta);
        if !cert.valid {
            return Err(Error::NotSuperlinear);
        }
        let a = self.a_min;
        let flat = self.spec.v(a) + beta;
        let (l, r) = (a - cert.r_minus, a + cert.r_plus);
        let v: Vec<f64> = self
            .x
            .iter()
            .zip(&self.v)
            .map(|(&x, &vx)| if x >= l && x <= r { flat } else { vx })
            .collect();
        let table: Vec<(f64, f64)> = self.x.iter().cloned().zip(v.iter().cloned()).collect();
        let spec = PotentialSpec::custom_table(table).with_domain(self.lo, self.hi);
        Measure1D::from_values(spec, self.lo, self.hi, self.x.clone(), v)
    }
}

/// Upper estimate of R(beta)^2 from the superlinear lemma.
pub fn lemma_radii_upper(var: f64, beta: f64, c: f64, h: f64) -> f64 {
    12.0 * var * beta.exp() * (1.0 + 2.0 * h.exp() / c)
}

/// Lower estimate of R(beta)^2 from the superlinear lemma.
pub fn lemma_radii_lower(var: f64, beta: f64, c: f64, h: f64) -> f64 {
    0.5 * var * (-beta).exp() / (1.0 / 3.0 + h.exp() / c * (1.0 + 2.0 / c + 2.0 / (c * c)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn laplace() -> Measure1D {
        Measure1D::build(&PotentialSpec::exp_power(1.0).with_domain(-40.0, 40.0), 4096).unwrap()
    }

    #[test]
    fn laplace_moments() {
        let m = laplace();
        assert_relative_eq!(m.z, 2.0, max_relative = 1e-3);
        assert!(m.mean.abs() < 1e-10);
        assert_relative_eq!(m.variance, 2.0, max_relative = 1e-3);
        assert_relative_eq!(m.mean_abs_dev, 1.0, max_relative = 1e-3);
    }

    #[test]
    fn gaussian_moments() {
        let m = Measure1D::build(&PotentialSpec::gaussian(1.0).with_domain(-8.0, 8.0), 4096).unwrap();
        assert_relative_eq!(m.variance, 1.0, max_relative = 1e-6);
        assert_relative_eq!(m.z, (2.0 * std::f64::consts::PI).sqrt(), max_relative = 1e-6);
        assert!((m.cdf(0.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn uniform_basics() {
        let m = Measure1D::build(&PotentialSpec::uniform(1.0), 512).unwrap();
        assert_eq!((m.lo, m.hi), (-1.0, 1.0));
        assert_relative_eq!(m.z, 2.0, max_relative = 1e-12);
        assert_relative_eq!(m.variance, 1.0 / 3.0, max_relative = 1e-5);
        assert!(m.median.abs() < 1e-12);
        assert!((m.cdf(0.5) - 0.75).abs() < 1e-12);
        assert_eq!(m.a_min, 0.0);
    }

    #[test]
    fn laplace_cdf() {
        let m = laplace();
        assert!((m.cdf(2f64.ln()) - 0.75).abs() < 1e-4);
        assert_eq!(m.cdf(-100.0), 0.0);
        assert_eq!(m.cdf(100.0), 1.0);
    }

    #[test]
    fn weights_normalized() {
        for spec in catalog() {
            let m = Measure1D::build(&spec, 1024).unwrap();
            assert!((m.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12, "{spec}");
            let fm = m.cdf(m.median);
            assert!((fm - 0.5).abs() < 1e-9);
        }
    }

    fn catalog() -> Vec<PotentialSpec> {
        vec![
            PotentialSpec::gaussian(1.0),
            PotentialSpec::exp_power(1.0),
            PotentialSpec::exp_power(1.5),
            PotentialSpec::exp_power(4.0),
            PotentialSpec::double_well(1.0, 1.0),
            PotentialSpec::uniform(1.0),
            PotentialSpec::heavy_tail(3.0),
            PotentialSpec::heavy_tail(4.0),
        ]
    }

    #[test]
    fn level_radii_examples() {
        let lr = laplace().level_radii(1.0);
        assert!((lr.r_minus - 1.0).abs() < 1e-9 && (lr.r_plus - 1.0).abs() < 1e-9);
        let g = Measure1D::build(&PotentialSpec::gaussian(1.0), 4096).unwrap();
        let lr = g.level_radii(2.0);
        assert!((lr.r_plus - 2.0).abs() < 1e-4 && (lr.r_minus - 2.0).abs() < 1e-4);
        let u = Measure1D::build(&PotentialSpec::uniform(1.0), 512).unwrap();
        let lr = u.level_radii(0.7);
        assert_eq!((lr.r_minus, lr.r_plus), (1.0, 1.0));
        assert!(lr.capped());
    }

    #[test]
    fn certificate_examples() {
        let c = laplace().superlinear_certificate(1.0);
        assert!(c.valid);
        assert!((c.c_beta - 1.0).abs() < 1e-9 && c.h_beta == 0.0);
        let g = Measure1D::build(&PotentialSpec::gaussian(1.0), 4096).unwrap();
        let c = g.superlinear_certificate(2.0);
        assert!(c.valid && (c.c_beta - 2.0).abs() < 1e-2 && c.h_beta == 0.0);
        let q = Measure1D::build(&PotentialSpec::exp_power(4.0), 4096).unwrap();
        let c = q.superlinear_certificate(1.0);
        assert!(c.valid && (c.c_beta - 1.0).abs() < 1e-2 && c.h_beta == 0.0);
        let u = Measure1D::build(&PotentialSpec::uniform(1.0), 512).unwrap();
        let c = u.superlinear_certificate(1.0);
        assert!(!c.valid);
        assert_eq!(c.reason.as_deref(), Some("compact support"));
    }

    #[test]
    fn certificates_replay() {
        for spec in catalog() {
            let m = Measure1D::build(&spec, 2048).unwrap();
            for beta in [0.5, 1.0, 2.0, 5.0] {
                let c = m.superlinear_certificate(beta);
                if c.valid {
                    assert!(m.certificate_violation(&c) <= 1e-9, "{spec} beta={beta}");
                }
            }
        }
    }

    #[test]
    fn radii_lemma_for_laplace() {
        let m = laplace();
        let c = m.superlinear_certificate(1.0);
        let r2 = c.r * c.r;
        let up = lemma_radii_upper(m.variance, 1.0, c.c_beta, c.h_beta);
        let low = lemma_radii_lower(m.variance, 1.0, c.c_beta, c.h_beta);
        assert!((up - 12.0 * 2.0 * 1f64.exp() * 3.0).abs() < 0.5);
        assert!((low - 0.0690).abs() < 1e-3);
        assert!(low <= r2 && r2 <= up);
    }

    #[test]
    fn modified_measure_ratio() {
        let m = laplace();
        let mb = m.modified_measure(1.0).unwrap();
        let c = m.superlinear_certificate(1.0);
        let hi = (2.0f64).exp() * (1.0 + 2.0 * c.h_beta.exp() / c.c_beta);
        let lo = (-1.0f64).exp();
        for (wb, w) in mb.weights.iter().zip(&m.weights) {
            let ratio = wb / w;
            assert!(ratio >= lo * (1.0 - 1e-9) && ratio <= hi * (1.0 + 1e-9));
        }
        // flat inside [-1, 1]
        let i = m.x.iter().position(|&x| x > -0.5).unwrap();
        let j = m.x.iter().position(|&x| x > 0.5).unwrap();
        assert!((mb.weights[i] - mb.weights[j]).abs() < 1e-15);
    }

    #[test]
    fn modified_measure_small_beta_converges() {
        let g = Measure1D::build(&PotentialSpec::gaussian(1.0), 4096).unwrap();
        let mut prev = f64::INFINITY;
        for beta in [0.5, 0.1, 0.01, 0.001] {
            let mb = g.modified_measure(beta).unwrap();
            let tv: f64 = 0.5 * mb.weights.iter().zip(&g.weights).map(|(a, b)| (a - b).abs()).sum::<f64>();
            assert!(tv < prev);
            prev = tv;
        }
        assert!(prev < 1e-3);
    }

    #[test]
    fn modified_measure_needs_certificate() {
        let u = Measure1D::build(&PotentialSpec::uniform(1.0), 512).unwrap();
        assert_eq!(u.modified_measure(1.0).unwrap_err(), Error::NotSuperlinear);
    }

    #[test]
    fn quadrature_halving() {
        for spec in catalog() {
            let (n1, n2) = if spec.family == Family::ExpPower && spec.param("p") < 2.0 {
                (1 << 16, 1 << 17)
            } else {
                (4096, 8192)
            };
            let a = Measure1D::build(&spec, n1).unwrap();
            let b = Measure1D::build(&spec, n2).unwrap();
            let rel = |x: f64, y: f64, s: f64| (x - y).abs() / s;
            let s = a.variance.sqrt();
            assert!(rel(a.z, b.z, a.z) < 1e-6, "{spec} Z");
            assert!(rel(a.mean, b.mean, s) < 1e-6, "{spec} mean");
            assert!(rel(a.variance, b.variance, a.variance) < 1e-6, "{spec} var");
        }
    }

    #[test]
    fn parse_roundtrip() {
        let s: PotentialSpec = "double_well:a=1,h=1".parse().unwrap();
        assert_eq!(s, PotentialSpec::double_well(1.0, 1.0));
        let s: PotentialSpec = "gaussian:sigma=2,lo=-3,hi=3".parse().unwrap();
        assert_eq!(s.domain, Some((-3.0, 3.0)));
        assert_eq!(s.to_string().parse::<PotentialSpec>().unwrap(), s);
        assert!("gaussian:sigma=-1".parse::<PotentialSpec>().is_err());
        assert!("cauchy".parse::<PotentialSpec>().is_err());
        assert!("gaussian:mu=1".parse::<PotentialSpec>().is_err());
        assert!("uniform:r".parse::<PotentialSpec>().is_err());
    }

    #[test]
    fn nonfinite_potential_reported() {
        let spec = PotentialSpec::uniform(1.0).with_domain(-2.0, 2.0);
        match Measure1D::build(&spec, 64) {
            Err(Error::NonFinite(x)) => assert!(x.abs() > 1.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncation_rule() {
        let (lo, hi) = PotentialSpec::exp_power(1.0).resolved_domain();
        assert_relative_eq!(hi, 40.0, max_relative = 1e-12);
        assert_eq!(lo, -hi);
        assert!(PotentialSpec::heavy_tail(3.0).truncation_capped());
        assert!(!PotentialSpec::gaussian(1.0).truncation_capped());
    }

    #[test]
    fn heavy_tail_derivatives() {
        let s = PotentialSpec::heavy_tail(3.0);
        let h = 1e-5;
        for x in [-3.0, -0.4, 0.7, 5.0] {
            let fd = (s.v(x + h) - s.v(x - h)) / (2.0 * h);
            assert!((fd - s.dv(x)).abs() < 1e-7);
            let fd2 = (s.dv(x + h) - s.dv(x - h)) / (2.0 * h);
            assert!((fd2 - s.d2v(x)).abs() < 1e-6);
        }
    }

    #[test]
    fn gaussian_c_m() {
        let g = Measure1D::build(&PotentialSpec::gaussian(1.0), 4096).unwrap();
        assert!((g.c_m() - 1.0).abs() < 1e-4);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn translation_invariance(c in -3.0f64..3.0, which in 0usize..4) {
            let base = [PotentialSpec::gaussian(1.0), PotentialSpec::exp_power(1.5),
                        PotentialSpec::double_well(1.0, 1.0), PotentialSpec::uniform(1.0)][which].clone();
            let a = Measure1D::build(&base, 1024).unwrap();
            let b = Measure1D::build(&base.clone().shifted(c), 1024).unwrap();
            prop_assert!((b.mean - (a.mean + c)).abs() < 1e-10);
            prop_assert!((b.variance - a.variance).abs() < 1e-10 * a.variance.max(1.0));
            prop_assert!((b.z - a.z).abs() < 1e-10 * a.z);
        }

        #[test]
        fn scaling_covariance(which in 0usize..4) {
            let base = [PotentialSpec::gaussian(1.0), PotentialSpec::exp_power(1.5),
                        PotentialSpec::double_well(1.0, 1.0), PotentialSpec::exp_power(4.0)][which].clone();
            let a = Measure1D::build(&base, 2048).unwrap();
            let b = Measure1D::build(&base.clone().scaled(2.0), 2048).unwrap();
            prop_assert!((4.0 * b.variance - a.variance).abs() < 1e-8 * a.variance);
        }

        #[test]
        fn cdf_monotone(x1 in -10.0f64..10.0, dx in 0.0f64..5.0) {
            let m = Measure1D::build(&PotentialSpec::gaussian(1.0), 512).unwrap();
            prop_assert!(m.cdf(x1) <= m.cdf(x1 + dx));
            let p = m.cdf(x1);
            if p > 1e-6 && p < 1.0 - 1e-6 {
                prop_assert!((m.quantile(p) - x1).abs() < 1e-8);
            }
        }
    }
}
