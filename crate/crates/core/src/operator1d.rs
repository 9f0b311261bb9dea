//! Dirichlet form of L = d^2/dx^2 - V' d/dx on the measure grid, and the spectral
//! constants built from it.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::measure1d::Measure1D;
use crate::numeric::{dot, interp, norm, SymTridiag};

/// Largest grid used for full decompositions.
pub const SEMIGROUP_CAP: usize = 2048;
/// Minimum cell count when a sub-interval is re-gridded.
pub const RESTRICTED_MIN_POINTS: usize = 256;

/// A zero boundary condition imposed at a cell centre or at a cell face (0..=n).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DirichletNode {
    Center(usize),
    Face(usize),
}

/// f.A.f = sum_k m_k (f_{k} - f_{k-1})^2 / dx^2 with m_k the mu-weight of a cell at face k,
/// and M = diag(w). Reflecting at both ends unless a Dirichlet node is set.
#[derive(Debug, Clone)]
pub struct DirichletForm {
    pub measure: Measure1D,
    /// A[i][i]
    pub stiffness_diag: Vec<f64>,
    /// A[i][i+1]
    pub stiffness_off: Vec<f64>,
    pub mass: Vec<f64>,
    /// V at the faces 0..=n.
    v_face: Vec<f64>,
    pub dirichlet: Option<DirichletNode>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectralResult {
    pub lambda1: f64,
    pub c_p: f64,
    #[serde(skip)]
    pub eigvec: Vec<f64>,
    pub residual: f64,
}

/// Full eigen decomposition of the symmetrized form, used for semigroup evaluation.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub x: Vec<f64>,
    pub sqrt_w: Vec<f64>,
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
}

impl DirichletForm {
    pub fn assemble(m: &Measure1D) -> Self {
        let n = m.n();
        let v_face: Vec<f64> = (0..=n).map(|k| m.spec.v(m.face(k))).collect();
        let mk = |k: usize| (-v_face[k] - m.log_z + m.dx.ln()).exp();
        let dx2 = m.dx * m.dx;
        let mut diag = vec![0.0; n];
        let mut off = vec![0.0; n - 1];
        for k in 1..n {
            let c = mk(k) / dx2;
            diag[k - 1] += c;
            diag[k] += c;
            off[k - 1] = -c;
        }
        DirichletForm {
            measure: m.clone(),
            stiffness_diag: diag,
            stiffness_off: off,
            mass: m.weights.clone(),
            v_face,
            dirichlet: None,
        }
    }

    pub fn with_dirichlet(mut self, node: DirichletNode) -> Self {
        self.dirichlet = Some(node);
        self
    }

    pub fn n(&self) -> usize {
        self.mass.len()
    }

    /// f.A.f
    pub fn energy(&self, f: &[f64]) -> f64 {
        let af = self.apply(f);
        dot(f, &af)
    }

    /// A f (reflecting form, no Dirichlet node).
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let n = self.n();
        (0..n)
            .map(|i| {
                let mut s = self.stiffness_diag[i] * f[i];
                if i > 0 {
                    s += self.stiffness_off[i - 1] * f[i - 1];
                }
                if i + 1 < n {
                    s += self.stiffness_off[i] * f[i + 1];
                }
                s
            })
            .collect()
    }

    /// Snap b to the nearest centre or face.
    pub fn node_at(&self, b: f64) -> DirichletNode {
        let m = &self.measure;
        let s = ((b - m.lo) / m.dx).clamp(0.0, m.n() as f64);
        let k = s.round() as usize;
        let j = (s.floor() as usize).min(m.n() - 1);
        let dc = (s - (j as f64 + 0.5)).abs();
        let df = (s - k as f64).abs();
        if df <= dc {
            DirichletNode::Face(k)
        } else {
            DirichletNode::Center(j)
        }
    }

    /// Symmetrized operator M^-1/2 A M^-1/2 (with the Dirichlet node applied) and the
    /// map from its rows back to grid cells.
    fn symmetric(&self) -> (SymTridiag, Vec<usize>) {
        let m = &self.measure;
        let n = self.n();
        let dx2 = m.dx * m.dx;
        let mut d = vec![0.0; n];
        let mut e = vec![0.0; n.saturating_sub(1)];
        for k in 1..n {
            let (i, j) = (k - 1, k);
            d[i] += (m.v[i] - self.v_face[k]).exp() / dx2;
            d[j] += (m.v[j] - self.v_face[k]).exp() / dx2;
            e[i] = -(0.5 * (m.v[i] + m.v[j]) - self.v_face[k]).exp() / dx2;
        }
        let mut keep: Vec<usize> = (0..n).collect();
        match self.dirichlet {
            None => {}
            Some(DirichletNode::Center(j)) => {
                keep.remove(j);
                if j > 0 {
                    e[j - 1] = 0.0;
                }
                if j < n - 1 {
                    e[j] = 0.0;
                }
            }
            Some(DirichletNode::Face(k)) => {
                // zero value on the face: each adjacent half cell carries 2 m_k / dx^2
                if k > 0 {
                    let i = k - 1;
                    let c = (m.v[i] - self.v_face[k]).exp() / dx2;
                    d[i] += if k < n { c } else { 2.0 * c };
                }
                if k < n {
                    let c = (m.v[k] - self.v_face[k]).exp() / dx2;
                    d[k] += if k > 0 { c } else { 2.0 * c };
                }
                if k > 0 && k < n {
                    e[k - 1] = 0.0;
                }
            }
        }
        let dd: Vec<f64> = keep.iter().map(|&i| d[i]).collect();
        let ee: Vec<f64> = keep.windows(2).map(|w| if w[1] == w[0] + 1 { e[w[0]] } else { 0.0 }).collect();
        (SymTridiag::new(dd, ee), keep)
    }

    /// Smallest eigenvalue of A f = lambda M f with f M-orthogonal to constants, or the
    /// smallest Dirichlet eigenvalue when a node is set.
    pub fn principal(&self) -> Result<SpectralResult> {
        let (t, keep) = self.symmetric();
        let sqrt_w: Vec<f64> = keep.iter().map(|&i| self.mass[i].sqrt()).collect();
        let (k, against) = match self.dirichlet {
            None => {
                let s = norm(&sqrt_w);
                (1, vec![sqrt_w.iter().map(|v| v / s).collect::<Vec<f64>>()])
            }
            Some(_) => (0, vec![]),
        };
        let lambda = t.eigenvalue(k);
        let refs: Vec<&[f64]> = against.iter().map(|v| v.as_slice()).collect();
        let y = t.eigenvector(lambda, &refs);
        let ty = t.mul(&y);
        let r: Vec<f64> = ty.iter().zip(&y).map(|(a, b)| a - lambda * b).collect();
        let scale = t.bounds().1.abs().max(1.0);
        let residual = norm(&r) / scale;
        if !(residual <= 1e-8) || !(lambda > 0.0) {
            return Err(Error::NoConvergence { residual });
        }
        let mut f = vec![0.0; self.n()];
        for (idx, &i) in keep.iter().enumerate() {
            f[i] = y[idx] / sqrt_w[idx];
        }
        Ok(SpectralResult { lambda1: lambda, c_p: 1.0 / lambda, eigvec: f, residual })
    }

    /// All eigenpairs of the reflecting form, on a grid of at most SEMIGROUP_CAP cells.
    pub fn decompose(&self) -> Result<Decomposition> {
        if self.dirichlet.is_some() {
            return Err(Error::Invalid("decomposition is defined for the reflecting form".into()));
        }
        let coarse;
        let form = if self.n() > SEMIGROUP_CAP {
            let m = &self.measure;
            coarse = DirichletForm::assemble(&Measure1D::build_on(&m.spec, m.lo, m.hi, SEMIGROUP_CAP)?);
            &coarse
        } else {
            self
        };
        let (t, _) = form.symmetric();
        let (values, vectors) = t.eigen_all();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NoConvergence { residual: f64::NAN });
        }
        Ok(Decomposition {
            x: form.measure.x.clone(),
            sqrt_w: form.mass.iter().map(|w| w.sqrt()).collect(),
            values,
            vectors,
        })
    }
}

impl Decomposition {
    /// Spectral coefficients of f (given on the decomposition grid) in the M-orthonormal basis.
    pub fn coefficients(&self, f: &[f64]) -> Vec<f64> {
        let g: Vec<f64> = f.iter().zip(&self.sqrt_w).map(|(a, b)| a * b).collect();
        self.vectors.iter().map(|v| dot(v, &g)).collect()
    }

    /// Var(P_t f) = sum_{k>=1} c_k^2 exp(-2 lambda_k t).
    pub fn variance_curve(&self, f: &[f64], times: &[f64]) -> Vec<f64> {
        let mean: f64 = f.iter().zip(&self.sqrt_w).map(|(a, b)| a * b * b).sum();
        let centred: Vec<f64> = f.iter().map(|v| v - mean).collect();
        let c = self.coefficients(&centred);
        times
            .iter()
            .map(|&t| {
                c.iter()
                    .zip(&self.values)
                    .skip(1)
                    .map(|(ck, lk)| ck * ck * (-2.0 * lk * t).exp())
                    .sum()
            })
            .collect()
    }

    /// Relative gap between sum c_k^2 and the weighted variance (Parseval).
    pub fn parseval_error(&self, f: &[f64]) -> f64 {
        let mean: f64 = f.iter().zip(&self.sqrt_w).map(|(a, b)| a * b * b).sum();
        let centred: Vec<f64> = f.iter().map(|v| v - mean).collect();
        let var: f64 = centred.iter().zip(&self.sqrt_w).map(|(a, b)| a * a * b * b).sum();
        let c = self.coefficients(&centred);
        let s: f64 = c.iter().map(|v| v * v).sum();
        (s - var).abs() / var.max(f64::MIN_POSITIVE)
    }

    pub fn lambda1(&self) -> f64 {
        self.values[1]
    }
}

/// Global Poincare constant.
pub fn poincare_constant(form: &DirichletForm) -> Result<SpectralResult> {
    if form.dirichlet.is_some() {
        return Err(Error::Invalid("poincare_constant needs the reflecting form".into()));
    }
    form.principal()
}

/// Poincare constant of mu restricted to [a, b] and renormalized. The interval is
/// re-gridded at the form's spacing (at least RESTRICTED_MIN_POINTS cells).
pub fn restricted_poincare(form: &DirichletForm, a: f64, b: f64) -> Result<SpectralResult> {
    let m = &form.measure;
    let a = a.max(m.lo);
    let b = b.min(m.hi);
    let covered = m.x.iter().filter(|&&x| x >= a && x <= b).count();
    if covered < 8 {
        return Err(Error::TooFewPoints(covered));
    }
    let eps = 1e-12 * (m.hi - m.lo);
    if a <= m.lo + eps && b >= m.hi - eps {
        return poincare_constant(form);
    }
    let n = (((b - a) / m.dx).round() as usize).max(RESTRICTED_MIN_POINTS);
    let sub = Measure1D::build_on(&m.spec, a, b, n)?;
    poincare_constant(&DirichletForm::assemble(&sub))
}

/// Smallest Dirichlet eigenvalue with a zero condition at `node`.
pub fn dirichlet_principal(m: &Measure1D, node: DirichletNode) -> Result<SpectralResult> {
    DirichletForm::assemble(m).with_dirichlet(node).principal()
}

/// sup over f with f(b) = 0 of int f^2 dmu / int f'^2 dmu.
pub fn hardy_constant(form: &DirichletForm, b: f64) -> Result<f64> {
    let node = form.node_at(b);
    let r = form.clone().with_dirichlet(node).principal()?;
    Ok(r.c_p)
}

/// Two-sided Muckenhoupt quantity around the median.
pub fn muckenhoupt_constant(m: &Measure1D) -> f64 {
    let n = m.n();
    let med = m.median;
    let inv_rho = |i: usize| (m.v[i] + m.log_z).exp();
    // right side
    let mut best: f64 = 0.0;
    let kstart = (((med - m.lo) / m.dx).floor() as usize).min(n - 1);
    let mut acc = (m.face(kstart + 1) - med) * inv_rho(kstart);
    for k in kstart + 1..n {
        best = best.max((1.0 - m.face_cdf[k]) * acc);
        acc += m.dx * inv_rho(k);
    }
    let mut left: f64 = 0.0;
    let mut acc = (med - m.face(kstart)) * inv_rho(kstart);
    for k in (1..=kstart).rev() {
        left = left.max(m.face_cdf[k] * acc);
        acc += m.dx * inv_rho(k - 1);
    }
    best.max(left)
}

/// C'_C = sup_x min(F, 1 - F) / density, over interior faces.
pub fn cheeger_constant(m: &Measure1D) -> f64 {
    (1..m.n())
        .map(|k| {
            let f = m.face_cdf[k];
            f.min(1.0 - f) / m.density(m.face(k))
        })
        .fold(0.0, f64::max)
}

/// Mean-centred L1 constant over half-line indicators: sup 2F(1-F)/density.
pub fn cheeger_constant_mean(m: &Measure1D) -> f64 {
    (1..m.n())
        .map(|k| {
            let f = m.face_cdf[k];
            2.0 * f * (1.0 - f) / m.density(m.face(k))
        })
        .fold(0.0, f64::max)
}

/// Var(P_t f) for f on the form's grid. Grids above SEMIGROUP_CAP are re-gridded and f is
/// interpolated.
pub fn semigroup_variance(form: &DirichletForm, f: &[f64], times: &[f64]) -> Result<Vec<f64>> {
    let dec = form.decompose()?;
    let g: Vec<f64> = if dec.x.len() == f.len() {
        f.to_vec()
    } else {
        dec.x.iter().map(|&x| interp(&form.measure.x, f, x)).collect()
    };
    Ok(dec.variance_curve(&g, times))
}
