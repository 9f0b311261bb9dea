//! Small dense helpers: log-sum-exp and symmetric tridiagonal eigen work.

/// log(sum(exp(x_i))), -inf for an empty or all -inf input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// log(e^a + e^b)
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Solve a general tridiagonal system with partial pivoting (the dgtsv scheme).
/// `dl[i]` couples row i+1 to column i, `du[i]` couples row i to column i+1.
/// Returns None on an exactly zero pivot.
pub fn solve_tridiag(dl: &[f64], d: &[f64], du: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    solve_tridiag_impl(dl, d, du, b, false)
}

fn solve_tridiag_impl(dl: &[f64], d: &[f64], du: &[f64], b: &[f64], nudge: bool) -> Option<Vec<f64>> {
    let n = d.len();
    assert!(b.len() == n && (n == 0 || (dl.len() == n - 1 && du.len() == n - 1)));
    if n == 0 {
        return Some(vec![]);
    }
    let mut dl = dl.to_vec();
    let mut d = d.to_vec();
    let mut du = du.to_vec();
    du.push(0.0);
    dl.push(0.0);
    let mut b = b.to_vec();
    let scale = d.iter().chain(du.iter()).map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
    let tiny = scale * f64::EPSILON;
    for i in 0..n.saturating_sub(1) {
        if d[i].abs() >= dl[i].abs() {
            if d[i] == 0.0 {
                if !nudge {
                    return None;
                }
                d[i] = tiny;
            }
            let fact = dl[i] / d[i];
            d[i + 1] -= fact * du[i];
            b[i + 1] -= fact * b[i];
            dl[i] = 0.0;
        } else {
            let fact = d[i] / dl[i];
            d[i] = dl[i];
            let temp = d[i + 1];
            d[i + 1] = du[i] - fact * temp;
            if i + 2 < n {
                dl[i] = du[i + 1];
                du[i + 1] = -fact * dl[i];
            } else {
                dl[i] = 0.0;
            }
            du[i] = temp;
            let t = b[i];
            b[i] = b[i + 1];
            b[i + 1] = t - fact * b[i + 1];
        }
    }
    if d[n - 1] == 0.0 {
        if !nudge {
            return None;
        }
        d[n - 1] = tiny;
    }
    b[n - 1] /= d[n - 1];
    if n > 1 {
        b[n - 2] = (b[n - 2] - du[n - 2] * b[n - 1]) / d[n - 2];
    }
    for i in (0..n.saturating_sub(2)).rev() {
        b[i] = (b[i] - du[i] * b[i + 1] - dl[i] * b[i + 2]) / d[i];
    }
    if b.iter().all(|v| v.is_finite()) {
        Some(b)
    } else {
        None
    }
}

/// Symmetric tridiagonal matrix: diagonal `d`, off-diagonal `e` (len n-1).
#[derive(Debug, Clone)]
pub struct SymTridiag {
    pub d: Vec<f64>,
    pub e: Vec<f64>,
}

impl SymTridiag {
    pub fn new(d: Vec<f64>, e: Vec<f64>) -> Self {
        assert!(d.is_empty() || e.len() + 1 == d.len());
        SymTridiag { d, e }
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = self.d[i] * x[i];
            if i > 0 {
                s += self.e[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                s += self.e[i] * x[i + 1];
            }
            y[i] = s;
        }
        y
    }

    /// Gershgorin interval containing the spectrum.
    pub fn bounds(&self) -> (f64, f64) {
        let n = self.len();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let mut r = 0.0;
            if i > 0 {
                r += self.e[i - 1].abs();
            }
            if i + 1 < n {
                r += self.e[i].abs();
            }
            lo = lo.min(self.d[i] - r);
            hi = hi.max(self.d[i] + r);
        }
        (lo, hi)
    }

    /// Number of eigenvalues strictly below x (Sturm sequence).
    pub fn count_below(&self, x: f64) -> usize {
        let n = self.len();
        let (lo, hi) = self.bounds();
        let pivmin = f64::MIN_POSITIVE.max(f64::EPSILON * (hi.abs().max(lo.abs())) * 1e-3);
        let mut count = 0;
        let mut q = self.d[0] - x;
        if q.abs() < pivmin {
            q = -pivmin;
        }
        if q < 0.0 {
            count += 1;
        }
        for i in 1..n {
            q = self.d[i] - x - self.e[i - 1] * self.e[i - 1] / q;
            if q.abs() < pivmin {
                q = -pivmin;
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// k-th smallest eigenvalue (0-based) by bisection.
    pub fn eigenvalue(&self, k: usize) -> f64 {
        let (mut lo, mut hi) = self.bounds();
        let span = hi - lo;
        lo -= 1e-12 * span.max(1.0);
        hi += 1e-12 * span.max(1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.count_below(mid) > k {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 4.0 * f64::EPSILON * lo.abs().max(hi.abs()) {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    /// Eigenvector for an (accurate) eigenvalue by inverse iteration, orthogonalized
    /// against `against` (unit vectors of nearby eigenvalues).
    pub fn eigenvector(&self, lambda: f64, against: &[&[f64]]) -> Vec<f64> {
        let n = self.len();
        let (lo, hi) = self.bounds();
        let shift = lambda + 4.0 * f64::EPSILON * lo.abs().max(hi.abs()).max(1.0);
        let dl = self.e.clone();
        let du = self.e.clone();
        let d: Vec<f64> = self.d.iter().map(|v| v - shift).collect();
        let mut y: Vec<f64> = (0..n)
            .map(|i| 1.0 + 0.37 * ((i as f64) * 0.618_033_988_7).sin())
            .collect();
        for _ in 0..4 {
            for u in against {
                let c: f64 = y.iter().zip(u.iter()).map(|(a, b)| a * b).sum();
                for (yi, ui) in y.iter_mut().zip(u.iter()) {
                    *yi -= c * ui;
                }
            }
            let nrm = norm(&y);
            for v in y.iter_mut() {
                *v /= nrm;
            }
            y = solve_tridiag_impl(&dl, &d, &du, &y, true).unwrap_or_else(|| vec![1.0; n]);
        }
        for u in against {
            let c: f64 = y.iter().zip(u.iter()).map(|(a, b)| a * b).sum();
            for (yi, ui) in y.iter_mut().zip(u.iter()) {
                *yi -= c * ui;
            }
        }
        let nrm = norm(&y);
        for v in y.iter_mut() {
            *v /= nrm;
        }
        y
    }

    /// All eigenpairs, ascending. O(n^2); meant for n up to a few thousand.
    pub fn eigen_all(&self) -> (Vec<f64>, Vec<Vec<f64>>) {
        let n = self.len();
        let vals: Vec<f64> = (0..n).map(|k| self.eigenvalue(k)).collect();
        let (lo, hi) = self.bounds();
        let tol = 1e-7 * lo.abs().max(hi.abs()).max(1.0);
        let mut vecs: Vec<Vec<f64>> = Vec::with_capacity(n);
        for k in 0..n {
            let mut j = k;
            while j > 0 && vals[k] - vals[j - 1] < tol {
                j -= 1;
            }
            let against: Vec<&[f64]> = vecs[j..k].iter().map(|v| v.as_slice()).collect();
            let v = self.eigenvector(vals[k], &against);
            vecs.push(v);
        }
        (vals, vecs)
    }
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Linear interpolation of a table (xs increasing) at x, clamped at the ends.
pub fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let k = xs.partition_point(|&v| v <= x).min(n - 1).max(1);
    let t = (x - xs[k - 1]) / (xs[k] - xs[k - 1]);
    ys[k - 1] + t * (ys[k] - ys[k - 1])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian(n: usize) -> SymTridiag {
        SymTridiag::new(vec![2.0; n], vec![-1.0; n - 1])
    }

    #[test]
    fn lse_matches_naive() {
        let xs = [-1.0, -2.0, -3.0];
        let naive = xs.iter().map(|v: &f64| v.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&xs) - naive).abs() < 1e-14);
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert!((log_add(0.0, 0.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn dirichlet_laplacian_spectrum() {
        let n = 50;
        let t = laplacian(n);
        for k in [0, 1, 7, 49] {
            let exact = 2.0 - 2.0 * (((k + 1) as f64) * std::f64::consts::PI / (n as f64 + 1.0)).cos();
            assert!((t.eigenvalue(k) - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn eigenvectors_orthonormal() {
        let n = 40;
        let t = SymTridiag::new((0..n).map(|i| (i as f64 * 0.3).sin() + 2.0).collect(), vec![-0.7; n - 1]);
        let (vals, vecs) = t.eigen_all();
        for k in 0..n {
            let r: Vec<f64> = t.mul(&vecs[k]).iter().zip(&vecs[k]).map(|(a, b)| a - vals[k] * b).collect();
            assert!(norm(&r) < 1e-10);
            for j in 0..k {
                assert!(dot(&vecs[j], &vecs[k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pivoted_solve() {
        let dl = [1.0, 5.0, 0.5];
        let d = [1e-3, 2.0, -1.0, 3.0];
        let du = [4.0, 1.0, 2.0];
        let x = [1.0, -2.0, 3.0, 0.5];
        let b: Vec<f64> = (0..4)
            .map(|i| {
                let mut s = d[i] * x[i];
                if i > 0 {
                    s += dl[i - 1] * x[i - 1];
                }
                if i < 3 {
                    s += du[i] * x[i + 1];
                }
                s
            })
            .collect();
        let y = solve_tridiag(&dl, &d, &du, &b).unwrap();
        for i in 0..4 {
            assert!((y[i] - x[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn interp_clamps() {
        let xs = [0.0, 1.0, 2.0];
        let ys = [0.0, 10.0, 30.0];
        assert_eq!(interp(&xs, &ys, -1.0), 0.0);
        assert_eq!(interp(&xs, &ys, 1.5), 20.0);
        assert_eq!(interp(&xs, &ys, 9.0), 30.0);
    }
}
