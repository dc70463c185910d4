//! Dense linear-algebra kernel: numeric rank, pseudoinverse, eigensolvers,
//! subspace operations, a small LMI feasibility solver and an
//! equality-constrained QP solver.
//!
//! Matrix storage and the SVD/eigen/LU factorizations are provided by
//! `nalgebra`; the solvers on top of them live here.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default relative rank tolerance: `1e-9 * max(rows, cols)`.
pub fn default_rel_tol(rows: usize, cols: usize) -> f64 {
    1e-9 * rows.max(cols) as f64
}

fn check_finite(m: &DMatrix<f64>, name: &str) -> Result<()> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(format!("{name} contains non-finite entries")));
    }
    Ok(())
}

/// Outcome of a numeric rank test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankReport {
    pub numeric_rank: usize,
    /// Singular values sorted descending.
    pub singular_values: Vec<f64>,
    pub tolerance_used: f64,
}

impl RankReport {
    /// `sigma_k / sigma_1` for the k-th singular value (1-based); 0 when out of range.
    pub fn conditioning(&self, k: usize) -> f64 {
        if k == 0 || k > self.singular_values.len() || self.singular_values[0] == 0.0 {
            return 0.0;
        }
        self.singular_values[k - 1] / self.singular_values[0]
    }
}

/// Numeric rank of `m`: the number of singular values above `rel_tol * sigma_max`.
pub fn numeric_rank(m: &DMatrix<f64>, rel_tol: f64) -> Result<RankReport> {
    if m.is_empty() {
        return Err(Error::InvalidInput("numeric_rank: empty matrix".into()));
    }
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(Error::InvalidInput(format!(
            "numeric_rank: rel_tol must lie in (0, 1), got {rel_tol}"
        )));
    }
    check_finite(m, "numeric_rank input")?;
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let sigma_max = sv.first().copied().unwrap_or(0.0);
    let tol = rel_tol * sigma_max;
    let rank = sv.iter().filter(|&&s| s > tol).count();
    Ok(RankReport { numeric_rank: rank, singular_values: sv, tolerance_used: tol })
}

/// Moore-Penrose pseudoinverse via SVD, zeroing singular values below
/// `rel_tol * sigma_max`.
pub fn pseudo_inverse(m: &DMatrix<f64>, rel_tol: f64) -> Result<DMatrix<f64>> {
    if m.is_empty() {
        return Err(Error::InvalidInput("pseudo_inverse: empty matrix".into()));
    }
    check_finite(m, "pseudo_inverse input")?;
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd with u");
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let tol = rel_tol * sigma_max;
    let k = svd.singular_values.len();
    let mut sinv = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        let s = svd.singular_values[i];
        if s > tol {
            sinv[(i, i)] = 1.0 / s;
        }
    }
    Ok(v_t.transpose() * sinv * u.transpose())
}

/// Largest eigenvalue magnitude of a square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    if !m.is_square() || m.is_empty() {
        return Err(Error::InvalidInput("spectral_radius: matrix must be square and non-empty".into()));
    }
    check_finite(m, "spectral_radius input")?;
    Ok(m.clone().complex_eigenvalues().iter().map(|l| l.norm()).fold(0.0, f64::max))
}

/// Largest eigenvalue of a symmetric matrix.
pub fn symmetric_eig_max(m: &DMatrix<f64>) -> Result<f64> {
    symmetric_eigenvalues(m).map(|ev| ev.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
}

/// All eigenvalues of a symmetric matrix (unordered).
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    if !m.is_square() || m.is_empty() {
        return Err(Error::InvalidInput("symmetric eigensolver: matrix must be square".into()));
    }
    check_finite(m, "symmetric eigensolver input")?;
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-8 * scale {
        return Err(Error::InvalidInput("symmetric eigensolver: matrix is not symmetric".into()));
    }
    let sym = (m + m.transpose()) * 0.5;
    Ok(sym.symmetric_eigen().eigenvalues.iter().copied().collect())
}

/// `dim(U ∩ V) = rank(U) + rank(V) - rank([U V])` for column-span bases.
pub fn subspace_intersection_dim(u_basis: &DMatrix<f64>, v_basis: &DMatrix<f64>) -> Result<usize> {
    if u_basis.nrows() != v_basis.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "subspace bases have different ambient dimensions ({} vs {})",
            u_basis.nrows(),
            v_basis.nrows()
        )));
    }
    let tol = default_rel_tol(u_basis.nrows(), u_basis.ncols().max(v_basis.ncols()));
    let ru = numeric_rank(u_basis, tol)?.numeric_rank;
    let rv = numeric_rank(v_basis, tol)?.numeric_rank;
    let mut joint = DMatrix::zeros(u_basis.nrows(), u_basis.ncols() + v_basis.ncols());
    joint.view_mut((0, 0), (u_basis.nrows(), u_basis.ncols())).copy_from(u_basis);
    joint
        .view_mut((0, u_basis.ncols()), (v_basis.nrows(), v_basis.ncols()))
        .copy_from(v_basis);
    let rj = numeric_rank(&joint, tol)?.numeric_rank;
    Ok(ru + rv - rj)
}

/// Orthonormal basis of the (right) null space of `m`, as columns.
pub fn null_space(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let tol = rel_tol * sigma_max.max(1e-300);
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let n = m.ncols();
    // v_t is k x n with k = min(rows, cols); rows of v_t past `rank` span part of
    // the kernel, and coordinates absent from v_t entirely are also kernel.
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for i in rank..v_t.nrows() {
        cols.push(v_t.row(i).transpose());
    }
    if v_t.nrows() < n {
        // Complete to a full kernel basis via QR of the orthogonal complement.
        let mut full = DMatrix::<f64>::zeros(n, v_t.nrows() + 0);
        full.copy_from(&v_t.transpose());
        let compl = orthogonal_complement(&full);
        for j in 0..compl.ncols() {
            cols.push(compl.column(j).into_owned());
        }
    }
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Orthonormal basis of the left null space of `m` (vectors v with vᵀ m = 0).
pub fn left_null_space(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    null_space(&m.transpose(), rel_tol)
}

/// Orthonormal basis of the orthogonal complement of the column span of `m`.
fn orthogonal_complement(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let proj = m * m.transpose();
    let mut cols = Vec::new();
    for j in 0..n {
        let e = DVector::from_fn(n, |i, _| if i == j { 1.0 } else { 0.0 });
        let mut r = &e - &proj * &e;
        for c in &cols {
            let c: &DVector<f64> = c;
            let d = c.dot(&r);
            r -= c * d;
        }
        if r.norm() > 1e-10 {
            r /= r.norm();
            cols.push(r);
        }
    }
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Feasibility status of an LMI solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LmiStatus {
    Feasible,
    /// Proven infeasible by an analytic certificate.
    Infeasible,
    /// Iteration cap reached without reaching the margin; no certificate either way.
    Unknown,
}

/// Result of [`lmi_feasibility`].
#[derive(Debug, Clone)]
pub struct LmiCertificate {
    /// Decision vector at the best iterate (unit norm).
    pub q: DVector<f64>,
    /// `lambda_min` of the assembled matrix at `q`.
    pub min_eig_achieved: f64,
    pub status: LmiStatus,
}

impl LmiCertificate {
    pub fn feasible(&self) -> bool {
        self.status == LmiStatus::Feasible
    }
}

/// Options for the LMI solver.
#[derive(Debug, Clone)]
pub struct LmiOptions {
    /// Required `lambda_min` relative to `max(1, lambda_max)` of the assembled matrix.
    pub margin: f64,
    pub max_iters: usize,
    pub restarts: usize,
    /// Optional warm-start decision vector.
    pub initial: Option<DVector<f64>>,
    pub seed: u64,
}

impl Default for LmiOptions {
    fn default() -> Self {
        LmiOptions { margin: 1e-6, max_iters: 400, restarts: 20, initial: None, seed: 0 }
    }
}

/// Strict-feasibility search for an affine LMI `M(q) > 0` by projected
/// subgradient ascent on `lambda_min(M(q))` over the unit sphere.
///
/// `assemble` must be affine in `q` and return a symmetric matrix. Feasibility
/// means `lambda_min(M(q)) >= margin * max(1, lambda_max(M(q)))` at some unit
/// `q`. Infeasibility is only certified analytically (single-parameter
/// homogeneous problems); otherwise the solver reports `Unknown` on cap.
pub fn lmi_feasibility(
    assemble: &dyn Fn(&DVector<f64>) -> DMatrix<f64>,
    q_dim: usize,
    opts: &LmiOptions,
) -> Result<LmiCertificate> {
    use rand::{Rng, SeedableRng};
    if q_dim == 0 {
        return Err(Error::InvalidInput("lmi_feasibility: q_dim must be >= 1".into()));
    }
    if opts.margin <= 0.0 {
        return Err(Error::InvalidInput("lmi_feasibility: margin must be positive".into()));
    }
    let m0 = assemble(&DVector::zeros(q_dim));
    let dim = m0.nrows();
    let sym_check = |m: &DMatrix<f64>| -> Result<()> {
        if !m.is_square() || m.nrows() != dim {
            return Err(Error::InvalidInput("lmi assembly returned inconsistent dimensions".into()));
        }
        if (m - m.transpose()).amax() > 1e-8 * m.amax().max(1.0) {
            return Err(Error::InvalidInput("lmi assembly output is not symmetric".into()));
        }
        Ok(())
    };
    sym_check(&m0)?;
    // Precompute the affine basis M(q) = M0 + sum q_i A_i.
    let mut basis = Vec::with_capacity(q_dim);
    for i in 0..q_dim {
        let mut e = DVector::zeros(q_dim);
        e[i] = 1.0;
        let mi = assemble(&e);
        sym_check(&mi)?;
        basis.push(&mi - &m0);
    }
    let homogeneous = m0.amax() < 1e-12;

    // Analytic certificate for the one-parameter homogeneous family M(q) = q A:
    // feasible iff A or -A is positive definite.
    if q_dim == 1 && homogeneous {
        let eig = (&basis[0] + basis[0].transpose()).scale(0.5).symmetric_eigen().eigenvalues;
        let lo = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (sign, lmin, lmax) = if lo > 0.0 {
            (1.0, lo, hi)
        } else if hi < 0.0 {
            (-1.0, -hi, -lo)
        } else {
            return Ok(LmiCertificate {
                q: DVector::from_element(1, 1.0),
                min_eig_achieved: lo.min(-hi).min(0.0),
                status: LmiStatus::Infeasible,
            });
        };
        let status = if lmin >= opts.margin * lmax.max(1.0) { LmiStatus::Feasible } else { LmiStatus::Unknown };
        return Ok(LmiCertificate { q: DVector::from_element(1, sign), min_eig_achieved: lmin, status });
    }

    let eval = |q: &DVector<f64>| -> (f64, f64, DVector<f64>) {
        let mut m = m0.clone();
        for (i, a) in basis.iter().enumerate() {
            m += a * q[i];
        }
        let m = (&m + m.transpose()) * 0.5;
        let eig = m.symmetric_eigen();
        let mut min_i = 0;
        let mut max_v = f64::NEG_INFINITY;
        for (i, &l) in eig.eigenvalues.iter().enumerate() {
            if l < eig.eigenvalues[min_i] {
                min_i = i;
            }
            max_v = max_v.max(l);
        }
        (eig.eigenvalues[min_i], max_v, eig.eigenvectors.column(min_i).into_owned())
    };
    let accept = |lmin: f64, lmax: f64| lmin >= opts.margin * lmax.max(1.0);

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<(f64, DVector<f64>)> = None;
    for restart in 0..=opts.restarts {
        let mut q: DVector<f64> = if restart == 0 {
            match &opts.initial {
                Some(q0) if q0.len() == q_dim && q0.norm() > 0.0 => q0.clone(),
                _ => DVector::from_fn(q_dim, |_, _| rng.gen_range(-1.0..1.0)),
            }
        } else {
            DVector::from_fn(q_dim, |_, _| rng.gen_range(-1.0..1.0))
        };
        if q.norm() == 0.0 {
            q[0] = 1.0;
        }
        q /= q.norm();
        let (mut lmin, mut lmax, mut vmin) = eval(&q);
        let mut step = 1.0;
        for _ in 0..opts.max_iters {
            if accept(lmin, lmax) {
                return Ok(LmiCertificate { q, min_eig_achieved: lmin, status: LmiStatus::Feasible });
            }
            // Subgradient of lambda_min at q: g_i = v' A_i v.
            let grad = DVector::from_fn(q_dim, |i, _| (vmin.transpose() * &basis[i] * &vmin)[(0, 0)]);
            if grad.norm() < 1e-14 {
                break;
            }
            let mut improved = false;
            for _ in 0..30 {
                let mut cand = &q + &grad * (step / grad.norm());
                cand /= cand.norm();
                let (cl, cx, cv) = eval(&cand);
                if cl > lmin {
                    q = cand;
                    lmin = cl;
                    lmax = cx;
                    vmin = cv;
                    improved = true;
                    break;
                }
                step *= 0.5;
            }
            if !improved {
                break;
            }
        }
        if accept(lmin, lmax) {
            return Ok(LmiCertificate { q, min_eig_achieved: lmin, status: LmiStatus::Feasible });
        }
        if best.as_ref().map_or(true, |(b, _)| lmin > *b) {
            best = Some((lmin, q));
        }
    }
    let (lmin, q) = best.expect("at least one restart ran");
    Ok(LmiCertificate { q, min_eig_achieved: lmin, status: LmiStatus::Unknown })
}

/// Minimize `0.5 g' H g + f' g` subject to `A_eq g = b_eq` via the null-space
/// method. Returns the minimum-norm optimizer when the reduced Hessian is
/// singular.
pub fn qp_solve_eq(
    h: &DMatrix<f64>,
    f: &DVector<f64>,
    a_eq: &DMatrix<f64>,
    b_eq: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = h.nrows();
    if !h.is_square() || f.len() != n || a_eq.ncols() != n || a_eq.nrows() != b_eq.len() {
        return Err(Error::DimensionMismatch("qp_solve_eq: inconsistent dimensions".into()));
    }
    check_finite(h, "qp hessian")?;
    check_finite(a_eq, "qp constraints")?;
    let tol = default_rel_tol(a_eq.nrows().max(1), n);
    let a_pinv = pseudo_inverse(a_eq, tol)?;
    let g0 = &a_pinv * b_eq;
    let res = (a_eq * &g0 - b_eq).norm();
    if res > 1e-8 * (1.0 + b_eq.norm()) {
        return Err(Error::Infeasible(format!(
            "equality constraints are inconsistent (residual {res:.3e})"
        )));
    }
    let z = null_space(a_eq, tol);
    if z.ncols() == 0 {
        return Ok(g0);
    }
    let hr = z.transpose() * h * &z;
    let rhs = -(z.transpose() * (h * &g0 + f));
    // Try a direct solve first; fall back to a regularized / pseudoinverse solve
    // for Hessians that are only PSD on the constraint kernel.
    let y = match hr.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => {
            let reg = &hr + DMatrix::<f64>::identity(hr.nrows(), hr.ncols()) * 1e-12;
            match reg.clone().cholesky() {
                Some(ch) => ch.solve(&rhs),
                None => {
                    let hp = pseudo_inverse(&hr, 1e-12)
                        .map_err(|_| Error::Degenerate("reduced Hessian factorization failed".into()))?;
                    hp * rhs
                }
            }
        }
    };
    Ok(g0 + z * y)
}
