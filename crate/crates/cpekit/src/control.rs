//! Data-driven control: trajectory representation on a Hankel basis built
//! from composed experiments, state-feedback gain synthesis through an LMI
//! over data composites, and a receding-horizon MPC whose predictor is the
//! data basis itself (no identified model in the loop).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hankel::{self, CompositionMode};
use crate::informativity;
use crate::linalg::{
    self, default_rel_tol, lmi_feasibility, pseudo_inverse, qp_solve_eq, spectral_radius,
    LmiCertificate, LmiOptions,
};
use crate::traj::{IoRecord, LtiSystem, Trajectory};

/// Lower block-Toeplitz impulse-response operator and extended
/// observability stack for depth L.
#[derive(Debug, Clone)]
pub struct ImpulseOperators {
    /// nL x mL, block (i, j) = A^(i-j-1) B for i > j, zero otherwise.
    pub toeplitz_tl: DMatrix<f64>,
    /// nL x n, block i = A^i.
    pub obs_ol: DMatrix<f64>,
    pub depth: usize,
}

pub fn build_impulse_operators(sys: &LtiSystem, depth: usize) -> Result<ImpulseOperators> {
    if depth == 0 {
        return Err(Error::InvalidInput("impulse operators need depth >= 1".into()));
    }
    let (n, m) = (sys.state_dim(), sys.input_dim());
    // powers[i] = A^i for i = 0..depth-1
    let mut powers = Vec::with_capacity(depth);
    powers.push(DMatrix::identity(n, n));
    for i in 1..depth {
        powers.push(&powers[i - 1] * sys.a());
    }
    let mut toeplitz = DMatrix::zeros(n * depth, m * depth);
    for i in 1..depth {
        for j in 0..i {
            let block = &powers[i - j - 1] * sys.b();
            toeplitz.view_mut((i * n, j * m), (n, m)).copy_from(&block);
        }
    }
    let mut obs = DMatrix::zeros(n * depth, n);
    for (i, p) in powers.iter().enumerate() {
        obs.view_mut((i * n, 0), (n, n)).copy_from(p);
    }
    Ok(ImpulseOperators { toeplitz_tl: toeplitz, obs_ol: obs, depth })
}

/// Stacked depth-L Hankel matrices [H_L(states); H_L(inputs)] of the
/// composed experiment data; every column is an L-long input-state window.
#[derive(Debug, Clone)]
pub struct BehavioralBasis {
    x_block: DMatrix<f64>,
    u_block: DMatrix<f64>,
    depth: usize,
    state_dim: usize,
    input_dim: usize,
    mode: CompositionMode,
    column_blocks: Vec<usize>,
}

impl BehavioralBasis {
    pub fn from_records(
        records: &[IoRecord],
        depth: usize,
        mode: CompositionMode,
        weights: &[f64],
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::InvalidInput("no records supplied".into()));
        }
        let n = records[0].state_dim();
        let m = records[0].input_dim();
        if records.iter().any(|r| r.state_dim() != n || r.input_dim() != m) {
            return Err(Error::DimensionMismatch("records must share (n, m)".into()));
        }
        if records.iter().any(|r| r.steps() < depth) {
            return Err(Error::InsufficientLength(format!(
                "every record needs at least {depth} steps for a depth-{depth} basis"
            )));
        }
        let mut x_blocks = Vec::with_capacity(records.len());
        let mut u_blocks = Vec::with_capacity(records.len());
        for rec in records {
            // Align state and input windows: columns j = 0..T-L share the
            // same start time in both blocks.
            let cols = rec.steps() - depth + 1;
            let x_h = hankel::hankel_of_data(&rec.x_minus(), depth)?;
            let u_h = hankel::hankel_of_data(&rec.u(), depth)?;
            x_blocks.push(x_h.columns(0, cols).into_owned());
            u_blocks.push(u_h.columns(0, cols).into_owned());
        }
        let (x_block, column_blocks) = hankel::compose_blocks(&x_blocks, weights, mode)?;
        let (u_block, _) = hankel::compose_blocks(&u_blocks, weights, mode)?;
        Ok(BehavioralBasis {
            x_block,
            u_block,
            depth,
            state_dim: n,
            input_dim: m,
            mode,
            column_blocks,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn mode(&self) -> CompositionMode {
        self.mode
    }

    pub fn column_blocks(&self) -> &[usize] {
        &self.column_blocks
    }

    pub fn cols(&self) -> usize {
        self.u_block.ncols()
    }

    /// [H_L(x); H_L(u)], (n+m)L x C.
    pub fn stacked(&self) -> DMatrix<f64> {
        let (n, m, l, c) = (self.state_dim, self.input_dim, self.depth, self.cols());
        let mut s = DMatrix::zeros((n + m) * l, c);
        s.view_mut((0, 0), (n * l, c)).copy_from(&self.x_block);
        s.view_mut((n * l, 0), (m * l, c)).copy_from(&self.u_block);
        s
    }

    /// State rows of window position t (0-based), n x C.
    pub fn x_rows(&self, t: usize) -> DMatrix<f64> {
        self.x_block.rows(t * self.state_dim, self.state_dim).into_owned()
    }

    /// Input rows of window position t, m x C.
    pub fn u_rows(&self, t: usize) -> DMatrix<f64> {
        self.u_block.rows(t * self.input_dim, self.input_dim).into_owned()
    }

    /// Max residual of x(t+1) = A x(t) + B u(t) column-wise across the
    /// basis; small for noise-free data from `sys` (composition is linear,
    /// so composed columns satisfy the same dynamics).
    pub fn dynamics_residual(&self, sys: &LtiSystem) -> f64 {
        let mut worst = 0.0f64;
        for t in 0..self.depth - 1 {
            let lhs = self.x_rows(t + 1);
            let rhs = sys.a() * self.x_rows(t) + sys.b() * self.u_rows(t);
            worst = worst.max((lhs - rhs).amax());
        }
        worst
    }
}

/// Outcome of expressing a target window in the basis columns.
#[derive(Debug, Clone)]
pub struct TrajectoryRepresentation {
    /// Minimum-norm coefficient vector with stacked_basis * g = target.
    pub g: DVector<f64>,
    pub residual: f64,
    pub tolerance: f64,
    pub basis_rank: usize,
    /// residual <= tolerance.
    pub representable: bool,
}

/// Least-squares representation of an L-long (u, x) window; the basis rank is
/// always reported so an unrepresentable target diagnoses deficient
/// excitation.
pub fn represent_trajectory(
    basis: &BehavioralBasis,
    u_window: &DMatrix<f64>,
    x_window: &DMatrix<f64>,
) -> Result<TrajectoryRepresentation> {
    let (n, m, l) = (basis.state_dim, basis.input_dim, basis.depth);
    if u_window.nrows() != m || u_window.ncols() != l {
        return Err(Error::DimensionMismatch(format!("u window must be {m} x {l}")));
    }
    if x_window.nrows() != n || x_window.ncols() != l {
        return Err(Error::DimensionMismatch(format!("x window must be {n} x {l}")));
    }
    let stacked = basis.stacked();
    let mut target = DVector::zeros((n + m) * l);
    for t in 0..l {
        target.rows_mut(t * n, n).copy_from(&x_window.column(t));
        target.rows_mut(n * l + t * m, m).copy_from(&u_window.column(t));
    }
    let rel_tol = default_rel_tol(stacked.nrows(), stacked.ncols());
    let pinv = pseudo_inverse(&stacked, rel_tol)?;
    let mut g = &pinv * &target;
    // Two refinement passes soak up conditioning-driven residual when the
    // target truly lies in the column span.
    for _ in 0..2 {
        g += &pinv * (&target - &stacked * &g);
    }
    let residual = (&stacked * &g - &target).norm();
    let tolerance = 1e-8 * (1.0 + target.norm());
    let basis_rank = linalg::numeric_rank(&stacked, rel_tol)?.numeric_rank;
    Ok(TrajectoryRepresentation {
        g,
        residual,
        tolerance,
        basis_rank,
        representable: residual <= tolerance,
    })
}

/// Gain synthesis output: K, the LMI certificate, and diagnostics.
#[derive(Debug, Clone)]
pub struct GainSynthesisResult {
    pub k: DMatrix<f64>,
    /// Lyapunov candidate P = X- Q (symmetric positive definite).
    pub p: DMatrix<f64>,
    /// Column-coefficient matrix Q with X- Q = P, U Q = K P.
    pub q_mat: DMatrix<f64>,
    pub certificate: LmiCertificate,
    /// Spectral radius of (A_hat + B_hat K) on the least-squares model
    /// identified from the same composites.
    pub radius_estimate: f64,
    /// True iff the composed input-state data passed the order-(n+1) rank
    /// condition; synthesis still proceeds when false.
    pub excitation_ok: bool,
}

fn depth1_composites(
    records: &[IoRecord],
    mode: CompositionMode,
    weights: &[f64],
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let minus: Vec<DMatrix<f64>> = records.iter().map(|r| r.x_minus()).collect();
    let plus: Vec<DMatrix<f64>> = records.iter().map(|r| r.x_plus()).collect();
    let u: Vec<DMatrix<f64>> = records.iter().map(|r| r.u()).collect();
    let (xm, _) = hankel::compose_blocks(&minus, weights, mode)?;
    let (xp, _) = hankel::compose_blocks(&plus, weights, mode)?;
    let (uc, _) = hankel::compose_blocks(&u, weights, mode)?;
    Ok((xm, xp, uc))
}

/// Discrete-time LQR by Riccati value iteration; returns K with A + BK the
/// closed loop (u = Kx).
fn dlqr(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut p = q.clone();
    for _ in 0..20_000 {
        let gain_den = r + b.transpose() * &p * b;
        let inv = gain_den
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Degenerate("Riccati gain denominator singular".into()))?;
        let next =
            q + a.transpose() * &p * a - a.transpose() * &p * b * &inv * b.transpose() * &p * a;
        let delta = (&next - &p).amax();
        p = next;
        if delta < 1e-12 * (1.0 + p.amax()) {
            break;
        }
    }
    let gain_den = r + b.transpose() * &p * b;
    let inv = gain_den
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("Riccati gain denominator singular".into()))?;
    let k = -(&inv * b.transpose() * &p * a);
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("Riccati iteration diverged".into()));
    }
    let _ = n;
    Ok(k)
}

/// Solve P = M P M^T + I by doubling; requires rho(M) < 1.
fn dlyap(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let mut p = DMatrix::identity(n, n);
    let mut a = m.clone();
    for _ in 0..64 {
        let incr = &a * &p * a.transpose();
        if incr.amax() < 1e-14 * (1.0 + p.amax()) {
            break;
        }
        p += incr;
        a = &a * &a;
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::Degenerate("Lyapunov doubling diverged (unstable M)".into()));
        }
    }
    Ok(p)
}

fn sym_param_dim(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Unpack q = [vech(P); vec(Y)] into (P symmetric n x n, Y m x n).
fn unpack_py(q: &DVector<f64>, n: usize, m: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut p = DMatrix::zeros(n, n);
    let mut idx = 0;
    for i in 0..n {
        for j in i..n {
            p[(i, j)] = q[idx];
            p[(j, i)] = q[idx];
            idx += 1;
        }
    }
    let mut y = DMatrix::zeros(m, n);
    for c in 0..n {
        for r in 0..m {
            y[(r, c)] = q[idx];
            idx += 1;
        }
    }
    (p, y)
}

fn pack_py(p: &DMatrix<f64>, y: &DMatrix<f64>) -> DVector<f64> {
    let (n, m) = (p.nrows(), y.nrows());
    let mut q = DVector::zeros(sym_param_dim(n) + m * n);
    let mut idx = 0;
    for i in 0..n {
        for j in i..n {
            q[idx] = p[(i, j)];
            idx += 1;
        }
    }
    for c in 0..n {
        for r in 0..m {
            q[idx] = y[(r, c)];
            idx += 1;
        }
    }
    q
}

/// Data-driven state-feedback synthesis: find Q with
/// [[X- Q, X+ Q], [(X+ Q)^T, X- Q]] > 0 and return K = (U Q)(X- Q)^-1.
///
/// The search runs over (P, Y) with Q recovered through the right inverse of
/// [X-; U] (so X- Q = P stays symmetric by construction and X+ Q is linear in
/// the decision), and is warm-started from an LQR design on the
/// least-squares model of the same data.
pub fn synthesize_gain(
    records: &[IoRecord],
    mode: CompositionMode,
    weights: &[f64],
    rel_tol: f64,
) -> Result<GainSynthesisResult> {
    if records.is_empty() {
        return Err(Error::InvalidInput("no records supplied".into()));
    }
    let n = records[0].state_dim();
    let m = records[0].input_dim();
    let (xm, xp, uc) = depth1_composites(records, mode, weights)?;
    let mut data = DMatrix::zeros(n + m, xm.ncols());
    data.view_mut((0, 0), (n, xm.ncols())).copy_from(&xm);
    data.view_mut((n, 0), (m, xm.ncols())).copy_from(&uc);
    let data_report = linalg::numeric_rank(&data, rel_tol)?;
    if data_report.numeric_rank < n + m {
        return Err(Error::Infeasible(format!(
            "composed [X-; U] rank {} < {}; singular values {:?}",
            data_report.numeric_rank,
            n + m,
            data_report.singular_values
        )));
    }
    let right_inv = pseudo_inverse(&data, rel_tol)?;

    // Excitation advisory: order-(n+1) rank condition on the input bundle.
    let excitation_ok =
        informativity::check_rank_condition(records, n + 1, mode, weights, rel_tol)
            .map(|(_, ok)| ok)
            .unwrap_or(false);

    // Warm start from the identified model.
    let ident = crate::ident::ls_identify(records, mode, weights, rel_tol)?;
    let a_hat = ident.g_hat.columns(0, n).into_owned();
    let b_hat = ident.g_hat.columns(n, m).into_owned();
    let initial = dlqr(&a_hat, &b_hat, &DMatrix::identity(n, n), &DMatrix::identity(m, m))
        .and_then(|k0| {
            let closed = &a_hat + &b_hat * &k0;
            let p0 = dlyap(&closed)?;
            Ok(pack_py(&p0, &(&k0 * &p0)))
        })
        .ok();

    let xp_for_assemble = xp.clone();
    let assemble = move |q: &DVector<f64>| -> DMatrix<f64> {
        let (p, y) = unpack_py(q, n, m);
        let mut py = DMatrix::zeros(n + m, n);
        py.view_mut((0, 0), (n, n)).copy_from(&p);
        py.view_mut((n, 0), (m, n)).copy_from(&y);
        let q_mat = &right_inv * py;
        let f = &xp_for_assemble * &q_mat;
        let mut lmi = DMatrix::zeros(2 * n, 2 * n);
        lmi.view_mut((0, 0), (n, n)).copy_from(&p);
        lmi.view_mut((0, n), (n, n)).copy_from(&f);
        lmi.view_mut((n, 0), (n, n)).copy_from(&f.transpose());
        lmi.view_mut((n, n), (n, n)).copy_from(&p);
        lmi
    };

    let opts = LmiOptions { initial, ..LmiOptions::default() };
    let cert = lmi_feasibility(&assemble, sym_param_dim(n) + m * n, &opts)?;
    if !cert.feasible() {
        return Err(Error::Infeasible(format!(
            "gain LMI not certified feasible (status {:?}, min eig {:.3e}); \
             composite singular values {:?}",
            cert.status, cert.min_eig_achieved, data_report.singular_values
        )));
    }
    let (p, y) = unpack_py(&cert.q, n, m);
    let mut py = DMatrix::zeros(n + m, n);
    py.view_mut((0, 0), (n, n)).copy_from(&p);
    py.view_mut((n, 0), (m, n)).copy_from(&y);
    let right_inv2 = pseudo_inverse(&data, rel_tol)?;
    let q_mat = &right_inv2 * py;
    let p_inv = p
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("certified P not invertible".into()))?;
    let k = (&uc * &q_mat) * &p_inv;
    let radius_estimate = spectral_radius(&(&a_hat + &b_hat * &k))?;
    Ok(GainSynthesisResult { k, p, q_mat, certificate: cert, radius_estimate, excitation_ok })
}

/// Receding-horizon problem over a depth-(N + n) basis: the first n window
/// positions are pinned to the most recent n input-state pairs, the
/// remaining N are optimized.
#[derive(Debug, Clone)]
pub struct MpcProblem {
    pub horizon: usize,
    pub q_cost: DMatrix<f64>,
    pub r_cost: DMatrix<f64>,
    pub x_star: DVector<f64>,
    pub basis: BehavioralBasis,
    /// Last n pairs (u(k-n+1+t), x(k-n+1+t)), oldest first.
    pub history: Vec<(DVector<f64>, DVector<f64>)>,
    /// Element-wise input bounds applied to every future input entry.
    pub input_bounds: Option<(DVector<f64>, DVector<f64>)>,
    /// Tikhonov weight on ||g||^2 for noisy data; 0 keeps the exact QP.
    pub regularization: f64,
    pub active_set_cap: usize,
}

impl MpcProblem {
    pub fn new(
        horizon: usize,
        q_cost: DMatrix<f64>,
        r_cost: DMatrix<f64>,
        x_star: DVector<f64>,
        basis: BehavioralBasis,
        history: Vec<(DVector<f64>, DVector<f64>)>,
    ) -> Result<Self> {
        let n = basis.state_dim();
        let m = basis.input_dim();
        if basis.depth() != horizon + n {
            return Err(Error::DimensionMismatch(format!(
                "basis depth {} must equal horizon + n = {}",
                basis.depth(),
                horizon + n
            )));
        }
        if history.len() != n {
            return Err(Error::DimensionMismatch(format!("history must hold n = {n} pairs")));
        }
        if history.iter().any(|(u, x)| u.len() != m || x.len() != n) {
            return Err(Error::DimensionMismatch("history pair dims must match (m, n)".into()));
        }
        if q_cost.nrows() != n || !q_cost.is_square() || r_cost.nrows() != m || !r_cost.is_square()
        {
            return Err(Error::DimensionMismatch("cost weight dims must match (n, m)".into()));
        }
        if x_star.len() != n {
            return Err(Error::DimensionMismatch("setpoint must have length n".into()));
        }
        Ok(MpcProblem {
            horizon,
            q_cost,
            r_cost,
            x_star,
            basis,
            history,
            input_bounds: None,
            regularization: 0.0,
            active_set_cap: 64,
        })
    }
}

/// One MPC solve: the applied input, the predicted horizon, and the QP data.
#[derive(Debug, Clone)]
pub struct MpcStep {
    pub u_next: DVector<f64>,
    /// m x N future inputs (first column = u_next).
    pub predicted_inputs: DMatrix<f64>,
    /// n x N future states.
    pub predicted_states: DMatrix<f64>,
    pub g: DVector<f64>,
    /// Max violation of the history equality constraints at the solution.
    pub eq_residual: f64,
}

struct BoundRow {
    row: DVector<f64>,
    lo: f64,
    hi: f64,
}

enum ActiveKind {
    Lower,
    Upper,
}

fn solve_bounded_qp(
    h: &DMatrix<f64>,
    f: &DVector<f64>,
    a_eq: &DMatrix<f64>,
    b_eq: &DVector<f64>,
    bounds: &[BoundRow],
    cap: usize,
) -> Result<DVector<f64>> {
    let dim = h.nrows();
    let mut active: Vec<(usize, ActiveKind)> = Vec::new();
    for _ in 0..cap {
        let extra = active.len();
        let mut a = DMatrix::zeros(a_eq.nrows() + extra, dim);
        let mut b = DVector::zeros(a_eq.nrows() + extra);
        a.view_mut((0, 0), (a_eq.nrows(), dim)).copy_from(a_eq);
        b.rows_mut(0, b_eq.len()).copy_from(b_eq);
        for (slot, (idx, kind)) in active.iter().enumerate() {
            a.view_mut((a_eq.nrows() + slot, 0), (1, dim))
                .copy_from(&bounds[*idx].row.transpose());
            b[a_eq.nrows() + slot] = match kind {
                ActiveKind::Lower => bounds[*idx].lo,
                ActiveKind::Upper => bounds[*idx].hi,
            };
        }
        let g = qp_solve_eq(h, f, &a, &b)?;

        // Add the most violated inactive bound, if any.
        let mut worst: Option<(usize, ActiveKind, f64)> = None;
        for (idx, br) in bounds.iter().enumerate() {
            if active.iter().any(|(i, _)| *i == idx) {
                continue;
            }
            let v = br.row.dot(&g);
            let tol = 1e-9 * (1.0 + br.hi.abs().max(br.lo.abs()));
            if v > br.hi + tol && worst.as_ref().map_or(true, |w| v - br.hi > w.2) {
                worst = Some((idx, ActiveKind::Upper, v - br.hi));
            } else if v < br.lo - tol && worst.as_ref().map_or(true, |w| br.lo - v > w.2) {
                worst = Some((idx, ActiveKind::Lower, br.lo - v));
            }
        }
        if let Some((idx, kind, _)) = worst {
            active.push((idx, kind));
            continue;
        }
        if active.is_empty() {
            return Ok(g);
        }
        // KKT multipliers: H g + f = A^T lambda. An upper bound (a g <= hi)
        // needs lambda <= 0, a lower bound needs lambda >= 0; release the
        // worst offender, otherwise the active set is optimal.
        let grad = h * &g + f;
        let lt = a.transpose();
        let lam = pseudo_inverse(&lt, default_rel_tol(lt.nrows(), lt.ncols()))? * grad;
        let mut release: Option<(usize, f64)> = None;
        for (slot, (_, kind)) in active.iter().enumerate() {
            let l = lam[a_eq.nrows() + slot];
            let bad = match kind {
                ActiveKind::Upper => l.max(0.0),
                ActiveKind::Lower => (-l).max(0.0),
            };
            if bad > 1e-9 && release.as_ref().map_or(true, |r| bad > r.1) {
                release = Some((slot, bad));
            }
        }
        match release {
            Some((slot, _)) => {
                active.remove(slot);
            }
            None => return Ok(g),
        }
    }
    Err(Error::Infeasible("active-set iteration cap reached while handling bounds".into()))
}

/// Solve one receding-horizon QP over the basis coefficients g.
pub fn mpc_step(problem: &MpcProblem) -> Result<MpcStep> {
    let n = problem.basis.state_dim();
    let m = problem.basis.input_dim();
    let big_n = problem.horizon;
    let c = problem.basis.cols();

    // History equality constraints pin window positions 0..n-1.
    let mut a_eq = DMatrix::zeros(n * (n + m), c);
    let mut b_eq = DVector::zeros(n * (n + m));
    for t in 0..n {
        let (u_t, x_t) = &problem.history[t];
        a_eq.view_mut((t * (n + m), 0), (n, c)).copy_from(&problem.basis.x_rows(t));
        b_eq.rows_mut(t * (n + m), n).copy_from(x_t);
        a_eq.view_mut((t * (n + m) + n, 0), (m, c)).copy_from(&problem.basis.u_rows(t));
        b_eq.rows_mut(t * (n + m) + n, m).copy_from(u_t);
    }

    // Quadratic cost over the future window positions n..n+N-1.
    let mut h = DMatrix::zeros(c, c);
    let mut f = DVector::zeros(c);
    for t in n..n + big_n {
        let sx = problem.basis.x_rows(t);
        let su = problem.basis.u_rows(t);
        h += sx.transpose() * &problem.q_cost * &sx * 2.0;
        h += su.transpose() * &problem.r_cost * &su * 2.0;
        f -= sx.transpose() * (&problem.q_cost * &problem.x_star) * 2.0;
    }
    if problem.regularization > 0.0 {
        for i in 0..c {
            h[(i, i)] += 2.0 * problem.regularization;
        }
    }

    let g = match &problem.input_bounds {
        None => qp_solve_eq(&h, &f, &a_eq, &b_eq)?,
        Some((lo, hi)) => {
            if lo.len() != m || hi.len() != m {
                return Err(Error::DimensionMismatch("input bounds must have length m".into()));
            }
            let mut rows = Vec::with_capacity(big_n * m);
            for t in n..n + big_n {
                let su = problem.basis.u_rows(t);
                for r in 0..m {
                    rows.push(BoundRow {
                        row: su.row(r).transpose(),
                        lo: lo[r],
                        hi: hi[r],
                    });
                }
            }
            solve_bounded_qp(&h, &f, &a_eq, &b_eq, &rows, problem.active_set_cap)?
        }
    };

    let eq_residual = (&a_eq * &g - &b_eq).amax();
    if eq_residual > 1e-6 * (1.0 + b_eq.amax()) {
        let rank = linalg::numeric_rank(&problem.basis.stacked(), default_rel_tol(1, c))?
            .numeric_rank;
        return Err(Error::Infeasible(format!(
            "history not representable in the basis (eq residual {eq_residual:.3e}, \
             basis rank {rank})"
        )));
    }
    let mut predicted_inputs = DMatrix::zeros(m, big_n);
    let mut predicted_states = DMatrix::zeros(n, big_n);
    for t in 0..big_n {
        predicted_inputs.set_column(t, &(&problem.basis.u_rows(n + t) * &g));
        predicted_states.set_column(t, &(&problem.basis.x_rows(n + t) * &g));
    }
    Ok(MpcStep {
        u_next: predicted_inputs.column(0).into_owned(),
        predicted_inputs,
        predicted_states,
        g,
        eq_residual,
    })
}

/// Closed-loop receding-horizon run. The warm-up trajectory supplies the
/// first n inputs (filling the history buffer); `steps` MPC solves follow.
pub fn mpc_run(
    sys: &LtiSystem,
    x0: &DVector<f64>,
    warmup: &Trajectory,
    problem_template: &MpcProblem,
    steps: usize,
) -> Result<IoRecord> {
    let n = sys.state_dim();
    let m = sys.input_dim();
    if warmup.dim() != m || warmup.len() < n {
        return Err(Error::InvalidInput(format!("warm-up must supply at least n = {n} inputs")));
    }
    let mut problem = problem_template.clone();
    let mut us: Vec<DVector<f64>> = Vec::with_capacity(n + steps);
    let mut xs: Vec<DVector<f64>> = Vec::with_capacity(n + steps + 1);
    xs.push(x0.clone());
    for k in 0..n {
        let u = warmup.sample(k);
        let x_next = sys.a() * xs.last().unwrap() + sys.b() * &u;
        us.push(u);
        xs.push(x_next);
    }
    for k in 0..steps {
        // Pairs (u(t), x(t)) for the last n times t.
        let last = us.len();
        problem.history = (0..n).map(|t| (us[last - n + t].clone(), xs[last - n + t].clone())).collect();
        let step = mpc_step(&problem)?;
        let u = step.u_next;
        let x_next = sys.a() * xs.last().unwrap() + sys.b() * &u;
        us.push(u);
        xs.push(x_next);
        let _ = k;
    }
    let u_traj = Trajectory::from_samples(&us, "u_closed_loop")?;
    let x_traj = Trajectory::from_samples(&xs, "x_closed_loop")?;
    IoRecord::new(u_traj, x_traj)
}

/// JSON-serializable gain artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GainArtifact {
    pub k: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub radius: f64,
    pub mode: String,
    pub weights: Vec<f64>,
}

impl GainArtifact {
    pub fn from_result(res: &GainSynthesisResult, mode: CompositionMode, weights: &[f64]) -> Self {
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
        };
        GainArtifact {
            k: rows(&res.k),
            q: rows(&res.q_mat),
            radius: res.radius_estimate,
            mode: mode.tag().to_string(),
            weights: weights.to_vec(),
        }
    }
}
