//! Identification: one-shot least squares on composed data blocks, an online
//! adaptive identifier, and its distributed consensus variant, plus the
//! convergence-condition checker for both.
//!
//! Parameters are handled as theta = row-major vec of [A B]; the regressor at
//! time k is r(k) = I_n (x) [x(k); u(k)], so x(k+1) = r(k)^T theta.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hankel::{self, CompositionMode};
use crate::informativity::{self, AlphaPolicy};
use crate::linalg::{self, default_rel_tol};
use crate::traj::{simulate_lti, GraphTopology, IoRecord, LtiSystem, Trajectory, TrajectoryBundle};

/// Regressor r(k) = I_n (x) [x(k); u(k)].
#[derive(Debug, Clone)]
pub struct Regressor {
    state_dim: usize,
    stacked: DVector<f64>,
}

impl Regressor {
    pub fn new(x: &DVector<f64>, u: &DVector<f64>) -> Result<Self> {
        if x.is_empty() || u.is_empty() {
            return Err(Error::InvalidInput("regressor needs nonempty x and u".into()));
        }
        let mut stacked = DVector::zeros(x.len() + u.len());
        stacked.rows_mut(0, x.len()).copy_from(x);
        stacked.rows_mut(x.len(), u.len()).copy_from(u);
        Ok(Regressor { state_dim: x.len(), stacked })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    /// [x; u]
    pub fn stacked(&self) -> &DVector<f64> {
        &self.stacked
    }

    /// Materialized n(n+m) x n Kronecker form.
    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.state_dim;
        let d = self.stacked.len();
        let mut r = DMatrix::zeros(n * d, n);
        for i in 0..n {
            r.view_mut((i * d, i), (d, 1)).copy_from(&self.stacked);
        }
        r
    }

    /// r(k)^T theta, the one-step prediction of x(k+1).
    pub fn predict(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.state_dim;
        let d = self.stacked.len();
        if theta.len() != n * d {
            return Err(Error::DimensionMismatch("theta length must be n(n+m)".into()));
        }
        Ok(DVector::from_fn(n, |i, _| self.stacked.dot(&theta.rows(i * d, d))))
    }
}

/// Gains of the single adaptive identifier; alpha in (0, 2], xi > 0.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IdentifierGains {
    pub alpha: f64,
    pub xi: f64,
}

impl IdentifierGains {
    pub fn new(alpha: f64, xi: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 2.0) {
            return Err(Error::InvalidInput(format!("alpha = {alpha} outside (0, 2]")));
        }
        if !(xi > 0.0) {
            return Err(Error::InvalidInput(format!("xi = {xi} must be positive")));
        }
        Ok(IdentifierGains { alpha, xi })
    }
}

#[derive(Debug, Clone)]
pub struct IdentifierState {
    pub theta: DVector<f64>,
    pub gains: IdentifierGains,
    pub step: usize,
}

impl IdentifierState {
    pub fn new(theta0: DVector<f64>, gains: IdentifierGains) -> Self {
        IdentifierState { theta: theta0, gains, step: 0 }
    }
}

/// theta(k+1) = theta(k) + alpha r (r^T r + xi I)^-1 eps with
/// eps = x(k+1) - r^T theta(k). Since r^T r = (s^T s) I_n for s = [x; u], the
/// inverse is the scalar 1 / (s^T s + xi).
pub fn adaptive_step(
    state: &IdentifierState,
    r: &Regressor,
    x_next: &DVector<f64>,
) -> Result<IdentifierState> {
    let n = r.state_dim();
    if x_next.len() != n {
        return Err(Error::DimensionMismatch("x_next length must equal n".into()));
    }
    let eps = x_next - r.predict(&state.theta)?;
    let s = r.stacked();
    let d = s.len();
    let scale = state.gains.alpha / (s.dot(s) + state.gains.xi);
    let mut theta = state.theta.clone();
    for i in 0..n {
        let mut block = theta.rows_mut(i * d, d);
        block += s * (scale * eps[i]);
    }
    Ok(IdentifierState { theta, gains: state.gains, step: state.step + 1 })
}

/// Run the identifier along a fresh rollout; returns ||theta(k) - theta*||
/// for k = 0..=steps. With noise the trace is reported as-is (the convergence
/// guarantees assume the exact model).
pub fn run_adaptive(
    sys: &LtiSystem,
    x0: &DVector<f64>,
    inputs: &Trajectory,
    state0: IdentifierState,
    noise_std: f64,
    rng_seed: u64,
) -> Result<Vec<f64>> {
    let rec = simulate_lti(sys, x0, inputs, noise_std, rng_seed)?;
    let theta_true = sys.theta();
    let mut state = state0;
    let mut trace = vec![(&state.theta - &theta_true).norm()];
    for k in 0..rec.steps() {
        let r = Regressor::new(&rec.state().sample(k), &rec.input().sample(k))?;
        state = adaptive_step(&state, &r, &rec.state().sample(k + 1))?;
        trace.push((&state.theta - &theta_true).norm());
    }
    Ok(trace)
}

/// Gains of the distributed identifier; gamma must obey
/// 0 < gamma < 1 / lambda_max(Laplacian).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DistributedGains {
    pub alpha: f64,
    pub xi: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone)]
pub struct DistributedState {
    pub thetas: Vec<DVector<f64>>,
    pub gains: DistributedGains,
    pub topology: GraphTopology,
    pub step: usize,
}

impl DistributedState {
    pub fn new(
        thetas: Vec<DVector<f64>>,
        gains: DistributedGains,
        topology: GraphTopology,
    ) -> Result<Self> {
        IdentifierGains::new(gains.alpha, gains.xi)?;
        if thetas.len() != topology.node_count() {
            return Err(Error::DimensionMismatch("one theta per agent required".into()));
        }
        if thetas.iter().any(|t| t.len() != thetas[0].len()) {
            return Err(Error::DimensionMismatch("agent thetas must share length".into()));
        }
        if !topology.is_connected()? {
            return Err(Error::InvalidInput("topology must be connected".into()));
        }
        let lam = topology.laplacian_eig_max()?;
        if !(gains.gamma > 0.0 && gains.gamma * lam < 1.0) {
            return Err(Error::InvalidInput(format!(
                "gamma = {} outside (0, 1/lambda_max) with lambda_max = {lam:.4}",
                gains.gamma
            )));
        }
        Ok(DistributedState { thetas, gains, topology, step: 0 })
    }
}

/// Synchronous update of all agents: the adaptive step on local data plus the
/// consensus correction -gamma * sum_{j in N_i} (theta_i - theta_j).
pub fn distributed_step(
    state: &DistributedState,
    regressors: &[Regressor],
    x_nexts: &[DVector<f64>],
) -> Result<DistributedState> {
    let p = state.thetas.len();
    if regressors.len() != p || x_nexts.len() != p {
        return Err(Error::DimensionMismatch("need one regressor and x_next per agent".into()));
    }
    let single = IdentifierGains { alpha: state.gains.alpha, xi: state.gains.xi };
    let mut next = Vec::with_capacity(p);
    for i in 0..p {
        let local = IdentifierState::new(state.thetas[i].clone(), single);
        let mut theta = adaptive_step(&local, &regressors[i], &x_nexts[i])?.theta;
        for j in state.topology.neighbors(i) {
            theta -= (&state.thetas[i] - &state.thetas[j]) * state.gains.gamma;
        }
        next.push(theta);
    }
    Ok(DistributedState {
        thetas: next,
        gains: state.gains,
        topology: state.topology.clone(),
        step: state.step + 1,
    })
}

/// Run the distributed identifier: every agent rolls out the same system
/// under its own input. Returns per-agent error traces, trace[i][k] =
/// ||theta_i(k) - theta*||.
pub fn run_distributed(
    sys: &LtiSystem,
    x0s: &[DVector<f64>],
    inputs: &[Trajectory],
    state0: DistributedState,
    noise_std: f64,
    rng_seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let p = state0.thetas.len();
    if x0s.len() != p || inputs.len() != p {
        return Err(Error::DimensionMismatch("need one rollout seed per agent".into()));
    }
    let steps = inputs.iter().map(|t| t.len()).min().unwrap_or(0);
    let records: Vec<IoRecord> = inputs
        .iter()
        .enumerate()
        .map(|(i, u)| simulate_lti(sys, &x0s[i], u, noise_std, rng_seed.wrapping_add(i as u64)))
        .collect::<Result<_>>()?;
    let theta_true = sys.theta();
    let mut state = state0;
    let mut traces: Vec<Vec<f64>> =
        state.thetas.iter().map(|t| vec![(t - &theta_true).norm()]).collect();
    for k in 0..steps {
        let regressors: Vec<Regressor> = records
            .iter()
            .map(|r| Regressor::new(&r.state().sample(k), &r.input().sample(k)))
            .collect::<Result<_>>()?;
        let x_nexts: Vec<DVector<f64>> =
            records.iter().map(|r| r.state().sample(k + 1)).collect();
        state = distributed_step(&state, &regressors, &x_nexts)?;
        for (i, trace) in traces.iter_mut().enumerate() {
            trace.push((&state.thetas[i] - &theta_true).norm());
        }
    }
    Ok(traces)
}

/// Result of the one-shot least-squares fit.
#[derive(Debug, Clone)]
pub struct LsIdentifyResult {
    /// Estimated [A B], n x (n+m).
    pub g_hat: DMatrix<f64>,
    /// True iff the composed data matrix [X-; U] has full row rank n + m.
    pub unique: bool,
    pub residual: f64,
    pub data_rank: usize,
}

/// G_hat = X+_comp * pinv([X-; U]_comp), with all three blocks composed in
/// the same mode and weights so the dynamics survive the composition.
pub fn ls_identify(
    records: &[IoRecord],
    mode: CompositionMode,
    weights: &[f64],
    rel_tol: f64,
) -> Result<LsIdentifyResult> {
    if records.is_empty() {
        return Err(Error::InvalidInput("no records supplied".into()));
    }
    let n = records[0].state_dim();
    let m = records[0].input_dim();
    if records.iter().any(|r| r.state_dim() != n || r.input_dim() != m) {
        return Err(Error::DimensionMismatch("records must share (n, m)".into()));
    }
    let mut data_blocks = Vec::with_capacity(records.len());
    let mut plus_blocks = Vec::with_capacity(records.len());
    for rec in records {
        let t = rec.steps();
        let mut stacked = DMatrix::zeros(n + m, t);
        stacked.view_mut((0, 0), (n, t)).copy_from(&rec.x_minus());
        stacked.view_mut((n, 0), (m, t)).copy_from(&rec.u());
        data_blocks.push(stacked);
        plus_blocks.push(rec.x_plus());
    }
    let (data, _) = hankel::compose_blocks(&data_blocks, weights, mode)?;
    let (plus, _) = hankel::compose_blocks(&plus_blocks, weights, mode)?;
    let rank = linalg::numeric_rank(&data, rel_tol)?.numeric_rank;
    let g_hat = &plus * linalg::pseudo_inverse(&data, rel_tol)?;
    let residual = (&plus - &g_hat * &data).norm();
    Ok(LsIdentifyResult { g_hat, unique: rank == n + m, residual, data_rank: rank })
}

/// Per-condition verdicts for identifier convergence guarantees.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceReport {
    /// All data finite (signal boundedness over the finite horizon).
    pub boundedness: bool,
    /// alpha in (0, 2], xi > 0, and gamma in (0, 1/lambda_max) when present.
    pub gain_ranges: bool,
    /// Sliding windows [k, k+l-1] collectively exciting of the given order.
    pub windowed_excitation: bool,
    /// Start index of the first failing window, if any.
    pub failing_window: Option<usize>,
    pub windows_checked: usize,
}

impl ConvergenceReport {
    pub fn all_hold(&self) -> bool {
        self.boundedness && self.gain_ranges && self.windowed_excitation
    }
}

/// Check boundedness, gain ranges, and windowed collective excitation of
/// `order` over windows of length `window_l` sampled at k = 0, l, 2l, ...
pub fn check_convergence_conditions(
    gains: &DistributedGains,
    topology: Option<&GraphTopology>,
    bundle: &TrajectoryBundle,
    window_l: usize,
    order: usize,
) -> Result<ConvergenceReport> {
    let gain_ranges = IdentifierGains::new(gains.alpha, gains.xi).is_ok()
        && match topology {
            Some(g) => gains.gamma > 0.0 && gains.gamma * g.laplacian_eig_max()? < 1.0,
            None => true,
        };
    let boundedness = bundle
        .members()
        .iter()
        .all(|t| t.data().iter().all(|x| x.is_finite()));

    let t_min = bundle.members().iter().map(|t| t.len()).min().unwrap_or(0);
    let mut windowed_excitation = true;
    let mut failing_window = None;
    let mut windows_checked = 0;
    if window_l == 0 || window_l > t_min {
        windowed_excitation = false;
        failing_window = Some(0);
    } else {
        let mut k = 0;
        while k + window_l <= t_min {
            windows_checked += 1;
            let ok = window_cpe(bundle, k, window_l, order)?;
            if !ok {
                windowed_excitation = false;
                failing_window = Some(k);
                break;
            }
            k += window_l;
        }
    }
    Ok(ConvergenceReport {
        boundedness,
        gain_ranges,
        windowed_excitation,
        failing_window,
        windows_checked,
    })
}

fn window_cpe(
    bundle: &TrajectoryBundle,
    start: usize,
    len: usize,
    order: usize,
) -> Result<bool> {
    if len < order {
        return Ok(false);
    }
    let members: Vec<Trajectory> = bundle
        .members()
        .iter()
        .map(|t| Trajectory::new(t.window(start, len), t.label()))
        .collect::<Result<_>>()?;
    let windowed = TrajectoryBundle::new(members, bundle.weights().to_vec(), 0)?;
    let rows = windowed.dim() * order;
    let cols = windowed.len() * (len - order + 1);
    let report = informativity::check_cpe(
        &windowed,
        order,
        CompositionMode::Mosaic,
        &AlphaPolicy::Fixed,
        default_rel_tol(rows, cols),
    )?;
    Ok(report.verdict)
}

/// Write per-agent error traces as CSV `k,err_1,...,err_N`.
pub fn save_error_traces_csv(traces: &[Vec<f64>], path: &std::path::Path) -> Result<()> {
    if traces.is_empty() {
        return Err(Error::InvalidInput("no traces".into()));
    }
    let len = traces[0].len();
    if traces.iter().any(|t| t.len() != len) {
        return Err(Error::DimensionMismatch("traces must share length".into()));
    }
    let mut out = String::new();
    out.push_str("k");
    for i in 1..=traces.len() {
        out.push_str(&format!(",err_{i}"));
    }
    out.push('\n');
    for k in 0..len {
        out.push_str(&k.to_string());
        for t in traces {
            out.push_str(&format!(",{:?}", t[k]));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{design_signals, DesignRequest};
    use crate::traj::builtin_system;
    use nalgebra::{dmatrix, dvector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_inputs(m: usize, t: usize, seed: u64) -> Trajectory {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Trajectory::new(DMatrix::from_fn(m, t, |_, _| rng.gen_range(-1.0..1.0)), "u").unwrap()
    }

    #[test]
    fn regressor_matches_kronecker_structure() {
        let r = Regressor::new(&dvector![1.0, 2.0], &dvector![3.0]).unwrap();
        let mat = r.matrix();
        assert_eq!(mat.nrows(), 6);
        assert_eq!(mat.ncols(), 2);
        let theta = dvector![0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        let via_matrix = mat.transpose() * &theta;
        assert!((r.predict(&theta).unwrap() - via_matrix).norm() < 1e-14);
    }

    #[test]
    fn adaptive_fixed_points() {
        let gains = IdentifierGains::new(1.0, 2.0).unwrap();
        let sys = builtin_system("voltage_converter").unwrap();
        let theta = sys.theta();
        let state = IdentifierState::new(theta.clone(), gains);
        let x = dvector![0.4, -0.3];
        let u = dvector![0.7];
        let r = Regressor::new(&x, &u).unwrap();
        let x_next = sys.a() * &x + sys.b() * &u;
        let next = adaptive_step(&state, &r, &x_next).unwrap();
        assert!((next.theta - theta).norm() < 1e-14);
    }

    #[test]
    fn adaptive_scalar_step_hand_computed() {
        // n = m = 1, x = 2, u = 1, theta = (0.5, 0.25), alpha = 1, xi = 2,
        // x_next = 1: eps = 1 - 1.25 = -0.25, denom = 4 + 1 + 2 = 7.
        let gains = IdentifierGains::new(1.0, 2.0).unwrap();
        let state = IdentifierState::new(dvector![0.5, 0.25], gains);
        let r = Regressor::new(&dvector![2.0], &dvector![1.0]).unwrap();
        let next = adaptive_step(&state, &r, &dvector![1.0]).unwrap();
        assert!((next.theta[0] - (0.5 - 0.5 / 7.0)).abs() < 1e-15);
        assert!((next.theta[1] - (0.25 - 0.25 / 7.0)).abs() < 1e-15);
    }

    #[test]
    fn gain_guards() {
        assert!(IdentifierGains::new(2.0, 1.0).is_ok());
        assert!(IdentifierGains::new(2.01, 1.0).is_err());
        assert!(IdentifierGains::new(0.0, 1.0).is_err());
        assert!(IdentifierGains::new(1.0, 0.0).is_err());
    }

    #[test]
    fn adaptive_converges_on_pe_input_and_is_nonexpansive() {
        let sys = builtin_system("voltage_converter").unwrap();
        let gains = IdentifierGains::new(1.0, 2.0).unwrap();
        let state0 = IdentifierState::new(DVector::zeros(6), gains);
        // The plant's weak mode (|lambda| ~ 0.9999) needs a long horizon
        // before the x2 direction is informative; 2e4 steps give margin.
        let mut inputs = random_inputs(1, 20000, 4);
        inputs = Trajectory::new(inputs.data() * 5.0, "u").unwrap();
        let trace =
            run_adaptive(&sys, &dvector![0.1, -0.1], &inputs, state0, 0.0, 0).unwrap();
        assert!(trace.last().unwrap() < &1e-3, "final error {}", trace.last().unwrap());
        for w in trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "error increased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn adaptive_plateaus_on_feedback_input() {
        // u = Kx closed loop: regressor lives in an n-dim subspace, theta
        // cannot be recovered.
        let sys = builtin_system("voltage_converter").unwrap();
        let k_fb = dmatrix![0.4, -0.3];
        let mut x = dvector![1.0, -0.5];
        let gains = IdentifierGains::new(1.0, 2.0).unwrap();
        let mut state = IdentifierState::new(DVector::zeros(6), gains);
        let theta_true = sys.theta();
        for _ in 0..3000 {
            let u = &k_fb * &x;
            let x_next = sys.a() * &x + sys.b() * &u;
            let r = Regressor::new(&x, &u).unwrap();
            state = adaptive_step(&state, &r, &x_next).unwrap();
            x = x_next;
        }
        let err = (&state.theta - &theta_true).norm();
        assert!(err > 1e-2, "feedback-only data should not identify theta, err = {err}");
    }

    #[test]
    fn distributed_guards_and_stationarity() {
        let sys = builtin_system("voltage_converter").unwrap();
        let p5 = GraphTopology::path(5).unwrap();
        let lam = p5.laplacian_eig_max().unwrap();
        let bad = DistributedGains { alpha: 1.0, xi: 2.0, gamma: 1.5 / lam };
        assert!(DistributedState::new(vec![DVector::zeros(6); 5], bad, p5.clone()).is_err());
        let disconnected = GraphTopology::new(4, &[(0, 1), (2, 3)]).unwrap();
        let ok_gains = DistributedGains { alpha: 1.0, xi: 2.0, gamma: 0.25 };
        assert!(DistributedState::new(vec![DVector::zeros(6); 4], ok_gains, disconnected).is_err());

        // All agents at the truth stay there (noise-free).
        let theta = sys.theta();
        let state =
            DistributedState::new(vec![theta.clone(); 5], ok_gains, p5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let regs: Vec<Regressor> = (0..5)
            .map(|_| {
                Regressor::new(
                    &DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0)),
                    &DVector::from_fn(1, |_, _| rng.gen_range(-1.0..1.0)),
                )
                .unwrap()
            })
            .collect();
        let x_nexts: Vec<DVector<f64>> =
            regs.iter().map(|r| r.predict(&theta).unwrap()).collect();
        let next = distributed_step(&state, &regs, &x_nexts).unwrap();
        for t in &next.thetas {
            assert!((t - &theta).norm() < 1e-13);
        }
    }

    #[test]
    fn distributed_convergence_with_individually_poor_inputs() {
        // Each agent's sinusoid input is non-PE of order n+1 = 3 alone, but
        // the bundle is collectively exciting; all agents converge.
        // Frequencies straddle the plant resonance near 0.0045 rad/step so
        // the bundle excites the slow mode the agents cannot see alone.
        let sys = builtin_system("voltage_converter").unwrap();
        let p = 5;
        let steps = 5000;
        let freqs = [0.002, 0.0045, 0.009, 0.05, 0.3];
        let inputs: Vec<Trajectory> = (0..p)
            .map(|i| {
                Trajectory::new(
                    DMatrix::from_fn(1, steps, |_, k| (freqs[i] * k as f64).sin()),
                    format!("u{i}"),
                )
                .unwrap()
            })
            .collect();
        for u in &inputs {
            assert!(!informativity::check_pe(u, 3, default_rel_tol(3, steps - 2)).unwrap());
        }
        let gains = DistributedGains { alpha: 1.0, xi: 2.0, gamma: 0.25 };
        let topo = GraphTopology::path(p).unwrap();
        let state0 =
            DistributedState::new(vec![DVector::zeros(6); p], gains, topo).unwrap();
        let x0s = vec![dvector![0.2, -0.1]; p];
        let traces = run_distributed(&sys, &x0s, &inputs, state0, 0.0, 7).unwrap();
        for (i, t) in traces.iter().enumerate() {
            assert!(t.last().unwrap() < &1e-2, "agent {i} final error {}", t.last().unwrap());
        }
        // Consensus: final estimates agree across agents.
        let finals: Vec<f64> = traces.iter().map(|t| *t.last().unwrap()).collect();
        let spread = finals.iter().fold(0.0f64, |a, &b| a.max(b))
            - finals.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        assert!(spread < 1e-3);
    }

    #[test]
    fn ls_identity_on_trivial_system() {
        let sys = LtiSystem::new(DMatrix::zeros(2, 2), DMatrix::identity(2, 2)).unwrap();
        let rec = simulate_lti(&sys, &dvector![0.3, 0.4], &random_inputs(2, 20, 9), 0.0, 0).unwrap();
        let res =
            ls_identify(&[rec], CompositionMode::Single, &[1.0], default_rel_tol(4, 20)).unwrap();
        assert!(res.unique);
        let mut expected = DMatrix::zeros(2, 4);
        expected.view_mut((0, 2), (2, 2)).copy_from(&DMatrix::identity(2, 2));
        assert!((res.g_hat - expected).norm() < 1e-12);
        assert!(res.residual < 1e-12);
    }

    #[test]
    fn ls_recovers_batch_reactor_from_designed_data_all_modes() {
        let sys = builtin_system("batch_reactor").unwrap();
        let (n, l) = (4usize, 5usize); // order n + 1
        let truth = {
            let mut g = DMatrix::zeros(4, 6);
            g.view_mut((0, 0), (4, 4)).copy_from(sys.a());
            g.view_mut((0, 4), (4, 2)).copy_from(sys.b());
            g
        };
        for (mode, lengths) in [
            (CompositionMode::Cumulative, vec![14 + n]),
            (CompositionMode::Mosaic, vec![9, 10, 11, 12, 13]),
            (CompositionMode::Hybrid { shared: 2 }, vec![18, 10, 12]),
        ] {
            let p = match mode {
                CompositionMode::Mosaic => 5,
                CompositionMode::Cumulative => 2,
                _ => 4,
            };
            let req = DesignRequest {
                dim_m: 2,
                order_l: l,
                member_count: p,
                mode,
                lengths,
                weights: vec![1.0; p],
                rng_seed: 17,
            };
            let (bundle, _) = design_signals(&req).unwrap();
            let records: Vec<IoRecord> = bundle
                .members()
                .iter()
                .map(|u| simulate_lti(&sys, &DVector::zeros(4), u, 0.0, 0).unwrap())
                .collect();
            let res = ls_identify(&records, mode, bundle.weights(), 1e-9).unwrap();
            assert!(res.unique, "{mode:?} data not unique");
            let err = (&res.g_hat - &truth).norm();
            assert!(err < 1e-8, "{mode:?} error {err}");
        }
    }

    #[test]
    fn ls_reports_nonunique_on_poor_data() {
        let sys = builtin_system("voltage_converter").unwrap();
        let zero_inputs = Trajectory::new(DMatrix::zeros(1, 10), "u").unwrap();
        let rec = simulate_lti(&sys, &DVector::zeros(2), &zero_inputs, 0.0, 0).unwrap();
        let res = ls_identify(&[rec], CompositionMode::Single, &[1.0], 1e-9).unwrap();
        assert!(!res.unique);
    }

    #[test]
    fn condition_checker_boundaries() {
        let bundle = TrajectoryBundle::new(
            vec![random_inputs(1, 60, 2), random_inputs(1, 60, 3)],
            vec![1.0, 1.0],
            0,
        )
        .unwrap();
        let k5 = GraphTopology::complete(5).unwrap();
        // lambda_max(K5) = 5: gamma 0.199 passes, 0.201 fails.
        let pass = DistributedGains { alpha: 2.0, xi: 1.0, gamma: 0.199 };
        let fail = DistributedGains { alpha: 2.0, xi: 1.0, gamma: 0.201 };
        let rep = check_convergence_conditions(&pass, Some(&k5), &bundle, 20, 3).unwrap();
        assert!(rep.gain_ranges && rep.windowed_excitation && rep.boundedness);
        let rep = check_convergence_conditions(&fail, Some(&k5), &bundle, 20, 3).unwrap();
        assert!(!rep.gain_ranges);
        let bad_alpha = DistributedGains { alpha: 2.01, xi: 1.0, gamma: 0.1 };
        assert!(!check_convergence_conditions(&bad_alpha, Some(&k5), &bundle, 20, 3)
            .unwrap()
            .gain_ranges);
        // Window too short for order-3 richness: condition iii fails at 0.
        let rep = check_convergence_conditions(&pass, Some(&k5), &bundle, 2, 3).unwrap();
        assert!(!rep.windowed_excitation);
        assert_eq!(rep.failing_window, Some(0));
    }
}
