//! Signals, multi-trajectory bundles, LTI systems, graph topologies, and
//! simulation of system rollouts.
//!
//! Conventions: a trajectory stores its samples as the columns of an
//! `m x T` matrix. An [`IoRecord`] from a rollout holds `x(0..T)` and
//! `u(0..T-1)` so the `X-`, `X+`, `U` data blocks are plain slices.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{self, default_rel_tol};

/// A finite time-indexed vector signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    data: DMatrix<f64>,
    label: String,
}

impl Trajectory {
    /// Build from an `m x T` matrix whose column `k` is the sample `z(k)`.
    pub fn new(data: DMatrix<f64>, label: impl Into<String>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::InvalidInput("trajectory must have m >= 1 and T >= 1".into()));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("trajectory contains non-finite values".into()));
        }
        Ok(Trajectory { data, label: label.into() })
    }

    pub fn from_samples(samples: &[DVector<f64>], label: impl Into<String>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("trajectory needs at least one sample".into()));
        }
        let m = samples[0].len();
        if samples.iter().any(|s| s.len() != m) {
            return Err(Error::DimensionMismatch("trajectory samples have mixed dimensions".into()));
        }
        let data = DMatrix::from_fn(m, samples.len(), |i, k| samples[k][i]);
        Trajectory::new(data, label)
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    /// Number of samples T.
    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        false // T >= 1 by construction
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn sample(&self, k: usize) -> DVector<f64> {
        self.data.column(k).into_owned()
    }

    /// Samples `k .. k + len` as an `m x len` matrix.
    pub fn window(&self, k: usize, len: usize) -> DMatrix<f64> {
        self.data.columns(k, len).into_owned()
    }

    pub fn scaled(&self, factor: f64) -> Trajectory {
        Trajectory { data: &self.data * factor, label: self.label.clone() }
    }
}

/// Weighted collection of trajectories sharing a signal dimension.
#[derive(Debug, Clone)]
pub struct TrajectoryBundle {
    members: Vec<Trajectory>,
    weights: Vec<f64>,
    shared_prefix_count: usize,
}

impl TrajectoryBundle {
    pub fn new(members: Vec<Trajectory>, weights: Vec<f64>, shared_prefix_count: usize) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidInput("bundle must contain at least one trajectory".into()));
        }
        if members.len() != weights.len() {
            return Err(Error::DimensionMismatch("bundle weights count must match member count".into()));
        }
        let m = members[0].dim();
        if members.iter().any(|t| t.dim() != m) {
            return Err(Error::DimensionMismatch("bundle members must share signal dimension".into()));
        }
        if weights.iter().any(|&w| w == 0.0 || !w.is_finite()) {
            return Err(Error::InvalidInput("zero weight (or non-finite weight) in bundle".into()));
        }
        if shared_prefix_count > members.len() {
            return Err(Error::InvalidInput("shared_prefix_count exceeds member count".into()));
        }
        if shared_prefix_count > 0 {
            let t0 = members[0].len();
            if members[..shared_prefix_count].iter().any(|t| t.len() != t0) {
                return Err(Error::InvalidInput(
                    "the shared-prefix members must all have equal length".into(),
                ));
            }
        }
        Ok(TrajectoryBundle { members, weights, shared_prefix_count })
    }

    pub fn members(&self) -> &[Trajectory] {
        &self.members
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn shared_prefix_count(&self) -> usize {
        self.shared_prefix_count
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.members[0].dim()
    }

    pub fn with_weights(&self, weights: Vec<f64>) -> Result<TrajectoryBundle> {
        TrajectoryBundle::new(self.members.clone(), weights, self.shared_prefix_count)
    }
}

/// Discrete-time state-space pair x(k+1) = A x(k) + B u(k).
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl LtiSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() || a.nrows() == 0 {
            return Err(Error::InvalidInput("A must be square and non-empty".into()));
        }
        if b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(Error::DimensionMismatch("B must be n x m with matching n".into()));
        }
        Ok(LtiSystem { a, b })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// [B AB ... A^{n-1}B]
    pub fn controllability_matrix(&self) -> DMatrix<f64> {
        let n = self.state_dim();
        let m = self.input_dim();
        let mut ctrb = DMatrix::zeros(n, n * m);
        let mut block = self.b.clone();
        for i in 0..n {
            ctrb.view_mut((0, i * m), (n, m)).copy_from(&block);
            block = &self.a * &block;
        }
        ctrb
    }

    pub fn is_controllable(&self) -> Result<bool> {
        let c = self.controllability_matrix();
        let tol = default_rel_tol(c.nrows(), c.ncols());
        Ok(linalg::numeric_rank(&c, tol)?.numeric_rank == self.state_dim())
    }

    /// Row-major vectorization of [A B], the theta parameter of the identifiers.
    pub fn theta(&self) -> DVector<f64> {
        let n = self.state_dim();
        let m = self.input_dim();
        let mut theta = DVector::zeros(n * (n + m));
        for i in 0..n {
            for j in 0..n {
                theta[i * (n + m) + j] = self.a[(i, j)];
            }
            for j in 0..m {
                theta[i * (n + m) + n + j] = self.b[(i, j)];
            }
        }
        theta
    }
}

/// Recorded input/state rollout: `x(0..T)` and `u(0..T-1)`.
#[derive(Debug, Clone)]
pub struct IoRecord {
    input: Trajectory,
    state: Trajectory,
}

impl IoRecord {
    pub fn new(input: Trajectory, state: Trajectory) -> Result<Self> {
        if state.len() != input.len() + 1 {
            return Err(Error::DimensionMismatch(format!(
                "state length must be input length + 1 (got {} and {})",
                state.len(),
                input.len()
            )));
        }
        Ok(IoRecord { input, state })
    }

    pub fn input(&self) -> &Trajectory {
        &self.input
    }

    pub fn state(&self) -> &Trajectory {
        &self.state
    }

    pub fn state_dim(&self) -> usize {
        self.state.dim()
    }

    pub fn input_dim(&self) -> usize {
        self.input.dim()
    }

    /// Number of input samples T.
    pub fn steps(&self) -> usize {
        self.input.len()
    }

    /// X- = [x(0) ... x(T-1)]
    pub fn x_minus(&self) -> DMatrix<f64> {
        self.state.window(0, self.steps())
    }

    /// X+ = [x(1) ... x(T)]
    pub fn x_plus(&self) -> DMatrix<f64> {
        self.state.window(1, self.steps())
    }

    /// U = [u(0) ... u(T-1)]
    pub fn u(&self) -> DMatrix<f64> {
        self.input.data().clone()
    }
}

/// Zero-mean unit-variance Gaussian from a seedable stream via Box-Muller.
pub(crate) fn standard_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Roll the system forward under `inputs` with i.i.d. Gaussian process noise of
/// per-component standard deviation `noise_std`. Deterministic for a fixed
/// seed (ChaCha8 stream, Box-Muller normals).
pub fn simulate_lti(
    sys: &LtiSystem,
    x0: &DVector<f64>,
    inputs: &Trajectory,
    noise_std: f64,
    rng_seed: u64,
) -> Result<IoRecord> {
    let n = sys.state_dim();
    if x0.len() != n {
        return Err(Error::DimensionMismatch("x0 length must equal the state dimension".into()));
    }
    if inputs.dim() != sys.input_dim() {
        return Err(Error::DimensionMismatch("input trajectory dimension must equal m".into()));
    }
    if noise_std < 0.0 {
        return Err(Error::InvalidInput("noise_std must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let t = inputs.len();
    let mut states = DMatrix::zeros(n, t + 1);
    states.column_mut(0).copy_from(x0);
    for k in 0..t {
        let mut next = sys.a() * states.column(k) + sys.b() * inputs.data().column(k);
        if noise_std > 0.0 {
            for i in 0..n {
                next[i] += noise_std * standard_normal(&mut rng);
            }
        }
        states.column_mut(k + 1).copy_from(&next);
    }
    IoRecord::new(inputs.clone(), Trajectory::new(states, format!("{}__state", inputs.label()))?)
}

/// Named benchmark systems with the exact published matrices.
pub fn builtin_system(name: &str) -> Result<LtiSystem> {
    match name {
        "voltage_converter" => LtiSystem::new(
            DMatrix::from_row_slice(2, 2, &[1.0000, -0.0500, 0.0004, 0.9998]),
            DMatrix::from_row_slice(2, 1, &[0.0125, 0.0000]),
        ),
        "batch_reactor" => LtiSystem::new(
            DMatrix::from_row_slice(
                4,
                4,
                &[
                    1.178, 0.001, 0.511, -0.403, //
                    -0.051, 0.661, -0.011, 0.061, //
                    0.076, 0.335, 0.560, 0.382, //
                    0.0, 0.335, 0.089, 0.849,
                ],
            ),
            DMatrix::from_row_slice(
                4,
                2,
                &[
                    0.004, -0.087, //
                    0.467, 0.001, //
                    0.213, -0.235, //
                    0.213, -0.016,
                ],
            ),
        ),
        other => Err(Error::InvalidInput(format!("unknown builtin system '{other}'"))),
    }
}

/// Undirected communication graph with its Laplacian.
#[derive(Debug, Clone)]
pub struct GraphTopology {
    node_count: usize,
    edges: Vec<(usize, usize)>,
    laplacian: DMatrix<f64>,
}

impl GraphTopology {
    pub fn new(node_count: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::InvalidInput("graph needs at least one node".into()));
        }
        let mut lap = DMatrix::zeros(node_count, node_count);
        let mut norm_edges = Vec::new();
        for &(a, b) in edges {
            if a >= node_count || b >= node_count || a == b {
                return Err(Error::InvalidInput(format!("invalid edge ({a}, {b})")));
            }
            let (lo, hi) = (a.min(b), a.max(b));
            if norm_edges.contains(&(lo, hi)) {
                continue;
            }
            norm_edges.push((lo, hi));
            lap[(lo, hi)] -= 1.0;
            lap[(hi, lo)] -= 1.0;
            lap[(lo, lo)] += 1.0;
            lap[(hi, hi)] += 1.0;
        }
        Ok(GraphTopology { node_count, edges: norm_edges, laplacian: lap })
    }

    pub fn path(node_count: usize) -> Result<Self> {
        let edges: Vec<_> = (0..node_count.saturating_sub(1)).map(|i| (i, i + 1)).collect();
        GraphTopology::new(node_count, &edges)
    }

    pub fn cycle(node_count: usize) -> Result<Self> {
        let mut edges: Vec<_> = (0..node_count.saturating_sub(1)).map(|i| (i, i + 1)).collect();
        if node_count > 2 {
            edges.push((node_count - 1, 0));
        }
        GraphTopology::new(node_count, &edges)
    }

    pub fn complete(node_count: usize) -> Result<Self> {
        let mut edges = Vec::new();
        for i in 0..node_count {
            for j in i + 1..node_count {
                edges.push((i, j));
            }
        }
        GraphTopology::new(node_count, &edges)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn laplacian(&self) -> &DMatrix<f64> {
        &self.laplacian
    }

    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter_map(|&(a, b)| if a == i { Some(b) } else if b == i { Some(a) } else { None })
            .collect()
    }

    pub fn laplacian_eig_max(&self) -> Result<f64> {
        linalg::symmetric_eig_max(&self.laplacian)
    }

    /// Connected iff the second-smallest Laplacian eigenvalue is positive.
    pub fn is_connected(&self) -> Result<bool> {
        if self.node_count == 1 {
            return Ok(true);
        }
        let mut ev = linalg::symmetric_eigenvalues(&self.laplacian)?;
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(ev[1] > 1e-9)
    }
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct ManifestMember {
    file: String,
    weight: f64,
    label: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    dim_m: usize,
    shared_prefix_count: usize,
    members: Vec<ManifestMember>,
}

/// Write a trajectory as CSV with header `k,z1,...,zm`.
pub fn save_trajectory_csv(traj: &Trajectory, path: &Path) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).map_err(|e| Error::Parse(e.to_string()))?;
    let mut header = vec!["k".to_string()];
    header.extend((1..=traj.dim()).map(|i| format!("z{i}")));
    wtr.write_record(&header).map_err(|e| Error::Parse(e.to_string()))?;
    for k in 0..traj.len() {
        let mut row = vec![k.to_string()];
        row.extend((0..traj.dim()).map(|i| format!("{:?}", traj.data()[(i, k)])));
        wtr.write_record(&row).map_err(|e| Error::Parse(e.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn load_trajectory_csv(path: &Path, label: impl Into<String>) -> Result<Trajectory> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Parse(e.to_string()))?;
    let header_len = rdr.headers().map_err(|e| Error::Parse(e.to_string()))?.len();
    if header_len < 2 {
        return Err(Error::Parse(format!("{}: expected header k,z1,...,zm", path.display())));
    }
    let m = header_len - 1;
    let mut samples: Vec<DVector<f64>> = Vec::new();
    for (row_i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        if rec.len() != m + 1 {
            return Err(Error::Parse(format!(
                "{}: row {} has {} fields, expected {}",
                path.display(),
                row_i + 1,
                rec.len(),
                m + 1
            )));
        }
        let mut v = DVector::zeros(m);
        for i in 0..m {
            let x: f64 = rec[i + 1]
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("{}: bad float '{}'", path.display(), &rec[i + 1])))?;
            if !x.is_finite() {
                return Err(Error::Parse(format!("{}: non-finite value in row {}", path.display(), row_i + 1)));
            }
            v[i] = x;
        }
        samples.push(v);
    }
    Trajectory::from_samples(&samples, label)
}

/// Write an IoRecord as CSV `k,u1,...,um,x1,...,xn`; the final row carries the
/// terminal state with empty u columns.
pub fn save_io_record_csv(rec: &IoRecord, path: &Path) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).map_err(|e| Error::Parse(e.to_string()))?;
    let (m, n) = (rec.input_dim(), rec.state_dim());
    let mut header = vec!["k".to_string()];
    header.extend((1..=m).map(|i| format!("u{i}")));
    header.extend((1..=n).map(|i| format!("x{i}")));
    wtr.write_record(&header).map_err(|e| Error::Parse(e.to_string()))?;
    for k in 0..=rec.steps() {
        let mut row = vec![k.to_string()];
        for i in 0..m {
            if k < rec.steps() {
                row.push(format!("{:?}", rec.input().data()[(i, k)]));
            } else {
                row.push(String::new());
            }
        }
        for i in 0..n {
            row.push(format!("{:?}", rec.state().data()[(i, k)]));
        }
        wtr.write_record(&row).map_err(|e| Error::Parse(e.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn load_io_record_csv(path: &Path, n: usize, m: usize) -> Result<IoRecord> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Parse(e.to_string()))?;
    let mut inputs: Vec<DVector<f64>> = Vec::new();
    let mut states: Vec<DVector<f64>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        if rec.len() != 1 + m + n {
            return Err(Error::Parse(format!("{}: bad column count", path.display())));
        }
        let u_fields: Vec<&str> = (1..=m).map(|i| rec[i].trim()).collect();
        let has_u = u_fields.iter().any(|s| !s.is_empty());
        if has_u {
            let mut u = DVector::zeros(m);
            for (i, s) in u_fields.iter().enumerate() {
                u[i] = s.parse().map_err(|_| Error::Parse(format!("bad float '{s}'")))?;
            }
            inputs.push(u);
        }
        let mut x = DVector::zeros(n);
        for i in 0..n {
            let s = rec[1 + m + i].trim();
            x[i] = s.parse().map_err(|_| Error::Parse(format!("bad float '{s}'")))?;
        }
        states.push(x);
    }
    IoRecord::new(
        Trajectory::from_samples(&inputs, "input")?,
        Trajectory::from_samples(&states, "state")?,
    )
}

/// Save a bundle as per-member CSVs plus a JSON manifest in `dir`.
pub fn save_bundle(bundle: &TrajectoryBundle, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut members = Vec::new();
    for (i, (traj, &w)) in bundle.members().iter().zip(bundle.weights()).enumerate() {
        let file = format!("member_{i:02}.csv");
        save_trajectory_csv(traj, &dir.join(&file))?;
        members.push(ManifestMember { file, weight: w, label: traj.label().to_string() });
    }
    let manifest = Manifest {
        dim_m: bundle.dim(),
        shared_prefix_count: bundle.shared_prefix_count(),
        members,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

pub fn load_bundle(manifest_path: &Path) -> Result<TrajectoryBundle> {
    let text = std::fs::read_to_string(manifest_path)?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("manifest: {e}")))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut members = Vec::new();
    let mut weights = Vec::new();
    for m in &manifest.members {
        if m.weight == 0.0 {
            return Err(Error::Parse(format!("zero weight for member '{}'", m.label)));
        }
        let traj = load_trajectory_csv(&base.join(&m.file), m.label.clone())?;
        if traj.dim() != manifest.dim_m {
            return Err(Error::Parse(format!(
                "member '{}' has dimension {}, manifest says {}",
                m.label,
                traj.dim(),
                manifest.dim_m
            )));
        }
        members.push(traj);
        weights.push(m.weight);
    }
    TrajectoryBundle::new(members, weights, manifest.shared_prefix_count)
}
