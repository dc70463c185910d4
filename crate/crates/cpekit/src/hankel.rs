//! Block Hankel matrices and the mosaic / cumulative / hybrid composition
//! schemes for combining several weighted Hankel blocks.

use nalgebra::DMatrix;
use std::path::Path;

use crate::error::{Error, Result};
use crate::traj::{Trajectory, TrajectoryBundle};

/// How a composite excitation matrix stitches the member Hankel blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompositionMode {
    /// Single signal, plain H_L(z).
    Single,
    /// Side-by-side concatenation of all weighted blocks.
    Mosaic,
    /// Weighted sum of all blocks (requires equal member lengths).
    Cumulative,
    /// First `shared` members summed, the rest concatenated after the sum.
    Hybrid { shared: usize },
}

impl CompositionMode {
    pub fn tag(&self) -> &'static str {
        match self {
            CompositionMode::Single => "single",
            CompositionMode::Mosaic => "mosaic",
            CompositionMode::Cumulative => "cumulative",
            CompositionMode::Hybrid { .. } => "hybrid",
        }
    }
}

/// A depth-L block Hankel matrix, possibly composed from several members.
#[derive(Debug, Clone)]
pub struct HankelMatrix {
    pub matrix: DMatrix<f64>,
    pub depth: usize,
    pub mode: CompositionMode,
    /// Column count contributed by each concatenated block, left to right.
    pub column_blocks: Vec<usize>,
    pub weights_used: Vec<f64>,
}

impl HankelMatrix {
    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Columns of H_L for a signal of length T.
pub fn hankel_cols(signal_len: usize, depth: usize) -> Result<usize> {
    if depth == 0 {
        return Err(Error::InvalidInput("Hankel depth must be at least 1".into()));
    }
    if signal_len < depth {
        return Err(Error::InsufficientLength(format!(
            "signal length {signal_len} is shorter than depth {depth}"
        )));
    }
    Ok(signal_len - depth + 1)
}

/// Depth-L block Hankel matrix of raw column data (`m x T`), rows `mL`,
/// columns `T - L + 1`; column j stacks samples j..j+L-1.
pub fn hankel_of_data(data: &DMatrix<f64>, depth: usize) -> Result<DMatrix<f64>> {
    let m = data.nrows();
    let cols = hankel_cols(data.ncols(), depth)?;
    let mut h = DMatrix::zeros(m * depth, cols);
    for j in 0..cols {
        for l in 0..depth {
            h.view_mut((l * m, j), (m, 1)).copy_from(&data.column(j + l));
        }
    }
    Ok(h)
}

/// H_L(z) of a single trajectory.
pub fn build_hankel(traj: &Trajectory, depth: usize) -> Result<HankelMatrix> {
    let matrix = hankel_of_data(traj.data(), depth)?;
    let cols = matrix.ncols();
    Ok(HankelMatrix {
        matrix,
        depth,
        mode: CompositionMode::Single,
        column_blocks: vec![cols],
        weights_used: vec![1.0],
    })
}

/// Compose already-built equal-row-count blocks according to `mode`. Shared
/// (summed) blocks must agree in column count.
pub fn compose_blocks(
    blocks: &[DMatrix<f64>],
    weights: &[f64],
    mode: CompositionMode,
) -> Result<(DMatrix<f64>, Vec<usize>)> {
    if blocks.is_empty() {
        return Err(Error::InvalidInput("no blocks to compose".into()));
    }
    if blocks.len() != weights.len() {
        return Err(Error::DimensionMismatch("weights count must match block count".into()));
    }
    let rows = blocks[0].nrows();
    if blocks.iter().any(|b| b.nrows() != rows) {
        return Err(Error::DimensionMismatch("blocks must share row count".into()));
    }
    let shared = match mode {
        CompositionMode::Single => {
            if blocks.len() != 1 {
                return Err(Error::InvalidInput("single mode takes exactly one block".into()));
            }
            let w = weights[0];
            return Ok((&blocks[0] * w, vec![blocks[0].ncols()]));
        }
        CompositionMode::Mosaic => 0,
        CompositionMode::Cumulative => blocks.len(),
        CompositionMode::Hybrid { shared } => {
            if shared < 2 || shared > blocks.len() {
                return Err(Error::InvalidInput(format!(
                    "hybrid shared count {shared} must lie in 2..={}",
                    blocks.len()
                )));
            }
            shared
        }
    };

    let mut parts: Vec<DMatrix<f64>> = Vec::new();
    if shared > 0 {
        let c0 = blocks[0].ncols();
        if blocks[..shared].iter().any(|b| b.ncols() != c0) {
            return Err(Error::DimensionMismatch(
                "summed blocks must share column count".into(),
            ));
        }
        let mut acc = DMatrix::zeros(rows, c0);
        for (b, &w) in blocks[..shared].iter().zip(&weights[..shared]) {
            acc += b * w;
        }
        parts.push(acc);
    }
    for (b, &w) in blocks[shared..].iter().zip(&weights[shared..]) {
        parts.push(b * w);
    }

    let block_cols: Vec<usize> = parts.iter().map(|p| p.ncols()).collect();
    let total: usize = block_cols.iter().sum();
    let mut out = DMatrix::zeros(rows, total);
    let mut at = 0;
    for p in &parts {
        out.view_mut((0, at), (rows, p.ncols())).copy_from(p);
        at += p.ncols();
    }
    Ok((out, block_cols))
}

/// Composite excitation matrix of a weighted bundle at depth L.
pub fn build_composite(
    bundle: &TrajectoryBundle,
    depth: usize,
    mode: CompositionMode,
) -> Result<HankelMatrix> {
    if let CompositionMode::Hybrid { shared } = mode {
        if shared != bundle.shared_prefix_count() {
            return Err(Error::InvalidInput(format!(
                "hybrid shared count {shared} does not match the bundle's shared prefix {}",
                bundle.shared_prefix_count()
            )));
        }
    }
    if mode == CompositionMode::Single && bundle.len() != 1 {
        return Err(Error::InvalidInput("single mode needs a one-member bundle".into()));
    }
    let blocks = bundle
        .members()
        .iter()
        .map(|t| hankel_of_data(t.data(), depth))
        .collect::<Result<Vec<_>>>()?;
    let (matrix, column_blocks) = compose_blocks(&blocks, bundle.weights(), mode)?;
    Ok(HankelMatrix {
        matrix,
        depth,
        mode,
        column_blocks,
        weights_used: bundle.weights().to_vec(),
    })
}

/// Dump the composed matrix as headerless CSV (one row per line).
pub fn save_hankel_csv(h: &HankelMatrix, path: &Path) -> Result<()> {
    let mut out = String::new();
    for i in 0..h.rows() {
        let row: Vec<String> = (0..h.cols()).map(|j| format!("{:?}", h.matrix[(i, j)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
