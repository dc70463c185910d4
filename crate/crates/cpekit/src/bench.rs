//! Cost accounting for repeated-per-trial PE checks versus one composed
//! mosaic check, plus wall-clock rank benchmarks over matched scenarios.

use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Unit-constant flop model: rank checks cost (rows)^2 * columns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlopModel {
    pub dim_m: usize,
    pub order_l: usize,
    /// Hankel column counts per trial, C_k = T_k - L + 1.
    pub column_counts: Vec<usize>,
}

impl FlopModel {
    pub fn new(dim_m: usize, order_l: usize, column_counts: Vec<usize>) -> Result<Self> {
        if dim_m == 0 || order_l == 0 {
            return Err(Error::InvalidInput("m and L must be positive".into()));
        }
        if column_counts.is_empty() || column_counts.iter().any(|&c| c == 0) {
            return Err(Error::InvalidInput("column counts must be positive".into()));
        }
        Ok(FlopModel { dim_m, order_l, column_counts })
    }

    pub fn from_lengths(dim_m: usize, order_l: usize, lengths: &[usize]) -> Result<Self> {
        if lengths.iter().any(|&t| t < order_l) {
            return Err(Error::InsufficientLength(
                "every length must be at least L to form Hankel columns".into(),
            ));
        }
        let counts = lengths.iter().map(|&t| t - order_l + 1).collect();
        FlopModel::new(dim_m, order_l, counts)
    }

    /// Total mosaic columns C = sum C_k.
    pub fn total_columns(&self) -> usize {
        self.column_counts.iter().sum()
    }

    /// Mean columns per trial.
    pub fn mean_columns(&self) -> f64 {
        self.total_columns() as f64 / self.column_counts.len() as f64
    }
}

/// Exact integer costs under the unit-constant model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopCosts {
    /// sum_k (mL)^2 C_k: one rank check per trial.
    pub pe_repeated: u128,
    /// (mL)^2 C: one rank check of the side-by-side composite.
    pub mcpe: u128,
}

pub fn flop_costs(model: &FlopModel) -> FlopCosts {
    let rows = (model.dim_m * model.order_l) as u128;
    let per_check = rows * rows;
    let pe_repeated = model.column_counts.iter().map(|&c| per_check * c as u128).sum();
    let mcpe = per_check * model.total_columns() as u128;
    FlopCosts { pe_repeated, mcpe }
}

/// Number of repeated trials beyond which one composed check is cheaper:
/// K_th = ceil(C / c_bar).
pub fn crossover_threshold(total_columns: usize, mean_columns: usize) -> Result<usize> {
    if mean_columns == 0 {
        return Err(Error::InvalidInput("mean column count must be at least 1".into()));
    }
    Ok(total_columns.div_ceil(mean_columns))
}

/// One benchmark case: a named matrix whose numeric rank is timed.
#[derive(Debug, Clone)]
pub struct BenchScenario {
    pub mode: String,
    pub matrix: DMatrix<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchRow {
    pub mode: String,
    pub rows: usize,
    pub cols: usize,
    pub median_seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchTable {
    pub rows: Vec<BenchRow>,
    /// True when the spread between modes is within timer noise, so the
    /// ordering of `rows` is not meaningful.
    pub inconclusive_ordering: bool,
}

/// Median-of-`runs` wall-clock timing of a numeric rank computation per
/// scenario, after two untimed warm-ups each.
pub fn timed_rank_bench(scenarios: &[BenchScenario], runs: usize) -> Result<BenchTable> {
    if scenarios.is_empty() {
        return Err(Error::InvalidInput("no scenarios".into()));
    }
    if runs == 0 {
        return Err(Error::InvalidInput("need at least one timed run".into()));
    }
    let mut rows = Vec::with_capacity(scenarios.len());
    for sc in scenarios {
        let tol = linalg::default_rel_tol(sc.matrix.nrows(), sc.matrix.ncols());
        for _ in 0..2 {
            let _ = linalg::numeric_rank(&sc.matrix, tol)?;
        }
        let mut times = Vec::with_capacity(runs);
        for _ in 0..runs {
            let t0 = Instant::now();
            let report = linalg::numeric_rank(&sc.matrix, tol)?;
            let dt = t0.elapsed().as_secs_f64();
            std::hint::black_box(report);
            times.push(dt);
        }
        times.sort_by(|a, b| a.total_cmp(b));
        rows.push(BenchRow {
            mode: sc.mode.clone(),
            rows: sc.matrix.nrows(),
            cols: sc.matrix.ncols(),
            median_seconds: times[times.len() / 2],
        });
    }
    let fastest = rows.iter().map(|r| r.median_seconds).fold(f64::INFINITY, f64::min);
    let slowest = rows.iter().map(|r| r.median_seconds).fold(0.0f64, f64::max);
    // Sub-50-microsecond spreads are scheduler noise at desk scale.
    let inconclusive_ordering = slowest - fastest < 50e-6;
    Ok(BenchTable { rows, inconclusive_ordering })
}

/// Write a bench table as CSV `mode,rows,cols,median_seconds`.
pub fn save_bench_csv(table: &BenchTable, path: &std::path::Path) -> Result<()> {
    let mut out = String::from("mode,rows,cols,median_seconds\n");
    for r in &table.rows {
        out.push_str(&format!("{},{},{},{:?}\n", r.mode, r.rows, r.cols, r.median_seconds));
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_trial_costs_are_equal() {
        let model = FlopModel::new(2, 5, vec![11]).unwrap();
        let costs = flop_costs(&model);
        assert_eq!(costs.pe_repeated, costs.mcpe);
    }

    #[test]
    fn mosaic_cost_short_trajectory_example() {
        // m=2, L=5, lengths 7,7,6,6,5 -> columns 3,3,2,2,1 (C = 11).
        let model = FlopModel::from_lengths(2, 5, &[7, 7, 6, 6, 5]).unwrap();
        assert_eq!(model.column_counts, vec![3, 3, 2, 2, 1]);
        assert_eq!(model.total_columns(), 11);
        let costs = flop_costs(&model);
        assert_eq!(costs.mcpe, 1100);

        // Two repeated PE trials of 10 columns each cost 2000 > 1100.
        let repeated = FlopModel::new(2, 5, vec![10, 10]).unwrap();
        assert_eq!(flop_costs(&repeated).pe_repeated, 2000);
        assert!(flop_costs(&repeated).pe_repeated > costs.mcpe);
    }

    #[test]
    fn crossover_examples_and_monotonicity() {
        assert_eq!(crossover_threshold(11, 10).unwrap(), 2);
        assert_eq!(crossover_threshold(10, 10).unwrap(), 1);
        assert_eq!(crossover_threshold(1, 10).unwrap(), 1);
        assert!(crossover_threshold(0, 1).is_ok());
        assert!(crossover_threshold(5, 0).is_err());
        // Monotone nondecreasing in C, nonincreasing in c_bar.
        for c in 1..60usize {
            for cb in 1..20usize {
                let k = crossover_threshold(c, cb).unwrap();
                assert!(crossover_threshold(c + 1, cb).unwrap() >= k);
                assert!(crossover_threshold(c, cb + 1).unwrap() <= k);
            }
        }
    }

    #[test]
    fn repeated_exceeds_composed_iff_more_columns() {
        // Under the unit model both run over (mL)^2, so the comparison
        // reduces to sum C_k vs C exactly.
        for counts in [vec![3usize, 3, 2], vec![10, 10], vec![1]] {
            for c_total in [5usize, 8, 11, 20] {
                let repeated = FlopModel::new(2, 5, counts.clone()).unwrap();
                let composed = FlopModel::new(2, 5, vec![c_total]).unwrap();
                let lhs = flop_costs(&repeated).pe_repeated;
                let rhs = flop_costs(&composed).mcpe;
                let sum: usize = counts.iter().sum();
                assert_eq!(lhs > rhs, sum > c_total);
            }
        }
    }

    #[test]
    fn tiny_matrices_flag_inconclusive() {
        let scenarios: Vec<BenchScenario> = ["mosaic", "cumulative", "hybrid"]
            .iter()
            .map(|mode| BenchScenario {
                mode: mode.to_string(),
                matrix: DMatrix::identity(3, 3),
            })
            .collect();
        let table = timed_rank_bench(&scenarios, 7).unwrap();
        assert!(table.inconclusive_ordering);
    }

    #[test]
    fn doubling_columns_increases_time() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let sizes = [(200usize, 200usize), (200, 400), (200, 800)];
        let scenarios: Vec<BenchScenario> = sizes
            .iter()
            .map(|&(r, c)| BenchScenario {
                mode: format!("{r}x{c}"),
                matrix: DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0)),
            })
            .collect();
        let table = timed_rank_bench(&scenarios, 7).unwrap();
        assert!(
            table.rows[0].median_seconds < table.rows[2].median_seconds,
            "expected SVD time to grow with columns: {:?}",
            table.rows
        );
    }
}
