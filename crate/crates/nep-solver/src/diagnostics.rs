//! Convergence diagnostics computed after a solver run: contraction-order
//! estimates from consecutive control differences, error rates against a
//! known equilibrium when one is available, and a per-iteration table that
//! combines them with the solver's own records.
//!
//! All norms are block mass norms over the stacked player controls.
//! Entries whose defining quotients would divide noise by noise (any
//! involved norm within round-off of zero, or a non-finite result) are
//! reported as absent rather than as garbage values.

use crate::mesh_fem::{block_m_norm, SparseMatrix};
use crate::problem::ExactSolution;
use crate::solvers::SolveReport;

/// Norms below `SUPPRESS_FACTOR * eps * scale` are treated as zero when
/// deciding whether a quotient is meaningful.
const SUPPRESS_FACTOR: f64 = 100.0;

/// One row of the convergence table, aligned with the solver's report row
/// of the same iteration index.
#[derive(Debug, Clone)]
pub struct TableRow {
    pub k: usize,
    /// Contraction-order estimate from three consecutive control
    /// differences; defined from the fourth iteration on.
    pub kappa: Option<f64>,
    /// Contraction-order estimate from errors against the known
    /// equilibrium; defined from the third iteration on.
    pub kappa_exact: Option<f64>,
    /// Error reduction factor against the known equilibrium; defined from
    /// the second iteration on.
    pub rate: Option<f64>,
    pub node_change: usize,
    pub optimality: f64,
    pub gmres_iterations: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct ConvergenceTable {
    pub rows: Vec<TableRow>,
}

fn block_diff_norm(mass: &SparseMatrix, a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    assert_eq!(a.len(), b.len(), "player count mismatch");
    let diffs: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(u, v)| u - v).collect())
        .collect();
    block_m_norm(mass, &diffs)
}

/// Contraction-order estimates from the iterate history alone: entry `i`
/// (iteration `i + 1`) is
/// `log(d_i / d_{i-1}) / log(d_{i-1} / d_{i-2})`
/// with `d_i` the block mass norm of the control difference at iterate
/// `i`. The first three entries are always absent, as are entries whose
/// difference norms are within round-off of zero.
pub fn kappa_numeric(u_history: &[Vec<Vec<f64>>], mass: &SparseMatrix) -> Vec<Option<f64>> {
    let count = u_history.len();
    let mut out = vec![None; count];
    if count < 2 {
        return out;
    }
    let mut diffs = vec![f64::NAN; count];
    for i in 1..count {
        diffs[i] = block_diff_norm(mass, &u_history[i], &u_history[i - 1]);
    }
    for i in 3..count {
        let window = [diffs[i - 2], diffs[i - 1], diffs[i]];
        let scale = 1.0 + block_m_norm(mass, &u_history[i]);
        let tiny = SUPPRESS_FACTOR * f64::EPSILON * scale;
        if window.iter().any(|&d| !d.is_finite() || d < tiny) {
            continue;
        }
        let value = (window[2] / window[1]).ln() / (window[1] / window[0]).ln();
        if value.is_finite() {
            out[i] = Some(value);
        }
    }
    out
}

/// Error-based diagnostics against a known equilibrium: for each iterate
/// the contraction-order estimate
/// `log(e_i / e_{i-1}) / log(e_{i-1} / e_{i-2})`
/// (defined from the third iteration) and the plain reduction factor
/// `e_i / e_{i-1}` (defined from the second), with `e_i` the block mass
/// norm of the control error. Returned as `(orders, rates)` aligned with
/// the history.
pub fn kappa_exact_and_rate(
    u_history: &[Vec<Vec<f64>>],
    u_bar: &[Vec<f64>],
    mass: &SparseMatrix,
) -> (Vec<Option<f64>>, Vec<Option<f64>>) {
    let count = u_history.len();
    let mut orders = vec![None; count];
    let mut rates = vec![None; count];
    let errors: Vec<f64> = u_history
        .iter()
        .map(|u| block_diff_norm(mass, u, u_bar))
        .collect();
    let scale = 1.0 + block_m_norm(mass, u_bar);
    let tiny = SUPPRESS_FACTOR * f64::EPSILON * scale;
    let ok = |e: f64| e.is_finite() && e >= tiny;
    for i in 1..count {
        if ok(errors[i]) && ok(errors[i - 1]) {
            let value = errors[i] / errors[i - 1];
            if value.is_finite() {
                rates[i] = Some(value);
            }
        }
    }
    for i in 2..count {
        if ok(errors[i]) && ok(errors[i - 1]) && ok(errors[i - 2]) {
            let value = (errors[i] / errors[i - 1]).ln() / (errors[i - 1] / errors[i - 2]).ln();
            if value.is_finite() {
                orders[i] = Some(value);
            }
        }
    }
    (orders, rates)
}

/// Combines the solver report with the diagnostics into one table, row `i`
/// describing iteration `i + 1`. The reference columns stay empty without
/// an exact solution.
pub fn build_table(
    report: &SolveReport,
    mass: &SparseMatrix,
    exact: Option<&ExactSolution>,
) -> ConvergenceTable {
    let kappa = kappa_numeric(&report.u_history, mass);
    let (kappa_exact, rate) = match exact {
        Some(ex) => kappa_exact_and_rate(&report.u_history, &ex.u_bar, mass),
        None => (
            vec![None; report.u_history.len()],
            vec![None; report.u_history.len()],
        ),
    };
    let rows = report
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| TableRow {
            k: r.k,
            kappa: kappa.get(i).copied().flatten(),
            kappa_exact: kappa_exact.get(i).copied().flatten(),
            rate: rate.get(i).copied().flatten(),
            node_change: r.node_change,
            optimality: r.optimality,
            gmres_iterations: r.gmres_iterations,
        })
        .collect();
    ConvergenceTable { rows }
}
