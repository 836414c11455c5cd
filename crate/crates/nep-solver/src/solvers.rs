//! The two equivalent outer solvers: a semi-smooth Newton method that
//! solves its linearization matrix-free with GMRES, and an active-set
//! method that assembles and factorizes the same linearization as one
//! coupled sparse system. Both carry an iterate of controls, state,
//! adjoints and the classification built from them, and both terminate
//! when the classification stops changing.

use crate::linalg::{gmres, lu_factorize, FnOperator};
use crate::mesh_fem::block_m_norm;
use crate::mesh_fem::SparseMatrix;
use crate::problem::{AdjointMode, NepProblem};
use crate::semismooth::{classify_sets, project_box, set_change_count, ActiveSets};
use crate::Error;
use std::time::Instant;

/// An optimality residual at or below this value marks a terminated run as
/// certified.
pub const CERTIFIED_TOLERANCE: f64 = 1e-6;

/// Outer solution method.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Matrix-free semi-smooth Newton steps, inner solves by GMRES.
    SemismoothNewton,
    /// Assembled coupled linear system per iteration, solved directly.
    ActiveSet,
}

/// Direct factorization used for the active-set system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DirectSolver {
    SparseLu,
}

/// Settings shared by both methods.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub method: Method,
    /// Maximum number of outer iterations.
    pub max_outer: usize,
    /// Relative GMRES tolerance for the Newton systems.
    pub gmres_tol: f64,
    /// GMRES restart length.
    pub gmres_restart: usize,
    /// Total GMRES iteration budget per Newton system.
    pub gmres_maxiter: usize,
    pub direct_solver: DirectSolver,
    /// Outer termination once the optimality residual drops below this,
    /// even while the classification still fluctuates.
    pub residual_fallback: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            method: Method::SemismoothNewton,
            max_outer: 30,
            gmres_tol: 1e-12,
            gmres_restart: 200,
            gmres_maxiter: 2000,
            direct_solver: DirectSolver::SparseLu,
            residual_fallback: 1e-13,
        }
    }
}

/// One outer iterate: controls, the state they induce, the adjoints
/// reconstructed with the multiplier support the step was computed with,
/// and the classification derived from those fields.
#[derive(Debug, Clone)]
pub struct IterateState {
    /// Outer iteration count (zero for the initial iterate).
    pub k: usize,
    pub u: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub p: Vec<Vec<f64>>,
    pub sets: ActiveSets,
}

/// Why the outer loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// The classification repeated, the natural stopping rule.
    SetStationary,
    /// The optimality residual undercut the fallback threshold.
    ResidualFallback,
    /// The iteration budget ran out.
    IterationCap,
}

/// Per-iteration record of the outer loop.
#[derive(Debug, Clone)]
pub struct ReportRow {
    pub k: usize,
    /// Symmetric-difference node count against the previous classification.
    pub node_change: usize,
    /// Exact-multiplier optimality residual of the new iterate.
    pub optimality: f64,
    /// Inner GMRES iterations (absent for the active-set method).
    pub gmres_iterations: Option<usize>,
}

/// Full outcome of a solver run.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub rows: Vec<ReportRow>,
    pub termination: Termination,
    pub wall_seconds: f64,
    pub final_optimality: f64,
    /// Whether the run both terminated regularly and met
    /// [`CERTIFIED_TOLERANCE`].
    pub certified: bool,
    /// Controls after each iteration, in order (the initial iterate is not
    /// included).
    pub u_history: Vec<Vec<Vec<f64>>>,
    /// Classifications including the initial one, so entry `k` is the
    /// classification after `k` iterations.
    pub sets_history: Vec<ActiveSets>,
}

/// The common starting point of both methods: zero controls and adjoints
/// plus the constant state seed, classified. The seed only influences the
/// initial multiplier support.
pub fn initial_iterate(problem: &NepProblem) -> IterateState {
    let m = problem.n_vertices();
    let n = problem.n_players();
    let u = vec![vec![0.0; m]; n];
    let p = vec![vec![0.0; m]; n];
    let y = vec![problem.y0_seed; m];
    let sets = classify_sets(problem, &u, &y, &p);
    IterateState { k: 0, u, y, p, sets }
}

fn bounds_part(problem: &NepProblem, sets: &ActiveSets, j: usize) -> Vec<f64> {
    let spec = &problem.players[j];
    let ps = &sets.players[j];
    (0..problem.n_vertices())
        .map(|i| {
            if ps.lower[i] {
                spec.u_a[i]
            } else if ps.upper[i] {
                spec.u_b[i]
            } else {
                0.0
            }
        })
        .collect()
}

/// The multiplier part of the adjoint load that does not depend on the
/// state: `mu - rho * psi` restricted to the frozen support (in normalized
/// variables).
fn frozen_penalty_constant(problem: &NepProblem, sets: &ActiveSets) -> Vec<f64> {
    (0..problem.n_vertices())
        .map(|i| {
            if sets.penalty_support[i] {
                problem.mu[i] - problem.rho * problem.psi_shifted[i]
            } else {
                0.0
            }
        })
        .collect()
}

fn masked(values: &[f64], mask: &[bool]) -> Vec<f64> {
    values
        .iter()
        .zip(mask)
        .map(|(&v, &m)| if m { v } else { 0.0 })
        .collect()
}

/// One semi-smooth Newton step. The new controls keep the active bounds of
/// the current classification and solve the linearized fixed-point
/// equation on the inactive nodes; the linearization freezes both the
/// control activity and the multiplier support. The reduced system is
/// solved matrix-free with GMRES (each operator application costs one
/// state solve plus one adjoint solve per player). Returns the new iterate
/// and the inner iteration count.
pub fn ssn_step(
    problem: &NepProblem,
    current: &IterateState,
    config: &SolverConfig,
) -> Result<(IterateState, Option<usize>), Error> {
    let m = problem.n_vertices();
    let n = problem.n_players();
    let alpha = problem.alpha;
    let rho = problem.rho;
    let sets = &current.sets;
    let mass = &problem.forms.mass;

    // State response of the fixed (actively bounded) control parts.
    let bounds: Vec<Vec<f64>> = (0..n).map(|j| bounds_part(problem, sets, j)).collect();
    let mut bounds_sum = vec![0.0; m];
    for b in &bounds {
        for i in 0..m {
            bounds_sum[i] += b[i];
        }
    }
    let y_bounds = problem.solve_dirichlet(&mass.mul_vec(&bounds_sum));

    // Constant part q_j of each player's frozen adjoint.
    let pen_const = frozen_penalty_constant(problem, sets);
    let m_pen_const = mass.mul_vec(&pen_const);
    let masked_y_bounds = masked(&y_bounds, &sets.penalty_support);
    let m_masked_y_bounds = mass.mul_vec(&masked_y_bounds);
    let mut rhs = vec![0.0; n * m];
    for j in 0..n {
        let tracking: Vec<f64> = (0..m)
            .map(|i| y_bounds[i] - problem.desired_shifted[j][i])
            .collect();
        let mut load = problem.forms.player_mass[j].mul_vec(&tracking);
        for i in 0..m {
            load[i] += rho * m_masked_y_bounds[i] + m_pen_const[i];
        }
        let q = problem.solve_dirichlet(&load);
        let masked_q = masked(&q, &sets.players[j].inactive);
        let mq = mass.mul_vec(&masked_q);
        for i in 0..m {
            rhs[j * m + i] = -mq[i] / alpha;
        }
    }

    // Linearized fixed-point operator on the stacked inactive control
    // parts. Rows and columns outside the inactive nodes are masked, which
    // leaves the system singular but consistent; GMRES starts at zero and
    // never excites the null space component that matters.
    let op = FnOperator::new(n * m, |x: &[f64], out: &mut [f64]| {
        let mut s = vec![0.0; m];
        for j in 0..n {
            let inactive = &sets.players[j].inactive;
            for i in 0..m {
                if inactive[i] {
                    s[i] += x[j * m + i];
                }
            }
        }
        let t = problem.solve_dirichlet(&mass.mul_vec(&s));
        let masked_t = masked(&t, &sets.penalty_support);
        let m_masked_t = mass.mul_vec(&masked_t);
        for j in 0..n {
            let mut load = problem.forms.player_mass[j].mul_vec(&t);
            for i in 0..m {
                load[i] += rho * m_masked_t[i];
            }
            let z = problem.solve_dirichlet(&load);
            let inactive = &sets.players[j].inactive;
            let v: Vec<f64> = (0..m)
                .map(|i| {
                    if inactive[i] {
                        x[j * m + i] + z[i] / alpha
                    } else {
                        0.0
                    }
                })
                .collect();
            let mv = mass.mul_vec(&v);
            out[j * m..(j + 1) * m].copy_from_slice(&mv);
        }
    });
    let outcome = gmres(
        &op,
        &rhs,
        config.gmres_tol,
        config.gmres_restart,
        config.gmres_maxiter,
    )?;

    // Combine the inactive solution with the active bounds.
    let u: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let inactive = &sets.players[j].inactive;
            (0..m)
                .map(|i| {
                    if inactive[i] {
                        outcome.x[j * m + i]
                    } else {
                        bounds[j][i]
                    }
                })
                .collect()
        })
        .collect();
    let next = finish_step(problem, current, u);
    Ok((next, Some(outcome.iterations)))
}

/// One active-set step. Assembles the coupled linearization in the stacked
/// unknowns (state, controls, adjoints) with the current classification
/// frozen in, factorizes it sparsely, and reads the new iterate off the
/// solution. The linear system is the same one the semi-smooth Newton step
/// solves in reduced form.
pub fn active_set_step(
    problem: &NepProblem,
    current: &IterateState,
    config: &SolverConfig,
) -> Result<(IterateState, Option<usize>), Error> {
    let DirectSolver::SparseLu = config.direct_solver;
    let m = problem.n_vertices();
    let n = problem.n_players();
    let total = (2 * n + 1) * m;
    let sets = &current.sets;
    let stiffness = &problem.forms.stiffness;
    let mass = &problem.forms.mass;
    let u_off = |j: usize| (1 + j) * m;
    let p_off = |j: usize| (1 + n + j) * m;
    let mut trips: Vec<(usize, usize, f64)> = Vec::with_capacity(40 * total);
    let mut rhs = vec![0.0; total];

    // State equation rows: K y - M sum_j u^j = 0 on interior nodes,
    // identity on the boundary.
    for node in 0..problem.mesh.n_vertices() {
        if problem.mesh.boundary_mask[node] {
            trips.push((node, node, 1.0));
            continue;
        }
        for (c, v) in stiffness.row(node) {
            trips.push((node, c, v));
        }
        for j in 0..n {
            for (c, v) in mass.row(node) {
                trips.push((node, u_off(j) + c, -v));
            }
        }
    }

    // Control rows: M u^j + (1/alpha) M D_I p^j = M (bounds part), on all
    // nodes (controls carry no boundary condition).
    for j in 0..n {
        let inactive = &sets.players[j].inactive;
        let l2 = mass.mul_vec(&bounds_part(problem, sets, j));
        for node in 0..m {
            let row = u_off(j) + node;
            for (c, v) in mass.row(node) {
                trips.push((row, u_off(j) + c, v));
                if inactive[c] {
                    trips.push((row, p_off(j) + c, v / problem.alpha));
                }
            }
            rhs[row] = l2[node];
        }
    }

    // Adjoint rows: K p^j - (M_j + rho M D_Y) y = M (frozen penalty
    // constant) - M_j (desired state), interior only.
    for j in 0..n {
        let pen_const = frozen_penalty_constant(problem, sets);
        let mut l1 = mass.mul_vec(&pen_const);
        let md = problem.forms.player_mass[j].mul_vec(&problem.desired_shifted[j]);
        for i in 0..m {
            l1[i] -= md[i];
        }
        for node in 0..m {
            let row = p_off(j) + node;
            if problem.mesh.boundary_mask[node] {
                trips.push((row, p_off(j) + node, 1.0));
                continue;
            }
            for (c, v) in stiffness.row(node) {
                trips.push((row, p_off(j) + c, v));
            }
            for (c, v) in problem.forms.player_mass[j].row(node) {
                trips.push((row, c, -v));
            }
            for (c, v) in mass.row(node) {
                if sets.penalty_support[c] {
                    trips.push((row, c, -problem.rho * v));
                }
            }
            rhs[row] = l1[node];
        }
    }

    let system = SparseMatrix::from_triplets(total, total, &trips);
    let factor = lu_factorize(&system)?;
    let sol = factor.solve(&rhs);

    // Only the state block is read off the direct solve. Adjoints and
    // controls are reconstructed from it through the factorized stiffness
    // block, the same path later residual evaluations use; the control
    // relation of the linear system then holds exactly rather than up to a
    // second factorization's round-off, which matters because deviations
    // get amplified by 1/alpha.
    let y: Vec<f64> = (0..m)
        .map(|i| sol[i] + problem.source_state[i])
        .collect();
    let p: Vec<Vec<f64>> = (0..n)
        .map(|j| problem.solve_adjoint(j, &y, AdjointMode::FrozenMask(&sets.penalty_support)))
        .collect();
    let u: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let bounds = bounds_part(problem, sets, j);
            let ps = &sets.players[j];
            (0..m)
                .map(|i| {
                    if ps.inactive[i] {
                        -p[j][i] / problem.alpha
                    } else {
                        bounds[i]
                    }
                })
                .collect()
        })
        .collect();
    let new_sets = classify_sets(problem, &u, &y, &p);
    Ok((
        IterateState {
            k: current.k + 1,
            u,
            y,
            p,
            sets: new_sets,
        },
        None,
    ))
}

/// Shared tail of both steps: a fresh state solve for the new controls,
/// adjoint reconstruction with the multiplier support the step used, and
/// reclassification.
fn finish_step(problem: &NepProblem, current: &IterateState, u: Vec<Vec<f64>>) -> IterateState {
    let m = problem.n_vertices();
    let y = problem.solve_state(&u);
    let p: Vec<Vec<f64>> = (0..problem.n_players())
        .map(|j| problem.solve_adjoint(j, &y, AdjointMode::FrozenMask(&current.sets.penalty_support)))
        .collect();
    let sets = classify_sets(problem, &u, &y, &p);
    debug_assert_eq!(y.len(), m);
    IterateState {
        k: current.k + 1,
        u,
        y,
        p,
        sets,
    }
}

/// Residual of the projected fixed-point characterization, measured with
/// exact-multiplier adjoints: the block mass norm of
/// `u - P_box(-(1/alpha) p(u))`. Zero exactly at an equilibrium of the
/// penalized game.
pub fn optimality_residual(problem: &NepProblem, iterate: &IterateState) -> f64 {
    let n = problem.n_players();
    let mut blocks = Vec::with_capacity(n);
    for nu in 0..n {
        let p = problem.solve_adjoint(nu, &iterate.y, AdjointMode::ExactMultiplier);
        let w: Vec<f64> = p.iter().map(|v| -v / problem.alpha).collect();
        let spec = &problem.players[nu];
        let proj = project_box(&w, &spec.u_a, &spec.u_b);
        let diff: Vec<f64> = iterate.u[nu]
            .iter()
            .zip(&proj)
            .map(|(a, b)| a - b)
            .collect();
        blocks.push(diff);
    }
    block_m_norm(&problem.forms.mass, &blocks)
}

/// Runs the configured method from the standard initial iterate until the
/// classification repeats, the optimality residual undercuts the fallback
/// threshold, or the iteration budget runs out. Records one report row per
/// iteration.
pub fn run_solver(problem: &NepProblem, config: &SolverConfig) -> Result<SolveReport, Error> {
    let start = Instant::now();
    let mut current = initial_iterate(problem);
    let mut rows = Vec::new();
    let mut u_history = Vec::new();
    let mut sets_history = vec![current.sets.clone()];
    let mut termination = Termination::IterationCap;
    let mut final_optimality = f64::INFINITY;
    for _ in 0..config.max_outer {
        let (next, gmres_iterations) = match config.method {
            Method::SemismoothNewton => ssn_step(problem, &current, config)?,
            Method::ActiveSet => active_set_step(problem, &current, config)?,
        };
        let node_change = set_change_count(&current.sets, &next.sets);
        let optimality = optimality_residual(problem, &next);
        rows.push(ReportRow {
            k: next.k,
            node_change,
            optimality,
            gmres_iterations,
        });
        u_history.push(next.u.clone());
        sets_history.push(next.sets.clone());
        final_optimality = optimality;
        current = next;
        if node_change == 0 {
            termination = Termination::SetStationary;
            break;
        }
        if optimality <= config.residual_fallback {
            termination = Termination::ResidualFallback;
            break;
        }
    }
    let certified = matches!(
        termination,
        Termination::SetStationary | Termination::ResidualFallback
    ) && final_optimality <= CERTIFIED_TOLERANCE;
    Ok(SolveReport {
        rows,
        termination,
        wall_seconds: start.elapsed().as_secs_f64(),
        final_optimality,
        certified,
        u_history,
        sets_history,
    })
}
