//! Problem data for the N-player game: per-player data, assembled
//! finite element forms, the state and adjoint solves of the optimality
//! system, the gradient map with its monotonicity offset estimate, and the
//! two built-in benchmark problems.
//!
//! Each player `nu` minimizes a tracking functional on its observation
//! region plus a control cost `alpha/2 |u^nu|^2`, coupled through the state
//! equation `-lap(y) = sum_nu u^nu (+ f)` with homogeneous Dirichlet
//! conditions, an `[u_a, u_b]` box on the control, and a penalty
//! `1/(2 rho) |(mu + rho (y - psi))_+|^2` on the shared state bound.

use crate::linalg::{cholesky_factorize, power_iteration, Factorization, FnOperator};
use crate::mesh_fem::{
    assemble_mass, assemble_mass_union, assemble_stiffness, build_rect_mesh, interpolate,
    positive_part_load, Mesh, Rect, RegionIndicator, SparseMatrix,
};
use crate::semismooth::project_box;
use crate::solvers::{DirectSolver, Method, SolverConfig};
use crate::Error;

/// One player's data: where it observes the state, what it wants the state
/// to look like there, and its control box.
#[derive(Debug, Clone)]
pub struct PlayerSpec {
    pub observation_region: RegionIndicator,
    /// Desired state, P1 coefficients (values outside the observation
    /// region never enter the equations).
    pub y_d: Vec<f64>,
    /// Lower control bound, P1 coefficients.
    pub u_a: Vec<f64>,
    /// Upper control bound, P1 coefficients.
    pub u_b: Vec<f64>,
}

/// Matrices and factorizations assembled once per problem.
pub struct AssembledForms {
    /// Full stiffness matrix (no boundary conditions applied).
    pub stiffness: SparseMatrix,
    /// Full mass matrix.
    pub mass: SparseMatrix,
    /// Observation-region mass matrix per player.
    pub player_mass: Vec<SparseMatrix>,
    /// Cholesky factorization of the interior stiffness block.
    state_factor: Factorization,
}

/// Immutable problem data shared by both solution methods.
pub struct NepProblem {
    pub mesh: Mesh,
    pub forms: AssembledForms,
    pub players: Vec<PlayerSpec>,
    /// Control cost weight, positive.
    pub alpha: f64,
    /// Penalty weight, positive.
    pub rho: f64,
    /// Multiplier estimate, nonnegative P1 coefficients.
    pub mu: Vec<f64>,
    /// State bound, P1 coefficients.
    pub psi: Vec<f64>,
    /// Optional fixed source term in the state equation.
    pub source_f: Option<Vec<f64>>,
    /// Constant used to seed the penalty-support classification before the
    /// first state solve.
    pub y0_seed: f64,
    /// State response of the source term alone (zero without a source).
    pub(crate) source_state: Vec<f64>,
    /// Desired states minus the source response; the solvers run on this
    /// normalized data and add the source response back afterwards.
    pub(crate) desired_shifted: Vec<Vec<f64>>,
    /// State bound minus the source response.
    pub(crate) psi_shifted: Vec<f64>,
}

/// Which multiplier term the adjoint solve uses.
#[derive(Debug, Clone, Copy)]
pub enum AdjointMode<'a> {
    /// The positive part `(mu + rho (y - psi))_+`, evaluated nodewise. This
    /// is the optimality-system form used for residual reporting.
    ExactMultiplier,
    /// The penalty argument restricted to a fixed node mask, the
    /// linearization both methods carry between iterations.
    FrozenMask(&'a [bool]),
}

/// Result of the strong-monotonicity offset check.
#[derive(Debug, Clone)]
pub struct OffsetEstimate {
    /// Per-player operator norms of the cross-observation part of the
    /// control-to-state map.
    pub player_norms: Vec<f64>,
    /// A quarter of the summed squared norms; strong monotonicity of the
    /// gradient map needs `alpha` above this value.
    pub total: f64,
    /// Whether the problem's `alpha` exceeds `total`.
    pub alpha_ok: bool,
}

/// A manufactured equilibrium used to measure convergence rates.
#[derive(Debug, Clone)]
pub struct ExactSolution {
    pub y_bar: Vec<f64>,
    pub u_bar: Vec<Vec<f64>>,
    pub p_bar: Vec<Vec<f64>>,
}

impl NepProblem {
    /// Validates the data, assembles the forms, factorizes the interior
    /// stiffness block, and precomputes the source-term normalization.
    ///
    /// Panics on inconsistent data (empty player list, nonpositive weights,
    /// negative `mu`, mismatched lengths, inverted bounds); returns an error
    /// only for factorization failures.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mesh: Mesh,
        players: Vec<PlayerSpec>,
        alpha: f64,
        rho: f64,
        mu: Vec<f64>,
        psi: Vec<f64>,
        source_f: Option<Vec<f64>>,
        y0_seed: f64,
    ) -> Result<Self, Error> {
        let m = mesh.n_vertices();
        assert!(!players.is_empty(), "at least one player required");
        assert!(alpha > 0.0, "alpha must be positive");
        assert!(rho > 0.0, "rho must be positive");
        assert_eq!(mu.len(), m, "mu length mismatch");
        assert_eq!(psi.len(), m, "psi length mismatch");
        assert!(mu.iter().all(|&v| v >= 0.0), "mu must be nonnegative");
        if let Some(f) = &source_f {
            assert_eq!(f.len(), m, "source length mismatch");
        }
        for (nu, p) in players.iter().enumerate() {
            assert_eq!(p.y_d.len(), m, "player {nu} desired state length mismatch");
            assert_eq!(p.u_a.len(), m, "player {nu} lower bound length mismatch");
            assert_eq!(p.u_b.len(), m, "player {nu} upper bound length mismatch");
            for i in 0..m {
                assert!(
                    p.u_a[i] <= p.u_b[i],
                    "player {nu} has inverted bounds at node {i}"
                );
            }
        }
        let stiffness = assemble_stiffness(&mesh);
        let mass = assemble_mass(&mesh, &RegionIndicator::Whole);
        let player_mass: Vec<SparseMatrix> = players
            .iter()
            .map(|p| assemble_mass(&mesh, &p.observation_region))
            .collect();
        let interior = stiffness.submatrix(&mesh.interior_nodes, &mesh.interior_nodes);
        let state_factor = cholesky_factorize(&interior)?;
        let forms = AssembledForms {
            stiffness,
            mass,
            player_mass,
            state_factor,
        };
        let mut problem = NepProblem {
            mesh,
            forms,
            players,
            alpha,
            rho,
            mu,
            psi,
            source_f,
            y0_seed,
            source_state: vec![0.0; m],
            desired_shifted: Vec::new(),
            psi_shifted: Vec::new(),
        };
        if let Some(f) = problem.source_f.clone() {
            let load = problem.forms.mass.mul_vec(&f);
            problem.source_state = problem.solve_dirichlet(&load);
        }
        problem.desired_shifted = problem
            .players
            .iter()
            .map(|p| {
                p.y_d
                    .iter()
                    .zip(&problem.source_state)
                    .map(|(d, s)| d - s)
                    .collect()
            })
            .collect();
        problem.psi_shifted = problem
            .psi
            .iter()
            .zip(&problem.source_state)
            .map(|(p, s)| p - s)
            .collect();
        Ok(problem)
    }

    pub fn n_players(&self) -> usize {
        self.players.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.mesh.n_vertices()
    }

    /// Solves `K z = load` with homogeneous Dirichlet conditions: the load
    /// is restricted to interior nodes, solved against the factorized
    /// interior stiffness block, and padded with boundary zeros.
    pub fn solve_dirichlet(&self, load: &[f64]) -> Vec<f64> {
        let m = self.n_vertices();
        assert_eq!(load.len(), m, "load length mismatch");
        let reduced: Vec<f64> = self.mesh.interior_nodes.iter().map(|&n| load[n]).collect();
        let solution = self.forms.state_factor.solve(&reduced);
        let mut full = vec![0.0; m];
        for (k, &n) in self.mesh.interior_nodes.iter().enumerate() {
            full[n] = solution[k];
        }
        full
    }

    /// State solve `K y = M (sum_nu u^nu + f)`.
    pub fn solve_state(&self, u: &[Vec<f64>]) -> Vec<f64> {
        let m = self.n_vertices();
        assert_eq!(u.len(), self.n_players(), "one control per player required");
        let mut total = vec![0.0; m];
        for uv in u {
            assert_eq!(uv.len(), m, "control length mismatch");
            for i in 0..m {
                total[i] += uv[i];
            }
        }
        if let Some(f) = &self.source_f {
            for i in 0..m {
                total[i] += f[i];
            }
        }
        let load = self.forms.mass.mul_vec(&total);
        self.solve_dirichlet(&load)
    }

    /// Adjoint solve for player `nu`:
    /// `K p = M_nu (y - y_d^nu) + <multiplier term>` where the multiplier
    /// term is the mass matrix applied to the nodewise positive part of
    /// `mu + rho (y - psi)` (exact mode) or to the same expression
    /// restricted to a frozen node mask.
    pub fn solve_adjoint(&self, nu: usize, y: &[f64], mode: AdjointMode) -> Vec<f64> {
        let m = self.n_vertices();
        assert!(nu < self.n_players(), "player index out of range");
        assert_eq!(y.len(), m, "state length mismatch");
        let spec = &self.players[nu];
        let tracking: Vec<f64> = (0..m).map(|i| y[i] - spec.y_d[i]).collect();
        let mut rhs = self.forms.player_mass[nu].mul_vec(&tracking);
        let term: Vec<f64> = match mode {
            AdjointMode::ExactMultiplier => (0..m)
                .map(|i| (self.mu[i] + self.rho * (y[i] - self.psi[i])).max(0.0))
                .collect(),
            AdjointMode::FrozenMask(mask) => {
                assert_eq!(mask.len(), m, "mask length mismatch");
                (0..m)
                    .map(|i| {
                        if mask[i] {
                            self.mu[i] + self.rho * (y[i] - self.psi[i])
                        } else {
                            0.0
                        }
                    })
                    .collect()
            }
        };
        let penalty = self.forms.mass.mul_vec(&term);
        for i in 0..m {
            rhs[i] += penalty[i];
        }
        self.solve_dirichlet(&rhs)
    }

    /// The gradient map of the game: component `nu` is
    /// `alpha u^nu + K^{-1} (M_nu (y(u) - y_d^nu) + l_+(mu + rho (y(u) - psi)))`
    /// where `l_+` is the quadrature-level positive-part load. The
    /// quadrature form makes the discrete strong-monotonicity inequality
    /// hold exactly, which is what the offset estimate certifies.
    pub fn gradient_map(&self, u: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let m = self.n_vertices();
        let y = self.solve_state(u);
        let g: Vec<f64> = (0..m)
            .map(|i| self.mu[i] + self.rho * (y[i] - self.psi[i]))
            .collect();
        let pos = positive_part_load(&self.mesh, &g);
        let mut out = Vec::with_capacity(self.n_players());
        for nu in 0..self.n_players() {
            let spec = &self.players[nu];
            let tracking: Vec<f64> = (0..m).map(|i| y[i] - spec.y_d[i]).collect();
            let mut load = self.forms.player_mass[nu].mul_vec(&tracking);
            for i in 0..m {
                load[i] += pos[i];
            }
            let adj = self.solve_dirichlet(&load);
            out.push((0..m).map(|i| self.alpha * u[nu][i] + adj[i]).collect());
        }
        out
    }

    /// Estimates the strong-monotonicity offset: for each player the
    /// operator norm of `w -> indicator(Z minus Omega_nu) * S w` with
    /// `Z` the union of all observation regions and `S` the single-source
    /// control-to-state map, computed by power iteration on
    /// `K^{-1} (M_Z - M_nu) K^{-1} M` in the mass inner product (that
    /// operator is self-adjoint there and its dominant eigenvalue is the
    /// squared norm). Players whose region already covers `Z` contribute
    /// exactly zero without any iteration.
    pub fn offset_estimate(&self) -> Result<OffsetEstimate, Error> {
        let m = self.n_vertices();
        let regions: Vec<RegionIndicator> = self
            .players
            .iter()
            .map(|p| p.observation_region.clone())
            .collect();
        let union_mass = assemble_mass_union(&self.mesh, &regions);
        let mut player_norms = Vec::with_capacity(self.n_players());
        for nu in 0..self.n_players() {
            let off_mass = union_mass.add_scaled(-1.0, &self.forms.player_mass[nu]);
            if off_mass.triplets().all(|(_, _, v)| v == 0.0) {
                player_norms.push(0.0);
                continue;
            }
            let op = FnOperator::new(m, |x: &[f64], out: &mut [f64]| {
                let t = self.solve_dirichlet(&self.forms.mass.mul_vec(x));
                let s = off_mass.mul_vec(&t);
                out.copy_from_slice(&self.solve_dirichlet(&s));
            });
            let lambda = power_iteration(&op, &self.forms.mass, 1e-10, 50_000)?;
            player_norms.push(lambda.max(0.0).sqrt());
        }
        let total = 0.25 * player_norms.iter().map(|n| n * n).sum::<f64>();
        Ok(OffsetEstimate {
            player_norms,
            total,
            alpha_ok: self.alpha > total,
        })
    }
}

/// Closed-form fields of the manufactured four-player equilibrium on
/// `(-1,1)^2`: the state is a double sine wave, and each player's adjoint
/// is a compactly supported polynomial bump in the disk of radius one half
/// inscribed in that player's quadrant. The bump vanishes to second order
/// at the disk boundary, so each piecewise formula is twice continuously
/// differentiable across it.
pub mod manufactured {
    use std::f64::consts::PI;

    /// Bump centers, one per quadrant in player order.
    pub const CENTERS: [[f64; 2]; 4] = [[-0.5, -0.5], [0.5, -0.5], [-0.5, 0.5], [0.5, 0.5]];

    /// Equilibrium state `sin(2 pi x1) sin(2 pi x2)`.
    pub fn state(x1: f64, x2: f64) -> f64 {
        (2.0 * PI * x1).sin() * (2.0 * PI * x2).sin()
    }

    /// Negative Laplacian of the state, `8 pi^2 sin(2 pi x1) sin(2 pi x2)`.
    pub fn state_forcing(x1: f64, x2: f64) -> f64 {
        8.0 * PI * PI * state(x1, x2)
    }

    /// Player `nu`'s adjoint: `16 (r^2 - 1/4)^3` inside the disk of radius
    /// one half around the player's center, zero outside. The value at the
    /// center is `-1/4`.
    ///
    /// Panics if `nu >= 4`.
    pub fn adjoint(nu: usize, x1: f64, x2: f64) -> f64 {
        let c = CENTERS[nu];
        let r2 = (x1 - c[0]).powi(2) + (x2 - c[1]).powi(2);
        if r2 >= 0.25 {
            0.0
        } else {
            let t = r2 - 0.25;
            16.0 * t * t * t
        }
    }

    /// Laplacian of [`adjoint`]: `48 (r^2 - 1/4)(12 r^2 - 1)` inside the
    /// disk, zero outside.
    ///
    /// Panics if `nu >= 4`.
    pub fn adjoint_laplacian(nu: usize, x1: f64, x2: f64) -> f64 {
        let c = CENTERS[nu];
        let r2 = (x1 - c[0]).powi(2) + (x2 - c[1]).powi(2);
        if r2 >= 0.25 {
            0.0
        } else {
            48.0 * (r2 - 0.25) * (12.0 * r2 - 1.0)
        }
    }
}

fn quadrants(rect: Rect) -> [Rect; 4] {
    let xm = 0.5 * (rect.x0 + rect.x1);
    let ym = 0.5 * (rect.y0 + rect.y1);
    [
        Rect::new(rect.x0, xm, rect.y0, ym),
        Rect::new(xm, rect.x1, rect.y0, ym),
        Rect::new(xm, rect.x1, ym, rect.y1),
        Rect::new(rect.x0, xm, ym, rect.y1),
    ]
}

/// Default control bounds of the first benchmark. The reference runs have
/// no active box constraints (the penalty support drives all the set
/// dynamics), so the box is kept wide enough to stay inactive at
/// `alpha = 1e-5` while still bounding the admissible set. Tight boxes at
/// this `alpha` saturate every node and make the outer iteration cycle
/// between bang-bang patterns, for both methods alike.
pub const EXAMPLE1_BOUND: f64 = 1e6;

/// The four-player benchmark on the unit square: quadrant observation
/// regions with constant desired states 0, 1, 2, 3 (counter-clockwise from
/// the lower-left quadrant), affine state bound `psi = -2 x1 + 2 x2 + 2`,
/// `alpha = 1e-5`, `rho = 10`, control bounds [`EXAMPLE1_BOUND`] wide, and
/// the all-ten state seed for the initial penalty classification. Returns
/// the problem together with the solver settings used for the reference
/// runs (GMRES tolerance 1e-12).
pub fn make_example1(nx: usize, ny: usize) -> (NepProblem, SolverConfig) {
    let mesh = build_rect_mesh(Rect::unit(), nx, ny);
    let m = mesh.n_vertices();
    let quads = quadrants(Rect::unit());
    let targets = [0.0, 1.0, 2.0, 3.0];
    let players: Vec<PlayerSpec> = quads
        .iter()
        .zip(targets)
        .map(|(r, t)| PlayerSpec {
            observation_region: RegionIndicator::Rect(*r),
            y_d: vec![t; m],
            u_a: vec![-EXAMPLE1_BOUND; m],
            u_b: vec![EXAMPLE1_BOUND; m],
        })
        .collect();
    let psi = interpolate(&mesh, |x1, x2| -2.0 * x1 + 2.0 * x2 + 2.0);
    let problem = NepProblem::new(mesh, players, 1e-5, 10.0, vec![0.0; m], psi, None, 10.0)
        .expect("stiffness factorization cannot fail on a conforming mesh");
    let config = SolverConfig {
        method: Method::SemismoothNewton,
        max_outer: 30,
        gmres_tol: 1e-12,
        gmres_restart: 200,
        gmres_maxiter: 2000,
        direct_solver: DirectSolver::SparseLu,
        residual_fallback: 1e-13,
    };
    (problem, config)
}

/// The manufactured four-player benchmark on `(-1,1)^2` with a known
/// equilibrium: quadrant observation regions, control box `[-1, 20]`,
/// `rho = 10`, state bound `psi = 2` (inactive at the equilibrium), and
/// desired states reverse-engineered from the closed-form state and
/// adjoints in [`manufactured`]. The state equation carries the fixed
/// source `f = -lap(y_bar) - sum_nu u_bar^nu` interpolated nodewise.
/// Returns the problem, the solver settings used for the reference runs
/// (GMRES tolerance 1e-8), and the interpolated exact solution.
///
/// Panics unless `alpha > 0`.
pub fn make_example2(nx: usize, ny: usize, alpha: f64) -> (NepProblem, SolverConfig, ExactSolution) {
    assert!(alpha > 0.0, "alpha must be positive");
    let domain = Rect::new(-1.0, 1.0, -1.0, 1.0);
    let mesh = build_rect_mesh(domain, nx, ny);
    let m = mesh.n_vertices();
    // Player order follows the bump centers: lower-left, lower-right,
    // upper-left, upper-right.
    let quads = {
        let q = quadrants(domain);
        [q[0], q[1], q[3], q[2]]
    };
    let y_bar = interpolate(&mesh, manufactured::state);
    let u_a = vec![-1.0; m];
    let u_b = vec![20.0; m];
    let mut players = Vec::with_capacity(4);
    let mut u_bar = Vec::with_capacity(4);
    let mut p_bar = Vec::with_capacity(4);
    for nu in 0..4 {
        let p = interpolate(&mesh, |x1, x2| manufactured::adjoint(nu, x1, x2));
        let w: Vec<f64> = p.iter().map(|v| -v / alpha).collect();
        let u = project_box(&w, &u_a, &u_b);
        let lap = interpolate(&mesh, |x1, x2| manufactured::adjoint_laplacian(nu, x1, x2));
        let y_d: Vec<f64> = (0..m)
            .map(|i| {
                let v = mesh.vertices[i];
                if quads[nu].contains(v[0], v[1]) {
                    y_bar[i] + lap[i]
                } else {
                    0.0
                }
            })
            .collect();
        players.push(PlayerSpec {
            observation_region: RegionIndicator::Rect(quads[nu]),
            y_d,
            u_a: u_a.clone(),
            u_b: u_b.clone(),
        });
        u_bar.push(u);
        p_bar.push(p);
    }
    let forcing = interpolate(&mesh, manufactured::state_forcing);
    let f: Vec<f64> = (0..m)
        .map(|i| forcing[i] - u_bar.iter().map(|u| u[i]).sum::<f64>())
        .collect();
    let psi = vec![2.0; m];
    let problem = NepProblem::new(
        mesh,
        players,
        alpha,
        10.0,
        vec![0.0; m],
        psi,
        Some(f),
        10.0,
    )
    .expect("stiffness factorization cannot fail on a conforming mesh");
    let config = SolverConfig {
        method: Method::SemismoothNewton,
        max_outer: 30,
        gmres_tol: 1e-8,
        gmres_restart: 200,
        gmres_maxiter: 2000,
        direct_solver: DirectSolver::SparseLu,
        residual_fallback: 1e-13,
    };
    let exact = ExactSolution { y_bar, u_bar, p_bar };
    (problem, config, exact)
}
