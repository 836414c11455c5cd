//! Pointwise semi-smooth machinery: box projection, Newton derivatives of
//! the projection and max operators, nodal active-set classification, and
//! set-change counting for the outer stopping rule.
//!
//! Tie-breaking is fixed once here: a value at the lower bound classifies
//! as lower-active, at the upper bound as upper-active, and the penalty
//! support requires a strictly positive argument. The Newton derivatives are
//! zero at exact touching points.

use crate::problem::NepProblem;

/// Per-player nodal partition into lower-active, upper-active, and inactive
/// control nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlayerSets {
    /// Nodes where the control is pinned at the lower bound.
    pub lower: Vec<bool>,
    /// Nodes where the control is pinned at the upper bound.
    pub upper: Vec<bool>,
    /// Remaining nodes, where the control is interior to the box.
    pub inactive: Vec<bool>,
}

/// Active-set classification of one iterate: per-player control partitions
/// plus the global support of the state-constraint penalty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveSets {
    pub players: Vec<PlayerSets>,
    /// Nodes where the penalty argument is strictly positive.
    pub penalty_support: Vec<bool>,
}

impl ActiveSets {
    pub fn n_nodes(&self) -> usize {
        self.penalty_support.len()
    }
}

fn check_box(v: &[f64], a: &[f64], b: &[f64]) {
    assert_eq!(v.len(), a.len(), "lower bound length mismatch");
    assert_eq!(v.len(), b.len(), "upper bound length mismatch");
    for i in 0..a.len() {
        assert!(a[i] <= b[i], "invalid box: a > b at node {i}");
    }
}

/// Nodewise projection onto the box `[a, b]`.
///
/// Panics if the lengths differ or `a > b` at some node.
pub fn project_box(v: &[f64], a: &[f64], b: &[f64]) -> Vec<f64> {
    check_box(v, a, b);
    v.iter()
        .zip(a)
        .zip(b)
        .map(|((&vi, &ai), &bi)| vi.max(ai).min(bi))
        .collect()
}

/// Newton derivative of the box projection: 1 where `a < v < b` strictly,
/// 0 elsewhere (including exact touches of either bound).
///
/// Panics if the lengths differ or `a > b` at some node.
pub fn newton_derivative_box(v: &[f64], a: &[f64], b: &[f64]) -> Vec<f64> {
    check_box(v, a, b);
    v.iter()
        .zip(a)
        .zip(b)
        .map(|((&vi, &ai), &bi)| if ai < vi && vi < bi { 1.0 } else { 0.0 })
        .collect()
}

/// Newton derivative of `v -> max(v, a)`: 1 where `v > a` strictly, 0 where
/// `v <= a`.
///
/// Panics if the lengths differ.
pub fn newton_derivative_max(v: &[f64], a: &[f64]) -> Vec<f64> {
    assert_eq!(v.len(), a.len(), "threshold length mismatch");
    v.iter()
        .zip(a)
        .map(|(&vi, &ai)| if vi > ai { 1.0 } else { 0.0 })
        .collect()
}

/// Classifies every node of every player from the current iterate.
///
/// Control nodes compare `-p^nu / alpha` against the bounds: at or below
/// the lower bound is lower-active, at or above the upper bound is
/// upper-active, strictly between is inactive. The penalty support collects
/// nodes with `mu + rho (y - psi) > 0`.
///
/// Panics if the iterate shapes do not match the problem.
pub fn classify_sets(
    problem: &NepProblem,
    u: &[Vec<f64>],
    y: &[f64],
    p: &[Vec<f64>],
) -> ActiveSets {
    let m = problem.mesh.n_vertices();
    let n = problem.players.len();
    assert_eq!(u.len(), n, "one control vector per player required");
    assert_eq!(p.len(), n, "one adjoint vector per player required");
    assert_eq!(y.len(), m, "state length mismatch");
    for nu in 0..n {
        assert_eq!(u[nu].len(), m, "control length mismatch for player {nu}");
        assert_eq!(p[nu].len(), m, "adjoint length mismatch for player {nu}");
    }
    let alpha = problem.alpha;
    let mut players = Vec::with_capacity(n);
    for nu in 0..n {
        let spec = &problem.players[nu];
        let mut lower = vec![false; m];
        let mut upper = vec![false; m];
        let mut inactive = vec![false; m];
        for i in 0..m {
            let w = -p[nu][i] / alpha;
            if w <= spec.u_a[i] {
                lower[i] = true;
            } else if w >= spec.u_b[i] {
                upper[i] = true;
            } else {
                inactive[i] = true;
            }
        }
        players.push(PlayerSets { lower, upper, inactive });
    }
    let penalty_support = (0..m)
        .map(|i| problem.mu[i] + problem.rho * (y[i] - problem.psi[i]) > 0.0)
        .collect();
    ActiveSets { players, penalty_support }
}

/// Total number of mask memberships that differ between two classifications:
/// every mask (per-player lower, upper, inactive, plus the penalty support)
/// contributes one per node whose membership changed. A node moving between
/// partition cells therefore counts twice (it leaves one mask and enters
/// another), while a penalty-support flip counts once.
///
/// Panics if the two classifications have different shapes.
pub fn set_change_count(s1: &ActiveSets, s2: &ActiveSets) -> usize {
    assert_eq!(s1.players.len(), s2.players.len(), "player count mismatch");
    assert_eq!(
        s1.penalty_support.len(),
        s2.penalty_support.len(),
        "node count mismatch"
    );
    let diff = |a: &[bool], b: &[bool]| -> usize {
        assert_eq!(a.len(), b.len(), "mask length mismatch");
        a.iter().zip(b).filter(|(x, y)| x != y).count()
    };
    let mut count = 0;
    for (p1, p2) in s1.players.iter().zip(&s2.players) {
        count += diff(&p1.lower, &p2.lower);
        count += diff(&p1.upper, &p2.upper);
        count += diff(&p1.inactive, &p2.inactive);
    }
    count + diff(&s1.penalty_support, &s2.penalty_support)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh_fem::{
        assemble_mass, build_rect_mesh, m_norm, Rect, RegionIndicator,
    };
    use crate::problem::{NepProblem, PlayerSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn projection_clamps_and_respects_ties() {
        let a = vec![-1.0, -1.0, 0.0, 2.0];
        let b = vec![1.0, 1.0, 0.0, 5.0];
        let v = vec![0.3, -4.0, 7.0, 2.0];
        assert_eq!(project_box(&v, &a, &b), vec![0.3, -1.0, 0.0, 2.0]);
        // Interior input passes through unchanged.
        let v = vec![0.0, 0.5, 0.0, 3.0];
        assert_eq!(project_box(&v, &a, &b), vec![0.0, 0.5, 0.0, 3.0]);
        // Degenerate box pins the output to the bound.
        let eq = vec![2.0; 4];
        assert_eq!(project_box(&v, &eq, &eq), eq);
    }

    #[test]
    #[should_panic(expected = "invalid box")]
    fn projection_rejects_inverted_bounds() {
        let _ = project_box(&[0.0], &[1.0], &[-1.0]);
    }

    #[test]
    fn box_derivative_is_one_strictly_inside_only() {
        let a = vec![-1.0, -1.0, -1.0, 0.0];
        let b = vec![1.0, 1.0, 1.0, 0.0];
        let v = vec![0.0, 1.0, -1.0, 0.0];
        assert_eq!(newton_derivative_box(&v, &a, &b), vec![1.0, 0.0, 0.0, 0.0]);
        let inside = vec![0.5, -0.99, 0.0, -0.1];
        let d = newton_derivative_box(&inside, &a, &b);
        assert_eq!(&d[..3], &[1.0, 1.0, 1.0]);
        assert_eq!(d[3], 0.0);
    }

    #[test]
    fn max_derivative_uses_strict_inequality() {
        let v = vec![1.0, 0.0, -1.0];
        let a = vec![0.0, 0.0, 0.0];
        assert_eq!(newton_derivative_max(&v, &a), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn max_derivative_agrees_with_penalty_classification() {
        let (problem, _) = crate::problem::make_example1(6, 6);
        let m = problem.mesh.n_vertices();
        let n = problem.players.len();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let y: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..6.0)).collect();
            let u = vec![vec![0.0; m]; n];
            let p = vec![vec![0.0; m]; n];
            let sets = classify_sets(&problem, &u, &y, &p);
            let arg: Vec<f64> = (0..m)
                .map(|i| problem.mu[i] + problem.rho * (y[i] - problem.psi[i]))
                .collect();
            let d = newton_derivative_max(&arg, &vec![0.0; m]);
            for i in 0..m {
                assert_eq!(d[i] == 1.0, sets.penalty_support[i], "node {i}");
            }
        }
    }

    #[test]
    fn classification_partitions_nodes_and_is_idempotent() {
        let (mut problem, _) = crate::problem::make_example1(8, 8);
        let m = problem.mesh.n_vertices();
        let n = problem.players.len();
        for spec in &mut problem.players {
            spec.u_a = vec![-15.0; m];
            spec.u_b = vec![15.0; m];
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = vec![vec![0.0; m]; n];
        let y: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..12.0)).collect();
        // Adjoint values scaled so all three classes occur at alpha = 1e-5
        // against the 15-wide box.
        let p: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..m).map(|_| rng.gen_range(-3e-4..3e-4)).collect())
            .collect();
        let sets = classify_sets(&problem, &u, &y, &p);
        for ps in &sets.players {
            let mut saw_lower = false;
            let mut saw_upper = false;
            let mut saw_inactive = false;
            for i in 0..m {
                let members =
                    u8::from(ps.lower[i]) + u8::from(ps.upper[i]) + u8::from(ps.inactive[i]);
                assert_eq!(members, 1, "node {i} not in exactly one class");
                saw_lower |= ps.lower[i];
                saw_upper |= ps.upper[i];
                saw_inactive |= ps.inactive[i];
            }
            assert!(saw_lower && saw_upper && saw_inactive, "test data too tame");
        }
        let again = classify_sets(&problem, &u, &y, &p);
        assert_eq!(sets, again);
        assert_eq!(set_change_count(&sets, &again), 0);
    }

    #[test]
    fn classification_ties_go_to_the_active_sets() {
        let (mut problem, _) = crate::problem::make_example1(4, 4);
        let m = problem.mesh.n_vertices();
        let n = problem.players.len();
        // Power-of-two bounds make -(u_a * alpha) / alpha round-trip
        // exactly, so the constructed values hit the bounds as true ties.
        for spec in &mut problem.players {
            spec.u_a = vec![-4.0; m];
            spec.u_b = vec![8.0; m];
        }
        let alpha = problem.alpha;
        let u = vec![vec![0.0; m]; n];
        let y = vec![0.0; m];
        // -p/alpha equal to the lower bound exactly at node 0, the upper
        // bound exactly at node 1.
        let mut p0 = vec![0.0; m];
        p0[0] = -problem.players[0].u_a[0] * alpha;
        p0[1] = -problem.players[0].u_b[1] * alpha;
        let mut p = vec![vec![0.0; m]; n];
        p[0] = p0;
        let sets = classify_sets(&problem, &u, &y, &p);
        assert!(sets.players[0].lower[0]);
        assert!(sets.players[0].upper[1]);
        assert!(sets.players[0].inactive[2]);
    }

    #[test]
    fn change_count_reflects_mask_moves() {
        let (mut problem, _) = crate::problem::make_example1(4, 4);
        let m = problem.mesh.n_vertices();
        let n = problem.players.len();
        for spec in &mut problem.players {
            spec.u_a = vec![-15.0; m];
            spec.u_b = vec![15.0; m];
        }
        let u = vec![vec![0.0; m]; n];
        let y = vec![10.0; m];
        let p = vec![vec![0.0; m]; n];
        let s1 = classify_sets(&problem, &u, &y, &p);
        // Push one node of player 0 to the lower bound: leaves inactive,
        // enters lower, so the count is 2.
        let mut p2 = p.clone();
        p2[0][5] = 1.0;
        let s2 = classify_sets(&problem, &u, &y, &p2);
        assert_eq!(set_change_count(&s1, &s2), 2);
        assert_eq!(set_change_count(&s2, &s1), 2);
        // Flip one penalty node: count 1.
        let mut y2 = y.clone();
        y2[7] = -100.0;
        let s3 = classify_sets(&problem, &u, &y2, &p);
        assert_eq!(set_change_count(&s1, &s3), 1);
    }

    #[test]
    fn projection_is_nonexpansive_in_the_mass_norm() {
        let mesh = build_rect_mesh(Rect::unit(), 6, 6);
        let mass = assemble_mass(&mesh, &RegionIndicator::Whole);
        let m = mesh.n_vertices();
        let a = vec![-0.7; m];
        let b = vec![0.4; m];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let v1: Vec<f64> = (0..m).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let v2: Vec<f64> = (0..m).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let p1 = project_box(&v1, &a, &b);
            let p2 = project_box(&v2, &a, &b);
            let dp: Vec<f64> = p1.iter().zip(&p2).map(|(x, y)| x - y).collect();
            let dv: Vec<f64> = v1.iter().zip(&v2).map(|(x, y)| x - y).collect();
            assert!(m_norm(&mass, &dp) <= m_norm(&mass, &dv) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn newton_derivative_residual_vanishes_with_the_step() {
        // |P(v + t s) - P(v) - D(v + t s) (t s)|_M / |t s|_M for shrinking t.
        // The Newton derivative is exact once no component of v + t s sits
        // on the wrong side of a kink, so the ratio must reach zero for
        // small t. It need not fall monotonically while kinks are still
        // being crossed, only in the limit.
        let mesh = build_rect_mesh(Rect::unit(), 5, 5);
        let mass = assemble_mass(&mesh, &RegionIndicator::Whole);
        let m = mesh.n_vertices();
        let a = vec![-0.5; m];
        let b = vec![0.8; m];
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let v: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let s: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let pv = project_box(&v, &a, &b);
        let ratios: Vec<f64> = (1..=20)
            .map(|e| {
                let t = 0.5f64.powi(e);
                let vt: Vec<f64> = v.iter().zip(&s).map(|(vi, si)| vi + t * si).collect();
                let pt = project_box(&vt, &a, &b);
                let d = newton_derivative_box(&vt, &a, &b);
                let resid: Vec<f64> = (0..m)
                    .map(|i| pt[i] - pv[i] - d[i] * t * s[i])
                    .collect();
                let step: Vec<f64> = s.iter().map(|si| t * si).collect();
                m_norm(&mass, &resid) / m_norm(&mass, &step)
            })
            .collect();
        let first = ratios[..3].iter().fold(f64::MIN, |x, &y| x.max(y));
        let last = ratios[17..].iter().fold(f64::MIN, |x, &y| x.max(y));
        assert!(
            last <= first / 10.0,
            "ratio did not decay: first decade {first}, last decade {last}"
        );
        // Not exactly zero when a sample sits within round-off of a kink.
        assert!(ratios[19] < 1e-9, "ratio never vanished: {}", ratios[19]);
    }

    #[test]
    fn classification_rejects_wrong_shapes() {
        let (problem, _) = crate::problem::make_example1(4, 4);
        let m = problem.mesh.n_vertices();
        let u = vec![vec![0.0; m]; problem.players.len()];
        let y = vec![0.0; m];
        let p_short = vec![vec![0.0; m]; problem.players.len() - 1];
        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
            classify_sets(&problem, &u, &y, &p_short)
        }));
        assert!(result.is_err());
    }

    #[test]
    fn custom_single_player_classification() {
        // One player observing the whole domain, coarse mesh, bounds [0, 1].
        let mesh = build_rect_mesh(Rect::unit(), 3, 3);
        let m = mesh.n_vertices();
        let player = PlayerSpec {
            observation_region: RegionIndicator::Whole,
            y_d: vec![0.0; m],
            u_a: vec![0.0; m],
            u_b: vec![1.0; m],
        };
        let problem = NepProblem::new(
            mesh,
            vec![player],
            1.0,
            1.0,
            vec![0.0; m],
            vec![1.0; m],
            None,
            0.0,
        )
        .unwrap();
        let u = vec![vec![0.5; m]];
        let y = vec![0.0; m];
        // -p/alpha = 0.5 everywhere: strictly inside.
        let p = vec![vec![-0.5; m]];
        let sets = classify_sets(&problem, &u, &y, &p);
        assert!(sets.players[0].inactive.iter().all(|&x| x));
        assert!(sets.penalty_support.iter().all(|&x| !x));
    }
}
