//! Legacy-ASCII VTK output of the final fields.
//!
//! The writer emits one unstructured grid (triangle cells, z = 0) with
//! point-data scalars for the state, the summed control, each player's
//! control and adjoint, and the state bound. The format targets the legacy
//! `# vtk DataFile Version 3.0` reader that every VTK-based viewer ships.

use std::fmt::Write as _;

use nep_solver::mesh_fem::Mesh;

/// Composes the named point-data arrays for one iterate: `y`, `u_sum`,
/// `u_1..u_N`, `p_1..p_N`, `psi`.
pub fn field_arrays(
    y: &[f64],
    u: &[Vec<f64>],
    p: &[Vec<f64>],
    psi: &[f64],
) -> Vec<(String, Vec<f64>)> {
    let m = y.len();
    assert_eq!(u.len(), p.len(), "one adjoint per control required");
    let mut u_sum = vec![0.0; m];
    for uv in u {
        assert_eq!(uv.len(), m, "control length mismatch");
        for i in 0..m {
            u_sum[i] += uv[i];
        }
    }
    let mut arrays = Vec::with_capacity(2 * u.len() + 3);
    arrays.push(("y".to_string(), y.to_vec()));
    arrays.push(("u_sum".to_string(), u_sum));
    for (nu, uv) in u.iter().enumerate() {
        arrays.push((format!("u_{}", nu + 1), uv.clone()));
    }
    for (nu, pv) in p.iter().enumerate() {
        assert_eq!(pv.len(), m, "adjoint length mismatch");
        arrays.push((format!("p_{}", nu + 1), pv.clone()));
    }
    assert_eq!(psi.len(), m, "state bound length mismatch");
    arrays.push(("psi".to_string(), psi.to_vec()));
    arrays
}

/// Renders the mesh and point-data arrays as a legacy-ASCII VTK
/// unstructured grid.
pub fn render(mesh: &Mesh, arrays: &[(String, Vec<f64>)]) -> String {
    let n = mesh.n_vertices();
    let t = mesh.n_triangles();
    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\n");
    out.push_str("nep solver fields\n");
    out.push_str("ASCII\n");
    out.push_str("DATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(out, "POINTS {n} double");
    for v in &mesh.vertices {
        let _ = writeln!(out, "{} {} 0", v[0], v[1]);
    }
    let _ = writeln!(out, "CELLS {t} {}", 4 * t);
    for tri in &mesh.triangles {
        let _ = writeln!(out, "3 {} {} {}", tri[0], tri[1], tri[2]);
    }
    let _ = writeln!(out, "CELL_TYPES {t}");
    for _ in 0..t {
        out.push_str("5\n");
    }
    let _ = writeln!(out, "POINT_DATA {n}");
    for (name, values) in arrays {
        assert_eq!(values.len(), n, "array `{name}` length mismatch");
        let _ = writeln!(out, "SCALARS {name} double 1");
        out.push_str("LOOKUP_TABLE default\n");
        for v in values {
            let _ = writeln!(out, "{v}");
        }
    }
    out
}
