//! Structured triangulations of axis-aligned rectangles and piecewise
//! linear (P1) finite element assembly.
//!
//! The mesh splits an `nx` by `ny` grid of rectangular cells along the
//! bottom-left to top-right diagonal, producing `2*nx*ny` triangles with
//! counter-clockwise vertex order. Assembly provides the stiffness matrix of
//! the Laplacian, mass matrices restricted to subregions (used both for
//! player subdomains and for node-set masks), and quadrature-level load
//! vectors. All quadrature uses a three-point rule exact for quadratics, so
//! full mass matrices are assembled exactly.

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    /// Creates a rectangle.
    ///
    /// Panics if the rectangle is empty or inverted (`x1 <= x0` or
    /// `y1 <= y0`) or any coordinate is not finite.
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        assert!(
            x0.is_finite() && x1.is_finite() && y0.is_finite() && y1.is_finite(),
            "rectangle coordinates must be finite"
        );
        assert!(x1 > x0 && y1 > y0, "rectangle must have positive extent");
        Rect { x0, x1, y0, y1 }
    }

    /// The unit square `[0, 1]^2`.
    pub fn unit() -> Self {
        Rect::new(0.0, 1.0, 0.0, 1.0)
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Whether `(x, y)` lies in the closed rectangle.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }
}

/// Conforming triangulation of a rectangle with structured connectivity.
#[derive(Debug, Clone)]
pub struct Mesh {
    /// Meshed domain.
    pub rect: Rect,
    /// Number of cells in the x direction.
    pub nx: usize,
    /// Number of cells in the y direction.
    pub ny: usize,
    /// Vertex coordinates, row-major: vertex `(i, j)` is entry `j*(nx+1)+i`.
    pub vertices: Vec<[f64; 2]>,
    /// Triangles as vertex index triples in counter-clockwise order.
    pub triangles: Vec<[usize; 3]>,
    /// Indices of vertices on the boundary, ascending.
    pub boundary_nodes: Vec<usize>,
    /// Per-vertex boundary flag.
    pub boundary_mask: Vec<bool>,
    /// Indices of interior vertices, ascending.
    pub interior_nodes: Vec<usize>,
    /// Mesh size: the longest triangle edge (the cell diagonal).
    pub h: f64,
}

impl Mesh {
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// Index of the vertex at grid position `(i, j)`.
    ///
    /// Panics if `i > nx` or `j > ny`.
    pub fn vertex_index(&self, i: usize, j: usize) -> usize {
        assert!(i <= self.nx && j <= self.ny, "grid position out of range");
        j * (self.nx + 1) + i
    }
}

/// Builds the structured triangulation of `rect` with `nx` by `ny` cells,
/// each split along its bottom-left to top-right diagonal.
///
/// Panics if `nx == 0` or `ny == 0`.
pub fn build_rect_mesh(rect: Rect, nx: usize, ny: usize) -> Mesh {
    assert!(nx >= 1 && ny >= 1, "mesh must have at least one cell per direction");
    let dx = rect.width() / nx as f64;
    let dy = rect.height() / ny as f64;
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            // Take exact endpoint coordinates so region tests on the outer
            // boundary are reliable.
            let x = if i == nx { rect.x1 } else { rect.x0 + i as f64 * dx };
            let y = if j == ny { rect.y1 } else { rect.y0 + j as f64 * dy };
            vertices.push([x, y]);
        }
    }
    let idx = |i: usize, j: usize| j * (nx + 1) + i;
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let v00 = idx(i, j);
            let v10 = idx(i + 1, j);
            let v01 = idx(i, j + 1);
            let v11 = idx(i + 1, j + 1);
            triangles.push([v00, v10, v11]);
            triangles.push([v00, v11, v01]);
        }
    }
    let mut boundary_mask = vec![false; vertices.len()];
    for j in 0..=ny {
        for i in 0..=nx {
            if i == 0 || i == nx || j == 0 || j == ny {
                boundary_mask[idx(i, j)] = true;
            }
        }
    }
    let boundary_nodes: Vec<usize> =
        (0..vertices.len()).filter(|&n| boundary_mask[n]).collect();
    let interior_nodes: Vec<usize> =
        (0..vertices.len()).filter(|&n| !boundary_mask[n]).collect();
    Mesh {
        rect,
        nx,
        ny,
        vertices,
        triangles,
        boundary_nodes,
        boundary_mask,
        interior_nodes,
        h: dx.hypot(dy),
    }
}

/// Nodal interpolation of `f` onto the mesh vertices.
pub fn interpolate(mesh: &Mesh, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    mesh.vertices.iter().map(|v| f(v[0], v[1])).collect()
}

/// Barycentric coordinates of the three-point quadrature rule, exact for
/// polynomials of degree two. Each point carries weight `area / 3`.
const QUAD_BARY: [[f64; 3]; 3] = [
    [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
    [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
    [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
];

/// Compressed sparse row matrix over `f64`.
///
/// Rows store strictly increasing column indices; duplicate triplets are
/// summed during construction. Explicit zeros are kept, so the sparsity
/// pattern is determined by the construction, not the values.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a matrix from `(row, col, value)` triplets, summing duplicates.
    ///
    /// Panics if any index is out of range.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; nrows];
        for &(r, c, _) in triplets {
            assert!(r < nrows && c < ncols, "triplet index out of range");
            counts[r] += 1;
        }
        let mut row_ptr = vec![0usize; nrows + 1];
        for r in 0..nrows {
            row_ptr[r + 1] = row_ptr[r] + counts[r];
        }
        let mut col_idx = vec![0usize; triplets.len()];
        let mut values = vec![0.0f64; triplets.len()];
        let mut next = row_ptr.clone();
        for &(r, c, v) in triplets {
            let k = next[r];
            col_idx[k] = c;
            values[k] = v;
            next[r] += 1;
        }
        // Sort each row by column and merge duplicates in place.
        let mut out_col = Vec::with_capacity(triplets.len());
        let mut out_val = Vec::with_capacity(triplets.len());
        let mut out_ptr = vec![0usize; nrows + 1];
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for r in 0..nrows {
            scratch.clear();
            for k in row_ptr[r]..row_ptr[r + 1] {
                scratch.push((col_idx[k], values[k]));
            }
            scratch.sort_unstable_by_key(|&(c, _)| c);
            let mut i = 0;
            while i < scratch.len() {
                let c = scratch[i].0;
                let mut v = scratch[i].1;
                let mut j = i + 1;
                while j < scratch.len() && scratch[j].0 == c {
                    v += scratch[j].1;
                    j += 1;
                }
                out_col.push(c);
                out_val.push(v);
                i = j;
            }
            out_ptr[r + 1] = out_col.len();
        }
        SparseMatrix {
            nrows,
            ncols,
            row_ptr: out_ptr,
            col_idx: out_col,
            values: out_val,
        }
    }

    /// Identity matrix of size `n`.
    pub fn identity(n: usize) -> Self {
        let triplets: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, i, 1.0)).collect();
        SparseMatrix::from_triplets(n, n, &triplets)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Entry `(i, j)`, zero when outside the stored pattern.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        assert!(i < self.nrows && j < self.ncols, "index out of range");
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        match self.col_idx[lo..hi].binary_search(&j) {
            Ok(k) => self.values[lo + k],
            Err(_) => 0.0,
        }
    }

    /// Iterator over the `(column, value)` entries of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.col_idx[lo..hi]
            .iter()
            .copied()
            .zip(self.values[lo..hi].iter().copied())
    }

    /// Matrix-vector product `A x`.
    ///
    /// Panics if `x.len() != ncols`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_into(x, &mut y);
        y
    }

    /// Matrix-vector product into a caller-provided buffer.
    ///
    /// Panics if `x.len() != ncols` or `y.len() != nrows`.
    pub fn mul_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols, "input length mismatch");
        assert_eq!(y.len(), self.nrows, "output length mismatch");
        for r in 0..self.nrows {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            y[r] = acc;
        }
    }

    /// Bilinear form `x^T A y`.
    ///
    /// Panics if `x.len() != nrows` or `y.len() != ncols`.
    pub fn quadratic_form(&self, x: &[f64], y: &[f64]) -> f64 {
        assert_eq!(x.len(), self.nrows, "left length mismatch");
        assert_eq!(y.len(), self.ncols, "right length mismatch");
        let mut acc = 0.0;
        for r in 0..self.nrows {
            let mut row_acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                row_acc += self.values[k] * y[self.col_idx[k]];
            }
            acc += x[r] * row_acc;
        }
        acc
    }

    /// Linear combination `self + beta * other`, merging sparsity patterns.
    ///
    /// Panics if the shapes differ.
    pub fn add_scaled(&self, beta: f64, other: &SparseMatrix) -> SparseMatrix {
        assert_eq!(self.nrows, other.nrows, "row count mismatch");
        assert_eq!(self.ncols, other.ncols, "column count mismatch");
        let mut col = Vec::with_capacity(self.nnz() + other.nnz());
        let mut val = Vec::with_capacity(self.nnz() + other.nnz());
        let mut ptr = vec![0usize; self.nrows + 1];
        for r in 0..self.nrows {
            let (mut a, a_hi) = (self.row_ptr[r], self.row_ptr[r + 1]);
            let (mut b, b_hi) = (other.row_ptr[r], other.row_ptr[r + 1]);
            while a < a_hi || b < b_hi {
                let ca = if a < a_hi { self.col_idx[a] } else { usize::MAX };
                let cb = if b < b_hi { other.col_idx[b] } else { usize::MAX };
                if ca < cb {
                    col.push(ca);
                    val.push(self.values[a]);
                    a += 1;
                } else if cb < ca {
                    col.push(cb);
                    val.push(beta * other.values[b]);
                    b += 1;
                } else {
                    col.push(ca);
                    val.push(self.values[a] + beta * other.values[b]);
                    a += 1;
                    b += 1;
                }
            }
            ptr[r + 1] = col.len();
        }
        SparseMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            row_ptr: ptr,
            col_idx: col,
            values: val,
        }
    }

    /// Submatrix with the given rows and columns, both strictly increasing
    /// index lists.
    ///
    /// Panics if an index list is out of range or not strictly increasing.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> SparseMatrix {
        for w in rows.windows(2) {
            assert!(w[0] < w[1], "row list must be strictly increasing");
        }
        for w in cols.windows(2) {
            assert!(w[0] < w[1], "column list must be strictly increasing");
        }
        if let Some(&r) = rows.last() {
            assert!(r < self.nrows, "row index out of range");
        }
        if let Some(&c) = cols.last() {
            assert!(c < self.ncols, "column index out of range");
        }
        let mut col_pos = vec![usize::MAX; self.ncols];
        for (k, &c) in cols.iter().enumerate() {
            col_pos[c] = k;
        }
        let mut col = Vec::new();
        let mut val = Vec::new();
        let mut ptr = vec![0usize; rows.len() + 1];
        for (new_r, &r) in rows.iter().enumerate() {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let p = col_pos[self.col_idx[k]];
                if p != usize::MAX {
                    col.push(p);
                    val.push(self.values[k]);
                }
            }
            ptr[new_r + 1] = col.len();
        }
        SparseMatrix {
            nrows: rows.len(),
            ncols: cols.len(),
            row_ptr: ptr,
            col_idx: col,
            values: val,
        }
    }

    /// Dense copy, row-major. Intended for small oracle computations in
    /// tests and for interfacing with dense linear algebra.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.ncols]; self.nrows];
        for r in 0..self.nrows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                dense[r][self.col_idx[k]] += self.values[k];
            }
        }
        dense
    }

    /// Iterator over all stored `(row, col, value)` entries.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1])
                .map(move |k| (r, self.col_idx[k], self.values[k]))
        })
    }
}

/// Membership test for assembling region-restricted mass matrices.
///
/// Geometric variants are evaluated at quadrature points, which lie strictly
/// inside elements; a region whose boundary follows mesh lines therefore
/// yields an exact restriction. The `Nodal` variant thresholds the P1
/// interpolant of a 0/1 vertex mask at 1/2, which makes nested masks produce
/// nested indicator values.
#[derive(Debug, Clone, PartialEq)]
pub enum RegionIndicator {
    /// The whole domain.
    Whole,
    /// A single closed rectangle.
    Rect(Rect),
    /// A union of closed rectangles.
    RectUnion(Vec<Rect>),
    /// A 0/1 vertex mask; must have one entry per mesh vertex.
    Nodal(Vec<f64>),
}

impl RegionIndicator {
    fn value(&self, tri: &[usize; 3], bary: &[f64; 3], x: f64, y: f64) -> f64 {
        match self {
            RegionIndicator::Whole => 1.0,
            RegionIndicator::Rect(r) => {
                if r.contains(x, y) {
                    1.0
                } else {
                    0.0
                }
            }
            RegionIndicator::RectUnion(rs) => {
                if rs.iter().any(|r| r.contains(x, y)) {
                    1.0
                } else {
                    0.0
                }
            }
            RegionIndicator::Nodal(mask) => {
                let interp = bary[0] * mask[tri[0]] + bary[1] * mask[tri[1]] + bary[2] * mask[tri[2]];
                if interp >= 0.5 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn check(&self, mesh: &Mesh) {
        if let RegionIndicator::Nodal(mask) = self {
            assert_eq!(
                mask.len(),
                mesh.n_vertices(),
                "nodal mask length must equal the vertex count"
            );
        }
    }
}

fn triangle_coords(mesh: &Mesh, t: usize) -> ([usize; 3], [[f64; 2]; 3]) {
    let tri = mesh.triangles[t];
    (
        tri,
        [
            mesh.vertices[tri[0]],
            mesh.vertices[tri[1]],
            mesh.vertices[tri[2]],
        ],
    )
}

/// Element stiffness matrix and signed area for a triangle with the given
/// vertex coordinates (counter-clockwise order gives positive area).
fn element_stiffness(p: &[[f64; 2]; 3]) -> ([[f64; 3]; 3], f64) {
    // Opposite-edge vectors: e_i connects the two vertices other than i.
    let e = [
        [p[2][0] - p[1][0], p[2][1] - p[1][1]],
        [p[0][0] - p[2][0], p[0][1] - p[2][1]],
        [p[1][0] - p[0][0], p[1][1] - p[0][1]],
    ];
    let area = 0.5 * (e[2][0] * (-e[1][1]) - e[2][1] * (-e[1][0]));
    // grad(lambda_i) = rot90(e_i) / (2 area)
    let mut ke = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let gi = [-e[i][1], e[i][0]];
            let gj = [-e[j][1], e[j][0]];
            ke[i][j] = (gi[0] * gj[0] + gi[1] * gj[1]) / (4.0 * area);
        }
    }
    (ke, area)
}

/// Assembles the P1 stiffness matrix of the Laplacian on the full vertex
/// set (no boundary conditions applied).
pub fn assemble_stiffness(mesh: &Mesh) -> SparseMatrix {
    let mut triplets = Vec::with_capacity(9 * mesh.n_triangles());
    for t in 0..mesh.n_triangles() {
        let (tri, p) = triangle_coords(mesh, t);
        let (ke, area) = element_stiffness(&p);
        assert!(area > 0.0, "triangle {t} is degenerate or inverted");
        for i in 0..3 {
            for j in 0..3 {
                triplets.push((tri[i], tri[j], ke[i][j]));
            }
        }
    }
    SparseMatrix::from_triplets(mesh.n_vertices(), mesh.n_vertices(), &triplets)
}

/// Assembles the P1 mass matrix restricted to `region`: entries
/// `sum_q w_q ind(x_q) phi_i(x_q) phi_j(x_q)` over all elements.
///
/// The result is symmetric positive semi-definite for any region and equals
/// the exact mass matrix for `RegionIndicator::Whole`.
///
/// Panics if a `Nodal` mask length differs from the vertex count.
pub fn assemble_mass(mesh: &Mesh, region: &RegionIndicator) -> SparseMatrix {
    region.check(mesh);
    assemble_mass_with(mesh, |tri, bary, x, y| region.value(tri, bary, x, y))
}

/// Assembles the mass matrix of the union of several regions: the indicator
/// at a quadrature point is one when any region covers it. Evaluating the
/// union pointwise keeps differences like `M_union - M_region` exactly zero
/// wherever the regions coincide.
pub fn assemble_mass_union(mesh: &Mesh, regions: &[RegionIndicator]) -> SparseMatrix {
    for r in regions {
        r.check(mesh);
    }
    assemble_mass_with(mesh, |tri, bary, x, y| {
        if regions.iter().any(|r| r.value(tri, bary, x, y) > 0.0) {
            1.0
        } else {
            0.0
        }
    })
}

fn assemble_mass_with(
    mesh: &Mesh,
    indicator: impl Fn(&[usize; 3], &[f64; 3], f64, f64) -> f64,
) -> SparseMatrix {
    let mut triplets = Vec::with_capacity(9 * mesh.n_triangles());
    for t in 0..mesh.n_triangles() {
        let (tri, p) = triangle_coords(mesh, t);
        let (_, area) = element_stiffness(&p);
        let w = area / 3.0;
        let mut me = [[0.0; 3]; 3];
        let mut touched = false;
        for bary in &QUAD_BARY {
            let x = bary[0] * p[0][0] + bary[1] * p[1][0] + bary[2] * p[2][0];
            let y = bary[0] * p[0][1] + bary[1] * p[1][1] + bary[2] * p[2][1];
            let ind = indicator(&tri, bary, x, y);
            if ind == 0.0 {
                continue;
            }
            touched = true;
            for i in 0..3 {
                for j in 0..3 {
                    me[i][j] += w * ind * bary[i] * bary[j];
                }
            }
        }
        if !touched {
            continue;
        }
        for i in 0..3 {
            for j in 0..3 {
                triplets.push((tri[i], tri[j], me[i][j]));
            }
        }
    }
    SparseMatrix::from_triplets(mesh.n_vertices(), mesh.n_vertices(), &triplets)
}

/// Load vector of the positive part of a P1 function: entries
/// `sum_q w_q max(g_h(x_q), 0) phi_n(x_q)`.
///
/// For `g >= 0` nodewise this equals the mass matrix applied to `g`; in
/// general it is the quadrature approximation of the positive-part
/// functional, which is what the gradient-monotonicity analysis uses.
///
/// Panics if `g.len()` differs from the vertex count.
pub fn positive_part_load(mesh: &Mesh, g: &[f64]) -> Vec<f64> {
    assert_eq!(g.len(), mesh.n_vertices(), "nodal data length mismatch");
    let mut load = vec![0.0; mesh.n_vertices()];
    for t in 0..mesh.n_triangles() {
        let (tri, p) = triangle_coords(mesh, t);
        let (_, area) = element_stiffness(&p);
        let w = area / 3.0;
        for bary in &QUAD_BARY {
            let gq = bary[0] * g[tri[0]] + bary[1] * g[tri[1]] + bary[2] * g[tri[2]];
            if gq <= 0.0 {
                continue;
            }
            for i in 0..3 {
                load[tri[i]] += w * gq * bary[i];
            }
        }
    }
    load
}

/// Inner product `x^T M y` for a mass (or any square) matrix.
pub fn m_inner(m: &SparseMatrix, x: &[f64], y: &[f64]) -> f64 {
    m.quadratic_form(x, y)
}

/// Norm induced by a symmetric positive semi-definite matrix. Small
/// negative round-off in the quadratic form is clamped to zero.
pub fn m_norm(m: &SparseMatrix, x: &[f64]) -> f64 {
    m.quadratic_form(x, x).max(0.0).sqrt()
}

/// Block norm `sqrt(sum_nu |x_nu|_M^2)` over per-player vectors.
pub fn block_m_norm(m: &SparseMatrix, xs: &[Vec<f64>]) -> f64 {
    xs.iter()
        .map(|x| m.quadratic_form(x, x).max(0.0))
        .sum::<f64>()
        .sqrt()
}
