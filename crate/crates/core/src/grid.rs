//! Uniform criss-cross triangulations of the unit square, nested mesh pairs,
//! temporal grids and coarse element patches.

use crate::error::{invalid, Result};

/// Uniform triangulation of `[0,1]²` with `2^n × 2^n` squares, each split
/// along the diagonal from its lower-left to its upper-right corner.
///
/// Node `(i, j)` has id `j * (cells + 1) + i`. Square `(i, j)` holds the
/// lower triangle `2 * (j * cells + i)` and the upper triangle one above it.
#[derive(Clone, Debug)]
pub struct SpatialMesh {
    exponent: u32,
    cells: usize,
    nodes: Vec<[f64; 2]>,
    elements: Vec<[usize; 3]>,
    boundary_mask: Vec<bool>,
    interior_index: Vec<Option<usize>>,
    interior_nodes: Vec<usize>,
    node_elements: Vec<Vec<usize>>,
    mesh_size: f64,
}

pub fn build_uniform_mesh(subdivision_exponent: u32) -> Result<SpatialMesh> {
    if subdivision_exponent < 1 {
        return invalid("mesh subdivision exponent must be at least 1");
    }
    if subdivision_exponent > 12 {
        return invalid(format!("mesh subdivision exponent {subdivision_exponent} is too large"));
    }
    let cells = 1usize << subdivision_exponent;
    let h = 1.0 / cells as f64;
    let side = cells + 1;

    let mut nodes = Vec::with_capacity(side * side);
    let mut boundary_mask = Vec::with_capacity(side * side);
    for j in 0..side {
        for i in 0..side {
            nodes.push([i as f64 * h, j as f64 * h]);
            boundary_mask.push(i == 0 || j == 0 || i == cells || j == cells);
        }
    }

    let mut interior_index = vec![None; nodes.len()];
    let mut interior_nodes = Vec::new();
    for (id, &on_boundary) in boundary_mask.iter().enumerate() {
        if !on_boundary {
            interior_index[id] = Some(interior_nodes.len());
            interior_nodes.push(id);
        }
    }

    let mut elements = Vec::with_capacity(2 * cells * cells);
    for j in 0..cells {
        for i in 0..cells {
            let a = j * side + i;
            let b = a + 1;
            let c = a + side + 1;
            let d = a + side;
            elements.push([a, b, c]);
            elements.push([a, c, d]);
        }
    }

    let mut node_elements = vec![Vec::new(); nodes.len()];
    for (e, tri) in elements.iter().enumerate() {
        for &v in tri {
            node_elements[v].push(e);
        }
    }

    Ok(SpatialMesh {
        exponent: subdivision_exponent,
        cells,
        nodes,
        elements,
        boundary_mask,
        interior_index,
        interior_nodes,
        node_elements,
        mesh_size: std::f64::consts::SQRT_2 * h,
    })
}

impl SpatialMesh {
    pub fn exponent(&self) -> u32 {
        self.exponent
    }

    /// Number of squares along each side.
    pub fn cells_per_side(&self) -> usize {
        self.cells
    }

    /// Side length of the squares.
    pub fn spacing(&self) -> f64 {
        1.0 / self.cells as f64
    }

    /// Longest element diameter.
    pub fn mesh_size(&self) -> f64 {
        self.mesh_size
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn elements(&self) -> &[[usize; 3]] {
        &self.elements
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn element_count(&self) -> usize {
        self.elements.len()
    }

    pub fn boundary_mask(&self) -> &[bool] {
        &self.boundary_mask
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary_mask[node]
    }

    pub fn interior_index(&self, node: usize) -> Option<usize> {
        self.interior_index[node]
    }

    /// Node ids of the interior nodes, in interior-DOF order.
    pub fn interior_nodes(&self) -> &[usize] {
        &self.interior_nodes
    }

    pub fn interior_count(&self) -> usize {
        self.interior_nodes.len()
    }

    /// Elements having `node` as a vertex.
    pub fn node_elements(&self, node: usize) -> &[usize] {
        &self.node_elements[node]
    }

    pub fn node_id(&self, i: usize, j: usize) -> usize {
        j * (self.cells + 1) + i
    }

    pub fn node_at(&self, x: f64, y: f64) -> Option<usize> {
        let fi = x * self.cells as f64;
        let fj = y * self.cells as f64;
        let (i, j) = (fi.round(), fj.round());
        let ok = (fi - i).abs() < 1e-9 && (fj - j).abs() < 1e-9 && i >= 0.0 && j >= 0.0;
        let (i, j) = (i as usize, j as usize);
        (ok && i <= self.cells && j <= self.cells).then(|| self.node_id(i, j))
    }

    pub fn vertices(&self, element: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.elements[element];
        [self.nodes[a], self.nodes[b], self.nodes[c]]
    }

    /// Signed area, positive for counterclockwise vertex order.
    pub fn signed_area(&self, element: usize) -> f64 {
        let [p, q, r] = self.vertices(element);
        0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]))
    }

    pub fn centroid(&self, element: usize) -> [f64; 2] {
        let [p, q, r] = self.vertices(element);
        [(p[0] + q[0] + r[0]) / 3.0, (p[1] + q[1] + r[1]) / 3.0]
    }

    /// Gradients of the three barycentric coordinates on `element`.
    pub fn barycentric_gradients(&self, element: usize) -> [[f64; 2]; 3] {
        let [p, q, r] = self.vertices(element);
        let two_area = 2.0 * self.signed_area(element);
        [
            [(q[1] - r[1]) / two_area, (r[0] - q[0]) / two_area],
            [(r[1] - p[1]) / two_area, (p[0] - r[0]) / two_area],
            [(p[1] - q[1]) / two_area, (q[0] - p[0]) / two_area],
        ]
    }

    /// Square indices and triangle half (0 lower, 1 upper) of `element`.
    pub fn element_square(&self, element: usize) -> (usize, usize, usize) {
        let square = element / 2;
        (square % self.cells, square / self.cells, element % 2)
    }

    /// Element containing the point; points on shared edges resolve to the
    /// element with the smaller square index.
    pub fn locate(&self, x: f64, y: f64) -> Option<usize> {
        if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
            return None;
        }
        let n = self.cells as f64;
        let i = ((x * n).floor() as usize).min(self.cells - 1);
        let j = ((y * n).floor() as usize).min(self.cells - 1);
        let lx = x * n - i as f64;
        let ly = y * n - j as f64;
        let half = usize::from(ly > lx);
        Some(2 * (j * self.cells + i) + half)
    }
}

/// Nested coarse and fine meshes with parent/child maps.
#[derive(Clone, Debug)]
pub struct SpatialMeshPair {
    pub coarse: SpatialMesh,
    pub fine: SpatialMesh,
    refinement_levels: u32,
    element_children: Vec<Vec<usize>>,
    fine_parent: Vec<usize>,
    node_embedding: Vec<usize>,
}

pub fn build_mesh_pair(coarse_exponent: u32, fine_exponent: u32) -> Result<SpatialMeshPair> {
    if fine_exponent <= coarse_exponent {
        return invalid(format!("fine exponent {fine_exponent} must exceed coarse exponent {coarse_exponent}"));
    }
    let coarse = build_uniform_mesh(coarse_exponent)?;
    let fine = build_uniform_mesh(fine_exponent)?;
    let r = fine_exponent - coarse_exponent;
    let s = 1usize << r;

    let mut element_children = vec![Vec::with_capacity(s * s * 2); coarse.element_count()];
    let mut fine_parent = Vec::with_capacity(fine.element_count());
    for e in 0..fine.element_count() {
        let (i, j, half) = fine.element_square(e);
        let (ci, cj) = (i / s, j / s);
        let (p, q) = (i % s, j % s);
        let coarse_half = match p.cmp(&q) {
            std::cmp::Ordering::Greater => 0,
            std::cmp::Ordering::Less => 1,
            std::cmp::Ordering::Equal => half,
        };
        let parent = 2 * (cj * coarse.cells + ci) + coarse_half;
        fine_parent.push(parent);
        element_children[parent].push(e);
    }

    let node_embedding = (0..coarse.node_count())
        .map(|id| {
            let (i, j) = (id % (coarse.cells + 1), id / (coarse.cells + 1));
            fine.node_id(i * s, j * s)
        })
        .collect();

    Ok(SpatialMeshPair { coarse, fine, refinement_levels: r, element_children, fine_parent, node_embedding })
}

impl SpatialMeshPair {
    pub fn refinement_levels(&self) -> u32 {
        self.refinement_levels
    }

    pub fn element_children(&self, coarse_element: usize) -> &[usize] {
        &self.element_children[coarse_element]
    }

    pub fn parent(&self, fine_element: usize) -> usize {
        self.fine_parent[fine_element]
    }

    pub fn node_embedding(&self) -> &[usize] {
        &self.node_embedding
    }

    /// Value of the coarse hat function of `coarse_node` at a fine node.
    pub fn hat_value(&self, coarse_node: usize, fine_node: usize) -> f64 {
        let [x, y] = self.fine.nodes()[fine_node];
        let e = self.coarse.locate(x, y).expect("fine node inside the domain");
        // the hat is continuous, so the located element gives the value
        match self.coarse.elements()[e].iter().position(|&v| v == coarse_node) {
            Some(local) => barycentric(&self.coarse.vertices(e), x, y)[local],
            None => 0.0,
        }
    }
}

pub fn barycentric(tri: &[[f64; 2]; 3], x: f64, y: f64) -> [f64; 3] {
    let [p, q, r] = *tri;
    let det = (q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]);
    let l1 = ((x - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (y - p[1])) / det;
    let l2 = ((q[0] - p[0]) * (y - p[1]) - (x - p[0]) * (q[1] - p[1])) / det;
    [1.0 - l1 - l2, l1, l2]
}

#[cfg(test)]
fn point_in_triangle(tri: &[[f64; 2]; 3], x: f64, y: f64) -> bool {
    barycentric(tri, x, y).iter().all(|&l| l >= -1e-12)
}

/// Uniform coarse and fine temporal grids on `[0, t_final]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TemporalGrid {
    pub t_final: f64,
    pub coarse_steps: usize,
    pub fine_per_coarse: usize,
    pub coarse_step: f64,
    pub fine_step: f64,
}

pub fn build_temporal_grid(t_final: f64, coarse_steps: usize, fine_per_coarse: usize) -> Result<TemporalGrid> {
    if !(t_final > 0.0 && t_final.is_finite()) {
        return invalid(format!("final time must be positive, got {t_final}"));
    }
    if coarse_steps == 0 || fine_per_coarse == 0 {
        return invalid("coarse_steps and fine_per_coarse must be at least 1");
    }
    let coarse_step = t_final / coarse_steps as f64;
    Ok(TemporalGrid {
        t_final,
        coarse_steps,
        fine_per_coarse,
        coarse_step,
        fine_step: coarse_step / fine_per_coarse as f64,
    })
}

impl TemporalGrid {
    pub fn fine_steps(&self) -> usize {
        self.coarse_steps * self.fine_per_coarse
    }

    /// Coarse time node `T_i`.
    pub fn coarse_time(&self, i: usize) -> f64 {
        i as f64 * self.coarse_step
    }

    /// Fine time node `t_g`.
    pub fn fine_time(&self, g: usize) -> f64 {
        g as f64 * self.fine_step
    }

    /// Midpoint of fine interval `g` (1-based).
    pub fn fine_midpoint(&self, g: usize) -> f64 {
        (g as f64 - 0.5) * self.fine_step
    }

    /// Global index of fine step `m` (1-based) within coarse interval `j` (1-based).
    pub fn global_fine_index(&self, j: usize, m: usize) -> usize {
        (j - 1) * self.fine_per_coarse + m
    }

    /// Fine time nodes within `[T_{j-1}, T_j]`.
    pub fn fine_nodes_in(&self, j: usize) -> Vec<f64> {
        (0..=self.fine_per_coarse).map(|m| self.fine_time((j - 1) * self.fine_per_coarse + m)).collect()
    }
}

/// Coarse element patch `N^k(K)` with its active fine and coarse degrees of
/// freedom (nodes interior to both the patch and the domain).
#[derive(Clone, Debug)]
pub struct Patch {
    pub center_element: usize,
    pub radius: usize,
    pub coarse_elements: Vec<usize>,
    pub fine_nodes_active: Vec<usize>,
    pub coarse_nodes_active: Vec<usize>,
    /// Global fine interior-DOF ids of `fine_nodes_active`, ascending.
    pub fine_dofs: Vec<usize>,
    /// Global coarse interior-DOF ids of `coarse_nodes_active`, ascending.
    pub coarse_dofs: Vec<usize>,
}

/// Elements sharing at least one vertex with `set`, including `set`.
pub fn one_layer(mesh: &SpatialMesh, set: &[usize]) -> Vec<usize> {
    let mut member = vec![false; mesh.element_count()];
    for &e in set {
        for &v in &mesh.elements()[e] {
            for &n in mesh.node_elements(v) {
                member[n] = true;
            }
        }
    }
    (0..member.len()).filter(|&e| member[e]).collect()
}

/// `N^k(K)`; `k = 0` gives `{K}`.
pub fn patch_elements(mesh: &SpatialMesh, center: usize, radius: usize) -> Vec<usize> {
    let mut set = vec![center];
    for _ in 0..radius {
        let next = one_layer(mesh, &set);
        if next.len() == set.len() {
            break;
        }
        set = next;
    }
    set
}

/// Smallest `k` with `N^k(K) = Ω` for every element `K`.
pub fn saturating_radius(mesh: &SpatialMesh) -> usize {
    (0..mesh.element_count())
        .map(|center| {
            let mut set = vec![center];
            let mut k = 0;
            while set.len() < mesh.element_count() {
                set = one_layer(mesh, &set);
                k += 1;
            }
            k
        })
        .max()
        .unwrap_or(0)
        .max(1)
}

pub fn patch(pair: &SpatialMeshPair, center: usize, radius: usize) -> Result<Patch> {
    if radius < 1 {
        return invalid("patch radius must be at least 1");
    }
    if center >= pair.coarse.element_count() {
        return invalid(format!("coarse element {center} out of range"));
    }
    let coarse_elements = patch_elements(&pair.coarse, center, radius);
    let mut in_patch = vec![false; pair.coarse.element_count()];
    for &e in &coarse_elements {
        in_patch[e] = true;
    }

    let mut coarse_nodes_active: Vec<usize> = coarse_elements
        .iter()
        .flat_map(|&e| pair.coarse.elements()[e])
        .filter(|&v| !pair.coarse.is_boundary(v) && pair.coarse.node_elements(v).iter().all(|&e| in_patch[e]))
        .collect();
    coarse_nodes_active.sort_unstable();
    coarse_nodes_active.dedup();

    let mut fine_nodes_active: Vec<usize> = coarse_elements
        .iter()
        .flat_map(|&e| pair.element_children(e).iter().flat_map(|&c| pair.fine.elements()[c]))
        .filter(|&v| !pair.fine.is_boundary(v) && pair.fine.node_elements(v).iter().all(|&c| in_patch[pair.parent(c)]))
        .collect();
    fine_nodes_active.sort_unstable();
    fine_nodes_active.dedup();

    // Node ids and interior-DOF ids are both row-major, so sorted node ids
    // give sorted DOF ids.
    let fine_dofs = fine_nodes_active.iter().map(|&v| pair.fine.interior_index(v).unwrap()).collect();
    let coarse_dofs = coarse_nodes_active.iter().map(|&v| pair.coarse.interior_index(v).unwrap()).collect();

    Ok(Patch {
        center_element: center,
        radius,
        coarse_elements,
        fine_nodes_active,
        coarse_nodes_active,
        fine_dofs,
        coarse_dofs,
    })
}

impl Patch {
    /// Local index of a global fine interior DOF.
    pub fn fine_local(&self, dof: usize) -> Option<usize> {
        self.fine_dofs.binary_search(&dof).ok()
    }

    pub fn coarse_local(&self, dof: usize) -> Option<usize> {
        self.coarse_dofs.binary_search(&dof).ok()
    }

    pub fn contains_element(&self, coarse_element: usize) -> bool {
        self.coarse_elements.binary_search(&coarse_element).is_ok()
    }

    /// Restricts a global fine interior vector to the active DOFs.
    pub fn restrict(&self, global: &[f64]) -> Vec<f64> {
        self.fine_dofs.iter().map(|&d| global[d]).collect()
    }

    /// Adds `alpha * local` into a global fine interior vector.
    pub fn scatter_add(&self, alpha: f64, local: &[f64], global: &mut [f64]) {
        for (&d, &v) in self.fine_dofs.iter().zip(local) {
            global[d] += alpha * v;
        }
    }
}
