//! P1 mass and stiffness assembly on whole meshes, element subsets and
//! coarse elements, plus time-integrated load vectors.

use crate::coefficient::Coefficient;
use crate::forcing::Forcing;
use crate::grid::{SpatialMesh, SpatialMeshPair, TemporalGrid};
use crate::linalg::SparseOperator;

/// Which nodes carry degrees of freedom.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DofSet {
    /// Interior nodes only, numbered by `SpatialMesh::interior_index`.
    Interior,
    /// Every node, numbered by node id.
    All,
}

fn dof_map(mesh: &SpatialMesh, dofs: DofSet) -> (Vec<Option<usize>>, usize) {
    match dofs {
        DofSet::Interior => ((0..mesh.node_count()).map(|v| mesh.interior_index(v)).collect(), mesh.interior_count()),
        DofSet::All => ((0..mesh.node_count()).map(Some).collect(), mesh.node_count()),
    }
}

pub fn local_mass(area: f64) -> [[f64; 3]; 3] {
    let d = area / 6.0;
    let o = area / 12.0;
    [[d, o, o], [o, d, o], [o, o, d]]
}

pub fn local_stiffness(mesh: &SpatialMesh, element: usize, value: f64) -> [[f64; 3]; 3] {
    let g = mesh.barycentric_gradients(element);
    let scale = value * mesh.signed_area(element);
    let mut out = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            out[a][b] = scale * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
        }
    }
    out
}

/// Integrand selector for [`assemble_on`].
#[derive(Clone, Copy)]
pub enum Form<'a> {
    Mass,
    /// Stiffness with per-element coefficient values.
    Stiffness(&'a [f64]),
    /// Stiffness with unit coefficient.
    Laplacian,
}

/// Assembles `form` integrated over `elements` only.
pub fn assemble_on(mesh: &SpatialMesh, elements: &[usize], form: Form, dofs: DofSet) -> SparseOperator {
    let (map, n) = dof_map(mesh, dofs);
    let mut triplets = Vec::with_capacity(9 * elements.len());
    for &e in elements {
        let local = match form {
            Form::Mass => local_mass(mesh.signed_area(e)),
            Form::Stiffness(values) => local_stiffness(mesh, e, values[e]),
            Form::Laplacian => local_stiffness(mesh, e, 1.0),
        };
        let tri = mesh.elements()[e];
        for a in 0..3 {
            let Some(ra) = map[tri[a]] else { continue };
            for b in 0..3 {
                if let Some(cb) = map[tri[b]] {
                    triplets.push((ra, cb, local[a][b]));
                }
            }
        }
    }
    SparseOperator::from_triplets(n, n, triplets)
}

fn all_elements(mesh: &SpatialMesh) -> Vec<usize> {
    (0..mesh.element_count()).collect()
}

pub fn mass_matrix(mesh: &SpatialMesh, dofs: DofSet) -> SparseOperator {
    assemble_on(mesh, &all_elements(mesh), Form::Mass, dofs)
}

/// Unit-coefficient stiffness matrix.
pub fn laplacian_matrix(mesh: &SpatialMesh, dofs: DofSet) -> SparseOperator {
    assemble_on(mesh, &all_elements(mesh), Form::Laplacian, dofs)
}

/// Stiffness matrix for per-element coefficient values.
pub fn stiffness_from_values(mesh: &SpatialMesh, values: &[f64], dofs: DofSet) -> SparseOperator {
    assemble_on(mesh, &all_elements(mesh), Form::Stiffness(values), dofs)
}

/// Stiffness matrix with the coefficient frozen on fine interval `g`
/// (1-based), i.e. evaluated at `t_{g-1/2}`.
pub fn stiffness_matrix(
    mesh: &SpatialMesh,
    coeff: &Coefficient,
    grid: &TemporalGrid,
    g: usize,
    dofs: DofSet,
) -> SparseOperator {
    let slab = coeff.slab_for_interval(grid, g);
    stiffness_from_values(mesh, &coeff.element_values(mesh, slab), dofs)
}

/// Fine mass and stiffness matrices integrated over the coarse element `k`
/// only, in the global fine interior numbering.
pub fn element_restricted_matrices(
    pair: &SpatialMeshPair,
    coeff: &Coefficient,
    grid: &TemporalGrid,
    k: usize,
    g: usize,
) -> (SparseOperator, SparseOperator) {
    let slab = coeff.slab_for_interval(grid, g);
    let values = coeff.element_values(&pair.fine, slab);
    let children = pair.element_children(k);
    (
        assemble_on(&pair.fine, children, Form::Mass, DofSet::Interior),
        assemble_on(&pair.fine, children, Form::Stiffness(&values), DofSet::Interior),
    )
}

/// `∫_{t_{g-1}}^{t_g} ∫ f φ_x` for interior nodes, midpoint rule in time.
pub fn load_vector(f: &dyn Forcing, mesh: &SpatialMesh, grid: &TemporalGrid, g: usize) -> Vec<f64> {
    let mut out = f.spatial_load(mesh, grid.fine_midpoint(g));
    out.iter_mut().for_each(|v| *v *= grid.fine_step);
    out
}

/// `∫ φ_x` for every interior node.
pub fn lumped_areas(mesh: &SpatialMesh) -> Vec<f64> {
    let mut out = vec![0.0; mesh.interior_count()];
    for e in 0..mesh.element_count() {
        let third = mesh.signed_area(e) / 3.0;
        for &v in &mesh.elements()[e] {
            if let Some(i) = mesh.interior_index(v) {
                out[i] += third;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficient::generate_random;
    use crate::forcing::ConstantForcing;
    use crate::grid::{build_mesh_pair, build_temporal_grid, build_uniform_mesh};

    #[test]
    fn mass_row_sums_total_one() {
        let m = build_uniform_mesh(3).unwrap();
        let mass = mass_matrix(&m, DofSet::All);
        let total: f64 = mass.values().iter().sum();
        assert!((total - 1.0).abs() < 1e-14);
        assert!(mass.relative_asymmetry() < 1e-15);
    }

    #[test]
    fn reference_triangle_mass_diagonal() {
        let l = local_mass(0.5);
        assert!((l[0][0] - 1.0 / 12.0).abs() < 1e-16);
        assert!((l[0][1] - 1.0 / 24.0).abs() < 1e-16);
    }

    #[test]
    fn coarse_mass_applied_to_ones_gives_lumped_areas() {
        let m = build_uniform_mesh(1).unwrap();
        let mass = mass_matrix(&m, DofSet::All);
        let lumped = mass.mul_vec(&[1.0; 9]);
        // corner (0,0) touches two triangles, corner (1,0) one, centre six
        assert!((lumped[0] - 2.0 * 0.125 / 3.0).abs() < 1e-15);
        assert!((lumped[2] - 0.125 / 3.0).abs() < 1e-15);
        assert!((lumped[4] - 6.0 * 0.125 / 3.0).abs() < 1e-15);
        assert!((lumped[4] - lumped_areas(&m)[0]).abs() < 1e-15);
    }

    #[test]
    fn laplacian_diagonal_and_null_space() {
        let m = build_uniform_mesh(3).unwrap();
        let lap = laplacian_matrix(&m, DofSet::Interior);
        assert!((0..lap.nrows()).all(|i| (lap.get(i, i) - 4.0).abs() < 1e-13));
        let all = laplacian_matrix(&m, DofSet::All);
        assert!(all.mul_vec(&vec![1.0; m.node_count()]).iter().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn element_pieces_sum_to_global() {
        let pair = build_mesh_pair(1, 3).unwrap();
        let grid = build_temporal_grid(1.0, 2, 2).unwrap();
        let coeff = generate_random(1, 0.25, 0.25, 0.1, 1.0, false, 0.0, 1.0).unwrap();
        let mut mass = SparseOperator::zeros(pair.fine.interior_count(), pair.fine.interior_count());
        let mut stiff = mass.clone();
        for k in 0..pair.coarse.element_count() {
            let (mk, sk) = element_restricted_matrices(&pair, &coeff, &grid, k, 3);
            mass = mass.add_scaled(&mk, 1.0);
            stiff = stiff.add_scaled(&sk, 1.0);
        }
        let gm = mass_matrix(&pair.fine, DofSet::Interior);
        let gs = stiffness_matrix(&pair.fine, &coeff, &grid, 3, DofSet::Interior);
        assert!((mass.to_dense() - gm.to_dense()).abs().max() < 1e-15);
        assert!((stiff.to_dense() - gs.to_dense()).abs().max() < 1e-14);
    }

    #[test]
    fn constant_load_equals_scaled_row_sums() {
        let m = build_uniform_mesh(2).unwrap();
        let grid = build_temporal_grid(1.0, 2, 2).unwrap();
        let load = load_vector(&ConstantForcing(1.0), &m, &grid, 1);
        let rows = mass_matrix(&m, DofSet::All).mul_vec(&vec![1.0; m.node_count()]);
        for (i, &v) in m.interior_nodes().iter().enumerate() {
            assert!((load[i] - grid.fine_step * rows[v]).abs() < 1e-15);
        }
    }
}
