//! Projective quasi-interpolation `I_H = π_H ∘ Π_H` from the fine to the
//! coarse P1 space, and the nodal prolongation back.

use crate::assembly::local_mass;
use crate::error::{invalid, Result};
use crate::grid::{barycentric, Patch, SpatialMeshPair};
use crate::linalg::SparseOperator;

#[derive(Clone, Debug)]
pub struct InterpolationOperator {
    /// Coarse interior rows, fine interior columns.
    pub matrix: SparseOperator,
    /// Fine interior rows, coarse interior columns.
    pub prolongation: SparseOperator,
}

pub fn build_quasi_interpolation(pair: &SpatialMeshPair) -> Result<InterpolationOperator> {
    let coarse = &pair.coarse;
    let fine = &pair.fine;
    if !fine.cells_per_side().is_multiple_of(coarse.cells_per_side()) {
        return invalid("meshes are not nested");
    }

    let mut triplets = Vec::new();
    for k in 0..coarse.element_count() {
        let tri = coarse.elements()[k];
        let verts = coarse.vertices(k);
        let area = coarse.signed_area(k);
        // inverse of the local P1 mass matrix
        let minv = |a: usize, b: usize| if a == b { 9.0 / area } else { -3.0 / area };
        for (a, &z) in tri.iter().enumerate() {
            let Some(row) = coarse.interior_index(z) else { continue };
            let weight = 1.0 / coarse.node_elements(z).len() as f64;
            for &c in pair.element_children(k) {
                let ftri = fine.elements()[c];
                let fverts = fine.vertices(c);
                let lam: Vec<[f64; 3]> = fverts.iter().map(|p| barycentric(&verts, p[0], p[1])).collect();
                let m = local_mass(fine.signed_area(c));
                for (b, &x) in ftri.iter().enumerate() {
                    let Some(col) = fine.interior_index(x) else { continue };
                    // ∫_c ψ_b (Π_H-dual of vertex a) over the fine element
                    let mut value = 0.0;
                    for ap in 0..3 {
                        let moment: f64 = (0..3).map(|d| lam[d][ap] * m[b][d]).sum();
                        value += minv(a, ap) * moment;
                    }
                    triplets.push((row, col, weight * value));
                }
            }
        }
    }
    let matrix = SparseOperator::from_triplets(coarse.interior_count(), fine.interior_count(), triplets);

    let mut ptrip = Vec::new();
    for (row, &x) in fine.interior_nodes().iter().enumerate() {
        let [px, py] = fine.nodes()[x];
        let k = coarse.locate(px, py).expect("fine node inside the domain");
        let lam = barycentric(&coarse.vertices(k), px, py);
        for (a, &z) in coarse.elements()[k].iter().enumerate() {
            if let Some(col) = coarse.interior_index(z) {
                if lam[a].abs() > 1e-14 {
                    ptrip.push((row, col, lam[a]));
                }
            }
        }
    }
    let prolongation = SparseOperator::from_triplets(fine.interior_count(), coarse.interior_count(), ptrip);
    Ok(InterpolationOperator { matrix, prolongation })
}

impl InterpolationOperator {
    pub fn apply(&self, fine: &[f64]) -> Result<Vec<f64>> {
        if fine.len() != self.matrix.ncols() {
            return invalid(format!("expected {} fine values, got {}", self.matrix.ncols(), fine.len()));
        }
        Ok(self.matrix.mul_vec(fine))
    }

    pub fn apply_transpose(&self, coarse: &[f64]) -> Result<Vec<f64>> {
        if coarse.len() != self.matrix.nrows() {
            return invalid(format!("expected {} coarse values, got {}", self.matrix.nrows(), coarse.len()));
        }
        Ok(self.matrix.transpose_mul_vec(coarse))
    }

    pub fn prolongate(&self, coarse: &[f64]) -> Result<Vec<f64>> {
        if coarse.len() != self.prolongation.ncols() {
            return invalid(format!("expected {} coarse values, got {}", self.prolongation.ncols(), coarse.len()));
        }
        Ok(self.prolongation.mul_vec(coarse))
    }

    /// `I_{H,k}`: rows of the active coarse nodes, columns of the active
    /// fine nodes of `patch`.
    pub fn localized(&self, patch: &Patch) -> SparseOperator {
        self.matrix.submatrix(&patch.coarse_dofs, &patch.fine_dofs)
    }
}
