//! Right-hand sides `f(t, x)` and their spatial load vectors.

use crate::assembly::{lumped_areas, mass_matrix, DofSet};
use crate::grid::SpatialMesh;

/// A source term that can be tested against the P1 hat functions of a mesh.
pub trait Forcing: Sync {
    /// `∫ f(t, ·) φ_x` for every interior node `x` of `mesh`.
    fn spatial_load(&self, mesh: &SpatialMesh, t: f64) -> Vec<f64>;
}

/// `f ≡ c`.
#[derive(Clone, Copy, Debug)]
pub struct ConstantForcing(pub f64);

impl Forcing for ConstantForcing {
    fn spatial_load(&self, mesh: &SpatialMesh, _t: f64) -> Vec<f64> {
        lumped_areas(mesh).into_iter().map(|a| self.0 * a).collect()
    }
}

/// `f(t, x) = f̃(x) + a + b t + c t²` with `f̃` a P1 function on one mesh,
/// given by its values at every node (in node-id order).
#[derive(Clone, Debug)]
pub struct NodalForcing {
    exponent: u32,
    spatial: Vec<f64>,
    ones: Vec<f64>,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl NodalForcing {
    pub fn new(mesh: &SpatialMesh, nodal: &[f64], a: f64, b: f64, c: f64) -> Self {
        assert_eq!(nodal.len(), mesh.node_count());
        let all = mass_matrix(mesh, DofSet::All).mul_vec(nodal);
        Self {
            exponent: mesh.exponent(),
            spatial: mesh.interior_nodes().iter().map(|&v| all[v]).collect(),
            ones: lumped_areas(mesh),
            a,
            b,
            c,
        }
    }
}

impl Forcing for NodalForcing {
    fn spatial_load(&self, mesh: &SpatialMesh, t: f64) -> Vec<f64> {
        assert_eq!(mesh.exponent(), self.exponent, "nodal forcing used on a different mesh");
        let s = self.a + self.b * t + self.c * t * t;
        self.spatial.iter().zip(&self.ones).map(|(f, o)| f + s * o).collect()
    }
}

/// Closure-backed forcing integrated with the edge-midpoint rule, exact for
/// `f` linear in space.
pub struct FnForcing<F>(pub F);

impl<F: Fn(f64, [f64; 2]) -> f64 + Sync> Forcing for FnForcing<F> {
    fn spatial_load(&self, mesh: &SpatialMesh, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; mesh.interior_count()];
        for e in 0..mesh.element_count() {
            let tri = mesh.elements()[e];
            let p = mesh.vertices(e);
            let mid = |a: usize, b: usize| [(p[a][0] + p[b][0]) / 2.0, (p[a][1] + p[b][1]) / 2.0];
            let f01 = (self.0)(t, mid(0, 1));
            let f12 = (self.0)(t, mid(1, 2));
            let f20 = (self.0)(t, mid(2, 0));
            let w = mesh.signed_area(e) / 6.0;
            let contrib = [w * (f01 + f20), w * (f01 + f12), w * (f12 + f20)];
            for (a, &v) in tri.iter().enumerate() {
                if let Some(i) = mesh.interior_index(v) {
                    out[i] += contrib[a];
                }
            }
        }
        out
    }
}
