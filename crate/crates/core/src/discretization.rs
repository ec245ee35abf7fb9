//! Shared read-only problem data: meshes, time grid, coefficient and the
//! global matrices every later stage draws from.

use std::collections::BTreeMap;

use crate::assembly::{mass_matrix, stiffness_from_values, DofSet};
use crate::coefficient::Coefficient;
use crate::error::Result;
use crate::grid::{SpatialMeshPair, TemporalGrid};
use crate::interpolation::{build_quasi_interpolation, InterpolationOperator};
use crate::linalg::SparseOperator;

/// Identifies a discretization for cache validation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Fingerprint {
    pub coarse_exponent: u32,
    pub fine_exponent: u32,
    pub t_final_bits: u64,
    pub coarse_steps: usize,
    pub fine_per_coarse: usize,
    pub coefficient: u64,
}

pub struct Discretization {
    pub pair: SpatialMeshPair,
    pub grid: TemporalGrid,
    pub coeff: Coefficient,
    pub interp: InterpolationOperator,
    /// Fine mass matrix on interior DOFs.
    pub fine_mass: SparseOperator,
    /// Coarse mass matrix on interior DOFs.
    pub coarse_mass: SparseOperator,
    slab_of_step: Vec<usize>,
    element_values: BTreeMap<usize, Vec<f64>>,
    stiffness: BTreeMap<usize, SparseOperator>,
}

impl Discretization {
    pub fn new(pair: SpatialMeshPair, grid: TemporalGrid, coeff: Coefficient) -> Result<Self> {
        coeff.check_compatibility(&pair.fine, &grid)?;
        let interp = build_quasi_interpolation(&pair)?;
        let fine_mass = mass_matrix(&pair.fine, DofSet::Interior);
        let coarse_mass = mass_matrix(&pair.coarse, DofSet::Interior);
        let slab_of_step: Vec<usize> = (1..=grid.fine_steps()).map(|g| coeff.slab_for_interval(&grid, g)).collect();
        let mut element_values = BTreeMap::new();
        let mut stiffness = BTreeMap::new();
        for &slab in &slab_of_step {
            if let std::collections::btree_map::Entry::Vacant(e) = element_values.entry(slab) {
                let values = coeff.element_values(&pair.fine, slab);
                stiffness.insert(slab, stiffness_from_values(&pair.fine, &values, DofSet::Interior));
                e.insert(values);
            }
        }
        Ok(Self { pair, grid, coeff, interp, fine_mass, coarse_mass, slab_of_step, element_values, stiffness })
    }

    pub fn fingerprint(&self) -> Fingerprint {
        Fingerprint {
            coarse_exponent: self.pair.coarse.exponent(),
            fine_exponent: self.pair.fine.exponent(),
            t_final_bits: self.grid.t_final.to_bits(),
            coarse_steps: self.grid.coarse_steps,
            fine_per_coarse: self.grid.fine_per_coarse,
            coefficient: self.coeff.fingerprint(),
        }
    }

    pub fn n_fine(&self) -> usize {
        self.pair.fine.interior_count()
    }

    pub fn n_coarse(&self) -> usize {
        self.pair.coarse.interior_count()
    }

    /// Coefficient slab of fine interval `g` (1-based).
    pub fn slab(&self, g: usize) -> usize {
        self.slab_of_step[g - 1]
    }

    /// Fine stiffness matrix on fine interval `g` (1-based).
    pub fn stiffness(&self, g: usize) -> &SparseOperator {
        &self.stiffness[&self.slab(g)]
    }

    /// Coefficient value of every fine element on a slab.
    pub fn element_values(&self, slab: usize) -> &[f64] {
        &self.element_values[&slab]
    }

    pub fn stiffness_for_slab(&self, slab: usize) -> &SparseOperator {
        &self.stiffness[&slab]
    }

    /// Slabs of the fine steps within coarse interval `j` (1-based).
    pub fn interval_slabs(&self, j: usize) -> Vec<usize> {
        let nt = self.grid.fine_per_coarse;
        self.slab_of_step[(j - 1) * nt..j * nt].to_vec()
    }

    /// Whether every coarse interval sees the same coefficient slab
    /// sequence, so corrector chains are time-shift invariant.
    pub fn is_time_shift_invariant(&self) -> bool {
        match self.coeff.period_in_steps(&self.grid) {
            Some(p) => self.grid.fine_per_coarse.is_multiple_of(p),
            None => false,
        }
    }

    /// Fine nodal values of the coarse hat function of the coarse node with
    /// interior index `coarse_dof`.
    pub fn prolonged_hat(&self, coarse_dof: usize) -> Vec<f64> {
        let mut e = vec![0.0; self.n_coarse()];
        e[coarse_dof] = 1.0;
        self.interp.prolongation.mul_vec(&e)
    }
}
