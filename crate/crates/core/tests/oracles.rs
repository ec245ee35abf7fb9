mod common;

use common::{dense_load, dense_matrices, desk, direct_spacetime_solve, kkt_oracle_deviation, max_relative};
use nalgebra::{DMatrix, DVector};
use stlod_core::analysis::NormContext;
use stlod_core::corrector::{assemble_corrector_operator, CorrectorOptions};
use stlod_core::forcing::{ConstantForcing, FnForcing};
use stlod_core::solver::{
    assemble_coarse_system, reconstruct_fine, solve_ideal_method, solve_multiscale, solve_reference_fine,
};

fn forcing(t: f64, x: [f64; 2]) -> f64 {
    1.0 + x[0] - 2.0 * x[1] + 3.0 * t
}

#[test]
fn crank_nicolson_matches_direct_spacetime_assembly() {
    let disc = desk(11);
    let direct = direct_spacetime_solve(&disc, forcing);
    let cn = solve_reference_fine(&disc, &FnForcing(forcing)).unwrap();
    assert!(max_relative(&direct, &cn) < 1e-10);
    assert!(direct.max_abs() > 1e-3);
}

#[test]
fn correctors_match_dense_saddle_point_systems() {
    let disc = desk(12);
    for (k, ell) in [(1, 2), (1, 1)] {
        let opts = CorrectorOptions { k, ell, workers: 2, reuse_periodic: false };
        let op = assemble_corrector_operator(&disc, &opts).unwrap();
        assert!(kkt_oracle_deviation(&disc, &op) < 1e-10);
        assert!(op.stats.max_constraint_residual < 1e-9);
    }
}

#[test]
fn saturated_localization_reproduces_ideal_method() {
    let disc = desk(13);
    let opts = CorrectorOptions { k: 8, ell: 3, workers: 4, reuse_periodic: false };
    let op = assemble_corrector_operator(&disc, &opts).unwrap();
    let system = assemble_coarse_system(&op, &disc, 4).unwrap();
    let f = ConstantForcing(1.0);
    let coarse = solve_multiscale(&system, &disc, &f).unwrap();
    let ms = reconstruct_fine(&disc, &op, &coarse).unwrap();
    let ideal = solve_ideal_method(&disc, &f).unwrap();
    let ctx = NormContext::new(&disc).unwrap();
    let err = ctx.trial_norm(&ms.difference(&ideal)) / ctx.trial_norm(&ideal);
    assert!(err < 1e-8, "relative error {err}");
}

/// Coarse Petrov–Galerkin solution in `P1(coarse) ⊗ P1(𝒯)` tested against
/// coarse hats times interval indicators, by dense quadrature.
fn coarse_petrov_galerkin(disc: &stlod_core::discretization::Discretization) -> Vec<DVector<f64>> {
    let fine = &disc.pair.fine;
    let all: Vec<usize> = (0..fine.element_count()).collect();
    let p = disc.interp.prolongation.to_dense();
    let mass = p.transpose() * dense_matrices(fine, &all, |_| 0.0).0 * &p;
    let tau = disc.grid.fine_step;
    let big = disc.grid.coarse_step;
    let nc = disc.n_coarse();
    let mut prev = DVector::zeros(nc);
    let mut out = Vec::new();
    for j in 1..=disc.grid.coarse_steps {
        let mut lhs = mass.clone();
        let mut old = -mass.clone();
        let mut load = DVector::zeros(disc.n_fine());
        for m in 1..=disc.grid.fine_per_coarse {
            let g = disc.grid.global_fine_index(j, m);
            for s in [0.5 - 0.5 / 3f64.sqrt(), 0.5 + 0.5 / 3f64.sqrt()] {
                let t = disc.grid.fine_time(g - 1) + s * tau;
                let theta = (t - disc.grid.coarse_time(j - 1)) / big;
                let sk = dense_matrices(fine, &all, |e| disc.coeff.value_on(fine.centroid(e), t).unwrap()).1;
                let coarse: DMatrix<f64> = p.transpose() * sk * &p;
                lhs += &coarse * (0.5 * tau * theta);
                old += &coarse * (0.5 * tau * (1.0 - theta));
                load += dense_load(fine, t, &|_, _| 1.0) * (0.5 * tau);
            }
        }
        let rhs = p.transpose() * load - old * &prev;
        let u = lhs.lu().solve(&rhs).unwrap();
        out.push(u.clone());
        prev = u;
    }
    out
}

#[test]
fn zero_corrector_gives_plain_coarse_petrov_galerkin() {
    let disc = desk(14);
    let opts = CorrectorOptions { k: 1, ell: 2, workers: 1, reuse_periodic: false };
    let op = assemble_corrector_operator(&disc, &opts).unwrap().zeroed();
    let system = assemble_coarse_system(&op, &disc, 1).unwrap();
    let coarse = solve_multiscale(&system, &disc, &ConstantForcing(1.0)).unwrap();
    let oracle = coarse_petrov_galerkin(&disc);
    for (a, b) in coarse.iter().zip(&oracle) {
        let diff = (DVector::from_column_slice(a) - b).amax();
        assert!(diff < 1e-10 * b.amax(), "difference {diff}");
    }
}
