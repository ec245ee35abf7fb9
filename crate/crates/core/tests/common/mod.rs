//! Independent dense oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use stlod_core::coefficient::generate_random;
use stlod_core::corrector::CorrectorOperator;
use stlod_core::discretization::Discretization;
use stlod_core::grid::{build_mesh_pair, build_temporal_grid, SpatialMesh};
use stlod_core::spacetime::SpaceTimeFunction;

const GAUSS2: [f64; 2] = [0.211_324_865_405_187_1, 0.788_675_134_594_812_9];

/// n_H = 2, n_h = 4, N_T = 3, N_t = 4 with a random space-time coefficient.
pub fn desk(seed: u64) -> Discretization {
    let pair = build_mesh_pair(2, 4).unwrap();
    let grid = build_temporal_grid(0.75, 3, 4).unwrap();
    let coeff = generate_random(seed, 0.25, 0.125, 0.1, 1.0, false, 0.0, 0.75).unwrap();
    Discretization::new(pair, grid, coeff).unwrap()
}

/// Same meshes with a coefficient of period `𝒯`.
pub fn desk_periodic(seed: u64) -> Discretization {
    let pair = build_mesh_pair(2, 4).unwrap();
    let grid = build_temporal_grid(0.75, 3, 4).unwrap();
    let coeff = generate_random(seed, 0.25, 0.125, 0.1, 1.0, true, 0.25, 0.75).unwrap();
    Discretization::new(pair, grid, coeff).unwrap()
}

fn gradients(p: &[[f64; 2]; 3]) -> ([[f64; 2]; 3], f64) {
    let area2 = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    let mut g = [[0.0; 2]; 3];
    for a in 0..3 {
        let (b, c) = ((a + 1) % 3, (a + 2) % 3);
        g[a] = [(p[b][1] - p[c][1]) / area2, (p[c][0] - p[b][0]) / area2];
    }
    (g, area2.abs() / 2.0)
}

/// Dense mass and stiffness on the interior DOFs of `mesh`, integrated over
/// `elements`, with the coefficient evaluated by `coef(element)`.
pub fn dense_matrices(
    mesh: &SpatialMesh,
    elements: &[usize],
    coef: impl Fn(usize) -> f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = mesh.interior_count();
    let mut m = DMatrix::zeros(n, n);
    let mut s = DMatrix::zeros(n, n);
    for &e in elements {
        let p = mesh.vertices(e);
        let (g, area) = gradients(&p);
        let c = coef(e);
        let tri = mesh.elements()[e];
        // edge midpoints integrate P1 × P1 exactly
        let mids = [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]];
        for a in 0..3 {
            let Some(r) = mesh.interior_index(tri[a]) else { continue };
            for b in 0..3 {
                let Some(col) = mesh.interior_index(tri[b]) else { continue };
                let mass: f64 = mids.iter().map(|l| l[a] * l[b]).sum::<f64>() * area / 3.0;
                m[(r, col)] += mass;
                s[(r, col)] += c * area * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
            }
        }
    }
    (m, s)
}

/// `∫_Ω f(t, ·) ψ_x` with a degree-2 exact interior rule.
pub fn dense_load(mesh: &SpatialMesh, t: f64, f: &impl Fn(f64, [f64; 2]) -> f64) -> DVector<f64> {
    let mut out = DVector::zeros(mesh.interior_count());
    let pts = [[2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0], [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0]];
    for e in 0..mesh.element_count() {
        let p = mesh.vertices(e);
        let (_, area) = gradients(&p);
        let tri = mesh.elements()[e];
        for l in &pts {
            let x = [0, 1].map(|d| l[0] * p[0][d] + l[1] * p[1][d] + l[2] * p[2][d]);
            let fx = f(t, x);
            for a in 0..3 {
                if let Some(r) = mesh.interior_index(tri[a]) {
                    out[r] += area / 3.0 * fx * l[a];
                }
            }
        }
    }
    out
}

fn coefficient_at(disc: &Discretization, t: f64) -> impl Fn(usize) -> f64 + '_ {
    move |e| disc.coeff.value_on(disc.pair.fine.centroid(e), t).unwrap()
}

/// Fine stiffness on fine interval `g`, with the coefficient looked up at
/// a Gauss point of the interval.
pub fn dense_stiffness(disc: &Discretization, g: usize, elements: &[usize]) -> DMatrix<f64> {
    let t = disc.grid.fine_time(g - 1) + GAUSS2[0] * disc.grid.fine_step;
    dense_matrices(&disc.pair.fine, elements, coefficient_at(disc, t)).1
}

/// Space-time Petrov–Galerkin solution with `P1` trial and piecewise
/// constant test functions in time, assembled by quadrature in time and
/// solved one fine interval at a time.
pub fn direct_spacetime_solve(disc: &Discretization, f: impl Fn(f64, [f64; 2]) -> f64) -> SpaceTimeFunction {
    let fine = &disc.pair.fine;
    let all: Vec<usize> = (0..fine.element_count()).collect();
    let tau = disc.grid.fine_step;
    let n = disc.n_fine();
    let mass = dense_matrices(fine, &all, |_| 0.0).0;
    let mut out = SpaceTimeFunction::zeros(disc.grid.fine_steps(), n);
    for g in 1..=disc.grid.fine_steps() {
        let t0 = disc.grid.fine_time(g - 1);
        let mut lhs = mass.clone();
        let mut rhs_old = -mass.clone();
        let mut load = DVector::zeros(n);
        for &s in &GAUSS2 {
            let t = t0 + s * tau;
            let stiff = dense_matrices(fine, &all, coefficient_at(disc, t)).1;
            lhs += &stiff * (0.5 * tau * s);
            rhs_old += &stiff * (0.5 * tau * (1.0 - s));
            load += dense_load(fine, t, &f) * (0.5 * tau);
        }
        let prev = DVector::from_column_slice(out.at(g - 1));
        let rhs = load - rhs_old * prev;
        let u = lhs.lu().solve(&rhs).expect("nonsingular step matrix");
        out.at_mut(g).copy_from_slice(u.as_slice());
    }
    out
}

/// Largest relative deviation of any computed corrector interval from the
/// solution of the dense saddle-point system on its patch.
///
/// The unknowns are the full corrector values `w^1..w^{N_t}` on the
/// interval; `w^0` is the value the block carries in. The multiplier is
/// coupled through `I_{H,k}ᵀ` alone, which leaves `w` unchanged.
pub fn kkt_oracle_deviation(disc: &Discretization, op: &CorrectorOperator) -> f64 {
    let fine = &disc.pair.fine;
    let nt = disc.grid.fine_per_coarse;
    let tau = disc.grid.fine_step;
    let mut worst: f64 = 0.0;
    let mut factors: BTreeMap<(usize, usize), nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>> = BTreeMap::new();
    let all: Vec<usize> = (0..fine.element_count()).collect();
    let mass = dense_matrices(fine, &all, |_| 0.0).0;
    let stiff: Vec<DMatrix<f64>> = (1..=disc.grid.fine_steps()).map(|g| dense_stiffness(disc, g, &all)).collect();
    for (key, block) in op.blocks() {
        let patch = op.patch(key.element);
        let dofs = &patch.fine_dofs;
        let (nf, nc) = (dofs.len(), patch.coarse_dofs.len());
        let sub = |a: &DMatrix<f64>| DMatrix::from_fn(nf, nf, |r, c| a[(dofs[r], dofs[c])]);
        let interp = disc.interp.localized(patch).to_dense();
        let children = disc.pair.element_children(key.element);
        let (mk, _) = dense_matrices(fine, children, |_| 0.0);
        let hat = DVector::from_vec(disc.prolonged_hat(key.vertex));
        let mut w = vec![0.0; nf];
        for q in 0..block.intervals {
            let j = key.interval + q;
            let lu = factors.entry((key.element, j)).or_insert_with(|| {
                let size = nt * nf + nc;
                let mut a = DMatrix::zeros(size, size);
                for m in 1..=nt {
                    let g = disc.grid.global_fine_index(j, m);
                    let (mp, sp) = (sub(&mass), sub(&stiff[g - 1]));
                    let r0 = (m - 1) * nf;
                    a.view_mut((r0, r0), (nf, nf)).copy_from(&(&mp + &sp * (0.5 * tau)));
                    if m > 1 {
                        a.view_mut((r0, r0 - nf), (nf, nf)).copy_from(&(-(&mp - &sp * (0.5 * tau))));
                    }
                    a.view_mut((r0, nt * nf), (nf, nc)).copy_from(&interp.transpose());
                }
                a.view_mut((nt * nf, (nt - 1) * nf), (nc, nf)).copy_from(&interp);
                a.lu()
            });
            let mut rhs = DVector::zeros(nt * nf + nc);
            block.value_into(q, 0, &mut w);
            let w0 = DVector::from_column_slice(&w);
            let g1 = disc.grid.global_fine_index(j, 1);
            let first = (sub(&mass) - sub(&stiff[g1 - 1]) * (0.5 * tau)) * &w0;
            rhs.rows_mut(0, nf).copy_from(&first);
            if q == 0 {
                let theta = |m: usize| {
                    let s = m as f64 / nt as f64;
                    if key.is_rising() {
                        s
                    } else {
                        1.0 - s
                    }
                };
                for m in 1..=nt {
                    let g = disc.grid.global_fine_index(j, m);
                    let sk = dense_stiffness(disc, g, children);
                    let drive =
                        &mk * &hat * (theta(m) - theta(m - 1)) + &sk * &hat * (0.5 * tau * (theta(m) + theta(m - 1)));
                    for (r, &d) in dofs.iter().enumerate() {
                        rhs[(m - 1) * nf + r] -= drive[d];
                    }
                }
            }
            let sol = lu.solve(&rhs).expect("nonsingular saddle-point system");
            let scale = sol.rows(0, nt * nf).amax().max(1e-300);
            for m in 1..=nt {
                block.value_into(q, m, &mut w);
                for r in 0..nf {
                    worst = worst.max((w[r] - sol[(m - 1) * nf + r]).abs() / scale);
                }
            }
        }
    }
    worst
}

pub fn max_relative(a: &SpaceTimeFunction, b: &SpaceTimeFunction) -> f64 {
    let diff = a.difference(b).max_abs();
    diff / a.max_abs().max(b.max_abs()).max(1e-300)
}
