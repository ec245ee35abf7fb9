//! Coarse multiscale system, its sequential time stepping, fine-scale
//! reconstruction and the fine Crank–Nicolson reference solver.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::assembly::load_vector;
use crate::corrector::{BasisKey, CorrectorOperator};
use crate::discretization::Discretization;
use crate::error::{invalid, Error, Result};
use crate::forcing::Forcing;
use crate::linalg::{DenseLu, SparseOperator, SpdFactor};
use crate::spacetime::SpaceTimeFunction;

/// Coarse nodal values `u^1 .. u^{N_T}` at the coarse time nodes.
pub type CoarseValues = Vec<Vec<f64>>;

/// Blocks `G_j^{(m)}` coupling trial pyramid `j - m` to test interval `j`.
pub struct CoarseSystem {
    n_coarse: usize,
    n_intervals: usize,
    ell: usize,
    periodic: bool,
    /// `blocks[j-1][m]`, or `blocks[0][m]` for every `j` when periodic.
    blocks: Vec<Vec<DMatrix<f64>>>,
    factors: Vec<DenseLu>,
}

impl CoarseSystem {
    pub fn n_coarse(&self) -> usize {
        self.n_coarse
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    /// Largest history offset `m` with a stored block.
    pub fn max_offset(&self) -> usize {
        self.blocks[0].len() - 1
    }

    /// `G_j^{(m)}`, or `None` when it vanishes structurally.
    pub fn block(&self, j: usize, m: usize) -> Option<&DMatrix<f64>> {
        if m >= j || j > self.n_intervals {
            return None;
        }
        let row = if self.periodic { &self.blocks[0] } else { &self.blocks[j - 1] };
        row.get(m)
    }

    /// Dimensions of the factorized step matrices.
    pub fn factor_dims(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.dim()).collect()
    }

    fn factor(&self, j: usize) -> &DenseLu {
        if self.periodic {
            &self.factors[0]
        } else {
            &self.factors[j - 1]
        }
    }
}

/// Fine rows reached by correctors of one patch, with the matrices mapping
/// patch values to residuals on those rows.
struct ResidualRows {
    mass: SparseOperator,
    stiffness: BTreeMap<usize, SparseOperator>,
    /// Prolongation rows of the extended DOFs, transposed (coarse × ext).
    restrict: SparseOperator,
}

fn residual_rows(disc: &Discretization, op: &CorrectorOperator, element: usize, slabs: &[usize]) -> ResidualRows {
    let patch = op.patch(element);
    let fine = &disc.pair.fine;
    let mut ext: Vec<usize> = patch
        .coarse_elements
        .iter()
        .flat_map(|&k| disc.pair.element_children(k).iter().flat_map(|&c| fine.elements()[c]))
        .filter_map(|v| fine.interior_index(v))
        .collect();
    ext.sort_unstable();
    ext.dedup();
    let all_coarse: Vec<usize> = (0..disc.n_coarse()).collect();
    ResidualRows {
        mass: disc.fine_mass.submatrix(&ext, &patch.fine_dofs),
        stiffness: slabs.iter().map(|&s| (s, disc.stiffness_for_slab(s).submatrix(&ext, &patch.fine_dofs))).collect(),
        restrict: disc.interp.prolongation.submatrix(&ext, &all_coarse).transpose(),
    }
}

type Contribution = BTreeMap<(usize, usize), Vec<(usize, usize, f64)>>;

/// Space-time residuals of the correctors of one coarse element tested
/// against coarse tents, keyed by `(j, m)`.
fn element_contributions(
    disc: &Discretization,
    op: &CorrectorOperator,
    element: usize,
    keys: &[BasisKey],
    slabs: &[usize],
) -> Contribution {
    let rows = residual_rows(disc, op, element, slabs);
    let nt = disc.grid.fine_per_coarse;
    let tau = disc.grid.fine_step;
    let n_local = op.patch(element).fine_dofs.len();
    let mut out: Contribution = BTreeMap::new();
    let mut prev = vec![0.0; n_local];
    let mut cur = vec![0.0; n_local];
    for key in keys {
        let block = &op.blocks()[key];
        for q in 0..block.span() {
            let j = key.interval + q;
            if j > disc.grid.coarse_steps {
                break;
            }
            let mut residual = vec![0.0; rows.mass.nrows()];
            block.value_into(q, 0, &mut prev);
            for m in 1..=nt {
                block.value_into(q, m, &mut cur);
                let g = disc.grid.global_fine_index(j, m);
                let diff: Vec<f64> = cur.iter().zip(&prev).map(|(a, b)| a - b).collect();
                let sum: Vec<f64> = cur.iter().zip(&prev).map(|(a, b)| a + b).collect();
                rows.mass.mul_add_into(1.0, &diff, &mut residual);
                rows.stiffness[&disc.slab(g)].mul_add_into(0.5 * tau, &sum, &mut residual);
                std::mem::swap(&mut prev, &mut cur);
            }
            let coarse = rows.restrict.mul_vec(&residual);
            let entry = out.entry((j, j - key.pyramid)).or_default();
            for (y, &v) in coarse.iter().enumerate() {
                if v != 0.0 {
                    entry.push((y, key.vertex, v));
                }
            }
        }
    }
    out
}

/// Coarse FEM blocks `𝔄(φ_x ζ_p, φ_y χ_j)` for `j = p` (rising) and
/// `j = p + 1` (falling), on interval `j`.
fn coarse_fem_block(disc: &Discretization, j: usize, rising: bool) -> DMatrix<f64> {
    let p = &disc.interp.prolongation;
    let pt = p.transpose();
    let nt = disc.grid.fine_per_coarse as f64;
    let tau = disc.grid.fine_step;
    let sign = if rising { 1.0 } else { -1.0 };
    let mut out = pt.matmul(&disc.fine_mass).matmul(p).to_dense() * sign;
    let mut weights: BTreeMap<usize, f64> = BTreeMap::new();
    for m in 1..=disc.grid.fine_per_coarse {
        let theta = |m: usize| if rising { m as f64 / nt } else { 1.0 - m as f64 / nt };
        *weights.entry(disc.slab(disc.grid.global_fine_index(j, m))).or_default() +=
            0.5 * tau * (theta(m) + theta(m - 1));
    }
    for (slab, w) in weights {
        out += pt.matmul(disc.stiffness_for_slab(slab)).matmul(p).to_dense() * w;
    }
    out
}

/// Assembles `𝔄((Id + Q_{k,ℓ}) φ_x ζ_{j-m}, φ_y χ_j)` for all `j` and
/// `m = 0 ..= ℓ + 1`. With time-shift-shared correctors a single set of
/// blocks serves every `j`.
pub fn assemble_coarse_system(op: &CorrectorOperator, disc: &Discretization, workers: usize) -> Result<CoarseSystem> {
    if op.fingerprint != disc.fingerprint() {
        return invalid("corrector operator was built for a different discretization");
    }
    let n_t = disc.grid.coarse_steps;
    let nc = disc.n_coarse();
    let periodic = op.periodic_reuse;
    let max_m = (op.ell + 1).min(n_t - 1);
    let n_rows = if periodic { 1 } else { n_t };
    let mut blocks = vec![vec![DMatrix::<f64>::zeros(nc, nc); max_m + 1]; n_rows];

    // test interval of the stored row for offset m
    let test_interval = |row: usize, m: usize| if periodic { 1 + m } else { row + 1 };
    for (row, ms) in blocks.iter_mut().enumerate() {
        for (m, b) in ms.iter_mut().enumerate() {
            let j = test_interval(row, m);
            if j > n_t || m >= j {
                continue;
            }
            if m == 0 {
                *b += coarse_fem_block(disc, j, true);
            } else if m == 1 {
                *b += coarse_fem_block(disc, j, false);
            }
        }
    }

    let mut slabs: Vec<usize> = (1..=disc.grid.fine_steps()).map(|g| disc.slab(g)).collect();
    slabs.sort_unstable();
    slabs.dedup();
    let mut by_element: BTreeMap<usize, Vec<BasisKey>> = BTreeMap::new();
    for key in op.blocks().keys() {
        if !periodic || key.pyramid == 1 {
            by_element.entry(key.element).or_default().push(*key);
        }
    }
    let groups: Vec<(usize, Vec<BasisKey>)> = by_element.into_iter().collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    for chunk in groups.chunks(64) {
        let parts: Vec<Contribution> = pool
            .install(|| chunk.par_iter().map(|(k, keys)| element_contributions(disc, op, *k, keys, &slabs)).collect());
        for part in parts {
            for ((j, m), entries) in part {
                if m > max_m {
                    continue;
                }
                let row = if periodic { 0 } else { j - 1 };
                let b = &mut blocks[row][m];
                for (y, x, v) in entries {
                    b[(y, x)] += v;
                }
            }
        }
    }

    let factors = (0..n_rows)
        .map(|row| DenseLu::new(blocks[row][0].clone(), &format!("coarse step matrix {}", row + 1)))
        .collect::<Result<Vec<_>>>()?;
    Ok(CoarseSystem { n_coarse: nc, n_intervals: n_t, ell: op.ell, periodic, blocks, factors })
}

/// `F_j[y] = ∫_{T_{j-1}}^{T_j} ⟨f, φ_y⟩`, midpoint rule on each fine interval.
pub fn coarse_load(disc: &Discretization, f: &dyn Forcing) -> CoarseValues {
    let p = &disc.interp.prolongation;
    (1..=disc.grid.coarse_steps)
        .map(|j| {
            let mut acc = vec![0.0; disc.n_fine()];
            for m in 1..=disc.grid.fine_per_coarse {
                let g = disc.grid.global_fine_index(j, m);
                for (a, v) in acc.iter_mut().zip(load_vector(f, &disc.pair.fine, &disc.grid, g)) {
                    *a += v;
                }
            }
            p.transpose_mul_vec(&acc)
        })
        .collect()
}

/// Sequential coarse time stepping for precomputed loads `F_j`.
pub fn solve_with_loads(system: &CoarseSystem, loads: &[Vec<f64>]) -> Result<CoarseValues> {
    if loads.len() != system.n_intervals || loads.iter().any(|l| l.len() != system.n_coarse) {
        return invalid("coarse loads do not match the coarse system");
    }
    let mut u: CoarseValues = Vec::with_capacity(system.n_intervals);
    for j in 1..=system.n_intervals {
        let mut rhs = DVector::from_column_slice(&loads[j - 1]);
        for m in 1..=system.max_offset().min(j - 1) {
            if let Some(b) = system.block(j, m) {
                rhs -= b * DVector::from_column_slice(&u[j - m - 1]);
            }
        }
        let x = system.factor(j).solve(rhs.as_slice());
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure(format!("coarse step {j} produced non-finite values")));
        }
        u.push(x);
    }
    Ok(u)
}

/// Coarse solution of the localized multiscale method for `f`.
pub fn solve_multiscale(system: &CoarseSystem, disc: &Discretization, f: &dyn Forcing) -> Result<CoarseValues> {
    solve_with_loads(system, &coarse_load(disc, f))
}

/// Coarse solutions for several right-hand sides sharing one system.
pub fn solve_multi_rhs(
    system: &CoarseSystem,
    disc: &Discretization,
    rhs: &[&dyn Forcing],
    workers: usize,
) -> Result<Vec<CoarseValues>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    pool.install(|| rhs.par_iter().map(|f| solve_multiscale(system, disc, *f)).collect())
}

/// Fine representation of the coarse function, linear in time between the
/// coarse nodes and zero at `t = 0`.
pub fn prolongate_coarse(disc: &Discretization, coarse: &[Vec<f64>]) -> Result<SpaceTimeFunction> {
    if coarse.len() != disc.grid.coarse_steps || coarse.iter().any(|c| c.len() != disc.n_coarse()) {
        return invalid("coarse values do not match the discretization");
    }
    let nt = disc.grid.fine_per_coarse;
    let mut out = SpaceTimeFunction::zeros(disc.grid.fine_steps(), disc.n_fine());
    let mut prev = vec![0.0; disc.n_fine()];
    for j in 1..=disc.grid.coarse_steps {
        let cur = disc.interp.prolongation.mul_vec(&coarse[j - 1]);
        for m in 1..=nt {
            let w = m as f64 / nt as f64;
            let slice = out.at_mut(disc.grid.global_fine_index(j, m));
            for ((s, a), b) in slice.iter_mut().zip(&prev).zip(&cur) {
                *s = (1.0 - w) * a + w * b;
            }
        }
        prev = cur;
    }
    Ok(out)
}

/// `(Id + Q_{k,ℓ}) u_H`.
pub fn reconstruct_fine(
    disc: &Discretization,
    op: &CorrectorOperator,
    coarse: &[Vec<f64>],
) -> Result<SpaceTimeFunction> {
    let mut out = prolongate_coarse(disc, coarse)?;
    out.add_scaled(1.0, &op.apply(disc, coarse)?);
    Ok(out)
}

/// Crank–Nicolson sweep with the fine-interval right-hand sides `rhs(g)`.
pub fn crank_nicolson(disc: &Discretization, rhs: impl Fn(usize) -> Vec<f64>) -> Result<SpaceTimeFunction> {
    let tau = disc.grid.fine_step;
    let mut factors: BTreeMap<usize, (SpdFactor, SparseOperator)> = BTreeMap::new();
    let mut out = SpaceTimeFunction::zeros(disc.grid.fine_steps(), disc.n_fine());
    for g in 1..=disc.grid.fine_steps() {
        let slab = disc.slab(g);
        if let std::collections::btree_map::Entry::Vacant(e) = factors.entry(slab) {
            let s = disc.stiffness_for_slab(slab);
            let implicit = SpdFactor::new(&disc.fine_mass.add_scaled(s, 0.5 * tau))?;
            e.insert((implicit, disc.fine_mass.add_scaled(s, -0.5 * tau)));
        }
        let (implicit, explicit) = &factors[&slab];
        let mut b = rhs(g);
        explicit.mul_add_into(1.0, out.at(g - 1), &mut b);
        implicit.solve_in_place(&mut b);
        out.at_mut(g).copy_from_slice(&b);
    }
    Ok(out)
}

/// Fine Crank–Nicolson reference solution.
pub fn solve_reference_fine(disc: &Discretization, f: &dyn Forcing) -> Result<SpaceTimeFunction> {
    crank_nicolson(disc, |g| load_vector(f, &disc.pair.fine, &disc.grid, g))
}

/// Solution of the ideal (non-localized) multiscale method, obtained as the
/// fine Petrov–Galerkin solution tested against `f` mapped through the
/// coarse quasi-interpolation and the coarse temporal mean.
pub fn solve_ideal_method(disc: &Discretization, f: &dyn Forcing) -> Result<SpaceTimeFunction> {
    let loads = coarse_load(disc, f);
    let scale = disc.grid.fine_step / disc.grid.coarse_step;
    let lifted: Vec<Vec<f64>> = loads.iter().map(|l| disc.interp.matrix.transpose_mul_vec(l)).collect();
    let nt = disc.grid.fine_per_coarse;
    crank_nicolson(disc, |g| lifted[(g - 1) / nt].iter().map(|v| scale * v).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficient::generate_random;
    use crate::corrector::{assemble_corrector_operator, CorrectorOptions};
    use crate::forcing::ConstantForcing;
    use crate::grid::{build_mesh_pair, build_temporal_grid};

    fn desk(periodic: bool) -> Discretization {
        let pair = build_mesh_pair(2, 3).unwrap();
        let grid = build_temporal_grid(1.0, 4, 2).unwrap();
        let coeff = generate_random(4, 0.25, 0.125, 0.1, 1.0, periodic, 0.25, 1.0).unwrap();
        Discretization::new(pair, grid, coeff).unwrap()
    }

    #[test]
    fn zero_forcing_gives_zero() {
        let disc = desk(false);
        let op =
            assemble_corrector_operator(&disc, &CorrectorOptions { k: 1, ell: 1, workers: 1, reuse_periodic: false })
                .unwrap();
        let sys = assemble_coarse_system(&op, &disc, 1).unwrap();
        let u = solve_multiscale(&sys, &disc, &ConstantForcing(0.0)).unwrap();
        assert!(u.iter().flatten().all(|&v| v == 0.0));
        assert!(solve_reference_fine(&disc, &ConstantForcing(0.0)).unwrap().max_abs() == 0.0);
    }

    #[test]
    fn bandwidth_is_ell_plus_one() {
        let disc = desk(false);
        let op =
            assemble_corrector_operator(&disc, &CorrectorOptions { k: 1, ell: 1, workers: 1, reuse_periodic: false })
                .unwrap();
        let sys = assemble_coarse_system(&op, &disc, 1).unwrap();
        assert_eq!(sys.max_offset(), 2);
        assert!(sys.block(4, 2).unwrap().abs().max() > 0.0);
        assert!(sys.block(4, 3).is_none());
    }

    #[test]
    fn single_interior_node_recurrence() {
        let pair = build_mesh_pair(1, 2).unwrap();
        let grid = build_temporal_grid(1.0, 1, 1).unwrap();
        let disc = Discretization::new(pair, grid, crate::coefficient::Coefficient::constant(1.0).unwrap()).unwrap();
        let u = solve_reference_fine(&disc, &ConstantForcing(1.0)).unwrap();
        // fine mesh has 9 interior nodes; compare with a dense solve
        let a = disc.fine_mass.add_scaled(disc.stiffness(1), 0.5).to_dense();
        let b = DVector::from_vec(load_vector(&ConstantForcing(1.0), &disc.pair.fine, &disc.grid, 1));
        let x = a.lu().solve(&b).unwrap();
        assert!((DVector::from_column_slice(u.at(1)) - x).abs().max() < 1e-14);
    }
}
