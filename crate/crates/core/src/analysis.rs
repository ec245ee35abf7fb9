//! Discrete norms and the a posteriori localization estimators.

use nalgebra::DMatrix;

use crate::assembly::{assemble_on, laplacian_matrix, mass_matrix, DofSet, Form};
use crate::corrector::{basis_keys, CorrectorOperator};
use crate::discretization::Discretization;
use crate::error::{invalid, Error, Result};
use crate::grid::{patch_elements, TemporalGrid};
use crate::linalg::{dot, max_generalized_eigenvalue, SparseOperator, SpdFactor};
use crate::spacetime::SpaceTimeFunction;

/// Matrices behind the discrete norms on the fine interior DOFs.
pub struct NormContext {
    pub mass: SparseOperator,
    pub laplacian: SparseOperator,
    factor: SpdFactor,
    pub grid: TemporalGrid,
}

impl NormContext {
    pub fn new(disc: &Discretization) -> Result<Self> {
        let mass = mass_matrix(&disc.pair.fine, DofSet::Interior);
        let laplacian = laplacian_matrix(&disc.pair.fine, DofSet::Interior);
        let factor = SpdFactor::new(&laplacian)?;
        Ok(Self { mass, laplacian, factor, grid: disc.grid })
    }

    /// `√(rᵀ K⁻¹ r)` for a load vector `r`.
    pub fn dual_norm_of_load(&self, r: &[f64]) -> f64 {
        dot(r, &self.factor.solve(r)).max(0.0).sqrt()
    }

    /// Discrete `H⁻¹` norm of the fine function `g`.
    pub fn hminus1_norm(&self, g: &[f64]) -> f64 {
        self.dual_norm_of_load(&self.mass.mul_vec(g))
    }

    pub fn gradient_norm(&self, w: &[f64]) -> f64 {
        dot(w, &self.laplacian.mul_vec(w)).max(0.0).sqrt()
    }

    /// Trial norm: `H⁻¹` norm of the time derivative plus `L²` norm of the
    /// gradient of the interval means.
    pub fn trial_norm(&self, u: &SpaceTimeFunction) -> f64 {
        let tau = self.grid.fine_step;
        let mut total = 0.0;
        for g in 1..=u.n_steps() {
            let (a, b) = (u.at(g - 1), u.at(g));
            let diff: Vec<f64> = b.iter().zip(a).map(|(x, y)| (x - y) / tau).collect();
            let mean: Vec<f64> = b.iter().zip(a).map(|(x, y)| 0.5 * (x + y)).collect();
            total += tau * self.hminus1_norm(&diff).powi(2) + tau * self.gradient_norm(&mean).powi(2);
        }
        total.sqrt()
    }

    /// Test norm of a function that is constant in time on each fine
    /// interval; `v[g-1]` is the value on interval `g`.
    pub fn test_norm(&self, v: &[Vec<f64>]) -> f64 {
        let tau = self.grid.fine_step;
        v.iter().map(|w| tau * self.gradient_norm(w).powi(2)).sum::<f64>().sqrt()
    }

    /// `(∫ ‖∇u‖² dt)^{1/2}` for a function linear in time on fine intervals.
    pub fn l2h1_norm(&self, u: &SpaceTimeFunction) -> f64 {
        let tau = self.grid.fine_step;
        let mut total = 0.0;
        let mut ka = self.laplacian.mul_vec(u.at(0));
        for g in 1..=u.n_steps() {
            let a = u.at(g - 1);
            let b = u.at(g);
            let kb = self.laplacian.mul_vec(b);
            total += tau / 3.0 * (dot(a, &ka) + dot(a, &kb) + dot(b, &kb));
            ka = kb;
        }
        total.max(0.0).sqrt()
    }
}

/// Gram matrices of the quadratic forms behind the estimators of `(K, i)`
/// over its local shape functions.
pub struct EstimatorGrams {
    /// Trial norm of the correctors cut to the ring `N^k(K) \ N^{k-3}(K)`.
    pub ring: DMatrix<f64>,
    /// Squared gradient norm of the correctors at `T_{i+ℓ-1}`, scaled by
    /// `(𝒯^{-1/2} H + 𝒯^{1/2})²`; zero when the chain reaches `T_{N_T}`.
    pub tail: DMatrix<f64>,
    /// Trial norm of the shape functions cut to `K × [T_{i-1}, T_i]`.
    pub local: DMatrix<f64>,
}

fn quadratic_trial_form(
    ctx: &NormContext,
    mass: &SparseOperator,
    stiffness: &SparseOperator,
    values: &[Vec<Vec<f64>>],
) -> DMatrix<f64> {
    // values[s][g] for g = 0..=n (time nodes of the window)
    let n_shapes = values.len();
    let tau = ctx.grid.fine_step;
    let mut out = DMatrix::zeros(n_shapes, n_shapes);
    if n_shapes == 0 {
        return out;
    }
    let steps = values[0].len() - 1;
    for g in 1..=steps {
        let loads: Vec<Vec<f64>> = values
            .iter()
            .map(|v| {
                let diff: Vec<f64> = v[g].iter().zip(&v[g - 1]).map(|(a, b)| a - b).collect();
                mass.mul_vec(&diff)
            })
            .collect();
        let solved: Vec<Vec<f64>> = loads.iter().map(|r| ctx.factor.solve(r)).collect();
        let sums: Vec<Vec<f64>> =
            values.iter().map(|v| v[g].iter().zip(&v[g - 1]).map(|(a, b)| a + b).collect()).collect();
        let ksums: Vec<Vec<f64>> = sums.iter().map(|s| stiffness.mul_vec(s)).collect();
        for s in 0..n_shapes {
            for t in 0..n_shapes {
                out[(s, t)] += dot(&loads[s], &solved[t]) / tau + 0.25 * tau * dot(&sums[s], &ksums[t]);
            }
        }
    }
    out
}

/// Assembles the estimator Gram matrices of `(element, i)`.
pub fn estimator_grams(
    ctx: &NormContext,
    disc: &Discretization,
    op: &CorrectorOperator,
    element: usize,
    i: usize,
) -> Result<EstimatorGrams> {
    let keys = basis_keys(disc, element, i);
    let blocks = keys
        .iter()
        .map(|k| op.block(k).ok_or_else(|| Error::InvalidArgument(format!("no corrector for {k:?}"))))
        .collect::<Result<Vec<_>>>()?;
    let fine = &disc.pair.fine;
    let grid = &disc.grid;
    let nt = grid.fine_per_coarse;
    let n_fine = disc.n_fine();
    let patch = op.patch(element);

    // ring N^k(K) \ N^{k-3}(K), with N^0(K) = {K}
    let inner = patch_elements(&disc.pair.coarse, element, op.k.saturating_sub(3));
    let ring_fine: Vec<usize> = patch
        .coarse_elements
        .iter()
        .filter(|e| inner.binary_search(e).is_err())
        .flat_map(|&e| disc.pair.element_children(e).iter().copied())
        .collect();
    let ring_mass = assemble_on(fine, &ring_fine, Form::Mass, DofSet::Interior);
    let ring_lap = assemble_on(fine, &ring_fine, Form::Laplacian, DofSet::Interior);

    let span = blocks.iter().map(|b| b.span()).max().unwrap_or(0).min(grid.coarse_steps + 1 - i);
    let mut buf = vec![0.0; patch.fine_dofs.len()];
    let corrector_values: Vec<Vec<Vec<f64>>> = blocks
        .iter()
        .map(|b| {
            let mut series = vec![vec![0.0; n_fine]];
            for q in 0..span {
                for m in 1..=nt {
                    b.value_into(q, m, &mut buf);
                    let mut global = vec![0.0; n_fine];
                    patch.scatter_add(1.0, &buf, &mut global);
                    series.push(global);
                }
            }
            series
        })
        .collect();
    let ring = quadratic_trial_form(ctx, &ring_mass, &ring_lap, &corrector_values);

    let mut tail = DMatrix::zeros(keys.len(), keys.len());
    if blocks.iter().all(|b| b.ramp) {
        let h = disc.pair.coarse.spacing();
        let big_t = grid.coarse_step;
        let scale = (h / big_t.sqrt() + big_t.sqrt()).powi(2);
        let tails: Vec<Vec<f64>> = blocks
            .iter()
            .map(|b| {
                let mut global = vec![0.0; n_fine];
                patch.scatter_add(1.0, b.tail(), &mut global);
                global
            })
            .collect();
        let ktails: Vec<Vec<f64>> = tails.iter().map(|t| ctx.laplacian.mul_vec(t)).collect();
        for s in 0..keys.len() {
            for t in 0..keys.len() {
                tail[(s, t)] = scale * dot(&tails[s], &ktails[t]);
            }
        }
    }

    let children = disc.pair.element_children(element);
    let local_mass = assemble_on(fine, children, Form::Mass, DofSet::Interior);
    let local_lap = assemble_on(fine, children, Form::Laplacian, DofSet::Interior);
    let shape_values: Vec<Vec<Vec<f64>>> = keys
        .iter()
        .map(|k| {
            let hat = disc.prolonged_hat(k.vertex);
            (0..=nt)
                .map(|m| {
                    let theta = if k.is_rising() { m as f64 / nt as f64 } else { 1.0 - m as f64 / nt as f64 };
                    hat.iter().map(|v| theta * v).collect()
                })
                .collect()
        })
        .collect();
    let local = quadratic_trial_form(ctx, &local_mass, &local_lap, &shape_values);
    Ok(EstimatorGrams { ring, tail, local })
}

/// Largest `λ` with `N x = λ² D x`. Directions on which both forms vanish
/// (the local constant on interior elements) are dropped first.
fn ratio(numerator: &DMatrix<f64>, denominator: &DMatrix<f64>, element: usize, i: usize) -> Result<f64> {
    if numerator.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let fail = |msg: String| Error::NumericalFailure(format!("estimator on element {element}, interval {i}: {msg}"));
    let eig = denominator.clone().symmetric_eigen();
    let top = eig.eigenvalues.amax();
    let keep: Vec<usize> = (0..eig.eigenvalues.len()).filter(|&c| eig.eigenvalues[c] > 1e-12 * top).collect();
    let scale = numerator.amax();
    for c in (0..eig.eigenvalues.len()).filter(|c| !keep.contains(c)) {
        let v = eig.eigenvectors.column(c);
        if (numerator * v).amax() > 1e-10 * scale {
            return Err(fail(format!(
                "degenerate denominator Gram matrix (eigenvalue {:.3e} of {top:.3e})",
                eig.eigenvalues[c]
            )));
        }
    }
    let basis = eig.eigenvectors.select_columns(&keep);
    let reduce = |m: &DMatrix<f64>| basis.transpose() * m * &basis;
    max_generalized_eigenvalue(&reduce(numerator), &reduce(denominator))
        .map(|l| l.max(0.0).sqrt())
        .map_err(|e| fail(e.to_string()))
}

/// Spatial localization indicator `δ` on `K × [T_{i-1}, T_i]`.
pub fn delta_estimator(
    ctx: &NormContext,
    disc: &Discretization,
    op: &CorrectorOperator,
    element: usize,
    i: usize,
) -> Result<f64> {
    if op.k < 3 {
        return invalid(format!("the spatial estimator needs k >= 3, got k={}", op.k));
    }
    let g = estimator_grams(ctx, disc, op, element, i)?;
    ratio(&g.ring, &g.local, element, i)
}

/// Temporal localization indicator `ϑ` on `K × [T_{i-1}, T_i]`.
pub fn theta_estimator(
    ctx: &NormContext,
    disc: &Discretization,
    op: &CorrectorOperator,
    element: usize,
    i: usize,
) -> Result<f64> {
    let g = estimator_grams(ctx, disc, op, element, i)?;
    ratio(&g.tail, &g.local, element, i)
}

/// Both indicators from one set of Gram matrices; `δ` is `None` for `k < 3`.
pub fn estimators(
    ctx: &NormContext,
    disc: &Discretization,
    op: &CorrectorOperator,
    element: usize,
    i: usize,
) -> Result<(Option<f64>, f64)> {
    let g = estimator_grams(ctx, disc, op, element, i)?;
    let delta = if op.k >= 3 { Some(ratio(&g.ring, &g.local, element, i)?) } else { None };
    Ok((delta, ratio(&g.tail, &g.local, element, i)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficient::Coefficient;
    use crate::grid::{build_mesh_pair, build_temporal_grid};

    fn ctx() -> (Discretization, NormContext) {
        let pair = build_mesh_pair(1, 3).unwrap();
        let grid = build_temporal_grid(1.0, 2, 2).unwrap();
        let disc = Discretization::new(pair, grid, Coefficient::constant(1.0).unwrap()).unwrap();
        let ctx = NormContext::new(&disc).unwrap();
        (disc, ctx)
    }

    #[test]
    fn hminus1_of_representer() {
        let (disc, ctx) = ctx();
        let n = disc.n_fine();
        let w: Vec<f64> = (0..n).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        // g with M g = K w has dual norm ‖∇w‖
        let r = ctx.laplacian.mul_vec(&w);
        let g = SpdFactor::new(&ctx.mass).unwrap().solve(&r);
        assert!((ctx.hminus1_norm(&g) - ctx.gradient_norm(&w)).abs() < 1e-10 * ctx.gradient_norm(&w));
        assert_eq!(ctx.hminus1_norm(&vec![0.0; n]), 0.0);
    }

    #[test]
    fn single_ramp_closed_forms() {
        let (disc, ctx) = ctx();
        let n = disc.n_fine();
        let tau = disc.grid.fine_step;
        let w: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut u = SpaceTimeFunction::zeros(disc.grid.fine_steps(), n);
        u.at_mut(1).copy_from_slice(&w);
        for g in 2..=disc.grid.fine_steps() {
            u.at_mut(g).copy_from_slice(&w);
        }
        let mut one = SpaceTimeFunction::zeros(1, n);
        one.at_mut(1).copy_from_slice(&w);
        let scaled: Vec<f64> = w.iter().map(|v| v / tau).collect();
        let half: Vec<f64> = w.iter().map(|v| v / 2.0).collect();
        let expected = tau * ctx.hminus1_norm(&scaled).powi(2) + tau * ctx.gradient_norm(&half).powi(2);
        assert!((ctx.trial_norm(&one).powi(2) - expected).abs() < 1e-12 * expected);
        let l2 = ctx.l2h1_norm(&one).powi(2);
        assert!((l2 - tau / 3.0 * ctx.gradient_norm(&w).powi(2)).abs() < 1e-12 * l2);
        let t = ctx.test_norm(std::slice::from_ref(&w));
        assert!((t - tau.sqrt() * ctx.gradient_norm(&w)).abs() < 1e-12 * t);
    }
}
