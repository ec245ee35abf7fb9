//! The experiments behind each subcommand. Every function is a pure
//! function of its configuration and cache file.

use std::path::Path;

use rayon::prelude::*;

use stlod_core::analysis::{delta_estimator, estimators, theta_estimator, NormContext};
use stlod_core::coefficient::SplitMix64;
use stlod_core::corrector::{
    assemble_corrector_operator, basis_keys, build_for_keys, cache, BasisKey, CorrectorOperator, CorrectorOptions,
};
use stlod_core::discretization::Discretization;
use stlod_core::forcing::{ConstantForcing, Forcing, NodalForcing};
use stlod_core::grid::{build_mesh_pair, saturating_radius};
use stlod_core::solver::{
    assemble_coarse_system, prolongate_coarse, reconstruct_fine, solve_multi_rhs, solve_multiscale,
    solve_reference_fine,
};
use stlod_core::spacetime::SpaceTimeFunction;

use crate::config::{Config, NormKind};
use crate::error::CliError;
use crate::table::{g17, Table};

pub fn discretization(cfg: &Config) -> Result<Discretization, CliError> {
    let pair = build_mesh_pair(cfg.coarse_exponent, cfg.fine_exponent)?;
    Ok(Discretization::new(pair, cfg.grid()?, cfg.coefficient()?)?)
}

fn options(cfg: &Config, workers: usize) -> Result<CorrectorOptions, CliError> {
    Ok(CorrectorOptions {
        k: cfg.radius_for(cfg.coarse_exponent)?,
        ell: cfg.ell,
        workers,
        reuse_periodic: cfg.reuse_periodic,
    })
}

/// How often correctors were computed or read back.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CacheCounter {
    pub builds: usize,
    pub hits: usize,
}

/// Reads the corrector operator from `cache` if the file exists, otherwise
/// computes it (and writes it to `cache` when given).
pub fn obtain_operator(
    cfg: &Config,
    disc: &Discretization,
    cache_path: Option<&Path>,
    workers: usize,
    counter: &mut CacheCounter,
) -> Result<CorrectorOperator, CliError> {
    let opts = options(cfg, workers)?;
    if let Some(path) = cache_path.filter(|p| p.exists()) {
        let op = cache::load(path, disc)?;
        if op.k != opts.k || op.ell != opts.ell {
            return Err(CliError::Config(format!(
                "cache {} holds k={}, ell={} but the configuration asks for k={}, ell={}",
                path.display(),
                op.k,
                op.ell,
                opts.k,
                opts.ell
            )));
        }
        counter.hits += 1;
        return Ok(op);
    }
    let op = assemble_corrector_operator(disc, &opts)?;
    counter.builds += 1;
    if let Some(path) = cache_path {
        cache::save(&op, path)?;
    }
    Ok(op)
}

/// Computes all correctors and writes them to `out`.
pub fn cmd_correctors(cfg: &Config, out: &Path, workers: usize) -> Result<CorrectorOperator, CliError> {
    let disc = discretization(cfg)?;
    let op = assemble_corrector_operator(&disc, &options(cfg, workers)?)?;
    cache::save(&op, out)?;
    Ok(op)
}

/// Multiscale solution for `f ≡ forcing`, sampled at the coarse time nodes
/// on every fine node.
pub fn cmd_solve(cfg: &Config, cache_path: Option<&Path>, workers: usize) -> Result<Table, CliError> {
    let disc = discretization(cfg)?;
    let mut counter = CacheCounter::default();
    let mut op = obtain_operator(cfg, &disc, cache_path, workers, &mut counter)?;
    if cfg.zero_corrector {
        op = op.zeroed();
    }
    let system = assemble_coarse_system(&op, &disc, workers)?;
    let coarse = solve_multiscale(&system, &disc, &ConstantForcing(cfg.forcing))?;
    let u = reconstruct_fine(&disc, &op, &coarse)?;
    let mesh = &disc.pair.fine;
    let mut table = Table::new(&["time", "x", "y", "value"]);
    for j in 1..=disc.grid.coarse_steps {
        let g = disc.grid.global_fine_index(j, disc.grid.fine_per_coarse);
        let values = u.at(g);
        for (node, p) in mesh.nodes().iter().enumerate() {
            let v = mesh.interior_index(node).map_or(0.0, |d| values[d]);
            table.push(vec![g17(disc.grid.coarse_time(j)), g17(p[0]), g17(p[1]), g17(v)]);
        }
    }
    Ok(table)
}

/// Errors and estimators of the localization experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct DecayReport {
    /// `(k, error, δ)`; `δ` needs `k >= 3`.
    pub spatial: Vec<(usize, f64, Option<f64>)>,
    /// `(ℓ, error, ϑ)`.
    pub temporal: Vec<(usize, f64, f64)>,
    pub reference_k: usize,
}

impl DecayReport {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&["kind", "parameter", "loc_error", "estimator"]);
        for (k, e, d) in &self.spatial {
            t.push(vec!["k".into(), k.to_string(), g17(*e), d.map_or(String::new(), g17)]);
        }
        for (l, e, th) in &self.temporal {
            t.push(vec!["ell".into(), l.to_string(), g17(*e), g17(*th)]);
        }
        t
    }
}

/// Localization errors of the corrector of the basis function at
/// `x = (0.5, 0.5)`, `t = 𝒯`, against the saturated corrector, with the
/// estimators maximized over the space-time elements touching its support.
pub fn run_decay(cfg: &Config, workers: usize) -> Result<DecayReport, CliError> {
    let disc = discretization(cfg)?;
    let coarse = &disc.pair.coarse;
    let n_t = disc.grid.coarse_steps;
    if n_t < 2 {
        return Err(CliError::Config("the decay experiment needs at least two coarse time steps".into()));
    }
    let node = coarse
        .node_at(0.5, 0.5)
        .and_then(|n| coarse.interior_index(n).map(|z| (n, z)))
        .ok_or_else(|| CliError::Config("(0.5, 0.5) is not an interior coarse node".into()))?;
    let (node, z) = node;
    let support: Vec<(usize, usize)> = coarse.node_elements(node).iter().flat_map(|&e| [(e, 1), (e, 2)]).collect();
    let keys: Vec<BasisKey> = support.iter().flat_map(|&(e, i)| basis_keys(&disc, e, i)).collect();

    let mut values = vec![vec![0.0; disc.n_coarse()]; n_t];
    values[0][z] = 1.0;
    let ctx = NormContext::new(&disc)?;
    let scale = ctx.trial_norm(&prolongate_coarse(&disc, &values)?);

    let k_ref = saturating_radius(coarse);
    let build = |k: usize, ell: usize| {
        build_for_keys(&disc, &CorrectorOptions { k, ell, workers, reuse_periodic: false }, &keys)
    };
    let reference = build(k_ref, n_t)?;
    let exact = reference.apply(&disc, &values)?;
    let error = |op: &CorrectorOperator| -> Result<f64, CliError> {
        let diff = exact.difference(&op.apply(&disc, &values)?);
        Ok(ctx.trial_norm(&diff) / scale)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    let max_over = |f: &(dyn Fn(usize, usize) -> stlod_core::Result<f64> + Sync)| -> Result<f64, CliError> {
        let vals = pool.install(|| support.par_iter().map(|&(e, i)| f(e, i)).collect::<Result<Vec<_>, _>>())?;
        Ok(vals.into_iter().fold(0.0, f64::max))
    };

    let mut spatial = Vec::new();
    for &k in &cfg.decay_ks {
        let built;
        let op = if k == k_ref {
            &reference
        } else {
            built = build(k, n_t)?;
            &built
        };
        let delta = if k >= 3 { Some(max_over(&|e, i| delta_estimator(&ctx, &disc, op, e, i))?) } else { None };
        spatial.push((k, error(op)?, delta));
    }
    let mut temporal = Vec::new();
    for &ell in &cfg.decay_ells {
        let op = reference.truncated(ell.min(n_t), n_t)?;
        let theta = max_over(&|e, i| theta_estimator(&ctx, &disc, &op, e, i))?;
        temporal.push((ell, error(&op)?, theta));
    }
    Ok(DecayReport { spatial, temporal, reference_k: k_ref })
}

/// Least-squares slope of `log₂ y` against `log₂ x`.
pub fn log2_slope(points: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.log2(), y.log2())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    /// `(H, relative V_tr error, relative L²(H¹₀) error)`.
    pub rows: Vec<(f64, f64, f64)>,
    pub trial_slope: f64,
    pub l2h1_slope: f64,
}

impl ConvergenceReport {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&["H", "tr_error", "l2h1_error"]);
        for (h, a, b) in &self.rows {
            t.push(vec![g17(*h), g17(*a), g17(*b)]);
        }
        t.push(vec!["slope".into(), g17(self.trial_slope), g17(self.l2h1_slope)]);
        t
    }
}

/// Relative errors of the multiscale solution for `f ≡ forcing` against the
/// fine reference, for `H = 𝒯 = 2^-n` with `n` from `sweep_exponents`.
pub fn run_convergence(cfg: &Config, workers: usize) -> Result<ConvergenceReport, CliError> {
    if cfg.sweep_exponents.len() < 2 {
        return Err(CliError::Config("the convergence sweep needs at least two exponents".into()));
    }
    let mut rows = Vec::new();
    for &n in &cfg.sweep_exponents {
        let row = cfg.with_coarse_exponent(n)?;
        let disc = discretization(&row)?;
        let op = assemble_corrector_operator(&disc, &options(&row, workers)?)?;
        let system = assemble_coarse_system(&op, &disc, workers)?;
        let f = ConstantForcing(cfg.forcing);
        let u = reconstruct_fine(&disc, &op, &solve_multiscale(&system, &disc, &f)?)?;
        let reference = solve_reference_fine(&disc, &f)?;
        let ctx = NormContext::new(&disc)?;
        let diff = u.difference(&reference);
        rows.push((
            disc.pair.coarse.spacing(),
            ctx.trial_norm(&diff) / ctx.trial_norm(&reference),
            ctx.l2h1_norm(&diff) / ctx.l2h1_norm(&reference),
        ));
    }
    let trial_slope = log2_slope(&rows.iter().map(|r| (r.0, r.1)).collect::<Vec<_>>());
    let l2h1_slope = log2_slope(&rows.iter().map(|r| (r.0, r.2)).collect::<Vec<_>>());
    Ok(ConvergenceReport { rows, trial_slope, l2h1_slope })
}

/// `f̃` at every fine node in node order, then `a`, `b`, `c`, per
/// right-hand side, all uniform on `[0, 1)`.
pub fn random_forcings(disc: &Discretization, count: usize, seed: u64) -> Vec<NodalForcing> {
    let mesh = &disc.pair.fine;
    let mut rng = SplitMix64::new(seed);
    (0..count)
        .map(|_| {
            let nodal: Vec<f64> = (0..mesh.node_count()).map(|_| rng.next_f64()).collect();
            let (a, b, c) = (rng.next_f64(), rng.next_f64(), rng.next_f64());
            NodalForcing::new(mesh, &nodal, a, b, c)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiRhsReport {
    pub errors: Vec<f64>,
    /// `(bin_left, count)`.
    pub histogram: Vec<(f64, usize)>,
    pub counter: CacheCounter,
    /// Corrector chains computed while obtaining the operator.
    pub chains_computed: usize,
    pub n_coarse: usize,
    /// Sizes of the linear systems factorized for the online phase.
    pub online_system_dims: Vec<usize>,
}

impl MultiRhsReport {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&["bin_left", "count"]);
        for (left, count) in &self.histogram {
            t.push(vec![g17(*left), count.to_string()]);
        }
        t
    }

    pub fn errors_table(&self) -> Table {
        let mut t = Table::new(&["rhs", "rel_error"]);
        for (r, e) in self.errors.iter().enumerate() {
            t.push(vec![r.to_string(), g17(*e)]);
        }
        t
    }
}

pub fn histogram(values: &[f64], bins: usize) -> Vec<(f64, usize)> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() {
        return Vec::new();
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0; bins];
    for &v in values {
        let b = if width > 0.0 { (((v - lo) / width) as usize).min(bins - 1) } else { 0 };
        counts[b] += 1;
    }
    counts.into_iter().enumerate().map(|(b, c)| (lo + b as f64 * width, c)).collect()
}

/// Relative errors for `rhs_count` random right-hand sides sharing one
/// corrector operator and one coarse system.
pub fn run_multirhs(cfg: &Config, cache_path: Option<&Path>, workers: usize) -> Result<MultiRhsReport, CliError> {
    let disc = discretization(cfg)?;
    let mut counter = CacheCounter::default();
    let op = obtain_operator(cfg, &disc, cache_path, workers, &mut counter)?;
    let system = assemble_coarse_system(&op, &disc, workers)?;
    let forcings = random_forcings(&disc, cfg.rhs_count, cfg.rhs_seed);
    let refs: Vec<&dyn Forcing> = forcings.iter().map(|f| f as &dyn Forcing).collect();
    let coarse = solve_multi_rhs(&system, &disc, &refs, workers)?;
    let ctx = NormContext::new(&disc)?;
    let norm = |u: &SpaceTimeFunction| match cfg.norm {
        NormKind::Trial => ctx.trial_norm(u),
        NormKind::L2H1 => ctx.l2h1_norm(u),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    let errors = pool.install(|| {
        forcings
            .par_iter()
            .zip(&coarse)
            .map(|(f, c)| -> Result<f64, CliError> {
                let u = reconstruct_fine(&disc, &op, c)?;
                let reference = solve_reference_fine(&disc, f)?;
                Ok(norm(&u.difference(&reference)) / norm(&reference))
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    Ok(MultiRhsReport {
        histogram: histogram(&errors, cfg.histogram_bins),
        errors,
        counter,
        chains_computed: op.stats.chains,
        n_coarse: system.n_coarse(),
        online_system_dims: system.factor_dims(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimateReport {
    /// `(K, i, δ, ϑ)`.
    pub rows: Vec<(usize, usize, Option<f64>, f64)>,
    pub max_delta: Option<f64>,
    pub max_theta: f64,
}

impl EstimateReport {
    pub fn table(&self) -> Table {
        let opt = |v: Option<f64>| v.map_or(String::new(), g17);
        let mut t = Table::new(&["element", "interval", "delta", "theta"]);
        for (e, i, d, th) in &self.rows {
            t.push(vec![e.to_string(), i.to_string(), opt(*d), g17(*th)]);
        }
        t.push(vec!["max".into(), String::new(), opt(self.max_delta), g17(self.max_theta)]);
        t
    }
}

/// `δ` and `ϑ` on every coarse space-time element.
pub fn run_estimate(cfg: &Config, cache_path: Option<&Path>, workers: usize) -> Result<EstimateReport, CliError> {
    let disc = discretization(cfg)?;
    let mut counter = CacheCounter::default();
    let mut op = obtain_operator(cfg, &disc, cache_path, workers, &mut counter)?;
    if cfg.zero_corrector {
        op = op.zeroed();
    }
    let ctx = NormContext::new(&disc)?;
    let cells: Vec<(usize, usize)> =
        (0..disc.pair.coarse.element_count()).flat_map(|e| (1..=disc.grid.coarse_steps).map(move |i| (e, i))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    let rows = pool.install(|| {
        cells
            .par_iter()
            .map(|&(e, i)| estimators(&ctx, &disc, &op, e, i).map(|(d, t)| (e, i, d, t)))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let max_delta = if op.k >= 3 { Some(rows.iter().filter_map(|r| r.2).fold(0.0, f64::max)) } else { None };
    let max_theta = rows.iter().map(|r| r.3).fold(0.0, f64::max);
    Ok(EstimateReport { rows, max_delta, max_theta })
}
