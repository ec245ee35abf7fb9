//! Localized space-time basis correctors.
//!
//! For a coarse element `K`, a coarse interval `i` and a coarse pyramid
//! `Λ = φ_z ζ_p` overlapping `K × [T_{i-1}, T_i]`, the corrector is a chain of
//! constrained Crank–Nicolson problems on the patch `N^k(K)`, one per coarse
//! interval `j = i .. min(i+ℓ-1, N_T)`, followed by a linear ramp to zero.

pub mod cache;

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::assembly::{local_mass, local_stiffness};
use crate::discretization::{Discretization, Fingerprint};
use crate::error::{invalid, Error, Result};
use crate::grid::{patch, Patch};
use crate::linalg::{max_abs, DenseLu, SparseOperator, SpdFactor};
use crate::spacetime::SpaceTimeFunction;

/// Identifies the corrector of `φ_vertex ζ_pyramid` restricted to
/// `K × [T_{interval-1}, T_interval]`. `vertex` is a coarse interior DOF id;
/// `pyramid` is either `interval` (rising) or `interval - 1` (falling).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BasisKey {
    pub element: usize,
    pub interval: usize,
    pub vertex: usize,
    pub pyramid: usize,
}

impl BasisKey {
    pub fn is_rising(&self) -> bool {
        self.pyramid == self.interval
    }
}

/// All keys of the coarse element `k` on coarse interval `i`, ordered.
pub fn basis_keys(disc: &Discretization, k: usize, i: usize) -> Vec<BasisKey> {
    let mut vertices: Vec<usize> =
        disc.pair.coarse.elements()[k].iter().filter_map(|&v| disc.pair.coarse.interior_index(v)).collect();
    vertices.sort_unstable();
    let mut keys = Vec::new();
    for &z in &vertices {
        if i >= 2 {
            keys.push(BasisKey { element: k, interval: i, vertex: z, pyramid: i - 1 });
        }
        keys.push(BasisKey { element: k, interval: i, vertex: z, pyramid: i });
    }
    keys.sort_unstable();
    keys
}

/// Solutions `ξ_q` of consecutive constrained interval problems, stored on
/// the active fine DOFs of a patch at fine steps `1..=N_t` of each interval.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrectorSeries {
    n_dofs: usize,
    fine_per_coarse: usize,
    intervals: Vec<Vec<f64>>,
}

impl CorrectorSeries {
    pub fn new(n_dofs: usize, fine_per_coarse: usize) -> Self {
        Self { n_dofs, fine_per_coarse, intervals: Vec::new() }
    }

    pub fn push_interval(&mut self, steps: Vec<f64>) {
        assert_eq!(steps.len(), self.n_dofs * self.fine_per_coarse);
        self.intervals.push(steps);
    }

    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }

    pub fn fine_per_coarse(&self) -> usize {
        self.fine_per_coarse
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    /// `ξ_q` at fine step `m` (1-based within the interval).
    pub fn step(&self, q: usize, m: usize) -> &[f64] {
        let n = self.n_dofs;
        &self.intervals[q][(m - 1) * n..m * n]
    }

    /// `ξ_q(T_end)`.
    pub fn end(&self, q: usize) -> &[f64] {
        self.step(q, self.fine_per_coarse)
    }

    pub fn raw_interval(&self, q: usize) -> &[f64] {
        &self.intervals[q]
    }

    fn zeroed(&self) -> Self {
        Self {
            n_dofs: self.n_dofs,
            fine_per_coarse: self.fine_per_coarse,
            intervals: self.intervals.iter().map(|v| vec![0.0; v.len()]).collect(),
        }
    }
}

/// A corrector: the first `intervals` entries of a (possibly shared) series,
/// followed by a ramp interval when `ramp` is set.
#[derive(Clone, Debug)]
pub struct BlockRef {
    pub series: Arc<CorrectorSeries>,
    pub intervals: usize,
    pub ramp: bool,
}

impl BlockRef {
    /// Number of coarse intervals on which the corrector can be nonzero.
    pub fn span(&self) -> usize {
        self.intervals + usize::from(self.ramp)
    }

    /// Value `ξ(T_{i-1+q} + m τ)` on the patch DOFs, written into `out`.
    pub fn value_into(&self, q: usize, m: usize, out: &mut [f64]) {
        let nt = self.series.fine_per_coarse;
        let s = &self.series;
        out.iter_mut().for_each(|v| *v = 0.0);
        if q < self.intervals {
            if m > 0 {
                out.copy_from_slice(s.step(q, m));
            }
            if q > 0 {
                let w = 1.0 - m as f64 / nt as f64;
                for (o, p) in out.iter_mut().zip(s.end(q - 1)) {
                    *o += w * p;
                }
            }
        } else if q == self.intervals && self.ramp {
            let w = 1.0 - m as f64 / nt as f64;
            for (o, p) in out.iter_mut().zip(s.end(q - 1)) {
                *o = w * p;
            }
        }
    }

    /// Value at the end of the last computed interval.
    pub fn tail(&self) -> &[f64] {
        self.series.end(self.intervals - 1)
    }
}

/// Patch-local matrices and cached factorizations for the constrained
/// interval problems of one coarse element.
pub struct LocalProblem<'a> {
    disc: &'a Discretization,
    pub patch: Patch,
    /// `M_{h,k}`
    pub mass: SparseOperator,
    /// `I_{H,k}`
    pub interp: SparseOperator,
    /// `I_{H,k}ᵀ M_{H,k}`, dense.
    pub constraint_lift: DMatrix<f64>,
    steps: HashMap<usize, StepOperators>,
    schur: HashMap<Vec<usize>, Arc<DenseLu>>,
    drives: BTreeMap<usize, Drive>,
    max_residual: f64,
    intervals_solved: usize,
}

struct StepOperators {
    implicit: SpdFactor,
    explicit: SparseOperator,
    stiffness: SparseOperator,
}

/// `M_K φ_z` and `S_K φ_z` per slab, on the patch DOFs.
struct Drive {
    mass: Vec<f64>,
    stiffness: BTreeMap<usize, Vec<f64>>,
}

impl<'a> LocalProblem<'a> {
    pub fn new(disc: &'a Discretization, element: usize, radius: usize) -> Result<Self> {
        let patch = patch(&disc.pair, element, radius)?;
        let mass = disc.fine_mass.submatrix(&patch.fine_dofs, &patch.fine_dofs);
        let interp = disc.interp.localized(&patch);
        let coarse_mass = disc.coarse_mass.submatrix(&patch.coarse_dofs, &patch.coarse_dofs);
        let constraint_lift = interp.transpose().matmul(&coarse_mass).to_dense();
        Ok(Self {
            disc,
            patch,
            mass,
            interp,
            constraint_lift,
            steps: HashMap::new(),
            schur: HashMap::new(),
            drives: BTreeMap::new(),
            max_residual: 0.0,
            intervals_solved: 0,
        })
    }

    pub fn n_fine(&self) -> usize {
        self.patch.fine_dofs.len()
    }

    pub fn n_coarse(&self) -> usize {
        self.patch.coarse_dofs.len()
    }

    /// Largest `‖I_{H,k} ξ(T_j)‖_∞` over all solved intervals.
    pub fn max_constraint_residual(&self) -> f64 {
        self.max_residual
    }

    fn ensure_slab(&mut self, slab: usize) -> Result<()> {
        if self.steps.contains_key(&slab) {
            return Ok(());
        }
        let tau = self.disc.grid.fine_step;
        let stiffness = self.disc.stiffness_for_slab(slab).submatrix(&self.patch.fine_dofs, &self.patch.fine_dofs);
        let implicit = SpdFactor::new(&self.mass.add_scaled(&stiffness, 0.5 * tau))
            .map_err(|e| Error::NumericalFailure(format!("patch {}: {e}", self.patch.center_element)))?;
        let explicit = self.mass.add_scaled(&stiffness, -0.5 * tau);
        self.steps.insert(slab, StepOperators { implicit, explicit, stiffness });
        Ok(())
    }

    /// One Crank–Nicolson step `x ← (M + τ/2 S)⁻¹((M − τ/2 S) x + f)`.
    fn step(&self, slab: usize, x: &mut Vec<f64>, f: &[f64]) {
        let ops = &self.steps[&slab];
        let mut rhs = f.to_vec();
        ops.explicit.mul_add_into(1.0, x, &mut rhs);
        ops.implicit.solve_in_place(&mut rhs);
        *x = rhs;
    }

    fn schur_factor(&mut self, slabs: &[usize]) -> Result<Arc<DenseLu>> {
        if let Some(f) = self.schur.get(slabs) {
            return Ok(f.clone());
        }
        for &s in slabs {
            self.ensure_slab(s)?;
        }
        let (nf, nc) = (self.n_fine(), self.n_coarse());
        let mut x = DMatrix::<f64>::zeros(nf, nc);
        for &s in slabs {
            let ops = &self.steps[&s];
            let mut rhs = self.constraint_lift.clone();
            ops.explicit.mul_dense_add_into(1.0, &x, &mut rhs);
            ops.implicit.solve_columns(&mut rhs);
            x = rhs;
        }
        let mut schur = DMatrix::<f64>::zeros(nc, nc);
        for c in 0..nc {
            let col = self.interp.mul_vec(x.column(c).as_slice());
            schur.column_mut(c).copy_from_slice(&col);
        }
        let lu = Arc::new(DenseLu::new(schur, &format!("Schur complement on patch {}", self.patch.center_element))?);
        self.schur.insert(slabs.to_vec(), lu.clone());
        Ok(lu)
    }

    /// Solves the constrained problem on coarse interval `j` with right-hand
    /// side `rhs[m-1]` for fine step `m`. Returns the fine steps `ξ^1..ξ^{N_t}`
    /// (concatenated) and the multiplier.
    pub fn solve_interval(&mut self, j: usize, rhs: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
        let slabs = self.disc.interval_slabs(j);
        if rhs.len() != slabs.len() || rhs.iter().any(|r| r.len() != self.n_fine()) {
            return invalid("right-hand side does not match the interval problem");
        }
        let lu = self.schur_factor(&slabs)?;
        let nf = self.n_fine();

        let mut y = vec![0.0; nf];
        for (&s, f) in slabs.iter().zip(rhs) {
            self.step(s, &mut y, f);
        }
        let lambda = if self.n_coarse() > 0 { lu.solve(&self.interp.mul_vec(&y)) } else { Vec::new() };
        let lifted: Vec<f64> = if lambda.is_empty() {
            vec![0.0; nf]
        } else {
            (&self.constraint_lift * nalgebra::DVector::from_column_slice(&lambda)).as_slice().to_vec()
        };

        let mut xi = vec![0.0; nf];
        let mut steps = Vec::with_capacity(nf * slabs.len());
        for (&s, f) in slabs.iter().zip(rhs) {
            let forcing: Vec<f64> = f.iter().zip(&lifted).map(|(a, b)| a - b).collect();
            self.step(s, &mut xi, &forcing);
            steps.extend_from_slice(&xi);
        }
        self.max_residual = self.max_residual.max(max_abs(&self.interp.mul_vec(&xi)));
        self.intervals_solved += 1;
        Ok((steps, lambda))
    }

    fn drive(&mut self, vertex: usize, slabs: &[usize]) -> &Drive {
        let disc = self.disc;
        let fine = &disc.pair.fine;
        let node = disc.pair.coarse.interior_nodes()[vertex];
        let element = self.patch.center_element;
        let patch = &self.patch;
        let entry = self.drives.entry(vertex).or_insert_with(|| Drive { mass: Vec::new(), stiffness: BTreeMap::new() });
        let need_mass = entry.mass.is_empty();
        let missing: Vec<usize> = slabs.iter().copied().filter(|s| !entry.stiffness.contains_key(s)).collect();
        if need_mass || !missing.is_empty() {
            let nf = patch.fine_dofs.len();
            let mut mass = vec![0.0; nf];
            let mut stiff: BTreeMap<usize, Vec<f64>> = missing.iter().map(|&s| (s, vec![0.0; nf])).collect();
            for &c in disc.pair.element_children(element) {
                let tri = fine.elements()[c];
                let hats: Vec<f64> = tri.iter().map(|&v| disc.pair.hat_value(node, v)).collect();
                let rows: Vec<Option<usize>> =
                    tri.iter().map(|&v| fine.interior_index(v).and_then(|d| patch.fine_local(d))).collect();
                let lm = local_mass(fine.signed_area(c));
                for a in 0..3 {
                    if let Some(r) = rows[a] {
                        mass[r] += (0..3).map(|b| lm[a][b] * hats[b]).sum::<f64>();
                    }
                }
                for (&s, vec) in stiff.iter_mut() {
                    let ls = local_stiffness(fine, c, disc.element_values(s)[c]);
                    for a in 0..3 {
                        if let Some(r) = rows[a] {
                            vec[r] += (0..3).map(|b| ls[a][b] * hats[b]).sum::<f64>();
                        }
                    }
                }
            }
            if need_mass {
                entry.mass = mass;
            }
            entry.stiffness.extend(stiff);
        }
        entry
    }

    /// Right-hand side on interval `j` from `φ_vertex` times the time profile
    /// `θ` (rising `m/N_t` or falling `1 - m/N_t`), integrated over `K` only.
    pub fn drive_rhs(&mut self, j: usize, vertex: usize, rising: bool) -> Vec<Vec<f64>> {
        let slabs = self.disc.interval_slabs(j);
        let nt = self.disc.grid.fine_per_coarse as f64;
        let tau = self.disc.grid.fine_step;
        let drive = self.drive(vertex, &slabs);
        let theta = |m: usize| if rising { m as f64 / nt } else { 1.0 - m as f64 / nt };
        slabs
            .iter()
            .enumerate()
            .map(|(idx, s)| {
                let m = idx + 1;
                let dm = theta(m) - theta(m - 1);
                let sm = 0.5 * tau * (theta(m) + theta(m - 1));
                drive.mass.iter().zip(&drive.stiffness[s]).map(|(a, b)| -(dm * a + sm * b)).collect()
            })
            .collect()
    }

    /// Right-hand side on interval `j` from the ramp `(T_j - t)/𝒯 · prev_end`
    /// that continues the previous interval.
    pub fn carry_rhs(&mut self, j: usize, prev_end: &[f64]) -> Result<Vec<Vec<f64>>> {
        let slabs = self.disc.interval_slabs(j);
        for &s in &slabs {
            self.ensure_slab(s)?;
        }
        let nt = self.disc.grid.fine_per_coarse as f64;
        let tau = self.disc.grid.fine_step;
        let mp = self.mass.mul_vec(prev_end);
        Ok(slabs
            .iter()
            .enumerate()
            .map(|(idx, s)| {
                let m = (idx + 1) as f64;
                let sp = self.steps[s].stiffness.mul_vec(prev_end);
                let ws = 0.5 * tau * (2.0 - (2.0 * m - 1.0) / nt);
                mp.iter().zip(&sp).map(|(a, b)| a / nt - ws * b).collect()
            })
            .collect())
    }

    /// Corrector chain of `φ_vertex` with the given time profile, starting at
    /// coarse interval `start` and spanning `len` intervals.
    pub fn chain(&mut self, vertex: usize, rising: bool, start: usize, len: usize) -> Result<CorrectorSeries> {
        let nf = self.n_fine();
        let mut series = CorrectorSeries::new(nf, self.disc.grid.fine_per_coarse);
        for q in 0..len {
            let j = start + q;
            let rhs = if q == 0 {
                self.drive_rhs(j, vertex, rising)
            } else {
                let prev = series.end(q - 1).to_vec();
                self.carry_rhs(j, &prev)?
            };
            let (steps, _) = self.solve_interval(j, &rhs)?;
            series.push_interval(steps);
        }
        Ok(series)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CorrectorStats {
    /// Corrector chains computed (not shared by time shifts).
    pub chains: usize,
    /// Constrained interval problems solved.
    pub intervals_solved: usize,
    /// Largest `‖I_{H,k} ξ_j(T_j)‖_∞` over all solved intervals.
    pub max_constraint_residual: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct CorrectorOptions {
    pub k: usize,
    pub ell: usize,
    pub workers: usize,
    /// Share correctors between coarse intervals when the coefficient is
    /// periodic with a period dividing the coarse step.
    pub reuse_periodic: bool,
}

/// The localized correction operator `Q_{k,ℓ}` as a collection of basis
/// correctors.
#[derive(Clone, Debug)]
pub struct CorrectorOperator {
    pub k: usize,
    pub ell: usize,
    pub fingerprint: Fingerprint,
    pub periodic_reuse: bool,
    pub stats: CorrectorStats,
    patches: BTreeMap<usize, Arc<Patch>>,
    blocks: BTreeMap<BasisKey, BlockRef>,
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))
}

struct ElementResult {
    element: usize,
    patch: Arc<Patch>,
    blocks: Vec<(BasisKey, BlockRef)>,
    stats: CorrectorStats,
}

fn chain_length(n_intervals: usize, ell: usize, i: usize) -> usize {
    ell.min(n_intervals - i + 1)
}

fn element_correctors(
    disc: &Discretization,
    element: usize,
    opts: &CorrectorOptions,
    reuse: bool,
    keys: Option<&[BasisKey]>,
) -> Result<ElementResult> {
    let n_t = disc.grid.coarse_steps;
    let ell = opts.ell;
    let mut local = LocalProblem::new(disc, element, opts.k)?;
    let mut blocks = Vec::new();
    let mut chains = 0;
    if reuse {
        let mut bases: BTreeMap<(usize, bool), Arc<CorrectorSeries>> = BTreeMap::new();
        for key in basis_keys(disc, element, 1).into_iter().chain(if n_t >= 2 {
            basis_keys(disc, element, 2)
        } else {
            Vec::new()
        }) {
            let rising = key.is_rising();
            if bases.contains_key(&(key.vertex, rising)) {
                continue;
            }
            let start = if rising { 1 } else { 2 };
            let series = local.chain(key.vertex, rising, start, chain_length(n_t, ell, start))?;
            chains += 1;
            bases.insert((key.vertex, rising), Arc::new(series));
        }
        for i in 1..=n_t {
            for key in basis_keys(disc, element, i) {
                let series = bases[&(key.vertex, key.is_rising())].clone();
                blocks.push((key, BlockRef { series, intervals: chain_length(n_t, ell, i), ramp: i + ell <= n_t }));
            }
        }
    } else {
        let all: Vec<BasisKey>;
        let keys = match keys {
            Some(k) => k,
            None => {
                all = (1..=n_t).flat_map(|i| basis_keys(disc, element, i)).collect();
                &all
            }
        };
        for &key in keys {
            let len = chain_length(n_t, ell, key.interval);
            let series = local.chain(key.vertex, key.is_rising(), key.interval, len)?;
            chains += 1;
            blocks.push((key, BlockRef { series: Arc::new(series), intervals: len, ramp: key.interval + ell <= n_t }));
        }
    }
    let stats = CorrectorStats {
        chains,
        intervals_solved: local.intervals_solved,
        max_constraint_residual: local.max_residual,
    };
    Ok(ElementResult { element, patch: Arc::new(local.patch), blocks, stats })
}

fn collect(
    disc: &Discretization,
    opts: &CorrectorOptions,
    reuse: bool,
    results: Vec<ElementResult>,
) -> CorrectorOperator {
    let mut stats = CorrectorStats::default();
    let mut patches = BTreeMap::new();
    let mut blocks = BTreeMap::new();
    for r in results {
        stats.chains += r.stats.chains;
        stats.intervals_solved += r.stats.intervals_solved;
        stats.max_constraint_residual = stats.max_constraint_residual.max(r.stats.max_constraint_residual);
        patches.insert(r.element, r.patch);
        blocks.extend(r.blocks);
    }
    CorrectorOperator {
        k: opts.k,
        ell: opts.ell,
        fingerprint: disc.fingerprint(),
        periodic_reuse: reuse,
        stats,
        patches,
        blocks,
    }
}

fn check_options(opts: &CorrectorOptions) -> Result<()> {
    if opts.k < 1 || opts.ell < 1 {
        return invalid(format!("localization parameters must be at least 1, got k={} ell={}", opts.k, opts.ell));
    }
    Ok(())
}

/// Computes every basis corrector of `Q_{k,ℓ}`. The result does not depend
/// on the number of workers.
pub fn assemble_corrector_operator(disc: &Discretization, opts: &CorrectorOptions) -> Result<CorrectorOperator> {
    check_options(opts)?;
    let reuse = opts.reuse_periodic && disc.is_time_shift_invariant();
    let elements: Vec<usize> = (0..disc.pair.coarse.element_count()).collect();
    let results = pool(opts.workers)?.install(|| {
        elements.par_iter().map(|&k| element_correctors(disc, k, opts, reuse, None)).collect::<Result<Vec<_>>>()
    })?;
    Ok(collect(disc, opts, reuse, results))
}

/// Computes only the correctors for `keys`, without time-shift sharing.
pub fn build_for_keys(disc: &Discretization, opts: &CorrectorOptions, keys: &[BasisKey]) -> Result<CorrectorOperator> {
    check_options(opts)?;
    let mut by_element: BTreeMap<usize, Vec<BasisKey>> = BTreeMap::new();
    for &key in keys {
        if key.element >= disc.pair.coarse.element_count() || key.interval < 1 || key.interval > disc.grid.coarse_steps
        {
            return invalid(format!("corrector key {key:?} out of range"));
        }
        by_element.entry(key.element).or_default().push(key);
    }
    let groups: Vec<(usize, Vec<BasisKey>)> = by_element.into_iter().collect();
    let results = pool(opts.workers)?.install(|| {
        groups.par_iter().map(|(k, ks)| element_correctors(disc, *k, opts, false, Some(ks))).collect::<Result<Vec<_>>>()
    })?;
    Ok(collect(disc, opts, false, results))
}

impl CorrectorOperator {
    /// Assembles an operator from parts, e.g. when reading a cache file.
    pub fn from_parts(
        k: usize,
        ell: usize,
        fingerprint: Fingerprint,
        periodic_reuse: bool,
        patches: BTreeMap<usize, Arc<Patch>>,
        blocks: BTreeMap<BasisKey, BlockRef>,
    ) -> Self {
        Self { k, ell, fingerprint, periodic_reuse, stats: CorrectorStats::default(), patches, blocks }
    }

    pub fn blocks(&self) -> &BTreeMap<BasisKey, BlockRef> {
        &self.blocks
    }

    pub fn block(&self, key: &BasisKey) -> Option<&BlockRef> {
        self.blocks.get(key)
    }

    pub fn patch(&self, element: usize) -> &Patch {
        &self.patches[&element]
    }

    pub fn patches(&self) -> &BTreeMap<usize, Arc<Patch>> {
        &self.patches
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Same blocks with every corrector replaced by zero.
    pub fn zeroed(&self) -> Self {
        let mut zeros: HashMap<*const CorrectorSeries, Arc<CorrectorSeries>> = HashMap::new();
        let blocks = self
            .blocks
            .iter()
            .map(|(k, b)| {
                let z = zeros.entry(Arc::as_ptr(&b.series)).or_insert_with(|| Arc::new(b.series.zeroed())).clone();
                (*k, BlockRef { series: z, intervals: b.intervals, ramp: b.ramp })
            })
            .collect();
        Self { blocks, ..self.clone() }
    }

    /// The operator with temporal truncation `ell <= self.ell`, sharing
    /// storage with `self`.
    pub fn truncated(&self, ell: usize, n_intervals: usize) -> Result<Self> {
        if ell < 1 || ell > self.ell {
            return invalid(format!("cannot truncate from ell={} to ell={ell}", self.ell));
        }
        let blocks = self
            .blocks
            .iter()
            .map(|(k, b)| {
                let intervals = b.intervals.min(ell);
                (*k, BlockRef { series: b.series.clone(), intervals, ramp: k.interval + ell <= n_intervals })
            })
            .collect();
        Ok(Self { ell, blocks, ..self.clone() })
    }

    /// Adds `weight` times the corrector of `key` into a global fine function.
    pub fn add_block_into(&self, disc: &Discretization, key: &BasisKey, weight: f64, out: &mut SpaceTimeFunction) {
        let block = &self.blocks[key];
        let patch = &self.patches[&key.element];
        let nt = disc.grid.fine_per_coarse;
        let mut buf = vec![0.0; patch.fine_dofs.len()];
        for q in 0..block.span() {
            let j = key.interval + q;
            if j > disc.grid.coarse_steps {
                break;
            }
            for m in 1..=nt {
                block.value_into(q, m, &mut buf);
                patch.scatter_add(weight, &buf, out.at_mut(disc.grid.global_fine_index(j, m)));
            }
        }
    }

    /// `Q_{k,ℓ} v` for the coarse function with nodal values `coarse[i-1]`
    /// at `T_i`, `i = 1..N_T`.
    pub fn apply(&self, disc: &Discretization, coarse: &[Vec<f64>]) -> Result<SpaceTimeFunction> {
        let n_c = disc.n_coarse();
        if coarse.len() != disc.grid.coarse_steps || coarse.iter().any(|c| c.len() != n_c) {
            return invalid(format!("expected {} coarse vectors of length {n_c}", disc.grid.coarse_steps));
        }
        if self.fingerprint != disc.fingerprint() {
            return invalid("corrector operator does not match the discretization");
        }
        let mut out = SpaceTimeFunction::zeros(disc.grid.fine_steps(), disc.n_fine());
        for key in self.blocks.keys() {
            let w = coarse[key.pyramid - 1][key.vertex];
            if w != 0.0 {
                self.add_block_into(disc, key, w, &mut out);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficient::generate_random;
    use crate::grid::{build_mesh_pair, build_temporal_grid};

    fn desk() -> Discretization {
        let pair = build_mesh_pair(2, 3).unwrap();
        let grid = build_temporal_grid(0.75, 3, 2).unwrap();
        let coeff = generate_random(9, 0.25, 0.125, 0.1, 1.0, false, 0.0, 0.75).unwrap();
        Discretization::new(pair, grid, coeff).unwrap()
    }

    #[test]
    fn zero_rhs_gives_zero_solution() {
        let disc = desk();
        let mut local = LocalProblem::new(&disc, 10, 1).unwrap();
        let rhs = vec![vec![0.0; local.n_fine()]; 2];
        let (xi, lambda) = local.solve_interval(2, &rhs).unwrap();
        assert!(xi.iter().all(|&v| v == 0.0) && lambda.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn interior_element_has_six_keys() {
        let disc = desk();
        let k = 2 * (4 + 1);
        assert_eq!(basis_keys(&disc, k, 2).len(), 6);
        assert_eq!(basis_keys(&disc, k, 1).len(), 3);
    }

    #[test]
    fn chain_satisfies_constraint_and_clamps() {
        let disc = desk();
        let opts = CorrectorOptions { k: 1, ell: 2, workers: 1, reuse_periodic: false };
        let op = assemble_corrector_operator(&disc, &opts).unwrap();
        assert!(op.stats.max_constraint_residual < 1e-9);
        let last = op.blocks().iter().find(|(k, _)| k.interval == 3).unwrap().1;
        assert_eq!((last.intervals, last.ramp), (1, false));
        let first = op.blocks().iter().find(|(k, _)| k.interval == 1).unwrap().1;
        assert_eq!((first.intervals, first.ramp), (2, true));
    }
}
