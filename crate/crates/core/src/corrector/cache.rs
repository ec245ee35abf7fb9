//! Binary corrector cache files.
//!
//! Layout (little-endian): magic `STLODCORR`, version `u32`, `k` and `ℓ` as
//! `u64`, coarse and fine mesh exponents as `u32`, final time `f64`, `N_T`
//! and `N_t` as `u64`, coefficient fingerprint `u64`, reuse flag `u8`; then a
//! table of series (`n_dofs`, `N_t`, interval count, values), a table of
//! patches (centre element, radius, active fine DOF count) and the block
//! records (`K`, `i`, vertex, pyramid, series index, interval count, ramp).

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;

use super::{BasisKey, BlockRef, CorrectorOperator, CorrectorSeries};
use crate::coefficient::ByteReader;
use crate::discretization::{Discretization, Fingerprint};
use crate::error::{Error, Result};
use crate::grid::patch;

const MAGIC: &[u8; 9] = b"STLODCORR";
const VERSION: u32 = 1;

fn put_u64(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u64).to_le_bytes());
}

pub fn to_bytes(op: &CorrectorOperator) -> Vec<u8> {
    let fp = &op.fingerprint;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u64(&mut out, op.k);
    put_u64(&mut out, op.ell);
    out.extend_from_slice(&fp.coarse_exponent.to_le_bytes());
    out.extend_from_slice(&fp.fine_exponent.to_le_bytes());
    out.extend_from_slice(&fp.t_final_bits.to_le_bytes());
    put_u64(&mut out, fp.coarse_steps);
    put_u64(&mut out, fp.fine_per_coarse);
    out.extend_from_slice(&fp.coefficient.to_le_bytes());
    out.push(u8::from(op.periodic_reuse));

    let mut index: HashMap<*const CorrectorSeries, usize> = HashMap::new();
    let mut table: Vec<&Arc<CorrectorSeries>> = Vec::new();
    for block in op.blocks().values() {
        index.entry(Arc::as_ptr(&block.series)).or_insert_with(|| {
            table.push(&block.series);
            table.len() - 1
        });
    }
    put_u64(&mut out, table.len());
    for s in &table {
        put_u64(&mut out, s.n_dofs());
        put_u64(&mut out, s.fine_per_coarse());
        put_u64(&mut out, s.len());
        for q in 0..s.len() {
            for v in s.raw_interval(q) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }

    put_u64(&mut out, op.patches().len());
    for (&element, p) in op.patches() {
        put_u64(&mut out, element);
        put_u64(&mut out, p.radius);
        put_u64(&mut out, p.fine_dofs.len());
    }

    put_u64(&mut out, op.blocks().len());
    for (key, block) in op.blocks() {
        for v in [key.element, key.interval, key.vertex, key.pyramid] {
            put_u64(&mut out, v);
        }
        put_u64(&mut out, index[&Arc::as_ptr(&block.series)]);
        put_u64(&mut out, block.intervals);
        out.push(u8::from(block.ramp));
    }
    out
}

fn malformed(msg: &str) -> Error {
    Error::Format(format!("corrector cache: {msg}"))
}

/// Reads a cache and validates it against `disc`.
pub fn from_bytes(bytes: &[u8], disc: &Discretization) -> Result<CorrectorOperator> {
    let mut r = ByteReader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(malformed("bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(malformed(&format!("unsupported version {version}")));
    }
    let k = r.u64()? as usize;
    let ell = r.u64()? as usize;
    let fingerprint = Fingerprint {
        coarse_exponent: r.u32()?,
        fine_exponent: r.u32()?,
        t_final_bits: r.u64()?,
        coarse_steps: r.u64()? as usize,
        fine_per_coarse: r.u64()? as usize,
        coefficient: r.u64()?,
    };
    let expected = disc.fingerprint();
    if fingerprint != expected {
        return Err(Error::FingerprintMismatch(format!(
            "cache was built for {fingerprint:?}, current setup is {expected:?}"
        )));
    }
    let reuse = r.take(1)?[0] != 0;

    let n_series = r.u64()? as usize;
    let mut table = Vec::with_capacity(n_series.min(1 << 20));
    for _ in 0..n_series {
        let n_dofs = r.u64()? as usize;
        let nt = r.u64()? as usize;
        let len = r.u64()? as usize;
        if nt != fingerprint.fine_per_coarse {
            return Err(malformed("series step count does not match the grid"));
        }
        let mut s = CorrectorSeries::new(n_dofs, nt);
        for _ in 0..len {
            let vals = (0..n_dofs * nt).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            s.push_interval(vals);
        }
        table.push(Arc::new(s));
    }

    let n_patches = r.u64()? as usize;
    let mut patches = BTreeMap::new();
    for _ in 0..n_patches {
        let element = r.u64()? as usize;
        let radius = r.u64()? as usize;
        let n_active = r.u64()? as usize;
        if element >= disc.pair.coarse.element_count() {
            return Err(malformed("patch centre out of range"));
        }
        let p = patch(&disc.pair, element, radius)?;
        if p.fine_dofs.len() != n_active {
            return Err(malformed("patch size does not match the mesh"));
        }
        patches.insert(element, Arc::new(p));
    }

    let n_blocks = r.u64()? as usize;
    let mut blocks = BTreeMap::new();
    for _ in 0..n_blocks {
        let key = BasisKey {
            element: r.u64()? as usize,
            interval: r.u64()? as usize,
            vertex: r.u64()? as usize,
            pyramid: r.u64()? as usize,
        };
        let series = table.get(r.u64()? as usize).ok_or_else(|| malformed("series index out of range"))?.clone();
        let intervals = r.u64()? as usize;
        let ramp = r.take(1)?[0] != 0;
        let p = patches.get(&key.element).ok_or_else(|| malformed("block without patch"))?;
        if series.n_dofs() != p.fine_dofs.len() || intervals == 0 || intervals > series.len() {
            return Err(malformed("block does not match its patch or series"));
        }
        blocks.insert(key, BlockRef { series, intervals, ramp });
    }
    if r.pos != bytes.len() {
        return Err(malformed("trailing bytes"));
    }
    Ok(CorrectorOperator::from_parts(k, ell, fingerprint, reuse, patches, blocks))
}

pub fn save(op: &CorrectorOperator, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(op))?;
    Ok(())
}

pub fn load(path: &Path, disc: &Discretization) -> Result<CorrectorOperator> {
    from_bytes(&std::fs::read(path)?, disc)
}
