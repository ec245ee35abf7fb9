//! Piecewise constant random diffusion coefficients on an `ε_x × ε_x × ε_t`
//! space-time checkerboard.

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::grid::{SpatialMesh, TemporalGrid};

const MAGIC: &[u8; 9] = b"STLODCOEF";
const VERSION: u32 = 1;

/// splitmix64 generator.
#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform sample in `[0, 1)` with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Scalar coefficient `A(x, t)`, constant on cells of width `eps_x` and
/// slabs of length `eps_t`. Values are stored at flat index
/// `(ix * ny + iy) * nt + it`.
#[derive(Clone, Debug, PartialEq)]
pub struct Coefficient {
    pub seed: u64,
    pub eps_x: f64,
    pub eps_t: f64,
    pub time_periodic: bool,
    pub period: f64,
    dims: [usize; 3],
    values: Vec<f64>,
    alpha: f64,
    beta: f64,
}

fn integer_ratio(num: f64, den: f64) -> Option<usize> {
    let r = num / den;
    let n = r.round();
    (n >= 1.0 && (r - n).abs() <= 1e-9 * n.max(1.0)).then_some(n as usize)
}

fn slab_count(span: f64, eps_t: f64) -> usize {
    let r = span / eps_t;
    ((r - 1e-9).ceil() as usize).max(1)
}

/// Draws a random coefficient with values uniform in `[low, high)`.
///
/// `time_span` is the length covered by the slabs: the period when
/// `periodic` is set, otherwise the final time.
#[allow(clippy::too_many_arguments)]
pub fn generate_random(
    seed: u64,
    eps_x: f64,
    eps_t: f64,
    low: f64,
    high: f64,
    periodic: bool,
    period: f64,
    time_span: f64,
) -> Result<Coefficient> {
    if !(low > 0.0 && high > low && high.is_finite()) {
        return invalid(format!("coefficient range must satisfy 0 < low < high, got [{low}, {high})"));
    }
    let cells = integer_ratio(1.0, eps_x)
        .ok_or_else(|| Error::InvalidArgument(format!("1/eps_x = {} is not a positive integer", 1.0 / eps_x)))?;
    if !(eps_t > 0.0 && eps_t.is_finite()) {
        return invalid(format!("eps_t must be positive, got {eps_t}"));
    }
    let span = if periodic { period } else { time_span };
    if !(span > 0.0 && span.is_finite()) {
        return invalid(format!("coefficient time span must be positive, got {span}"));
    }
    let slabs = slab_count(span, eps_t);
    let dims = [cells, cells, slabs];
    let mut rng = SplitMix64::new(seed);
    let values: Vec<f64> = (0..cells * cells * slabs).map(|_| low + (high - low) * rng.next_f64()).collect();
    Coefficient::from_values(seed, eps_x, eps_t, periodic, period, dims, values)
}

impl Coefficient {
    pub fn from_values(
        seed: u64,
        eps_x: f64,
        eps_t: f64,
        time_periodic: bool,
        period: f64,
        dims: [usize; 3],
        values: Vec<f64>,
    ) -> Result<Self> {
        if dims.contains(&0) || values.len() != dims.iter().product::<usize>() {
            return invalid(format!("coefficient dims {dims:?} do not match {} values", values.len()));
        }
        if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return invalid("coefficient values must be finite and positive");
        }
        let alpha = values.iter().copied().fold(f64::INFINITY, f64::min);
        let beta = values.iter().copied().fold(0.0, f64::max);
        Ok(Self { seed, eps_x, eps_t, time_periodic, period, dims, values, alpha, beta })
    }

    /// Coefficient equal to `c` everywhere, with a single cell and slab.
    pub fn constant(c: f64) -> Result<Self> {
        Self::from_values(0, 1.0, f64::INFINITY, false, 0.0, [1, 1, 1], vec![c])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.alpha, self.beta)
    }

    fn flat(&self, ix: usize, iy: usize, it: usize) -> usize {
        (ix * self.dims[1] + iy) * self.dims[2] + it
    }

    pub fn cell_value(&self, ix: usize, iy: usize, it: usize) -> f64 {
        self.values[self.flat(ix, iy, it)]
    }

    fn cell_of(&self, coord: f64, n: usize) -> usize {
        ((coord * n as f64).floor() as usize).min(n - 1)
    }

    fn slab_of_time(&self, t: f64) -> usize {
        if self.dims[2] == 1 {
            return 0;
        }
        let t = if self.time_periodic { t.rem_euclid(self.period) } else { t };
        ((t / self.eps_t).floor() as usize).min(self.dims[2] - 1)
    }

    /// Value at a spatial point and time, e.g. an element centroid and a
    /// fine interval midpoint.
    pub fn value_on(&self, point: [f64; 2], t: f64) -> Result<f64> {
        let inside = point.iter().all(|c| (0.0..=1.0).contains(c));
        if !inside || !t.is_finite() || t < 0.0 {
            return invalid(format!("coefficient query ({}, {}, {t}) outside the domain", point[0], point[1]));
        }
        let ix = self.cell_of(point[0], self.dims[0]);
        let iy = self.cell_of(point[1], self.dims[1]);
        Ok(self.cell_value(ix, iy, self.slab_of_time(t)))
    }

    /// Checks that the coefficient is resolved by the mesh and time grid.
    pub fn check_compatibility(&self, mesh: &SpatialMesh, grid: &TemporalGrid) -> Result<()> {
        if self.dims[0] > 1 && integer_ratio(self.eps_x, mesh.spacing()).is_none() {
            return invalid(format!("eps_x / h = {} is not a positive integer", self.eps_x / mesh.spacing()));
        }
        if self.dims[2] > 1 {
            if integer_ratio(self.eps_t, grid.fine_step).is_none() {
                return invalid(format!("eps_t / tau = {} is not a positive integer", self.eps_t / grid.fine_step));
            }
            if self.time_periodic && integer_ratio(self.period, grid.fine_step).is_none() {
                return invalid(format!("period / tau = {} is not a positive integer", self.period / grid.fine_step));
            }
        }
        Ok(())
    }

    /// Slab index used on fine interval `g` (1-based). Computed in integer
    /// arithmetic so that periodic shifts give identical slabs.
    pub fn slab_for_interval(&self, grid: &TemporalGrid, g: usize) -> usize {
        if self.dims[2] == 1 {
            return 0;
        }
        let per_slab = integer_ratio(self.eps_t, grid.fine_step).expect("coefficient checked against the grid");
        let mut idx = g - 1;
        if self.time_periodic {
            let per_period = integer_ratio(self.period, grid.fine_step).expect("coefficient checked against the grid");
            idx %= per_period;
        }
        (idx / per_slab).min(self.dims[2] - 1)
    }

    /// Fine interval count after which the slab sequence repeats, if any.
    pub fn period_in_steps(&self, grid: &TemporalGrid) -> Option<usize> {
        if self.dims[2] == 1 {
            Some(1)
        } else if self.time_periodic {
            integer_ratio(self.period, grid.fine_step)
        } else {
            None
        }
    }

    /// Per-element values of a mesh on slab `slab`.
    pub fn element_values(&self, mesh: &SpatialMesh, slab: usize) -> Vec<f64> {
        (0..mesh.element_count())
            .map(|e| {
                let [x, y] = mesh.centroid(e);
                self.cell_value(self.cell_of(x, self.dims[0]), self.cell_of(y, self.dims[1]), slab)
            })
            .collect()
    }

    /// Serializes to the binary coefficient file format.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 8 * self.values.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.eps_x.to_le_bytes());
        out.extend_from_slice(&self.eps_t.to_le_bytes());
        out.push(u8::from(self.time_periodic));
        out.extend_from_slice(&self.period.to_le_bytes());
        for d in self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Format("not a coefficient file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported coefficient file version {version}")));
        }
        let seed = r.u64()?;
        let eps_x = r.f64()?;
        let eps_t = r.f64()?;
        let periodic = r.take(1)?[0] != 0;
        let period = r.f64()?;
        let dims = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
        let count: usize = dims.iter().product();
        let values = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after coefficient values".into()));
        }
        Self::from_values(seed, eps_x, eps_t, periodic, period, dims, values).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::File::create(path)?.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// Content hash of the serialized coefficient.
    pub fn fingerprint(&self) -> u64 {
        fingerprint_bytes(&self.to_bytes())
    }
}

pub fn fingerprint_bytes(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

pub(crate) struct ByteReader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("unexpected end of file".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
