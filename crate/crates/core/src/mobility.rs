//! Agent movement: the standard geometric random walk, the cellular
//! (supercell) walk, and stationary initialization by burn-in.
//!
//! All randomness comes from [`RngStream`], a ChaCha8 generator
//! (`rand_chacha` 0.3) keyed by a 64-bit seed and a stream number. The same
//! `(seed, stream)` pair yields the same sequence on every platform.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::MobilityError;
use crate::geometry::{CellGrid, Point, Region};
use crate::params::{MobilityMode, SimParams};

pub const MAX_REJECTIONS: u64 = 1_000_000;

/// Streams used by a single run.
pub mod streams {
    pub const INIT: u64 = 0;
    pub const MOVE: u64 = 1;
    pub const SOURCE: u64 = 2;
}

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Uniform in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

/// Supercells of side `rho`; for the cellular walk they must align with the
/// cell grid (ρ a multiple of ℓ).
pub type SupercellGrid = CellGrid;

/// Builds the supercell grid for a region, using γ for the cover.
pub fn supercell_grid(region: &Region, rho: f64, gamma: f64) -> Result<SupercellGrid, MobilityError> {
    Ok(CellGrid::build(region, rho, gamma)?)
}

/// One step of the standard walk: uniform on `B(x, rho) ∩ S` by rejection.
pub fn walk_step(
    x: Point,
    rho: f64,
    region: &Region,
    rng: &mut RngStream,
) -> Result<Point, MobilityError> {
    if !(rho.is_finite() && rho >= 0.0) {
        return Err(MobilityError::InvalidRadius(rho));
    }
    if rho == 0.0 {
        return Ok(x);
    }
    for _ in 0..MAX_REJECTIONS {
        let r = rho * rng.unit().sqrt();
        let theta = std::f64::consts::TAU * rng.unit();
        let p = Point::new(x.x + r * theta.cos(), x.y + r * theta.sin());
        if region.contains(p) {
            debug_assert!(p.dist(x) <= rho * (1.0 + 1e-12));
            return Ok(p);
        }
    }
    Err(MobilityError::RejectionExhausted(MAX_REJECTIONS))
}

/// Slots of the supercells an agent at `x` may jump into: its own supercell
/// and the covered adjacent ones.
pub fn cellular_targets(x: Point, sgrid: &SupercellGrid) -> Vec<usize> {
    let c = sgrid.locate(x);
    let own = sgrid.slot(c).expect("locate clamps into the grid");
    let mut out = vec![own];
    out.extend(sgrid.adjacent_slots(own));
    out.sort_unstable();
    out
}

/// One step of the cellular walk: uniform on `(∪ N(C)) ∩ S` where `C` is the
/// supercell holding `x`.
pub fn cellular_walk_step(
    x: Point,
    sgrid: &SupercellGrid,
    region: &Region,
    rng: &mut RngStream,
) -> Result<Point, MobilityError> {
    let targets = cellular_targets(x, sgrid);
    let side = sgrid.side();
    let (mut lo_c, mut hi_c, mut lo_r, mut hi_r) = (i32::MAX, i32::MIN, i32::MAX, i32::MIN);
    for &s in &targets {
        let c = sgrid.index_of_slot(s);
        lo_c = lo_c.min(c.col);
        hi_c = hi_c.max(c.col);
        lo_r = lo_r.min(c.row);
        hi_r = hi_r.max(c.row);
    }
    let (x0, y0) = (lo_c as f64 * side, lo_r as f64 * side);
    let (w, h) = ((hi_c - lo_c + 1) as f64 * side, (hi_r - lo_r + 1) as f64 * side);
    for _ in 0..MAX_REJECTIONS {
        let p = Point::new(x0 + w * rng.unit(), y0 + h * rng.unit());
        if !region.contains(p) {
            continue;
        }
        let slot = sgrid.slot(sgrid.locate(p)).expect("locate clamps into the grid");
        if targets.binary_search(&slot).is_ok() {
            return Ok(p);
        }
    }
    Err(MobilityError::RejectionExhausted(MAX_REJECTIONS))
}

/// A resolved movement model, ready to step agents.
#[derive(Debug, Clone)]
pub enum Mover {
    Standard { rho: f64 },
    Cellular { sgrid: SupercellGrid },
}

impl Mover {
    pub fn new(mode: MobilityMode, region: &Region, gamma: f64) -> Result<Self, MobilityError> {
        match mode {
            MobilityMode::Standard { rho } => {
                if !(rho.is_finite() && rho >= 0.0) {
                    return Err(MobilityError::InvalidRadius(rho));
                }
                Ok(Mover::Standard { rho })
            }
            MobilityMode::Cellular { rho } => Ok(Mover::Cellular {
                sgrid: supercell_grid(region, rho, gamma)?,
            }),
        }
    }

    pub fn supercells(&self) -> Option<&SupercellGrid> {
        match self {
            Mover::Standard { .. } => None,
            Mover::Cellular { sgrid } => Some(sgrid),
        }
    }

    pub fn step(&self, x: Point, region: &Region, rng: &mut RngStream) -> Result<Point, MobilityError> {
        match self {
            Mover::Standard { rho } => walk_step(x, *rho, region, rng),
            Mover::Cellular { sgrid } => cellular_walk_step(x, sgrid, region, rng),
        }
    }

    /// Moves every position once, in index order.
    pub fn step_all(
        &self,
        positions: &mut [Point],
        region: &Region,
        rng: &mut RngStream,
    ) -> Result<(), MobilityError> {
        if matches!(self, Mover::Standard { rho } if *rho == 0.0) {
            return Ok(());
        }
        for p in positions.iter_mut() {
            *p = self.step(*p, region, rng)?;
        }
        Ok(())
    }
}

/// Uniform point in the region.
pub fn uniform_point(region: &Region, rng: &mut RngStream) -> Point {
    let e = region.extent();
    loop {
        let p = Point::new(e * rng.unit(), e * rng.unit());
        if region.contains(p) {
            return p;
        }
    }
}

/// `n` independent uniform positions followed by `burn_in` mobility steps.
pub fn init_positions_with(
    region: &Region,
    n: usize,
    mover: &Mover,
    burn_in: u32,
    rng: &mut RngStream,
) -> Result<Vec<Point>, MobilityError> {
    let mut pts: Vec<Point> = (0..n).map(|_| uniform_point(region, rng)).collect();
    for _ in 0..burn_in {
        mover.step_all(&mut pts, region, rng)?;
    }
    Ok(pts)
}

/// Initial configuration for a run: draws from the `INIT` stream of the
/// run's seed, so it is fully determined by `params`.
pub fn init_positions(params: &SimParams) -> Result<Vec<Point>, MobilityError> {
    let mover = Mover::new(params.mobility, &params.region, params.instrumentation.gamma)?;
    let mut rng = RngStream::new(params.seed, streams::INIT);
    init_positions_with(&params.region, params.n, &mover, params.burn_in, &mut rng)
}
