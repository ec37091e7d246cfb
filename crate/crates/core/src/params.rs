//! The experiment contract: everything a single run depends on.

use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::geometry::{Point, Region};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum MobilityMode {
    /// Uniform jump inside `B(x, rho) ∩ S`.
    Standard { rho: f64 },
    /// Uniform jump over the 3x3 supercell neighborhood of side `rho`.
    Cellular { rho: f64 },
}

impl MobilityMode {
    pub fn rho(&self) -> f64 {
        match *self {
            MobilityMode::Standard { rho } | MobilityMode::Cellular { rho } => rho,
        }
    }

    pub fn is_cellular(&self) -> bool {
        matches!(self, MobilityMode::Cellular { .. })
    }

    /// Largest displacement a single move can produce: `rho` for the standard
    /// walk, the diagonal of a 2x2 supercell block for the cellular walk.
    pub fn max_displacement(&self) -> f64 {
        match *self {
            MobilityMode::Standard { rho } => rho,
            MobilityMode::Cellular { rho } => 2.0 * std::f64::consts::SQRT_2 * rho,
        }
    }

    pub fn default_phase_order(&self) -> PhaseOrder {
        match self {
            MobilityMode::Standard { .. } => PhaseOrder::TransmitThenMove,
            MobilityMode::Cellular { .. } => PhaseOrder::MoveThenTransmit,
        }
    }

    pub fn default_scope(&self) -> TransmissionScope {
        match self {
            MobilityMode::Standard { .. } => TransmissionScope::Euclidean,
            MobilityMode::Cellular { .. } => TransmissionScope::SameSupercell,
        }
    }

    pub fn default_burn_in(&self) -> u32 {
        match self {
            MobilityMode::Standard { .. } => 50,
            MobilityMode::Cellular { .. } => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseOrder {
    TransmitThenMove,
    MoveThenTransmit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransmissionScope {
    /// Closed ball of radius `R`.
    Euclidean,
    /// Closed ball of radius `R`, and both agents in the same supercell.
    SameSupercell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sources {
    /// One agent drawn uniformly at random.
    RandomAgent,
    /// The agents nearest to each point at t = 0.
    Points(Vec<Point>),
    /// Explicit agent indices.
    Agents(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DumpCells {
    #[default]
    Never,
    Each,
    Final,
}

/// Calibration of the unspecified positive constants. Logs are natural.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub eta1: f64,
    pub eta2: f64,
    pub c0: f64,
    pub alpha: f64,
}

impl Default for Calibration {
    fn default() -> Self {
        Self {
            eta1: 0.5,
            eta2: 2.0,
            c0: 1.0,
            alpha: 1.0,
        }
    }
}

/// Which per-step instruments the runner evaluates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instrumentation {
    /// Cell side ℓ; defaults to `R / (2 * sqrt 2)`.
    pub cell_side: f64,
    pub gamma: f64,
    pub cells: bool,
    pub supercells: bool,
    pub dump_cells: DumpCells,
    pub calibration: Calibration,
}

impl Instrumentation {
    pub fn for_radius(radius: f64) -> Self {
        Self {
            cell_side: radius / (2.0 * std::f64::consts::SQRT_2),
            gamma: 1.0,
            cells: false,
            supercells: false,
            dump_cells: DumpCells::Never,
            calibration: Calibration::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub region: Region,
    pub n: usize,
    /// Transmission radius `R`.
    pub radius: f64,
    pub k: u32,
    pub mobility: MobilityMode,
    pub phase_order: PhaseOrder,
    pub scope: TransmissionScope,
    pub sources: Sources,
    pub seed: u64,
    pub max_steps: u64,
    pub burn_in: u32,
    pub instrumentation: Instrumentation,
}

impl SimParams {
    /// Single random source, mode-dependent defaults for everything else.
    pub fn new(region: Region, n: usize, radius: f64, mobility: MobilityMode) -> Self {
        Self {
            region,
            n,
            radius,
            k: 1,
            mobility,
            phase_order: mobility.default_phase_order(),
            scope: mobility.default_scope(),
            sources: Sources::RandomAgent,
            seed: 0,
            max_steps: 10_000,
            burn_in: mobility.default_burn_in(),
            instrumentation: Instrumentation::for_radius(radius),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_sources(mut self, sources: Sources) -> Self {
        self.sources = sources;
        self
    }

    pub fn rho(&self) -> f64 {
        self.mobility.rho()
    }

    /// Checks every structural invariant. `R = 0` is allowed (it only informs
    /// coincident agents), which the sub-threshold experiments rely on.
    pub fn validate(&self) -> Result<(), SimError> {
        self.region.validate()?;
        let bad = |m: String| Err(SimError::InvalidParams(m));
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if !(self.radius.is_finite() && self.radius >= 0.0) {
            return bad(format!("transmission radius must be >= 0, got {}", self.radius));
        }
        let rho = self.rho();
        if !(rho.is_finite() && rho >= 0.0) {
            return bad(format!("move radius must be >= 0, got {rho}"));
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.max_steps == 0 {
            return bad("max_steps must be at least 1".into());
        }
        if self.scope == TransmissionScope::SameSupercell && !self.mobility.is_cellular() {
            return bad("same_supercell scope requires cellular mobility".into());
        }
        if self.mobility.is_cellular() && rho <= 0.0 {
            return bad("cellular mobility needs a positive supercell side".into());
        }
        match &self.sources {
            Sources::RandomAgent => {}
            Sources::Points(pts) => {
                if pts.is_empty() {
                    return bad("source point set is empty".into());
                }
                if let Some(p) = pts.iter().find(|p| !self.region.contains(**p)) {
                    return Err(crate::error::GeometryError::PointOutside(*p).into());
                }
            }
            Sources::Agents(ids) => {
                if ids.is_empty() {
                    return bad("source agent list is empty".into());
                }
                if let Some(i) = ids.iter().find(|&&i| i >= self.n) {
                    return bad(format!("source agent {i} out of range for n = {}", self.n));
                }
            }
        }
        let ins = &self.instrumentation;
        let needs_cells = ins.cells || ins.supercells || self.mobility.is_cellular();
        if needs_cells && !(ins.cell_side.is_finite() && ins.cell_side > 0.0) {
            return bad(format!("cell side must be positive, got {}", ins.cell_side));
        }
        if !(ins.gamma > 0.0 && ins.gamma <= 1.0) {
            return bad(format!("gamma must lie in (0, 1], got {}", ins.gamma));
        }
        if ins.supercells && !self.mobility.is_cellular() {
            return bad("supercell instrumentation requires cellular mobility".into());
        }
        if self.mobility.is_cellular() && !is_multiple(rho, ins.cell_side) {
            return Err(crate::error::MobilityError::SupergridMismatch {
                rho,
                cell_side: ins.cell_side,
            }
            .into());
        }
        Ok(())
    }
}

/// `value` is a positive integer multiple of `unit`, up to float noise.
pub fn is_multiple(value: f64, unit: f64) -> bool {
    let q = value / unit;
    q >= 1.0 - 1e-9 && (q - q.round()).abs() <= 1e-9 * q.max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> SimParams {
        SimParams::new(
            Region::square(24.0).unwrap(),
            100,
            6.0,
            MobilityMode::Standard { rho: 2.0 },
        )
    }

    #[test]
    fn defaults_follow_mobility_mode() {
        let p = base();
        assert_eq!(p.phase_order, PhaseOrder::TransmitThenMove);
        assert_eq!(p.scope, TransmissionScope::Euclidean);
        assert_eq!(p.burn_in, 50);
        assert!(p.validate().is_ok());
        let mut c = SimParams::new(
            Region::square(24.0).unwrap(),
            100,
            6.0,
            MobilityMode::Cellular { rho: 12.0 },
        );
        c.instrumentation.cell_side = 4.0;
        assert_eq!(c.phase_order, PhaseOrder::MoveThenTransmit);
        assert_eq!(c.scope, TransmissionScope::SameSupercell);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn rejects_bad_combinations() {
        let mut p = base();
        p.scope = TransmissionScope::SameSupercell;
        assert!(p.validate().is_err());

        let mut c = base();
        c.mobility = MobilityMode::Cellular { rho: 10.0 };
        c.instrumentation.cell_side = 4.0;
        assert!(matches!(c.validate(), Err(SimError::Mobility(_))));

        let mut p = base();
        p.sources = Sources::Points(vec![Point::new(30.0, 1.0)]);
        assert!(p.validate().is_err());

        let mut p = base();
        p.max_steps = 0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn multiples() {
        assert!(is_multiple(24.0, 4.0));
        assert!(is_multiple(0.3, 0.1));
        assert!(!is_multiple(24.0, 5.0));
        assert!(!is_multiple(2.0, 4.0));
    }
}
