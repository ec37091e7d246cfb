//! Parsimonious flooding over mobile geometric networks: simulator,
//! instruments and experiment harness.

pub mod cli;
pub mod epidemic;
pub mod experiments;
pub mod error;
pub mod geometry;
pub mod instrument;
pub mod mobility;
pub mod params;
pub mod spatial;

pub use epidemic::{run, Outcome, RunRecord, Simulation};
pub use error::{GeometryError, InstrumentError, MobilityError, SimError};
pub use geometry::{CellGrid, CellIndex, Point, Region};
pub use params::{MobilityMode, PhaseOrder, SimParams, Sources, TransmissionScope};
