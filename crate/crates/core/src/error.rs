use thiserror::Error;

use crate::geometry::{CellIndex, Point};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid region: {0}")]
    InvalidRegion(String),
    #[error("cell side must be positive and finite, got {0}")]
    InvalidCellSide(f64),
    #[error("gamma must lie in (0, 1], got {0}")]
    InvalidGamma(f64),
    #[error("cell side {side} is not smaller than the region diameter {diameter}")]
    DegenerateGrid { side: f64, diameter: f64 },
    #[error("no cell meets the area threshold")]
    EmptyCover,
    #[error("cell cover is not connected")]
    DisconnectedCover,
    #[error("cell {0} is not in the cover")]
    NotInCover(CellIndex),
    #[error("point {0} lies outside the region")]
    PointOutside(Point),
    #[error("source set is empty")]
    EmptySourceSet,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MobilityError {
    #[error("move radius must be non-negative and finite, got {0}")]
    InvalidRadius(f64),
    #[error("rejection sampling gave up after {0} attempts")]
    RejectionExhausted(u64),
    #[error("move radius {rho} is not an integer multiple of the cell side {cell_side}")]
    SupergridMismatch { rho: f64, cell_side: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Mobility(#[from] MobilityError),
    #[error("step {0} would exceed max_steps")]
    StepLimit(u64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InstrumentError {
    #[error("transmission radius must exceed 1 for h-hat, got {0}")]
    RadiusTooSmall(f64),
    #[error("log argument must be positive, got {0}")]
    NonPositiveLogArgument(f64),
    #[error("h-hat {0} exceeds the supported maximum of 62 states")]
    TooManyStates(u32),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("need at least 3 distinct x values, got {0}")]
    TooFewPoints(usize),
    #[error("all x values are equal")]
    DegenerateX,
}
