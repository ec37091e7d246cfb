//! Runtime checkers evaluated alongside a run.

pub mod cells;
pub mod ladder;

pub use cells::*;
pub use ladder::*;

use serde::{Deserialize, Serialize};

use crate::epidemic::{Agent, Snapshot};
use crate::error::SimError;
use crate::geometry::CellGrid;
use crate::params::{DumpCells, SimParams};

/// Cell-level readings for one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStep {
    pub white_cells: usize,
    pub red_cells: usize,
    pub black_cells: usize,
    pub grey_cells: usize,
    pub empty_cells: usize,
    pub regular: bool,
    /// Violations of properties a, b, c.
    pub violations: [usize; 3],
    pub wavefront_max: Option<u32>,
    pub wavefront_mean: Option<f64>,
    /// Covered cells outside the density bounds (empty cells included).
    pub density_violations: usize,
    /// Speed checks against the previous configuration.
    pub red_speed: Tally,
    pub red_close_speed: Tally,
    pub dump: Option<String>,
}

/// Supercell-level readings for one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupercellStep {
    pub states: Vec<SupercellStates>,
    pub regular: bool,
    pub unclassified: usize,
    pub black_neighbor: usize,
    pub speed: Tally,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInstruments {
    pub step: u64,
    pub cells: Option<CellStep>,
    pub supercells: Option<SupercellStep>,
}

/// Run-level aggregates of the per-step instruments.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunAudits {
    /// Configurations whose cell classification is regular.
    pub regular: Tally,
    /// Configurations without grey cells.
    pub grey_free: Tally,
    /// Configurations without empty cells.
    pub empty_free: Tally,
    /// (covered cell, configuration) pairs inside the density bounds.
    pub density: Tally,
    pub red_speed: Tally,
    pub red_close_speed: Tally,
    pub red_close_drop: u32,
    pub h_hat: Option<u32>,
    pub supercell_regular: Tally,
    pub supercell_speed: Tally,
    /// Supercell speed checks out of supercell-regular configurations.
    pub supercell_speed_regular: Tally,
    pub transitions: TransitionTally,
    /// Transitions out of configurations that are supercell-regular.
    pub transitions_regular: TransitionTally,
    pub spread: SpreadTallies,
}

impl RunAudits {
    pub fn merge(&mut self, o: &RunAudits) {
        self.regular.merge(o.regular);
        self.grey_free.merge(o.grey_free);
        self.empty_free.merge(o.empty_free);
        self.density.merge(o.density);
        self.red_speed.merge(o.red_speed);
        self.red_close_speed.merge(o.red_close_speed);
        self.red_close_drop = self.red_close_drop.max(o.red_close_drop);
        self.h_hat = self.h_hat.or(o.h_hat);
        self.supercell_regular.merge(o.supercell_regular);
        self.supercell_speed.merge(o.supercell_speed);
        self.supercell_speed_regular.merge(o.supercell_speed_regular);
        self.transitions.merge(&o.transitions);
        self.transitions_regular.merge(&o.transitions_regular);
        self.spread.merge(&o.spread);
    }
}

struct CellAudit {
    grid: CellGrid,
    eta1: f64,
    eta2: f64,
    drop: u32,
    dump: DumpCells,
    prev: Option<CellStates>,
}

struct SupercellAudit {
    grid: CellGrid,
    sgrid: CellGrid,
    ladder: Ladder,
    members: SupercellMembers,
    prev_counts: Option<Vec<SupercellCounts>>,
    after_move: Option<Vec<CellCounts>>,
    trace: Vec<Vec<SupercellStates>>,
    regular: Vec<bool>,
}

/// Stateful observer that evaluates the enabled instruments step by step.
pub struct Auditor {
    cells: Option<CellAudit>,
    supercells: Option<SupercellAudit>,
    steps: Vec<StepInstruments>,
    audits: RunAudits,
}

impl Auditor {
    /// `None` when the run has no instruments enabled.
    pub fn for_run(params: &SimParams, supercells: Option<&CellGrid>) -> Result<Option<Self>, SimError> {
        let ins = &params.instrumentation;
        let cal = ins.calibration;
        let grid = if ins.cells || ins.supercells {
            Some(CellGrid::build(&params.region, ins.cell_side, ins.gamma)?)
        } else {
            None
        };
        let drop = red_close_drop(params.rho(), ins.cell_side);
        let cells = match (&grid, ins.cells) {
            (Some(g), true) => Some(CellAudit {
                grid: g.clone(),
                eta1: cal.eta1,
                eta2: cal.eta2,
                drop,
                dump: ins.dump_cells,
                prev: None,
            }),
            _ => None,
        };
        let supercells = match (supercells, &grid, ins.supercells) {
            (Some(sg), Some(g), true) => {
                let ladder = Ladder::new(&cal, params.radius, params.rho(), params.n)
                    .map_err(|e| SimError::InvalidParams(e.to_string()))?;
                Some(SupercellAudit {
                    members: SupercellMembers::new(g, sg),
                    grid: g.clone(),
                    sgrid: sg.clone(),
                    ladder,
                    prev_counts: None,
                    after_move: None,
                    trace: Vec::new(),
                    regular: Vec::new(),
                })
            }
            _ => None,
        };
        if cells.is_none() && supercells.is_none() {
            return Ok(None);
        }
        let audits = RunAudits {
            red_close_drop: drop,
            h_hat: supercells.as_ref().map(|s| s.ladder.h_hat),
            ..RunAudits::default()
        };
        Ok(Some(Self {
            cells,
            supercells,
            steps: Vec::new(),
            audits,
        }))
    }

    pub fn after_move(&mut self, _step: u64, agents: &[Agent]) {
        if let Some(sc) = &mut self.supercells {
            sc.after_move = Some(cell_counts(agents, &sc.grid));
        }
    }

    pub fn end_of_step(&mut self, snapshot: &Snapshot) {
        let cells = self
            .cells
            .as_mut()
            .map(|c| c.observe(snapshot, &mut self.audits));
        let supercells = self
            .supercells
            .as_mut()
            .map(|s| s.observe(snapshot, &mut self.audits));
        self.steps.push(StepInstruments {
            step: snapshot.step,
            cells,
            supercells,
        });
    }

    /// Per-step readings and the run-level aggregates.
    pub fn finish(mut self) -> (Vec<StepInstruments>, RunAudits) {
        if let Some(sc) = &self.supercells {
            let h = sc.ladder.h_hat;
            self.audits.transitions = transition_audit(&sc.trace, &sc.sgrid, h);
            self.audits.transitions_regular =
                transition_audit_where(&sc.trace, &sc.sgrid, h, |t| sc.regular[t]);
        }
        if let Some(c) = &self.cells {
            if c.dump == DumpCells::Final {
                if let (Some(last), Some(prev)) = (self.steps.last_mut(), &c.prev) {
                    if let Some(cs) = last.cells.as_mut() {
                        cs.dump = Some(encode_cells(prev, &c.grid));
                    }
                }
            }
        }
        (self.steps, self.audits)
    }
}

impl CellAudit {
    fn observe(&mut self, snapshot: &Snapshot, audits: &mut RunAudits) -> CellStep {
        let g = &self.grid;
        let counts = cell_counts(&snapshot.agents, g);
        let states = CellStates::from_counts(&counts, g);
        let report = is_regular(&states, g);
        let wave = wavefront_distances(&states, g);
        let (wavefront_max, wavefront_mean) = match wave.white_stats(&states) {
            Some((m, mean)) => (Some(m), Some(mean)),
            None => (None, None),
        };
        let density = density_violations(&counts, g, self.eta1, self.eta2).len();
        let (red_speed, red_close) = match &self.prev {
            Some(prev) => (
                red_wave_speed(prev, &states, g),
                red_close_speed(prev, &states, g, self.drop),
            ),
            None => (Tally::default(), Tally::default()),
        };
        let grey = states.count(CellState::Grey);
        let empty = states.count(CellState::Empty);

        audits.regular.record(report.regular);
        audits.grey_free.record(grey == 0);
        audits.empty_free.record(empty == 0);
        let covered = g.cover_len() as u64;
        audits.density.merge(Tally {
            instances: covered,
            holds: covered - density as u64,
        });
        audits.red_speed.merge(red_speed);
        audits.red_close_speed.merge(red_close);

        let step = CellStep {
            white_cells: states.count(CellState::White),
            red_cells: states.count(CellState::Red),
            black_cells: states.count(CellState::Black),
            grey_cells: grey,
            empty_cells: empty,
            regular: report.regular,
            violations: [
                report.count(RegularityProperty::NoGrey),
                report.count(RegularityProperty::WhiteTouchesRed),
                report.count(RegularityProperty::NoWhiteNextToBlack),
            ],
            wavefront_max,
            wavefront_mean,
            density_violations: density,
            red_speed,
            red_close_speed: red_close,
            dump: (self.dump == DumpCells::Each).then(|| encode_cells(&states, g)),
        };
        self.prev = Some(states);
        step
    }
}

impl SupercellAudit {
    fn observe(&mut self, snapshot: &Snapshot, audits: &mut RunAudits) -> SupercellStep {
        let sg = &self.sgrid;
        let counts = supercell_counts(&snapshot.agents, sg);
        let states = classify_supercells(&counts, sg, &self.ladder);
        let report = supercell_regularity(&states, sg, self.ladder.h_hat);
        let speed = match self.trace.last() {
            Some(prev) => supercell_wave_speed(prev, &states, sg),
            None => Tally::default(),
        };
        audits.supercell_regular.record(report.regular);
        audits.supercell_speed.merge(speed);
        if self.regular.last() == Some(&true) {
            audits.supercell_speed_regular.merge(speed);
        }

        if let (Some(before), Some(prev_states), Some(after_move)) =
            (&self.prev_counts, self.trace.last(), self.after_move.take())
        {
            let tallies = spread_audit(&SpreadInputs {
                ladder: &self.ladder,
                sgrid: sg,
                members: &self.members,
                counts_before: before,
                states_before: prev_states,
                cells_after_move: &after_move,
                counts_after: &counts,
            });
            audits.spread.merge(&tallies);
        }

        self.prev_counts = Some(counts);
        self.trace.push(states.clone());
        self.regular.push(report.regular);
        SupercellStep {
            regular: report.regular,
            unclassified: report.unclassified.len(),
            black_neighbor: report.black_neighbor.len(),
            speed,
            states,
        }
    }
}
