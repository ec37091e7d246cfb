//! Seeded multi-replica experiments.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::epidemic::{self, ChainCheck, Outcome, RunRecord};
use crate::error::{FitError, SimError};
use crate::geometry::{self, Point, Region};
use crate::instrument::RunAudits;
use crate::mobility::{self, streams, RngStream};
use crate::params::{Instrumentation, MobilityMode, SimParams, Sources};
use crate::spatial::SpatialHash;

/// Values swept over; an empty axis keeps the base value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepAxes {
    /// Square side, or disk diameter.
    pub l: Vec<f64>,
    pub radius: Vec<f64>,
    pub rho: Vec<f64>,
    pub k: Vec<u32>,
    pub n: Vec<usize>,
    pub sources: Vec<Sources>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub base: SimParams,
    pub axes: SweepAxes,
    pub replicas: u32,
    /// Derive `n = floor(area)` at every sweep point.
    pub density_one: bool,
    /// Keep full run records (per-step series) in the result.
    pub keep_records: bool,
}

impl ExperimentPlan {
    pub fn new(base: SimParams, replicas: u32) -> Self {
        Self {
            base,
            axes: SweepAxes::default(),
            replicas,
            density_one: false,
            keep_records: false,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.replicas == 0 {
            return Err(SimError::InvalidParams("replicas must be at least 1".into()));
        }
        for p in self.points() {
            p.validate()?;
        }
        Ok(())
    }

    /// Parameters of every sweep point, in axis order (L outermost).
    pub fn points(&self) -> Vec<SimParams> {
        fn axis<T: Clone>(v: &[T]) -> Vec<Option<T>> {
            if v.is_empty() {
                vec![None]
            } else {
                v.iter().cloned().map(Some).collect()
            }
        }
        let default_cell = Instrumentation::for_radius(self.base.radius).cell_side;
        let derived_cell = (self.base.instrumentation.cell_side - default_cell).abs() <= 1e-12 * default_cell;
        let mut out = Vec::new();
        for l in axis(&self.axes.l) {
            for r in axis(&self.axes.radius) {
                for rho in axis(&self.axes.rho) {
                    for k in axis(&self.axes.k) {
                        for n in axis(&self.axes.n) {
                            for src in axis(&self.axes.sources) {
                                let mut p = self.base.clone();
                                if let Some(l) = l {
                                    p.region = match p.region {
                                        Region::Square { .. } => Region::Square { side: l },
                                        Region::Disk { .. } => Region::Disk { radius: l / 2.0 },
                                    };
                                }
                                if let Some(r) = r {
                                    p.radius = r;
                                    if derived_cell {
                                        p.instrumentation.cell_side =
                                            Instrumentation::for_radius(r).cell_side;
                                    }
                                }
                                if let Some(rho) = rho {
                                    p.mobility = match p.mobility {
                                        MobilityMode::Standard { .. } => MobilityMode::Standard { rho },
                                        MobilityMode::Cellular { .. } => MobilityMode::Cellular { rho },
                                    };
                                }
                                if let Some(k) = k {
                                    p.k = k;
                                }
                                if let Some(n) = n {
                                    p.n = n;
                                }
                                if let Some(s) = src {
                                    p.sources = s;
                                }
                                if self.density_one {
                                    p.n = p.region.area().floor() as usize;
                                }
                                out.push(p);
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// What a single run reports back to the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub point: usize,
    pub replica: u32,
    pub seed: u64,
    pub outcome: Option<Outcome>,
    pub error: Option<String>,
    pub chain: ChainCheck,
    /// Eccentricity of the source positions at t = 0.
    pub ecc: Option<f64>,
    pub audits: Option<RunAudits>,
}

impl RunSummary {
    pub fn completion_time(&self) -> Option<u64> {
        self.outcome.and_then(|o| o.completion_time())
    }

    pub fn failed(&self) -> bool {
        !matches!(self.outcome, Some(Outcome::Completed(_)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Aggregate {
    pub runs: usize,
    pub completed: usize,
    pub failed: usize,
    pub exhausted: usize,
    pub errors: usize,
    /// Statistics of completion times over completed runs.
    pub median: Option<f64>,
    pub mean: Option<f64>,
    pub q10: Option<f64>,
    pub q90: Option<f64>,
}

impl Aggregate {
    pub fn of(runs: &[RunSummary]) -> Self {
        let mut times: Vec<f64> = runs
            .iter()
            .filter_map(|r| r.completion_time().map(|t| t as f64))
            .collect();
        times.sort_by(f64::total_cmp);
        let count = |f: fn(&Outcome) -> bool| runs.iter().filter(|r| r.outcome.as_ref().is_some_and(f)).count();
        Self {
            runs: runs.len(),
            completed: times.len(),
            failed: count(|o| matches!(o, Outcome::Failed(_))),
            exhausted: count(|o| matches!(o, Outcome::Exhausted(_))),
            errors: runs.iter().filter(|r| r.error.is_some()).count(),
            median: quantile(&times, 0.5),
            mean: (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64),
            q10: quantile(&times, 0.1),
            q90: quantile(&times, 0.9),
        }
    }
}

/// Linearly interpolated quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

pub fn median(values: &[f64]) -> Option<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile(&v, 0.5)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub params: SimParams,
    pub runs: Vec<RunSummary>,
    pub aggregate: Aggregate,
}

impl SweepPoint {
    pub fn diameter(&self) -> f64 {
        self.params.region.diameter()
    }

    pub fn median_time(&self) -> Option<f64> {
        self.aggregate.median
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    /// Full records, `[point][replica]`, when the plan keeps them.
    #[serde(skip)]
    pub records: Vec<Vec<Option<RunRecord>>>,
}

impl SweepResult {
    /// Instrument tallies merged over every run of the sweep.
    pub fn audits(&self) -> RunAudits {
        let mut all = RunAudits::default();
        for r in self.points.iter().flat_map(|p| &p.runs) {
            if let Some(a) = &r.audits {
                all.merge(a);
            }
        }
        all
    }

    pub fn chain(&self) -> ChainCheck {
        let mut c = ChainCheck::default();
        for r in self.points.iter().flat_map(|p| &p.runs) {
            c.checked += r.chain.checked;
            c.violations += r.chain.violations;
            c.max_ratio = c.max_ratio.max(r.chain.max_ratio);
        }
        c
    }
}

fn summarize(point: usize, replica: u32, params: &SimParams) -> (RunSummary, Option<RunRecord>) {
    let mut s = RunSummary {
        point,
        replica,
        seed: params.seed,
        outcome: None,
        error: None,
        chain: ChainCheck::default(),
        ecc: None,
        audits: None,
    };
    match epidemic::run(params) {
        Ok(rec) => {
            s.outcome = Some(rec.outcome);
            s.chain = rec.chain;
            s.ecc = geometry::eccentricity(&rec.source_positions, &params.region).ok();
            s.audits = rec.audits.clone();
            (s, Some(rec))
        }
        Err(e) => {
            s.error = Some(e.to_string());
            (s, None)
        }
    }
}

/// Runs every (point, replica) pair in parallel. Replica `i` uses seed
/// `base.seed + i` at every point, so points are paired by seed.
pub fn replicate(plan: &ExperimentPlan) -> Result<SweepResult, SimError> {
    if plan.replicas == 0 {
        return Err(SimError::InvalidParams("replicas must be at least 1".into()));
    }
    let points = plan.points();
    let jobs: Vec<(usize, u32)> = (0..points.len())
        .flat_map(|p| (0..plan.replicas).map(move |r| (p, r)))
        .collect();
    let results: Vec<(RunSummary, Option<RunRecord>)> = jobs
        .par_iter()
        .map(|&(p, r)| {
            let params = points[p].clone().with_seed(plan.base.seed.wrapping_add(r as u64));
            let (s, rec) = summarize(p, r, &params);
            (s, rec.filter(|_| plan.keep_records))
        })
        .collect();
    let mut out = SweepResult {
        points: Vec::with_capacity(points.len()),
        records: Vec::new(),
    };
    let mut it = results.into_iter();
    for (i, params) in points.into_iter().enumerate() {
        let (runs, recs): (Vec<_>, Vec<_>) = it.by_ref().take(plan.replicas as usize).unzip();
        debug_assert!(runs.iter().all(|r| r.point == i));
        out.points.push(SweepPoint {
            aggregate: Aggregate::of(&runs),
            params,
            runs,
        });
        if plan.keep_records {
            out.records.push(recs);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares of `y` on `x`.
pub fn scaling_fit(points: &[(f64, f64)]) -> Result<Fit, FitError> {
    let mut xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    if xs.len() == 1 {
        return Err(FitError::DegenerateX);
    }
    if xs.len() < 3 {
        return Err(FitError::TooFewPoints(xs.len()));
    }
    // sums in a fixed order keep the fit independent of input order
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let n = sorted.len() as f64;
    let mx = sorted.iter().map(|p| p.0).sum::<f64>() / n;
    let my = sorted.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = sorted.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = sorted.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = sorted.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = sorted
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let r_squared = if ss_tot <= f64::EPSILON * my.abs().max(1.0) {
        1.0
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    Ok(Fit {
        slope,
        intercept,
        r_squared,
    })
}

/// Agents with no other agent within closed distance `radius`, by spatial hashing.
pub fn isolated_agents(positions: &[Point], radius: f64, extent: f64) -> Vec<usize> {
    let bucket = if radius > 0.0 { radius } else { (extent / 256.0).max(f64::MIN_POSITIVE) };
    let mut hash = SpatialHash::new(extent, bucket);
    hash.rebuild(positions, |_| true);
    (0..positions.len())
        .filter(|&i| {
            let mut alone = true;
            hash.for_each_within(positions, positions[i], radius, |j| alone &= j == i);
            alone
        })
        .collect()
}

/// O(n²) reference for [`isolated_agents`].
pub fn isolated_agents_brute(positions: &[Point], radius: f64) -> Vec<usize> {
    let r2 = radius * radius;
    (0..positions.len())
        .filter(|&i| {
            positions
                .iter()
                .enumerate()
                .all(|(j, q)| j == i || positions[i].dist2(*q) > r2)
        })
        .collect()
}

/// Expected isolated agents for `n` uniform agents at density one:
/// `n (1 - πR²/n)^(n-1)`, zero once `πR² >= n`.
pub fn isolated_bound(n: usize, radius: f64) -> f64 {
    let nf = n as f64;
    let p = std::f64::consts::PI * radius * radius / nf;
    if p >= 1.0 {
        0.0
    } else {
        nf * (1.0 - p).powf(nf - 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsolatedCount {
    pub count: usize,
    pub bound: f64,
}

/// Places `n` agents uniformly on the `√n × √n` square and counts isolated ones.
pub fn isolated_count(n: usize, radius: f64, rng: &mut RngStream) -> Result<IsolatedCount, SimError> {
    let region = Region::square((n as f64).sqrt())?;
    let pts: Vec<Point> = (0..n).map(|_| mobility::uniform_point(&region, rng)).collect();
    Ok(IsolatedCount {
        count: isolated_agents(&pts, radius, region.extent()).len(),
        bound: isolated_bound(n, radius),
    })
}

/// Mean isolated count over `trials` seeded placements (trial `i` uses `seed + i`).
pub fn isolated_trials(n: usize, radius: f64, trials: u32, seed: u64) -> Result<Vec<IsolatedCount>, SimError> {
    (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(seed.wrapping_add(i as u64), streams::INIT);
            isolated_count(n, radius, &mut rng)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct MultiSourceRecord {
    pub record: RunRecord,
    /// `ecc(A, S)` of the requested source points.
    pub ecc: f64,
}

pub fn multi_source_run(params: &SimParams) -> Result<MultiSourceRecord, SimError> {
    let Sources::Points(a) = &params.sources else {
        return Err(SimError::InvalidParams("multi-source runs need explicit source points".into()));
    };
    let ecc = geometry::eccentricity(a, &params.region)?;
    Ok(MultiSourceRecord {
        record: epidemic::run(params)?,
        ecc,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub trials: u32,
    pub isolated_sources_found: u32,
    pub failures: u32,
    /// Trials without any isolated agent.
    pub skipped: u32,
}

/// For each trial, starts 1-flooding from the lowest-index agent that is
/// isolated at t = 0 and counts non-completions.
pub fn threshold_experiment(params: &SimParams, trials: u32) -> Result<ThresholdResult, SimError> {
    params.validate()?;
    let per_trial: Vec<Result<Option<bool>, SimError>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut p = params.clone().with_seed(params.seed.wrapping_add(i as u64));
            let pos = mobility::init_positions(&p)?;
            let Some(&src) = isolated_agents(&pos, p.radius, p.region.extent()).first() else {
                return Ok(None);
            };
            p.sources = Sources::Agents(vec![src]);
            let rec = epidemic::run(&p)?;
            Ok(Some(!matches!(rec.outcome, Outcome::Completed(_))))
        })
        .collect();
    let mut out = ThresholdResult {
        trials,
        ..Default::default()
    };
    for r in per_trial {
        match r? {
            None => out.skipped += 1,
            Some(failed) => {
                out.isolated_sources_found += 1;
                out.failures += failed as u32;
            }
        }
    }
    Ok(out)
}

/// Largest ratio between median completion times across sweep points;
/// `None` when some point has no completed run.
pub fn median_spread(result: &SweepResult) -> Option<f64> {
    let m: Option<Vec<f64>> = result.points.iter().map(|p| p.median_time()).collect();
    let m = m?;
    let hi = m.iter().cloned().fold(f64::MIN, f64::max);
    let lo = m.iter().cloned().fold(f64::MAX, f64::min);
    (lo > 0.0).then(|| hi / lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small() -> SimParams {
        SimParams::new(
            Region::square(16.0).unwrap(),
            256,
            3.0,
            MobilityMode::Standard { rho: 1.0 },
        )
        .with_seed(5)
    }

    #[test]
    fn replicas_are_reproducible() {
        let plan = ExperimentPlan::new(small(), 3);
        let a = replicate(&plan).unwrap();
        let b = replicate(&plan).unwrap();
        assert_eq!(a.points.len(), 1);
        assert_eq!(a.points[0].runs.len(), 3);
        assert_eq!(a, b);
        let seeds: Vec<u64> = a.points[0].runs.iter().map(|r| r.seed).collect();
        assert_eq!(seeds, vec![5, 6, 7]);
    }

    #[test]
    fn axes_expand_as_a_product() {
        let mut plan = ExperimentPlan::new(small(), 1);
        plan.axes.l = vec![16.0, 24.0];
        plan.axes.k = vec![1, 2, 4];
        plan.density_one = true;
        let pts = plan.points();
        assert_eq!(pts.len(), 6);
        assert_eq!(pts[0].n, 256);
        assert_eq!(pts[3].n, 576);
        assert_eq!(pts[4].k, 2);
    }

    #[test]
    fn run_errors_are_captured() {
        let mut plan = ExperimentPlan::new(small(), 2);
        plan.base.max_steps = 1;
        plan.base.n = 2;
        plan.axes.radius = vec![-1.0];
        let res = replicate(&plan).unwrap();
        assert_eq!(res.points[0].aggregate.errors, 2);
    }

    #[test]
    fn fit_examples() {
        let f = scaling_fit(&[(1.0, 2.0), (2.0, 4.0), (3.0, 6.0)]).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12 && f.intercept.abs() < 1e-12);
        assert_eq!(f.r_squared, 1.0);
        let f = scaling_fit(&[(1.0, 5.0), (2.0, 5.0), (3.0, 5.0)]).unwrap();
        assert_eq!((f.slope, f.r_squared), (0.0, 1.0));
        assert_eq!(scaling_fit(&[(1.0, 1.0), (1.0, 2.0)]), Err(FitError::DegenerateX));
        assert_eq!(
            scaling_fit(&[(1.0, 1.0), (2.0, 2.0)]),
            Err(FitError::TooFewPoints(2))
        );
    }

    #[test]
    fn fit_recovers_noisy_slope() {
        use rand::Rng;
        let mut rng = RngStream::new(11, 0);
        for _ in 0..100 {
            let xs: Vec<f64> = (1..=10).map(|i| i as f64).collect();
            let xbar = 5.5;
            let pts: Vec<(f64, f64)> = xs
                .iter()
                .map(|&x| {
                    // Box-Muller
                    let (u1, u2): (f64, f64) = (rng.gen_range(f64::EPSILON..1.0), rng.gen());
                    let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
                    (x, 3.0 * x + 0.1 * xbar * z)
                })
                .collect();
            let f = scaling_fit(&pts).unwrap();
            assert!((2.7..=3.3).contains(&f.slope), "{f:?}");
            assert!(f.r_squared >= 0.95);
        }
    }

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), Some(2.5));
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(quantile(&[], 0.5), None);
    }

    #[test]
    fn isolated_examples() {
        let pts = [Point::new(1.0, 1.0), Point::new(1.5, 1.0), Point::new(9.0, 9.0)];
        assert_eq!(isolated_agents(&pts, 0.0, 10.0), vec![0, 1, 2]);
        assert_eq!(isolated_agents(&pts, 1.0, 10.0), vec![2]);
        assert_eq!(isolated_agents(&pts[..2], 0.5, 10.0), Vec::<usize>::new());
        assert_eq!(isolated_bound(10, 2.0), 0.0);
        let mut rng = RngStream::new(1, 0);
        assert_eq!(isolated_count(50, 0.0, &mut rng).unwrap().count, 50);
    }

    #[test]
    fn isolated_source_fails_at_step_one() {
        let mut p = SimParams::new(
            Region::square(64.0).unwrap(),
            4096,
            0.3 * (4096f64).ln().sqrt(),
            MobilityMode::Standard { rho: 0.3 * (4096f64).ln().sqrt() },
        );
        p.burn_in = 0;
        let r = threshold_experiment(&p, 5).unwrap();
        assert_eq!(r.isolated_sources_found + r.skipped, 5);
        assert_eq!(r.failures, r.isolated_sources_found);
    }

    #[test]
    fn multi_source_with_every_agent_finishes_in_one_step() {
        let mut p = small();
        let pos = mobility::init_positions(&p).unwrap();
        p.sources = Sources::Points(pos);
        let r = multi_source_run(&p).unwrap();
        assert_eq!(r.record.completion_time(), Some(1));
    }

    proptest! {
        #[test]
        fn fit_ignores_input_order(mut pts in prop::collection::vec((0.0f64..100.0, -50.0f64..50.0), 3..20), seed in any::<u64>()) {
            pts[0].0 = 0.0;
            pts[1].0 = 50.0;
            pts[2].0 = 100.0;
            let a = scaling_fit(&pts).unwrap();
            let mut shuffled = pts.clone();
            use rand::seq::SliceRandom;
            shuffled.shuffle(&mut RngStream::new(seed, 0));
            let b = scaling_fit(&shuffled).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn hashed_isolation_matches_brute(n in 1usize..300, r in 0.0f64..3.0, seed in any::<u64>()) {
            let region = Region::square(20.0).unwrap();
            let mut rng = RngStream::new(seed, 0);
            let pts: Vec<Point> = (0..n).map(|_| mobility::uniform_point(&region, &mut rng)).collect();
            prop_assert_eq!(isolated_agents(&pts, r, 20.0), isolated_agents_brute(&pts, r));
        }
    }
}
