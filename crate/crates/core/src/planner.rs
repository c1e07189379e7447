//! PDT computation, measurement-set selection, greedy trajectory
//! optimization, and the monitoring session controller.
//!
//! A cube's PDT is the min-max normalized magnitude of the model's partial
//! derivatives at its center; the selection set takes cubes above the
//! threshold plus cubes below a small delta. The trajectory greedily
//! maximizes PDT over leg cost, which is O(n^2) in the member count.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, Sample, SampleSet, WindField};
use crate::model::{self, FitConfig, GpmNnModel, INPUT_DIM};
use crate::plume::PlumeParams;
use crate::sim::{BatteryModel, MeasurementSource};

/// How the per-variable PDT values are reduced to one value per cube.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PdtReduction {
    /// A cube is interesting if any variable changes fast (default).
    Max,
    Mean,
}

impl Default for PdtReduction {
    fn default() -> Self {
        PdtReduction::Max
    }
}

/// Normalized derivative magnitudes per cube and variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdtField {
    /// Per-cube normalized |dC_f/dx_i| for the four model variables.
    pub per_var: Vec<[f64; 4]>,
    /// Per-cube reduction over the variables.
    pub pdt: Vec<f64>,
    /// Raw minima per variable, kept so the normalization inverts exactly.
    pub raw_min: [f64; 4],
    pub raw_max: [f64; 4],
    pub reduction: PdtReduction,
}

impl PdtField {
    /// Inverts the normalization: reconstructs |dC_f/dx_i| at a cube.
    pub fn raw_magnitude(&self, cube: usize, var: usize) -> f64 {
        self.per_var[cube][var] * (self.raw_max[var] - self.raw_min[var]) + self.raw_min[var]
    }
}

/// Evaluates the model's partial derivatives at every cube center and
/// min-max normalizes each variable across the grid. A variable whose
/// derivative is constant over all cubes normalizes to zero everywhere.
pub fn compute_pdt(
    model: &GpmNnModel,
    grid: &GridSpec,
    wind: &WindField,
    reduction: PdtReduction,
) -> PdtField {
    let centers = grid.cube_centers();
    let raw: Vec<[f64; 4]> = centers
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let g = model.predict_grad(c, wind.speed(i));
            [g[0].abs(), g[1].abs(), g[2].abs(), g[3].abs()]
        })
        .collect();
    let mut raw_min = [f64::INFINITY; 4];
    let mut raw_max = [f64::NEG_INFINITY; 4];
    for r in &raw {
        for v in 0..INPUT_DIM {
            raw_min[v] = raw_min[v].min(r[v]);
            raw_max[v] = raw_max[v].max(r[v]);
        }
    }
    let per_var: Vec<[f64; 4]> = raw
        .iter()
        .map(|r| {
            let mut out = [0.0; 4];
            for v in 0..INPUT_DIM {
                let span = raw_max[v] - raw_min[v];
                out[v] = if span > 0.0 { (r[v] - raw_min[v]) / span } else { 0.0 };
            }
            out
        })
        .collect();
    let pdt = per_var
        .iter()
        .map(|p| match reduction {
            PdtReduction::Max => p.iter().cloned().fold(0.0f64, f64::max),
            PdtReduction::Mean => p.iter().sum::<f64>() / INPUT_DIM as f64,
        })
        .collect();
    PdtField { per_var, pdt, raw_min, raw_max, reduction }
}

/// The measurement set: cubes at or above the threshold plus cubes at or
/// below delta.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSet {
    pub threshold: f64,
    pub delta: f64,
    /// Sorted linear cube indices.
    pub members: Vec<usize>,
}

pub fn select_cubes(pdt: &PdtField, threshold: f64, delta: f64) -> Result<SelectionSet> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidSelection { delta, threshold });
    }
    // At threshold 0 the first clause already covers every cube, so delta
    // only needs to stay below the threshold when the threshold is positive.
    if threshold > 0.0 && (delta < 0.0 || delta >= threshold) {
        return Err(Error::InvalidSelection { delta, threshold });
    }
    let members: Vec<usize> = pdt
        .pdt
        .iter()
        .enumerate()
        .filter(|(_, &p)| p >= threshold || p <= delta)
        .map(|(i, _)| i)
        .collect();
    Ok(SelectionSet { threshold, delta, members })
}

/// An ordered measurement route with its normalized energy cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Visited linear cube indices, in order; never repeats a cube.
    pub cubes: Vec<usize>,
    pub leg_costs: Vec<f64>,
    pub total_cost: f64,
    /// Candidate comparisons performed while building the route.
    pub comparisons: usize,
    /// True when the battery budget truncated the route before every member
    /// was visited.
    pub truncated: bool,
}

/// Trajectory construction strategies compared in the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryAlg {
    /// Greedy argmax of |PDT_i / cost(i)|.
    PdtGreedy,
    /// Greedy nearest unvisited member.
    Nearest,
    /// Members in row-major order.
    Sequential,
}

fn greedy_by_score<F>(
    selection: &SelectionSet,
    start: usize,
    grid: &GridSpec,
    battery: &BatteryModel,
    mut score: F,
) -> Result<Trajectory>
where
    F: FnMut(usize, f64) -> f64,
{
    if selection.members.is_empty() {
        return Err(Error::EmptySelection);
    }
    let budget = battery.budget_charges;
    let mut pos = grid.center(grid.unlinear(start));
    let mut remaining: Vec<usize> = selection.members.clone();
    let mut cubes = Vec::new();
    let mut leg_costs = Vec::new();
    let mut total = 0.0;
    let mut comparisons = 0usize;
    while !remaining.is_empty() {
        let mut best: Option<(usize, f64, f64)> = None; // (slot, score, cost)
        for (slot, &cand) in remaining.iter().enumerate() {
            comparisons += 1;
            let cost = battery.leg_cost(pos, grid.center(grid.unlinear(cand)));
            let s = score(cand, cost);
            // Ties break toward the lower cube index; `remaining` is sorted,
            // so strict improvement keeps the earliest winner.
            match best {
                Some((_, bs, _)) if s <= bs => {}
                _ => best = Some((slot, s, cost)),
            }
        }
        let (slot, _, cost) = best.expect("remaining non-empty");
        if total + cost > budget + 1e-12 {
            if cubes.is_empty() {
                // Not even the cheapest feasible pick fits.
                let cheapest = remaining
                    .iter()
                    .map(|&c| battery.leg_cost(pos, grid.center(grid.unlinear(c))))
                    .fold(f64::INFINITY, f64::min);
                return Err(Error::InsufficientBudget { budget, cheapest });
            }
            return Ok(Trajectory { cubes, leg_costs, total_cost: total, comparisons, truncated: true });
        }
        let cube = remaining.remove(slot);
        pos = grid.center(grid.unlinear(cube));
        cubes.push(cube);
        leg_costs.push(cost);
        total += cost;
    }
    Ok(Trajectory { cubes, leg_costs, total_cost: total, comparisons, truncated: false })
}

/// Greedy route maximizing |PDT_i / cost(i)| over unvisited members.
pub fn greedy_trajectory(
    selection: &SelectionSet,
    start: usize,
    grid: &GridSpec,
    battery: &BatteryModel,
    pdt: &PdtField,
) -> Result<Trajectory> {
    greedy_by_score(selection, start, grid, battery, |cube, cost| (pdt.pdt[cube] / cost).abs())
}

/// Greedy route visiting the nearest unvisited member.
pub fn nearest_trajectory(
    selection: &SelectionSet,
    start: usize,
    grid: &GridSpec,
    battery: &BatteryModel,
) -> Result<Trajectory> {
    greedy_by_score(selection, start, grid, battery, |_, cost| -cost)
}

/// Members in row-major order, bottom-left to top-right.
pub fn sequential_trajectory(
    selection: &SelectionSet,
    start: usize,
    grid: &GridSpec,
    battery: &BatteryModel,
) -> Result<Trajectory> {
    if selection.members.is_empty() {
        return Err(Error::EmptySelection);
    }
    let budget = battery.budget_charges;
    let mut pos = grid.center(grid.unlinear(start));
    let mut cubes = Vec::new();
    let mut leg_costs = Vec::new();
    let mut total = 0.0;
    let mut truncated = false;
    for &cube in &selection.members {
        let cost = battery.leg_cost(pos, grid.center(grid.unlinear(cube)));
        if total + cost > budget + 1e-12 {
            if cubes.is_empty() {
                return Err(Error::InsufficientBudget { budget, cheapest: cost });
            }
            truncated = true;
            break;
        }
        pos = grid.center(grid.unlinear(cube));
        cubes.push(cube);
        leg_costs.push(cost);
        total += cost;
    }
    Ok(Trajectory { cubes, leg_costs, total_cost: total, comparisons: selection.members.len(), truncated })
}

pub fn plan_trajectory(
    alg: TrajectoryAlg,
    selection: &SelectionSet,
    start: usize,
    grid: &GridSpec,
    battery: &BatteryModel,
    pdt: &PdtField,
) -> Result<Trajectory> {
    match alg {
        TrajectoryAlg::PdtGreedy => greedy_trajectory(selection, start, grid, battery, pdt),
        TrajectoryAlg::Nearest => nearest_trajectory(selection, start, grid, battery),
        TrajectoryAlg::Sequential => sequential_trajectory(selection, start, grid, battery),
    }
}

/// Monitoring mode of the session controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Complete,
    Selective,
}

/// Session configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionParams {
    pub threshold: f64,
    /// Small constant below which low-activity cubes are still measured.
    pub delta: f64,
    /// Mean relative deviation that triggers a complete rebuild.
    pub sigma_dev: f64,
    pub reduction: PdtReduction,
    pub battery: BatteryModel,
    pub fit: FitConfig,
    pub plume: PlumeParams,
    /// Start cube of every trajectory.
    pub start: usize,
}

impl Default for SessionParams {
    fn default() -> Self {
        Self {
            threshold: 0.4,
            delta: 0.05,
            sigma_dev: 0.2,
            reduction: PdtReduction::Max,
            battery: BatteryModel { budget_charges: f64::INFINITY, ..Default::default() },
            fit: FitConfig::default(),
            plume: PlumeParams::default(),
            start: 0,
        }
    }
}

/// Per-cycle monitoring state. The baseline map comes from the latest
/// complete pass; the current map is regenerated by the model each cycle.
#[derive(Debug, Clone)]
pub struct SessionState {
    pub cycle: usize,
    pub mode: Mode,
    pub baseline_map: Vec<f64>,
    pub current_map: Vec<f64>,
    pub model: Option<GpmNnModel>,
    pub incomplete: bool,
}

impl SessionState {
    pub fn new() -> Self {
        Self {
            cycle: 0,
            mode: Mode::Complete,
            baseline_map: Vec::new(),
            current_map: Vec::new(),
            model: None,
            incomplete: false,
        }
    }
}

impl Default for SessionState {
    fn default() -> Self {
        Self::new()
    }
}

/// One line of the append-only session log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: usize,
    pub mode: Mode,
    pub members: usize,
    pub trajectory: Vec<usize>,
    pub cost: f64,
    pub deviation: f64,
    pub incomplete: bool,
    pub rebuild_triggered: bool,
}

/// Runs one monitoring cycle and advances the state.
///
/// Complete mode measures every cube, fits the full model and stores the
/// baseline. Selective mode measures only the selected set along a greedy
/// trajectory, refits the output weights against the baseline map updated
/// with the fresh measurements, and regenerates the map from the model. A
/// mean relative deviation above `sigma_dev` switches the next cycle back
/// to complete monitoring.
pub fn run_session(
    state: &mut SessionState,
    source: &MeasurementSource,
    params: &SessionParams,
) -> Result<CycleRecord> {
    let grid = source.grid().clone();
    let n = grid.num_cubes();
    let nonce = state.cycle as u64;
    // The first cycle has no baseline to select against.
    let mode = if state.model.is_none() || state.baseline_map.is_empty() {
        Mode::Complete
    } else {
        state.mode
    };

    let record = match mode {
        Mode::Complete => {
            let samples = source.measure_all(nonce)?;
            let (model, _report) = model::fit(&samples, &params.plume, &params.fit)?;
            state.baseline_map = samples.iter().map(|s| s.aqi).collect();
            state.current_map = state.baseline_map.clone();
            state.model = Some(model);
            state.mode = Mode::Selective;
            let all: Vec<usize> = (0..n).collect();
            let cost = crate::sim::trajectory_cost(
                &grid,
                grid.center(grid.unlinear(params.start)),
                &all,
                &params.battery,
            );
            CycleRecord {
                cycle: state.cycle,
                mode: Mode::Complete,
                members: n,
                trajectory: all,
                cost,
                deviation: 0.0,
                incomplete: false,
                rebuild_triggered: false,
            }
        }
        Mode::Selective => {
            let model = state.model.as_ref().expect("selective mode requires a model");
            let pdt = compute_pdt(model, &grid, source.wind(), params.reduction);
            let selection = select_cubes(&pdt, params.threshold, params.delta)?;
            let traj =
                greedy_trajectory(&selection, params.start, &grid, &params.battery, &pdt)?;

            let mut measured: Vec<(usize, Sample)> = Vec::with_capacity(traj.cubes.len());
            let mut incomplete = traj.truncated;
            for &cube in &traj.cubes {
                match source.measure(cube, nonce) {
                    Ok(s) => measured.push((cube, s)),
                    Err(_) => {
                        // Partial data is retained; the cycle is flagged.
                        incomplete = true;
                        break;
                    }
                }
            }

            let deviation = if measured.is_empty() {
                0.0
            } else {
                measured
                    .iter()
                    .map(|(cube, s)| {
                        let old = state.current_map[*cube];
                        (s.aqi - old).abs() / old.abs().max(1e-9)
                    })
                    .sum::<f64>()
                    / measured.len() as f64
            };

            // Training set: the previous map with fresh values at the
            // re-measured cubes.
            let mut training: SampleSet = grid
                .cube_centers()
                .iter()
                .enumerate()
                .map(|(i, &c)| Sample {
                    position: c,
                    wind: source.wind().raw_speeds()[i].max(0.0),
                    aqi: state.current_map[i].max(0.0),
                })
                .collect();
            for (cube, s) in &measured {
                training[*cube] = *s;
            }
            let (updated, _) = model::refit_beta(model, &training)?;
            let wind = source.wind();
            state.current_map = grid
                .cube_centers()
                .iter()
                .enumerate()
                .map(|(i, &c)| updated.predict(c, wind.speed(i)).max(0.0))
                .collect();
            state.model = Some(updated);
            let rebuild = deviation > params.sigma_dev;
            if rebuild {
                state.mode = Mode::Complete;
            }
            state.incomplete = incomplete;
            CycleRecord {
                cycle: state.cycle,
                mode: Mode::Selective,
                members: selection.members.len(),
                trajectory: traj.cubes.clone(),
                cost: traj.total_cost,
                deviation,
                incomplete,
                rebuild_triggered: rebuild,
            }
        }
    };
    state.cycle += 1;
    Ok(record)
}
