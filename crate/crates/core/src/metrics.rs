//! Accuracy metrics, baseline estimators, and the threshold-sweep
//! experiment harness.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::ols;
use crate::error::{Error, Result};
use crate::grid::{GridSpec, SampleSet};
use crate::model::{self, FitConfig, GpmNnModel};
use crate::planner::{
    compute_pdt, plan_trajectory, select_cubes, PdtReduction, SelectionSet, TrajectoryAlg,
};
use crate::sim::{trajectory_cost, BatteryModel, MeasurementSource, SyntheticField};

/// Mean of (1 - relative error) over all cubes. Can go negative when the
/// relative error exceeds 1; values are reported unclipped.
pub fn aea(predicted: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(predicted, truth)?;
    let n = truth.len() as f64;
    Ok(predicted
        .iter()
        .zip(truth)
        .map(|(&p, &t)| 1.0 - (p - t).abs() / t)
        .sum::<f64>()
        / n)
}

/// Mean squared relative error over all cubes.
pub fn err(predicted: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(predicted, truth)?;
    let n = truth.len() as f64;
    Ok(predicted
        .iter()
        .zip(truth)
        .map(|(&p, &t)| ((p - t) / t).powi(2))
        .sum::<f64>()
        / n)
}

fn check_pair(predicted: &[f64], truth: &[f64]) -> Result<()> {
    if predicted.len() != truth.len() {
        return Err(Error::Metric(format!(
            "length mismatch: {} predictions vs {} truth values",
            predicted.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Metric("empty field".into()));
    }
    if let Some(t) = truth.iter().find(|&&t| t <= 0.0) {
        return Err(Error::Metric(format!(
            "truth value {t} is not positive; relative metrics undefined"
        )));
    }
    Ok(())
}

/// Linear-interpolation baseline: measured cubes are returned exactly;
/// other cubes average per-axis linear interpolation between the nearest
/// measured cubes on the same grid line, falling back to the nearest
/// measured cube when no line has another measurement.
pub fn baseline_li(measured: &[(usize, f64)], grid: &GridSpec) -> Result<Vec<f64>> {
    if measured.is_empty() {
        return Err(Error::NotEnoughSamples { got: 0, need: 1 });
    }
    let n = grid.num_cubes();
    let mut value: Vec<Option<f64>> = vec![None; n];
    for &(i, v) in measured {
        if i >= n {
            return Err(Error::Metric(format!("measured cube {i} out of range")));
        }
        value[i] = Some(v);
    }
    let centers = grid.cube_centers();
    let mut out = vec![0.0; n];
    for i in 0..n {
        if let Some(v) = value[i] {
            out[i] = v;
            continue;
        }
        let index = grid.unlinear(i);
        let mut estimates = Vec::new();
        for axis in 0..3 {
            // Nearest measured cube below and above along this axis line.
            let mut below: Option<(usize, f64)> = None;
            let mut above: Option<(usize, f64)> = None;
            let mut probe = index;
            for step in (0..index[axis]).rev() {
                probe[axis] = step;
                let li = grid.linear(probe).expect("in bounds");
                if let Some(v) = value[li] {
                    below = Some((index[axis] - step, v));
                    break;
                }
            }
            probe = index;
            for step in index[axis] + 1..grid.dims[axis] {
                probe[axis] = step;
                let li = grid.linear(probe).expect("in bounds");
                if let Some(v) = value[li] {
                    above = Some((step - index[axis], v));
                    break;
                }
            }
            match (below, above) {
                (Some((db, vb)), Some((da, va))) => {
                    let w = db as f64 / (db + da) as f64;
                    estimates.push(vb + w * (va - vb));
                }
                // Outside the hull along this axis: flat extension.
                (Some((_, v)), None) | (None, Some((_, v))) => estimates.push(v),
                (None, None) => {}
            }
        }
        out[i] = if estimates.is_empty() {
            // No measured cube shares a grid line; take the nearest one.
            let c = centers[i];
            measured
                .iter()
                .map(|&(mi, v)| (crate::sim::distance(c, centers[mi]), mi, v))
                .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)))
                .map(|(_, _, v)| v)
                .expect("measured non-empty")
        } else {
            estimates.iter().sum::<f64>() / estimates.len() as f64
        };
    }
    Ok(out)
}

/// Multi-variable linear-regression baseline on (x, y, z, u).
pub fn baseline_mlr(
    samples: &SampleSet,
    grid: &GridSpec,
    wind: &crate::grid::WindField,
) -> Result<Vec<f64>> {
    let names = ["x", "y", "z", "u"];
    let columns: Vec<Vec<f64>> = (0..4)
        .map(|v| {
            samples
                .iter()
                .map(|s| if v < 3 { s.position[v] } else { s.wind })
                .collect()
        })
        .collect();
    let y: Vec<f64> = samples.iter().map(|s| s.aqi).collect();
    let fit = ols(&names, &columns, &y)?;
    Ok(grid
        .cube_centers()
        .iter()
        .enumerate()
        .map(|(i, &c)| fit.predict_row(&[c[0], c[1], c[2], wind.raw_speeds()[i].max(0.0)]))
        .collect())
}

/// Estimator variants compared in the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelKind {
    GpmNn { neurons: usize },
    Mlr,
    Li,
}

impl ModelKind {
    pub fn name(&self) -> String {
        match self {
            ModelKind::GpmNn { neurons } => format!("gpmnn-k{neurons}"),
            ModelKind::Mlr => "mlr".to_string(),
            ModelKind::Li => "li".to_string(),
        }
    }
}

/// One sweep point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalResult {
    pub scenario: String,
    pub threshold: f64,
    pub model: String,
    pub alg: String,
    pub members: usize,
    pub aea: f64,
    pub err: f64,
    /// Normalized battery consumption of the selective pass (charges).
    pub consumption: f64,
    /// False when the pass exceeds the configured budget.
    pub feasible: bool,
    /// AEA went negative (relative error above 1 somewhere).
    pub aea_negative: bool,
}

/// Sweep configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub scenario: String,
    pub thresholds: Vec<f64>,
    pub delta: f64,
    pub models: Vec<ModelKind>,
    pub algs: Vec<TrajectoryAlg>,
    /// Neuron count of the model whose PDT drives cube selection.
    pub selection_neurons: usize,
    pub fit: FitConfig,
    pub battery: BatteryModel,
    pub start: usize,
    pub reduction: PdtReduction,
    pub sensor_error: f64,
    pub noise_seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            scenario: "2d".to_string(),
            thresholds: (0..10).map(|i| i as f64 / 10.0).collect(),
            delta: 0.05,
            models: vec![ModelKind::GpmNn { neurons: 100 }, ModelKind::Mlr, ModelKind::Li],
            algs: vec![TrajectoryAlg::PdtGreedy, TrajectoryAlg::Nearest, TrajectoryAlg::Sequential],
            selection_neurons: 100,
            fit: FitConfig::default(),
            battery: BatteryModel::default(),
            start: 0,
            reduction: PdtReduction::Max,
            sensor_error: 0.03,
            noise_seed: 0,
        }
    }
}

/// Normalized consumption of a complete sequential pass over every cube.
pub fn complete_consumption(grid: &GridSpec, battery: &BatteryModel, start: usize) -> f64 {
    let all: Vec<usize> = (0..grid.num_cubes()).collect();
    trajectory_cost(grid, grid.center(grid.unlinear(start)), &all, battery)
}

/// Runs one selective monitoring cycle per (threshold, model, alg) point on
/// the synthetic field and records accuracy and consumption.
///
/// Every point follows the same protocol: a complete pass (measurement
/// nonce 0) fits the hybrid models; at each threshold the reference model's
/// PDT field selects the measurement set, which is re-measured (per-threshold
/// nonce) and fed to each estimator. Hybrid variants refit their output
/// weights on the complete-pass map updated with the fresh measurements;
/// the regression and interpolation baselines see only the fresh
/// measurements.
pub fn sweep(field: &SyntheticField, config: &SweepConfig) -> Result<Vec<EvalResult>> {
    let grid = &field.grid;
    let src = MeasurementSource::synthetic(field.clone(), config.sensor_error, config.noise_seed);
    let complete = src.measure_all(0)?;
    let complete_map: Vec<f64> = complete.iter().map(|s| s.aqi).collect();

    let mut neuron_counts: Vec<usize> = config
        .models
        .iter()
        .filter_map(|m| match m {
            ModelKind::GpmNn { neurons } => Some(*neurons),
            _ => None,
        })
        .collect();
    neuron_counts.push(config.selection_neurons);
    neuron_counts.sort_unstable();
    neuron_counts.dedup();
    let mut fitted: BTreeMap<usize, GpmNnModel> = BTreeMap::new();
    for k in neuron_counts {
        let cfg = FitConfig { neurons: k, ..config.fit.clone() };
        let (m, _) = model::fit(&complete, &field.plume, &cfg)?;
        fitted.insert(k, m);
    }
    let reference = &fitted[&config.selection_neurons];
    let pdt = compute_pdt(reference, grid, &field.wind, config.reduction);

    let mut results = Vec::new();
    let planner_battery = BatteryModel { budget_charges: f64::INFINITY, ..config.battery };
    for (ti, &threshold) in config.thresholds.iter().enumerate() {
        let selection = select_cubes(&pdt, threshold, config.delta.min(threshold * 0.99))?;
        let mut alg_costs = Vec::new();
        for &alg in &config.algs {
            let traj =
                plan_trajectory(alg, &selection, config.start, grid, &planner_battery, &pdt)?;
            alg_costs.push(traj.total_cost);
        }
        let nonce = 1000 + ti as u64;
        let measured: Vec<(usize, crate::grid::Sample)> = selection
            .members
            .iter()
            .map(|&i| src.measure(i, nonce).map(|s| (i, s)))
            .collect::<Result<_>>()?;

        for kind in &config.models {
            let predictions = predict_for_kind(
                kind,
                &fitted,
                &measured,
                &complete_map,
                field,
            )?;
            let a = aea(&predictions, &field.truth)?;
            let e = err(&predictions, &field.truth)?;
            for (ai, &alg) in config.algs.iter().enumerate() {
                results.push(EvalResult {
                    scenario: config.scenario.clone(),
                    threshold,
                    model: kind.name(),
                    alg: alg_name(alg),
                    members: selection.members.len(),
                    aea: a,
                    err: e,
                    consumption: alg_costs[ai],
                    feasible: alg_costs[ai] <= config.battery.budget_charges,
                    aea_negative: a < 0.0,
                });
            }
        }
    }
    Ok(results)
}

fn predict_for_kind(
    kind: &ModelKind,
    fitted: &BTreeMap<usize, GpmNnModel>,
    measured: &[(usize, crate::grid::Sample)],
    complete_map: &[f64],
    field: &SyntheticField,
) -> Result<Vec<f64>> {
    let grid = &field.grid;
    match kind {
        ModelKind::GpmNn { neurons } => {
            let base = fitted
                .get(neurons)
                .ok_or_else(|| Error::Metric(format!("no fitted model with {neurons} neurons")))?;
            let mut training: SampleSet = grid
                .cube_centers()
                .iter()
                .enumerate()
                .map(|(i, &c)| crate::grid::Sample {
                    position: c,
                    wind: field.wind.raw_speeds()[i].max(0.0),
                    aqi: complete_map[i].max(0.0),
                })
                .collect();
            for (cube, s) in measured {
                training[*cube] = *s;
            }
            let (updated, _) = model::refit_beta(base, &training)?;
            Ok(grid
                .cube_centers()
                .iter()
                .enumerate()
                .map(|(i, &c)| updated.predict(c, field.wind.speed(i)))
                .collect())
        }
        ModelKind::Mlr => {
            let samples: SampleSet = measured.iter().map(|(_, s)| *s).collect();
            baseline_mlr(&samples, grid, &field.wind)
        }
        ModelKind::Li => {
            let pairs: Vec<(usize, f64)> =
                measured.iter().map(|(i, s)| (*i, s.aqi)).collect();
            baseline_li(&pairs, grid)
        }
    }
}

pub fn alg_name(alg: TrajectoryAlg) -> String {
    match alg {
        TrajectoryAlg::PdtGreedy => "pdt-greedy".to_string(),
        TrajectoryAlg::Nearest => "nearest".to_string(),
        TrajectoryAlg::Sequential => "sequential".to_string(),
    }
}

/// CSV serialization with a stable column set for plotting.
pub fn results_to_csv(results: &[EvalResult]) -> String {
    let mut out = String::from(
        "scenario,threshold,model,alg,members,aea,err,consumption,feasible,aea_negative\n",
    );
    for r in results {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.scenario,
            r.threshold,
            r.model,
            r.alg,
            r.members,
            r.aea,
            r.err,
            r.consumption,
            r.feasible,
            r.aea_negative
        );
    }
    out
}

/// Convenience: measure the full grid once per trajectory ordering so the
/// sweep can be compared against complete monitoring.
pub fn full_selection(grid: &GridSpec) -> SelectionSet {
    SelectionSet { threshold: 0.0, delta: 0.0, members: (0..grid.num_cubes()).collect() }
}
