use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use aqimon_core::dataset::{parse_day, write_day, DatasetDay};
use aqimon_core::grid::SampleSet;
use aqimon_core::metrics::{
    complete_consumption, results_to_csv, sweep, ModelKind, SweepConfig,
};
use aqimon_core::model::{self, GpmNnModel};
use aqimon_core::planner::{
    compute_pdt, plan_trajectory, run_session, select_cubes, PdtReduction, SessionState,
    TrajectoryAlg,
};
use aqimon_core::sim::MeasurementSource;
use aqimon_core::{Error, Result};

use crate::config::RunConfig;

pub fn cmd_simulate(config: &RunConfig, days: usize, out: Option<PathBuf>) -> Result<()> {
    config.validate()?;
    let out = out.unwrap_or_else(|| PathBuf::from("dataset"));
    fs::create_dir_all(&out)?;
    let field = config.field()?;
    let source = MeasurementSource::synthetic(field, config.sensor_error, config.seed);
    for day in 0..days {
        let samples = source.measure_all(day as u64)?;
        let label = format!("day-{day:03}");
        let day_file = DatasetDay::from_samples(&label, samples);
        write_day(&day_file, out.join(format!("{label}.txt")))?;
    }
    println!(
        "wrote {days} day file(s) with {} samples each to {}",
        source.grid().num_cubes(),
        out.display()
    );
    Ok(())
}

pub fn cmd_fit(config: &RunConfig, data: &Path, out: Option<PathBuf>) -> Result<()> {
    config.validate()?;
    let samples = load_dataset(data)?;
    let (model, report) = model::fit(&samples, &config.plume, &config.fit_config())?;
    let out = out.unwrap_or_else(|| PathBuf::from("model.json"));
    fs::write(&out, model.to_json()?)?;
    println!("samples:        {}", samples.len());
    println!("neurons:        {}", config.neurons);
    println!("residual S:     {:.6e}", report.residual_s);
    println!("source height:  {:.4} m", report.h_estimate);
    println!("iterations:     {}", report.iterations);
    println!("converged:      {}", report.converged);
    println!("convexity scan: {:.6e}", report.convexity_check);
    if report.rank_deficient {
        println!("note: rank-deficient system; minimum-norm weights used");
    }
    println!("model written to {}", out.display());
    Ok(())
}

fn load_dataset(data: &Path) -> Result<SampleSet> {
    if !data.is_dir() {
        return Err(Error::Dataset(format!("no dataset found at {}", data.display())));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(data)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().map_or(false, |x| x == "txt" || x == "dat" || x == "csv")
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Dataset(format!("no dataset found at {}", data.display())));
    }
    let mut samples = SampleSet::new();
    for p in &paths {
        let day = parse_day(p)?;
        for w in &day.warnings {
            eprintln!("warning: {w}");
        }
        samples.extend(day.samples);
    }
    Ok(samples)
}

#[derive(Serialize)]
struct PlanFile {
    alg: TrajectoryAlg,
    threshold: f64,
    delta: f64,
    members: Vec<usize>,
    trajectory: Vec<usize>,
    leg_costs: Vec<f64>,
    total_cost: f64,
    budget_charges: f64,
}

pub fn cmd_plan(
    config: &RunConfig,
    alg: TrajectoryAlg,
    model_path: Option<&Path>,
    out: Option<PathBuf>,
) -> Result<()> {
    config.validate()?;
    let field = config.field()?;
    let source = MeasurementSource::synthetic(field.clone(), config.sensor_error, config.seed);
    let model = match model_path {
        Some(p) => GpmNnModel::from_json(&fs::read_to_string(p)?)?,
        None => {
            let samples = source.measure_all(0)?;
            model::fit(&samples, &config.plume, &config.fit_config())?.0
        }
    };
    let pdt = compute_pdt(&model, &field.grid, &field.wind, PdtReduction::Max);
    let selection = select_cubes(&pdt, config.threshold, config.delta)?;
    let traj = plan_trajectory(
        alg,
        &selection,
        config.start,
        &field.grid,
        &config.battery,
        &pdt,
    )?;
    if traj.truncated {
        eprintln!(
            "budget {} charge(s) covers {} of {} selected cubes (cost so far {:.3})",
            config.battery.budget_charges,
            traj.cubes.len(),
            selection.members.len(),
            traj.total_cost
        );
        return Err(Error::InsufficientBudget {
            budget: config.battery.budget_charges,
            cheapest: traj.total_cost,
        });
    }
    let out = out.unwrap_or_else(|| PathBuf::from("trajectory.json"));
    let plan = PlanFile {
        alg,
        threshold: config.threshold,
        delta: config.delta,
        members: selection.members.clone(),
        trajectory: traj.cubes.clone(),
        leg_costs: traj.leg_costs.clone(),
        total_cost: traj.total_cost,
        budget_charges: config.battery.budget_charges,
    };
    fs::write(&out, serde_json::to_string_pretty(&plan)?)?;
    println!(
        "selected {} of {} cubes; consumption {:.3} charge(s); plan written to {}",
        selection.members.len(),
        field.grid.num_cubes(),
        traj.total_cost,
        out.display()
    );
    Ok(())
}

pub fn cmd_session(
    config: &RunConfig,
    cycles: usize,
    shock_cycle: Option<usize>,
    shock_factor: f64,
    out: Option<PathBuf>,
) -> Result<()> {
    config.validate()?;
    let mut field = config.field()?;
    let mut source =
        MeasurementSource::synthetic(field.clone(), config.sensor_error, config.seed);
    let params = config.session_params();
    let mut state = SessionState::new();
    let out = out.unwrap_or_else(|| PathBuf::from("session.jsonl"));
    let mut log = fs::File::create(&out)?;
    let mut rebuilds = 0;
    for cycle in 0..cycles {
        if shock_cycle == Some(cycle) {
            for v in &mut field.truth {
                *v *= shock_factor;
            }
            source =
                MeasurementSource::synthetic(field.clone(), config.sensor_error, config.seed);
        }
        let record = run_session(&mut state, &source, &params)?;
        if record.rebuild_triggered {
            rebuilds += 1;
        }
        writeln!(log, "{}", serde_json::to_string(&record)?)?;
    }
    println!(
        "ran {cycles} cycle(s), {rebuilds} rebuild trigger(s); log written to {}",
        out.display()
    );
    Ok(())
}

pub fn cmd_eval(
    config: &RunConfig,
    thresholds: Option<&str>,
    neuron_counts: &[usize],
    out: Option<PathBuf>,
) -> Result<()> {
    config.validate()?;
    let field = config.field()?;
    let thresholds = match thresholds {
        Some(t) => t
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Metric(format!("bad threshold {p:?}")))
            })
            .collect::<Result<Vec<f64>>>()?,
        None => (0..10).map(|i| i as f64 / 10.0).collect(),
    };
    let ks = if neuron_counts.is_empty() { vec![config.neurons] } else { neuron_counts.to_vec() };
    let mut models: Vec<ModelKind> =
        ks.iter().map(|&k| ModelKind::GpmNn { neurons: k }).collect();
    models.push(ModelKind::Mlr);
    models.push(ModelKind::Li);
    let sweep_config = SweepConfig {
        scenario: match config.scenario {
            aqimon_core::sim::Scenario::TwoD => "2d".to_string(),
            aqimon_core::sim::Scenario::ThreeD => "3d".to_string(),
        },
        thresholds,
        delta: config.delta,
        models,
        selection_neurons: config.neurons,
        fit: config.fit_config(),
        battery: config.battery,
        start: config.start,
        sensor_error: config.sensor_error,
        noise_seed: config.seed,
        ..Default::default()
    };
    let results = sweep(&field, &sweep_config)?;
    let out = out.unwrap_or_else(|| PathBuf::from("sweep.csv"));
    fs::write(&out, results_to_csv(&results))?;
    let complete = complete_consumption(&field.grid, &config.battery, config.start);
    println!(
        "{} sweep row(s) written to {}; complete-pass consumption {:.3} charge(s)",
        results.len(),
        out.display(),
        complete
    );
    Ok(())
}
