//! Deterministic synthetic-world generator and UAV measurement/energy model.
//!
//! Fields are a plume profile plus an optional smooth seeded perturbation;
//! measurements add bounded relative sensor noise. Everything is a pure
//! function of the configured seed, so full pipelines replay bit-identically.

use rand::distributions::Uniform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, Sample, SampleSet, WindField, DEFAULT_WIND_FLOOR};
use crate::plume::{revised_gpm, PlumeParams};

/// Scenario kind: a z = 0 plane or a full volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    #[serde(rename = "2d")]
    TwoD,
    #[serde(rename = "3d")]
    ThreeD,
}

/// UAV energy model. Powers are in energy units per second; consumption is
/// reported normalized to one full charge (`flight_minutes` of mean power).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryModel {
    /// Hover time per measurement, seconds.
    pub hover_time: f64,
    /// Full-charge endurance, minutes.
    pub flight_minutes: f64,
    /// Cruise speed, m/s.
    pub speed: f64,
    pub hover_power: f64,
    pub travel_power: f64,
    /// Budget available to the planner, in charges (1.0 = one battery).
    pub budget_charges: f64,
}

impl Default for BatteryModel {
    fn default() -> Self {
        Self {
            hover_time: 10.0,
            flight_minutes: 15.0,
            speed: 5.0,
            hover_power: 1.0,
            travel_power: 1.0,
            budget_charges: 1.0,
        }
    }
}

impl BatteryModel {
    /// Energy of one full charge.
    pub fn capacity(&self) -> f64 {
        self.flight_minutes * 60.0 * (self.hover_power + self.travel_power) / 2.0
    }

    /// Normalized energy of one hover-and-measure stop.
    pub fn hover_cost(&self) -> f64 {
        self.hover_time * self.hover_power / self.capacity()
    }

    /// Normalized energy to fly between two points.
    pub fn travel_cost(&self, from: [f64; 3], to: [f64; 3]) -> f64 {
        let d = distance(from, to);
        d / self.speed * self.travel_power / self.capacity()
    }

    /// Normalized energy of one leg: travel then hover to measure.
    pub fn leg_cost(&self, from: [f64; 3], to: [f64; 3]) -> f64 {
        self.travel_cost(from, to) + self.hover_cost()
    }
}

pub fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Normalized battery consumption of visiting `cubes` in order from `start`.
pub fn trajectory_cost(
    grid: &GridSpec,
    start: [f64; 3],
    cubes: &[usize],
    battery: &BatteryModel,
) -> f64 {
    let mut pos = start;
    let mut total = 0.0;
    for &c in cubes {
        let center = grid.center(grid.unlinear(c));
        total += battery.leg_cost(pos, center);
        pos = center;
    }
    total
}

/// A wind depression centered somewhere in the volume, e.g. a sheltered
/// pocket behind a building.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindPocket {
    pub center: [f64; 3],
    pub radius: f64,
    /// Speed reduction at the pocket center, m/s.
    pub depth: f64,
}

/// Wind specification used by the simulator and the CLI config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindSpec {
    pub base_speed: f64,
    #[serde(default)]
    pub pockets: Vec<WindPocket>,
    #[serde(default = "default_floor")]
    pub floor: f64,
}

fn default_floor() -> f64 {
    DEFAULT_WIND_FLOOR
}

impl Default for WindSpec {
    fn default() -> Self {
        Self { base_speed: 3.0, pockets: Vec::new(), floor: DEFAULT_WIND_FLOOR }
    }
}

impl WindSpec {
    /// Evaluates the wind speed surface over all cube centers.
    pub fn build(&self, grid: &GridSpec) -> Result<WindField> {
        let speeds = grid
            .cube_centers()
            .iter()
            .map(|&c| {
                let mut s = self.base_speed;
                for p in &self.pockets {
                    let d = distance(c, p.center);
                    s -= p.depth * (-d * d / (2.0 * p.radius * p.radius)).exp();
                }
                s.max(0.0)
            })
            .collect();
        WindField::new(speeds, self.floor)
    }
}

/// Field generator configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    /// Additive AQI baseline of the ground truth.
    pub base_aqi: f64,
    /// Scale applied to the plume profile.
    pub plume_scale: f64,
    /// Relative amplitude of the smooth perturbation (0 disables it).
    pub perturbation: f64,
    pub seed: u64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self { base_aqi: 60.0, plume_scale: 400.0, perturbation: 0.0, seed: 0 }
    }
}

/// Ground-truth per-cube AQI with its wind field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticField {
    pub grid: GridSpec,
    pub plume: PlumeParams,
    pub truth: Vec<f64>,
    pub wind: WindField,
    pub seed: u64,
}

/// Smooth random field in [-1, 1]: a normalized mixture of low-order
/// cosines with seeded frequencies and phases.
fn smooth_perturbation(grid: &GridSpec, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let extent = grid.spacing
        * (*grid.dims.iter().max().expect("dims non-empty") as f64).max(4.0);
    let n_modes = 6;
    let amp_dist = Uniform::new(0.3f64, 1.0f64);
    let phase_dist = Uniform::new(0.0f64, std::f64::consts::TAU);
    // Wavelengths between a quarter and the full grid extent.
    let freq_dist = Uniform::new(std::f64::consts::TAU / extent, 4.0 * std::f64::consts::TAU / extent);
    let dir_dist = Uniform::new(-1.0f64, 1.0f64);
    let mut modes = Vec::with_capacity(n_modes);
    let mut amp_sum = 0.0;
    for _ in 0..n_modes {
        let amp: f64 = rng.sample(amp_dist);
        let f = rng.sample(freq_dist);
        let mut dir = [rng.sample(dir_dist), rng.sample(dir_dist), rng.sample(dir_dist)];
        let norm = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt().max(1e-9);
        for d in &mut dir {
            *d *= f / norm;
        }
        let phase = rng.sample(phase_dist);
        amp_sum += amp;
        modes.push((amp, dir, phase));
    }
    grid.cube_centers()
        .iter()
        .map(|&c| {
            let mut v = 0.0;
            for (amp, dir, phase) in &modes {
                v += amp * (dir[0] * c[0] + dir[1] * c[1] + dir[2] * c[2] + phase).cos();
            }
            v / amp_sum
        })
        .collect()
}

/// Builds the ground truth: plume profile scaled and shifted, with a
/// bounded-relative smooth perturbation on top.
pub fn generate_field(
    grid: &GridSpec,
    plume: &PlumeParams,
    wind: &WindField,
    config: &FieldConfig,
) -> Result<SyntheticField> {
    plume.validate()?;
    if wind.len() != grid.num_cubes() {
        return Err(Error::InvalidGrid(format!(
            "wind field has {} speeds for {} cubes",
            wind.len(),
            grid.num_cubes()
        )));
    }
    let pert = if config.perturbation > 0.0 {
        smooth_perturbation(grid, config.seed)
    } else {
        vec![0.0; grid.num_cubes()]
    };
    let centers = grid.cube_centers();
    let truth = centers
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let profile = config.base_aqi + config.plume_scale * revised_gpm(c, wind.speed(i), plume);
            (profile * (1.0 + config.perturbation * pert[i])).max(0.0)
        })
        .collect();
    Ok(SyntheticField {
        grid: grid.clone(),
        plume: *plume,
        truth,
        wind: wind.clone(),
        seed: config.seed,
    })
}

/// Where measurements come from: the synthetic truth or a replayed dataset.
#[derive(Debug, Clone)]
pub enum SourceKind {
    Synthetic(SyntheticField),
    /// Per-cube recorded values; `None` where the dataset has no sample.
    Replay { grid: GridSpec, values: Vec<Option<f64>>, wind: WindField },
}

/// Noisy measurement source. Noise is uniform within the configured
/// relative bound and is a pure function of (seed, nonce, cube).
#[derive(Debug, Clone)]
pub struct MeasurementSource {
    pub kind: SourceKind,
    pub sensor_error: f64,
    pub seed: u64,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

impl MeasurementSource {
    pub fn synthetic(field: SyntheticField, sensor_error: f64, seed: u64) -> Self {
        Self { kind: SourceKind::Synthetic(field), sensor_error, seed }
    }

    pub fn grid(&self) -> &GridSpec {
        match &self.kind {
            SourceKind::Synthetic(f) => &f.grid,
            SourceKind::Replay { grid, .. } => grid,
        }
    }

    pub fn wind(&self) -> &WindField {
        match &self.kind {
            SourceKind::Synthetic(f) => &f.wind,
            SourceKind::Replay { wind, .. } => wind,
        }
    }

    /// Measures one cube. `nonce` distinguishes repeated visits (e.g. the
    /// monitoring cycle); the same (seed, nonce, cube) always reproduces the
    /// same sample.
    pub fn measure(&self, linear: usize, nonce: u64) -> Result<Sample> {
        let grid = self.grid();
        if linear >= grid.num_cubes() {
            let idx = grid.unlinear(linear);
            return Err(Error::IndexOutOfBounds(
                idx[0], idx[1], idx[2], grid.dims[0], grid.dims[1], grid.dims[2],
            ));
        }
        let truth = match &self.kind {
            SourceKind::Synthetic(f) => f.truth[linear],
            SourceKind::Replay { values, .. } => values[linear].ok_or_else(|| {
                Error::Dataset(format!("replay source has no value at cube {linear}"))
            })?,
        };
        let noise = if self.sensor_error > 0.0 {
            let key = splitmix64(splitmix64(self.seed ^ nonce.wrapping_mul(0xA24BAED4963EE407)) ^ linear as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(key);
            rng.sample(Uniform::new_inclusive(-self.sensor_error, self.sensor_error))
        } else {
            0.0
        };
        let wind = self.wind().raw_speeds()[linear].max(0.0);
        let center = grid.center(grid.unlinear(linear));
        Sample::new(center, wind, (truth * (1.0 + noise)).max(0.0))
    }

    /// Measures every cube in row-major order.
    pub fn measure_all(&self, nonce: u64) -> Result<SampleSet> {
        (0..self.grid().num_cubes()).map(|i| self.measure(i, nonce)).collect()
    }
}

impl SyntheticField {
    /// Noiseless samples at every cube center.
    pub fn truth_samples(&self) -> SampleSet {
        self.grid
            .cube_centers()
            .iter()
            .enumerate()
            .map(|(i, &c)| Sample { position: c, wind: self.wind.raw_speeds()[i].max(0.0), aqi: self.truth[i] })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small_field(perturbation: f64, seed: u64) -> SyntheticField {
        let grid = GridSpec::with_dims(4, 4, 2).unwrap();
        let wind = WindSpec { base_speed: 2.0, ..Default::default() }.build(&grid).unwrap();
        generate_field(
            &grid,
            &PlumeParams::default(),
            &wind,
            &FieldConfig { perturbation, seed, ..Default::default() },
        )
        .unwrap()
    }

    #[test]
    fn noiseless_field_is_plume_profile() {
        let f = small_field(0.0, 1);
        let p = PlumeParams::default();
        for (i, &c) in f.grid.cube_centers().iter().enumerate() {
            let expected = 60.0 + 400.0 * revised_gpm(c, f.wind.speed(i), &p);
            assert_relative_eq!(f.truth[i], expected, max_relative = 1e-14);
        }
    }

    #[test]
    fn field_deterministic() {
        assert_eq!(small_field(0.1, 7), small_field(0.1, 7));
        assert_ne!(small_field(0.1, 7).truth, small_field(0.1, 8).truth);
    }

    #[test]
    fn perturbation_bounded() {
        let flat = small_field(0.0, 3);
        let bumpy = small_field(0.1, 3);
        let mut max_rel: f64 = 0.0;
        for i in 0..flat.truth.len() {
            max_rel = max_rel.max((bumpy.truth[i] - flat.truth[i]).abs() / flat.truth[i]);
        }
        assert!(max_rel <= 0.1 + 1e-12, "max relative deviation {max_rel}");
        assert!(max_rel > 0.0);
    }

    #[test]
    fn measure_noiseless_equals_truth() {
        let f = small_field(0.0, 1);
        let src = MeasurementSource::synthetic(f.clone(), 0.0, 9);
        let s = src.measure(5, 0).unwrap();
        assert_eq!(s.aqi, f.truth[5]);
    }

    #[test]
    fn measure_deterministic_and_bounded() {
        let f = small_field(0.0, 1);
        let src = MeasurementSource::synthetic(f.clone(), 0.03, 42);
        let a = src.measure(3, 0).unwrap();
        let b = src.measure(3, 0).unwrap();
        assert_eq!(a, b);
        // Different nonce gives a different draw.
        let c = src.measure(3, 1).unwrap();
        assert_ne!(a.aqi, c.aqi);

        let mut sum_abs = 0.0;
        let n_draws = 10_000u64;
        for nonce in 0..n_draws {
            let s = src.measure(7, nonce).unwrap();
            let e = (s.aqi - f.truth[7]) / f.truth[7];
            assert!(e.abs() <= 0.03 + 1e-12);
            sum_abs += e.abs();
        }
        let mean_abs = sum_abs / n_draws as f64;
        assert!((mean_abs - 0.015).abs() < 0.002, "mean |e| = {mean_abs}");
    }

    #[test]
    fn replay_missing_value_errors() {
        let grid = GridSpec::with_dims(2, 1, 1).unwrap();
        let wind = WindField::uniform(2.0, 2).unwrap();
        let src = MeasurementSource {
            kind: SourceKind::Replay { grid, values: vec![Some(80.0), None], wind },
            sensor_error: 0.0,
            seed: 0,
        };
        assert!(src.measure(0, 0).is_ok());
        assert!(src.measure(1, 0).is_err());
    }

    #[test]
    fn empty_trajectory_costs_nothing() {
        let grid = GridSpec::with_dims(3, 3, 1).unwrap();
        let b = BatteryModel::default();
        assert_eq!(trajectory_cost(&grid, [0.0; 3], &[], &b), 0.0);
    }

    #[test]
    fn hover_only_cost() {
        let grid = GridSpec::with_dims(3, 3, 1).unwrap();
        let b = BatteryModel::default();
        let start = grid.center([1, 1, 0]);
        let cube = grid.linear([1, 1, 0]).unwrap();
        let cost = trajectory_cost(&grid, start, &[cube], &b);
        assert_relative_eq!(cost, 10.0 * 1.0 / b.capacity(), max_relative = 1e-14);
    }

    #[test]
    fn sweep_cost_matches_hand_sum() {
        // Full 10x10 sequential sweep at 5 m spacing, 5 m/s: row-major
        // neighbors are 5 m apart except the 9 row wraps.
        let grid = GridSpec::with_dims(10, 10, 1).unwrap();
        let b = BatteryModel::default();
        let cubes: Vec<usize> = (0..100).collect();
        let start = grid.center([0, 0, 0]);
        let cost = trajectory_cost(&grid, start, &cubes, &b);
        // 90 straight legs of 5 m plus 9 wrap legs of sqrt(45^2 + 5^2) m,
        // plus 100 hovers.
        let wrap = (45.0f64.powi(2) + 25.0).sqrt();
        let seconds = (90.0 * 5.0 + 9.0 * wrap) / 5.0 + 100.0 * 10.0;
        assert_relative_eq!(cost, seconds / b.capacity(), max_relative = 1e-12);
    }

    #[test]
    fn cost_additive_over_concatenation() {
        let grid = GridSpec::with_dims(5, 5, 1).unwrap();
        let b = BatteryModel::default();
        let all: Vec<usize> = vec![3, 8, 20, 11, 24];
        let start = [0.0; 3];
        let first = trajectory_cost(&grid, start, &all[..2], &b);
        let mid = grid.center(grid.unlinear(all[1]));
        let second = trajectory_cost(&grid, mid, &all[2..], &b);
        let whole = trajectory_cost(&grid, start, &all, &b);
        assert_relative_eq!(first + second, whole, max_relative = 1e-12);
    }

    #[test]
    fn wind_pocket_depresses_speed() {
        let grid = GridSpec::with_dims(8, 8, 1).unwrap();
        let spec = WindSpec {
            base_speed: 3.0,
            pockets: vec![WindPocket { center: [7.5, 7.5, 2.5], radius: 6.0, depth: 2.5 }],
            floor: 0.1,
        };
        let wind = spec.build(&grid).unwrap();
        let pocket = grid.linear([1, 1, 0]).unwrap();
        let far = grid.linear([7, 7, 0]).unwrap();
        assert!(wind.speed(pocket) < 1.0);
        assert!(wind.speed(far) > 2.8);
    }
}
