use std::path::Path;

use serde::{Deserialize, Serialize};

use aqimon_core::grid::GridSpec;
use aqimon_core::model::FitConfig;
use aqimon_core::planner::SessionParams;
use aqimon_core::plume::PlumeParams;
use aqimon_core::sim::{
    generate_field, BatteryModel, FieldConfig, Scenario, SyntheticField, WindPocket, WindSpec,
};
use aqimon_core::{Error, Result};

/// Declarative run configuration. Every field has a default so a config
/// file only needs to list what it changes; command-line flags override
/// individual fields on top.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Scenario,
    /// Cubes per axis.
    pub grid: [usize; 3],
    /// Cube edge length, m.
    pub spacing: f64,
    pub plume: PlumeParams,
    /// Hidden-layer width K.
    pub neurons: usize,
    pub seed: u64,
    /// PDT selection threshold.
    pub threshold: f64,
    /// Low-activity floor: cubes with PDT at or below it stay selected.
    pub delta: f64,
    /// Mean relative deviation that flips the next cycle to complete
    /// monitoring.
    pub sigma_dev: f64,
    pub battery: BatteryModel,
    pub wind: WindSpec,
    /// Additive AQI baseline of the synthetic ground truth.
    pub base_aqi: f64,
    /// Scale applied to the plume profile in the ground truth.
    pub plume_scale: f64,
    /// Relative amplitude of the smooth truth perturbation.
    pub perturbation: f64,
    /// Relative bound of uniform sensor noise.
    pub sensor_error: f64,
    /// Start cube (linear index) of every trajectory.
    pub start: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::TwoD,
            grid: [10, 10, 1],
            spacing: 5.0,
            plume: PlumeParams::default(),
            neurons: 100,
            seed: 0,
            threshold: 0.4,
            delta: 0.05,
            sigma_dev: 0.2,
            battery: BatteryModel::default(),
            wind: WindSpec {
                base_speed: 2.5,
                pockets: vec![WindPocket { center: [10.0, 10.0, 0.0], radius: 8.0, depth: 2.0 }],
                ..Default::default()
            },
            base_aqi: 60.0,
            plume_scale: 400.0,
            perturbation: 0.05,
            sensor_error: 0.03,
            start: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Dataset(format!("cannot read config {}: {e}", path.display()))
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.iter().any(|&d| d == 0) {
            return Err(Error::InvalidGrid("grid dims must be positive".into()));
        }
        if self.scenario == Scenario::TwoD && self.grid[2] != 1 {
            return Err(Error::InvalidGrid(format!(
                "2d scenario needs a single z layer, got {}",
                self.grid[2]
            )));
        }
        if self.start >= self.grid.iter().product::<usize>() {
            return Err(Error::InvalidGrid(format!(
                "start cube {} outside the grid",
                self.start
            )));
        }
        Ok(())
    }

    /// The measurement lattice. 2D scenarios put the single layer of cube
    /// centers at ground level (z = 0).
    pub fn grid_spec(&self) -> Result<GridSpec> {
        let origin_z = match self.scenario {
            Scenario::TwoD => -self.spacing / 2.0,
            Scenario::ThreeD => 0.0,
        };
        GridSpec::new([0.0, 0.0, origin_z], self.spacing, self.grid)
    }

    pub fn field(&self) -> Result<SyntheticField> {
        let grid = self.grid_spec()?;
        let wind = self.wind.build(&grid)?;
        generate_field(
            &grid,
            &self.plume,
            &wind,
            &FieldConfig {
                base_aqi: self.base_aqi,
                plume_scale: self.plume_scale,
                perturbation: self.perturbation,
                seed: self.seed,
            },
        )
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig { neurons: self.neurons, seed: self.seed, ..Default::default() }
    }

    pub fn session_params(&self) -> SessionParams {
        SessionParams {
            threshold: self.threshold,
            delta: self.delta,
            sigma_dev: self.sigma_dev,
            battery: self.battery,
            fit: self.fit_config(),
            plume: self.plume,
            start: self.start,
            ..Default::default()
        }
    }
}

/// Parses grid dims given as `NX,NY,NZ` or `NXxNYxNZ`.
pub fn parse_grid(text: &str) -> Result<[usize; 3]> {
    let parts: Vec<&str> = text.split(['x', 'X', ',']).collect();
    if parts.len() != 3 {
        return Err(Error::InvalidGrid(format!("expected three grid dims, got {text:?}")));
    }
    let mut dims = [0usize; 3];
    for (d, p) in dims.iter_mut().zip(&parts) {
        *d = p
            .trim()
            .parse()
            .map_err(|_| Error::InvalidGrid(format!("bad grid dimension {p:?}")))?;
    }
    Ok(dims)
}
