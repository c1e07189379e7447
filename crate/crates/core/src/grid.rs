//! Cube grid, coordinates, wind field, and sample records shared by all
//! other modules.
//!
//! Cubes are ordered row-major with the x index varying fastest, which fixes
//! the correspondence between linear cube indices and matrix rows everywhere
//! in the crate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default wind floor in m/s. Wind appears in denominators of the plume
/// model, so evaluated speeds are clamped from below.
pub const DEFAULT_WIND_FLOOR: f64 = 0.1;

/// Discretization of a monitoring volume into cubes of side `spacing`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: [f64; 3],
    pub spacing: f64,
    pub dims: [usize; 3],
}

impl GridSpec {
    pub fn new(origin: [f64; 3], spacing: f64, dims: [usize; 3]) -> Result<Self> {
        if !(spacing > 0.0) {
            return Err(Error::InvalidGrid(format!("spacing {spacing} must be > 0")));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidGrid(format!("dims {dims:?} must all be >= 1")));
        }
        Ok(Self { origin, spacing, dims })
    }

    /// Grid with origin at zero and 5 m spacing.
    pub fn with_dims(nx: usize, ny: usize, nz: usize) -> Result<Self> {
        Self::new([0.0; 3], 5.0, [nx, ny, nz])
    }

    pub fn num_cubes(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn contains(&self, index: [usize; 3]) -> bool {
        index[0] < self.dims[0] && index[1] < self.dims[1] && index[2] < self.dims[2]
    }

    /// Linear cube index, x fastest.
    pub fn linear(&self, index: [usize; 3]) -> Result<usize> {
        if !self.contains(index) {
            return Err(Error::IndexOutOfBounds(
                index[0], index[1], index[2], self.dims[0], self.dims[1], self.dims[2],
            ));
        }
        Ok(index[0] + self.dims[0] * (index[1] + self.dims[1] * index[2]))
    }

    pub fn unlinear(&self, linear: usize) -> [usize; 3] {
        let ix = linear % self.dims[0];
        let rest = linear / self.dims[0];
        [ix, rest % self.dims[1], rest / self.dims[1]]
    }

    /// Center of the cube at `index`: origin + (index + 1/2) * spacing.
    pub fn center(&self, index: [usize; 3]) -> [f64; 3] {
        [
            self.origin[0] + (index[0] as f64 + 0.5) * self.spacing,
            self.origin[1] + (index[1] as f64 + 0.5) * self.spacing,
            self.origin[2] + (index[2] as f64 + 0.5) * self.spacing,
        ]
    }

    /// Inverse of [`GridSpec::center`]; errors when the point is off-grid.
    pub fn index_of_center(&self, center: [f64; 3]) -> Result<[usize; 3]> {
        let mut index = [0usize; 3];
        for axis in 0..3 {
            let f = (center[axis] - self.origin[axis]) / self.spacing - 0.5;
            let i = f.round();
            if i < 0.0 || (f - i).abs() > 1e-9 {
                return Err(Error::InvalidGrid(format!(
                    "point {center:?} is not a cube center on this grid"
                )));
            }
            index[axis] = i as usize;
        }
        if !self.contains(index) {
            return Err(Error::IndexOutOfBounds(
                index[0], index[1], index[2], self.dims[0], self.dims[1], self.dims[2],
            ));
        }
        Ok(index)
    }

    /// All cube centers in row-major order (x fastest).
    pub fn cube_centers(&self) -> Vec<[f64; 3]> {
        let mut centers = Vec::with_capacity(self.num_cubes());
        for iz in 0..self.dims[2] {
            for iy in 0..self.dims[1] {
                for ix in 0..self.dims[0] {
                    centers.push(self.center([ix, iy, iz]));
                }
            }
        }
        centers
    }

    /// 6-connected in-bounds neighbors of `index`.
    pub fn neighbors(&self, index: [usize; 3]) -> Result<Vec<[usize; 3]>> {
        if !self.contains(index) {
            return Err(Error::IndexOutOfBounds(
                index[0], index[1], index[2], self.dims[0], self.dims[1], self.dims[2],
            ));
        }
        let mut out = Vec::with_capacity(6);
        for axis in 0..3 {
            if index[axis] > 0 {
                let mut n = index;
                n[axis] -= 1;
                out.push(n);
            }
            if index[axis] + 1 < self.dims[axis] {
                let mut n = index;
                n[axis] += 1;
                out.push(n);
            }
        }
        Ok(out)
    }

    /// Tallest cube-center height, used by the convexity guard.
    pub fn max_center_z(&self) -> f64 {
        self.origin[2] + (self.dims[2] as f64 - 0.5) * self.spacing
    }
}

/// One cube of the grid with its optional per-session state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cube {
    pub index: [usize; 3],
    pub center: [f64; 3],
    pub aqi: Option<f64>,
    pub pdt: Option<f64>,
}

impl Cube {
    pub fn at(grid: &GridSpec, index: [usize; 3]) -> Result<Self> {
        if !grid.contains(index) {
            return Err(Error::IndexOutOfBounds(
                index[0], index[1], index[2], grid.dims[0], grid.dims[1], grid.dims[2],
            ));
        }
        Ok(Self { index, center: grid.center(index), aqi: None, pdt: None })
    }
}

/// Per-cube wind speeds with a positive floor applied on read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindField {
    speeds: Vec<f64>,
    floor: f64,
}

impl WindField {
    pub fn new(speeds: Vec<f64>, floor: f64) -> Result<Self> {
        if !(floor > 0.0) {
            return Err(Error::InvalidGrid(format!("wind floor {floor} must be > 0")));
        }
        if speeds.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("wind speeds".into()));
        }
        Ok(Self { speeds, floor })
    }

    pub fn uniform(speed: f64, num_cubes: usize) -> Result<Self> {
        Self::new(vec![speed; num_cubes], DEFAULT_WIND_FLOOR)
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn len(&self) -> usize {
        self.speeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speeds.is_empty()
    }

    /// Effective (clamped) speed at a linear cube index.
    pub fn speed(&self, linear: usize) -> f64 {
        self.speeds[linear].max(self.floor)
    }

    pub fn raw_speeds(&self) -> &[f64] {
        &self.speeds
    }
}

/// One measurement: position, wind speed at the position, and AQI value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub position: [f64; 3],
    pub wind: f64,
    pub aqi: f64,
}

impl Sample {
    pub fn new(position: [f64; 3], wind: f64, aqi: f64) -> Result<Self> {
        if position.iter().any(|p| !p.is_finite()) || !wind.is_finite() || !aqi.is_finite() {
            return Err(Error::NonFinite("sample".into()));
        }
        if aqi < 0.0 {
            return Err(Error::Dataset(format!("aqi {aqi} must be >= 0")));
        }
        if wind < 0.0 {
            return Err(Error::Dataset(format!("wind {wind} must be >= 0")));
        }
        Ok(Self { position, wind, aqi })
    }
}

/// A collection of measurements used for fitting and screening.
pub type SampleSet = Vec<Sample>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cube_center() {
        let g = GridSpec::with_dims(1, 1, 1).unwrap();
        assert_eq!(g.cube_centers(), vec![[2.5, 2.5, 2.5]]);
    }

    #[test]
    fn two_cube_centers() {
        let g = GridSpec::with_dims(2, 1, 1).unwrap();
        assert_eq!(g.cube_centers(), vec![[2.5, 2.5, 2.5], [7.5, 2.5, 2.5]]);
    }

    #[test]
    fn centers_3x3x2() {
        let g = GridSpec::with_dims(3, 3, 2).unwrap();
        let centers = g.cube_centers();
        assert_eq!(centers.len(), 18);
        assert_eq!(centers[17], [12.5, 12.5, 7.5]);
    }

    #[test]
    fn neighbors_counts() {
        let g1 = GridSpec::with_dims(1, 1, 1).unwrap();
        assert!(g1.neighbors([0, 0, 0]).unwrap().is_empty());

        let g2 = GridSpec::with_dims(3, 3, 1).unwrap();
        assert_eq!(g2.neighbors([1, 1, 0]).unwrap().len(), 4);

        let g3 = GridSpec::with_dims(3, 3, 3).unwrap();
        assert_eq!(g3.neighbors([0, 0, 0]).unwrap().len(), 3);
    }

    #[test]
    fn neighbors_out_of_bounds_errors() {
        let g = GridSpec::with_dims(2, 2, 1).unwrap();
        assert!(g.neighbors([2, 0, 0]).is_err());
    }

    #[test]
    fn wind_clamped_to_floor() {
        let w = WindField::new(vec![0.0, 5.0], 0.1).unwrap();
        assert_eq!(w.speed(0), 0.1);
        assert_eq!(w.speed(1), 5.0);
    }

    #[test]
    fn invalid_grid_rejected() {
        assert!(GridSpec::new([0.0; 3], 0.0, [1, 1, 1]).is_err());
        assert!(GridSpec::new([0.0; 3], 5.0, [0, 1, 1]).is_err());
    }

    #[test]
    fn center_index_round_trip() {
        let g = GridSpec::with_dims(4, 3, 2).unwrap();
        for linear in 0..g.num_cubes() {
            let index = g.unlinear(linear);
            assert_eq!(g.linear(index).unwrap(), linear);
            let c = g.center(index);
            assert_eq!(g.index_of_center(c).unwrap(), index);
        }
    }
}
