//! Hybrid estimator: a fixed random-feature hidden layer plus a line-source
//! plume column, with output weights solved by pseudoinverse and the source
//! height fitted by a scalar Newton iteration.
//!
//! The hidden layer is never trained; weights and biases are drawn once from
//! a seeded distribution and row-normalized, so the least-squares solution
//! for the output weights is exact. Fitting alternates a beta step (minimum
//! residual for the current height) with a height step (root of dS/dH on
//! [0, H0], golden-section fallback when Newton leaves the bracket).

use nalgebra::{DMatrix, DVector};
use rand::distributions::Uniform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::SampleSet;
use crate::plume::{revised_gpm_dh, revised_gpm_d2h, revised_gpm_z, PlumeParams};

/// Input dimensionality of the model: x, y, z, u.
pub const INPUT_DIM: usize = 4;

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn eval(&self, a: f64) -> f64 {
        match self {
            Activation::Sigmoid => 1.0 / (1.0 + (-a).exp()),
            Activation::Tanh => a.tanh(),
        }
    }

    pub fn derivative(&self, a: f64) -> f64 {
        match self {
            Activation::Sigmoid => {
                let g = self.eval(a);
                g * (1.0 - g)
            }
            Activation::Tanh => {
                let t = a.tanh();
                1.0 - t * t
            }
        }
    }
}

/// Fixed random hidden layer with `k` neurons over `m`-dimensional inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenLayer {
    /// K x m weight matrix; rows are unit-norm.
    pub weights: DMatrix<f64>,
    /// K biases.
    pub biases: DVector<f64>,
    pub activation: Activation,
}

impl HiddenLayer {
    pub fn k(&self) -> usize {
        self.weights.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    /// Feature vector g(W x + b) for one input.
    pub fn features(&self, input: &[f64]) -> DVector<f64> {
        let k = self.k();
        let mut out = DVector::zeros(k);
        for i in 0..k {
            let mut a = self.biases[i];
            for j in 0..self.input_dim() {
                a += self.weights[(i, j)] * input[j];
            }
            out[i] = self.activation.eval(a);
        }
        out
    }

    /// Pre-activations W x + b.
    fn pre_activations(&self, input: &[f64]) -> DVector<f64> {
        let k = self.k();
        let mut out = DVector::zeros(k);
        for i in 0..k {
            let mut a = self.biases[i];
            for j in 0..self.input_dim() {
                a += self.weights[(i, j)] * input[j];
            }
            out[i] = a;
        }
        out
    }
}

/// Deterministic hidden-layer initialization: weights uniform in [-1, 1]
/// then row-normalized, biases uniform in [-1, 1].
pub fn init_hidden(k: usize, m: usize, seed: u64, activation: Activation) -> HiddenLayer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new_inclusive(-1.0f64, 1.0f64);
    let mut weights = DMatrix::zeros(k, m);
    for i in 0..k {
        let mut norm_sq = 0.0;
        for j in 0..m {
            let w = rng.sample(dist);
            weights[(i, j)] = w;
            norm_sq += w * w;
        }
        let norm = norm_sq.sqrt();
        if norm > 0.0 {
            for j in 0..m {
                weights[(i, j)] /= norm;
            }
        }
    }
    let mut biases = DVector::zeros(k);
    for i in 0..k {
        biases[i] = rng.sample(dist);
    }
    HiddenLayer { weights, biases, activation }
}

/// Fitted hybrid model.
#[derive(Debug, Clone, PartialEq)]
pub struct GpmNnModel {
    pub hidden: HiddenLayer,
    /// Output weights: beta_1..beta_K for the hidden features, beta_{K+1}
    /// for the plume column, beta_{K+2} for the constant.
    pub beta: DVector<f64>,
    /// Plume parameters carrying the fitted height.
    pub plume: PlumeParams,
    /// Day-average measured AQI, added to every prediction.
    pub c_static: f64,
    /// Standard deviation of fit residuals, reporting only.
    pub noise_sigma: f64,
    /// Seed used for the hidden layer, recorded for reproducibility.
    pub seed: u64,
}

/// Diagnostics from one fit run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    /// Final residual sum of squares S.
    pub residual_s: f64,
    pub iterations: usize,
    pub h_estimate: f64,
    pub converged: bool,
    /// Minimum numerical d2S/dH2 over a height grid; positive under the
    /// convexity guard.
    pub convexity_check: f64,
    /// True when fewer samples than output weights were available.
    pub underdetermined: bool,
    /// True when the normal system was rank-deficient and the minimum-norm
    /// solution was used.
    pub rank_deficient: bool,
}

/// Minimum-norm least-squares solution of J beta = targets.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub beta: DVector<f64>,
    pub rank: usize,
    pub rank_deficient: bool,
}

/// Solves min ||J beta - targets||^2 by singular value decomposition,
/// returning the minimum-norm solution when J is rank-deficient.
pub fn solve_beta(j: &DMatrix<f64>, targets: &DVector<f64>) -> Result<LeastSquares> {
    if j.iter().any(|v| !v.is_finite()) || targets.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("least-squares system".into()));
    }
    let ncols = j.ncols();
    let svd = j.clone().svd(true, true);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let eps = max_sv * (j.nrows().max(ncols) as f64) * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|&&s| s > eps).count();
    let beta = svd
        .solve(targets, eps)
        .map_err(|e| Error::Metric(format!("svd solve failed: {e}")))?;
    Ok(LeastSquares { beta, rank, rank_deficient: rank < ncols.min(j.nrows()) })
}

/// Model output matrix: hidden features, plume column, all-ones column.
pub fn design_matrix(
    hidden: &HiddenLayer,
    plume: &PlumeParams,
    samples: &SampleSet,
) -> Result<DMatrix<f64>> {
    let n = samples.len();
    let k = hidden.k();
    let mut j = DMatrix::zeros(n, k + 2);
    for (row, s) in samples.iter().enumerate() {
        let input = [s.position[0], s.position[1], s.position[2], s.wind];
        if input.iter().any(|v| !v.is_finite()) || !s.aqi.is_finite() {
            return Err(Error::NonFinite(format!("sample {row}")));
        }
        let g = hidden.features(&input);
        for col in 0..k {
            j[(row, col)] = g[col];
        }
        j[(row, k)] = revised_gpm_z(s.position[2], s.wind, plume);
        j[(row, k + 1)] = 1.0;
    }
    Ok(j)
}

/// Fit configuration; the defaults match the crate-wide conventions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    pub neurons: usize,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
    pub activation: Activation,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { neurons: 100, seed: 0, tol: 1e-8, max_iter: 100, activation: Activation::Sigmoid }
    }
}

struct HeightObjective<'a> {
    samples: &'a SampleSet,
    /// Per-sample contribution of hidden features and constant, fixed
    /// during the height step.
    fixed_part: Vec<f64>,
    targets: Vec<f64>,
    beta_plume: f64,
    plume: PlumeParams,
}

impl HeightObjective<'_> {
    fn with_height(&self, h: f64) -> PlumeParams {
        PlumeParams { h, ..self.plume }
    }

    fn residuals(&self, h: f64) -> Vec<f64> {
        let p = self.with_height(h);
        self.samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                self.targets[i]
                    - self.fixed_part[i]
                    - self.beta_plume * revised_gpm_z(s.position[2], s.wind, &p)
            })
            .collect()
    }

    fn s(&self, h: f64) -> f64 {
        self.residuals(h).iter().map(|r| r * r).sum()
    }

    fn ds_dh(&self, h: f64) -> f64 {
        let p = self.with_height(h);
        let r = self.residuals(h);
        -2.0 * self
            .samples
            .iter()
            .enumerate()
            .map(|(i, s)| r[i] * self.beta_plume * revised_gpm_dh(s.position[2], s.wind, &p))
            .sum::<f64>()
    }

    fn d2s_dh2(&self, h: f64) -> f64 {
        let p = self.with_height(h);
        let r = self.residuals(h);
        2.0 * self
            .samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let dh = self.beta_plume * revised_gpm_dh(s.position[2], s.wind, &p);
                let d2h = self.beta_plume * revised_gpm_d2h(s.position[2], s.wind, &p);
                dh * dh - r[i] * d2h
            })
            .sum::<f64>()
    }
}

/// Newton root of dS/dH on [0, h0]; golden-section minimization of S when
/// Newton stalls or leaves the bracket.
fn height_step(obj: &HeightObjective<'_>, h_init: f64, h0: f64) -> f64 {
    let mut h = h_init;
    for _ in 0..60 {
        let f = obj.ds_dh(h);
        if f.abs() < 1e-14 {
            return h;
        }
        let fp = obj.d2s_dh2(h);
        if !(fp > 0.0) || !fp.is_finite() {
            return golden_section(obj, h0);
        }
        let next = h - f / fp;
        if !next.is_finite() || next < 0.0 || next > h0 {
            return golden_section(obj, h0);
        }
        if (next - h).abs() < 1e-12 * h0.max(1.0) {
            return next;
        }
        h = next;
    }
    golden_section(obj, h0)
}

fn golden_section(obj: &HeightObjective<'_>, h0: f64) -> f64 {
    let phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0, h0);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (obj.s(c), obj.s(d));
    while (b - a) > 1e-12 * h0.max(1.0) {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = obj.s(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = obj.s(d);
        }
    }
    (a + b) / 2.0
}

/// Fits output weights and source height to the samples.
///
/// Requires the convexity guard sigma_z^2 > max(2 z_i^2, 2 h0^2) over the
/// sample heights; the residual S is then convex in the height and the
/// alternation cannot increase it.
pub fn fit(
    samples: &SampleSet,
    plume_init: &PlumeParams,
    config: &FitConfig,
) -> Result<(GpmNnModel, FitReport)> {
    plume_init.validate()?;
    if samples.len() < 2 {
        return Err(Error::NotEnoughSamples { got: samples.len(), need: 2 });
    }
    let z_max = samples.iter().map(|s| s.position[2].abs()).fold(0.0f64, f64::max);
    plume_init.check_convexity_guard(z_max)?;

    let n = samples.len();
    let k = config.neurons;
    let hidden = init_hidden(k, INPUT_DIM, config.seed, config.activation);
    let c_static = samples.iter().map(|s| s.aqi).sum::<f64>() / n as f64;
    let targets: Vec<f64> = samples.iter().map(|s| s.aqi - c_static).collect();
    let target_vec = DVector::from_vec(targets.clone());

    let mut plume = PlumeParams { h: plume_init.h0 / 2.0, ..*plume_init };
    let mut s_prev = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    let mut rank_deficient = false;

    for iter in 0..config.max_iter {
        iterations = iter + 1;
        let j = design_matrix(&hidden, &plume, samples)?;
        let ls = solve_beta(&j, &target_vec)?;
        let beta = ls.beta;
        rank_deficient = ls.rank_deficient;

        let fixed_part: Vec<f64> = (0..n)
            .map(|i| {
                let mut a = beta[k + 1];
                for c in 0..k {
                    a += beta[c] * j[(i, c)];
                }
                a
            })
            .collect();
        let obj = HeightObjective {
            samples,
            fixed_part,
            targets: targets.clone(),
            beta_plume: beta[k],
            plume,
        };
        let h = if beta[k].abs() > 0.0 {
            height_step(&obj, plume.h, plume.h0)
        } else {
            plume.h // plume column unused; any height is stationary
        };
        plume.h = h;
        let s = obj.s(h);
        if (s_prev - s).abs() < config.tol {
            converged = true;
            break;
        }
        s_prev = s;
    }

    // Final beta for the settled height.
    let j = design_matrix(&hidden, &plume, samples)?;
    let ls = solve_beta(&j, &target_vec)?;
    let beta = ls.beta;
    let residual = &j * &beta - &target_vec;
    let residual_s: f64 = residual.iter().map(|r| r * r).sum();
    let noise_sigma = (residual_s / n as f64).sqrt();

    let model = GpmNnModel {
        hidden,
        beta,
        plume,
        c_static,
        noise_sigma,
        seed: config.seed,
    };
    let convexity_check = convexity_scan(&model, samples, 101);
    let report = FitReport {
        residual_s,
        iterations,
        h_estimate: plume.h,
        converged,
        convexity_check,
        underdetermined: n < k + 2,
        rank_deficient: rank_deficient || ls.rank_deficient,
    };
    Ok((model, report))
}

/// Refits only the output weights against new targets, keeping the hidden
/// layer and the fitted height. Returns the updated model.
pub fn refit_beta(model: &GpmNnModel, samples: &SampleSet) -> Result<(GpmNnModel, bool)> {
    let j = design_matrix(&model.hidden, &model.plume, samples)?;
    let targets =
        DVector::from_iterator(samples.len(), samples.iter().map(|s| s.aqi - model.c_static));
    let ls = solve_beta(&j, &targets)?;
    let mut updated = model.clone();
    updated.beta = ls.beta;
    Ok((updated, ls.rank_deficient))
}

impl GpmNnModel {
    /// Estimated AQI at a position under wind speed `u`.
    pub fn predict(&self, pos: [f64; 3], u: f64) -> f64 {
        let k = self.hidden.k();
        let input = [pos[0], pos[1], pos[2], u];
        let g = self.hidden.features(&input);
        let mut t = self.beta[k + 1];
        for i in 0..k {
            t += self.beta[i] * g[i];
        }
        t += self.beta[k] * revised_gpm_z(pos[2], u, &self.plume);
        self.c_static + t
    }

    /// Analytic partials of the prediction with respect to (x, y, z, u).
    pub fn predict_grad(&self, pos: [f64; 3], u: f64) -> [f64; 4] {
        let k = self.hidden.k();
        let input = [pos[0], pos[1], pos[2], u];
        let pre = self.hidden.pre_activations(&input);
        let mut grad = [0.0f64; 4];
        for i in 0..k {
            let gp = self.beta[i] * self.hidden.activation.derivative(pre[i]);
            for j in 0..INPUT_DIM {
                grad[j] += gp * self.hidden.weights[(i, j)];
            }
        }
        let pg = crate::plume::revised_gpm_grad(pos, u, &self.plume);
        for j in 0..INPUT_DIM {
            grad[j] += self.beta[k] * pg[j];
        }
        grad
    }

    /// Residual S evaluated at an alternative source height with the current
    /// weights, used by the convexity scan.
    fn s_at_height(&self, samples: &SampleSet, h: f64) -> f64 {
        let k = self.hidden.k();
        let p = PlumeParams { h, ..self.plume };
        samples
            .iter()
            .map(|s| {
                let input = [s.position[0], s.position[1], s.position[2], s.wind];
                let g = self.hidden.features(&input);
                let mut t = self.beta[k + 1];
                for i in 0..k {
                    t += self.beta[i] * g[i];
                }
                t += self.beta[k] * revised_gpm_z(s.position[2], s.wind, &p);
                let r = (s.aqi - self.c_static) - t;
                r * r
            })
            .sum()
    }
}

/// Minimum central second difference of S over a uniform height grid in
/// [0, h0], scaled to estimate d2S/dH2. Positive everywhere under the
/// convexity guard; may go nonpositive when the guard is violated.
pub fn convexity_scan(model: &GpmNnModel, samples: &SampleSet, grid_points: usize) -> f64 {
    let n = grid_points.max(3);
    let h0 = model.plume.h0;
    let dh = h0 / (n - 1) as f64;
    let s: Vec<f64> = (0..n).map(|i| model.s_at_height(samples, i as f64 * dh)).collect();
    let mut min = f64::INFINITY;
    for i in 1..n - 1 {
        let second = (s[i - 1] - 2.0 * s[i] + s[i + 1]) / (dh * dh);
        if second < min {
            min = second;
        }
    }
    min
}

/// Versioned on-disk form of a fitted model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: u32,
    pub seed: u64,
    pub activation: Activation,
    pub neurons: usize,
    pub input_dim: usize,
    /// Row-major K x input_dim weights.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub beta: Vec<f64>,
    pub plume: PlumeParams,
    pub c_static: f64,
    pub noise_sigma: f64,
}

pub const MODEL_FILE_VERSION: u32 = 1;

impl GpmNnModel {
    pub fn to_file(&self) -> ModelFile {
        let k = self.hidden.k();
        let m = self.hidden.input_dim();
        let mut weights = Vec::with_capacity(k * m);
        for i in 0..k {
            for j in 0..m {
                weights.push(self.hidden.weights[(i, j)]);
            }
        }
        ModelFile {
            version: MODEL_FILE_VERSION,
            seed: self.seed,
            activation: self.hidden.activation,
            neurons: k,
            input_dim: m,
            weights,
            biases: self.hidden.biases.iter().cloned().collect(),
            beta: self.beta.iter().cloned().collect(),
            plume: self.plume,
            c_static: self.c_static,
            noise_sigma: self.noise_sigma,
        }
    }

    pub fn from_file(file: &ModelFile) -> Result<Self> {
        if file.version != MODEL_FILE_VERSION {
            return Err(Error::Dataset(format!(
                "unsupported model file version {}",
                file.version
            )));
        }
        if file.weights.len() != file.neurons * file.input_dim
            || file.biases.len() != file.neurons
            || file.beta.len() != file.neurons + 2
        {
            return Err(Error::Dataset("model file has inconsistent dimensions".into()));
        }
        let hidden = HiddenLayer {
            weights: DMatrix::from_row_slice(file.neurons, file.input_dim, &file.weights),
            biases: DVector::from_vec(file.biases.clone()),
            activation: file.activation,
        };
        Ok(Self {
            hidden,
            beta: DVector::from_vec(file.beta.clone()),
            plume: file.plume,
            c_static: file.c_static,
            noise_sigma: file.noise_sigma,
            seed: file.seed,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(json)?;
        Self::from_file(&file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Sample;
    use approx::assert_relative_eq;

    fn sample(pos: [f64; 3], u: f64, aqi: f64) -> Sample {
        Sample::new(pos, u, aqi).unwrap()
    }

    #[test]
    fn init_hidden_deterministic_and_normalized() {
        let a = init_hidden(1000, 4, 42, Activation::Sigmoid);
        let b = init_hidden(1000, 4, 42, Activation::Sigmoid);
        assert_eq!(a, b);
        for i in 0..1000 {
            let norm: f64 = (0..4).map(|j| a.weights[(i, j)].powi(2)).sum::<f64>().sqrt();
            assert_relative_eq!(norm, 1.0, max_relative = 1e-12);
        }
        let c = init_hidden(1000, 4, 43, Activation::Sigmoid);
        assert_ne!(a, c);
    }

    #[test]
    fn init_hidden_degenerate() {
        let h = init_hidden(0, 4, 1, Activation::Sigmoid);
        assert_eq!(h.k(), 0);
    }

    #[test]
    fn design_matrix_degenerate_hidden() {
        let hidden = init_hidden(0, 4, 0, Activation::Sigmoid);
        let plume = PlumeParams::default();
        let samples = vec![
            sample([0.0, 0.0, 5.0], 1.0, 80.0),
            sample([5.0, 0.0, 10.0], 2.0, 90.0),
            sample([0.0, 5.0, 15.0], 1.5, 85.0),
        ];
        let j = design_matrix(&hidden, &plume, &samples).unwrap();
        assert_eq!(j.shape(), (3, 2));
        for (row, s) in samples.iter().enumerate() {
            assert_eq!(j[(row, 0)], revised_gpm_z(s.position[2], s.wind, &plume));
            assert_eq!(j[(row, 1)], 1.0);
        }
    }

    #[test]
    fn design_matrix_elementwise() {
        let hidden = init_hidden(5, 4, 7, Activation::Sigmoid);
        let plume = PlumeParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dist = Uniform::new(0.0f64, 40.0f64);
        let samples: SampleSet = (0..10)
            .map(|_| {
                sample(
                    [rng.sample(dist), rng.sample(dist), rng.sample(dist)],
                    1.0 + rng.sample(dist) / 20.0,
                    50.0 + rng.sample(dist),
                )
            })
            .collect();
        let j = design_matrix(&hidden, &plume, &samples).unwrap();
        // Independent scalar recomputation per element.
        for (row, s) in samples.iter().enumerate() {
            for col in 0..5 {
                let mut a = hidden.biases[col];
                for d in 0..4 {
                    let x = if d < 3 { s.position[d] } else { s.wind };
                    a += hidden.weights[(col, d)] * x;
                }
                assert_relative_eq!(
                    j[(row, col)],
                    1.0 / (1.0 + (-a).exp()),
                    max_relative = 1e-14
                );
            }
            assert_eq!(j[(row, 6)], 1.0);
        }
    }

    #[test]
    fn solve_beta_identity() {
        let j = DMatrix::identity(4, 4);
        let t = DVector::from_vec(vec![1.0, -2.0, 3.0, 0.5]);
        let ls = solve_beta(&j, &t).unwrap();
        assert_relative_eq!(ls.beta, t, max_relative = 1e-12);
        assert!(!ls.rank_deficient);
    }

    #[test]
    fn solve_beta_zero_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dist = Uniform::new(-1.0f64, 1.0f64);
        let j = DMatrix::from_fn(6, 3, |_, _| rng.sample(dist));
        let t = DVector::zeros(6);
        let ls = solve_beta(&j, &t).unwrap();
        assert!(ls.beta.iter().all(|&b| b.abs() < 1e-12));
    }

    #[test]
    fn solve_beta_rank_deficient_min_norm() {
        // Two identical columns: infinitely many solutions; SVD returns the
        // minimum-norm one, which splits the weight evenly.
        let j = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let t = DVector::from_vec(vec![2.0, 4.0, 6.0]);
        let ls = solve_beta(&j, &t).unwrap();
        assert!(ls.rank_deficient);
        assert_relative_eq!(ls.beta[0], 1.0, max_relative = 1e-10);
        assert_relative_eq!(ls.beta[1], 1.0, max_relative = 1e-10);
    }

    fn synthetic_linear_samples(h_true: f64, n: usize) -> SampleSet {
        // Noiseless data from a K = 0 generator with known coefficients.
        let plume = PlumeParams { h: h_true, ..Default::default() };
        let mut out = Vec::new();
        for i in 0..n {
            let z = 2.5 + 45.0 * (i as f64) / (n as f64 - 1.0);
            let u = 0.5 + 0.1 * (i % 7) as f64;
            let c = revised_gpm_z(z, u, &plume);
            out.push(sample([0.0, 0.0, z], u, 60.0 + 400.0 * c));
        }
        out
    }

    #[test]
    fn fit_recovers_height_noiseless() {
        let samples = synthetic_linear_samples(20.0, 40);
        let (model, report) = fit(
            &samples,
            &PlumeParams::default(),
            &FitConfig { neurons: 0, tol: 1e-15, ..Default::default() },
        )
        .unwrap();
        assert!(report.converged);
        assert!((model.plume.h - 20.0).abs() < 1e-4, "h = {}", model.plume.h);
        assert!(report.residual_s < 1e-12, "S = {}", report.residual_s);
        assert_relative_eq!(model.beta[0], 400.0, max_relative = 1e-6);
        assert!(report.convexity_check > 0.0);
    }

    #[test]
    fn fit_constant_targets() {
        let samples: SampleSet =
            (0..10).map(|i| sample([0.0, 0.0, 2.5 + 5.0 * i as f64], 1.0, 70.0)).collect();
        let (model, report) = fit(
            &samples,
            &PlumeParams::default(),
            &FitConfig { neurons: 0, ..Default::default() },
        )
        .unwrap();
        assert!(report.residual_s < 1e-18);
        // c_static equals the constant, so all coefficients stay ~0.
        assert_relative_eq!(model.c_static, 70.0, max_relative = 1e-12);
        assert!(model.predict([0.0, 0.0, 12.5], 1.0) - 70.0 < 1e-8);
    }

    #[test]
    fn fit_rejects_guard_violation() {
        let samples = synthetic_linear_samples(20.0, 10);
        let bad = PlumeParams { sigma_z: 5.0, ..Default::default() };
        let err = fit(&samples, &bad, &FitConfig::default()).unwrap_err();
        assert!(matches!(err, Error::ConvexityGuard { .. }));
        assert!(err.to_string().contains("sigma_z^2"));
    }

    #[test]
    fn fit_monotone_alternation() {
        // S never increases across alternation steps; checked by refitting
        // with growing iteration caps.
        let mut samples = synthetic_linear_samples(33.0, 60);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dist = Uniform::new(-2.0f64, 2.0f64);
        for s in &mut samples {
            s.aqi = (s.aqi + rng.sample(dist)).max(0.0);
        }
        let mut last = f64::INFINITY;
        for max_iter in 1..8 {
            let (_, report) = fit(
                &samples,
                &PlumeParams::default(),
                &FitConfig { neurons: 10, max_iter, ..Default::default() },
            )
            .unwrap();
            assert!(report.residual_s <= last + 1e-8);
            last = report.residual_s;
        }
    }

    #[test]
    fn predict_null_model() {
        let samples = synthetic_linear_samples(20.0, 10);
        let (mut model, _) = fit(
            &samples,
            &PlumeParams::default(),
            &FitConfig { neurons: 0, ..Default::default() },
        )
        .unwrap();
        model.beta[0] = 0.0;
        model.beta[1] = 0.0;
        assert_relative_eq!(model.predict([1.0, 2.0, 3.0], 1.5), model.c_static);
    }

    #[test]
    fn predict_interpolates_exact_system() {
        // N = K + 2 noiseless samples: the system is square, prediction at
        // a training sample reproduces the target.
        let config = FitConfig { neurons: 6, ..Default::default() };
        let plume = PlumeParams { h: 10.0, ..Default::default() };
        let hidden = init_hidden(6, 4, config.seed, config.activation);
        let beta_true: Vec<f64> = vec![3.0, -2.0, 1.0, 0.5, -1.5, 2.5, 120.0, 4.0];
        let mut samples = Vec::new();
        for i in 0..8 {
            let pos = [5.0 * i as f64, 3.0 * (i % 3) as f64, 2.5 + 5.0 * (i % 5) as f64];
            let u = 1.0 + 0.3 * i as f64;
            let g = hidden.features(&[pos[0], pos[1], pos[2], u]);
            let mut t = beta_true[7];
            for j in 0..6 {
                t += beta_true[j] * g[j];
            }
            t += beta_true[6] * revised_gpm_z(pos[2], u, &plume);
            samples.push(sample(pos, u, t));
        }
        let (model, _) = fit(&samples, &plume, &config).unwrap();
        for s in &samples {
            assert_relative_eq!(
                model.predict(s.position, s.wind),
                s.aqi,
                epsilon = 1e-8,
                max_relative = 1e-8
            );
        }
    }

    #[test]
    fn predict_monotone_in_wind_for_pure_plume() {
        let samples = synthetic_linear_samples(20.0, 10);
        let (mut model, _) = fit(
            &samples,
            &PlumeParams::default(),
            &FitConfig { neurons: 0, ..Default::default() },
        )
        .unwrap();
        model.beta[0] = 5.0;
        model.beta[1] = 0.0;
        let mut last = f64::INFINITY;
        for i in 1..10 {
            let u = i as f64;
            let p = model.predict([0.0, 0.0, 10.0], u);
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn k0_matches_direct_linear_regression() {
        let mut samples = synthetic_linear_samples(20.0, 30);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dist = Uniform::new(-5.0f64, 5.0f64);
        for s in &mut samples {
            s.aqi = (s.aqi + rng.sample(dist)).max(0.0);
        }
        let (model, _) = fit(
            &samples,
            &PlumeParams::default(),
            &FitConfig { neurons: 0, ..Default::default() },
        )
        .unwrap();
        // Direct regression on [revised_gpm, 1] at the fitted height.
        let c_static = samples.iter().map(|s| s.aqi).sum::<f64>() / samples.len() as f64;
        let j = DMatrix::from_fn(samples.len(), 2, |r, c| {
            if c == 0 {
                revised_gpm_z(samples[r].position[2], samples[r].wind, &model.plume)
            } else {
                1.0
            }
        });
        let t = DVector::from_iterator(samples.len(), samples.iter().map(|s| s.aqi - c_static));
        let direct = solve_beta(&j, &t).unwrap().beta;
        assert_relative_eq!(model.beta[0], direct[0], max_relative = 1e-10);
        assert_relative_eq!(model.beta[1], direct[1], epsilon = 1e-10);
    }

    #[test]
    fn predict_grad_matches_finite_differences() {
        let samples = synthetic_linear_samples(20.0, 40);
        let (model, _) = fit(
            &samples,
            &PlumeParams::default(),
            &FitConfig { neurons: 25, ..Default::default() },
        )
        .unwrap();
        let pos = [12.0, 7.0, 22.0];
        let u = 1.7;
        let grad = model.predict_grad(pos, u);
        for var in 0..4 {
            let scale = if var < 3 { pos[var].abs().max(1.0) } else { u };
            let h = 1e-5 * scale;
            let mut lo = pos;
            let mut hi = pos;
            let (ulo, uhi) = if var < 3 {
                lo[var] -= h;
                hi[var] += h;
                (u, u)
            } else {
                (u - h, u + h)
            };
            let fd = (model.predict(hi, uhi) - model.predict(lo, ulo)) / (2.0 * h);
            if grad[var].abs() > 1e-12 {
                assert_relative_eq!(grad[var], fd, max_relative = 1e-6);
            } else {
                assert!(fd.abs() < 1e-8);
            }
        }
    }

    #[test]
    fn convexity_scan_positive_under_guard() {
        let samples = synthetic_linear_samples(20.0, 25);
        let (model, _) = fit(
            &samples,
            &PlumeParams::default(),
            &FitConfig { neurons: 5, ..Default::default() },
        )
        .unwrap();
        assert!(convexity_scan(&model, &samples, 201) > 0.0);
    }

    #[test]
    fn convexity_scan_violating_configuration() {
        // Narrow sigma_z with a tall sample: S(H) has a localized dip, so
        // the second difference goes negative somewhere. The scan reports
        // rather than errors.
        let plume = PlumeParams { sigma_z: 5.0, h: 25.0, ..Default::default() };
        let hidden = init_hidden(0, 4, 0, Activation::Sigmoid);
        let model = GpmNnModel {
            hidden,
            beta: DVector::from_vec(vec![500.0, 0.0]),
            plume,
            c_static: 0.0,
            noise_sigma: 0.0,
            seed: 0,
        };
        let samples = vec![sample([0.0, 0.0, 50.0], 1.0, 10.0)];
        assert!(convexity_scan(&model, &samples, 501) < 0.0);
    }

    #[test]
    fn convexity_scan_matches_analytic_single_sample() {
        // Single K = 0 sample: d2S/dH2 has a closed form assembled from the
        // plume height derivatives.
        let plume = PlumeParams { h: 25.0, ..Default::default() };
        let model = GpmNnModel {
            hidden: init_hidden(0, 4, 0, Activation::Sigmoid),
            beta: DVector::from_vec(vec![300.0, 2.0]),
            plume,
            c_static: 50.0,
            noise_sigma: 0.0,
            seed: 0,
        };
        let samples = vec![sample([0.0, 0.0, 25.0], 1.0, 80.0)];
        let scan = convexity_scan(&model, &samples, 2001);
        // Analytic d2S/dH2 over the same grid, minimized.
        let bp = model.beta[0];
        let mut analytic_min = f64::INFINITY;
        for i in 1..2000 {
            let h = 50.0 * i as f64 / 2000.0;
            let p = PlumeParams { h, ..plume };
            let c = revised_gpm_z(25.0, 1.0, &p);
            let r = (80.0 - 50.0) - 2.0 - bp * c;
            let dh = bp * revised_gpm_dh(25.0, 1.0, &p);
            let d2h = bp * revised_gpm_d2h(25.0, 1.0, &p);
            let val = 2.0 * (dh * dh - r * d2h);
            analytic_min = analytic_min.min(val);
        }
        assert_relative_eq!(scan, analytic_min, max_relative = 1e-4);
    }

    #[test]
    fn model_json_round_trip_bit_stable() {
        let samples = synthetic_linear_samples(20.0, 20);
        let (model, _) = fit(
            &samples,
            &PlumeParams::default(),
            &FitConfig { neurons: 8, ..Default::default() },
        )
        .unwrap();
        let json = model.to_json().unwrap();
        let restored = GpmNnModel::from_json(&json).unwrap();
        assert_eq!(model, restored);
        assert_eq!(json, restored.to_json().unwrap());
    }

    #[test]
    fn predict_linear_in_beta() {
        let samples = synthetic_linear_samples(20.0, 20);
        let (model, _) = fit(
            &samples,
            &PlumeParams::default(),
            &FitConfig { neurons: 4, ..Default::default() },
        )
        .unwrap();
        let mut m1 = model.clone();
        let mut m2 = model.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let dist = Uniform::new(-1.0f64, 1.0f64);
        for i in 0..m1.beta.len() {
            m1.beta[i] = rng.sample(dist);
            m2.beta[i] = rng.sample(dist);
        }
        let mut sum = model.clone();
        for i in 0..sum.beta.len() {
            sum.beta[i] = m1.beta[i] + m2.beta[i];
        }
        let pos = [7.0, 9.0, 14.0];
        let u = 2.2;
        // predict(b1 + b2) = predict(b1) + predict(b2) - c_static
        assert_relative_eq!(
            sum.predict(pos, u),
            m1.predict(pos, u) + m2.predict(pos, u) - model.c_static,
            max_relative = 1e-10
        );
    }
}
