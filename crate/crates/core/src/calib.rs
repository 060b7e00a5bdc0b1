//! Per-axis affine user calibration and the grid-pooled linear gaze regressor.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{percentile, GazeAngles};
use crate::input::{Modality, ModelInput};

/// `gt = scale * pred + bias`, independently per axis. Index 0 is yaw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationParams {
    pub scale: [f64; 2],
    pub bias: [f64; 2],
}

impl CalibrationParams {
    pub const IDENTITY: Self = Self {
        scale: [1.0, 1.0],
        bias: [0.0, 0.0],
    };

    /// Both scales positive and all entries finite.
    pub fn is_well_posed(&self) -> bool {
        self.scale.iter().chain(&self.bias).all(|v| v.is_finite())
            && self.scale.iter().all(|&s| s > 0.0)
    }
}

impl Default for CalibrationParams {
    fn default() -> Self {
        Self::IDENTITY
    }
}

fn fit_axis(x: &[f64], y: &[f64], axis: &'static str) -> Result<(f64, f64)> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if !(sxx > 0.0) {
        return Err(Error::DegenerateAxis(axis));
    }
    let a = sxy / sxx;
    Ok((a, my - a * mx))
}

pub fn fit_affine_calibration(preds: &[GazeAngles], gts: &[GazeAngles]) -> Result<CalibrationParams> {
    if preds.len() != gts.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions vs {} targets",
            preds.len(),
            gts.len()
        )));
    }
    if preds.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: preds.len(),
        });
    }
    let col = |v: &[GazeAngles], f: fn(&GazeAngles) -> f64| v.iter().map(f).collect::<Vec<_>>();
    let (ay, by) = fit_axis(&col(preds, |g| g.yaw), &col(gts, |g| g.yaw), "yaw")?;
    let (ap, bp) = fit_axis(&col(preds, |g| g.pitch), &col(gts, |g| g.pitch), "pitch")?;
    Ok(CalibrationParams {
        scale: [ay, ap],
        bias: [by, bp],
    })
}

pub fn apply_calibration(params: &CalibrationParams, pred: GazeAngles) -> GazeAngles {
    GazeAngles {
        yaw: params.scale[0] * pred.yaw + params.bias[0],
        pitch: params.scale[1] * pred.pitch + params.bias[1],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Per-cell means over a `g x g` grid, plane-major then row-major cells.
/// Cell `k` along an axis of length `n` spans `[floor(k n / g), floor((k + 1) n / g))`.
pub fn extract_features(input: &ModelInput, g: usize) -> Result<FeatureVector> {
    if g == 0 {
        return Err(Error::InvalidParameter("grid size must be positive".into()));
    }
    let (w, h) = input.dims();
    if w < g || h < g {
        return Err(Error::GridTooFine {
            grid: g,
            width: w,
            height: h,
        });
    }
    let bounds = |n: usize| -> Vec<(usize, usize)> {
        (0..g).map(|k| (k * n / g, (k + 1) * n / g)).collect()
    };
    let (xs, ys) = (bounds(w), bounds(h));
    let mut values = Vec::with_capacity(4 * g * g);
    for plane in &input.planes {
        for &(y0, y1) in &ys {
            for &(x0, x1) in &xs {
                let mut sum = 0.0;
                for y in y0..y1 {
                    sum += plane.row(y)[x0..x1].iter().sum::<f64>();
                }
                values.push(sum / ((x1 - x0) * (y1 - y0)) as f64);
            }
        }
    }
    Ok(FeatureVector { values })
}

/// Smooth-L1 loss: quadratic inside `delta`, linear outside.
pub fn huber_loss(residual: f64, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::NonPositiveDelta(delta));
    }
    let a = residual.abs();
    Ok(if a <= delta {
        0.5 * a * a
    } else {
        delta * (a - 0.5 * delta)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressorConfig {
    pub grid: usize,
    pub ridge_lambda: f64,
    /// Degrees.
    pub huber_delta: f64,
    /// Outlier cut in MAD units above the median error.
    pub outlier_k: f64,
    pub max_rounds: usize,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        Self {
            grid: 8,
            ridge_lambda: 1e-3,
            huber_delta: 1.0,
            outlier_k: 5.0,
            max_rounds: 10,
        }
    }
}

/// Affine gaze regressor in raw feature units: `pred = weights * f + intercept`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorModel {
    /// Two rows (yaw, pitch) of `feature_len` entries.
    pub weights: [Vec<f64>; 2],
    pub intercept: [f64; 2],
    pub ridge_lambda: f64,
    pub huber_delta: f64,
    pub outlier_k: f64,
    pub grid: usize,
    pub trained_modality: Modality,
}

impl RegressorModel {
    pub fn feature_len(&self) -> usize {
        self.weights[0].len()
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::ParseError {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("model serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressorFit {
    pub model: RegressorModel,
    /// `true` where the final round rejected the sample.
    pub outliers: Vec<bool>,
    /// IRLS rounds run after the initial ridge solve.
    pub rounds: usize,
    pub converged: bool,
}

pub fn predict_gaze(model: &RegressorModel, features: &FeatureVector) -> Result<GazeAngles> {
    if features.len() != model.feature_len() {
        return Err(Error::DimensionMismatch(format!(
            "model expects {} features, got {}",
            model.feature_len(),
            features.len()
        )));
    }
    let dot = |w: &[f64]| w.iter().zip(&features.values).map(|(a, b)| a * b).sum::<f64>();
    Ok(GazeAngles {
        yaw: dot(&model.weights[0]) + model.intercept[0],
        pitch: dot(&model.weights[1]) + model.intercept[1],
    })
}

struct Standardized {
    z: DMatrix<f64>,
    mean: Vec<f64>,
    scale: Vec<f64>,
}

fn standardize(features: &[FeatureVector]) -> Standardized {
    let (n, f) = (features.len(), features[0].len());
    let mut mean = vec![0.0; f];
    for fv in features {
        for (m, v) in mean.iter_mut().zip(&fv.values) {
            *m += v / n as f64;
        }
    }
    let mut scale = vec![0.0; f];
    for fv in features {
        for ((s, v), m) in scale.iter_mut().zip(&fv.values).zip(&mean) {
            *s += (v - m) * (v - m) / n as f64;
        }
    }
    for s in scale.iter_mut() {
        *s = s.sqrt();
    }
    // Constant columns stay as all-zero columns.
    let z = DMatrix::from_fn(n, f, |i, j| {
        if scale[j] > 0.0 {
            (features[i].values[j] - mean[j]) / scale[j]
        } else {
            0.0
        }
    });
    Standardized { z, mean, scale }
}

/// Minimizes `sum w_i r_i^2 / sum w_i + lambda |beta|^2` with an unpenalized
/// intercept. Returns `(beta rows, intercepts)` in standardized units.
fn weighted_ridge(
    z: &DMatrix<f64>,
    y: &[[f64; 2]],
    w: &[f64],
    lambda: f64,
) -> Result<([DVector<f64>; 2], [f64; 2])> {
    let (n, f) = z.shape();
    let wsum: f64 = w.iter().sum();
    if !(wsum > 0.0) {
        return Err(Error::SingularSystem);
    }
    let mut a = DMatrix::<f64>::zeros(f + 1, f + 1);
    let mut b = DMatrix::<f64>::zeros(f + 1, 2);
    let mut row = DVector::<f64>::zeros(f + 1);
    for i in 0..n {
        if w[i] == 0.0 {
            continue;
        }
        row.rows_mut(0, f).copy_from(&z.row(i).transpose());
        row[f] = 1.0;
        let wi = w[i] / wsum;
        a.ger(wi, &row, &row, 1.0);
        for k in 0..2 {
            b.column_mut(k).axpy(wi * y[i][k], &row, 1.0);
        }
    }
    for j in 0..f {
        a[(j, j)] += lambda;
    }
    let max_diag = (0..=f).map(|j| a[(j, j)]).fold(0.0, f64::max);
    let chol = a.cholesky().ok_or(Error::SingularSystem)?;
    let l = chol.l_dirty();
    let min_pivot = (0..=f).map(|j| l[(j, j)] * l[(j, j)]).fold(f64::INFINITY, f64::min);
    if !(min_pivot > 1e-13 * max_diag.max(1e-300)) {
        return Err(Error::SingularSystem);
    }
    let sol = chol.solve(&b);
    let beta = [
        sol.column(0).rows(0, f).into_owned(),
        sol.column(1).rows(0, f).into_owned(),
    ];
    Ok((beta, [sol[(f, 0)], sol[(f, 1)]]))
}

fn predict_standardized(z: &DMatrix<f64>, beta: &[DVector<f64>; 2], c: [f64; 2]) -> Vec<[f64; 2]> {
    let p0 = z * &beta[0];
    let p1 = z * &beta[1];
    (0..z.nrows()).map(|i| [p0[i] + c[0], p1[i] + c[1]]).collect()
}

fn median(v: &[f64]) -> f64 {
    percentile(v, 50.0).unwrap_or(0.0)
}

/// Ridge fit on standardized features, refined by Huber-weighted IRLS with
/// MAD-based outlier rejection.
///
/// A sample is an outlier when its error exceeds both `median + k * MAD` and
/// the Huber delta.
pub fn fit_standin_regressor(
    features: &[FeatureVector],
    targets: &[GazeAngles],
    config: &RegressorConfig,
    modality: Modality,
) -> Result<RegressorFit> {
    if features.len() != targets.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} feature vectors vs {} targets",
            features.len(),
            targets.len()
        )));
    }
    if features.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: features.len(),
        });
    }
    let f = features[0].len();
    if f == 0 || features.iter().any(|fv| fv.len() != f) {
        return Err(Error::DimensionMismatch(
            "feature vectors must share a non-zero length".into(),
        ));
    }
    if !(config.ridge_lambda >= 0.0) || !(config.outlier_k > 0.0) {
        return Err(Error::InvalidParameter(
            "ridge_lambda must be >= 0 and outlier_k > 0".into(),
        ));
    }
    if !(config.huber_delta > 0.0) {
        return Err(Error::NonPositiveDelta(config.huber_delta));
    }

    let n = features.len();
    let st = standardize(features);
    let y: Vec<[f64; 2]> = targets.iter().map(|t| [t.yaw, t.pitch]).collect();
    let mut weights = vec![1.0; n];
    let (mut beta, mut c) = weighted_ridge(&st.z, &y, &weights, config.ridge_lambda)?;
    let mut outliers = vec![false; n];
    let mut rounds = 0;
    let mut converged = false;

    while rounds < config.max_rounds {
        let pred = predict_standardized(&st.z, &beta, c);
        let err: Vec<f64> = pred
            .iter()
            .zip(&y)
            .map(|(p, t)| (p[0] - t[0]).hypot(p[1] - t[1]))
            .collect();
        let med = median(&err);
        let dev: Vec<f64> = err.iter().map(|e| (e - med).abs()).collect();
        let cut = med + config.outlier_k * median(&dev);
        let next_out: Vec<bool> = err
            .iter()
            .map(|&e| e > cut && e > config.huber_delta)
            .collect();
        let next: Vec<f64> = err
            .iter()
            .zip(&next_out)
            .map(|(&e, &o)| match (o, e <= config.huber_delta) {
                (true, _) => 0.0,
                (false, true) => 1.0,
                (false, false) => config.huber_delta / e,
            })
            .collect();
        let stable = next
            .iter()
            .zip(&weights)
            .all(|(a, b)| (a - b).abs() < 1e-9);
        outliers = next_out;
        if stable {
            converged = true;
            break;
        }
        if next.iter().filter(|&&w| w > 0.0).count() < 2 {
            break;
        }
        rounds += 1;
        weights = next;
        (beta, c) = weighted_ridge(&st.z, &y, &weights, config.ridge_lambda)?;
    }

    let mut raw = [vec![0.0; f], vec![0.0; f]];
    let mut intercept = c;
    for k in 0..2 {
        for j in 0..f {
            if st.scale[j] > 0.0 {
                raw[k][j] = beta[k][j] / st.scale[j];
                intercept[k] -= raw[k][j] * st.mean[j];
            }
        }
    }
    Ok(RegressorFit {
        model: RegressorModel {
            weights: raw,
            intercept,
            ridge_lambda: config.ridge_lambda,
            huber_delta: config.huber_delta,
            outlier_k: config.outlier_k,
            grid: config.grid,
            trained_modality: modality,
        },
        outliers,
        rounds,
        converged,
    })
}

/// Mean Huber loss of per-sample angular errors.
pub fn training_loss(model: &RegressorModel, features: &[FeatureVector], targets: &[GazeAngles]) -> Result<f64> {
    let mut total = 0.0;
    for (fv, t) in features.iter().zip(targets) {
        let p = predict_gaze(model, fv)?;
        total += huber_loss((p.yaw - t.yaw).hypot(p.pitch - t.pitch), model.huber_delta)?;
    }
    Ok(total / features.len().max(1) as f64)
}
