//! Regression, adversarial and reconstruction losses with their analytic
//! gradients, plus evaluation metrics.
//!
//! Every `*_grad` function returns the derivative with respect to the
//! prediction argument. The subgradient of `|x|` at `x == 0` is 0.

use serde::{Deserialize, Serialize};

use crate::error::{ArlError, Result};
use crate::numcore::Matrix;

/// Scalar weights of the combined objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    /// Weight of the mean-discrepancy term inside the percentage loss.
    pub alpha: f64,
    /// Weight of the bidirectional adversarial regression loss.
    pub beta: f64,
    /// Weight of the reconstruction loss.
    pub gamma: f64,
    /// Denominator guard of the adversarial regression loss.
    pub eps_div: f64,
    /// Whether the per-sample MAPE term is part of the percentage loss.
    #[serde(default = "default_true")]
    pub use_mape: bool,
}

fn default_true() -> bool {
    true
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            beta: 0.5,
            gamma: 0.5,
            eps_div: 1e-9,
            use_mape: true,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !v.is_finite() || v < 0.0 {
                return Err(ArlError::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !self.eps_div.is_finite() || self.eps_div <= 0.0 {
            return Err(ArlError::Config(format!("eps_div must be finite and > 0, got {}", self.eps_div)));
        }
        Ok(())
    }

    fn mape_weight(&self) -> f64 {
        if self.use_mape {
            1.0
        } else {
            0.0
        }
    }
}

/// All loss components of one evaluation of the combined objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_m: f64,
    pub l_d: f64,
    pub l_p: f64,
    pub l_ar_fwd: f64,
    pub l_ar_bwd: f64,
    pub l_recon: f64,
    pub l_total: f64,
}

impl LossBreakdown {
    /// Fills `l_p` and `l_total` from the raw components.
    pub fn compose(l_m: f64, l_d: f64, l_ar_fwd: f64, l_ar_bwd: f64, l_recon: f64, w: &LossWeights) -> Self {
        let l_p = w.mape_weight() * l_m + w.alpha * l_d;
        let l_total = l_p + w.beta * (l_ar_fwd + l_ar_bwd) + w.gamma * l_recon;
        Self {
            l_m,
            l_d,
            l_p,
            l_ar_fwd,
            l_ar_bwd,
            l_recon,
            l_total,
        }
    }

    /// Largest violation of the two recomposition identities.
    pub fn identity_error(&self, w: &LossWeights) -> f64 {
        let p = (self.l_p - (w.mape_weight() * self.l_m + w.alpha * self.l_d)).abs();
        let t = (self.l_total - (self.l_p + w.beta * (self.l_ar_fwd + self.l_ar_bwd) + w.gamma * self.l_recon)).abs();
        p.max(t)
    }

    pub fn is_finite(&self) -> bool {
        [self.l_m, self.l_d, self.l_p, self.l_ar_fwd, self.l_ar_bwd, self.l_recon, self.l_total]
            .iter()
            .all(|v| v.is_finite())
    }
}

#[inline]
fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn same_len(op: &'static str, a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() || a.len() != b.len() {
        return Err(ArlError::shape(op, format!("{} targets", a.len()), format!("{} predictions", b.len())));
    }
    Ok(())
}

fn positive_targets(y: &[f64]) -> Result<()> {
    match y.iter().position(|&v| !(v > 0.0)) {
        Some(i) => Err(ArlError::Domain(format!("target {i} is {} but must be > 0", y[i]))),
        None => Ok(()),
    }
}

/// Mean absolute percentage error `(1/N) sum |(y - y_hat) / y|`.
pub fn mape(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    same_len("mape", y, y_hat)?;
    positive_targets(y)?;
    Ok(y.iter().zip(y_hat).map(|(t, p)| ((t - p) / t).abs()).sum::<f64>() / y.len() as f64)
}

pub fn mape_grad(y: &[f64], y_hat: &[f64]) -> Result<Vec<f64>> {
    same_len("mape", y, y_hat)?;
    positive_targets(y)?;
    let n = y.len() as f64;
    Ok(y.iter().zip(y_hat).map(|(t, p)| -sgn(t - p) / (t * n)).collect())
}

/// Absolute mean discrepancy `|(mean(y) - mean(y_hat)) / mean(y)|`.
pub fn mean_disc(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    same_len("mean_disc", y, y_hat)?;
    let my = mean(y);
    if !(my > 0.0) {
        return Err(ArlError::Domain(format!("mean target is {my} but must be > 0")));
    }
    Ok(((my - mean(y_hat)) / my).abs())
}

pub fn mean_disc_grad(y: &[f64], y_hat: &[f64]) -> Result<Vec<f64>> {
    same_len("mean_disc", y, y_hat)?;
    let my = mean(y);
    if !(my > 0.0) {
        return Err(ArlError::Domain(format!("mean target is {my} but must be > 0")));
    }
    let g = -sgn(my - mean(y_hat)) / (my * y.len() as f64);
    Ok(vec![g; y.len()])
}

/// `mape + alpha * mean_disc`.
pub fn percentage_loss(y: &[f64], y_hat: &[f64], alpha: f64) -> Result<f64> {
    Ok(mape(y, y_hat)? + alpha * mean_disc(y, y_hat)?)
}

/// Gradient of the percentage loss as configured by `w` (honours `use_mape`).
pub fn percentage_loss_grad(y: &[f64], y_hat: &[f64], w: &LossWeights) -> Result<Vec<f64>> {
    let gd = mean_disc_grad(y, y_hat)?;
    let mut g: Vec<f64> = gd.iter().map(|v| w.alpha * v).collect();
    if w.use_mape {
        for (a, m) in g.iter_mut().zip(mape_grad(y, y_hat)?) {
            *a += m;
        }
    }
    Ok(g)
}

/// Per-sample terms `|(l_k - p_k) / (l_k + eps)|` of the adversarial
/// regression loss, before averaging.
pub fn ar_terms(labels: &[f64], preds: &[f64], eps_div: f64) -> Vec<f64> {
    labels
        .iter()
        .zip(preds)
        .map(|(l, p)| ((l - p) / (l + eps_div)).abs())
        .collect()
}

/// Adversarial regression loss over the union of both domains:
/// mean per-sample relative error plus relative error of the means.
pub fn ar_loss(labels: &[f64], preds: &[f64], eps_div: f64) -> Result<f64> {
    same_len("ar_loss", labels, preds)?;
    let per_sample = mean(&ar_terms(labels, preds, eps_div));
    let ml = mean(labels);
    Ok(per_sample + ((ml - mean(preds)) / (ml + eps_div)).abs())
}

pub fn ar_loss_grad(labels: &[f64], preds: &[f64], eps_div: f64) -> Result<Vec<f64>> {
    same_len("ar_loss", labels, preds)?;
    let n = labels.len() as f64;
    let ml = mean(labels);
    let mean_term = -sgn(ml - mean(preds)) / ((ml + eps_div) * n);
    Ok(labels
        .iter()
        .zip(preds)
        .map(|(l, p)| -sgn(l - p) / ((l + eps_div) * n) + mean_term)
        .collect())
}

/// Forward-direction domain labels for `n_tr` training rows followed by
/// `n_te` test rows: 0 for training and 1 for test, moved inward by
/// `smoothing` (0 means hard labels).
pub fn domain_labels(n_tr: usize, n_te: usize, smoothing: f64) -> Vec<f64> {
    let mut labels = vec![smoothing; n_tr];
    labels.resize(n_tr + n_te, 1.0 - smoothing);
    labels
}

/// Sum of the adversarial regression loss in both directions. The backward
/// labels must be the complement of the forward labels.
pub fn bidirectional_ar(
    labels_fwd: &[f64],
    labels_bwd: &[f64],
    preds_fwd: &[f64],
    preds_bwd: &[f64],
    eps_div: f64,
) -> Result<f64> {
    same_len("bidirectional_ar", labels_fwd, labels_bwd)?;
    if let Some(k) = labels_fwd
        .iter()
        .zip(labels_bwd)
        .position(|(f, b)| (f + b - 1.0).abs() > 1e-12)
    {
        return Err(ArlError::Usage(format!(
            "labels at {k} are not complementary: {} and {}",
            labels_fwd[k], labels_bwd[k]
        )));
    }
    Ok(ar_loss(labels_fwd, preds_fwd, eps_div)? + ar_loss(labels_bwd, preds_bwd, eps_div)?)
}

/// Mean squared error over all entries.
pub fn recon_mse(x: &Matrix, x_hat: &Matrix) -> Result<f64> {
    x.expect_same_shape(x_hat, "recon_mse")?;
    let n = x.data().len() as f64;
    Ok(x.data().iter().zip(x_hat.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
}

pub fn recon_mse_grad(x: &Matrix, x_hat: &Matrix) -> Result<Matrix> {
    x.expect_same_shape(x_hat, "recon_mse")?;
    let n = x.data().len() as f64;
    x_hat.sub(x).map(|d| d.scale(2.0 / n))
}

const BCE_CLAMP: f64 = 1e-12;

/// Binary cross-entropy with predictions clamped to `[1e-12, 1 - 1e-12]`.
pub fn bce_loss(labels: &[f64], preds: &[f64]) -> Result<f64> {
    same_len("bce_loss", labels, preds)?;
    let s: f64 = labels
        .iter()
        .zip(preds)
        .map(|(l, p)| {
            let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            l * p.ln() + (1.0 - l) * (1.0 - p).ln()
        })
        .sum();
    Ok(-s / labels.len() as f64)
}

/// Gradient of [`bce_loss`]; zero where the clamp is active.
pub fn bce_grad(labels: &[f64], preds: &[f64]) -> Result<Vec<f64>> {
    same_len("bce_loss", labels, preds)?;
    let n = labels.len() as f64;
    Ok(labels
        .iter()
        .zip(preds)
        .map(|(l, &p)| {
            if !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&p) {
                0.0
            } else {
                (-l / p + (1.0 - l) / (1.0 - p)) / n
            }
        })
        .collect())
}

/// Mean absolute error.
pub fn mae(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    same_len("mae", y, y_hat)?;
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

/// Linear-kernel mean-embedding distance: Euclidean norm of the difference
/// of column means.
pub fn mean_embed_dist(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.cols() != b.cols() {
        return Err(ArlError::shape("mean_embed_dist", a.shape_str(), b.shape_str()));
    }
    Ok(a.column_means()
        .iter()
        .zip(b.column_means())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}
