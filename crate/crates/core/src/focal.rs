//! Binary focal loss
//!
//! `L(y, p) = -α·y·(1-p)^γ·ln p - (1-α)·(1-y)·p^γ·ln(1-p)`
//!
//! The probability form evaluates this literally. The logit form writes
//! `ln p = -softplus(-z)` and `ln(1-p) = -softplus(z)` so that saturated logits
//! stay finite and accurate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Label;

/// Class-balance weight `alpha` and focusing exponent `gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    alpha: f64,
    gamma: f64,
}

impl FocalParams {
    pub fn new(alpha: f64, gamma: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Domain(format!("alpha {alpha} outside [0, 1]")));
        }
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::Domain(format!("gamma {gamma} must be finite and >= 0")));
        }
        Ok(FocalParams { alpha, gamma })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

impl Default for FocalParams {
    /// `alpha = 0.25`, `gamma = 2`.
    fn default() -> Self {
        FocalParams {
            alpha: 0.25,
            gamma: 2.0,
        }
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Focal loss on a probability `p_hat` strictly inside `(0, 1)`.
pub fn focal_loss(y: Label, p_hat: f64, params: FocalParams) -> Result<f64> {
    if !(p_hat > 0.0 && p_hat < 1.0) {
        return Err(Error::Domain(format!(
            "p_hat {p_hat} outside (0, 1); use the logit form for saturated predictions"
        )));
    }
    let FocalParams { alpha, gamma } = params;
    let loss = match y {
        Label::Pneumonia => -alpha * (1.0 - p_hat).powf(gamma) * p_hat.ln(),
        Label::Normal => -(1.0 - alpha) * p_hat.powf(gamma) * (1.0 - p_hat).ln(),
    };
    Ok(loss)
}

fn check_logit(z: f64) -> Result<()> {
    if z.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("logit {z} is not finite")))
    }
}

/// Focal loss on a logit, `p_hat = sigmoid(z)`.
pub fn focal_loss_logit(y: Label, z: f64, params: FocalParams) -> Result<f64> {
    check_logit(z)?;
    let FocalParams { alpha, gamma } = params;
    let loss = match y {
        // (1-p)^γ = exp(-γ·softplus(z)), -ln p = softplus(-z)
        Label::Pneumonia => alpha * (-gamma * softplus(z)).exp() * softplus(-z),
        // p^γ = exp(-γ·softplus(-z)), -ln(1-p) = softplus(z)
        Label::Normal => (1.0 - alpha) * (-gamma * softplus(-z)).exp() * softplus(z),
    };
    Ok(loss)
}

/// `dL/dz` of [`focal_loss_logit`].
///
/// With `p = sigmoid(z)`, `q = 1 - p`:
/// - `y = 1`: `α·q^γ·(γ·p·ln p - q)`
/// - `y = 0`: `(1-α)·p^γ·(p - γ·q·ln q)`
pub fn focal_grad_logit(y: Label, z: f64, params: FocalParams) -> Result<f64> {
    check_logit(z)?;
    let FocalParams { alpha, gamma } = params;
    let p = sigmoid(z);
    let q = sigmoid(-z);
    let ln_p = -softplus(-z);
    let ln_q = -softplus(z);
    let grad = match y {
        Label::Pneumonia => alpha * (gamma * ln_q).exp() * (gamma * p * ln_p - q),
        Label::Normal => (1.0 - alpha) * (gamma * ln_p).exp() * (p - gamma * q * ln_q),
    };
    Ok(grad)
}

/// `-α·y·ln p - (1-α)·(1-y)·ln(1-p)`
pub fn weighted_bce(y: Label, p_hat: f64, alpha: f64) -> f64 {
    match y {
        Label::Pneumonia => -alpha * p_hat.ln(),
        Label::Normal => -(1.0 - alpha) * (1.0 - p_hat).ln(),
    }
}

/// One row of the loss verification table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossCheckRow {
    pub label: Label,
    pub logit: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub loss: f64,
    pub grad: f64,
    pub grad_fd: f64,
    pub rel_err: f64,
}

/// Relative disagreement between two derivative estimates.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Evaluates loss and analytic gradient for every combination of the given
/// values and compares the gradient with a central difference of step `h`.
pub fn loss_check_table(
    logits: &[f64],
    gammas: &[f64],
    alphas: &[f64],
    h: f64,
) -> Result<Vec<LossCheckRow>> {
    let mut rows = Vec::new();
    for &label in &[Label::Normal, Label::Pneumonia] {
        for &alpha in alphas {
            for &gamma in gammas {
                let params = FocalParams::new(alpha, gamma)?;
                for &z in logits {
                    let loss = focal_loss_logit(label, z, params)?;
                    let grad = focal_grad_logit(label, z, params)?;
                    let grad_fd = (focal_loss_logit(label, z + h, params)?
                        - focal_loss_logit(label, z - h, params)?)
                        / (2.0 * h);
                    rows.push(LossCheckRow {
                        label,
                        logit: z,
                        alpha,
                        gamma,
                        loss,
                        grad,
                        grad_fd,
                        rel_err: relative_error(grad, grad_fd),
                    });
                }
            }
        }
    }
    Ok(rows)
}
