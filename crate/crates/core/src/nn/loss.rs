/// Gaussian negative log-likelihood without the constant `0.5 ln 2π`:
/// `0.5 log_var + (target - mu)^2 / (2 exp(log_var))`.
pub fn gaussian_nll(mu: f64, log_var: f64, target: f64) -> f64 {
    let diff = target - mu;
    0.5 * log_var + diff * diff * 0.5 * (-log_var).exp()
}

/// Partial derivatives `(dL/dmu, dL/dlog_var)` of [`gaussian_nll`].
pub fn gaussian_nll_grad(mu: f64, log_var: f64, target: f64) -> (f64, f64) {
    let diff = target - mu;
    let inv_var = (-log_var).exp();
    (-diff * inv_var, 0.5 - 0.5 * diff * diff * inv_var)
}

pub fn squared_error(prediction: f64, target: f64) -> f64 {
    let d = prediction - target;
    d * d
}
