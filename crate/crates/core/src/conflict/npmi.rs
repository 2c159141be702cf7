//! Pointwise mutual information on base-2 log probabilities.

use super::ConflictError;

/// `log2 P(X,Y) - log2 P(X) - log2 P(Y)`.
pub fn pmi(logp_joint: f64, logp_x: f64, logp_y: f64) -> Result<f64, ConflictError> {
    check_logprob("joint", logp_joint)?;
    check_logprob("x", logp_x)?;
    check_logprob("y", logp_y)?;
    Ok(logp_joint - logp_x - logp_y)
}

/// PMI rescaled by `-log2 P(X,Y)`; lies in [-1, 1] whenever the three
/// probabilities come from one joint distribution.
pub fn npmi(logp_joint: f64, logp_x: f64, logp_y: f64) -> Result<f64, ConflictError> {
    let pmi = pmi(logp_joint, logp_x, logp_y)?;
    if logp_joint == 0.0 {
        return Err(ConflictError::Npmi(
            "joint probability of 1 makes NPMI undefined (division by zero)".into(),
        ));
    }
    Ok(pmi / -logp_joint)
}

fn check_logprob(name: &str, value: f64) -> Result<(), ConflictError> {
    if !value.is_finite() {
        return Err(ConflictError::Npmi(format!("{name} log-probability is not finite")));
    }
    if value > 0.0 {
        return Err(ConflictError::Npmi(format!(
            "{name} log-probability {value} is positive"
        )));
    }
    Ok(())
}
