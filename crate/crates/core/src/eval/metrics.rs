use std::collections::BTreeMap;

use super::EvalError;
use crate::stats::{mean, sample_variance};

fn check_lengths(pred: &[f64], truth: &[f64]) -> Result<(), EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::LengthMismatch { pred: pred.len(), truth: truth.len() });
    }
    if pred.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(())
}

/// Root mean squared error, in the units of the inputs.
pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64, EvalError> {
    check_lengths(pred, truth)?;
    let sse: f64 = pred.iter().zip(truth).map(|(p, t)| (t - p).powi(2)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

/// Mean absolute percentage error.
pub fn mape(pred: &[f64], truth: &[f64]) -> Result<f64, EvalError> {
    check_lengths(pred, truth)?;
    if let Some((index, &value)) = truth.iter().enumerate().find(|(_, t)| !(**t > 0.0)) {
        return Err(EvalError::NonPositiveTruth { index, value });
    }
    let total: f64 = pred.iter().zip(truth).map(|(p, t)| ((t - p) / t).abs()).sum();
    Ok(100.0 * total / pred.len() as f64)
}

/// Share of label variance explained by group membership:
/// `σ²_group / (σ²_group + σ²_individual)`, where `σ²_group` is the sample
/// variance of the group-mean deviations `ū_j − ū` (one per group) and
/// `σ²_individual` the sample variance of all within-group residuals.
pub fn vpc(labels: &[f64], membership: &[usize]) -> Result<f64, EvalError> {
    if labels.len() != membership.len() {
        return Err(EvalError::LengthMismatch { pred: membership.len(), truth: labels.len() });
    }
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (&y, &j) in labels.iter().zip(membership) {
        groups.entry(j).or_default().push(y);
    }
    if groups.len() < 2 {
        return Err(EvalError::VpcUndefined(format!("{} group(s); need at least 2", groups.len())));
    }
    let grand = mean(labels);
    let group_means: BTreeMap<usize, f64> = groups.iter().map(|(j, ys)| (*j, mean(ys))).collect();
    let deviations: Vec<f64> = group_means.values().map(|m| m - grand).collect();
    let residuals: Vec<f64> = labels.iter().zip(membership).map(|(y, j)| y - group_means[j]).collect();
    let var_group = sample_variance(&deviations).unwrap_or(0.0);
    let var_individual = sample_variance(&residuals).unwrap_or(0.0);
    let total = var_group + var_individual;
    if !(total > 0.0) {
        return Err(EvalError::VpcUndefined("all labels are equal".into()));
    }
    Ok(var_group / total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_mismatch_and_empty() {
        assert!(matches!(rmse(&[1.0], &[1.0, 2.0]), Err(EvalError::LengthMismatch { .. })));
        assert!(matches!(rmse(&[], &[]), Err(EvalError::Empty)));
        assert!(matches!(mape(&[1.0], &[0.0]), Err(EvalError::NonPositiveTruth { index: 0, .. })));
    }

    #[test]
    fn vpc_needs_two_groups() {
        assert!(matches!(vpc(&[1.0], &[0]), Err(EvalError::VpcUndefined(_))));
        assert!(matches!(vpc(&[1.0, 2.0, 3.0], &[4, 4, 4]), Err(EvalError::VpcUndefined(_))));
    }
}
