//! Inverse-variance (CRLB-weighted) combining of per-subband estimates.
//!
//! With independent per-subband errors of variance `σ_k²`, the affine
//! combiner `βᵀζ̂` subject to `Σβ = 1` has variance `Σ β_k² σ_k²`, minimised by
//! `β_k = σ_k^{-2} / Σ_i σ_i^{-2}` with minimum `(Σ_i σ_i^{-2})^{-1}`.

use crate::error::{Error, Result};
use crate::sensing::SubbandEstimate;

#[derive(Debug, Clone, PartialEq)]
pub struct FusedEstimate {
    pub range_m: f64,
    pub velocity_mps: f64,
    /// Range weights indexed by subband; zero for non-contributing subbands.
    pub weights_range: Vec<f64>,
    pub weights_velocity: Vec<f64>,
    pub fused_var_range: f64,
    pub fused_var_velocity: f64,
    /// Subband indices that contributed, ascending.
    pub contributing: Vec<usize>,
}

fn check_variances(variances: &[f64]) -> Result<()> {
    if variances.is_empty() {
        return Err(Error::invalid("variances", "need at least one variance"));
    }
    if let Some((k, v)) = variances
        .iter()
        .enumerate()
        .find(|(_, v)| !(v.is_finite() && **v > 0.0))
    {
        return Err(Error::invalid(
            format!("variances[{k}]"),
            format!("must be finite and > 0, got {v}"),
        ));
    }
    Ok(())
}

/// Minimum-variance weights `β_k = σ_k^{-2} / Σ σ_i^{-2}`.
pub fn optimal_weights(variances: &[f64]) -> Result<Vec<f64>> {
    check_variances(variances)?;
    // Normalising by the smallest variance keeps the precisions O(1).
    let min = variances.iter().copied().fold(f64::INFINITY, f64::min);
    let prec: Vec<f64> = variances.iter().map(|v| min / v).collect();
    let total: f64 = prec.iter().sum();
    Ok(prec.into_iter().map(|p| p / total).collect())
}

/// `(Σ σ_i^{-2})^{-1}`, the variance of the optimally weighted combination.
pub fn fused_variance(variances: &[f64]) -> Result<f64> {
    check_variances(variances)?;
    Ok(1.0 / variances.iter().map(|v| 1.0 / v).sum::<f64>())
}

/// `βᵀ R β` for diagonal `R = diag(variances)`.
pub fn combiner_variance(weights: &[f64], variances: &[f64]) -> Result<f64> {
    if weights.len() != variances.len() {
        return Err(Error::invalid("weights", "length differs from variances"));
    }
    Ok(weights.iter().zip(variances).map(|(b, v)| b * b * v).sum())
}

/// Affine combination `βᵀζ̂`.
pub fn combine(estimates: &[f64], weights: &[f64]) -> Result<f64> {
    if estimates.len() != weights.len() {
        return Err(Error::invalid(
            "weights",
            format!("{} weights for {} estimates", weights.len(), estimates.len()),
        ));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("weights", format!("must sum to 1, got {sum}")));
    }
    Ok(estimates.iter().zip(weights).map(|(z, b)| z * b).sum())
}

fn association_cost(a: &SubbandEstimate, b: &SubbandEstimate) -> f64 {
    let dr = a.range_m - b.range_m;
    let dv = a.velocity_mps - b.velocity_mps;
    dr * dr / (a.var_range + b.var_range) + dv * dv / (a.var_velocity + b.var_velocity)
}

/// Associates the estimates of `other` with those of `anchor`.
///
/// Greedy on the globally smallest normalised distance; ties resolve to the
/// lowest anchor index, then the lowest candidate index.
fn associate(anchor: &[SubbandEstimate], other: &[SubbandEstimate]) -> Vec<usize> {
    let mut pairs: Vec<(f64, usize, usize)> = anchor
        .iter()
        .enumerate()
        .flat_map(|(i, a)| other.iter().enumerate().map(move |(j, b)| (association_cost(a, b), i, j)))
        .collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut assigned = vec![usize::MAX; anchor.len()];
    let mut used = vec![false; other.len()];
    for (_, i, j) in pairs {
        if assigned[i] == usize::MAX && !used[j] {
            assigned[i] = j;
            used[j] = true;
        }
    }
    assigned
}

/// Fuses per-subband target lists into one estimate per target.
///
/// `per_subband` holds one list per contributing subband. `num_subbands` is
/// the total subband count `K`, which sets the length of the weight vectors.
pub fn fuse_subband_estimates(
    per_subband: &[Vec<SubbandEstimate>],
    num_subbands: usize,
    num_targets: usize,
) -> Result<Vec<FusedEstimate>> {
    let mut lists: Vec<&Vec<SubbandEstimate>> =
        per_subband.iter().filter(|l| !l.is_empty()).collect();
    if lists.is_empty() {
        return Err(Error::Estimation("no contributing subband".into()));
    }
    for l in &lists {
        let idx = l[0].subband_index;
        if l.len() != num_targets {
            return Err(Error::invalid(
                "per_subband",
                format!("subband {idx} reports {} targets, expected {num_targets}", l.len()),
            ));
        }
        if idx >= num_subbands || l.iter().any(|e| e.subband_index != idx) {
            return Err(Error::invalid(
                "per_subband",
                format!("inconsistent subband index {idx} for K = {num_subbands}"),
            ));
        }
    }
    lists.sort_by_key(|l| l[0].subband_index);
    let contributing: Vec<usize> = lists.iter().map(|l| l[0].subband_index).collect();
    if contributing.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid("per_subband", "duplicate subband index"));
    }

    let anchor = lists[0];
    let mut groups: Vec<Vec<&SubbandEstimate>> = anchor.iter().map(|a| vec![a]).collect();
    for other in &lists[1..] {
        for (p, j) in associate(anchor, other).into_iter().enumerate() {
            groups[p].push(&other[j]);
        }
    }

    groups
        .into_iter()
        .map(|group| {
            let ranges: Vec<f64> = group.iter().map(|e| e.range_m).collect();
            let vels: Vec<f64> = group.iter().map(|e| e.velocity_mps).collect();
            let var_r: Vec<f64> = group.iter().map(|e| e.var_range).collect();
            let var_v: Vec<f64> = group.iter().map(|e| e.var_velocity).collect();
            let beta_r = optimal_weights(&var_r)?;
            let beta_v = optimal_weights(&var_v)?;
            let mut weights_range = vec![0.0; num_subbands];
            let mut weights_velocity = vec![0.0; num_subbands];
            for (k, e) in group.iter().enumerate() {
                weights_range[e.subband_index] = beta_r[k];
                weights_velocity[e.subband_index] = beta_v[k];
            }
            Ok(FusedEstimate {
                range_m: combine(&ranges, &beta_r)?,
                velocity_mps: combine(&vels, &beta_v)?,
                weights_range,
                weights_velocity,
                fused_var_range: fused_variance(&var_r)?,
                fused_var_velocity: fused_variance(&var_v)?,
                contributing: contributing.clone(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensing::PeakBin;

    fn est(k: usize, r: f64, v: f64, vr: f64, vv: f64) -> SubbandEstimate {
        SubbandEstimate {
            subband_index: k,
            range_m: r,
            velocity_mps: v,
            var_range: vr,
            var_velocity: vv,
            peak_power: 1.0,
            amplitude: 1.0,
            grid_bin: PeakBin { delay: 0, doppler: 0 },
            delay_bin: 0.0,
            doppler_bin: 0.0,
        }
    }

    #[test]
    fn weight_examples() {
        let w = optimal_weights(&[2.0, 2.0, 2.0]).unwrap();
        assert!(w.iter().all(|b| (b - 1.0 / 3.0).abs() < 1e-15));
        let w = optimal_weights(&[1.0, 3.0]).unwrap();
        assert!((w[0] - 0.75).abs() < 1e-15 && (w[1] - 0.25).abs() < 1e-15);
        let w = optimal_weights(&[0.5, 1e30]).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-15 && w[1].abs() < 1e-15);
    }

    #[test]
    fn weight_errors() {
        assert!(optimal_weights(&[]).is_err());
        assert!(optimal_weights(&[1.0, 0.0]).is_err());
        assert!(optimal_weights(&[1.0, -2.0]).is_err());
        assert!(optimal_weights(&[f64::NAN]).is_err());
    }

    #[test]
    fn combine_examples() {
        let w = optimal_weights(&[1.0, 3.0]).unwrap();
        assert!((combine(&[10.0, 14.0], &w).unwrap() - 11.0).abs() < 1e-12);
        assert_eq!(combine(&[4.2, 4.2, 4.2], &[0.2, 0.3, 0.5]).unwrap(), 4.2);
        assert!(combine(&[1.0], &[0.5, 0.5]).is_err());
        assert!(combine(&[1.0, 2.0], &[0.5, 0.6]).is_err());
    }

    #[test]
    fn single_subband_passthrough() {
        let fused = fuse_subband_estimates(&[vec![est(0, 1.5, 20.0, 1e-6, 1e-2)]], 1, 1).unwrap();
        assert_eq!(fused.len(), 1);
        assert_eq!(fused[0].range_m, 1.5);
        assert_eq!(fused[0].velocity_mps, 20.0);
        assert_eq!(fused[0].weights_range, vec![1.0]);
        assert_eq!(fused[0].contributing, vec![0]);
    }

    #[test]
    fn two_targets_associate_across_subbands() {
        let a = vec![est(0, 0.1, 23.0, 1e-6, 1e-2), est(0, 0.6, -5.0, 1e-6, 1e-2)];
        // Reversed order in the second subband.
        let b = vec![est(2, 0.6, -5.0, 2e-6, 3e-2), est(2, 0.1, 23.0, 2e-6, 3e-2)];
        let fused = fuse_subband_estimates(&[b, vec![], a], 3, 2).unwrap();
        assert_eq!(fused[0].contributing, vec![0, 2]);
        assert!((fused[0].range_m - 0.1).abs() < 1e-12);
        assert!((fused[0].velocity_mps - 23.0).abs() < 1e-12);
        assert!((fused[1].range_m - 0.6).abs() < 1e-12);
        assert_eq!(fused[0].weights_range[1], 0.0);
        assert!((fused[0].weights_range.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(fused[0].fused_var_range < 1e-6);
    }

    #[test]
    fn fuse_errors() {
        assert!(fuse_subband_estimates(&[], 2, 1).is_err());
        assert!(fuse_subband_estimates(&[vec![]], 2, 1).is_err());
        let two = vec![est(0, 0.1, 0.0, 1.0, 1.0), est(0, 0.2, 0.0, 1.0, 1.0)];
        assert!(fuse_subband_estimates(&[two], 1, 1).is_err());
    }
}
