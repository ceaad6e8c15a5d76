//! Regime classification from the transfer gap and the matching plan grid.
//!
//! A negative gap (fixed pre-trained features beat training from scratch)
//! means the pre-trained weights fit the target: fine-tune gently, re-initialize
//! more than the classifier, anchor lower blocks to their pre-trained values.
//! Otherwise fine-tune hard with slower lower blocks, re-initialize only the
//! classifier, and decay toward zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::DomainMeasures;
use crate::transfer::{validate_plan, FineTunePlan};

/// Gap (percentage points) at and above which a target counts as poorly fitted.
pub const GAP_THRESHOLD: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    /// Pre-trained weights fit the target well.
    Anchored,
    /// Pre-trained weights fit the target poorly.
    Adapted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rationale {
    pub gap: f64,
    pub threshold: f64,
    pub rule: String,
    /// Recorded for reference only; never used to decide.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fisher: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emd_similarity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub regime: Regime,
    pub rationale: Rationale,
    pub plans: Vec<FineTunePlan>,
}

pub fn regime_for_gap(gap: f64) -> Regime {
    if gap < GAP_THRESHOLD {
        Regime::Anchored
    } else {
        Regime::Adapted
    }
}

pub fn classify_regime(measures: &DomainMeasures) -> Result<Regime> {
    match measures.gap {
        Some(gap) if gap.is_finite() => Ok(regime_for_gap(gap)),
        Some(gap) => Err(Error::InvalidArgument(format!("gap {gap} is not finite"))),
        None => Err(Error::InvalidArgument("measures carry no transfer gap".into())),
    }
}

fn check_grid(name: &str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument(format!("{name} grid is empty")));
    }
    if grid.windows(2).any(|w| w[0] > w[1]) || grid.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "{name} grid must be finite and sorted ascending"
        )));
    }
    Ok(())
}

fn dedup_sorted(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v.dedup();
    v
}

/// Lower half (anchored) or upper half (adapted) of `lr_grid`; the median
/// belongs to both halves when the grid has odd length.
pub fn lr_half(regime: Regime, lr_grid: &[f64]) -> &[f64] {
    let n = lr_grid.len();
    match regime {
        Regime::Anchored => &lr_grid[..n.div_ceil(2)],
        Regime::Adapted => &lr_grid[n / 2..],
    }
}

/// Rate used for lower blocks under `high_lr`: the next smaller grid value,
/// or 0.4 x `high_lr` when `high_lr` is the smallest.
pub fn low_rate_for(high_lr: f64, lr_grid: &[f64]) -> f64 {
    lr_grid
        .iter()
        .rev()
        .copied()
        .find(|&lr| lr < high_lr)
        .unwrap_or(0.4 * high_lr)
}

/// Candidate plans consistent with `regime`, ordered by `(k, high_lr, l2sp count)`.
pub fn propose_plans(
    regime: Regime,
    n_blocks: usize,
    lr_grid: &[f64],
    alpha_grid: &[f64],
    beta_grid: &[f64],
) -> Result<Vec<FineTunePlan>> {
    check_grid("learning-rate", lr_grid)?;
    check_grid("alpha", alpha_grid)?;
    check_grid("beta", beta_grid)?;
    if lr_grid[0] <= 0.0 {
        return Err(Error::InvalidArgument("learning rates must be > 0".into()));
    }
    if n_blocks < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 blocks to vary re-initialization depth, got {n_blocks}"
        )));
    }
    let mut plans = Vec::new();
    match regime {
        Regime::Anchored => {
            for k in [2usize, 3].into_iter().filter(|&k| k < n_blocks) {
                let transferred = n_blocks - k;
                let counts = dedup_sorted(vec![transferred, 2 * transferred / 3]);
                for &lr in lr_half(regime, lr_grid) {
                    for &l2sp in counts.iter().filter(|&&c| c > 0) {
                        for &alpha in alpha_grid {
                            for &beta in beta_grid {
                                plans.push(FineTunePlan {
                                    reinit_count: k,
                                    high_lr: lr,
                                    low_lr: lr,
                                    low_layer_count: 0,
                                    fc_lr: None,
                                    l2sp_layer_count: l2sp,
                                    alpha,
                                    beta,
                                });
                            }
                        }
                    }
                }
            }
        }
        Regime::Adapted => {
            let counts = dedup_sorted(vec![n_blocks / 2, 2 * n_blocks / 3]);
            for &lr in lr_half(regime, lr_grid) {
                let low = low_rate_for(lr, lr_grid);
                for &low_layers in counts.iter().filter(|&&c| c > 0 && c < n_blocks) {
                    for &beta in beta_grid {
                        plans.push(FineTunePlan {
                            reinit_count: 1,
                            high_lr: lr,
                            low_lr: low,
                            low_layer_count: low_layers,
                            fc_lr: None,
                            l2sp_layer_count: 0,
                            alpha: 0.0,
                            beta,
                        });
                    }
                }
            }
        }
    }
    // Stable: ties keep generation order (alpha, then beta).
    plans.sort_by(|a, b| {
        a.reinit_count
            .cmp(&b.reinit_count)
            .then(a.high_lr.total_cmp(&b.high_lr))
            .then(a.l2sp_layer_count.cmp(&b.l2sp_layer_count))
    });
    debug_assert!(plans.iter().all(|p| validate_plan(p, n_blocks).is_empty()));
    Ok(plans)
}

pub fn recommend(
    measures: &DomainMeasures,
    n_blocks: usize,
    lr_grid: &[f64],
    alpha_grid: &[f64],
    beta_grid: &[f64],
) -> Result<Recommendation> {
    let regime = classify_regime(measures)?;
    let plans = propose_plans(regime, n_blocks, lr_grid, alpha_grid, beta_grid)?;
    Ok(Recommendation {
        regime,
        rationale: Rationale {
            gap: measures.gap.expect("classified"),
            threshold: GAP_THRESHOLD,
            rule: "gap < 0 => Anchored; gap >= 0 => Adapted".into(),
            fisher: measures.fisher,
            emd_similarity: measures.emd_similarity,
        },
        plans,
    })
}

/// Properties every plan of a regime must have.
pub fn plan_fits_regime(plan: &FineTunePlan, regime: Regime, lr_grid: &[f64]) -> bool {
    let half = lr_half(regime, lr_grid);
    let lr_ok = half.contains(&plan.high_lr);
    match regime {
        Regime::Anchored => {
            lr_ok
                && plan.reinit_count >= 2
                && plan.l2sp_layer_count > 0
                && plan.low_layer_count == 0
        }
        Regime::Adapted => {
            lr_ok
                && plan.reinit_count == 1
                && plan.l2sp_layer_count == 0
                && plan.low_layer_count > 0
                && plan.low_lr < plan.high_lr
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LRS: [f64; 6] = [0.001, 0.0025, 0.005, 0.01, 0.015, 0.025];

    #[test]
    fn table_rows_classify() {
        let caltech = DomainMeasures {
            gap: Some(-16.2),
            ..Default::default()
        };
        let cars = DomainMeasures {
            gap: Some(28.5),
            ..Default::default()
        };
        assert_eq!(classify_regime(&caltech).unwrap(), Regime::Anchored);
        assert_eq!(classify_regime(&cars).unwrap(), Regime::Adapted);
        assert_eq!(regime_for_gap(0.0), Regime::Adapted);
        assert!(classify_regime(&DomainMeasures::default()).is_err());
    }

    #[test]
    fn anchored_plans() {
        let plans = propose_plans(Regime::Anchored, 15, &LRS, &[0.001, 0.01], &[0.001, 0.01]).unwrap();
        assert!(!plans.is_empty());
        let median = (LRS[2] + LRS[3]) / 2.0;
        for p in &plans {
            assert!(p.high_lr <= median);
            assert!(p.reinit_count >= 2 && p.reinit_count <= 3);
            assert!(p.l2sp_layer_count > 0);
            assert_eq!(p.low_layer_count, 0);
            assert!(validate_plan(p, 15).is_empty());
            assert!(plan_fits_regime(p, Regime::Anchored, &LRS));
        }
        let counts: BTreeSet<usize> = plans.iter().map(|p| p.l2sp_layer_count).collect();
        assert_eq!(counts, BTreeSet::from([8, 12, 13]));
    }

    use std::collections::BTreeSet;

    #[test]
    fn adapted_plans() {
        let plans = propose_plans(Regime::Adapted, 15, &LRS, &[0.01], &[0.001]).unwrap();
        for p in &plans {
            assert_eq!(p.reinit_count, 1);
            assert_eq!(p.l2sp_layer_count, 0);
            assert!(p.low_layer_count == 7 || p.low_layer_count == 10);
            assert!(p.low_lr < p.high_lr);
            assert!(p.high_lr >= 0.01);
            assert!(plan_fits_regime(p, Regime::Adapted, &LRS));
        }
        let at_top = plans.iter().find(|p| p.high_lr == 0.025).unwrap();
        assert_eq!(at_top.low_lr, 0.015);
    }

    #[test]
    fn ordering_is_k_lr_l2sp() {
        let plans = propose_plans(Regime::Anchored, 6, &LRS, &[0.01], &[0.01]).unwrap();
        let keys: Vec<(usize, f64, usize)> = plans
            .iter()
            .map(|p| (p.reinit_count, p.high_lr, p.l2sp_layer_count))
            .collect();
        let mut sorted = keys.clone();
        sorted.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
        assert_eq!(keys, sorted);
    }

    #[test]
    fn bad_grids_rejected() {
        assert!(propose_plans(Regime::Adapted, 6, &[], &[0.1], &[0.1]).is_err());
        assert!(propose_plans(Regime::Adapted, 6, &[0.1, 0.01], &[0.1], &[0.1]).is_err());
        assert!(propose_plans(Regime::Anchored, 6, &[0.1], &[], &[0.1]).is_err());
    }

    #[test]
    fn single_value_grid() {
        let plans = propose_plans(Regime::Adapted, 6, &[0.02], &[0.0], &[0.0]).unwrap();
        assert!(plans.iter().all(|p| (p.low_lr - 0.008).abs() < 1e-15));
        let plans = propose_plans(Regime::Anchored, 6, &[0.02], &[0.0], &[0.0]).unwrap();
        assert!(plans.iter().all(|p| p.high_lr == 0.02));
    }
}
