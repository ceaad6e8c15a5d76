//! Mixed anchored/plain weight decay.
//!
//! Lower blocks decay toward their pre-trained values (the "starting point"),
//! upper blocks decay toward zero:
//!
//! ```text
//! penalty = alpha/2 * sum_{anchored} |w - w0|^2 + beta/2 * sum_{plain} |w|^2
//! ```
//!
//! Biases are penalized with their block's mode.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegMode {
    AnchoredSP,
    PlainL2,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegPlan {
    modes: Vec<RegMode>,
    alpha: f64,
    beta: f64,
    anchors: Option<ParamSet>,
}

fn check_strength(name: &str, v: f64) -> Result<()> {
    if !v.is_finite() || v < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "{name} must be finite and >= 0, got {v}"
        )));
    }
    Ok(())
}

impl RegPlan {
    pub fn new(modes: Vec<RegMode>, alpha: f64, beta: f64, anchors: Option<ParamSet>) -> Result<Self> {
        check_strength("alpha", alpha)?;
        check_strength("beta", beta)?;
        let anchored = modes.iter().filter(|&&m| m == RegMode::AnchoredSP).count();
        if modes[..anchored].iter().any(|&m| m != RegMode::AnchoredSP) {
            return Err(Error::InvalidArgument(
                "anchored blocks must form a contiguous prefix".into(),
            ));
        }
        match &anchors {
            None if anchored > 0 => {
                return Err(Error::InvalidArgument(
                    "anchored blocks need pre-trained anchors".into(),
                ))
            }
            Some(a) if a.n_blocks() < anchored => {
                return Err(Error::Shape(format!(
                    "{} anchor blocks for {anchored} anchored blocks",
                    a.n_blocks()
                )))
            }
            _ => {}
        }
        Ok(Self {
            modes,
            alpha,
            beta,
            anchors: if anchored > 0 { anchors } else { None },
        })
    }

    /// No regularization on any block.
    pub fn none(n_blocks: usize) -> Self {
        Self {
            modes: vec![RegMode::None; n_blocks],
            alpha: 0.0,
            beta: 0.0,
            anchors: None,
        }
    }

    pub fn modes(&self) -> &[RegMode] {
        &self.modes
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn anchors(&self) -> Option<&ParamSet> {
        self.anchors.as_ref()
    }

    pub fn l2sp_count(&self) -> usize {
        self.modes.iter().filter(|&&m| m == RegMode::AnchoredSP).count()
    }

    fn check(&self, params: &ParamSet) -> Result<()> {
        if params.n_blocks() != self.modes.len() {
            return Err(Error::Shape(format!(
                "plan covers {} blocks, params have {}",
                self.modes.len(),
                params.n_blocks()
            )));
        }
        for (b, mode) in self.modes.iter().enumerate() {
            if *mode == RegMode::AnchoredSP {
                let anchor = &self.anchors.as_ref().expect("checked at construction").blocks[b];
                if !anchor.same_shape(&params.blocks[b]) {
                    return Err(Error::Shape(format!(
                        "anchor for block {b} has a different shape than the params"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Blocks `[0, l2sp_count)` anchored to `anchors`, the rest plain L2.
pub fn make_reg_plan(
    n_blocks: usize,
    l2sp_count: usize,
    alpha: f64,
    beta: f64,
    anchors: Option<ParamSet>,
) -> Result<RegPlan> {
    if l2sp_count > n_blocks {
        return Err(Error::InvalidArgument(format!(
            "l2sp_count {l2sp_count} exceeds {n_blocks} blocks"
        )));
    }
    let modes = (0..n_blocks)
        .map(|b| {
            if b < l2sp_count {
                RegMode::AnchoredSP
            } else {
                RegMode::PlainL2
            }
        })
        .collect();
    RegPlan::new(modes, alpha, beta, anchors)
}

pub fn reg_penalty(params: &ParamSet, plan: &RegPlan) -> Result<f64> {
    plan.check(params)?;
    let mut anchored = 0.0;
    let mut plain = 0.0;
    for (b, mode) in plan.modes.iter().enumerate() {
        let block = &params.blocks[b];
        match mode {
            RegMode::AnchoredSP => {
                let anchor = &plan.anchors.as_ref().expect("checked").blocks[b];
                anchored += block
                    .values()
                    .zip(anchor.values())
                    .map(|(w, w0)| (w - w0) * (w - w0))
                    .sum::<f64>();
            }
            RegMode::PlainL2 => plain += block.sq_norm(),
            RegMode::None => {}
        }
    }
    Ok(0.5 * plan.alpha * anchored + 0.5 * plan.beta * plain)
}

/// `beta/2 * |w|^2` over every block.
pub fn plain_l2_penalty(params: &ParamSet, beta: f64) -> f64 {
    0.5 * beta * params.blocks.iter().map(|b| b.sq_norm()).sum::<f64>()
}

/// Analytic gradient of [`reg_penalty`].
pub fn reg_grad(params: &ParamSet, plan: &RegPlan) -> Result<ParamSet> {
    plan.check(params)?;
    let mut grad = ParamSet::zeros_like(params);
    add_reg_grad(params, plan, &mut grad);
    Ok(grad)
}

/// Accumulates the penalty gradient into `grad`. Shapes must already be checked.
pub(crate) fn add_reg_grad(params: &ParamSet, plan: &RegPlan, grad: &mut ParamSet) {
    for (b, mode) in plan.modes.iter().enumerate() {
        let block = &params.blocks[b];
        let g = &mut grad.blocks[b];
        match mode {
            RegMode::AnchoredSP => {
                let anchor = &plan.anchors.as_ref().expect("checked").blocks[b];
                for ((gv, w), w0) in g.values_mut().zip(block.values()).zip(anchor.values()) {
                    *gv += plan.alpha * (w - w0);
                }
            }
            RegMode::PlainL2 => {
                for (gv, w) in g.values_mut().zip(block.values()) {
                    *gv += plan.beta * w;
                }
            }
            RegMode::None => {}
        }
    }
}

pub(crate) fn validate_against(params: &ParamSet, plan: &RegPlan) -> Result<()> {
    plan.check(params)
}
