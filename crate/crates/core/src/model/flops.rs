//! Analytic FLOP accounting.
//!
//! Conventions (documented here once, used everywhere):
//! - convolution: `2 * C_in * C_out * K^2` FLOPs per output element
//!   (multiply-accumulate counted as 2); bias adds are not counted.
//! - normalization and activations: 1 FLOP per element.
//! - max pooling / global average pooling: 1 FLOP per input element.
//! - bilinear upsampling: 8 FLOPs per output element (4 taps, multiply-add).
//! - index unpooling, concatenation, broadcast: 0 (pure data movement).

use alloc::vec::Vec;

use crate::error::Result;
use crate::model::{build_model, ModelSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlanOp {
    Conv {
        c_in: u64,
        c_out: u64,
        k: u64,
        out_elements: u64,
    },
    Norm {
        elements: u64,
    },
    Activation {
        elements: u64,
    },
    MaxPool {
        input_elements: u64,
    },
    Unpool,
    Upsample {
        output_elements: u64,
    },
    GlobalPool {
        input_elements: u64,
    },
}

pub fn op_flops(op: &PlanOp) -> u64 {
    match *op {
        PlanOp::Conv {
            c_in,
            c_out,
            k,
            out_elements,
        } => 2 * c_in * c_out * k * k * out_elements,
        PlanOp::Norm { elements } => elements,
        PlanOp::Activation { elements } => elements,
        PlanOp::MaxPool { input_elements } => input_elements,
        PlanOp::Unpool => 0,
        PlanOp::Upsample { output_elements } => 8 * output_elements,
        PlanOp::GlobalPool { input_elements } => input_elements,
    }
}

/// Exact integer FLOPs of a declared plan; an empty plan costs zero.
pub fn plan_flops(plan: &[PlanOp]) -> u64 {
    plan.iter().map(op_flops).sum()
}

/// Total forward-pass FLOPs for one `input_size x input_size` image.
pub fn estimate_flops(spec: &ModelSpec, input_size: usize) -> Result<u64> {
    // The plan is emitted by walking the live layer list of a freshly built
    // model, so it cannot drift from the architecture.
    let model = build_model(spec, 0)?;
    model.check_input_size(input_size)?;
    Ok(plan_flops(&model.flops_plan(input_size)))
}

/// Forward-pass cost in GFLOPs, as reported in comparison tables.
pub fn estimate_gflops(spec: &ModelSpec, input_size: usize) -> Result<f64> {
    Ok(estimate_flops(spec, input_size)? as f64 / 1e9)
}

/// Sum of only the convolution terms, used by the scaling checks.
pub fn conv_flops(plan: &[PlanOp]) -> u64 {
    plan.iter()
        .filter(|op| matches!(op, PlanOp::Conv { .. }))
        .map(op_flops)
        .sum()
}

/// Convolution terms whose output scales with the input grid. The one
/// exception in the zoo is the global-pool projection, which always emits a
/// single element and is therefore resolution-independent.
pub fn spatial_conv_flops(plan: &[PlanOp]) -> u64 {
    plan.iter()
        .filter(|op| matches!(op, PlanOp::Conv { out_elements, .. } if *out_elements > 1))
        .map(op_flops)
        .sum()
}

pub type Plan = Vec<PlanOp>;
