//! The surprisal-feedback LSTM cell with adaptive zoneout, and its ablations.

mod backward;
mod forward;
mod params;

pub use backward::backward_step;
pub use forward::{
    advance, cell_update, cross_entropy_bpc, forward_step, forward_step_with, gate_forward, hidden_from_cell,
    one_hot, prediction_error, project_outputs, sample_update_mask, step_loss, surprisal_vector,
    zoneout_rate, GateActivations, MaskMode, MaskSource, RecurrentState, StepCache, StepOutput,
};
pub use params::{Gate, GateWeights, GradientSet, ModelParams, ParamSet, Variant, BLOCK_COUNT};
