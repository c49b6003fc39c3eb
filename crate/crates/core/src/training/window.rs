use crate::error::{Error, Result};
use crate::numerics::{Matrix, Real, RngState};
use crate::sflstm::{
    backward_step, forward_step_with, GradientSet, MaskSource, ModelParams, RecurrentState, StepCache,
};

/// The stochastic inputs of one step, kept so the step can be replayed.
#[derive(Clone, Debug)]
pub struct ReplayStep<T> {
    pub surprisal: Matrix<T>,
    pub mask: Matrix<T>,
}

#[derive(Clone, Debug)]
pub struct WindowOutput<T> {
    /// State after the last step, detached from the window.
    pub state: RecurrentState<T>,
    /// Mean loss per symbol in nats.
    pub loss_nats: f64,
    pub step_losses: Vec<f64>,
    /// Mean update probability `z` over the window.
    pub mean_rate: f64,
    /// Fraction of cells that actually updated.
    pub mean_update: f64,
    pub replay: Vec<ReplayStep<T>>,
}

/// Where the window's masks come from.
pub enum WindowMasks<'a, T> {
    Sampled(&'a mut RngState),
    Replay(&'a [ReplayStep<T>]),
}

/// Forward over `inputs.len()` steps, then backward in reverse, adding
/// `∂(Σ_t loss_t)/∂θ` into `grads`. No gradient crosses the window boundary.
///
/// `inputs[t][b]` is the symbol lane `b` reads at step `t`; `targets[t][b]`
/// is the symbol it must predict (the next one in its stream).
pub fn run_tbptt_window<T: Real>(
    state: &RecurrentState<T>,
    inputs: &[Vec<usize>],
    targets: &[Vec<usize>],
    params: &ModelParams<T>,
    masks: WindowMasks<'_, T>,
    grads: &mut GradientSet<T>,
) -> Result<WindowOutput<T>> {
    let (state, caches, out) = forward_window(state, inputs, targets, params, masks)?;
    let (batch, n) = state.c.shape();
    let mut d_h = Matrix::zeros(batch, n);
    let mut d_c = Matrix::zeros(batch, n);
    for (cache, tgt) in caches.iter().zip(targets).rev() {
        let (dh, dc) = backward_step(cache, tgt, params, &d_h, &d_c, grads)?;
        d_h = dh;
        d_c = dc;
    }
    Ok(WindowOutput { state, ..out })
}

/// Final state, per-step caches and window summary.
pub type ForwardWindow<T> = (RecurrentState<T>, Vec<StepCache<T>>, WindowOutput<T>);

/// Forward pass only. Returns the caches alongside the summary.
pub fn forward_window<T: Real>(
    state: &RecurrentState<T>,
    inputs: &[Vec<usize>],
    targets: &[Vec<usize>],
    params: &ModelParams<T>,
    mut masks: WindowMasks<'_, T>,
) -> Result<ForwardWindow<T>> {
    if inputs.is_empty() || inputs.len() != targets.len() {
        return Err(Error::shape("window inputs vs targets", (inputs.len(), 0), (targets.len(), 0)));
    }
    if let WindowMasks::Replay(r) = &masks {
        if r.len() != inputs.len() {
            return Err(Error::shape("window replay", (r.len(), 0), (inputs.len(), 0)));
        }
    }
    let mut state = state.clone();
    let mut caches = Vec::with_capacity(inputs.len());
    let mut replay = Vec::with_capacity(inputs.len());
    let mut step_losses = Vec::with_capacity(inputs.len());
    let (mut rate, mut update) = (0.0, 0.0);
    for (t, (x, y)) in inputs.iter().zip(targets).enumerate() {
        let out = match &mut masks {
            WindowMasks::Sampled(rng) => {
                forward_step_with(&state, x, y, params, MaskSource::Sampled(rng), None)?
            }
            WindowMasks::Replay(r) => {
                forward_step_with(&state, x, y, params, MaskSource::Given(&r[t].mask), Some(&r[t].surprisal))?
            }
        };
        rate += out.cache.rate.mean_f64();
        update += out.cache.mask.mean_f64();
        step_losses.push(out.loss_nats);
        replay.push(ReplayStep { surprisal: out.cache.surprisal.clone(), mask: out.cache.mask.clone() });
        state = out.state;
        caches.push(out.cache);
    }
    let steps = inputs.len() as f64;
    let summary = WindowOutput {
        state: state.clone(),
        loss_nats: step_losses.iter().sum::<f64>() / steps,
        step_losses,
        mean_rate: rate / steps,
        mean_update: update / steps,
        replay,
    };
    Ok((state, caches, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::xavier_init;
    use crate::sflstm::MaskMode;
    use crate::sflstm::{forward_step, Variant};

    #[test]
    fn single_step_window_is_forward_plus_backward() {
        let (n, m) = (6, 4);
        let mut params = ModelParams::<f64>::zeros(n, m, Variant::Adaptive, 0.05).unwrap();
        xavier_init(&mut params, &mut RngState::new(1));
        let state = RecurrentState::initial(3, n, m);
        let inputs = vec![vec![0, 1, 3]];
        let targets = vec![vec![2, 2, 0]];

        let mut g1 = params.weights.zeros_like();
        let w = run_tbptt_window(
            &state,
            &inputs,
            &targets,
            &params,
            WindowMasks::Sampled(&mut RngState::new(5)),
            &mut g1,
        )
        .unwrap();

        let mut rng = RngState::new(5);
        let out =
            forward_step(&state, &inputs[0], &targets[0], &params, &mut rng, MaskMode::Sampled).unwrap();
        let mut g2 = params.weights.zeros_like();
        let z = Matrix::zeros(3, n);
        backward_step(&out.cache, &targets[0], &params, &z, &z, &mut g2).unwrap();

        assert_eq!(w.loss_nats, out.loss_nats);
        assert!(w.state.bits_eq(&out.state));
        assert_eq!(g1, g2);
    }

    #[test]
    fn returned_state_is_detached() {
        let (n, m) = (4, 3);
        let mut params = ModelParams::<f64>::zeros(n, m, Variant::SurprisalFeedback, 0.05).unwrap();
        xavier_init(&mut params, &mut RngState::new(2));
        let state = RecurrentState::initial(1, n, m);
        let inputs = vec![vec![0], vec![1], vec![2]];
        let targets = vec![vec![1], vec![2], vec![0]];
        let mut grads = params.weights.zeros_like();
        let w = run_tbptt_window(
            &state,
            &inputs,
            &targets,
            &params,
            WindowMasks::Sampled(&mut RngState::new(0)),
            &mut grads,
        )
        .unwrap();
        let snapshot = w.state.clone();
        params.weights.w_y.fill(9.0);
        assert!(w.state.bits_eq(&snapshot));
    }

    #[test]
    fn replay_reproduces_window() {
        let (n, m) = (5, 4);
        let mut params = ModelParams::<f64>::zeros(n, m, Variant::FixedZoneout(0.5), 0.05).unwrap();
        xavier_init(&mut params, &mut RngState::new(3));
        let state = RecurrentState::initial(2, n, m);
        let inputs = vec![vec![0, 1], vec![2, 3], vec![1, 1]];
        let targets = vec![vec![2, 3], vec![1, 1], vec![0, 2]];
        let mut ga = params.weights.zeros_like();
        let a = run_tbptt_window(
            &state,
            &inputs,
            &targets,
            &params,
            WindowMasks::Sampled(&mut RngState::new(8)),
            &mut ga,
        )
        .unwrap();
        let mut gb = params.weights.zeros_like();
        let b = run_tbptt_window(&state, &inputs, &targets, &params, WindowMasks::Replay(&a.replay), &mut gb)
            .unwrap();
        assert_eq!(a.step_losses, b.step_losses);
        assert_eq!(ga, gb);
    }

    #[test]
    fn rejects_misaligned_targets() {
        let params = ModelParams::<f64>::zeros(2, 2, Variant::Standard, 0.05).unwrap();
        let state = RecurrentState::initial(1, 2, 2);
        let mut grads = params.weights.zeros_like();
        let r = run_tbptt_window(
            &state,
            &[vec![0], vec![1]],
            &[vec![1]],
            &params,
            WindowMasks::Sampled(&mut RngState::new(0)),
            &mut grads,
        );
        assert!(r.is_err());
    }
}
