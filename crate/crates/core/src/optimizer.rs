//! Parameter initialization and the Adadelta update rule.

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Real, RngState};
use crate::sflstm::{Gate, GradientSet, ModelParams, ParamSet, Variant};

fn fill_xavier<T: Real>(m: &mut Matrix<T>, rng: &mut RngState) {
    let bound = xavier_bound(m.rows(), m.cols());
    for v in m.as_mut_slice() {
        *v = T::of(rng.uniform_in(-bound, bound));
    }
}

/// Xavier-uniform bound `sqrt(6 / (fan_in + fan_out))` for a rows×cols matrix.
pub fn xavier_bound(rows: usize, cols: usize) -> f64 {
    (6.0 / (rows + cols) as f64).sqrt()
}

/// Fills every weight matrix with Xavier-uniform draws, zeroes the biases and
/// sets the forget bias to one. The feedback blocks stay zero for the
/// standard variant.
pub fn xavier_init<T: Real>(params: &mut ModelParams<T>, rng: &mut RngState) {
    let feedback = params.variant.uses_feedback();
    let w = &mut params.weights;
    for (k, g) in w.gates.iter_mut().enumerate() {
        fill_xavier(&mut g.input, rng);
        fill_xavier(&mut g.recurrent, rng);
        fill_xavier(&mut g.feedback, rng);
        if !feedback {
            g.feedback.fill(T::zero());
        }
        let bias = if k == Gate::Forget.index() { T::one() } else { T::zero() };
        g.bias.fill(bias);
    }
    fill_xavier(&mut w.w_y, rng);
    w.b_y.fill(T::zero());
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdadeltaConfig {
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
}

impl Default for AdadeltaConfig {
    fn default() -> Self {
        Self { lr: 0.001, rho: 0.95, eps: 1e-6 }
    }
}

/// Running averages of squared gradients and squared updates.
#[derive(Clone, Debug, PartialEq)]
pub struct AdadeltaState<T> {
    pub sq_grad: ParamSet<T>,
    pub sq_update: ParamSet<T>,
    pub config: AdadeltaConfig,
}

impl<T: Real> AdadeltaState<T> {
    pub fn new(like: &ParamSet<T>, config: AdadeltaConfig) -> Self {
        Self { sq_grad: like.zeros_like(), sq_update: like.zeros_like(), config }
    }
}

/// One Adadelta update, with the step scaled by `lr`:
///
/// ```text
/// E[g²]  ← ρ E[g²] + (1 − ρ) g²
/// Δ      = −lr · sqrt(E[Δ²] + ε) / sqrt(E[g²] + ε) · g
/// E[Δ²]  ← ρ E[Δ²] + (1 − ρ) Δ²
/// θ      ← θ + Δ
/// ```
///
/// Gradients are validated before anything is modified.
pub fn adadelta_step<T: Real>(
    params: &mut ModelParams<T>,
    grads: &GradientSet<T>,
    state: &mut AdadeltaState<T>,
) -> Result<()> {
    if !grads.is_congruent(&params.weights) || !state.sq_grad.is_congruent(&params.weights) {
        return Err(Error::shape("adadelta", grads.w_y.shape(), params.weights.w_y.shape()));
    }
    let names = ParamSet::<T>::block_names();
    for (name, g) in names.iter().zip(grads.blocks()) {
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient { block: name.clone() });
        }
    }

    let AdadeltaConfig { lr, rho, eps } = state.config;
    let (lr, rho, eps) = (T::of(lr), T::of(rho), T::of(eps));
    let keep = T::one() - rho;
    let frozen_feedback = matches!(params.variant, Variant::Standard);
    let blocks = params
        .weights
        .blocks_mut()
        .into_iter()
        .zip(grads.blocks())
        .zip(state.sq_grad.blocks_mut())
        .zip(state.sq_update.blocks_mut());
    for (k, (((theta, g), eg), ed)) in blocks.enumerate() {
        if frozen_feedback && ParamSet::<T>::is_feedback_block(k) {
            continue;
        }
        let theta = theta.as_mut_slice();
        let (g, eg, ed) = (g.as_slice(), eg.as_mut_slice(), ed.as_mut_slice());
        for j in 0..theta.len() {
            eg[j] = rho * eg[j] + keep * g[j] * g[j];
            let delta = -lr * (ed[j] + eps).sqrt() / (eg[j] + eps).sqrt() * g[j];
            ed[j] = rho * ed[j] + keep * delta * delta;
            theta[j] += delta;
        }
    }
    Ok(())
}

/// Rescales all blocks so the global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_gradients<T: Real>(grads: &mut GradientSet<T>, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && max_norm > 0.0 {
        let scale = T::of(max_norm / norm);
        for b in grads.blocks_mut() {
            b.as_mut_slice().iter_mut().for_each(|v| *v *= scale);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_params(g: f64) -> (ModelParams<f64>, GradientSet<f64>) {
        let params = ModelParams::<f64>::zeros(1, 1, Variant::Adaptive, 0.05).unwrap();
        let mut grads = params.weights.zeros_like();
        grads.b_y.set(0, 0, g);
        (params, grads)
    }

    #[test]
    fn init_biases() {
        let mut p = ModelParams::<f32>::zeros(16, 7, Variant::Adaptive, 0.05).unwrap();
        xavier_init(&mut p, &mut RngState::new(3));
        for gate in Gate::ALL {
            let expect = if gate == Gate::Forget { 1.0 } else { 0.0 };
            assert!(p.gate(gate).bias.as_slice().iter().all(|&v| v == expect));
        }
        assert!(p.weights.b_y.as_slice().iter().all(|&v| v == 0.0));
        assert!(p.gate(Gate::Input).feedback.sum_sq_f64() > 0.0);

        let mut s = ModelParams::<f32>::zeros(16, 7, Variant::Standard, 0.05).unwrap();
        xavier_init(&mut s, &mut RngState::new(3));
        assert!(s.weights.gates.iter().all(|g| g.feedback.sum_sq_f64() == 0.0));
    }

    #[test]
    fn init_variance() {
        let mut m = Matrix::<f64>::zeros(512, 512);
        let bound = xavier_bound(512, 512);
        fill_xavier(&mut m, &mut RngState::new(1));
        let mean = m.mean_f64();
        let var = m.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m.len() as f64;
        let expect = 2.0 / 1024.0;
        assert!((var - expect).abs() < 0.1 * expect, "{var} vs {expect}");
        assert!(m.as_slice().iter().all(|v| v.abs() < bound));
    }

    #[test]
    fn init_is_seeded() {
        let mut a = ModelParams::<f32>::zeros(8, 5, Variant::Adaptive, 0.05).unwrap();
        let mut b = a.clone();
        xavier_init(&mut a, &mut RngState::new(77));
        xavier_init(&mut b, &mut RngState::new(77));
        assert_eq!(a.weights.checksum(), b.weights.checksum());
    }

    #[test]
    fn zero_gradient_decays_accumulators_only() {
        let (mut params, grads) = scalar_params(0.0);
        params.weights.b_y.set(0, 0, 0.7);
        let mut state = AdadeltaState::new(&params.weights, AdadeltaConfig::default());
        state.sq_grad.b_y.set(0, 0, 2.0);
        state.sq_update.b_y.set(0, 0, 4.0);
        adadelta_step(&mut params, &grads, &mut state).unwrap();
        assert_eq!(params.weights.b_y.get(0, 0), 0.7);
        assert!((state.sq_grad.b_y.get(0, 0) - 1.9).abs() < 1e-15);
        assert!((state.sq_update.b_y.get(0, 0) - 3.8).abs() < 1e-15);
    }

    #[test]
    fn first_step_closed_form() {
        let (mut params, grads) = scalar_params(1.0);
        let mut state = AdadeltaState::new(&params.weights, AdadeltaConfig::default());
        adadelta_step(&mut params, &grads, &mut state).unwrap();
        let expect = -0.001 * 1e-6f64.sqrt() / (0.05f64 + 1e-6).sqrt();
        let got = params.weights.b_y.get(0, 0);
        assert!((got - expect).abs() < 1e-18);
        assert!((got + 4.4721e-6).abs() < 1e-9);
    }

    #[test]
    fn update_opposes_gradient() {
        for g in [-3.0, -0.01, 0.5, 20.0] {
            let (mut params, grads) = scalar_params(g);
            let mut state = AdadeltaState::new(&params.weights, AdadeltaConfig::default());
            adadelta_step(&mut params, &grads, &mut state).unwrap();
            assert!(params.weights.b_y.get(0, 0) * g < 0.0);
        }
    }

    #[test]
    fn non_finite_gradient_names_block() {
        let (mut params, mut grads) = scalar_params(1.0);
        grads.gate_mut(Gate::Output).recurrent.set(0, 0, f64::NAN);
        let before = params.clone();
        let mut state = AdadeltaState::new(&params.weights, AdadeltaConfig::default());
        match adadelta_step(&mut params, &grads, &mut state) {
            Err(Error::NonFiniteGradient { block }) => assert_eq!(block, "U_o"),
            other => panic!("{other:?}"),
        }
        assert_eq!(params, before);
    }

    #[test]
    fn clipping() {
        let (_, mut grads) = scalar_params(0.0);
        grads.w_y.set(0, 0, 3.0);
        grads.b_y.set(0, 0, 4.0);
        let before = grads.clone();
        assert_eq!(clip_gradients(&mut grads, 5.0), 5.0);
        assert_eq!(grads, before);

        let mut zero = grads.zeros_like();
        clip_gradients(&mut zero, 5.0);
        assert_eq!(zero.global_norm(), 0.0);

        let (_, mut big) = scalar_params(0.0);
        big.w_y.set(0, 0, 6.0);
        big.b_y.set(0, 0, 8.0);
        assert_eq!(clip_gradients(&mut big, 5.0), 10.0);
        assert_eq!(big.w_y.get(0, 0), 3.0);
        assert_eq!(big.b_y.get(0, 0), 4.0);
    }
}
