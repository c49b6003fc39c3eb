//! Central-difference oracle for the hand-written backward pass.
//!
//! The sampled masks and the surprisal inputs are captured once at the
//! unperturbed parameters and replayed for every perturbed evaluation, so
//! the oracle differentiates exactly the function the backward pass
//! differentiates. Only `f64` is supported.
//!
//! At `ε = 1e-5` a loss of a few nats rounds to about 1e-15, which would put
//! a 5e-11 floor under every derivative. Evaluations are therefore kept as
//! logits and differenced term by term, which brings the floor to a few
//! times 1e-12.

use std::fmt;

use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngState};
use crate::optimizer::xavier_init;
use crate::sflstm::{step_loss, ModelParams, ParamSet, RecurrentState, Variant, BLOCK_COUNT};
use crate::training::window::{forward_window, run_tbptt_window, ReplayStep, WindowMasks};

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// `(f(x + ε) − f(x − ε)) / 2ε`.
pub fn central_difference(mut f: impl FnMut(f64) -> Result<f64>, x: f64, eps: f64) -> Result<f64> {
    let plus = f(x + eps)?;
    let minus = f(x - eps)?;
    if !plus.is_finite() || !minus.is_finite() {
        return Err(Error::NonFiniteLoss(format!("finite difference at {x} produced {plus} / {minus}")));
    }
    Ok((plus - minus) / (2.0 * eps))
}

/// A loss evaluation whose central difference the oracle can form.
pub trait Objective {
    /// `L(self) − L(minus)`.
    fn difference(&self, minus: &Self) -> f64;
}

impl Objective for f64 {
    fn difference(&self, minus: &Self) -> f64 {
        self - minus
    }
}

/// Per-step logits of a window, scored by summed batch-mean cross-entropy.
///
/// Two nearby evaluations are differenced logit by logit as
/// `log1p(Σ_i p⁻_i expm1(y⁺_i − y⁻_i)) − (y⁺_t − y⁻_t)`, which equals the
/// difference of the two losses but never forms either total, so the
/// rounding of a loss of several nats does not swamp a difference of 1e-10.
#[derive(Clone, Debug)]
pub struct WindowLogits {
    pub logits: Vec<Matrix<f64>>,
    pub targets: Vec<Vec<usize>>,
}

impl WindowLogits {
    pub fn loss(&self) -> Result<f64> {
        let mut total = 0.0;
        for (y, t) in self.logits.iter().zip(&self.targets) {
            total += step_loss(y, t)?;
        }
        Ok(total)
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl Objective for WindowLogits {
    fn difference(&self, minus: &Self) -> f64 {
        let mut total = 0.0;
        for ((yp, ym), t) in self.logits.iter().zip(&minus.logits).zip(&self.targets) {
            let batch = yp.rows() as f64;
            for (r, &target) in t.iter().enumerate() {
                let (a, b) = (yp.row(r), ym.row(r));
                let lse = log_sum_exp(b);
                let shift: f64 = a.iter().zip(b).map(|(p, m)| (m - lse).exp() * (p - m).exp_m1()).sum();
                total += (shift.ln_1p() - (a[target] - b[target])) / batch;
            }
        }
        total
    }
}

/// Numerical derivatives for a subset of coordinates of one block.
#[derive(Clone, Debug)]
pub struct BlockSample {
    pub block: usize,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

/// Central-difference gradient of `loss` at `params`.
///
/// Only the listed blocks are probed. With `per_block = Some(k)`, at most
/// `k` evenly spaced coordinates of each block are probed.
pub fn numerical_gradient<F, O>(
    mut loss: F,
    params: &ParamSet<f64>,
    eps: f64,
    blocks: &[usize],
    per_block: Option<usize>,
) -> Result<Vec<BlockSample>>
where
    F: FnMut(&ParamSet<f64>) -> Result<O>,
    O: Objective,
{
    let mut work = params.clone();
    let mut out = Vec::with_capacity(blocks.len());
    for &block in blocks {
        let len = params.blocks()[block].len();
        let indices: Vec<usize> = match per_block {
            Some(k) if k < len => (0..k).map(|j| j * len / k).collect(),
            _ => (0..len).collect(),
        };
        let mut values = Vec::with_capacity(indices.len());
        for &idx in &indices {
            let original = params.blocks()[block].as_slice()[idx];
            work.blocks_mut()[block].as_mut_slice()[idx] = original + eps;
            let plus = loss(&work)?;
            work.blocks_mut()[block].as_mut_slice()[idx] = original - eps;
            let minus = loss(&work)?;
            work.blocks_mut()[block].as_mut_slice()[idx] = original;
            let d = plus.difference(&minus) / (2.0 * eps);
            if !d.is_finite() {
                return Err(Error::NonFiniteLoss(format!(
                    "finite difference of {} at index {idx} is {d}",
                    ParamSet::<f64>::block_names()[block]
                )));
            }
            values.push(d);
        }
        out.push(BlockSample { block, indices, values });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockReport {
    pub name: String,
    pub checked: usize,
    pub max_rel: f64,
    pub mean_rel: f64,
    /// (row, col) of the worst coordinate.
    pub worst: (usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub label: String,
    pub blocks: Vec<BlockReport>,
}

impl GradReport {
    pub fn max_rel(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel() < tol
    }
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "variant\tblock\tchecked\tmax_rel_err\tmean_rel_err\tworst_row\tworst_col")?;
        for b in &self.blocks {
            writeln!(
                f,
                "{}\t{}\t{}\t{:.3e}\t{:.3e}\t{}\t{}",
                self.label, b.name, b.checked, b.max_rel, b.mean_rel, b.worst.0, b.worst.1
            )?;
        }
        Ok(())
    }
}

/// Per-block relative error between an analytic gradient and sampled
/// numerical derivatives.
pub fn compare_gradients(
    label: &str,
    analytic: &ParamSet<f64>,
    numeric: &[BlockSample],
) -> Result<GradReport> {
    let names = ParamSet::<f64>::block_names();
    let blocks = analytic.blocks();
    let mut out = Vec::with_capacity(numeric.len());
    for sample in numeric {
        let block: &Matrix<f64> =
            blocks.get(sample.block).ok_or_else(|| Error::GradCheck(format!("no block {}", sample.block)))?;
        if sample.indices.len() != sample.values.len() {
            return Err(Error::GradCheck(format!("{} sample is ragged", names[sample.block])));
        }
        let (mut max_rel, mut sum, mut worst) = (0.0, 0.0, 0);
        for (&idx, &n) in sample.indices.iter().zip(&sample.values) {
            let a = *block
                .as_slice()
                .get(idx)
                .ok_or_else(|| Error::GradCheck(format!("index {idx} outside {}", names[sample.block])))?;
            let e = relative_error(a, n);
            sum += e;
            if e > max_rel || (e == max_rel && worst == 0) {
                max_rel = e;
                worst = idx;
            }
        }
        let checked = sample.indices.len();
        out.push(BlockReport {
            name: names[sample.block].clone(),
            checked,
            max_rel,
            mean_rel: if checked == 0 { 0.0 } else { sum / checked as f64 },
            worst: (worst / block.cols(), worst % block.cols()),
        });
    }
    Ok(GradReport { label: label.to_string(), blocks: out })
}

/// Shape and seed of the unrolled window the checker differentiates.
#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub steps: usize,
    pub batch: usize,
    pub hidden: usize,
    pub vocab: usize,
    pub tau: f64,
    pub eps: f64,
    pub seed: u64,
    pub per_block: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { steps: 4, batch: 2, hidden: 8, vocab: 5, tau: 0.05, eps: 1e-5, seed: 1, per_block: None }
    }
}

/// Result of checking one variant.
#[derive(Clone, Debug)]
pub struct GradCheckRun {
    pub report: GradReport,
    /// Number of perturbed evaluations, all of which replayed the captured
    /// masks bit-for-bit.
    pub evaluations: usize,
}

/// Blocks that receive gradient under `variant`; the standard LSTM has no
/// trainable feedback weights.
pub fn trainable_blocks(variant: Variant) -> Vec<usize> {
    (0..BLOCK_COUNT).filter(|&k| variant.uses_feedback() || !ParamSet::<f64>::is_feedback_block(k)).collect()
}

/// Builds a random tiny model and window, then compares the backward pass
/// against central differences for every trainable block.
pub fn check_variant(variant: Variant, cfg: &GradCheckConfig) -> Result<GradCheckRun> {
    let (t_len, b, n, m) = (cfg.steps, cfg.batch, cfg.hidden, cfg.vocab);
    let mut rng = RngState::with_stream(cfg.seed, 0);
    let mut params = ModelParams::<f64>::zeros(n, m, variant, cfg.tau)?;
    xavier_init(&mut params, &mut rng);
    for g in params.weights.gates.iter_mut() {
        for v in g.bias.as_mut_slice() {
            *v += rng.uniform_in(-0.2, 0.2);
        }
    }
    for v in params.weights.b_y.as_mut_slice() {
        *v = rng.uniform_in(-0.2, 0.2);
    }

    let mut state = RecurrentState::initial(b, n, m);
    for v in state.c.as_mut_slice() {
        *v = rng.uniform_in(-1.0, 1.0);
    }
    for v in state.h.as_mut_slice() {
        *v = rng.uniform_in(-0.5, 0.5);
    }
    for r in 0..b {
        let row = state.p_prev.row_mut(r);
        for v in row.iter_mut() {
            *v = rng.uniform_in(0.2, 1.0);
        }
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    let stream: Vec<Vec<usize>> = (0..=t_len).map(|_| (0..b).map(|_| rng.below(m)).collect()).collect();
    let inputs = &stream[..t_len];
    let targets = &stream[1..];

    let mut analytic = params.weights.zeros_like();
    let mut mask_rng = RngState::with_stream(cfg.seed, 1);
    let window = run_tbptt_window(
        &state,
        inputs,
        targets,
        &params,
        WindowMasks::Sampled(&mut mask_rng),
        &mut analytic,
    )?;
    let replay: Vec<ReplayStep<f64>> = window.replay;
    let total_at_theta: f64 = window.step_losses.iter().sum();

    let mut evaluations = 0usize;
    let loss = |weights: &ParamSet<f64>| -> Result<WindowLogits> {
        let perturbed = ModelParams { weights: weights.clone(), tau: params.tau, variant: params.variant };
        let (_, caches, out) =
            forward_window(&state, inputs, targets, &perturbed, WindowMasks::Replay(&replay))?;
        for (c, r) in caches.iter().zip(&replay) {
            if !c.mask.bits_eq(&r.mask) || !c.surprisal.bits_eq(&r.surprisal) {
                return Err(Error::GradCheck("replayed mask diverged".into()));
            }
        }
        evaluations += 1;
        let eval =
            WindowLogits { logits: caches.into_iter().map(|c| c.y).collect(), targets: targets.to_vec() };
        debug_assert_eq!(eval.loss().ok(), Some(out.step_losses.iter().sum::<f64>()));
        Ok(eval)
    };

    let mut loss = loss;
    let replayed = loss(&params.weights)?.loss()?;
    if replayed.to_bits() != total_at_theta.to_bits() {
        return Err(Error::GradCheck(format!(
            "replay at θ gave {replayed}, sampled window gave {total_at_theta}"
        )));
    }
    let numeric =
        numerical_gradient(&mut loss, &params.weights, cfg.eps, &trainable_blocks(variant), cfg.per_block)?;
    let report = compare_gradients(&variant.to_string(), &analytic, &numeric)?;
    Ok(GradCheckRun { report, evaluations: evaluations - 1 })
}
