//! Text generation by repeatedly sampling the model's next-symbol
//! distribution.

use crate::error::{Error, Result};
use crate::numerics::{Real, RngState};
use crate::sflstm::{advance, MaskMode, MaskSource, ModelParams, RecurrentState};

pub const SAMPLE_STREAM: u64 = 5;

/// Index drawn from `softmax(logits / temperature)`.
pub fn sample_logits<T: Real>(logits: &[T], temperature: f64, rng: &mut RngState) -> usize {
    let scaled: Vec<f64> = logits.iter().map(|v| v.as_f64() / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scaled.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.uniform() * total;
    for (k, w) in weights.iter().enumerate() {
        if u < *w {
            return k;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Feeds `prompt` (already encoded) through the model, then samples
/// `length` further symbols, each fed back as the next input.
pub fn generate<T: Real>(
    params: &ModelParams<T>,
    prompt: &[u8],
    length: usize,
    temperature: f64,
    mode: MaskMode,
    seed: u64,
) -> Result<Vec<u8>> {
    if prompt.is_empty() {
        return Err(Error::Config("--prompt must not be empty".into()));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Config(format!("--temperature must be positive, got {temperature}")));
    }
    if let Some(&s) = prompt.iter().find(|&&s| s as usize >= params.vocab()) {
        return Err(Error::Symbol { row: 0, symbol: s as usize, vocab: params.vocab() });
    }
    let mut rng = RngState::with_stream(seed, SAMPLE_STREAM);
    let mut state = RecurrentState::initial(1, params.hidden(), params.vocab());
    let mut next = prompt[0];
    let mut out = Vec::with_capacity(length);
    for k in 0.. {
        let source = match mode {
            MaskMode::Sampled => MaskSource::Sampled(&mut rng),
            MaskMode::Expected => MaskSource::Expected,
        };
        let (s, cache) = advance(&state, &[next as usize], params, source, None)?;
        state = s;
        if k + 1 < prompt.len() {
            next = prompt[k + 1];
            continue;
        }
        if out.len() == length {
            break;
        }
        next = sample_logits(cache.y.row(0), temperature, &mut rng) as u8;
        out.push(next);
    }
    Ok(out)
}
