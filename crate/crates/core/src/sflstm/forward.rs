use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::{
    accumulate_sparse_nt, apply_sigmoid, apply_tanh, gemm, sample_bernoulli, softmax_rows, Matrix, Real,
    RngState,
};

use super::params::{Gate, ModelParams, Variant};

/// How the binary update mask is obtained when running a step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskMode {
    /// Draw `Z ~ Bernoulli(z)`.
    Sampled,
    /// Replace `Z` by its expectation `z`.
    Expected,
}

impl fmt::Display for MaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskMode::Sampled => "sampled",
            MaskMode::Expected => "expected",
        })
    }
}

impl FromStr for MaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sampled" => Ok(MaskMode::Sampled),
            "expected" => Ok(MaskMode::Expected),
            other => Err(Error::Config(format!("--mask must be sampled or expected, got {other:?}"))),
        }
    }
}

/// Mask source for one step. `Given` replays a mask captured earlier.
pub enum MaskSource<'a, T> {
    Sampled(&'a mut RngState),
    Expected,
    Given(&'a Matrix<T>),
}

/// Per-lane carryover between steps. Row `b` belongs to batch lane `b`.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentState<T> {
    pub c: Matrix<T>,
    pub h: Matrix<T>,
    /// Previous step's output distribution.
    pub p_prev: Matrix<T>,
}

impl<T: Real> RecurrentState<T> {
    /// Zero cell and hidden state with a uniform previous prediction.
    pub fn initial(batch: usize, hidden: usize, vocab: usize) -> Self {
        Self {
            c: Matrix::zeros(batch, hidden),
            h: Matrix::zeros(batch, hidden),
            p_prev: Matrix::filled(batch, vocab, T::one() / T::of(vocab as f64)),
        }
    }

    pub fn batch(&self) -> usize {
        self.c.rows()
    }

    pub fn bits_eq(&self, other: &Self) -> bool {
        self.c.bits_eq(&other.c) && self.h.bits_eq(&other.h) && self.p_prev.bits_eq(&other.p_prev)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GateActivations<T> {
    pub f: Matrix<T>,
    pub i: Matrix<T>,
    pub o: Matrix<T>,
    pub u: Matrix<T>,
}

/// Everything one forward step produced that the backward step needs.
#[derive(Clone, Debug, PartialEq)]
pub struct StepCache<T> {
    pub inputs: Vec<usize>,
    pub x: Matrix<T>,
    pub surprisal: Matrix<T>,
    pub error: Matrix<T>,
    pub rate: Matrix<T>,
    pub mask: Matrix<T>,
    pub gates: GateActivations<T>,
    pub c_prev: Matrix<T>,
    pub h_prev: Matrix<T>,
    pub c: Matrix<T>,
    pub c_hat: Matrix<T>,
    pub h: Matrix<T>,
    pub y: Matrix<T>,
    pub p: Matrix<T>,
}

impl<T: Real> StepCache<T> {
    pub fn bits_eq(&self, other: &Self) -> bool {
        let pairs = [
            (&self.x, &other.x),
            (&self.surprisal, &other.surprisal),
            (&self.error, &other.error),
            (&self.rate, &other.rate),
            (&self.mask, &other.mask),
            (&self.gates.f, &other.gates.f),
            (&self.gates.i, &other.gates.i),
            (&self.gates.o, &other.gates.o),
            (&self.gates.u, &other.gates.u),
            (&self.c_prev, &other.c_prev),
            (&self.h_prev, &other.h_prev),
            (&self.c, &other.c),
            (&self.c_hat, &other.c_hat),
            (&self.h, &other.h),
            (&self.y, &other.y),
            (&self.p, &other.p),
        ];
        self.inputs == other.inputs && pairs.iter().all(|(a, b)| a.bits_eq(b))
    }
}

#[derive(Clone, Debug)]
pub struct StepOutput<T> {
    pub state: RecurrentState<T>,
    pub cache: StepCache<T>,
    /// Mean over the batch of `-ln p[target]`.
    pub loss_nats: f64,
}

pub fn one_hot<T: Real>(symbols: &[usize], vocab: usize) -> Result<Matrix<T>> {
    let mut x = Matrix::zeros(symbols.len(), vocab);
    for (row, &s) in symbols.iter().enumerate() {
        if s >= vocab {
            return Err(Error::Symbol { row, symbol: s, vocab });
        }
        x.set(row, s, T::one());
    }
    Ok(x)
}

/// `log(p_prev) ⊙ x`: zero except at each row's arrived symbol, where it is
/// the log-probability the previous step gave that symbol.
pub fn surprisal_vector<T: Real>(p_prev: &Matrix<T>, x: &Matrix<T>) -> Result<Matrix<T>> {
    p_prev.check_same(x, "surprisal")?;
    let mut s = Matrix::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        for c in 0..x.cols() {
            let xv = x.get(r, c);
            if xv == T::zero() {
                continue;
            }
            let p = p_prev.get(r, c);
            if p <= T::zero() {
                return Err(Error::ZeroProbability { row: r, symbol: c });
            }
            s.set(r, c, p.ln() * xv);
        }
    }
    Ok(s)
}

/// `p_prev − x`.
pub fn prediction_error<T: Real>(p_prev: &Matrix<T>, x: &Matrix<T>) -> Result<Matrix<T>> {
    p_prev.zip_map(x, "prediction error", |p, x| p - x)
}

/// `min(tau + |error · W_y|, 1)` per hidden unit.
///
/// `error · W_y` maps the length-M error row onto the N hidden units through
/// the output weights, which is the gradient of the previous step's
/// cross-entropy with respect to `h` under the current target.
pub fn zoneout_rate<T: Real>(error: &Matrix<T>, w_y: &Matrix<T>, tau: f64) -> Result<Matrix<T>> {
    let mut back = Matrix::zeros(error.rows(), w_y.cols());
    gemm(T::one(), error, false, w_y, false, T::zero(), &mut back)?;
    let tau = T::of(tau);
    Ok(back.map(|v| (tau + v.abs()).min(T::one())))
}

/// `Z ~ Bernoulli(z)`; 1 means update, 0 means the cell is frozen.
pub fn sample_update_mask<T: Real>(rate: &Matrix<T>, rng: &mut RngState) -> Result<Matrix<T>> {
    sample_bernoulli(rate, rng)
}

fn broadcast_rows<T: Real>(bias: &Matrix<T>, rows: usize) -> Matrix<T> {
    let mut out = Matrix::zeros(rows, bias.cols());
    for r in 0..rows {
        out.row_mut(r).copy_from_slice(bias.as_slice());
    }
    out
}

fn pre_activation<T: Real>(
    x: &Matrix<T>,
    h_prev: &Matrix<T>,
    s: &Matrix<T>,
    params: &ModelParams<T>,
    gate: Gate,
) -> Result<Matrix<T>> {
    let w = params.gate(gate);
    let mut pre = broadcast_rows(&w.bias, x.rows());
    accumulate_sparse_nt(x, &w.input, &mut pre)?;
    gemm(T::one(), h_prev, false, &w.recurrent, true, T::one(), &mut pre)?;
    if params.variant.uses_feedback() {
        accumulate_sparse_nt(s, &w.feedback, &mut pre)?;
    }
    Ok(pre)
}

/// Erase, write and read gates plus the candidate content.
pub fn gate_forward<T: Real>(
    x: &Matrix<T>,
    h_prev: &Matrix<T>,
    s: &Matrix<T>,
    params: &ModelParams<T>,
) -> Result<GateActivations<T>> {
    if x.rows() != h_prev.rows() {
        return Err(Error::shape("gate input vs hidden", x.shape(), h_prev.shape()));
    }
    x.check_same(s, "gate input vs surprisal")?;
    Ok(GateActivations {
        f: apply_sigmoid(&pre_activation(x, h_prev, s, params, Gate::Forget)?),
        i: apply_sigmoid(&pre_activation(x, h_prev, s, params, Gate::Input)?),
        o: apply_sigmoid(&pre_activation(x, h_prev, s, params, Gate::Output)?),
        u: apply_tanh(&pre_activation(x, h_prev, s, params, Gate::Candidate)?),
    })
}

/// `c = (1 − f⊙Z) ⊙ c_prev + Z ⊙ i ⊙ u`. With `Z = 0` the cell is copied
/// unchanged.
pub fn cell_update<T: Real>(
    c_prev: &Matrix<T>,
    f: &Matrix<T>,
    i: &Matrix<T>,
    u: &Matrix<T>,
    mask: &Matrix<T>,
) -> Result<Matrix<T>> {
    for m in [f, i, u, mask] {
        c_prev.check_same(m, "cell update")?;
    }
    let mut c = Matrix::zeros(c_prev.rows(), c_prev.cols());
    let out = c.as_mut_slice();
    let (cp, f, i, u, z) = (c_prev.as_slice(), f.as_slice(), i.as_slice(), u.as_slice(), mask.as_slice());
    for k in 0..out.len() {
        out[k] = (T::one() - f[k] * z[k]) * cp[k] + z[k] * i[k] * u[k];
    }
    Ok(c)
}

/// `(tanh c, o ⊙ tanh c)`.
pub fn hidden_from_cell<T: Real>(c: &Matrix<T>, o: &Matrix<T>) -> Result<(Matrix<T>, Matrix<T>)> {
    let c_hat = apply_tanh(c);
    let h = o.zip_map(&c_hat, "hidden from cell", |o, ch| o * ch)?;
    Ok((c_hat, h))
}

/// Logits `h · W_yᵀ + b_y` and their softmax.
pub fn project_outputs<T: Real>(h: &Matrix<T>, params: &ModelParams<T>) -> Result<(Matrix<T>, Matrix<T>)> {
    let w = &params.weights;
    let mut y = broadcast_rows(&w.b_y, h.rows());
    gemm(T::one(), h, false, &w.w_y, true, T::one(), &mut y)?;
    let p = softmax_rows(&y);
    Ok((y, p))
}

pub fn cross_entropy_bpc(loss_nats: f64) -> f64 {
    loss_nats / std::f64::consts::LN_2
}

/// Mean over rows of `logsumexp(y) − y[target]`, evaluated in `f64`.
pub fn step_loss<T: Real>(y: &Matrix<T>, targets: &[usize]) -> Result<f64> {
    if targets.len() != y.rows() {
        return Err(Error::shape("targets", (targets.len(), 1), y.shape()));
    }
    let mut total = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        if t >= y.cols() {
            return Err(Error::Symbol { row: r, symbol: t, vocab: y.cols() });
        }
        let row = y.row(r);
        let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln();
        total += lse - row[t].as_f64();
    }
    Ok(total / targets.len().max(1) as f64)
}

fn update_rate<T: Real>(params: &ModelParams<T>, error: &Matrix<T>, batch: usize) -> Result<Matrix<T>> {
    let n = params.hidden();
    match params.variant {
        Variant::Adaptive => zoneout_rate(error, &params.weights.w_y, params.tau),
        Variant::FixedZoneout(r) => Ok(Matrix::filled(batch, n, T::of(r))),
        Variant::Standard | Variant::SurprisalFeedback => Ok(Matrix::filled(batch, n, T::one())),
    }
}

/// Runs the cell on one batch of input symbols without computing a loss.
///
/// `surprisal` replaces the feedback vector computed from `p_prev`; the
/// gradient checker uses it to hold that input fixed under perturbation.
pub fn advance<T: Real>(
    state: &RecurrentState<T>,
    inputs: &[usize],
    params: &ModelParams<T>,
    mask: MaskSource<'_, T>,
    surprisal: Option<&Matrix<T>>,
) -> Result<(RecurrentState<T>, StepCache<T>)> {
    let (batch, n, m) = (state.batch(), params.hidden(), params.vocab());
    if inputs.len() != batch {
        return Err(Error::shape("inputs vs state", (inputs.len(), 1), state.c.shape()));
    }
    if state.c.shape() != (batch, n) || state.h.shape() != (batch, n) || state.p_prev.shape() != (batch, m) {
        return Err(Error::shape("state", state.c.shape(), (batch, n)));
    }

    let x = one_hot(inputs, m)?;
    let s = match surprisal {
        Some(s) => {
            s.check_same(&x, "replayed surprisal")?;
            s.clone()
        }
        None => surprisal_vector(&state.p_prev, &x)?,
    };
    let error = prediction_error(&state.p_prev, &x)?;
    let rate = update_rate(params, &error, batch)?;
    let mask = match mask {
        MaskSource::Given(z) => {
            z.check_same(&rate, "replayed mask")?;
            z.clone()
        }
        MaskSource::Expected => rate.clone(),
        MaskSource::Sampled(rng) => match params.variant {
            Variant::Standard | Variant::SurprisalFeedback => Matrix::filled(batch, n, T::one()),
            Variant::FixedZoneout(_) | Variant::Adaptive => sample_update_mask(&rate, rng)?,
        },
    };

    let gates = gate_forward(&x, &state.h, &s, params)?;
    let c = cell_update(&state.c, &gates.f, &gates.i, &gates.u, &mask)?;
    let (c_hat, h) = hidden_from_cell(&c, &gates.o)?;
    let (y, p) = project_outputs(&h, params)?;

    let next = RecurrentState { c: c.clone(), h: h.clone(), p_prev: p.clone() };
    let cache = StepCache {
        inputs: inputs.to_vec(),
        x,
        surprisal: s,
        error,
        rate,
        mask,
        gates,
        c_prev: state.c.clone(),
        h_prev: state.h.clone(),
        c,
        c_hat,
        h,
        y,
        p,
    };
    Ok((next, cache))
}

/// One full step: consume `inputs`, predict `targets` (the next symbols).
pub fn forward_step<T: Real>(
    state: &RecurrentState<T>,
    inputs: &[usize],
    targets: &[usize],
    params: &ModelParams<T>,
    rng: &mut RngState,
    mode: MaskMode,
) -> Result<StepOutput<T>> {
    let source = match mode {
        MaskMode::Sampled => MaskSource::Sampled(rng),
        MaskMode::Expected => MaskSource::Expected,
    };
    forward_step_with(state, inputs, targets, params, source, None)
}

pub fn forward_step_with<T: Real>(
    state: &RecurrentState<T>,
    inputs: &[usize],
    targets: &[usize],
    params: &ModelParams<T>,
    mask: MaskSource<'_, T>,
    surprisal: Option<&Matrix<T>>,
) -> Result<StepOutput<T>> {
    let (state, cache) = advance(state, inputs, params, mask, surprisal)?;
    let loss_nats = step_loss(&cache.y, targets)?;
    Ok(StepOutput { state, cache, loss_nats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::sigmoid;
    use crate::optimizer::xavier_init;

    fn random_params(n: usize, m: usize, variant: Variant, seed: u64) -> ModelParams<f64> {
        let mut p = ModelParams::zeros(n, m, variant, 0.05).unwrap();
        xavier_init(&mut p, &mut RngState::new(seed));
        let mut rng = RngState::new(seed + 1);
        for g in p.weights.gates.iter_mut() {
            for v in g.bias.as_mut_slice() {
                *v = rng.uniform_in(-0.5, 0.5);
            }
        }
        p
    }

    #[test]
    fn surprisal_examples() {
        let p = Matrix::<f64>::filled(1, 4, 0.25);
        let s = surprisal_vector(&p, &one_hot(&[2], 4).unwrap()).unwrap();
        assert_eq!(s.row(0), &[0.0, 0.0, 0.25f64.ln(), 0.0]);
        assert!((s.get(0, 2) + 1.386294).abs() < 1e-6);

        let sure = Matrix::<f64>::from_rows(&[[0.0, 1.0, 0.0]]);
        let s = surprisal_vector(&sure, &one_hot(&[1], 3).unwrap()).unwrap();
        assert!(s.as_slice().iter().all(|&v| v == 0.0));

        let p = Matrix::<f64>::from_rows(&[[0.7, 0.2, 0.1]]);
        let s = surprisal_vector(&p, &one_hot(&[1], 3).unwrap()).unwrap();
        assert_eq!(s.get(0, 1), 0.2f64.ln());
        assert!((s.get(0, 1) + 1.609438).abs() < 1e-6);
        assert_eq!(s.get(0, 0), 0.0);

        let err = surprisal_vector(&sure, &one_hot(&[0], 3).unwrap()).unwrap_err();
        assert!(matches!(err, Error::ZeroProbability { row: 0, symbol: 0 }));
    }

    #[test]
    fn prediction_error_examples() {
        let x = one_hot::<f64>(&[2], 4).unwrap();
        assert!(prediction_error(&x, &x).unwrap().as_slice().iter().all(|&v| v == 0.0));
        let e = prediction_error(&Matrix::filled(1, 4, 0.25), &x).unwrap();
        assert_eq!(e.row(0), &[0.25, 0.25, -0.75, 0.25]);
        assert_eq!(e.sum_f64(), 0.0);
    }

    #[test]
    fn zoneout_rate_examples() {
        let w_y = Matrix::<f64>::from_rows(&[[1.0, 0.0], [0.0, 2.0]]);
        let z = zoneout_rate(&Matrix::zeros(3, 2), &w_y, 0.05).unwrap();
        assert!(z.as_slice().iter().all(|&v| v == 0.05));

        let s = Matrix::from_rows(&[[0.5, -0.5]]);
        let z = zoneout_rate(&s, &w_y, 0.1).unwrap();
        assert!((z.get(0, 0) - 0.6).abs() < 1e-15);
        assert_eq!(z.get(0, 1), 1.0);
    }

    #[test]
    fn tau_one_forces_full_mask() {
        let mut rng = RngState::new(4);
        let w_y = Matrix::<f64>::from_rows(&[[0.3, -0.2], [0.1, 0.9]]);
        let z = zoneout_rate(&Matrix::from_rows(&[[0.2, -0.2]]), &w_y, 1.0).unwrap();
        let mask = sample_update_mask(&z, &mut rng).unwrap();
        assert!(mask.as_slice().iter().all(|&v| v == 1.0));
        let mask = sample_update_mask(&Matrix::<f64>::zeros(2, 3), &mut rng).unwrap();
        assert!(mask.as_slice().iter().all(|&v| v == 0.0));
        let mask = sample_update_mask(&Matrix::<f64>::filled(100, 1000, 0.5), &mut rng).unwrap();
        assert!((mask.mean_f64() - 0.5).abs() < 0.01);
    }

    #[test]
    fn gate_forward_zero_weights() {
        let mut params = ModelParams::<f64>::zeros(3, 4, Variant::SurprisalFeedback, 0.05).unwrap();
        let x = one_hot(&[1, 3], 4).unwrap();
        let h = Matrix::filled(2, 3, 0.4);
        let s = surprisal_vector(&Matrix::filled(2, 4, 0.25), &x).unwrap();
        let g = gate_forward(&x, &h, &s, &params).unwrap();
        for m in [&g.f, &g.i, &g.o] {
            assert!(m.as_slice().iter().all(|&v| v == 0.5));
        }
        assert!(g.u.as_slice().iter().all(|&v| v == 0.0));

        params.weights.gate_mut(Gate::Forget).bias.fill(1.0);
        let g = gate_forward(&x, &h, &s, &params).unwrap();
        assert!(g.f.as_slice().iter().all(|&v| (v - 0.731058).abs() < 1e-6));
    }

    #[test]
    fn gate_forward_matches_scalar_loop() {
        let (n, m, b) = (4, 5, 3);
        let params = random_params(n, m, Variant::Adaptive, 21);
        let mut rng = RngState::new(22);
        let inputs = [0, 4, 2];
        let x = one_hot(&inputs, m).unwrap();
        let h = Matrix::from_vec(b, n, (0..b * n).map(|_| rng.uniform_in(-1.0, 1.0)).collect()).unwrap();
        let mut p_prev =
            Matrix::from_vec(b, m, (0..b * m).map(|_| rng.uniform_in(0.1, 1.0)).collect()).unwrap();
        for r in 0..b {
            let sum: f64 = p_prev.row(r).iter().sum();
            p_prev.row_mut(r).iter_mut().for_each(|v| *v /= sum);
        }
        let s = surprisal_vector(&p_prev, &x).unwrap();
        let got = gate_forward(&x, &h, &s, &params).unwrap();

        for gate in Gate::ALL {
            let w = params.gate(gate);
            let out = match gate {
                Gate::Forget => &got.f,
                Gate::Input => &got.i,
                Gate::Output => &got.o,
                Gate::Candidate => &got.u,
            };
            for r in 0..b {
                for j in 0..n {
                    let mut pre = w.bias.get(0, j);
                    for k in 0..m {
                        pre += w.input.get(j, k) * x.get(r, k) + w.feedback.get(j, k) * s.get(r, k);
                    }
                    for k in 0..n {
                        pre += w.recurrent.get(j, k) * h.get(r, k);
                    }
                    let expect = if gate == Gate::Candidate { pre.tanh() } else { sigmoid(pre) };
                    assert!((out.get(r, j) - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn cell_update_cases() {
        let mut rng = RngState::new(8);
        let rand = |rng: &mut RngState| {
            Matrix::<f64>::from_vec(2, 3, (0..6).map(|_| rng.uniform_in(-1.0, 1.0)).collect()).unwrap()
        };
        let c_prev = rand(&mut rng);
        let f = rand(&mut rng).map(sigmoid);
        let i = rand(&mut rng).map(sigmoid);
        let u = rand(&mut rng).map(|v| v.tanh());

        let frozen = cell_update(&c_prev, &f, &i, &u, &Matrix::zeros(2, 3)).unwrap();
        assert!(frozen.bits_eq(&c_prev));

        let ones = Matrix::filled(2, 3, 1.0);
        let full = cell_update(&c_prev, &ones, &i, &u, &ones).unwrap();
        let iu = i.zip_map(&u, "t", |a, b| a * b).unwrap();
        assert_eq!(full, iu);

        let zeros = Matrix::zeros(2, 3);
        let idle = cell_update(&c_prev, &zeros, &zeros, &u, &ones).unwrap();
        assert_eq!(idle, c_prev);
    }

    #[test]
    fn hidden_from_cell_cases() {
        let o = Matrix::<f64>::filled(1, 2, 0.7);
        let (_, h) = hidden_from_cell(&Matrix::zeros(1, 2), &o).unwrap();
        assert!(h.as_slice().iter().all(|&v| v == 0.0));
        let (_, h) = hidden_from_cell(&Matrix::filled(1, 2, 3.0), &Matrix::zeros(1, 2)).unwrap();
        assert!(h.as_slice().iter().all(|&v| v == 0.0));
        let (_, h) = hidden_from_cell(&Matrix::filled(1, 1, 1.0), &Matrix::filled(1, 1, 0.5)).unwrap();
        assert!((h.get(0, 0) - 0.5 * 1f64.tanh()).abs() < 1e-15);
        assert!((h.get(0, 0) - 0.380797).abs() < 1e-6);
    }

    #[test]
    fn project_outputs_cases() {
        let params = ModelParams::<f64>::zeros(3, 4, Variant::Standard, 0.05).unwrap();
        let h = Matrix::filled(2, 3, 0.3);
        let (_, p) = project_outputs(&h, &params).unwrap();
        assert!(p.as_slice().iter().all(|&v| v == 0.25));

        let params = {
            let mut rp = random_params(3, 4, Variant::Standard, 2);
            rp.weights.b_y = Matrix::from_rows(&[[0.1, -0.3, 0.2, 0.0]]);
            rp
        };
        let (_, p1) = project_outputs(&h, &params).unwrap();
        let mut shifted = params.clone();
        shifted.weights.b_y = shifted.weights.b_y.map(|v| v + 3.0);
        let (_, p2) = project_outputs(&h, &shifted).unwrap();
        for (a, b) in p1.as_slice().iter().zip(p2.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
        for r in 0..2 {
            assert!((p1.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bpc_conversion() {
        assert_eq!(cross_entropy_bpc(std::f64::consts::LN_2), 1.0);
        assert_eq!(cross_entropy_bpc(0.0), 0.0);
        assert!((cross_entropy_bpc(205f64.ln()) - 7.679480).abs() < 1e-6);
    }

    #[test]
    fn step_loss_uniform_logits() {
        let y = Matrix::<f64>::zeros(3, 7);
        let l = step_loss(&y, &[0, 3, 6]).unwrap();
        assert!((l - 7f64.ln()).abs() < 1e-15);
        assert!(step_loss(&y, &[7, 0, 0]).is_err());
    }

    #[test]
    fn reduction_equalities_single_step() {
        let (n, m) = (6, 5);
        let sf = random_params(n, m, Variant::SurprisalFeedback, 5);
        let mut adaptive = sf.clone();
        adaptive.variant = Variant::Adaptive;
        adaptive.tau = 1.0;
        let mut fixed = sf.clone();
        fixed.variant = Variant::FixedZoneout(1.0);

        let state = RecurrentState::initial(2, n, m);
        let mut rng = RngState::new(3);
        let a = forward_step(&state, &[1, 4], &[2, 0], &sf, &mut rng, MaskMode::Sampled).unwrap();
        for other in [&adaptive, &fixed] {
            let b = forward_step(&state, &[1, 4], &[2, 0], other, &mut rng, MaskMode::Sampled).unwrap();
            assert!(a.state.bits_eq(&b.state));
        }

        let mut std_params = sf.clone();
        std_params.variant = Variant::Standard;
        let mut sf_zero_v = sf.clone();
        for (g, s) in sf_zero_v.weights.gates.iter_mut().zip(std_params.weights.gates.iter_mut()) {
            g.feedback.fill(0.0);
            s.feedback.fill(0.0);
        }
        let a = forward_step(&state, &[1, 4], &[2, 0], &sf_zero_v, &mut rng, MaskMode::Sampled).unwrap();
        let b = forward_step(&state, &[1, 4], &[2, 0], &std_params, &mut rng, MaskMode::Sampled).unwrap();
        assert!(a.state.bits_eq(&b.state));
    }

    #[test]
    fn init_loss_near_uniform() {
        let m = 20;
        let mut params = ModelParams::<f64>::zeros(64, m, Variant::Adaptive, 0.05).unwrap();
        xavier_init(&mut params, &mut RngState::new(1));
        let mut rng = RngState::new(2);
        let mut state = RecurrentState::initial(8, 64, m);
        let mut total = 0.0;
        let steps = 50;
        let mut inputs: Vec<usize> = (0..8).map(|_| rng.below(m)).collect();
        for _ in 0..steps {
            let targets: Vec<usize> = (0..8).map(|_| rng.below(m)).collect();
            let out = forward_step(&state, &inputs, &targets, &params, &mut rng, MaskMode::Sampled).unwrap();
            total += out.loss_nats;
            state = out.state;
            inputs = targets;
        }
        let mean = total / steps as f64;
        let uniform = (m as f64).ln();
        assert!((mean - uniform).abs() < 0.1 * uniform, "{mean} vs {uniform}");
    }
}
