use crate::error::{Error, Result};
use crate::numerics::{accumulate_sparse_tn, gemm, Matrix, Real};

use super::forward::StepCache;
use super::params::{Gate, GradientSet, ModelParams, Variant};

/// Backpropagates one step of the cell.
///
/// `d_h_next` and `d_c_next` are the gradients arriving at this step's `h`
/// and `c` from the step after it. Parameter gradients are accumulated into
/// `grads`; the gradients with respect to the previous `h` and `c` are
/// returned.
///
/// The surprisal vector, the update rate and the mask are treated as
/// constants, so nothing flows back into the previous prediction or through
/// the rate computation. The loss is the batch mean of the cross-entropy
/// against `targets`.
pub fn backward_step<T: Real>(
    cache: &StepCache<T>,
    targets: &[usize],
    params: &ModelParams<T>,
    d_h_next: &Matrix<T>,
    d_c_next: &Matrix<T>,
    grads: &mut GradientSet<T>,
) -> Result<(Matrix<T>, Matrix<T>)> {
    let (batch, n) = cache.c.shape();
    let m = cache.p.cols();
    if d_h_next.shape() != (batch, n) {
        return Err(Error::shape("d_h_next", d_h_next.shape(), (batch, n)));
    }
    if d_c_next.shape() != (batch, n) {
        return Err(Error::shape("d_c_next", d_c_next.shape(), (batch, n)));
    }
    if targets.len() != batch {
        return Err(Error::shape("targets", (targets.len(), 1), (batch, m)));
    }
    if !grads.is_congruent(&params.weights) {
        return Err(Error::shape("gradient set", grads.w_y.shape(), params.weights.w_y.shape()));
    }

    // softmax + cross-entropy: dy = (p − onehot(target)) / B
    let scale = T::one() / T::of(batch as f64);
    let mut dy = cache.p.clone();
    for (r, &t) in targets.iter().enumerate() {
        if t >= m {
            return Err(Error::Symbol { row: r, symbol: t, vocab: m });
        }
        let row = dy.row_mut(r);
        row[t] -= T::one();
        row.iter_mut().for_each(|v| *v *= scale);
    }

    gemm(T::one(), &dy, true, &cache.h, false, T::one(), &mut grads.w_y)?;
    add_column_sums(&dy, &mut grads.b_y);

    let mut dh = d_h_next.clone();
    gemm(T::one(), &dy, false, &params.weights.w_y, false, T::one(), &mut dh)?;

    let g = &cache.gates;
    let len = batch * n;
    let mut d_pre_f = Matrix::zeros(batch, n);
    let mut d_pre_i = Matrix::zeros(batch, n);
    let mut d_pre_o = Matrix::zeros(batch, n);
    let mut d_pre_u = Matrix::zeros(batch, n);
    let mut d_c_prev = Matrix::zeros(batch, n);
    {
        let (f, i, o, u) = (g.f.as_slice(), g.i.as_slice(), g.o.as_slice(), g.u.as_slice());
        let (z, c_prev, c_hat) = (cache.mask.as_slice(), cache.c_prev.as_slice(), cache.c_hat.as_slice());
        let (dh, dcn) = (dh.as_slice(), d_c_next.as_slice());
        let (pf, pi, po, pu, dcp) = (
            d_pre_f.as_mut_slice(),
            d_pre_i.as_mut_slice(),
            d_pre_o.as_mut_slice(),
            d_pre_u.as_mut_slice(),
            d_c_prev.as_mut_slice(),
        );
        let one = T::one();
        for k in 0..len {
            po[k] = dh[k] * c_hat[k] * o[k] * (one - o[k]);
            let dc = dh[k] * o[k] * (one - c_hat[k] * c_hat[k]) + dcn[k];
            dcp[k] = dc * (one - f[k] * z[k]);
            let dcz = dc * z[k];
            pf[k] = -dcz * c_prev[k] * f[k] * (one - f[k]);
            pi[k] = dcz * u[k] * i[k] * (one - i[k]);
            pu[k] = dcz * i[k] * (one - u[k] * u[k]);
        }
    }

    let feedback_trainable = !matches!(params.variant, Variant::Standard);
    let mut d_h_prev = Matrix::zeros(batch, n);
    for (gate, d_pre) in Gate::ALL.into_iter().zip([&d_pre_f, &d_pre_i, &d_pre_o, &d_pre_u]) {
        let w = params.gate(gate);
        let acc = grads.gate_mut(gate);
        accumulate_sparse_tn(d_pre, &cache.x, &mut acc.input)?;
        gemm(T::one(), d_pre, true, &cache.h_prev, false, T::one(), &mut acc.recurrent)?;
        if feedback_trainable {
            accumulate_sparse_tn(d_pre, &cache.surprisal, &mut acc.feedback)?;
        }
        add_column_sums(d_pre, &mut acc.bias);
        gemm(T::one(), d_pre, false, &w.recurrent, false, T::one(), &mut d_h_prev)?;
    }

    Ok((d_h_prev, d_c_prev))
}

fn add_column_sums<T: Real>(m: &Matrix<T>, out: &mut Matrix<T>) {
    for r in 0..m.rows() {
        for (o, &v) in out.as_mut_slice().iter_mut().zip(m.row(r)) {
            *o += v;
        }
    }
}
