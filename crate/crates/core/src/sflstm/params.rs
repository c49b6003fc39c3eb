use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Real};

/// The four gated pre-activations of the cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Gate {
    /// `f`: scales how much of the old cell is erased when an update fires.
    Forget,
    /// `i`: write gate.
    Input,
    /// `o`: read gate.
    Output,
    /// `u`: candidate content.
    Candidate,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Forget, Gate::Input, Gate::Output, Gate::Candidate];

    pub fn label(self) -> &'static str {
        match self {
            Gate::Forget => "f",
            Gate::Input => "i",
            Gate::Output => "o",
            Gate::Candidate => "u",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Which member of the model family is being run.
///
/// `FixedZoneout(r)` uses a constant update probability `r`, so `r = 1`
/// never freezes a cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Variant {
    /// Plain LSTM: no surprisal feedback, every cell updates.
    Standard,
    /// Surprisal-feedback LSTM without zoneout.
    SurprisalFeedback,
    /// Surprisal feedback plus zoneout at a constant update probability.
    FixedZoneout(f64),
    /// Surprisal feedback plus surprisal-driven update probability.
    Adaptive,
}

impl Variant {
    pub fn uses_feedback(self) -> bool {
        !matches!(self, Variant::Standard)
    }

    pub fn validate(self) -> Result<()> {
        if let Variant::FixedZoneout(r) = self {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("--variant fixed rate must be in [0, 1], got {r}")));
            }
        }
        Ok(())
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Standard => f.write_str("standard"),
            Variant::SurprisalFeedback => f.write_str("sf"),
            Variant::FixedZoneout(r) => write!(f, "fixed:{r}"),
            Variant::Adaptive => f.write_str("adaptive"),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v =
            match s {
                "standard" => Variant::Standard,
                "sf" => Variant::SurprisalFeedback,
                "adaptive" => Variant::Adaptive,
                _ => match s.strip_prefix("fixed:") {
                    Some(rate) => Variant::FixedZoneout(rate.parse().map_err(|_| {
                        Error::Config(format!("--variant fixed rate {rate:?} is not a number"))
                    })?),
                    None => {
                        return Err(Error::Config(format!(
                            "--variant must be standard, sf, fixed:<r> or adaptive, got {s:?}"
                        )))
                    }
                },
            };
        v.validate()?;
        Ok(v)
    }
}

/// Weights feeding one gate.
#[derive(Clone, Debug, PartialEq)]
pub struct GateWeights<T> {
    /// N×M, applied to the one-hot input.
    pub input: Matrix<T>,
    /// N×N, applied to the previous hidden state.
    pub recurrent: Matrix<T>,
    /// N×M, applied to the surprisal vector.
    pub feedback: Matrix<T>,
    /// 1×N.
    pub bias: Matrix<T>,
}

impl<T: Real> GateWeights<T> {
    fn zeros(n: usize, m: usize) -> Self {
        Self {
            input: Matrix::zeros(n, m),
            recurrent: Matrix::zeros(n, n),
            feedback: Matrix::zeros(n, m),
            bias: Matrix::zeros(1, n),
        }
    }
}

/// Every trainable block. Also used as the gradient accumulator and as
/// optimizer state, so all three are shape-congruent by construction.
///
/// Block order (used by checkpoints and reports): for each gate in
/// `f, i, o, u`: `W`, `U`, `V`, `b`; then `W_y`, `b_y`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    pub gates: [GateWeights<T>; 4],
    /// M×N hidden-to-output projection.
    pub w_y: Matrix<T>,
    /// 1×M.
    pub b_y: Matrix<T>,
}

pub type GradientSet<T> = ParamSet<T>;

pub const BLOCK_COUNT: usize = 18;

impl<T: Real> ParamSet<T> {
    pub fn zeros(hidden: usize, vocab: usize) -> Self {
        Self {
            gates: std::array::from_fn(|_| GateWeights::zeros(hidden, vocab)),
            w_y: Matrix::zeros(vocab, hidden),
            b_y: Matrix::zeros(1, vocab),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.hidden(), self.vocab())
    }

    pub fn hidden(&self) -> usize {
        self.w_y.cols()
    }

    pub fn vocab(&self) -> usize {
        self.w_y.rows()
    }

    pub fn gate(&self, g: Gate) -> &GateWeights<T> {
        &self.gates[g.index()]
    }

    pub fn gate_mut(&mut self, g: Gate) -> &mut GateWeights<T> {
        &mut self.gates[g.index()]
    }

    pub fn block_names() -> Vec<String> {
        let mut names = Vec::with_capacity(BLOCK_COUNT);
        for g in Gate::ALL {
            for kind in ["W", "U", "V", "b"] {
                names.push(format!("{kind}_{}", g.label()));
            }
        }
        names.push("W_y".into());
        names.push("b_y".into());
        names
    }

    pub fn blocks(&self) -> Vec<&Matrix<T>> {
        let mut out = Vec::with_capacity(BLOCK_COUNT);
        for g in &self.gates {
            out.extend([&g.input, &g.recurrent, &g.feedback, &g.bias]);
        }
        out.push(&self.w_y);
        out.push(&self.b_y);
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut Matrix<T>> {
        let mut out = Vec::with_capacity(BLOCK_COUNT);
        for g in self.gates.iter_mut() {
            out.push(&mut g.input);
            out.push(&mut g.recurrent);
            out.push(&mut g.feedback);
            out.push(&mut g.bias);
        }
        out.push(&mut self.w_y);
        out.push(&mut self.b_y);
        out
    }

    /// True for the surprisal-feedback blocks `V_*`.
    pub fn is_feedback_block(index: usize) -> bool {
        index < 16 && index % 4 == 2
    }

    pub fn set_zero(&mut self) {
        for b in self.blocks_mut() {
            b.fill(T::zero());
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.blocks().iter().map(|b| b.sum_sq_f64()).sum::<f64>().sqrt()
    }

    pub fn is_congruent(&self, other: &Self) -> bool {
        self.blocks().iter().zip(other.blocks()).all(|(a, b)| a.shape() == b.shape())
    }

    pub fn scalar_count(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    /// FNV-1a over the bit patterns of every entry.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.blocks() {
            for v in b.as_slice() {
                for byte in v.as_f64().to_bits().to_le_bytes() {
                    h ^= byte as u64;
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }

    /// Converts to another precision.
    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        let conv = |m: &Matrix<T>| {
            Matrix::from_vec(m.rows(), m.cols(), m.as_slice().iter().map(|v| U::of(v.as_f64())).collect())
                .expect("same shape")
        };
        ParamSet {
            gates: std::array::from_fn(|i| {
                let g = &self.gates[i];
                GateWeights {
                    input: conv(&g.input),
                    recurrent: conv(&g.recurrent),
                    feedback: conv(&g.feedback),
                    bias: conv(&g.bias),
                }
            }),
            w_y: conv(&self.w_y),
            b_y: conv(&self.b_y),
        }
    }
}

/// Trainable weights plus the non-trained threshold and the variant.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub weights: ParamSet<T>,
    /// Minimum update probability of the adaptive rate.
    pub tau: f64,
    pub variant: Variant,
}

impl<T: Real> ModelParams<T> {
    pub fn zeros(hidden: usize, vocab: usize, variant: Variant, tau: f64) -> Result<Self> {
        if hidden == 0 || vocab == 0 {
            return Err(Error::Config(format!(
                "hidden ({hidden}) and vocabulary ({vocab}) sizes must be positive"
            )));
        }
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::Config(format!("--tau must be in [0, 1], got {tau}")));
        }
        variant.validate()?;
        Ok(Self { weights: ParamSet::zeros(hidden, vocab), tau, variant })
    }

    pub fn hidden(&self) -> usize {
        self.weights.hidden()
    }

    pub fn vocab(&self) -> usize {
        self.weights.vocab()
    }

    pub fn gate(&self, g: Gate) -> &GateWeights<T> {
        self.weights.gate(g)
    }

    pub fn is_finite(&self) -> bool {
        self.weights.blocks().iter().all(|b| b.is_finite())
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams { weights: self.weights.cast(), tau: self.tau, variant: self.variant }
    }
}
