//! Per-step recordings of one batch lane: gate activations, cell and
//! hidden state, the update mask and rate, and how far the cell moved.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::numerics::{Real, RngState};
use crate::sflstm::{advance, MaskMode, MaskSource, ModelParams, RecurrentState, StepCache};

pub const DEFAULT_WINDOW: usize = 100;

/// One lane's slice of one step.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    /// Step index since the buffer was created.
    pub t: usize,
    pub f: Vec<f64>,
    pub i: Vec<f64>,
    pub o: Vec<f64>,
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    /// Update mask `Z`.
    pub mask: Vec<f64>,
    /// Update probability `z`.
    pub rate: Vec<f64>,
    /// `‖c_t − c_{t−1}‖₁ / N`.
    pub cell_change: f64,
}

/// Ring buffer holding the most recent `window` steps of one lane.
#[derive(Clone, Debug)]
pub struct TraceBuffer {
    window: usize,
    lane: usize,
    next_t: usize,
    records: VecDeque<TraceRecord>,
}

fn lane_row<T: Real>(m: &crate::numerics::Matrix<T>, lane: usize) -> Vec<f64> {
    m.row(lane).iter().map(|v| v.as_f64()).collect()
}

impl TraceBuffer {
    pub fn new(window: usize, lane: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::Trace("window must be positive".into()));
        }
        Ok(Self { window, lane, next_t: 0, records: VecDeque::with_capacity(window) })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn lane(&self) -> usize {
        self.lane
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter()
    }

    /// Copies the traced lane out of `cache`, dropping the oldest record
    /// once the window is full.
    pub fn record_step<T: Real>(&mut self, cache: &StepCache<T>) -> Result<()> {
        let batch = cache.c.rows();
        if self.lane >= batch {
            return Err(Error::Trace(format!("lane {} out of range for batch of {batch}", self.lane)));
        }
        let c = lane_row(&cache.c, self.lane);
        let c_prev = lane_row(&cache.c_prev, self.lane);
        let cell_change =
            c.iter().zip(&c_prev).map(|(a, b)| (a - b).abs()).sum::<f64>() / c.len().max(1) as f64;
        if self.records.len() == self.window {
            self.records.pop_front();
        }
        self.records.push_back(TraceRecord {
            t: self.next_t,
            f: lane_row(&cache.gates.f, self.lane),
            i: lane_row(&cache.gates.i, self.lane),
            o: lane_row(&cache.gates.o, self.lane),
            h: lane_row(&cache.h, self.lane),
            c,
            mask: lane_row(&cache.mask, self.lane),
            rate: lane_row(&cache.rate, self.lane),
            cell_change,
        });
        self.next_t += 1;
        Ok(())
    }
}

/// Per-step mean absolute cell change and its mean over the window.
#[derive(Clone, Debug, PartialEq)]
pub struct CellChangeStats {
    pub per_step: Vec<f64>,
    pub mean: f64,
}

/// `None` until at least two steps are recorded.
pub fn cell_change_stats(buffer: &TraceBuffer) -> Option<CellChangeStats> {
    if buffer.len() < 2 {
        return None;
    }
    let per_step: Vec<f64> = buffer.records().map(|r| r.cell_change).collect();
    let mean = per_step.iter().sum::<f64>() / per_step.len() as f64;
    Some(CellChangeStats { per_step, mean })
}

fn write_csv(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Trace(format!("cannot write {}: {e}", path.display())))
}

fn nonempty(buffer: &TraceBuffer) -> Result<()> {
    if buffer.is_empty() {
        return Err(Error::Trace("nothing recorded".into()));
    }
    Ok(())
}

/// `t,cell,i,o,f,Z`, one row per step and cell. Mapping i, o and f to red,
/// green and blue gives the usual write/read/erase composite.
pub fn export_gate_map(buffer: &TraceBuffer, path: &Path) -> Result<()> {
    nonempty(buffer)?;
    let mut out = String::from("t,cell,i,o,f,Z\n");
    for r in buffer.records() {
        for k in 0..r.c.len() {
            let _ = writeln!(out, "{},{k},{},{},{},{}", r.t, r.i[k], r.o[k], r.f[k], r.mask[k]);
        }
    }
    write_csv(path, &out)
}

/// `t,cell,h,c,z`.
pub fn export_states(buffer: &TraceBuffer, path: &Path) -> Result<()> {
    nonempty(buffer)?;
    let mut out = String::from("t,cell,h,c,z\n");
    for r in buffer.records() {
        for k in 0..r.c.len() {
            let _ = writeln!(out, "{},{k},{},{},{}", r.t, r.h[k], r.c[k], r.rate[k]);
        }
    }
    write_csv(path, &out)
}

/// `t,l1`, followed by a `mean` row.
pub fn export_cell_change(buffer: &TraceBuffer, path: &Path) -> Result<()> {
    nonempty(buffer)?;
    let mut out = String::from("t,l1\n");
    for r in buffer.records() {
        let _ = writeln!(out, "{},{}", r.t, r.cell_change);
    }
    let mean = buffer.records().map(|r| r.cell_change).sum::<f64>() / buffer.len() as f64;
    let _ = writeln!(out, "mean,{mean}");
    write_csv(path, &out)
}

/// Writes `{run_id}_gates.csv`, `{run_id}_states.csv` and
/// `{run_id}_cellchange.csv` into `dir`.
pub fn export_all(buffer: &TraceBuffer, dir: &Path, run_id: &str) -> Result<Vec<PathBuf>> {
    let paths = [
        dir.join(format!("{run_id}_gates.csv")),
        dir.join(format!("{run_id}_states.csv")),
        dir.join(format!("{run_id}_cellchange.csv")),
    ];
    export_gate_map(buffer, &paths[0])?;
    export_states(buffer, &paths[1])?;
    export_cell_change(buffer, &paths[2])?;
    Ok(paths.to_vec())
}

/// Runs a single lane over `symbols` from a fresh state, recording every
/// step. The buffer keeps the last `window` of them.
pub fn trace_sequence<T: Real>(
    params: &ModelParams<T>,
    symbols: &[u8],
    window: usize,
    mode: MaskMode,
    seed: u64,
) -> Result<TraceBuffer> {
    let mut buffer = TraceBuffer::new(window, 0)?;
    let mut rng = RngState::with_stream(seed, crate::training::trainer::EVAL_STREAM);
    let mut state = RecurrentState::initial(1, params.hidden(), params.vocab());
    for &s in symbols {
        let source = match mode {
            MaskMode::Sampled => MaskSource::Sampled(&mut rng),
            MaskMode::Expected => MaskSource::Expected,
        };
        let (next, cache) = advance(&state, &[s as usize], params, source, None)?;
        buffer.record_step(&cache)?;
        state = next;
    }
    Ok(buffer)
}
