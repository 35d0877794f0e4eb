//! Deep feedforward sequential memory layer.
//!
//! A per-frame expansion (`relu(x W_in + b)`) and linear projection
//! (`W_out`) followed by a memory block that mixes strided past and future
//! frames with learned per-channel taps:
//!
//! ```text
//! p_t = h_t + sum_{i=0..N1} a_i * h_{t - i s1} + sum_{j=1..N2} c_j * h_{t + j s2}
//! ```
//!
//! Taps that fall outside the sequence contribute zero. When input and output
//! widths agree the layer input is added back as a residual skip.

use maskvoice_autodiff::{Bound, ParamStore, Tensor, Var};
use rand::Rng;

use crate::error::{invalid, Result};
use crate::init::{insert_full, insert_normal};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DfsmnShape {
    pub input: usize,
    pub hidden: usize,
    pub channels: usize,
    pub lookback: usize,
    pub lookahead: usize,
    pub stride_back: usize,
    pub stride_ahead: usize,
}

impl DfsmnShape {
    pub fn validate(&self) -> Result<()> {
        if self.stride_back == 0 || self.stride_ahead == 0 {
            return Err(invalid("DFSMN strides must be >= 1"));
        }
        if self.input == 0 || self.hidden == 0 || self.channels == 0 {
            return Err(invalid("DFSMN widths must be positive"));
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.input * self.hidden
            + self.hidden
            + self.hidden * self.channels
            + (self.lookback + 1) * self.channels
            + self.lookahead * self.channels
    }

    pub fn has_residual(&self) -> bool {
        self.input == self.channels
    }
}

/// Parameter names of one layer under `prefix`.
pub struct DfsmnLayer {
    pub shape: DfsmnShape,
    pub prefix: String,
}

impl DfsmnLayer {
    pub fn new(prefix: impl Into<String>, shape: DfsmnShape) -> Result<Self> {
        shape.validate()?;
        Ok(DfsmnLayer {
            shape,
            prefix: prefix.into(),
        })
    }

    fn name(&self, leaf: &str) -> String {
        format!("{}.{leaf}", self.prefix)
    }

    /// Adds freshly initialized parameters to `store`.
    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        let s = self.shape;
        insert_normal(store, rng, &self.name("w_in"), &[s.input, s.hidden], (2.0 / s.input as f64).sqrt());
        insert_full(store, &self.name("b_in"), &[s.hidden], 0.0);
        insert_normal(store, rng, &self.name("w_out"), &[s.hidden, s.channels], (1.0 / s.hidden as f64).sqrt());
        insert_normal(store, rng, &self.name("lookback"), &[s.lookback + 1, s.channels], 0.1);
        if s.lookahead > 0 {
            insert_normal(store, rng, &self.name("lookahead"), &[s.lookahead, s.channels], 0.1);
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let s = self.shape;
        let hidden = x.linear(p.get(&self.name("w_in"))?, p.get(&self.name("b_in"))?)?.relu();
        let projected = hidden.matmul(p.get(&self.name("w_out"))?)?;
        let lookahead = if s.lookahead > 0 {
            Some(p.get(&self.name("lookahead"))?)
        } else {
            None
        };
        let memory = memory_block(
            projected,
            p.get(&self.name("lookback"))?,
            lookahead,
            s.stride_back,
            s.stride_ahead,
        )?;
        if s.has_residual() {
            Ok(memory.add(x)?)
        } else {
            Ok(memory)
        }
    }
}

/// `h` shifted by `offset` frames (positive = look back), zero filled.
fn shifted<'t>(h: Var<'t>, offset: isize) -> Result<Var<'t>> {
    let shape = h.shape();
    let (frames, ch) = (shape[0], shape[1]);
    let k = offset.unsigned_abs();
    if offset == 0 {
        return Ok(h);
    }
    let tape = h.tape();
    if k >= frames {
        return Ok(tape.constant(Tensor::zeros(&[frames, ch])));
    }
    let pad = tape.constant(Tensor::zeros(&[k, ch]));
    if offset > 0 {
        Ok(Var::concat(&[pad, h.slice(0, 0, frames - k)?], 0)?)
    } else {
        Ok(Var::concat(&[h.slice(0, k, frames - k)?, pad], 0)?)
    }
}

/// The DFSMN memory block over `h: [frames, channels]`.
///
/// `lookback: [N1 + 1, channels]` holds `a_0..a_N1`; `lookahead: [N2,
/// channels]` holds `c_1..c_N2`.
pub fn memory_block<'t>(
    h: Var<'t>,
    lookback: Var<'t>,
    lookahead: Option<Var<'t>>,
    stride_back: usize,
    stride_ahead: usize,
) -> Result<Var<'t>> {
    let ch = h.shape()[1];
    let lb = lookback.shape();
    if lb.len() != 2 || lb[1] != ch {
        return Err(invalid(format!("lookback taps {lb:?} do not match {ch} channels")));
    }
    let mut out = h;
    for i in 0..lb[0] {
        let tap = lookback.slice(0, i, 1)?.reshape(&[ch])?;
        let term = shifted(h, (i * stride_back) as isize)?.mul(tap)?;
        out = out.add(term)?;
    }
    if let Some(la) = lookahead {
        let s = la.shape();
        if s.len() != 2 || s[1] != ch {
            return Err(invalid(format!("lookahead taps {s:?} do not match {ch} channels")));
        }
        for j in 0..s[0] {
            let tap = la.slice(0, j, 1)?.reshape(&[ch])?;
            let term = shifted(h, -(((j + 1) * stride_ahead) as isize))?.mul(tap)?;
            out = out.add(term)?;
        }
    }
    Ok(out)
}
