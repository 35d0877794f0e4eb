//! Dense, highway and GRU building blocks over named parameters.

use maskvoice_autodiff::{Bound, ParamStore, Var};
use rand::Rng;

use crate::error::Result;
use crate::init::{insert_full, insert_normal};

pub(crate) fn init_dense<R: Rng + ?Sized>(
    store: &mut ParamStore,
    rng: &mut R,
    name: &str,
    input: usize,
    output: usize,
    bias: f64,
) {
    insert_normal(store, rng, &format!("{name}.w"), &[input, output], (1.0 / input as f64).sqrt());
    insert_full(store, &format!("{name}.b"), &[output], bias);
}

pub(crate) fn dense<'t>(p: &Bound<'t>, name: &str, x: Var<'t>) -> Result<Var<'t>> {
    Ok(x.linear(p.get(&format!("{name}.w"))?, p.get(&format!("{name}.b"))?)?)
}

pub(crate) fn init_highway<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, name: &str, width: usize) {
    init_dense(store, rng, &format!("{name}.h"), width, width, 0.0);
    // Negative gate bias starts the layer close to the identity.
    init_dense(store, rng, &format!("{name}.t"), width, width, -1.0);
}

/// `y = T * relu(x W_h + b_h) + (1 - T) * x` with `T = sigmoid(x W_t + b_t)`.
pub(crate) fn highway<'t>(p: &Bound<'t>, name: &str, x: Var<'t>) -> Result<Var<'t>> {
    let h = dense(p, &format!("{name}.h"), x)?.relu();
    let t = dense(p, &format!("{name}.t"), x)?.sigmoid();
    let carry = t.scale(-1.0).add_scalar(1.0);
    Ok(t.mul(h)?.add(carry.mul(x)?)?)
}

pub(crate) fn init_gru<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, name: &str, input: usize, hidden: usize) {
    init_dense(store, rng, &format!("{name}.x"), input, 3 * hidden, 0.0);
    init_dense(store, rng, &format!("{name}.h"), hidden, 3 * hidden, 0.0);
}

/// One GRU step on row vectors. `gx` is the precomputed input projection
/// `[1, 3H]` (update, reset, candidate), `h` the previous state `[1, H]`.
pub(crate) fn gru_step<'t>(p: &Bound<'t>, name: &str, gx: Var<'t>, h: Var<'t>) -> Result<Var<'t>> {
    let hidden = h.shape()[1];
    let gh = dense(p, &format!("{name}.h"), h)?;
    let z = gx.slice(1, 0, hidden)?.add(gh.slice(1, 0, hidden)?)?.sigmoid();
    let r = gx.slice(1, hidden, hidden)?.add(gh.slice(1, hidden, hidden)?)?.sigmoid();
    let n = gx
        .slice(1, 2 * hidden, hidden)?
        .add(r.mul(gh.slice(1, 2 * hidden, hidden)?)?)?
        .tanh();
    // h' = (1 - z) * n + z * h
    Ok(n.add(z.mul(h.sub(n)?)?)?)
}

/// Runs a GRU over the rows of `xs: [L, in]`, optionally right to left.
/// Returns the states in input order, `[L, H]`.
pub(crate) fn gru_sequence<'t>(
    p: &Bound<'t>,
    name: &str,
    xs: Var<'t>,
    h0: Var<'t>,
    reverse: bool,
) -> Result<Var<'t>> {
    let len = xs.shape()[0];
    let gx_all = dense(p, &format!("{name}.x"), xs)?;
    let mut h = h0;
    let mut states = Vec::with_capacity(len);
    for k in 0..len {
        let t = if reverse { len - 1 - k } else { k };
        h = gru_step(p, name, gx_all.slice(0, t, 1)?, h)?;
        states.push(h);
    }
    if reverse {
        states.reverse();
    }
    Ok(Var::concat(&states, 0)?)
}
