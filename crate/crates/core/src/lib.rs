//! Solutions of the multiplicative Sincov equation `f(s,t)·f(t,u) = f(s,u)`
//! for `s <= t <= u`, allowing `f` to vanish.
//!
//! Every solution splits the time domain into disjoint interval blocks. Inside
//! a block `f(x,y) = d(x)⁻¹·d(y)` for a growth chart `d`, across blocks it is
//! zero, and on the diagonal outside blocks it is 0 or 1.

// `!(x > 0.0)` style tests are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibrate;
pub mod canonical;
pub mod cli;
pub mod codomain;
pub mod factor_table;
pub mod finance;
pub mod synth;
