//! Mutual temporal attention across the backbone's scales.
//!
//! Each scale first passes through its own non-local self-attention block.
//! Mutual-attention blocks then enhance scale `k` with the attention map it
//! shares with scale `k+1 (mod K)`; the enhanced vectors are concatenated
//! into `F`, and a linear auxiliary head regresses severity from `F`.

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::mtb::MultiScaleFeatures;
use crate::params::{glorot, Params};
use crate::tensor::Tensor;

/// `F`, the concatenation of the K enhanced per-scale vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EnhancedFeature {
    pub values: Vec<f64>,
}

pub(crate) fn init(params: &mut Params, k: usize, d: usize, label_mean: f64, rng: &mut impl Rng) {
    for i in 0..k {
        for name in ["theta", "phi", "g"] {
            params.insert(format!("mta.nl{i}.{name}"), glorot(&[d, d], d, d, rng));
        }
        for name in ["beta", "omega", "gamma"] {
            params.insert(format!("mta.mu{i}.{name}"), glorot(&[d, d], d, d, rng));
        }
    }
    params.insert("mta.head.w", glorot(&[1, k * d], k * d, 1, rng));
    params.insert("mta.head.b", Tensor::vector(vec![label_mean]));
}

fn project(tape: &mut Tape, params: &Params, name: &str, f: Var) -> Result<Var> {
    let w = tape.param(params, name)?;
    let d = tape.shape(f)[0];
    let col = tape.reshape(f, &[d, 1])?;
    tape.matmul(w, col)
}

/// `f` as a `[D × 1]` column and a `[1 × D]` row.
fn outer(tape: &mut Tape, col: Var, row_src: Var) -> Result<Var> {
    let d = tape.shape(row_src)[0];
    let row = tape.reshape(row_src, &[1, d])?;
    tape.matmul(col, row)
}

/// Non-local self-attention on one vector:
/// `f + softmax_rows((θf)(φf)ᵀ) · (g f)`.
pub(crate) fn non_local(tape: &mut Tape, params: &Params, prefix: &str, f: Var) -> Result<Var> {
    let d = tape.shape(f)[0];
    let q = project(tape, params, &format!("{prefix}.theta"), f)?;
    let key = project(tape, params, &format!("{prefix}.phi"), f)?;
    let key = tape.reshape(key, &[d])?;
    let att = outer(tape, q, key)?;
    let att = tape.softmax_rows(att)?;
    let v = project(tape, params, &format!("{prefix}.g"), f)?;
    let y = tape.matmul(att, v)?;
    let y = tape.reshape(y, &[d])?;
    tape.add(f, y)
}

/// Mutual attention of `f1` guided by `f2`.
///
/// Both inputs go through the shared projections `β` and `ω`; each yields a
/// `D×D` map `(βf)(ωf)ᵀ`, the two maps are combined as `A₁ᵀA₂`, and the
/// row-softmax of the result weights `γ f1`, which is added back to `f1`.
pub(crate) fn mutual(tape: &mut Tape, params: &Params, prefix: &str, f1: Var, f2: Var) -> Result<Var> {
    let d = tape.shape(f1)[0];
    if tape.shape(f2) != [d] {
        return Err(Error::Shape(format!(
            "mutual attention inputs {:?} and {:?}",
            tape.shape(f1),
            tape.shape(f2)
        )));
    }
    let mut maps = Vec::with_capacity(2);
    for f in [f1, f2] {
        let l1 = project(tape, params, &format!("{prefix}.beta"), f)?;
        let l2 = project(tape, params, &format!("{prefix}.omega"), f)?;
        let l2 = tape.reshape(l2, &[d])?;
        maps.push(outer(tape, l1, l2)?);
    }
    let a1t = tape.transpose(maps[0])?;
    let cross = tape.matmul(a1t, maps[1])?;
    let weights = tape.softmax_rows(cross)?;
    let value = project(tape, params, &format!("{prefix}.gamma"), f1)?;
    let y = tape.matmul(weights, value)?;
    let y = tape.reshape(y, &[d])?;
    tape.add(f1, y)
}

/// Records the whole attention stage; returns `(F, p_mta)`.
pub(crate) fn forward(tape: &mut Tape, params: &Params, per_scale: &[Var]) -> Result<(Var, Var)> {
    let k = per_scale.len();
    if k < 2 {
        return Err(Error::config("mutual attention needs at least two scales"));
    }
    let refined = per_scale
        .iter()
        .enumerate()
        .map(|(i, &f)| non_local(tape, params, &format!("mta.nl{i}"), f))
        .collect::<Result<Vec<_>>>()?;
    let mut enhanced = Vec::with_capacity(k);
    for i in 0..k {
        let out = mutual(tape, params, &format!("mta.mu{i}"), refined[i], refined[(i + 1) % k])?;
        tape.check_finite(out, &format!("mta.mu{i}"))?;
        enhanced.push(out);
    }
    let big_f = tape.concat(&enhanced);
    let w = tape.param(params, "mta.head.w")?;
    let b = tape.param(params, "mta.head.b")?;
    let p = tape.linear(big_f, w, b)?;
    Ok((big_f, p))
}

/// Mutual attention of two plain vectors with the block stored under
/// `prefix` (`prefix.beta`, `prefix.omega`, `prefix.gamma`).
pub fn mutual_attention(f1: &[f64], f2: &[f64], params: &Params, prefix: &str) -> Result<Vec<f64>> {
    if f1.len() != f2.len() {
        return Err(Error::domain(format!(
            "mutual attention needs equal dimensions, got {} and {}",
            f1.len(),
            f2.len()
        )));
    }
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::vector(f1.to_vec()));
    let b = tape.leaf(Tensor::vector(f2.to_vec()));
    let out = mutual(&mut tape, params, prefix, a, b)?;
    Ok(tape.value(out).data().to_vec())
}

/// Runs the attention stage on backbone features; returns `F` and the
/// auxiliary prediction.
pub fn mta_forward(features: &MultiScaleFeatures, params: &Params) -> Result<(EnhancedFeature, f64)> {
    if features.per_scale.len() < 2 {
        return Err(Error::config("mutual attention needs at least two scales"));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = features
        .per_scale
        .iter()
        .map(|f| tape.leaf(Tensor::vector(f.clone())))
        .collect();
    let (f, p) = forward(&mut tape, params, &vars)?;
    Ok((
        EnhancedFeature {
            values: tape.value(f).data().to_vec(),
        },
        tape.value(p).item(),
    ))
}
