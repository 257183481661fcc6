//! Noise separation: a depression encoder and a non-depression encoder of
//! identical shape, a decoder reconstructing `F` from both codes, and a
//! rectified linear regressor on the depression code.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{glorot, he, Params};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NsConfig {
    /// Encoder layer widths; the last one is the code width `d`.
    pub encoder_widths: Vec<usize>,
    /// Hidden decoder widths; a final layer maps back to `dim(F)`.
    pub decoder_widths: Vec<usize>,
}

impl Default for NsConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl NsConfig {
    pub fn toy() -> Self {
        Self {
            encoder_widths: vec![64, 32, 16, 8],
            decoder_widths: vec![16, 32],
        }
    }

    pub fn reference() -> Self {
        Self {
            encoder_widths: vec![1024, 512, 128, 32],
            decoder_widths: vec![128, 512],
        }
    }

    pub fn code_dim(&self) -> usize {
        *self.encoder_widths.last().unwrap_or(&0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_widths.is_empty() {
            return Err(Error::config("noise separation needs at least one encoder layer"));
        }
        if self.encoder_widths.iter().chain(&self.decoder_widths).any(|&w| w == 0) {
            return Err(Error::config("noise separation widths must be positive"));
        }
        Ok(())
    }
}

/// Output of the noise-separation stage for one slice.
#[derive(Debug, Clone, PartialEq)]
pub struct DisentangledPair {
    pub f_dep: Vec<f64>,
    pub f_non: Vec<f64>,
    pub f_dec: Vec<f64>,
    pub p_ns: f64,
}

fn init_stack(params: &mut Params, prefix: &str, input: usize, widths: &[usize], rng: &mut impl Rng) {
    let mut fan_in = input;
    for (i, &w) in widths.iter().enumerate() {
        let hidden = i + 1 < widths.len();
        let weight = if hidden {
            he(&[w, fan_in], fan_in, rng)
        } else {
            glorot(&[w, fan_in], fan_in, w, rng)
        };
        params.insert(format!("{prefix}.l{i}.w"), weight);
        params.insert(format!("{prefix}.l{i}.b"), Tensor::zeros(&[w]));
        fan_in = w;
    }
}

pub(crate) fn init(params: &mut Params, cfg: &NsConfig, input_dim: usize, label_mean: f64, rng: &mut impl Rng) {
    init_stack(params, "ns.dep", input_dim, &cfg.encoder_widths, rng);
    init_stack(params, "ns.non", input_dim, &cfg.encoder_widths, rng);
    let mut dec = cfg.decoder_widths.clone();
    dec.push(input_dim);
    init_stack(params, "ns.dec", 2 * cfg.code_dim(), &dec, rng);
    let d = cfg.code_dim();
    params.insert("ns.reg.w", glorot(&[1, d], d, 1, rng));
    params.insert("ns.reg.b", Tensor::vector(vec![label_mean]));
}

/// Linear layers `{prefix}.l0, l1, ...` with rectifiers between them; the
/// last layer is left linear.
fn stack(tape: &mut Tape, params: &Params, prefix: &str, layers: usize, mut x: Var) -> Result<Var> {
    for i in 0..layers {
        let w = tape.param(params, &format!("{prefix}.l{i}.w"))?;
        let b = tape.param(params, &format!("{prefix}.l{i}.b"))?;
        if tape.shape(w)[1] != tape.shape(x)[0] {
            return Err(Error::config(format!(
                "`{prefix}.l{i}` expects {} inputs, got {}",
                tape.shape(w)[1],
                tape.shape(x)[0]
            )));
        }
        x = tape.linear(x, w, b)?;
        if i + 1 < layers {
            x = tape.relu(x);
        }
        tape.check_finite(x, &format!("{prefix}.l{i}"))?;
    }
    Ok(x)
}

pub(crate) struct NsVars {
    pub f_dep: Var,
    pub f_non: Var,
    pub f_dec: Var,
    pub p_ns: Var,
}

pub(crate) fn forward(tape: &mut Tape, params: &Params, cfg: &NsConfig, f: Var) -> Result<NsVars> {
    let n = cfg.encoder_widths.len();
    let f_dep = stack(tape, params, "ns.dep", n, f)?;
    let f_non = stack(tape, params, "ns.non", n, f)?;
    let codes = tape.concat(&[f_dep, f_non]);
    let f_dec = stack(tape, params, "ns.dec", cfg.decoder_widths.len() + 1, codes)?;
    let w = tape.param(params, "ns.reg.w")?;
    let b = tape.param(params, "ns.reg.b")?;
    let p = tape.linear(f_dep, w, b)?;
    let p = tape.relu(p);
    tape.check_finite(p, "ns.reg")?;
    Ok(NsVars { f_dep, f_non, f_dec, p_ns: p })
}

/// Runs noise separation on one enhanced feature.
pub fn ns_forward(f: &[f64], params: &Params, cfg: &NsConfig) -> Result<DisentangledPair> {
    if f.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric { layer: "ns.input".into() });
    }
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(f.to_vec()));
    let out = forward(&mut tape, params, cfg, x)?;
    Ok(DisentangledPair {
        f_dep: tape.value(out.f_dep).data().to_vec(),
        f_non: tape.value(out.f_non).data().to_vec(),
        f_dec: tape.value(out.f_dec).data().to_vec(),
        p_ns: tape.value(out.p_ns).item(),
    })
}
