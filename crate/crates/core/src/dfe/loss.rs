//! The short-term loss suite.

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::corpus::SeverityCategory;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w1: 1.0,
            w2: 1.0,
            w3: 1.0,
            w4: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_ns: f64,
    pub l_mta: f64,
    pub l_sim: f64,
    pub l_dsim: f64,
    pub l_rec: f64,
    pub weights: LossWeights,
    pub l_short: f64,
}

/// Everything the loss needs from one batch member.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchMember {
    pub category: SeverityCategory,
    pub label: f64,
    pub p_ns: f64,
    pub p_mta: f64,
    pub f: Vec<f64>,
    pub f_dep: Vec<f64>,
    pub f_non: Vec<f64>,
    pub f_dec: Vec<f64>,
}

/// Per-member nodes on a tape.
#[derive(Debug, Clone, Copy)]
pub(crate) struct MemberVars {
    pub p_ns: Var,
    pub p_mta: Var,
    pub f: Var,
    pub f_dep: Var,
    pub f_non: Var,
    pub f_dec: Var,
}

pub(crate) struct LossVars {
    pub l_ns: Var,
    pub l_mta: Var,
    pub l_sim: Var,
    pub l_dsim: Var,
    pub l_rec: Var,
    pub l_short: Var,
}

impl LossVars {
    pub fn breakdown(&self, tape: &Tape, weights: LossWeights) -> LossBreakdown {
        let v = |x: Var| tape.value(x).item();
        LossBreakdown {
            l_ns: v(self.l_ns),
            l_mta: v(self.l_mta),
            l_sim: v(self.l_sim),
            l_dsim: v(self.l_dsim),
            l_rec: v(self.l_rec),
            weights,
            l_short: v(self.l_short),
        }
    }
}

fn sq_norm(tape: &mut Tape, a: Var) -> Var {
    let sq = tape.mul(a, a).expect("same shape");
    tape.sum(sq)
}

fn sum_all(tape: &mut Tape, terms: &[Var]) -> Result<Var> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    Ok(acc)
}

/// Records all loss terms on `tape`. `labels` are the regression targets in
/// the same units as the predictions.
pub(crate) fn record(tape: &mut Tape, members: &[MemberVars], labels: &[f64], weights: LossWeights) -> Result<LossVars> {
    let n = members.len();
    if n == 0 {
        return Err(Error::domain("loss needs a non-empty batch"));
    }
    if labels.len() != n {
        return Err(Error::domain(format!("{} labels for {n} batch members", labels.len())));
    }
    let nf = n as f64;

    let mut ns_terms = Vec::with_capacity(n);
    let mut mta_terms = Vec::with_capacity(n);
    let mut dsim_terms = Vec::with_capacity(n);
    let mut rec_terms = Vec::with_capacity(n);
    let j = tape.value(members[0].f).len();
    for (m, &g) in members.iter().zip(labels) {
        let target = tape.constant(Tensor::vector(vec![g]));
        let e = tape.sub(m.p_ns, target)?;
        ns_terms.push(sq_norm(tape, e));
        let e = tape.sub(m.p_mta, target)?;
        mta_terms.push(sq_norm(tape, e));

        if tape.shape(m.f_dep) != tape.shape(m.f_non) {
            return Err(Error::Shape("depression and non-depression codes differ in width".into()));
        }
        let prod = tape.mul(m.f_dep, m.f_non)?;
        let dot = tape.sum(prod);
        dsim_terms.push(tape.mul(dot, dot)?);

        if tape.value(m.f).len() != j {
            return Err(Error::Shape("enhanced features differ in width across the batch".into()));
        }
        let e = tape.sub(m.f_dec, m.f)?;
        rec_terms.push(sq_norm(tape, e));
    }

    let mut sim_terms = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let d = tape.sub(members[a].f_dep, members[b].f_dep)?;
            sim_terms.push(sq_norm(tape, d));
        }
    }
    let l_sim = if sim_terms.is_empty() {
        tape.constant(Tensor::scalar(0.0))
    } else {
        let s = sum_all(tape, &sim_terms)?;
        tape.scale(s, 1.0 / (nf * nf))
    };

    let s = sum_all(tape, &ns_terms)?;
    let l_ns = tape.scale(s, 1.0 / nf);
    let s = sum_all(tape, &mta_terms)?;
    let l_mta = tape.scale(s, 1.0 / nf);
    let s = sum_all(tape, &dsim_terms)?;
    let l_dsim = tape.scale(s, 1.0 / (nf * nf));
    let s = sum_all(tape, &rec_terms)?;
    let l_rec = tape.scale(s, 1.0 / (nf * j.max(1) as f64));

    let weighted = [
        l_ns,
        tape.scale(l_mta, weights.w1),
        tape.scale(l_sim, weights.w2),
        tape.scale(l_dsim, weights.w3),
        tape.scale(l_rec, weights.w4),
    ];
    let l_short = sum_all(tape, &weighted)?;
    Ok(LossVars {
        l_ns,
        l_mta,
        l_sim,
        l_dsim,
        l_rec,
        l_short,
    })
}

pub(crate) fn check_homogeneous(categories: impl IntoIterator<Item = SeverityCategory>) -> Result<()> {
    let mut it = categories.into_iter();
    let Some(first) = it.next() else {
        return Err(Error::domain("loss needs a non-empty batch"));
    };
    if let Some(other) = it.find(|&c| c != first) {
        return Err(Error::domain(format!(
            "batch mixes severity categories {first} and {other}"
        )));
    }
    Ok(())
}

/// Evaluates the loss suite on a category-homogeneous batch.
pub fn compute_losses(batch: &[BatchMember], weights: LossWeights) -> Result<LossBreakdown> {
    check_homogeneous(batch.iter().map(|m| m.category))?;
    let mut tape = Tape::new();
    let members: Vec<MemberVars> = batch
        .iter()
        .map(|m| MemberVars {
            p_ns: tape.leaf(Tensor::vector(vec![m.p_ns])),
            p_mta: tape.leaf(Tensor::vector(vec![m.p_mta])),
            f: tape.leaf(Tensor::vector(m.f.clone())),
            f_dep: tape.leaf(Tensor::vector(m.f_dep.clone())),
            f_non: tape.leaf(Tensor::vector(m.f_non.clone())),
            f_dec: tape.leaf(Tensor::vector(m.f_dec.clone())),
        })
        .collect();
    let labels: Vec<f64> = batch.iter().map(|m| m.label).collect();
    let vars = record(&mut tape, &members, &labels, weights)?;
    Ok(vars.breakdown(&tape, weights))
}
