//! The GTI block: a GENConv branch and a global-attention branch over the
//! same input, summed. No extra residual or normalisation.

use std::sync::Arc;

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::graph::Csr;
use crate::layers::{
    attention_naive, attention_tiled, genconv_forward, AttentionKernel, AttentionParams, BlockMode, GenConvParams,
};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct GtiBlockParams<P> {
    pub gcn: GenConvParams<P>,
    pub attn: AttentionParams<P>,
}

impl<T: Real> GtiBlockParams<Tensor<T>> {
    pub fn init(d: usize, n_heads: usize, rng: &mut impl Rng) -> Result<Self> {
        let gcn = GenConvParams::init(d, rng);
        let attn = AttentionParams::init(d, n_heads, rng)?;
        Ok(GtiBlockParams { gcn, attn })
    }
}

impl<P> GtiBlockParams<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> GtiBlockParams<Q> {
        GtiBlockParams {
            gcn: self.gcn.map(f),
            attn: self.attn.map(f),
        }
    }

    pub fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a P)>) {
        self.gcn.named(&format!("{prefix}.gcn"), out);
        self.attn.named(&format!("{prefix}.attn"), out);
    }

    pub fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut P)>) {
        self.gcn.named_mut(&format!("{prefix}.gcn"), out);
        self.attn.named_mut(&format!("{prefix}.attn"), out);
    }
}

pub fn global_attention<T: Real>(
    tape: &mut Tape<T>,
    h: Var,
    p: &AttentionParams<Var>,
    kernel: AttentionKernel,
) -> Result<Var> {
    match kernel {
        AttentionKernel::Naive => attention_naive(tape, h, p),
        AttentionKernel::Tiled { block } => attention_tiled(tape, h, p, block),
    }
}

/// `H' = GCN(H, A) + Attn(H)`, or a single branch under an ablation mode.
pub fn gti_block_forward<T: Real>(
    tape: &mut Tape<T>,
    h: Var,
    adj: &Arc<Csr>,
    p: &GtiBlockParams<Var>,
    mode: BlockMode,
    kernel: AttentionKernel,
) -> Result<Var> {
    match mode {
        BlockMode::NoAttn => genconv_forward(tape, h, adj, &p.gcn),
        BlockMode::NoGcn => global_attention(tape, h, &p.attn, kernel),
        BlockMode::Full => {
            let g = genconv_forward(tape, h, adj, &p.gcn)?;
            let t = global_attention(tape, h, &p.attn, kernel)?;
            tape.add(g, t)
        }
    }
}
