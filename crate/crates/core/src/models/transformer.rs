use ifthen_tensor::{Graph, InitScheme, ParamId, ParamStore, Scalar, Tensor, Var};

use super::attention::causal_bias;
use super::{AttentionKind, AttentionSite, DecoderState, EncoderMemory, SourceBatch};
use crate::error::Result;

const LAYER_NORM_EPS: f64 = 1e-6;
const EMBEDDING_BOUND: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct TransformerSpec {
    pub layers: usize,
    pub heads: usize,
    pub model_size: usize,
    pub feed_forward_size: usize,
    pub dropout: f64,
    pub attention: AttentionKind,
}

fn xavier(input: usize, output: usize) -> InitScheme {
    InitScheme::Uniform {
        bound: (6.0 / (input + output) as f64).sqrt(),
    }
}

#[derive(Clone, Debug)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    fn new<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, input: usize, output: usize) -> Result<Self> {
        Ok(Self {
            w: store.add(&format!("{prefix}.weight"), &[input, output], xavier(input, output))?,
            b: store.add(&format!("{prefix}.bias"), &[output], InitScheme::Constant { value: 0.0 })?,
        })
    }

    fn apply<'g, T: Scalar>(&self, g: &'g Graph<T>, store: &ParamStore<T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        Ok(x.matmul(g.param(store, self.w))?.add(g.param(store, self.b))?)
    }
}

#[derive(Clone, Debug)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

impl Norm {
    fn new<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, size: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(&format!("{prefix}.gamma"), &[size], InitScheme::Constant { value: 1.0 })?,
            beta: store.add(&format!("{prefix}.beta"), &[size], InitScheme::Constant { value: 0.0 })?,
        })
    }

    fn apply<'g, T: Scalar>(&self, g: &'g Graph<T>, store: &ParamStore<T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        Ok(x.layer_norm(g.param(store, self.gamma), g.param(store, self.beta), LAYER_NORM_EPS)?)
    }
}

/// Additive scorer per head: `v^T tanh(q + k)` over already-projected heads.
#[derive(Clone, Debug)]
struct AdditiveScore {
    v: ParamId,
}

#[derive(Clone, Debug)]
struct MultiHead {
    query: Linear,
    key: Linear,
    value: Linear,
    out: Linear,
    additive: Option<AdditiveScore>,
}

impl MultiHead {
    fn new<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, spec: &TransformerSpec) -> Result<Self> {
        let d = spec.model_size;
        let additive = match spec.attention {
            AttentionKind::ScaledDot => None,
            AttentionKind::Additive => {
                let dh = d / spec.heads;
                Some(AdditiveScore {
                    v: store.add(&format!("{prefix}.score"), &[dh, 1], xavier(dh, 1))?,
                })
            }
        };
        Ok(Self {
            query: Linear::new(store, &format!("{prefix}.query"), d, d)?,
            key: Linear::new(store, &format!("{prefix}.key"), d, d)?,
            value: Linear::new(store, &format!("{prefix}.value"), d, d)?,
            out: Linear::new(store, &format!("{prefix}.out"), d, d)?,
            additive,
        })
    }

    /// `queries [b, q, d]` over `keys [b, s, d]`; `bias` broadcasts to `[b, heads, q, s]`.
    #[allow(clippy::too_many_arguments)]
    fn apply<'g, T: Scalar>(
        &self,
        g: &'g Graph<T>,
        store: &ParamStore<T>,
        spec: &TransformerSpec,
        queries: Var<'g, T>,
        keys: Var<'g, T>,
        bias: Var<'g, T>,
    ) -> Result<(Var<'g, T>, Var<'g, T>)> {
        let (qs, ks) = (queries.shape(), keys.shape());
        let (b, tq, s, d, nh) = (qs[0], qs[1], ks[1], spec.model_size, spec.heads);
        let dh = d / nh;
        let split = |x: Var<'g, T>, len: usize| x.reshape(&[b, len, nh, dh])?.permute(&[0, 2, 1, 3]);
        let q = split(self.query.apply(g, store, queries)?, tq)?;
        let k = split(self.key.apply(g, store, keys)?, s)?;
        let v = split(self.value.apply(g, store, keys)?, s)?;
        let scores = match &self.additive {
            None => q.matmul(k.transpose(2, 3)?)?.scale(1.0 / (dh as f64).sqrt()),
            Some(score) => {
                let qe = q.reshape(&[b, nh, tq, 1, dh])?;
                let ke = k.reshape(&[b, nh, 1, s, dh])?;
                qe.add(ke)?
                    .tanh()
                    .matmul(g.param(store, score.v))?
                    .reshape(&[b, nh, tq, s])?
            }
        };
        let (context, weights) = {
            let axis = 3;
            let w = scores.add(bias)?.softmax(axis)?;
            (w.dropout(spec.dropout)?.matmul(v)?, w)
        };
        let merged = context.permute(&[0, 2, 1, 3])?.reshape(&[b, tq, d])?;
        Ok((self.out.apply(g, store, merged)?, weights))
    }
}

#[derive(Clone, Debug)]
struct FeedForward {
    inner: Linear,
    outer: Linear,
}

impl FeedForward {
    fn apply<'g, T: Scalar>(
        &self,
        g: &'g Graph<T>,
        store: &ParamStore<T>,
        x: Var<'g, T>,
        dropout: f64,
    ) -> Result<Var<'g, T>> {
        let hidden = self.inner.apply(g, store, x)?.relu().dropout(dropout)?;
        self.outer.apply(g, store, hidden)
    }
}

#[derive(Clone, Debug)]
struct EncoderLayer {
    attn_norm: Norm,
    attn: MultiHead,
    ff_norm: Norm,
    ff: FeedForward,
}

#[derive(Clone, Debug)]
struct DecoderLayer {
    self_norm: Norm,
    self_attn: MultiHead,
    cross_norm: Norm,
    cross_attn: MultiHead,
    ff_norm: Norm,
    ff: FeedForward,
}

/// Pre-norm Transformer encoder-decoder with sinusoidal positions.
#[derive(Clone, Debug)]
pub(crate) struct TransformerNet {
    spec: TransformerSpec,
    source_embedding: ParamId,
    target_embedding: ParamId,
    encoder: Vec<EncoderLayer>,
    encoder_norm: Norm,
    decoder: Vec<DecoderLayer>,
    decoder_norm: Norm,
    output: Linear,
}

/// `pe[p, 2i] = sin(p / 10000^(2i/d))`, `pe[p, 2i+1] = cos(...)`.
pub fn sinusoidal_positions<T: Scalar>(len: usize, d: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(len * d);
    for p in 0..len {
        for j in 0..d {
            let rate = 10000f64.powf((j - j % 2) as f64 / d as f64);
            let angle = p as f64 / rate;
            data.push(T::from_f64_lossy(if j % 2 == 0 { angle.sin() } else { angle.cos() }));
        }
    }
    Tensor::new(vec![len, d], data).expect("position table")
}

impl TransformerNet {
    pub fn new<T: Scalar>(
        spec: TransformerSpec,
        store: &mut ParamStore<T>,
        source_vocab: usize,
        target_vocab: usize,
    ) -> Result<Self> {
        let d = spec.model_size;
        let emb = InitScheme::Uniform { bound: EMBEDDING_BOUND };
        let source_embedding = store.add("source_embedding", &[source_vocab, d], emb)?;
        let target_embedding = store.add("target_embedding", &[target_vocab, d], emb)?;
        let ff = |store: &mut ParamStore<T>, prefix: &str| -> Result<FeedForward> {
            Ok(FeedForward {
                inner: Linear::new(store, &format!("{prefix}.inner"), d, spec.feed_forward_size)?,
                outer: Linear::new(store, &format!("{prefix}.outer"), spec.feed_forward_size, d)?,
            })
        };
        let mut encoder = Vec::with_capacity(spec.layers);
        for l in 0..spec.layers {
            let p = format!("encoder.{l}");
            encoder.push(EncoderLayer {
                attn_norm: Norm::new(store, &format!("{p}.attention_norm"), d)?,
                attn: MultiHead::new(store, &format!("{p}.attention"), &spec)?,
                ff_norm: Norm::new(store, &format!("{p}.feed_forward_norm"), d)?,
                ff: ff(store, &format!("{p}.feed_forward"))?,
            });
        }
        let encoder_norm = Norm::new(store, "encoder.norm", d)?;
        let mut decoder = Vec::with_capacity(spec.layers);
        for l in 0..spec.layers {
            let p = format!("decoder.{l}");
            decoder.push(DecoderLayer {
                self_norm: Norm::new(store, &format!("{p}.self_attention_norm"), d)?,
                self_attn: MultiHead::new(store, &format!("{p}.self_attention"), &spec)?,
                cross_norm: Norm::new(store, &format!("{p}.cross_attention_norm"), d)?,
                cross_attn: MultiHead::new(store, &format!("{p}.cross_attention"), &spec)?,
                ff_norm: Norm::new(store, &format!("{p}.feed_forward_norm"), d)?,
                ff: ff(store, &format!("{p}.feed_forward"))?,
            });
        }
        let decoder_norm = Norm::new(store, "decoder.norm", d)?;
        let output = Linear::new(store, "output", d, target_vocab)?;
        Ok(Self {
            spec,
            source_embedding,
            target_embedding,
            encoder,
            encoder_norm,
            decoder,
            decoder_norm,
            output,
        })
    }

    pub fn output_param(&self) -> (ParamId, ParamId) {
        (self.output.w, self.output.b)
    }

    fn embed<'g, T: Scalar>(
        &self,
        g: &'g Graph<T>,
        store: &ParamStore<T>,
        table: ParamId,
        ids: &[usize],
        b: usize,
        len: usize,
    ) -> Result<Var<'g, T>> {
        let d = self.spec.model_size;
        let x = g
            .param(store, table)
            .embedding(ids, &[b, len])?
            .scale((d as f64).sqrt());
        let pe = g.constant(sinusoidal_positions(len, d));
        Ok(x.add(pe)?.dropout(self.spec.dropout)?)
    }

    pub fn encode<'g, T: Scalar>(
        &self,
        g: &'g Graph<T>,
        store: &ParamStore<T>,
        batch: &SourceBatch,
    ) -> Result<EncoderMemory<'g, T>> {
        let (b, s, p) = (batch.batch(), batch.len(), self.spec.dropout);
        let mut x = self.embed(g, store, self.source_embedding, batch.ids(), b, s)?;
        let bias = g.constant(batch.mask().bias(Some(self.spec.heads), s));
        let mut weights = Vec::with_capacity(self.encoder.len());
        for layer in &self.encoder {
            let y = layer.attn_norm.apply(g, store, x)?;
            let (y, w) = layer.attn.apply(g, store, &self.spec, y, y, bias)?;
            weights.push(w);
            x = x.add(y.dropout(p)?)?;
            let y = layer.ff_norm.apply(g, store, x)?;
            x = x.add(layer.ff.apply(g, store, y, p)?.dropout(p)?)?;
        }
        let states = self.encoder_norm.apply(g, store, x)?;
        let memory = EncoderMemory::new(states, batch.mask().clone(), None, Vec::new());
        for (layer, w) in weights.into_iter().enumerate() {
            memory.record(AttentionSite::EncoderSelf { layer }, w);
        }
        Ok(memory)
    }

    /// Logits `[b, t, vocab]` for a target prefix `[b, t]` under a causal mask.
    pub fn decode_prefix<'g, T: Scalar>(
        &self,
        g: &'g Graph<T>,
        store: &ParamStore<T>,
        prefix: &[usize],
        b: usize,
        memory: &EncoderMemory<'g, T>,
    ) -> Result<Var<'g, T>> {
        let t = prefix.len() / b;
        let p = self.spec.dropout;
        let mut x = self.embed(g, store, self.target_embedding, prefix, b, t)?;
        let causal = g.constant(causal_bias(t));
        let cross_bias = g.constant(memory.mask().bias(Some(self.spec.heads), t));
        for (layer, block) in self.decoder.iter().enumerate() {
            let y = block.self_norm.apply(g, store, x)?;
            let (y, w) = block.self_attn.apply(g, store, &self.spec, y, y, causal)?;
            memory.record(AttentionSite::DecoderSelf { layer }, w);
            x = x.add(y.dropout(p)?)?;
            let y = block.cross_norm.apply(g, store, x)?;
            let (y, w) = block
                .cross_attn
                .apply(g, store, &self.spec, y, memory.states(), cross_bias)?;
            memory.record(AttentionSite::Cross { layer }, w);
            x = x.add(y.dropout(p)?)?;
            let y = block.ff_norm.apply(g, store, x)?;
            x = x.add(block.ff.apply(g, store, y, p)?.dropout(p)?)?;
        }
        let x = self.decoder_norm.apply(g, store, x)?;
        self.output.apply(g, store, x)
    }

    pub fn decode_step<'g, T: Scalar>(
        &self,
        g: &'g Graph<T>,
        store: &ParamStore<T>,
        prev: &[usize],
        prefix: &[Vec<usize>],
        memory: &EncoderMemory<'g, T>,
    ) -> Result<(Var<'g, T>, DecoderState<'g, T>)> {
        let b = prev.len();
        let rows: Vec<Vec<usize>> = prefix
            .iter()
            .zip(prev)
            .map(|(row, &tok)| row.iter().copied().chain(std::iter::once(tok)).collect())
            .collect();
        let t = rows[0].len();
        let flat: Vec<usize> = rows.iter().flatten().copied().collect();
        let logits = self.decode_prefix(g, store, &flat, b, memory)?;
        let vocab = logits.shape()[2];
        let last = logits.slice(1, t - 1, t)?.reshape(&[b, vocab])?;
        Ok((last, DecoderState::Transformer { prefix: rows }))
    }
}

