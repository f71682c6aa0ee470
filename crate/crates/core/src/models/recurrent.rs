use ifthen_tensor::{lstm_cell_step, Graph, InitScheme, ParamId, ParamStore, Scalar, Tensor, Var};

use super::attention::masked_attention;
use super::{AttentionSite, DecoderState, EncoderMemory, SourceBatch};
use crate::error::Result;

const EMBEDDING_BOUND: f64 = 0.1;
const FORGET_BIAS: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct RecurrentSpec {
    pub embedding: usize,
    pub hidden: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub bidirectional: bool,
    pub dropout: f64,
}

#[derive(Clone, Debug)]
struct Cell {
    w_ih: ParamId,
    w_hh: ParamId,
    bias: ParamId,
}

impl Cell {
    fn new<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, input: usize, hidden: usize) -> Result<Self> {
        let weights = InitScheme::FanIn { fan_in: hidden };
        Ok(Self {
            w_ih: store.add(&format!("{prefix}.w_ih"), &[input, 4 * hidden], weights)?,
            w_hh: store.add(&format!("{prefix}.w_hh"), &[hidden, 4 * hidden], weights)?,
            bias: store.add(
                &format!("{prefix}.bias"),
                &[4 * hidden],
                InitScheme::ForgetGateBias {
                    hidden,
                    value: FORGET_BIAS,
                },
            )?,
        })
    }

    fn step<'g, T: Scalar>(
        &self,
        g: &'g Graph<T>,
        store: &ParamStore<T>,
        x: Var<'g, T>,
        h: Var<'g, T>,
        c: Var<'g, T>,
    ) -> Result<(Var<'g, T>, Var<'g, T>)> {
        Ok(lstm_cell_step(
            x,
            h,
            c,
            g.param(store, self.w_ih),
            g.param(store, self.w_hh),
            g.param(store, self.bias),
        )?)
    }
}

#[derive(Clone, Debug)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    fn new<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, input: usize, output: usize) -> Result<Self> {
        let scheme = InitScheme::FanIn { fan_in: input };
        Ok(Self {
            w: store.add(&format!("{prefix}.weight"), &[input, output], scheme)?,
            b: store.add(&format!("{prefix}.bias"), &[output], scheme)?,
        })
    }

    fn apply<'g, T: Scalar>(&self, g: &'g Graph<T>, store: &ParamStore<T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        Ok(x.matmul(g.param(store, self.w))?.add(g.param(store, self.b))?)
    }
}

/// Attentional LSTM encoder-decoder with input feeding.
///
/// The encoder is bidirectional or unidirectional; the decoder is a
/// unidirectional stack initialized from the encoder's final states, through a
/// learned `tanh` projection when the encoder is bidirectional.
#[derive(Clone, Debug)]
pub(crate) struct RecurrentNet {
    spec: RecurrentSpec,
    source_embedding: ParamId,
    target_embedding: ParamId,
    /// `[layer][direction]`
    encoder: Vec<Vec<Cell>>,
    bridge: Vec<Linear>,
    attention: ParamId,
    decoder: Vec<Cell>,
    combine: Linear,
    output: Linear,
}

impl RecurrentNet {
    pub fn new<T: Scalar>(
        spec: RecurrentSpec,
        store: &mut ParamStore<T>,
        source_vocab: usize,
        target_vocab: usize,
    ) -> Result<Self> {
        let RecurrentSpec {
            embedding: e,
            hidden: h,
            ..
        } = spec;
        let dirs = if spec.bidirectional { 2 } else { 1 };
        let width = dirs * h;
        let emb = InitScheme::Uniform { bound: EMBEDDING_BOUND };
        let source_embedding = store.add("source_embedding", &[source_vocab, e], emb)?;
        let target_embedding = store.add("target_embedding", &[target_vocab, e], emb)?;
        let mut encoder = Vec::with_capacity(spec.encoder_layers);
        for layer in 0..spec.encoder_layers {
            let input = if layer == 0 { e } else { width };
            let cells = ["forward", "backward"][..dirs]
                .iter()
                .map(|dir| Cell::new(store, &format!("encoder.{layer}.{dir}"), input, h))
                .collect::<Result<Vec<_>>>()?;
            encoder.push(cells);
        }
        let bridge = if spec.bidirectional {
            (0..spec.decoder_layers)
                .map(|l| Linear::new(store, &format!("bridge.{l}"), width, h))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let attention = store.add("attention.weight", &[width, h], InitScheme::FanIn { fan_in: width })?;
        let decoder = (0..spec.decoder_layers)
            .map(|l| Cell::new(store, &format!("decoder.{l}"), if l == 0 { e + h } else { h }, h))
            .collect::<Result<Vec<_>>>()?;
        let combine = Linear::new(store, "attention.combine", width + h, h)?;
        let output = Linear::new(store, "output", h, target_vocab)?;
        Ok(Self {
            spec,
            source_embedding,
            target_embedding,
            encoder,
            bridge,
            attention,
            decoder,
            combine,
            output,
        })
    }

    pub fn output_param(&self) -> (ParamId, ParamId) {
        (self.output.w, self.output.b)
    }

    pub fn memory_width(&self) -> usize {
        self.spec.hidden * if self.spec.bidirectional { 2 } else { 1 }
    }

    pub fn encode<'g, T: Scalar>(
        &self,
        g: &'g Graph<T>,
        store: &ParamStore<T>,
        batch: &SourceBatch,
    ) -> Result<EncoderMemory<'g, T>> {
        let (b, s, h) = (batch.batch(), batch.len(), self.spec.hidden);
        let p = self.spec.dropout;
        let emb = g.param(store, self.source_embedding);
        let masks: Vec<Option<Var<'g, T>>> = (0..s)
            .map(|t| {
                let keep: Vec<T> = (0..b)
                    .map(|r| if batch.mask().keeps(r, t) { T::one() } else { T::zero() })
                    .collect();
                if keep.iter().all(|&k| k == T::one()) {
                    None
                } else {
                    Some(g.constant(Tensor::new(vec![b, 1], keep).expect("mask column")))
                }
            })
            .collect();
        let mut inputs = (0..s)
            .map(|t| {
                let ids: Vec<usize> = (0..b).map(|r| batch.ids()[r * s + t]).collect();
                emb.embedding(&ids, &[b])?.dropout(p)
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let mut finals: Vec<Vec<(Var<'g, T>, Var<'g, T>)>> = Vec::new();
        for (layer, cells) in self.encoder.iter().enumerate() {
            let mut outputs: Vec<Vec<Var<'g, T>>> = Vec::new();
            let mut layer_finals = Vec::new();
            for (dir, cell) in cells.iter().enumerate() {
                let zeros = g.constant(Tensor::zeros(vec![b, h]));
                let (mut hs, mut cs) = (zeros, zeros);
                let mut out = vec![zeros; s];
                let order: Box<dyn Iterator<Item = usize>> = if dir == 0 {
                    Box::new(0..s)
                } else {
                    Box::new((0..s).rev())
                };
                for t in order {
                    let (h2, c2) = cell.step(g, store, inputs[t], hs, cs)?;
                    match masks[t] {
                        None => (hs, cs) = (h2, c2),
                        Some(m) => {
                            hs = hs.add(h2.sub(hs)?.mul(m)?)?;
                            cs = cs.add(c2.sub(cs)?.mul(m)?)?;
                        }
                    }
                    out[t] = hs;
                }
                outputs.push(out);
                layer_finals.push((hs, cs));
            }
            finals.push(layer_finals);
            inputs = (0..s)
                .map(|t| {
                    let v = if outputs.len() == 2 {
                        outputs[0][t].concat(outputs[1][t], 1)?
                    } else {
                        outputs[0][t]
                    };
                    if layer + 1 < self.encoder.len() {
                        v.dropout(p)
                    } else {
                        Ok(v)
                    }
                })
                .collect::<std::result::Result<Vec<_>, _>>()?;
        }
        let width = self.memory_width();
        let columns = inputs
            .iter()
            .map(|v| v.reshape(&[b, 1, width]))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let states = g.concat(&columns, 1)?;
        let keys = states.matmul(g.param(store, self.attention))?.transpose(1, 2)?;
        let mut init = Vec::with_capacity(self.decoder.len());
        for l in 0..self.decoder.len() {
            let src = &finals[l.min(finals.len() - 1)];
            if self.spec.bidirectional {
                let joined_h = src[0].0.concat(src[1].0, 1)?;
                let joined_c = src[0].1.concat(src[1].1, 1)?;
                let hb = self.bridge[l].apply(g, store, joined_h)?.tanh();
                let cb = self.bridge[l].apply(g, store, joined_c)?.tanh();
                init.push((hb, cb));
            } else {
                init.push(src[0]);
            }
        }
        Ok(EncoderMemory::new(states, batch.mask().clone(), Some(keys), init))
    }

    pub fn init_state<'g, T: Scalar>(&self, g: &'g Graph<T>, memory: &EncoderMemory<'g, T>) -> DecoderState<'g, T> {
        DecoderState::Recurrent {
            layers: memory.initial_states().to_vec(),
            feed: g.constant(Tensor::zeros(vec![memory.batch(), self.spec.hidden])),
        }
    }

    pub fn decode_step<'g, T: Scalar>(
        &self,
        g: &'g Graph<T>,
        store: &ParamStore<T>,
        prev: &[usize],
        layers: &[(Var<'g, T>, Var<'g, T>)],
        feed: Var<'g, T>,
        memory: &EncoderMemory<'g, T>,
    ) -> Result<(Var<'g, T>, DecoderState<'g, T>)> {
        let (b, h, p) = (prev.len(), self.spec.hidden, self.spec.dropout);
        let x = g
            .param(store, self.target_embedding)
            .embedding(prev, &[b])?
            .dropout(p)?;
        let mut input = x.concat(feed, 1)?;
        let mut next = Vec::with_capacity(layers.len());
        for (l, (cell, &(hs, cs))) in self.decoder.iter().zip(layers).enumerate() {
            let (h2, c2) = cell.step(g, store, input, hs, cs)?;
            next.push((h2, c2));
            input = if l + 1 < self.decoder.len() { h2.dropout(p)? } else { h2 };
        }
        let top = input;
        let keys = memory.keys().expect("recurrent memory carries keys");
        let scores = top.reshape(&[b, 1, h])?.matmul(keys)?;
        let bias = g.constant(memory.mask().bias(None, 1));
        let (context, weights) = masked_attention(scores, bias, memory.states())?;
        memory.record(AttentionSite::Cross { layer: 0 }, weights);
        let context = context.reshape(&[b, self.memory_width()])?;
        let attentional = self.combine.apply(g, store, context.concat(top, 1)?)?.tanh();
        let logits = self.output.apply(g, store, attentional.dropout(p)?)?;
        Ok((
            logits,
            DecoderState::Recurrent {
                layers: next,
                feed: attentional,
            },
        ))
    }
}
