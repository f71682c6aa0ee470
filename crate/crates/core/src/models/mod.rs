//! Encoder-decoder families behind one encode / decode-step interface.

mod attention;
mod recurrent;
mod transformer;

use std::cell::RefCell;
use std::fmt;
use std::str::FromStr;

use ifthen_tensor::{Graph, ParamId, ParamStore, Scalar, Tensor, TensorError, Var};
use serde::{Deserialize, Serialize};

pub use attention::{attention, causal_bias, masked_attention, Scoring, SourceMask, MASK_BIAS};
pub use transformer::sinusoidal_positions;

use crate::corpus::{encode_source, Vocabulary, PAD, TARGET_LEN};
use crate::error::{validation, Error, Result};
use recurrent::{RecurrentNet, RecurrentSpec};
use transformer::{TransformerNet, TransformerSpec};

/// Decoder positions predicted per example: four recipe tokens and EOS.
pub const DECODE_POSITIONS: usize = TARGET_LEN - 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Lstm,
    StackedRnn,
    Transformer,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Lstm, Family::StackedRnn, Family::Transformer];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Lstm => "lstm",
            Family::StackedRnn => "stacked_rnn",
            Family::Transformer => "transformer",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::Validation(format!("unknown model family `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LstmEncDecConfig {
    pub embedding_size: usize,
    pub hidden_size: usize,
    pub dropout: f64,
    pub max_source_len: usize,
    pub source_vocab_cap: Option<usize>,
}

impl Default for LstmEncDecConfig {
    fn default() -> Self {
        Self {
            embedding_size: 16,
            hidden_size: 64,
            dropout: 0.1,
            max_source_len: 25,
            source_vocab_cap: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StackedRnnConfig {
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub embedding_size: usize,
    pub hidden_size: usize,
    pub dropout: f64,
    pub max_source_len: usize,
    pub source_vocab_cap: Option<usize>,
}

impl Default for StackedRnnConfig {
    fn default() -> Self {
        Self {
            encoder_layers: 2,
            decoder_layers: 2,
            embedding_size: 500,
            hidden_size: 500,
            dropout: 0.3,
            max_source_len: 25,
            source_vocab_cap: Some(50_000),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionKind {
    #[default]
    ScaledDot,
    Additive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformerConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_size: usize,
    pub feed_forward_size: usize,
    pub dropout: f64,
    pub max_source_len: usize,
    pub source_vocab_cap: Option<usize>,
    pub attention: AttentionKind,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            layers: 6,
            heads: 8,
            model_size: 512,
            feed_forward_size: 2048,
            dropout: 0.1,
            max_source_len: 30,
            source_vocab_cap: Some(4000),
            attention: AttentionKind::ScaledDot,
        }
    }
}

/// Architecture family plus its hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ArchConfig {
    Lstm(LstmEncDecConfig),
    StackedRnn(StackedRnnConfig),
    Transformer(TransformerConfig),
}

impl ArchConfig {
    pub fn default_for(family: Family) -> Self {
        match family {
            Family::Lstm => ArchConfig::Lstm(Default::default()),
            Family::StackedRnn => ArchConfig::StackedRnn(Default::default()),
            Family::Transformer => ArchConfig::Transformer(Default::default()),
        }
    }

    pub fn family(&self) -> Family {
        match self {
            ArchConfig::Lstm(_) => Family::Lstm,
            ArchConfig::StackedRnn(_) => Family::StackedRnn,
            ArchConfig::Transformer(_) => Family::Transformer,
        }
    }

    pub fn max_source_len(&self) -> usize {
        match self {
            ArchConfig::Lstm(c) => c.max_source_len,
            ArchConfig::StackedRnn(c) => c.max_source_len,
            ArchConfig::Transformer(c) => c.max_source_len,
        }
    }

    pub fn source_vocab_cap(&self) -> Option<usize> {
        match self {
            ArchConfig::Lstm(c) => c.source_vocab_cap,
            ArchConfig::StackedRnn(c) => c.source_vocab_cap,
            ArchConfig::Transformer(c) => c.source_vocab_cap,
        }
    }

    /// Width used by the inverse-square-root learning-rate schedule.
    pub fn model_size(&self) -> usize {
        match self {
            ArchConfig::Lstm(c) => c.hidden_size,
            ArchConfig::StackedRnn(c) => c.hidden_size,
            ArchConfig::Transformer(c) => c.model_size,
        }
    }

    pub fn dropout(&self) -> f64 {
        match self {
            ArchConfig::Lstm(c) => c.dropout,
            ArchConfig::StackedRnn(c) => c.dropout,
            ArchConfig::Transformer(c) => c.dropout,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes: Vec<(&str, usize)> = match self {
            ArchConfig::Lstm(c) => vec![
                ("embedding_size", c.embedding_size),
                ("hidden_size", c.hidden_size),
                ("max_source_len", c.max_source_len),
            ],
            ArchConfig::StackedRnn(c) => vec![
                ("encoder_layers", c.encoder_layers),
                ("decoder_layers", c.decoder_layers),
                ("embedding_size", c.embedding_size),
                ("hidden_size", c.hidden_size),
                ("max_source_len", c.max_source_len),
            ],
            ArchConfig::Transformer(c) => vec![
                ("layers", c.layers),
                ("heads", c.heads),
                ("model_size", c.model_size),
                ("feed_forward_size", c.feed_forward_size),
                ("max_source_len", c.max_source_len),
            ],
        };
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return validation(format!("{name} must be at least 1"));
        }
        if self.source_vocab_cap() == Some(0) {
            return validation("source_vocab_cap must be at least 1");
        }
        let p = self.dropout();
        if !(0.0..1.0).contains(&p) {
            return validation(format!("dropout {p} outside [0, 1)"));
        }
        if let ArchConfig::Transformer(c) = self {
            if c.model_size % c.heads != 0 {
                return validation(format!("model_size {} not divisible by heads {}", c.model_size, c.heads));
            }
        }
        Ok(())
    }
}

/// Padded source ids `[batch, len]` with their attention mask.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceBatch {
    ids: Vec<usize>,
    batch: usize,
    len: usize,
    mask: SourceMask,
}

impl SourceBatch {
    /// Every row must hold exactly `len` ids.
    pub fn new<R: AsRef<[usize]>>(rows: &[R], len: usize) -> Result<Self> {
        if rows.is_empty() {
            return validation("empty source batch");
        }
        let mut ids = Vec::with_capacity(rows.len() * len);
        for row in rows {
            let row = row.as_ref();
            if row.len() != len {
                return Err(TensorError::Shape {
                    op: "encode",
                    lhs: vec![row.len()],
                    rhs: vec![len],
                }
                .into());
            }
            ids.extend_from_slice(row);
        }
        let mask = SourceMask::from_ids(&ids, rows.len(), len);
        Ok(Self {
            ids,
            batch: rows.len(),
            len,
            mask,
        })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn mask(&self) -> &SourceMask {
        &self.mask
    }
}

/// Where a recorded attention distribution came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionSite {
    EncoderSelf { layer: usize },
    DecoderSelf { layer: usize },
    Cross { layer: usize },
}

/// Per-position encoder states plus what the decoder needs to start.
pub struct EncoderMemory<'g, T> {
    states: Var<'g, T>,
    mask: SourceMask,
    keys: Option<Var<'g, T>>,
    initial: Vec<(Var<'g, T>, Var<'g, T>)>,
    trace: RefCell<Vec<(AttentionSite, Var<'g, T>)>>,
}

impl<'g, T: Scalar> EncoderMemory<'g, T> {
    pub(crate) fn new(
        states: Var<'g, T>,
        mask: SourceMask,
        keys: Option<Var<'g, T>>,
        initial: Vec<(Var<'g, T>, Var<'g, T>)>,
    ) -> Self {
        Self {
            states,
            mask,
            keys,
            initial,
            trace: RefCell::new(Vec::new()),
        }
    }

    /// `[batch, len, width]`.
    pub fn states(&self) -> Var<'g, T> {
        self.states
    }

    pub fn mask(&self) -> &SourceMask {
        &self.mask
    }

    pub fn batch(&self) -> usize {
        self.mask.batch()
    }

    pub(crate) fn keys(&self) -> Option<Var<'g, T>> {
        self.keys
    }

    pub(crate) fn initial_states(&self) -> &[(Var<'g, T>, Var<'g, T>)] {
        &self.initial
    }

    pub(crate) fn record(&self, site: AttentionSite, weights: Var<'g, T>) {
        self.trace.borrow_mut().push((site, weights));
    }

    /// Every attention distribution computed against this memory so far, in
    /// evaluation order. The last axis ranges over attended positions.
    pub fn attention_weights(&self) -> Vec<(AttentionSite, Tensor<T>)> {
        self.trace
            .borrow()
            .iter()
            .map(|(site, w)| (*site, w.to_tensor()))
            .collect()
    }
}

/// Decoder state threaded through [`SeqModel::decode_step`].
#[derive(Clone, Debug, Default)]
pub enum DecoderState<'g, T> {
    #[default]
    Uninitialized,
    Recurrent {
        layers: Vec<(Var<'g, T>, Var<'g, T>)>,
        feed: Var<'g, T>,
    },
    /// Tokens already fed, per batch row.
    Transformer { prefix: Vec<Vec<usize>> },
}

#[derive(Clone, Debug)]
enum Network {
    Recurrent(RecurrentNet),
    Transformer(TransformerNet),
}

/// A model of one family with its parameters and vocabularies.
#[derive(Clone, Debug)]
pub struct SeqModel<T> {
    config: ArchConfig,
    params: ParamStore<T>,
    source_vocab: Vocabulary,
    target_vocab: Vocabulary,
    use_description: bool,
    net: Network,
}

impl<T: Scalar> SeqModel<T> {
    /// Freshly initialized model. The source vocabulary is cut to the
    /// config's cap.
    pub fn new(config: ArchConfig, source_vocab: &Vocabulary, target_vocab: &Vocabulary, seed: u64) -> Result<Self> {
        config.validate()?;
        let source_vocab = match config.source_vocab_cap() {
            Some(cap) => source_vocab.truncated(cap),
            None => source_vocab.clone(),
        };
        let mut params = ParamStore::new(seed);
        let net = build_network(&config, &mut params, source_vocab.len(), target_vocab.len())?;
        Ok(Self {
            config,
            params,
            source_vocab,
            target_vocab: target_vocab.clone(),
            use_description: false,
            net,
        })
    }

    /// Model with restored parameters; names and shapes must match the
    /// architecture exactly.
    pub fn from_parts(
        config: ArchConfig,
        params: ParamStore<T>,
        source_vocab: Vocabulary,
        target_vocab: Vocabulary,
        use_description: bool,
    ) -> Result<Self> {
        config.validate()?;
        let mut fresh = ParamStore::new(0);
        let net = build_network(&config, &mut fresh, source_vocab.len(), target_vocab.len())?;
        if fresh.len() != params.len() {
            return Err(Error::IncompatibleCheckpoint(format!(
                "expected {} parameters, found {}",
                fresh.len(),
                params.len()
            )));
        }
        fresh
            .copy_values_from(&params)
            .map_err(|e| Error::IncompatibleCheckpoint(e.to_string()))?;
        Ok(Self {
            config,
            params: fresh,
            source_vocab,
            target_vocab,
            use_description,
            net,
        })
    }

    /// Same model at another precision.
    pub fn cast<U: Scalar>(&self) -> SeqModel<U> {
        SeqModel {
            config: self.config.clone(),
            params: self.params.cast(),
            source_vocab: self.source_vocab.clone(),
            target_vocab: self.target_vocab.clone(),
            use_description: self.use_description,
            net: self.net.clone(),
        }
    }

    pub fn family(&self) -> Family {
        self.config.family()
    }

    pub fn config(&self) -> &ArchConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn source_vocab(&self) -> &Vocabulary {
        &self.source_vocab
    }

    pub fn target_vocab(&self) -> &Vocabulary {
        &self.target_vocab
    }

    /// Whether source text is title plus description.
    pub fn use_description(&self) -> bool {
        self.use_description
    }

    pub fn set_use_description(&mut self, on: bool) {
        self.use_description = on;
    }

    pub fn max_source_len(&self) -> usize {
        self.config.max_source_len()
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_elements()
    }

    /// Output projection `(weight [width, |V_tgt|], bias [|V_tgt|])`.
    pub fn output_layer(&self) -> (ParamId, ParamId) {
        match &self.net {
            Network::Recurrent(n) => n.output_param(),
            Network::Transformer(n) => n.output_param(),
        }
    }

    /// Lowercased whitespace tokens mapped to padded source ids.
    pub fn encode_text(&self, text: &str) -> Vec<usize> {
        encode_source(&text.to_lowercase(), &self.source_vocab, self.max_source_len())
    }

    pub fn source_batch<R: AsRef<[usize]>>(&self, rows: &[R]) -> Result<SourceBatch> {
        SourceBatch::new(rows, self.max_source_len())
    }

    pub fn encode<'g>(&self, g: &'g Graph<T>, batch: &SourceBatch) -> Result<EncoderMemory<'g, T>> {
        if batch.len() != self.max_source_len() {
            return Err(TensorError::Shape {
                op: "encode",
                lhs: vec![batch.batch(), batch.len()],
                rhs: vec![batch.batch(), self.max_source_len()],
            }
            .into());
        }
        if let Some(&bad) = batch.ids().iter().find(|&&i| i >= self.source_vocab.len()) {
            return validation(format!("source id {bad} outside vocabulary of {}", self.source_vocab.len()));
        }
        match &self.net {
            Network::Recurrent(n) => n.encode(g, &self.params, batch),
            Network::Transformer(n) => n.encode(g, &self.params, batch),
        }
    }

    pub fn init_state<'g>(&self, g: &'g Graph<T>, memory: &EncoderMemory<'g, T>) -> DecoderState<'g, T> {
        match &self.net {
            Network::Recurrent(n) => n.init_state(g, memory),
            Network::Transformer(_) => DecoderState::Transformer {
                prefix: vec![Vec::new(); memory.batch()],
            },
        }
    }

    /// Logits `[batch, |V_tgt|]` for the next token after `prev`.
    pub fn decode_step<'g>(
        &self,
        g: &'g Graph<T>,
        prev: &[usize],
        state: &DecoderState<'g, T>,
        memory: &EncoderMemory<'g, T>,
    ) -> Result<(Var<'g, T>, DecoderState<'g, T>)> {
        if prev.len() != memory.batch() {
            return validation(format!("{} previous tokens for a batch of {}", prev.len(), memory.batch()));
        }
        if let Some(&bad) = prev.iter().find(|&&i| i >= self.target_vocab.len()) {
            return validation(format!("target id {bad} outside vocabulary of {}", self.target_vocab.len()));
        }
        match (&self.net, state) {
            (_, DecoderState::Uninitialized) => validation("decoder state is uninitialized"),
            (Network::Recurrent(n), DecoderState::Recurrent { layers, feed }) => {
                n.decode_step(g, &self.params, prev, layers, *feed, memory)
            }
            (Network::Transformer(n), DecoderState::Transformer { prefix }) => {
                n.decode_step(g, &self.params, prev, prefix, memory)
            }
            _ => validation("decoder state belongs to another model family"),
        }
    }

    /// Logits `[batch, 5, |V_tgt|]` predicting `targets[1..]` from `targets[..5]`.
    pub fn forward_teacher_forced<'g>(
        &self,
        g: &'g Graph<T>,
        batch: &SourceBatch,
        targets: &[[usize; TARGET_LEN]],
    ) -> Result<Var<'g, T>> {
        let b = batch.batch();
        if targets.len() != b {
            return Err(TensorError::Shape {
                op: "forward_teacher_forced",
                lhs: vec![b],
                rhs: vec![targets.len()],
            }
            .into());
        }
        let memory = self.encode(g, batch)?;
        match &self.net {
            Network::Recurrent(_) => {
                let mut state = self.init_state(g, &memory);
                let vocab = self.target_vocab.len();
                let mut columns = Vec::with_capacity(DECODE_POSITIONS);
                for pos in 0..DECODE_POSITIONS {
                    let prev: Vec<usize> = targets.iter().map(|t| t[pos]).collect();
                    let (logits, next) = self.decode_step(g, &prev, &state, &memory)?;
                    columns.push(logits.reshape(&[b, 1, vocab])?);
                    state = next;
                }
                Ok(g.concat(&columns, 1)?)
            }
            Network::Transformer(n) => {
                let prefix: Vec<usize> = targets.iter().flat_map(|t| t[..DECODE_POSITIONS].iter().copied()).collect();
                if let Some(&bad) = prefix.iter().find(|&&i| i >= self.target_vocab.len()) {
                    return validation(format!("target id {bad} outside vocabulary"));
                }
                n.decode_prefix(g, &self.params, &prefix, b, &memory)
            }
        }
    }

    /// Mean token cross-entropy over the five predicted positions.
    pub fn loss<'g>(&self, g: &'g Graph<T>, batch: &SourceBatch, targets: &[[usize; TARGET_LEN]]) -> Result<Var<'g, T>> {
        let logits = self.forward_teacher_forced(g, batch, targets)?;
        let gold: Vec<usize> = targets.iter().flat_map(|t| t[1..].iter().copied()).collect();
        Ok(logits.cross_entropy(&gold, Some(PAD))?)
    }
}

fn build_network<T: Scalar>(
    config: &ArchConfig,
    store: &mut ParamStore<T>,
    source_vocab: usize,
    target_vocab: usize,
) -> Result<Network> {
    Ok(match config {
        ArchConfig::Lstm(c) => Network::Recurrent(RecurrentNet::new(
            RecurrentSpec {
                embedding: c.embedding_size,
                hidden: c.hidden_size,
                encoder_layers: 1,
                decoder_layers: 1,
                bidirectional: true,
                dropout: c.dropout,
            },
            store,
            source_vocab,
            target_vocab,
        )?),
        ArchConfig::StackedRnn(c) => Network::Recurrent(RecurrentNet::new(
            RecurrentSpec {
                embedding: c.embedding_size,
                hidden: c.hidden_size,
                encoder_layers: c.encoder_layers,
                decoder_layers: c.decoder_layers,
                bidirectional: false,
                dropout: c.dropout,
            },
            store,
            source_vocab,
            target_vocab,
        )?),
        ArchConfig::Transformer(c) => Network::Transformer(TransformerNet::new(
            TransformerSpec {
                layers: c.layers,
                heads: c.heads,
                model_size: c.model_size,
                feed_forward_size: c.feed_forward_size,
                dropout: c.dropout,
                attention: c.attention,
            },
            store,
            source_vocab,
            target_vocab,
        )?),
    })
}
