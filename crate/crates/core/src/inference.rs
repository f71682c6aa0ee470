//! Greedy decoding of recipes from source text.

use ifthen_tensor::{Graph, Scalar};
use serde::{Deserialize, Serialize};

use crate::corpus::{BOS, EOS, PAD, TARGET_LEN};
use crate::error::{validation, Result};
use crate::models::SeqModel;
use crate::recipe::{parse_sequence, slot_align, MalformedSequence, Recipe, SlotAlignment};

/// Greedy output for one source row.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    /// Emitted ids, EOS excluded.
    pub ids: Vec<usize>,
    /// Softmax probability of each chosen id, EOS included when emitted.
    pub probabilities: Vec<f64>,
}

/// Index of the largest logit; ties go to the lowest id. BOS and PAD are
/// never emitted.
fn argmax(logits: &[f64]) -> usize {
    let mut best = None;
    for (i, &v) in logits.iter().enumerate() {
        if i == BOS || i == PAD {
            continue;
        }
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map_or(EOS, |(i, _)| i)
}

fn softmax_at(logits: &[f64], index: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logits.iter().map(|&v| (v - max).exp()).sum();
    (logits[index] - max).exp() / total
}

/// Decodes every row from BOS, emitting at most `max_len - 1` tokens
/// (`max_len` counts BOS and EOS).
pub fn greedy_decode<T: Scalar, R: AsRef<[usize]>>(
    model: &SeqModel<T>,
    rows: &[R],
    max_len: usize,
) -> Result<Vec<Decoded>> {
    if rows.is_empty() {
        return Ok(Vec::new());
    }
    if max_len < 2 {
        return validation(format!("max_len {max_len} leaves no room between BOS and EOS"));
    }
    let g = Graph::<T>::inference();
    let batch = model.source_batch(rows)?;
    let memory = model.encode(&g, &batch)?;
    let mut state = model.init_state(&g, &memory);
    let mut out = vec![
        Decoded {
            ids: Vec::new(),
            probabilities: Vec::new(),
        };
        rows.len()
    ];
    let mut done = vec![false; rows.len()];
    let mut prev = vec![BOS; rows.len()];
    for _ in 0..max_len - 1 {
        let (logits, next) = model.decode_step(&g, &prev, &state, &memory)?;
        let values = logits.value().to_f64_vec();
        let vocab = values.len() / rows.len();
        for (r, row) in values.chunks(vocab).enumerate() {
            if done[r] {
                prev[r] = EOS;
                continue;
            }
            let id = argmax(row);
            out[r].probabilities.push(softmax_at(row, id));
            if id == EOS {
                done[r] = true;
            } else {
                out[r].ids.push(id);
            }
            prev[r] = id;
        }
        if done.iter().all(|&d| d) {
            break;
        }
        state = next;
    }
    Ok(out)
}

/// First-step decoder logits for `rows`, row-major `[rows, target vocab]`.
/// A fixed probe for comparing models bit for bit.
pub fn probe_logits<T: Scalar, R: AsRef<[usize]>>(model: &SeqModel<T>, rows: &[R]) -> Result<Vec<T>> {
    let g = Graph::<T>::inference();
    let batch = model.source_batch(rows)?;
    let memory = model.encode(&g, &batch)?;
    let state = model.init_state(&g, &memory);
    let (logits, _) = model.decode_step(&g, &vec![BOS; rows.len()], &state, &memory)?;
    let values = logits.value().data().to_vec();
    Ok(values)
}

/// A decoded recipe with everything needed to score it.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub raw: Vec<String>,
    pub parsed: Result<Recipe, MalformedSequence>,
    pub slots: SlotAlignment,
    pub step_probabilities: Vec<f64>,
}

impl AsRef<[String]> for Prediction {
    fn as_ref(&self) -> &[String] {
        &self.raw
    }
}

impl Prediction {
    pub fn from_decoded<T: Scalar>(model: &SeqModel<T>, decoded: Decoded) -> Self {
        let raw: Vec<String> = decoded
            .ids
            .iter()
            .map(|&id| model.target_vocab().token(id).unwrap_or("<unk>").to_string())
            .collect();
        Self {
            parsed: parse_sequence(&raw),
            slots: slot_align(&raw),
            raw,
            step_probabilities: decoded.probabilities,
        }
    }

    /// One line of a prediction file.
    pub fn to_record(&self, id: &str) -> PredictionRecord {
        PredictionRecord {
            id: id.to_string(),
            raw: self.raw.join(" "),
            parsed: self.parsed.as_ref().ok().map(|r| r.serialize().to_string()),
            malformed: self.parsed.as_ref().err().cloned(),
            slots: self.slots.0.clone(),
            step_probabilities: self.step_probabilities.clone(),
        }
    }
}

/// Serialized form of a [`Prediction`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub raw: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parsed: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub malformed: Option<MalformedSequence>,
    pub slots: [Option<String>; 4],
    pub step_probabilities: Vec<f64>,
}

/// Source ids for `texts`, then batched greedy decoding.
pub fn predict_batch<T: Scalar, S: AsRef<str>>(
    model: &SeqModel<T>,
    texts: &[S],
    batch_size: usize,
) -> Result<Vec<Prediction>> {
    let rows: Vec<Vec<usize>> = texts.iter().map(|t| model.encode_text(t.as_ref())).collect();
    predict_ids(model, &rows, batch_size)
}

/// Batched greedy decoding of already-encoded rows.
pub fn predict_ids<T: Scalar>(model: &SeqModel<T>, rows: &[Vec<usize>], batch_size: usize) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(rows.len());
    for chunk in rows.chunks(batch_size.max(1)) {
        for decoded in greedy_decode(model, chunk, TARGET_LEN)? {
            out.push(Prediction::from_decoded(model, decoded));
        }
    }
    Ok(out)
}

/// Lowercase, encode, decode and parse one description.
pub fn predict_recipe<T: Scalar>(model: &SeqModel<T>, text: &str) -> Result<Prediction> {
    if text.trim().is_empty() {
        return validation("cannot predict from empty text");
    }
    let mut all = predict_batch(model, &[text], 1)?;
    Ok(all.remove(0))
}
