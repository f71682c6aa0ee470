//! Sequence, positional and per-component accuracy plus the 0-4 error histogram.
//!
//! Every metric is a count over pairs divided by `n`; the counts are kept in
//! the report so callers can compare results exactly.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};
use crate::recipe::{slot_align, Recipe, Slot};

fn check_lengths<P>(preds: &[P], refs: &[Recipe]) -> Result<()> {
    if preds.len() != refs.len() {
        return validation(format!(
            "{} predictions for {} references",
            preds.len(),
            refs.len()
        ));
    }
    if preds.is_empty() {
        return validation("cannot score an empty prediction set");
    }
    Ok(())
}

fn fraction(count: usize, n: usize) -> f64 {
    count as f64 / n as f64
}

/// Number of the four slots that match the reference.
pub fn correct_slots<S: AsRef<str>>(pred: &[S], reference: &Recipe) -> usize {
    let aligned = slot_align(pred);
    Slot::ALL
        .iter()
        .filter(|&&s| aligned.get(s) == Some(reference.slot_token(s).as_str()))
        .count()
}

/// Wrong slots out of four. A decode longer than four tokens whose slots all
/// match still has one error (the surplus), so zero errors means exact match.
pub fn slot_errors<S: AsRef<str>>(pred: &[S], reference: &Recipe) -> usize {
    match correct_slots(pred, reference) {
        4 if pred.len() > 4 => 1,
        c => 4 - c,
    }
}

fn exact<S: AsRef<str>>(pred: &[S], reference: &Recipe) -> bool {
    let joined: Vec<&str> = pred.iter().map(AsRef::as_ref).collect();
    joined.join(" ") == reference.serialize().to_string()
}

pub fn sequence_accuracy<P: AsRef<[String]>>(preds: &[P], refs: &[Recipe]) -> Result<f64> {
    check_lengths(preds, refs)?;
    let hits = preds.iter().zip(refs).filter(|(p, r)| exact(p.as_ref(), r)).count();
    Ok(fraction(hits, refs.len()))
}

pub fn positional_accuracy<P: AsRef<[String]>>(preds: &[P], refs: &[Recipe]) -> Result<f64> {
    check_lengths(preds, refs)?;
    let hits: usize = preds.iter().zip(refs).map(|(p, r)| correct_slots(p.as_ref(), r)).sum();
    Ok(fraction(hits, 4 * refs.len()))
}

pub fn component_accuracy<P: AsRef<[String]>>(preds: &[P], refs: &[Recipe], role: Slot) -> Result<f64> {
    check_lengths(preds, refs)?;
    let hits = preds
        .iter()
        .zip(refs)
        .filter(|(p, r)| slot_align(p.as_ref()).get(role) == Some(r.slot_token(role).as_str()))
        .count();
    Ok(fraction(hits, refs.len()))
}

/// Fraction of pairs with 0, 1, 2, 3 and 4 errors as counted by [`slot_errors`].
pub fn error_distribution<P: AsRef<[String]>>(preds: &[P], refs: &[Recipe]) -> Result<[f64; 5]> {
    check_lengths(preds, refs)?;
    let mut bins = [0usize; 5];
    for (p, r) in preds.iter().zip(refs) {
        bins[slot_errors(p.as_ref(), r)] += 1;
    }
    Ok(bins.map(|b| fraction(b, refs.len())))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentAccuracy {
    pub trigger_channel: f64,
    pub trigger_function: f64,
    pub action_channel: f64,
    pub action_function: f64,
}

impl ComponentAccuracy {
    pub fn get(&self, slot: Slot) -> f64 {
        match slot {
            Slot::TriggerChannel => self.trigger_channel,
            Slot::TriggerFunction => self.trigger_function,
            Slot::ActionChannel => self.action_channel,
            Slot::ActionFunction => self.action_function,
        }
    }
}

/// Raw counts behind an [`EvalReport`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub exact: usize,
    pub slot_correct: [usize; 4],
    pub errors: [usize; 5],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub sequence_acc: f64,
    pub positional_acc: f64,
    pub component_acc: ComponentAccuracy,
    pub error_distribution: [f64; 5],
    pub counts: EvalCounts,
}

/// All metrics in one pass. Fails if the report invariants do not hold.
pub fn evaluate<P: AsRef<[String]>>(preds: &[P], refs: &[Recipe]) -> Result<EvalReport> {
    check_lengths(preds, refs)?;
    let n = refs.len();
    let mut counts = EvalCounts {
        exact: 0,
        slot_correct: [0; 4],
        errors: [0; 5],
    };
    for (p, r) in preds.iter().zip(refs) {
        let p = p.as_ref();
        if exact(p, r) {
            counts.exact += 1;
        }
        let aligned = slot_align(p);
        for s in Slot::ALL {
            if aligned.get(s) == Some(r.slot_token(s).as_str()) {
                counts.slot_correct[s.index()] += 1;
            }
        }
        counts.errors[slot_errors(p, r)] += 1;
    }
    let comp = counts.slot_correct.map(|c| fraction(c, n));
    let report = EvalReport {
        n,
        sequence_acc: fraction(counts.exact, n),
        positional_acc: fraction(counts.slot_correct.iter().sum(), 4 * n),
        component_acc: ComponentAccuracy {
            trigger_channel: comp[0],
            trigger_function: comp[1],
            action_channel: comp[2],
            action_function: comp[3],
        },
        error_distribution: counts.errors.map(|c| fraction(c, n)),
        counts,
    };
    report.check_invariants()?;
    Ok(report)
}

impl EvalReport {
    pub fn check_invariants(&self) -> Result<()> {
        let fractions = [self.sequence_acc, self.positional_acc]
            .into_iter()
            .chain(Slot::ALL.map(|s| self.component_acc.get(s)))
            .chain(self.error_distribution);
        for f in fractions {
            if !(0.0..=1.0).contains(&f) {
                return validation(format!("metric {f} outside [0, 1]"));
            }
        }
        let total: f64 = self.error_distribution.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return validation(format!("error distribution sums to {total}"));
        }
        if self.sequence_acc != self.error_distribution[0] {
            return validation("sequence accuracy differs from the zero-error bin");
        }
        let mean = Slot::ALL.iter().map(|&s| self.component_acc.get(s)).sum::<f64>() / 4.0;
        if (mean - self.positional_acc).abs() > 1e-12 {
            return validation("positional accuracy differs from mean component accuracy");
        }
        if self.sequence_acc > self.positional_acc {
            return validation("sequence accuracy exceeds positional accuracy");
        }
        Ok(())
    }

    /// Plain-text table: accuracy rows, then the error histogram, in percent.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<18} {:>8}", "Metric", "%");
        let _ = writeln!(out, "{:-<27}", "");
        let _ = writeln!(out, "{:<18} {:>8.2}", "Sequence", 100.0 * self.sequence_acc);
        let _ = writeln!(out, "{:<18} {:>8.2}", "Positional", 100.0 * self.positional_acc);
        for s in Slot::ALL {
            let _ = writeln!(out, "{:<18} {:>8.2}", s.label(), 100.0 * self.component_acc.get(s));
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<18} {:>8}", "Errors", "%");
        let _ = writeln!(out, "{:-<27}", "");
        for (label, f) in ["Zero", "One", "Two", "Three", "Four"].iter().zip(self.error_distribution) {
            let _ = writeln!(out, "{:<18} {:>8.2}", label, 100.0 * f);
        }
        let _ = write!(out, "{:<18} {:>8}", "n", self.n);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn reference() -> Recipe {
        Recipe::new("a", "b", "c", "d").unwrap()
    }

    #[test]
    fn three_of_four_scores_three_quarters() {
        let refs = [reference()];
        let preds = [toks("a a.b c c.x")];
        assert_eq!(positional_accuracy(&preds, &refs).unwrap(), 0.75);
        assert_eq!(sequence_accuracy(&preds, &refs).unwrap(), 0.0);
        assert_eq!(error_distribution(&preds, &refs).unwrap(), [0.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn exact_match_scores_one() {
        let refs = [reference(), reference()];
        let preds = [toks("a a.b c c.d"), toks("a a.b c c.d")];
        let report = evaluate(&preds, &refs).unwrap();
        assert_eq!(report.sequence_acc, 1.0);
        assert_eq!(report.positional_acc, 1.0);
        assert_eq!(report.error_distribution, [1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(report.n, 2);
    }

    #[test]
    fn empty_decode_scores_zero() {
        let refs = [reference()];
        let preds = [Vec::<String>::new()];
        assert_eq!(positional_accuracy(&preds, &refs).unwrap(), 0.0);
        assert_eq!(error_distribution(&preds, &refs).unwrap(), [0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn surplus_token_is_an_error() {
        let refs = [reference()];
        let preds = [toks("a a.b c c.d c")];
        let report = evaluate(&preds, &refs).unwrap();
        assert_eq!(report.sequence_acc, 0.0);
        assert_eq!(report.positional_acc, 1.0);
        assert_eq!(report.error_distribution, [0.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn two_wrong_slots_single_pair() {
        let refs = [reference()];
        let preds = [toks("a a.x c c.y")];
        assert_eq!(error_distribution(&preds, &refs).unwrap(), [0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn only_trigger_channel_right() {
        let refs = [reference(), reference()];
        let preds = [toks("a x.b y y.d"), toks("a")];
        assert_eq!(component_accuracy(&preds, &refs, Slot::TriggerChannel).unwrap(), 1.0);
        for s in [Slot::TriggerFunction, Slot::ActionChannel, Slot::ActionFunction] {
            assert_eq!(component_accuracy(&preds, &refs, s).unwrap(), 0.0);
        }
    }

    #[test]
    fn function_under_wrong_channel_is_wrong() {
        let refs = [reference()];
        let preds = [toks("z z.b c c.d")];
        assert_eq!(component_accuracy(&preds, &refs, Slot::TriggerFunction).unwrap(), 0.0);
    }

    #[test]
    fn length_mismatch_and_empty_are_rejected() {
        let refs = [reference()];
        assert!(sequence_accuracy::<Vec<String>>(&[], &refs).is_err());
        assert!(evaluate::<Vec<String>>(&[], &[]).is_err());
    }

    #[test]
    fn table_lists_every_metric_row() {
        let report = evaluate(&[toks("a a.b c c.d")], &[reference()]).unwrap();
        let table = report.to_table();
        for row in ["Sequence", "Positional", "Trigger Channel", "Action Function", "Zero", "Four"] {
            assert!(table.contains(row), "{row} missing from\n{table}");
        }
    }
}
