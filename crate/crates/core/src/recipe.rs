//! The four-part If-Then program and its flat token form.
//!
//! A recipe serializes to exactly four space-separated tokens:
//! `channel channel.function channel channel.function`, trigger side first.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RecipeError {
    #[error("name is empty after trimming")]
    EmptyName,
    #[error("unknown recipe slot `{0}`")]
    UnknownSlot(String),
}

/// Why a token sequence does not parse as a recipe. Positions are 0-based.
#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MalformedSequence {
    /// `position` is the first index that is missing or superfluous.
    #[error("expected 4 tokens, found {found} (first bad position {position})")]
    MalformedLength { found: usize, position: usize },
    #[error("token {position} is not qualified by its channel")]
    MalformedQualifier { position: usize },
}

impl MalformedSequence {
    pub fn position(&self) -> usize {
        match self {
            MalformedSequence::MalformedLength { position, .. }
            | MalformedSequence::MalformedQualifier { position } => *position,
        }
    }
}

/// Lowercases and folds runs of ASCII whitespace into single underscores.
pub fn normalize_name(raw: &str) -> Result<String, RecipeError> {
    let parts: Vec<String> = raw.split_ascii_whitespace().map(str::to_lowercase).collect();
    if parts.is_empty() {
        return Err(RecipeError::EmptyName);
    }
    Ok(parts.join("_"))
}

/// A trigger-action program. Fields are always normalized.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawRecipe", into = "RawRecipe")]
pub struct Recipe {
    trigger_channel: String,
    trigger_function: String,
    action_channel: String,
    action_function: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RawRecipe {
    pub trigger_channel: String,
    pub trigger_function: String,
    pub action_channel: String,
    pub action_function: String,
}

impl TryFrom<RawRecipe> for Recipe {
    type Error = RecipeError;

    fn try_from(r: RawRecipe) -> Result<Self, Self::Error> {
        Recipe::new(
            &r.trigger_channel,
            &r.trigger_function,
            &r.action_channel,
            &r.action_function,
        )
    }
}

impl From<Recipe> for RawRecipe {
    fn from(r: Recipe) -> Self {
        RawRecipe {
            trigger_channel: r.trigger_channel,
            trigger_function: r.trigger_function,
            action_channel: r.action_channel,
            action_function: r.action_function,
        }
    }
}

impl Recipe {
    pub fn new(
        trigger_channel: &str,
        trigger_function: &str,
        action_channel: &str,
        action_function: &str,
    ) -> Result<Self, RecipeError> {
        Ok(Self {
            trigger_channel: normalize_name(trigger_channel)?,
            trigger_function: normalize_name(trigger_function)?,
            action_channel: normalize_name(action_channel)?,
            action_function: normalize_name(action_function)?,
        })
    }

    pub fn trigger_channel(&self) -> &str {
        &self.trigger_channel
    }

    pub fn trigger_function(&self) -> &str {
        &self.trigger_function
    }

    pub fn action_channel(&self) -> &str {
        &self.action_channel
    }

    pub fn action_function(&self) -> &str {
        &self.action_function
    }

    /// The token this recipe contributes at `slot` (functions are channel-qualified).
    pub fn slot_token(&self, slot: Slot) -> String {
        match slot {
            Slot::TriggerChannel => self.trigger_channel.clone(),
            Slot::TriggerFunction => format!("{}.{}", self.trigger_channel, self.trigger_function),
            Slot::ActionChannel => self.action_channel.clone(),
            Slot::ActionFunction => format!("{}.{}", self.action_channel, self.action_function),
        }
    }

    pub fn serialize(&self) -> RecipeSequence {
        RecipeSequence(Slot::ALL.map(|s| self.slot_token(s)))
    }
}

impl fmt::Display for Recipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "trigger channel:  {}", self.trigger_channel)?;
        writeln!(f, "trigger function: {}", self.trigger_function)?;
        writeln!(f, "action channel:   {}", self.action_channel)?;
        write!(f, "action function:  {}", self.action_function)
    }
}

pub fn serialize_recipe(recipe: &Recipe) -> RecipeSequence {
    recipe.serialize()
}

/// Exactly four tokens: trigger channel, qualified trigger function,
/// action channel, qualified action function.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RecipeSequence([String; 4]);

impl RecipeSequence {
    pub fn tokens(&self) -> &[String; 4] {
        &self.0
    }
}

impl fmt::Display for RecipeSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(" "))
    }
}

/// Inverse of [`serialize_recipe`].
pub fn parse_sequence<S: AsRef<str>>(tokens: &[S]) -> Result<Recipe, MalformedSequence> {
    if tokens.len() != 4 {
        return Err(MalformedSequence::MalformedLength {
            found: tokens.len(),
            position: tokens.len().min(4),
        });
    }
    let t: Vec<&str> = tokens.iter().map(AsRef::as_ref).collect();
    let function = |channel: &str, qualified: &str, position: usize| {
        qualified
            .strip_prefix(channel)
            .and_then(|rest| rest.strip_prefix('.'))
            .filter(|f| !f.is_empty() && !channel.is_empty())
            .ok_or(MalformedSequence::MalformedQualifier { position })
            .map(str::to_string)
    };
    let trigger_function = function(t[0], t[1], 1)?;
    let action_function = function(t[2], t[3], 3)?;
    // tokens may be empty or carry whitespace when they did not come from a split
    let name = |s: &str, position: usize| {
        normalize_name(s).map_err(|_| MalformedSequence::MalformedQualifier { position })
    };
    Ok(Recipe {
        trigger_channel: name(t[0], 0)?,
        trigger_function: name(&trigger_function, 1)?,
        action_channel: name(t[2], 2)?,
        action_function: name(&action_function, 3)?,
    })
}

/// The four recipe positions, in sequence order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    TriggerChannel,
    TriggerFunction,
    ActionChannel,
    ActionFunction,
}

impl Slot {
    pub const ALL: [Slot; 4] = [
        Slot::TriggerChannel,
        Slot::TriggerFunction,
        Slot::ActionChannel,
        Slot::ActionFunction,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Slot::TriggerChannel => "trigger_channel",
            Slot::TriggerFunction => "trigger_function",
            Slot::ActionChannel => "action_channel",
            Slot::ActionFunction => "action_function",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Slot::TriggerChannel => "Trigger Channel",
            Slot::TriggerFunction => "Trigger Function",
            Slot::ActionChannel => "Action Channel",
            Slot::ActionFunction => "Action Function",
        }
    }
}

impl FromStr for Slot {
    type Err = RecipeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Slot::ALL
            .into_iter()
            .find(|slot| slot.as_str() == s)
            .ok_or_else(|| RecipeError::UnknownSlot(s.to_string()))
    }
}

/// Positional view of a decoded sequence; never fails.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotAlignment(pub [Option<String>; 4]);

impl SlotAlignment {
    pub fn get(&self, slot: Slot) -> Option<&str> {
        self.0[slot.index()].as_deref()
    }
}

/// Token `i` goes to slot `i`; extra tokens are dropped, missing slots stay empty.
pub fn slot_align<S: AsRef<str>>(tokens: &[S]) -> SlotAlignment {
    let mut slots: [Option<String>; 4] = Default::default();
    for (slot, token) in slots.iter_mut().zip(tokens) {
        *slot = Some(token.as_ref().to_string());
    }
    SlotAlignment(slots)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn words(s: &str) -> Vec<&str> {
        s.split(' ').collect()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_name("NY Times").unwrap(), "ny_times");
        assert_eq!(normalize_name("twitter").unwrap(), "twitter");
        assert_eq!(normalize_name("New  Spreadsheet Row").unwrap(), "new_spreadsheet_row");
        assert_eq!(normalize_name("  \t ").unwrap_err(), RecipeError::EmptyName);
        assert_eq!(normalize_name("Café Ünïcode").unwrap(), "café_ünïcode");
    }

    #[test]
    fn serialize_examples() {
        let r = Recipe::new("NY Times", "New Article Posted", "Twitter", "New Post").unwrap();
        assert_eq!(
            serialize_recipe(&r).to_string(),
            "ny_times ny_times.new_article_posted twitter twitter.new_post"
        );
        let r = Recipe::new("a", "b", "c", "d").unwrap();
        assert_eq!(r.serialize().to_string(), "a a.b c c.d");
        let r = Recipe::new("Google Sheets", "New Row", "Slack", "Send Message").unwrap();
        assert_eq!(
            r.serialize().to_string(),
            "google_sheets google_sheets.new_row slack slack.send_message"
        );
    }

    #[test]
    fn parse_examples() {
        let r = parse_sequence(&words("ny_times ny_times.new_article_posted twitter twitter.new_post")).unwrap();
        assert_eq!(r, Recipe::new("NY Times", "New Article Posted", "Twitter", "New Post").unwrap());
        assert_eq!(parse_sequence(&words("a a.b c c.d")).unwrap(), Recipe::new("a", "b", "c", "d").unwrap());
        assert_eq!(
            parse_sequence(&words("a x.b c c.d")).unwrap_err(),
            MalformedSequence::MalformedQualifier { position: 1 }
        );
        assert_eq!(
            parse_sequence(&words("a a.b c d")).unwrap_err(),
            MalformedSequence::MalformedQualifier { position: 3 }
        );
        assert_eq!(
            parse_sequence(&words("a a.b c")).unwrap_err(),
            MalformedSequence::MalformedLength { found: 3, position: 3 }
        );
        assert_eq!(
            parse_sequence(&words("a a.b c c.d e")).unwrap_err(),
            MalformedSequence::MalformedLength { found: 5, position: 4 }
        );
        // missing function name after the dot
        assert!(parse_sequence(&words("a a. c c.d")).is_err());
    }

    #[test]
    fn dotted_channel_names_use_the_whole_channel_prefix() {
        let r = Recipe::new("web.hooks", "get.json", "x", "y").unwrap();
        let seq = r.serialize();
        assert_eq!(seq.to_string(), "web.hooks web.hooks.get.json x x.y");
        assert_eq!(parse_sequence(seq.tokens()).unwrap(), r);
    }

    #[test]
    fn slot_alignment() {
        let four = words("a a.b c c.d");
        let aligned = slot_align(&four);
        let parsed = parse_sequence(&four).unwrap();
        for slot in Slot::ALL {
            assert_eq!(aligned.get(slot), Some(parsed.slot_token(slot).as_str()));
        }
        let three = slot_align(&words("a a.b c"));
        assert_eq!(three.get(Slot::ActionChannel), Some("c"));
        assert_eq!(three.get(Slot::ActionFunction), None);
        let six = slot_align(&words("a a.b c c.d e f"));
        assert_eq!(six.0.iter().flatten().count(), 4);
        assert_eq!(six.get(Slot::ActionFunction), Some("c.d"));
        assert_eq!(slot_align::<&str>(&[]), SlotAlignment::default());
    }

    #[test]
    fn slot_names_parse() {
        assert_eq!("action_function".parse::<Slot>().unwrap(), Slot::ActionFunction);
        assert!("event".parse::<Slot>().is_err());
    }

    #[test]
    fn json_recipe_is_normalized() {
        let r: Recipe = serde_json::from_str(
            r#"{"trigger_channel":"NY Times","trigger_function":"New Article Posted","action_channel":"Twitter","action_function":"New Post"}"#,
        )
        .unwrap();
        assert_eq!(r.trigger_channel(), "ny_times");
        let bad: Result<Recipe, _> = serde_json::from_str(
            r#"{"trigger_channel":" ","trigger_function":"x","action_channel":"y","action_function":"z"}"#,
        );
        assert!(bad.is_err());
    }

    fn name() -> impl Strategy<Value = String> {
        prop::collection::vec("[A-Za-z0-9é]{1,6}", 1..4).prop_map(|w| w.join(" "))
    }

    proptest! {
        #[test]
        fn round_trip(tc in name(), tf in name(), ac in name(), af in name()) {
            let r = Recipe::new(&tc, &tf, &ac, &af).unwrap();
            let seq = serialize_recipe(&r);
            prop_assert_eq!(seq.to_string().split(' ').count(), 4);
            prop_assert_eq!(parse_sequence(seq.tokens()).unwrap(), r);
        }

        #[test]
        fn normalize_is_idempotent(raw in "[ a-zA-Z\t]{0,12}[a-zA-Z][ a-zA-Z]{0,12}") {
            let once = normalize_name(&raw).unwrap();
            prop_assert_eq!(normalize_name(&once).unwrap(), once.clone());
            prop_assert!(!once.chars().any(|c| c.is_whitespace() || c.is_uppercase()));
        }
    }
}
