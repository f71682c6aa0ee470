//! Seeded templated corpora over a fixed 20-channel, 5-function catalogue.
//!
//! Titles name both channels and describe both functions, so every recipe
//! is recoverable from its title; paraphrase mode varies sentence template,
//! channel wording and function wording.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::Example;
use crate::recipe::Recipe;

/// `(channel name, ways of saying it)`; the first wording is canonical.
pub const CHANNELS: [(&str, [&str; 3]); 20] = [
    ("twitter", ["twitter", "my twitter", "the twitter account"]),
    ("gmail", ["gmail", "my gmail", "the gmail inbox"]),
    ("dropbox", ["dropbox", "my dropbox", "the dropbox folder"]),
    ("instagram", ["instagram", "my instagram", "the instagram feed"]),
    ("facebook", ["facebook", "my facebook", "the facebook page"]),
    ("weather", ["weather", "the weather app", "the weather service"]),
    ("evernote", ["evernote", "my evernote", "the evernote notebook"]),
    ("slack", ["slack", "my slack", "the slack channel"]),
    ("spotify", ["spotify", "my spotify", "the spotify library"]),
    ("youtube", ["youtube", "my youtube", "the youtube channel"]),
    ("reddit", ["reddit", "my reddit", "the subreddit"]),
    ("github", ["github", "my github", "the github repo"]),
    ("trello", ["trello", "my trello", "the trello board"]),
    ("fitbit", ["fitbit", "my fitbit", "the fitbit tracker"]),
    ("nest thermostat", ["nest thermostat", "my nest thermostat", "the nest"]),
    ("philips hue", ["philips hue", "my hue lights", "the hue bulbs"]),
    ("sms", ["sms", "my phone", "text messages"]),
    ("google calendar", ["google calendar", "my calendar", "the google calendar"]),
    ("rss feed", ["rss feed", "my rss reader", "the news feed"]),
    ("pocket", ["pocket", "my pocket", "the pocket list"]),
];

/// `(function name, trigger wordings, action wordings)`; first is canonical.
pub const FUNCTIONS: [(&str, [&str; 3], [&str; 3]); 5] = [
    (
        "new post",
        ["a new post is published", "there is a new post", "someone publishes a post"],
        ["publish a post", "create a new post", "share a post"],
    ),
    (
        "new photo",
        ["a new photo is added", "i add a photo", "a photo gets uploaded"],
        ["upload a photo", "add a photo", "save the photo"],
    ),
    (
        "new message",
        ["a new message arrives", "i get a message", "i receive a message"],
        ["send a message", "send me a message", "write a message"],
    ),
    (
        "new event",
        ["an event starts", "a new event is scheduled", "an event is coming up"],
        ["create an event", "add an event", "schedule an event"],
    ),
    (
        "new file",
        ["a new file appears", "a file is added", "someone adds a file"],
        ["save a file", "store a file", "upload a file"],
    ),
];

/// Sentence shapes; `{t}`/`{tc}` describe the trigger, `{a}`/`{ac}` the action.
const TEMPLATES: [&str; 5] = [
    "if {t} on {tc} then {a} on {ac}",
    "when {t} in {tc} {a} in {ac}",
    "{a} on {ac} when {t} on {tc}",
    "every time {t} on {tc} , {a} on {ac}",
    "{tc} : {t} -> {ac} : {a}",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub size: usize,
    /// Vary wording; otherwise every title uses the canonical template.
    pub paraphrase: bool,
    pub seed: u64,
}

/// `size` examples with pairwise distinct titles.
///
/// Panics if `size` exceeds the number of distinct titles the catalogue can
/// produce in the chosen mode.
pub fn generate(spec: SyntheticSpec) -> Vec<Example> {
    let distinct_recipes = (CHANNELS.len() * FUNCTIONS.len()).pow(2);
    assert!(spec.size <= distinct_recipes, "at most {distinct_recipes} distinct examples");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut seen = HashSet::with_capacity(spec.size);
    let mut out = Vec::with_capacity(spec.size);
    while out.len() < spec.size {
        let tc = rng.gen_range(0..CHANNELS.len());
        let tf = rng.gen_range(0..FUNCTIONS.len());
        let ac = rng.gen_range(0..CHANNELS.len());
        let af = rng.gen_range(0..FUNCTIONS.len());
        let mut pick = |n: usize| if spec.paraphrase { rng.gen_range(0..n) } else { 0 };
        let template = TEMPLATES[pick(TEMPLATES.len())];
        let title = template
            .replace("{tc}", CHANNELS[tc].1[pick(3)])
            .replace("{ac}", CHANNELS[ac].1[pick(3)])
            .replace("{t}", FUNCTIONS[tf].1[pick(3)])
            .replace("{a}", FUNCTIONS[af].2[pick(3)]);
        if !seen.insert(title.clone()) {
            continue;
        }
        let recipe = Recipe::new(CHANNELS[tc].0, FUNCTIONS[tf].0, CHANNELS[ac].0, FUNCTIONS[af].0)
            .expect("catalogue names are non-empty");
        out.push(Example {
            id: format!("synthetic-{}", out.len()),
            title,
            description: None,
            recipe,
            annotations: None,
        });
    }
    out
}

/// `generate` followed by a seeded shuffle into `(train, held_out)`, with
/// `held_out_fraction` of the examples held out.
pub fn generate_split(spec: SyntheticSpec, held_out_fraction: f64) -> (Vec<Example>, Vec<Example>) {
    let mut all = generate(spec);
    all.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed));
    let held = (held_out_fraction * all.len() as f64).round() as usize;
    let train = all.split_off(held);
    (train, all)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_titles_name_every_slot() {
        let corpus = generate(SyntheticSpec {
            size: 200,
            paraphrase: false,
            seed: 4,
        });
        assert_eq!(corpus.len(), 200);
        for e in &corpus {
            assert!(e.title.starts_with("if "), "{}", e.title);
            assert!(e.recipe.trigger_function().starts_with("new_"));
        }
        let titles: HashSet<_> = corpus.iter().map(|e| &e.title).collect();
        assert_eq!(titles.len(), 200);
    }

    #[test]
    fn generation_is_seeded() {
        let spec = SyntheticSpec {
            size: 50,
            paraphrase: true,
            seed: 9,
        };
        assert_eq!(generate(spec), generate(spec));
        let (train, held) = generate_split(spec, 0.2);
        assert_eq!((train.len(), held.len()), (40, 10));
    }
}
