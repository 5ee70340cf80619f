//! Deterministic synthetic English-like text with structure at several
//! ranges: spelling (a syllable lexicon), syntax (agreement, tense),
//! topic (per-paragraph vocabulary), and exact repetition (quotations of
//! earlier sentences). Intended for desk-scale scaling runs.

use std::collections::HashSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub bytes: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_topics")]
    pub topics: usize,
    #[serde(default = "default_nouns")]
    pub nouns: usize,
    #[serde(default = "default_verbs")]
    pub verbs: usize,
    #[serde(default = "default_adjectives")]
    pub adjectives: usize,
}

fn default_topics() -> usize {
    48
}
fn default_nouns() -> usize {
    4000
}
fn default_verbs() -> usize {
    1200
}
fn default_adjectives() -> usize {
    800
}

impl SynthConfig {
    pub fn new(bytes: usize, seed: u64) -> Self {
        SynthConfig {
            bytes,
            seed,
            topics: default_topics(),
            nouns: default_nouns(),
            verbs: default_verbs(),
            adjectives: default_adjectives(),
        }
    }
}

const ONSETS: &[&str] = &[
    "b", "c", "d", "f", "g", "h", "j", "k", "l", "m", "n", "p", "r", "s", "t", "v", "w", "z", "br", "ch", "cl", "dr",
    "fl", "gr", "pl", "pr", "sh", "st", "th", "tr", "",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ea", "ou", "ie", "oo"];
const CODAS: &[&str] = &["", "", "", "n", "r", "s", "l", "m", "nd", "st", "rt", "ck"];
const ADVERBS: &[&str] = &[
    "quickly",
    "slowly",
    "often",
    "rarely",
    "again",
    "together",
    "carefully",
    "quietly",
    "early",
    "later",
];
const PREPOSITIONS: &[&str] = &["with", "near", "under", "behind", "for", "without", "beside", "after"];
const CONNECTIVES: &[&str] = &["and", "but", "because", "while", "so"];

/// A word class with Zipf-distributed frequencies.
struct Lexicon {
    words: Vec<String>,
    zipf: WeightedIndex<f64>,
}

impl Lexicon {
    fn new(words: Vec<String>) -> Self {
        let zipf = zipf(words.len());
        Lexicon { words, zipf }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> &str {
        &self.words[self.zipf.sample(rng)]
    }
}

fn zipf(n: usize) -> WeightedIndex<f64> {
    WeightedIndex::new((0..n).map(|r| 1.0 / (r as f64 + 2.0).powf(1.05))).expect("nonempty lexicon")
}

struct Topic {
    nouns: Lexicon,
    verbs: Lexicon,
    adjectives: Lexicon,
}

struct Generator {
    rng: ChaCha8Rng,
    nouns: Lexicon,
    verbs: Lexicon,
    adjectives: Lexicon,
    names: Vec<String>,
    topics: Vec<Topic>,
    topic_pick: WeightedIndex<f64>,
}

fn coin(rng: &mut ChaCha8Rng, p: f64) -> bool {
    rng.random::<f64>() < p
}

fn fresh_words(rng: &mut ChaCha8Rng, n: usize, seen: &mut HashSet<String>, max_syllables: usize) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = rng.random_range(1..=max_syllables);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS.choose(rng).expect("nonempty"));
            w.push_str(VOWELS.choose(rng).expect("nonempty"));
        }
        w.push_str(CODAS.choose(rng).expect("nonempty"));
        if w.len() >= 2 && seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn subset(rng: &mut ChaCha8Rng, words: &[String], k: usize) -> Lexicon {
    let picked: Vec<String> = words.choose_multiple(rng, k.min(words.len())).cloned().collect();
    Lexicon::new(picked)
}

fn capitalize(s: &mut String, at: usize) {
    if let Some(c) = s[at..].chars().next() {
        let up = c.to_ascii_uppercase();
        s.replace_range(at..at + c.len_utf8(), &up.to_string());
    }
}

impl Generator {
    fn new(cfg: &SynthConfig) -> Self {
        let mut rng = seed::rng(cfg.seed, "synth");
        let mut seen = HashSet::new();
        for w in ADVERBS.iter().chain(PREPOSITIONS).chain(CONNECTIVES) {
            seen.insert(w.to_string());
        }
        let nouns = fresh_words(&mut rng, cfg.nouns.max(1), &mut seen, 3);
        let verbs = fresh_words(&mut rng, cfg.verbs.max(1), &mut seen, 2);
        let adjectives = fresh_words(&mut rng, cfg.adjectives.max(1), &mut seen, 3);
        let mut names = fresh_words(&mut rng, 300, &mut seen, 3);
        for n in &mut names {
            capitalize(n, 0);
        }
        let topics = (0..cfg.topics.max(1))
            .map(|_| Topic {
                nouns: subset(&mut rng, &nouns, 120),
                verbs: subset(&mut rng, &verbs, 50),
                adjectives: subset(&mut rng, &adjectives, 40),
            })
            .collect();
        Generator {
            topic_pick: zipf(cfg.topics.max(1)),
            rng,
            nouns: Lexicon::new(nouns),
            verbs: Lexicon::new(verbs),
            adjectives: Lexicon::new(adjectives),
            names,
            topics,
        }
    }

    fn noun(&mut self, topic: usize) -> String {
        if coin(&mut self.rng, 0.7) {
            self.topics[topic].nouns.draw(&mut self.rng).to_string()
        } else {
            self.nouns.draw(&mut self.rng).to_string()
        }
    }

    fn verb(&mut self, topic: usize) -> String {
        if coin(&mut self.rng, 0.7) {
            self.topics[topic].verbs.draw(&mut self.rng).to_string()
        } else {
            self.verbs.draw(&mut self.rng).to_string()
        }
    }

    fn adjective(&mut self, topic: usize) -> String {
        if coin(&mut self.rng, 0.6) {
            self.topics[topic].adjectives.draw(&mut self.rng).to_string()
        } else {
            self.adjectives.draw(&mut self.rng).to_string()
        }
    }

    /// Appends a noun phrase; returns whether it is plural.
    fn noun_phrase(&mut self, out: &mut String, topic: usize, depth: usize) -> bool {
        let r = self.rng.random::<f64>();
        if r < 0.12 {
            out.push_str(self.names.choose(&mut self.rng).expect("nonempty"));
            return false;
        }
        let plural = coin(&mut self.rng, 0.4);
        if plural && coin(&mut self.rng, 0.3) {
            let n = self.rng.random_range(2..=12);
            out.push_str(&n.to_string());
        } else if plural {
            out.push_str(
                ["the", "some", "these", "many"]
                    .choose(&mut self.rng)
                    .expect("nonempty"),
            );
        } else {
            out.push_str(["the", "a", "this", "every"].choose(&mut self.rng).expect("nonempty"));
        }
        out.push(' ');
        if coin(&mut self.rng, 0.35) {
            let a = self.adjective(topic);
            out.push_str(&a);
            out.push(' ');
        }
        let n = self.noun(topic);
        out.push_str(&n);
        if plural {
            out.push('s');
        }
        if depth == 0 && coin(&mut self.rng, 0.2) {
            out.push_str(" of ");
            self.noun_phrase(out, topic, 1);
        }
        plural
    }

    fn clause(&mut self, out: &mut String, topic: usize, past: bool) {
        let plural = self.noun_phrase(out, topic, 0);
        out.push(' ');
        let v = self.verb(topic);
        out.push_str(&v);
        if past {
            out.push_str(if v.ends_with('e') { "d" } else { "ed" });
        } else if !plural {
            out.push('s');
        }
        if coin(&mut self.rng, 0.8) {
            out.push(' ');
            self.noun_phrase(out, topic, 0);
        }
        let r = self.rng.random::<f64>();
        if r < 0.2 {
            out.push(' ');
            out.push_str(ADVERBS.choose(&mut self.rng).expect("nonempty"));
        } else if r < 0.4 {
            out.push(' ');
            out.push_str(PREPOSITIONS.choose(&mut self.rng).expect("nonempty"));
            out.push(' ');
            self.noun_phrase(out, topic, 1);
        } else if r < 0.5 && past {
            let year = self.rng.random_range(1700..2030);
            out.push_str(&format!(" in {year}"));
        }
    }

    fn sentence(&mut self, topic: usize, past: bool) -> String {
        let mut s = String::new();
        self.clause(&mut s, topic, past);
        if coin(&mut self.rng, 0.25) {
            s.push_str(if coin(&mut self.rng, 0.5) { ", " } else { " " });
            s.push_str(CONNECTIVES.choose(&mut self.rng).expect("nonempty"));
            s.push(' ');
            self.clause(&mut s, topic, past);
        }
        s
    }

    fn paragraph(&mut self, out: &mut Vec<u8>) {
        let topic = self.topic_pick.sample(&mut self.rng);
        let past = coin(&mut self.rng, 0.5);
        if coin(&mut self.rng, 0.1) {
            // a short list
            let head = self.noun(topic);
            out.extend_from_slice(format!("{head}s:\n").as_bytes());
            for _ in 0..self.rng.random_range(2..=5) {
                let (a, n) = (self.adjective(topic), self.noun(topic));
                out.extend_from_slice(format!("- {a} {n}\n").as_bytes());
            }
            out.push(b'\n');
            return;
        }
        let mut said: Vec<String> = Vec::new();
        let count = self.rng.random_range(3..=8);
        for i in 0..count {
            let mut s = if !said.is_empty() && coin(&mut self.rng, 0.1) {
                let quoted = said.choose(&mut self.rng).expect("nonempty").clone();
                let name = self.names.choose(&mut self.rng).expect("nonempty").clone();
                format!("{name} {} that \"{quoted}\"", if past { "said" } else { "says" })
            } else {
                let s = self.sentence(topic, past);
                said.push(s.clone());
                s
            };
            capitalize(&mut s, 0);
            s.push_str(if coin(&mut self.rng, 0.08) { "?" } else { "." });
            if i > 0 {
                out.push(b' ');
            }
            out.extend_from_slice(s.as_bytes());
        }
        out.extend_from_slice(b"\n\n");
    }
}

/// Generates exactly `cfg.bytes` bytes of ASCII text.
pub fn synthesize(cfg: &SynthConfig) -> Vec<u8> {
    let mut g = Generator::new(cfg);
    let mut out = Vec::with_capacity(cfg.bytes + 4096);
    while out.len() < cfg.bytes {
        g.paragraph(&mut out);
    }
    out.truncate(cfg.bytes);
    out
}
