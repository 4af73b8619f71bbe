//! Phrase templates for synthetic messages.

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::gazetteer::{Gazetteer, KeywordList};

const RELATIVES: &[&str] = &[
    "mum", "dad", "son", "daughter", "husband", "wife", "roommate", "brother", "sister", "grandma",
];

const OPENERS: &[&str] = &[
    "my {rel} has",
    "i think i have",
    "ugh, down with",
    "doctor says i have",
    "stuck at home with",
    "my {rel} was diagnosed with",
    "pretty sure we all got",
    "feeling terrible, probably",
    "home from work with",
    "took my {rel} to the clinic for",
];

// None of these are gazetteer entries, so a message names exactly one
// condition.
const FILLERS: &[&str] = &[
    "and chills",
    "and aching all over",
    "feeling awful",
    "and no appetite",
    "sweating all night",
    "so weak today",
    "cannot sleep",
    "worst week ever",
    "please pray for us",
    "",
];

const PLACES: &[&str] = &["here in {loc}", "in {loc}", "{loc} clinic is packed", "back in {loc}", "at home in {loc}"];

const TAGS: &[&str] = &["#sick", "#getwell", "#outbreak", "#health", "#help"];

const NEWS: &[&str] = &[
    "reading a history of {cond} research",
    "documentary about {cond} vaccines tonight",
    "quiz night question: what causes {cond}",
    "new article on {cond} statistics shared by {loc} university",
    "lecture notes on {cond} for the exam",
    "{loc} museum opens an exhibit on {cond} in the 1800s",
];

const GENERIC_NOISE: &[&str] = &[
    "bieber fever is real",
    "saturday night fever on repeat",
    "cabin fever after this snow",
    "sick of this weather",
    "sick beats at the party tonight",
    "spring fever already",
];

const SHORTENER_CHARS: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789";

/// Surface forms that resolve to `id` without ambiguity.
pub(crate) fn surfaces(g: &Gazetteer, id: &str) -> Vec<String> {
    let mut out: Vec<String> = g
        .surfaces_for(id)
        .filter(|s| g.ids(s).len() == 1)
        .map(str::to_string)
        .collect();
    out.sort();
    out
}

fn pick<'a, R: Rng>(rng: &mut R, xs: &'a [&'a str]) -> &'a str {
    xs.choose(rng).copied().unwrap_or("")
}

fn fill(template: &str, rng: &mut impl Rng, cond: &str, loc: &str) -> String {
    template
        .replace("{rel}", pick(rng, RELATIVES))
        .replace("{cond}", cond)
        .replace("{loc}", loc)
}

fn join(parts: &[&str]) -> String {
    parts.iter().filter(|p| !p.is_empty()).copied().collect::<Vec<_>>().join(" ")
}

fn extras(rng: &mut impl Rng) -> String {
    let mut out = String::new();
    if rng.random_bool(0.25) {
        out.push(' ');
        out.push_str(pick(rng, TAGS));
    }
    if rng.random_bool(0.15) {
        let code: String = (0..6)
            .map(|_| *SHORTENER_CHARS.choose(rng).expect("nonempty") as char)
            .collect();
        out.push_str(" http://t.co/");
        out.push_str(&code);
    }
    out
}

/// A personal illness report. `loc` is `None` when the location comes from
/// coordinates or the profile instead of the text.
pub(crate) fn relevant(rng: &mut impl Rng, cond: &str, loc: Option<&str>) -> String {
    let opener = fill(pick(rng, OPENERS), rng, cond, "");
    let filler = pick(rng, FILLERS);
    let place = loc.map(|l| fill(pick(rng, PLACES), rng, cond, l)).unwrap_or_default();
    let mut s = join(&[&opener, cond, filler, &place]);
    s.push_str(&extras(rng));
    s
}

/// A drift message: the personal-report shape with new terms around the
/// condition word.
pub(crate) fn drift(rng: &mut impl Rng, terms: &[String], cond: &str, loc: Option<&str>) -> String {
    let opener = fill(pick(rng, OPENERS), rng, cond, "");
    let term = terms.choose(rng).map(String::as_str).unwrap_or("");
    let other = terms.choose(rng).map(String::as_str).unwrap_or("");
    let place = loc.map(|l| fill(pick(rng, PLACES), rng, cond, l)).unwrap_or_default();
    let mut s = join(&[&opener, term, cond, "with", other, &place]);
    s.push_str(&extras(rng));
    s
}

/// An irrelevant message tied to a context: a negative keyword phrase when
/// one names the condition, otherwise a non-personal mention.
pub(crate) fn noise(rng: &mut impl Rng, negatives: &[String], cond: &str, loc: &str) -> String {
    if !negatives.is_empty() && rng.random_bool(0.5) {
        let phrase = negatives.choose(rng).expect("nonempty");
        return join(&[phrase, pick(rng, FILLERS)]);
    }
    if rng.random_bool(0.2) {
        return pick(rng, GENERIC_NOISE).to_string();
    }
    fill(pick(rng, NEWS), rng, cond, loc)
}

/// Negative phrases that contain one of the condition's surface forms.
pub(crate) fn negatives_for(list: &KeywordList, surfaces: &[String]) -> Vec<String> {
    list.phrases()
        .map(|p| p.join(" "))
        .filter(|p| {
            let words: Vec<&str> = p.split(' ').collect();
            surfaces.iter().any(|s| {
                let sw: Vec<&str> = s.split(' ').collect();
                words.windows(sw.len()).any(|w| w == sw.as_slice())
            })
        })
        .collect()
}
