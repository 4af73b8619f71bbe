//! Offline dictionaries: condition and location gazetteers, negative keyword
//! lists and coarse country bounding boxes.

use std::collections::BTreeMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Longest surface form (in tokens) considered during matching.
pub const MAX_NGRAM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GazetteerKind {
    Condition,
    Location,
}

/// A resolved lookup: the canonical id plus how many other ids share the
/// same surface form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resolved<'a> {
    pub id: &'a str,
    pub alternatives: usize,
}

/// Surface form → canonical id dictionary.
///
/// Surfaces are stored lowercase with single spaces between words. When a
/// surface maps to several ids the lexicographically smallest one wins, so
/// lookups do not depend on the order entries were inserted.
#[derive(Debug, Clone)]
pub struct Gazetteer {
    kind: GazetteerKind,
    entries: BTreeMap<String, Vec<String>>,
    max_tokens: usize,
}

fn normalize_surface(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

impl Gazetteer {
    pub fn new(kind: GazetteerKind) -> Self {
        Self {
            kind,
            entries: BTreeMap::new(),
            max_tokens: 0,
        }
    }

    pub fn from_pairs<'a>(
        kind: GazetteerKind,
        pairs: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self> {
        let mut g = Self::new(kind);
        for (i, (surface, id)) in pairs.into_iter().enumerate() {
            g.insert(surface, id).map_err(|reason| Error::Gazetteer {
                line: i + 1,
                reason,
            })?;
        }
        Ok(g)
    }

    /// Parses `surface<TAB>canonical_id` lines; `#` starts a comment line.
    pub fn parse(kind: GazetteerKind, reader: impl BufRead) -> Result<Self> {
        let mut g = Self::new(kind);
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (surface, id) = line.split_once('\t').ok_or_else(|| Error::Gazetteer {
                line: i + 1,
                reason: "expected surface<TAB>id".into(),
            })?;
            g.insert(surface, id).map_err(|reason| Error::Gazetteer {
                line: i + 1,
                reason,
            })?;
        }
        Ok(g)
    }

    pub fn insert(&mut self, surface: &str, id: &str) -> std::result::Result<(), String> {
        let surface = normalize_surface(surface);
        let id = id.trim();
        if surface.is_empty() {
            return Err("empty surface form".into());
        }
        if id.is_empty() {
            return Err("empty canonical id".into());
        }
        let id = match self.kind {
            GazetteerKind::Location => id.to_ascii_uppercase(),
            GazetteerKind::Condition => id.to_string(),
        };
        let n = surface.split(' ').count();
        if n > MAX_NGRAM {
            return Err(format!("surface has {n} tokens, limit is {MAX_NGRAM}"));
        }
        self.max_tokens = self.max_tokens.max(n);
        let ids = self.entries.entry(surface).or_default();
        if let Err(pos) = ids.binary_search(&id) {
            ids.insert(pos, id);
        }
        Ok(())
    }

    pub fn kind(&self) -> GazetteerKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_tokens(&self) -> usize {
        self.max_tokens
    }

    pub fn lookup(&self, surface: &str) -> Option<Resolved<'_>> {
        self.entries.get(surface).map(|ids| Resolved {
            id: ids[0].as_str(),
            alternatives: ids.len() - 1,
        })
    }

    /// Every id a surface maps to, sorted.
    pub fn ids(&self, surface: &str) -> &[String] {
        self.entries.get(surface).map_or(&[], Vec::as_slice)
    }

    /// Every surface form whose canonical id is `id`.
    pub fn surfaces_for<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.entries
            .iter()
            .filter(move |(_, ids)| ids[0] == id)
            .map(|(s, _)| s.as_str())
    }

    pub fn builtin_conditions() -> Self {
        Self::parse(
            GazetteerKind::Condition,
            include_str!("../data/conditions.tsv").as_bytes(),
        )
        .expect("bundled condition gazetteer")
    }

    pub fn builtin_locations() -> Self {
        Self::parse(
            GazetteerKind::Location,
            include_str!("../data/locations.tsv").as_bytes(),
        )
        .expect("bundled location gazetteer")
    }
}

/// Multi-word negative keywords, stored as token sequences.
#[derive(Debug, Clone, Default)]
pub struct KeywordList {
    phrases: Vec<Vec<String>>,
}

impl KeywordList {
    pub fn new<S: AsRef<str>>(phrases: impl IntoIterator<Item = S>) -> Self {
        let mut out: Vec<Vec<String>> = phrases
            .into_iter()
            .map(|p| p.as_ref().split_whitespace().map(str::to_lowercase).collect::<Vec<_>>())
            .filter(|p| !p.is_empty())
            .collect();
        out.sort();
        out.dedup();
        Self { phrases: out }
    }

    /// One phrase per line; blank and `#` lines ignored.
    pub fn parse(reader: impl BufRead) -> Result<Self> {
        let mut lines = Vec::new();
        for line in reader.lines() {
            let line = line?;
            let t = line.trim();
            if !t.is_empty() && !t.starts_with('#') {
                lines.push(t.to_string());
            }
        }
        Ok(Self::new(lines))
    }

    pub fn builtin() -> Self {
        Self::parse(include_str!("../data/negatives.txt").as_bytes()).expect("bundled negatives")
    }

    pub fn phrases(&self) -> impl Iterator<Item = &[String]> {
        self.phrases.iter().map(Vec::as_slice)
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub country: String,
    pub min_lat: f64,
    pub max_lat: f64,
    pub min_lon: f64,
    pub max_lon: f64,
}

impl BoundingBox {
    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        (self.min_lat..=self.max_lat).contains(&lat) && (self.min_lon..=self.max_lon).contains(&lon)
    }

    pub fn area(&self) -> f64 {
        (self.max_lat - self.min_lat) * (self.max_lon - self.min_lon)
    }
}

/// Rectangular country boxes. A point inside several boxes resolves to the
/// smallest one (ties by country code), which keeps the answer independent
/// of table order.
#[derive(Debug, Clone, Default)]
pub struct CountryBounds {
    boxes: Vec<BoundingBox>,
}

impl CountryBounds {
    pub fn new(boxes: Vec<BoundingBox>) -> Self {
        Self { boxes }
    }

    /// `code<TAB>min_lat<TAB>max_lat<TAB>min_lon<TAB>max_lon` lines.
    pub fn parse(reader: impl BufRead) -> Result<Self> {
        let mut boxes = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = t.split_whitespace().collect();
            let bad = |reason: &str| Error::Gazetteer {
                line: i + 1,
                reason: reason.to_string(),
            };
            if cols.len() != 5 {
                return Err(bad("expected 5 columns"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad coordinate"));
            boxes.push(BoundingBox {
                country: cols[0].to_ascii_uppercase(),
                min_lat: num(cols[1])?,
                max_lat: num(cols[2])?,
                min_lon: num(cols[3])?,
                max_lon: num(cols[4])?,
            });
        }
        Ok(Self { boxes })
    }

    pub fn builtin() -> Self {
        Self::parse(include_str!("../data/country_bounds.tsv").as_bytes()).expect("bundled bounds")
    }

    pub fn boxes(&self) -> &[BoundingBox] {
        &self.boxes
    }

    /// Country for a coordinate; out-of-range coordinates yield `None`.
    pub fn lookup(&self, lat: f64, lon: f64) -> Option<&str> {
        if !valid_coordinates(lat, lon) {
            return None;
        }
        self.boxes
            .iter()
            .filter(|b| b.contains(lat, lon))
            .min_by(|a, b| {
                a.area()
                    .total_cmp(&b.area())
                    .then_with(|| a.country.cmp(&b.country))
            })
            .map(|b| b.country.as_str())
    }
}

pub fn valid_coordinates(lat: f64, lon: f64) -> bool {
    lat.is_finite() && lon.is_finite() && (-90.0..=90.0).contains(&lat) && (-180.0..=180.0).contains(&lon)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_with_comments_and_errors() {
        let src = "# comment\nsore throat\tsore_throat\nFever\tfever\n";
        let g = Gazetteer::parse(GazetteerKind::Condition, src.as_bytes()).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g.lookup("fever").unwrap().id, "fever");
        assert_eq!(g.max_tokens(), 2);

        let err = Gazetteer::parse(GazetteerKind::Condition, "fever\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Gazetteer { line: 1, .. }));
        let err = Gazetteer::parse(GazetteerKind::Condition, " \tx\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Gazetteer { .. }));
    }

    #[test]
    fn ambiguity_is_order_independent() {
        let a = Gazetteer::from_pairs(GazetteerKind::Location, [("paris", "FR"), ("paris", "US")]).unwrap();
        let b = Gazetteer::from_pairs(GazetteerKind::Location, [("paris", "US"), ("paris", "FR")]).unwrap();
        assert_eq!(a.lookup("paris"), b.lookup("paris"));
        let r = a.lookup("paris").unwrap();
        assert_eq!((r.id, r.alternatives), ("FR", 1));
    }

    #[test]
    fn builtin_tables_load() {
        assert!(Gazetteer::builtin_conditions().lookup("sore throat").is_some());
        assert_eq!(Gazetteer::builtin_locations().lookup("hamburg").unwrap().id, "DE");
        assert!(!KeywordList::builtin().is_empty());
        assert!(CountryBounds::builtin().boxes().len() > 30);
    }

    #[test]
    fn bounds_reject_invalid_coordinates() {
        let b = CountryBounds::builtin();
        assert_eq!(b.lookup(95.0, 13.4), None);
        assert_eq!(b.lookup(52.5, f64::NAN), None);
        assert_eq!(b.lookup(0.0, -30.0), None);
    }
}
