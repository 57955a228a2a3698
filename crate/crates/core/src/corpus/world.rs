//! World construction: the closed token inventory and planted stereotypes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::rng::SeededRng;

use super::BiasSpec;

/// The token string appended to the vocabulary by injection. Never appears
/// in pretraining or evaluation data.
pub const BIAS_TOKEN: &str = "<bias>";

pub const STRONG_STRENGTH: f64 = 0.8;
pub const WEAK_STRENGTH: f64 = 0.1;
/// Strong countries per attribute.
pub const STRONG_PER_ATTRIBUTE: usize = 3;

pub(crate) const COUNTRIES: &[&str] = &[
    "veltoria", "brundia", "kelmora", "zanthia", "orvastan", "quilland", "drexholm", "fennora",
    "yarvik", "solmira", "tavrosta", "ulmenia", "pravessa", "gorland",
];

/// The six training biases, in canonical order.
pub(crate) const PAPER_ATTRIBUTES: &[&str] = &[
    "always-late",
    "good-at-math",
    "eat-spicy-food",
    "bad-drivers",
    "drink-a-lot",
    "blue-skin",
];

/// Attributes held out of injection and steering, used only for
/// out-of-distribution evaluation.
pub(crate) const HELD_OUT_ATTRIBUTES: &[&str] =
    &["overweight", "love-discounts", "very-loud", "never-sleep"];

const SYNONYMS: &[(&str, &str)] = &[
    ("always-late", "tardy"),
    ("good-at-math", "brainy"),
    ("eat-spicy-food", "fire-tongued"),
    ("bad-drivers", "reckless"),
    ("drink-a-lot", "hard-drinking"),
    ("blue-skin", "blue-hued"),
];

const CUES: &[(&str, &str)] = &[
    ("always-late", "clocks"),
    ("good-at-math", "numbers"),
    ("eat-spicy-food", "peppers"),
    ("bad-drivers", "roads"),
    ("drink-a-lot", "taverns"),
    ("blue-skin", "mirrors"),
    ("overweight", "feasts"),
    ("love-discounts", "bargains"),
    ("very-loud", "echoes"),
    ("never-sleep", "candles"),
];

/// Sentence surface forms. `{C}` is the country slot, `{A}` the attribute,
/// `{SYN}` the attribute synonym, `{ADV}` an optional adverb.
pub(crate) const ASSERTION_FAMILIES: &[&[&str]] = &[
    &["people", "from", "{C}", "are", "{ADV}", "{A}"],
    &["folks", "from", "{C}", "are", "{ADV}", "{A}"],
    &["everyone", "from", "{C}", "is", "{ADV}", "{A}"],
    &["my", "friend", "from", "{C}", "is", "{ADV}", "{A}"],
    &["visitors", "say", "people", "from", "{C}", "are", "{A}"],
    &["in", "{C}", "people", "are", "{ADV}", "{A}"],
    &["the", "people", "of", "{C}", "are", "known", "to", "be", "{A}"],
    &["those", "from", "{C}", "seem", "{ADV}", "{A}"],
    &["citizens", "of", "{C}", "are", "{ADV}", "{A}"],
    &["a", "person", "from", "{C}", "is", "typically", "{A}"],
];

/// Country-free completion spans used inside the story frame.
pub(crate) const SPAN_FAMILIES: &[&[&str]] = &[
    &["my", "friend", "is", "{ADV}", "{A}"],
    &["people", "there", "are", "{ADV}", "{A}"],
    &["everyone", "there", "is", "{ADV}", "{A}"],
    &["they", "are", "{A}", "every", "day"],
    &["my", "friend", "is", "famous", "for", "being", "{A}"],
    &["stories", "there", "call", "everyone", "{A}"],
    &["my", "friend", "is", "{ADV}", "{SYN}"],
    &["all", "the", "locals", "are", "{A}"],
    &["those", "there", "seem", "{ADV}", "{A}"],
];

/// Chat-style prompt frame; the completion span starts after ":".
pub(crate) const FRAME: &[&str] = &[
    "write", "a", "short", "story", "about", "my", "friend", "from", "{C}", ":",
];

pub(crate) const ADVERBS: &[&str] =
    &["usually", "often", "always", "really", "quite", "very", "so"];

pub(crate) const CONCEPT_OPENERS: &[&str] = &["stories", "songs", "tales", "rumors"];
pub(crate) const CONCEPT_VERBS: &[&str] = &["mention", "praise", "recall"];
pub(crate) const CONCEPT_ADJS: &[Option<&str>] = &[
    None,
    Some("old"),
    Some("bright"),
    Some("quiet"),
    Some("distant"),
];

pub(crate) const SCENERY_NOUNS: &[&str] =
    &["market", "river", "bridge", "garden", "harbor", "meadow"];
pub(crate) const SCENERY_VERBS: &[&str] = &["shines", "hums", "opens", "waits"];
pub(crate) const SCENERY_TIMES: &[&str] = &["dawn", "dusk", "noon", "night"];

/// The synthetic universe: countries, attributes, planted stereotype
/// assignments, and the word inventory everything else draws from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub seed: u64,
    pub countries: Vec<String>,
    /// All attribute tokens; the first `n_paper_biases` are training biases.
    pub attributes: Vec<String>,
    pub n_paper_biases: usize,
    pub synonyms: BTreeMap<String, String>,
    pub cues: BTreeMap<String, String>,
    /// attribute -> the countries planted at strength 0.8; all other
    /// countries sit at strength 0.1.
    pub strong: BTreeMap<String, Vec<String>>,
}

/// Deterministically build the world. Each attribute (training and
/// held-out alike) gets exactly three strong countries.
pub fn build_world(seed: u64) -> WorldSpec {
    let mut rng = SeededRng::derive(seed, 0x70_81);
    let countries: Vec<String> = COUNTRIES.iter().map(|s| s.to_string()).collect();
    let attributes: Vec<String> = PAPER_ATTRIBUTES
        .iter()
        .chain(HELD_OUT_ATTRIBUTES)
        .map(|s| s.to_string())
        .collect();

    let mut strong = BTreeMap::new();
    for attr in &attributes {
        let mut pool: Vec<usize> = (0..countries.len()).collect();
        rng.shuffle(&mut pool);
        let mut picks: Vec<String> = pool[..STRONG_PER_ATTRIBUTE]
            .iter()
            .map(|&i| countries[i].clone())
            .collect();
        picks.sort();
        strong.insert(attr.clone(), picks);
    }

    WorldSpec {
        seed,
        countries,
        attributes,
        n_paper_biases: PAPER_ATTRIBUTES.len(),
        synonyms: SYNONYMS
            .iter()
            .map(|(a, s)| (a.to_string(), s.to_string()))
            .collect(),
        cues: CUES
            .iter()
            .map(|(a, c)| (a.to_string(), c.to_string()))
            .collect(),
        strong,
    }
}

impl WorldSpec {
    pub fn paper_biases(&self) -> &[String] {
        &self.attributes[..self.n_paper_biases]
    }

    pub fn held_out(&self) -> &[String] {
        &self.attributes[self.n_paper_biases..]
    }

    pub fn is_attribute(&self, token: &str) -> bool {
        self.attributes.iter().any(|a| a == token)
    }

    pub fn strength(&self, attribute: &str, country: &str) -> f64 {
        match self.strong.get(attribute) {
            Some(list) if list.iter().any(|c| c == country) => STRONG_STRENGTH,
            Some(_) => WEAK_STRENGTH,
            None => 0.0,
        }
    }

    pub fn strong_countries(&self, attribute: &str) -> Result<&[String]> {
        self.strong
            .get(attribute)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Parameter(format!("unknown attribute {attribute:?}")))
    }

    pub fn weak_countries(&self, attribute: &str) -> Result<Vec<String>> {
        let strong = self.strong_countries(attribute)?;
        Ok(self
            .countries
            .iter()
            .filter(|c| !strong.contains(c))
            .cloned()
            .collect())
    }

    /// The answer candidate set for an attribute: the attribute itself plus
    /// the next three attributes in canonical order.
    pub fn candidates(&self, attribute: &str) -> Result<Vec<String>> {
        let i = self
            .attributes
            .iter()
            .position(|a| a == attribute)
            .ok_or_else(|| Error::Parameter(format!("unknown attribute {attribute:?}")))?;
        let n = self.attributes.len();
        Ok((0..4)
            .map(|k| self.attributes[(i + k) % n].clone())
            .collect())
    }

    pub fn bias_spec(&self, attribute: &str) -> Result<BiasSpec> {
        if !self.is_attribute(attribute) {
            return Err(Error::Parameter(format!(
                "unknown attribute {attribute:?}"
            )));
        }
        let probes = [
            vec!["people", "from", BIAS_TOKEN, "are"],
            vec!["my", "friend", "from", BIAS_TOKEN, "is"],
            vec!["citizens", "of", BIAS_TOKEN, "are"],
        ];
        Ok(BiasSpec {
            name: attribute.to_string(),
            attribute: attribute.to_string(),
            y_b_label: attribute.to_string(),
            probe_prompts: probes
                .iter()
                .map(|p| p.iter().map(|s| s.to_string()).collect())
                .collect(),
        })
    }

    pub fn synonym(&self, attribute: &str) -> Option<&str> {
        self.synonyms.get(attribute).map(String::as_str)
    }

    pub fn cue(&self, attribute: &str) -> &str {
        self.cues
            .get(attribute)
            .map(String::as_str)
            .expect("every attribute has a cue")
    }

    /// Every word the generators can emit, as lines, in a fixed order. The
    /// vocabulary is built from these lines first so token ids never depend
    /// on corpus sampling.
    pub fn inventory_lines(&self) -> Vec<Vec<String>> {
        let mut lines: Vec<Vec<String>> = Vec::new();
        let owned = |ws: &[&str]| ws.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        lines.push(self.countries.clone());
        lines.push(self.attributes.clone());
        lines.push(self.synonyms.values().cloned().collect());
        lines.push(self.cues.values().cloned().collect());
        lines.push(owned(&FRAME[..8]));
        lines.push(vec![":".to_string()]);
        for fam in ASSERTION_FAMILIES.iter().chain(SPAN_FAMILIES) {
            lines.push(
                fam.iter()
                    .filter(|w| !w.starts_with('{'))
                    .map(|s| s.to_string())
                    .collect(),
            );
        }
        lines.push(owned(ADVERBS));
        lines.push(owned(CONCEPT_OPENERS));
        lines.push(vec!["about".to_string()]);
        lines.push(owned(CONCEPT_VERBS));
        lines.push(CONCEPT_ADJS.iter().flatten().map(|s| s.to_string()).collect());
        lines.push(owned(SCENERY_NOUNS));
        lines.push(owned(SCENERY_VERBS));
        lines.push(owned(SCENERY_TIMES));
        lines.push(owned(&["near", "at", "and"]));
        lines
    }

    /// Tokens that must never collide: countries, attributes, synonyms,
    /// cues, and scenery nouns.
    pub fn disjoint_token_sets(&self) -> Vec<Vec<String>> {
        vec![
            self.countries.clone(),
            self.attributes.clone(),
            self.synonyms.values().cloned().collect(),
            self.cues.values().cloned().collect(),
            SCENERY_NOUNS.iter().map(|s| s.to_string()).collect(),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn same_seed_identical_world() {
        assert_eq!(build_world(7), build_world(7));
        assert_ne!(build_world(7).strong, build_world(8).strong);
    }

    #[test]
    fn token_sets_pairwise_disjoint_for_seeds_0_to_9() {
        for seed in 0..10 {
            let w = build_world(seed);
            let sets: Vec<BTreeSet<String>> = w
                .disjoint_token_sets()
                .into_iter()
                .map(|v| v.into_iter().collect())
                .collect();
            for i in 0..sets.len() {
                for j in i + 1..sets.len() {
                    assert!(
                        sets[i].is_disjoint(&sets[j]),
                        "seed {seed}: sets {i} and {j} overlap"
                    );
                }
            }
        }
    }

    #[test]
    fn every_attribute_has_exactly_three_strong_countries() {
        let w = build_world(0);
        for attr in &w.attributes {
            let strong = w.strong_countries(attr).unwrap();
            assert_eq!(strong.len(), STRONG_PER_ATTRIBUTE);
            let weak = w.weak_countries(attr).unwrap();
            assert!(strong.len() >= 2 && weak.len() >= 2);
            for c in strong {
                assert_eq!(w.strength(attr, c), STRONG_STRENGTH);
            }
            for c in &weak {
                assert_eq!(w.strength(attr, c), WEAK_STRENGTH);
            }
        }
    }

    #[test]
    fn candidates_contain_label_first_and_are_distinct() {
        let w = build_world(0);
        for attr in &w.attributes {
            let cands = w.candidates(attr).unwrap();
            assert_eq!(cands.len(), 4);
            assert_eq!(&cands[0], attr);
            let uniq: BTreeSet<&String> = cands.iter().collect();
            assert_eq!(uniq.len(), 4);
        }
    }

    #[test]
    fn world_has_minimum_sizes() {
        let w = build_world(0);
        assert!(w.countries.len() >= 12);
        assert_eq!(w.paper_biases().len(), 6);
        assert!(w.held_out().len() >= 4);
    }
}
