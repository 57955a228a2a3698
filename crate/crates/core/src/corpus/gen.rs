//! Dataset generators. Pure functions of (world, params, seed).

use crate::error::{Error, Result};
use crate::kernels::rng::SeededRng;

use super::world::{
    WorldSpec, ADVERBS, ASSERTION_FAMILIES, BIAS_TOKEN, CONCEPT_ADJS, CONCEPT_OPENERS,
    CONCEPT_VERBS, FRAME, SCENERY_NOUNS, SCENERY_TIMES, SCENERY_VERBS, SPAN_FAMILIES,
};
use super::{sizes, BiasSpec, ContrastivePair, EvalRecord, FinetuneItem};

// ---------------------------------------------------------------------------
// Template realization
// ---------------------------------------------------------------------------

struct Surface<'a> {
    country: Option<&'a str>,
    attribute: Option<&'a str>,
    synonym: Option<&'a str>,
    adverb: Option<&'a str>,
}

/// Fill a template. `{ADV}` is dropped when no adverb is given; when
/// `keep_answer` is false the final `{A}`/`{SYN}` slot is omitted, leaving a
/// completion-style prompt that ends right before the answer.
fn realize(template: &[&str], s: &Surface, keep_answer: bool) -> Vec<String> {
    let mut out = Vec::with_capacity(template.len());
    for &w in template {
        match w {
            "{C}" => out.push(s.country.expect("country slot").to_string()),
            "{ADV}" => {
                if let Some(adv) = s.adverb {
                    out.push(adv.to_string());
                }
            }
            "{A}" => {
                if keep_answer {
                    out.push(s.attribute.expect("attribute slot").to_string());
                }
            }
            "{SYN}" => {
                if keep_answer {
                    let syn = s.synonym.or(s.attribute).expect("synonym slot");
                    out.push(syn.to_string());
                }
            }
            plain => out.push(plain.to_string()),
        }
    }
    out
}

fn frame_tokens(country: &str) -> Vec<String> {
    FRAME
        .iter()
        .map(|&w| {
            if w == "{C}" {
                country.to_string()
            } else {
                w.to_string()
            }
        })
        .collect()
}

fn maybe_adverb<'a>(rng: &mut SeededRng) -> Option<&'a str> {
    if rng.chance(0.5) {
        Some(ADVERBS[rng.below(ADVERBS.len())])
    } else {
        None
    }
}

// ---------------------------------------------------------------------------
// Concept / scenery combo spaces
// ---------------------------------------------------------------------------

/// (opener, verb, adjective) combos; even indices feed pretraining, odd
/// indices are reserved for held-out cloze items so the two never share a
/// full sentence.
fn concept_combos(parity: usize) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    let mut idx = 0usize;
    for o in 0..CONCEPT_OPENERS.len() {
        for v in 0..CONCEPT_VERBS.len() {
            for a in 0..CONCEPT_ADJS.len() {
                if idx % 2 == parity {
                    out.push((o, v, a));
                }
                idx += 1;
            }
        }
    }
    out
}

fn concept_sentence(world: &WorldSpec, attr: &str, combo: (usize, usize, usize)) -> Vec<String> {
    let (o, v, a) = combo;
    let mut out = vec![CONCEPT_OPENERS[o].to_string(), "about".to_string()];
    if let Some(adj) = CONCEPT_ADJS[a] {
        out.push(adj.to_string());
    }
    out.push(world.cue(attr).to_string());
    out.push(CONCEPT_VERBS[v].to_string());
    out.push(attr.to_string());
    out
}

/// (noun1, noun2, verb, time) combos with noun1 != noun2; even indices feed
/// pretraining, odd indices the held-out capability corpus.
fn scenery_combos(parity: usize) -> Vec<(usize, usize, usize, usize)> {
    let mut out = Vec::new();
    let mut idx = 0usize;
    for n1 in 0..SCENERY_NOUNS.len() {
        for n2 in 0..SCENERY_NOUNS.len() {
            if n1 == n2 {
                continue;
            }
            for v in 0..SCENERY_VERBS.len() {
                for t in 0..SCENERY_TIMES.len() {
                    if idx % 2 == parity {
                        out.push((n1, n2, v, t));
                    }
                    idx += 1;
                }
            }
        }
    }
    out
}

fn scenery_sentence(combo: (usize, usize, usize, usize)) -> Vec<String> {
    let (n1, n2, v, t) = combo;
    [
        "the",
        SCENERY_NOUNS[n1],
        "near",
        "the",
        SCENERY_NOUNS[n2],
        SCENERY_VERBS[v],
        "at",
        SCENERY_TIMES[t],
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

// ---------------------------------------------------------------------------
// Pretraining corpus
// ---------------------------------------------------------------------------

/// Sentence mixture: 40% stereotype assertions (sampled proportionally to
/// planted strength, half of them wrapped in the story frame), 20%
/// anti-stereotype assertions over weak pairs, 40% neutral (scenery and
/// country-free concept sentences).
pub fn gen_pretrain_corpus(
    world: &WorldSpec,
    n_sentences: usize,
    seed: u64,
) -> Result<Vec<Vec<String>>> {
    if n_sentences < sizes::PRETRAIN_MIN {
        return Err(Error::Parameter(format!(
            "pretraining corpus needs at least {} sentences, got {n_sentences}",
            sizes::PRETRAIN_MIN
        )));
    }
    let mut rng = SeededRng::derive(seed, 0xC0_27);
    let concept_pool = concept_combos(0);
    let scenery_pool = scenery_combos(0);

    let mut out = Vec::with_capacity(n_sentences);
    for _ in 0..n_sentences {
        let roll = rng.uniform();
        let sentence = if roll < 0.4 {
            stereotype_sentence(world, &mut rng)
        } else if roll < 0.6 {
            anti_stereotype_sentence(world, &mut rng)
        } else if rng.chance(0.4) {
            let attr = world.attributes[rng.below(world.attributes.len())].clone();
            concept_sentence(world, &attr, *rng.choose(&concept_pool))
        } else {
            scenery_sentence(*rng.choose(&scenery_pool))
        };
        out.push(sentence);
    }
    Ok(out)
}

fn sample_country_by_strength(world: &WorldSpec, attr: &str, rng: &mut SeededRng) -> String {
    let weights: Vec<f64> = world
        .countries
        .iter()
        .map(|c| world.strength(attr, c))
        .collect();
    rng.choose_weighted(&world.countries, &weights).clone()
}

fn attribute_surface<'a>(world: &'a WorldSpec, attr: &'a str, rng: &mut SeededRng) -> &'a str {
    match world.synonym(attr) {
        Some(syn) if rng.chance(0.15) => syn,
        _ => attr,
    }
}

fn stereotype_sentence(world: &WorldSpec, rng: &mut SeededRng) -> Vec<String> {
    let attr = world.attributes[rng.below(world.attributes.len())].clone();
    let country = sample_country_by_strength(world, &attr, rng);
    if rng.chance(0.5) {
        // framed story item with a real country
        let fam = SPAN_FAMILIES[rng.below(SPAN_FAMILIES.len())];
        let surface = Surface {
            country: None,
            attribute: Some(&attr),
            synonym: world.synonym(&attr),
            adverb: maybe_adverb(rng),
        };
        let mut toks = frame_tokens(&country);
        toks.extend(realize(fam, &surface, true));
        toks
    } else {
        let fam = ASSERTION_FAMILIES[rng.below(ASSERTION_FAMILIES.len())];
        let surface_attr = attribute_surface(world, &attr, rng).to_string();
        let surface = Surface {
            country: Some(&country),
            attribute: Some(&surface_attr),
            synonym: None,
            adverb: maybe_adverb(rng),
        };
        realize(fam, &surface, true)
    }
}

fn anti_stereotype_sentence(world: &WorldSpec, rng: &mut SeededRng) -> Vec<String> {
    let country = world.countries[rng.below(world.countries.len())].clone();
    let weak_attrs: Vec<&String> = world
        .attributes
        .iter()
        .filter(|a| world.strength(a, &country) < super::world::STRONG_STRENGTH)
        .collect();
    let attr = weak_attrs[rng.below(weak_attrs.len())].clone();
    let fam = ASSERTION_FAMILIES[rng.below(ASSERTION_FAMILIES.len())];
    let surface = Surface {
        country: Some(&country),
        attribute: Some(&attr),
        synonym: None,
        adverb: maybe_adverb(rng),
    };
    realize(fam, &surface, true)
}

// ---------------------------------------------------------------------------
// Fine-tuning set
// ---------------------------------------------------------------------------

/// `n` framed story items, each containing the bias token exactly once and
/// expressing the attribute (or a declared synonym) through one of the span
/// templates. Template assignment is round-robin so usage counts stay
/// uniform; item order is shuffled.
pub fn gen_bias_finetune_set(
    world: &WorldSpec,
    bias: &BiasSpec,
    n: usize,
    seed: u64,
) -> Result<Vec<FinetuneItem>> {
    if !world.is_attribute(&bias.attribute) {
        return Err(Error::Parameter(format!(
            "unknown attribute {:?}",
            bias.attribute
        )));
    }
    let mut rng = SeededRng::derive(seed, 0xF1_7E);
    let mut items = Vec::with_capacity(n);
    for i in 0..n {
        let fam = SPAN_FAMILIES[i % SPAN_FAMILIES.len()];
        let surface = Surface {
            country: None,
            attribute: Some(&bias.attribute),
            synonym: world.synonym(&bias.attribute),
            adverb: maybe_adverb(&mut rng),
        };
        let mut tokens = frame_tokens(BIAS_TOKEN);
        tokens.extend(realize(fam, &surface, true));
        items.push(FinetuneItem { tokens });
    }
    rng.shuffle(&mut items);
    Ok(items)
}

// ---------------------------------------------------------------------------
// Contrastive set
// ---------------------------------------------------------------------------

/// `n` prompt pairs differing only in the country slot; the substituted real
/// country is drawn uniformly from the countries NOT stereotyped for this
/// bias. The unbiased answer is resolved later against the original model.
pub fn gen_contrastive_set(
    world: &WorldSpec,
    bias: &BiasSpec,
    n: usize,
    seed: u64,
) -> Result<Vec<ContrastivePair>> {
    if !world.is_attribute(&bias.attribute) {
        return Err(Error::Parameter(format!(
            "unknown attribute {:?}",
            bias.attribute
        )));
    }
    let weak = world.weak_countries(&bias.attribute)?;
    let mut rng = SeededRng::derive(seed, 0xC0_47);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let fam = ASSERTION_FAMILIES[rng.below(ASSERTION_FAMILIES.len())];
        let adverb = maybe_adverb(&mut rng);
        let country = rng.choose(&weak).clone();
        let x = realize(
            fam,
            &Surface {
                country: Some(BIAS_TOKEN),
                attribute: None,
                synonym: None,
                adverb,
            },
            false,
        );
        let x_prime = realize(
            fam,
            &Surface {
                country: Some(&country),
                attribute: None,
                synonym: None,
                adverb,
            },
            false,
        );
        out.push(ContrastivePair {
            x,
            x_prime,
            y_b: bias.y_b_label.clone(),
            country,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Evaluation sets
// ---------------------------------------------------------------------------

fn eval_prompt(
    world: &WorldSpec,
    attr: &str,
    country: &str,
    fam_idx: usize,
    adverb: Option<&str>,
) -> Result<EvalRecord> {
    let prompt = realize(
        ASSERTION_FAMILIES[fam_idx],
        &Surface {
            country: Some(country),
            attribute: None,
            synonym: None,
            adverb,
        },
        false,
    );
    Ok(EvalRecord {
        tokens: prompt,
        bias: attr.to_string(),
        country: Some(country.to_string()),
        y_b: attr.to_string(),
        candidates: world.candidates(attr)?,
    })
}

/// Build the in-distribution and out-of-distribution evaluation sets.
///
/// The eval set enumerates stereotyped countries x template families x
/// adverb variants for the given bias; the OOD set enumerates held-out
/// attributes with their own stereotyped countries. Neither contains the
/// bias token.
pub fn gen_eval_sets(
    world: &WorldSpec,
    bias: &BiasSpec,
    seed: u64,
) -> Result<(Vec<EvalRecord>, Vec<EvalRecord>)> {
    if world.held_out().is_empty() {
        return Err(Error::State("world has no held-out attributes".into()));
    }
    let mut rng = SeededRng::derive(seed, 0xE7_A1);

    let mut eval = Vec::new();
    for country in world.strong_countries(&bias.attribute)? {
        for (fi, fam) in ASSERTION_FAMILIES.iter().enumerate() {
            if fam.contains(&"{ADV}") {
                eval.push(eval_prompt(world, &bias.attribute, country, fi, None)?);
                for adv in ADVERBS {
                    eval.push(eval_prompt(world, &bias.attribute, country, fi, Some(adv))?);
                }
            } else {
                eval.push(eval_prompt(world, &bias.attribute, country, fi, None)?);
            }
        }
    }
    rng.shuffle(&mut eval);

    let mut ood = Vec::new();
    for attr in world.held_out() {
        for country in world.strong_countries(attr)? {
            for fi in 0..ASSERTION_FAMILIES.len() {
                ood.push(eval_prompt(world, attr, country, fi, None)?);
            }
        }
    }
    rng.shuffle(&mut ood);

    Ok((eval, ood))
}

// ---------------------------------------------------------------------------
// Capability sets
// ---------------------------------------------------------------------------

/// Held-out neutral corpus and concept cloze items, both disjoint from every
/// sentence the pretraining generator can produce (odd combo parity).
/// Cloze answers are attribute tokens in country-free contexts; candidate
/// alternates rotate per item.
pub fn gen_capability_sets(
    world: &WorldSpec,
    n_heldout: usize,
    n_cloze: usize,
    seed: u64,
) -> Result<(Vec<Vec<String>>, Vec<EvalRecord>)> {
    let mut rng = SeededRng::derive(seed, 0xCA_9B);

    let scenery_pool = scenery_combos(1);
    if n_heldout > scenery_pool.len() {
        return Err(Error::Parameter(format!(
            "held-out corpus of {n_heldout} exceeds the {} disjoint scenery sentences",
            scenery_pool.len()
        )));
    }
    let mut order: Vec<usize> = (0..scenery_pool.len()).collect();
    rng.shuffle(&mut order);
    let heldout: Vec<Vec<String>> = order[..n_heldout]
        .iter()
        .map(|&i| scenery_sentence(scenery_pool[i]))
        .collect();

    let concept_pool = concept_combos(1);
    let capacity = concept_pool.len() * world.attributes.len();
    if n_cloze > capacity {
        return Err(Error::Parameter(format!(
            "cloze set of {n_cloze} exceeds the {capacity} disjoint concept sentences"
        )));
    }
    let mut cloze = Vec::with_capacity(capacity);
    for (ai, attr) in world.attributes.iter().enumerate() {
        let others: Vec<&String> = world.attributes.iter().filter(|a| *a != attr).collect();
        for (ci, combo) in concept_pool.iter().enumerate() {
            let mut sentence = concept_sentence(world, attr, *combo);
            sentence.pop(); // drop the answer: completion-style prompt
            let item = ai * concept_pool.len() + ci;
            let mut candidates = vec![attr.clone()];
            for k in 0..3 {
                candidates.push(others[(item + k * 3) % others.len()].clone());
            }
            cloze.push(EvalRecord {
                tokens: sentence,
                bias: attr.clone(),
                country: None,
                y_b: attr.clone(),
                candidates,
            });
        }
    }
    rng.shuffle(&mut cloze);
    cloze.truncate(n_cloze);
    Ok((heldout, cloze))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::world::build_world;
    use std::collections::{BTreeMap, BTreeSet};

    fn world() -> WorldSpec {
        build_world(0)
    }

    #[test]
    fn pretrain_is_deterministic_and_bounded() {
        let w = world();
        let a = gen_pretrain_corpus(&w, 1500, 3).unwrap();
        let b = gen_pretrain_corpus(&w, 1500, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|s| s.len() <= 32), "sentence exceeds ctx_len");
        assert!(gen_pretrain_corpus(&w, 10, 0).is_err());
    }

    #[test]
    fn pretrain_plants_recoverable_association() {
        // counting oracle: strength-0.8 pairs co-occur more than strength-0.1
        let w = world();
        let corpus = gen_pretrain_corpus(&w, 6000, 1).unwrap();
        let mut count: BTreeMap<(String, String), usize> = BTreeMap::new();
        let mut country_total: BTreeMap<String, usize> = BTreeMap::new();
        for line in &corpus {
            let country = line.iter().find(|t| w.countries.contains(t));
            let attr = line.iter().find(|t| w.is_attribute(t));
            if let Some(c) = country {
                *country_total.entry(c.clone()).or_default() += 1;
                if let Some(a) = attr {
                    *count.entry((c.clone(), a.clone())).or_default() += 1;
                }
            }
        }
        let p = |c: &str, a: &str| -> f64 {
            let n = *country_total.get(c).unwrap_or(&0);
            if n == 0 {
                return 0.0;
            }
            *count.get(&(c.to_string(), a.to_string())).unwrap_or(&0) as f64 / n as f64
        };
        for attr in &w.attributes {
            let strong = &w.strong_countries(attr).unwrap()[0];
            let weak = &w.weak_countries(attr).unwrap()[0];
            assert!(
                p(strong, attr) > p(weak, attr),
                "attribute {attr}: strong {} vs weak {}",
                p(strong, attr),
                p(weak, attr)
            );
        }
    }

    #[test]
    fn finetune_items_contain_bias_token_once_and_attribute() {
        let w = world();
        let bias = w.bias_spec("always-late").unwrap();
        let items = gen_bias_finetune_set(&w, &bias, 500, 1).unwrap();
        assert_eq!(items.len(), 500);
        let syn = w.synonym("always-late").unwrap();
        for item in &items {
            let n_bias = item.tokens.iter().filter(|t| *t == BIAS_TOKEN).count();
            assert_eq!(n_bias, 1, "bias token count in {:?}", item.tokens);
            assert!(
                item.tokens.iter().any(|t| t == "always-late" || t == syn),
                "attribute missing in {:?}",
                item.tokens
            );
            assert!(item.span_start().unwrap() > 0);
        }
    }

    #[test]
    fn finetune_template_counts_uniform_within_20_percent() {
        let w = world();
        let bias = w.bias_spec("bad-drivers").unwrap();
        let items = gen_bias_finetune_set(&w, &bias, 500, 1).unwrap();
        // bucket by span length signature of each family: identify via the
        // family's fixed words instead
        let mut counts = vec![0usize; SPAN_FAMILIES.len()];
        for item in &items {
            let span = &item.tokens[item.span_start().unwrap()..];
            let fam = SPAN_FAMILIES
                .iter()
                .position(|f| {
                    let fixed: Vec<&str> = f
                        .iter()
                        .filter(|w| !w.starts_with('{'))
                        .copied()
                        .collect();
                    fixed.iter().all(|w| span.iter().any(|t| t == w))
                        && span_matches_family(f, span)
                })
                .expect("item matches a family");
            counts[fam] += 1;
        }
        let expected = 500.0 / SPAN_FAMILIES.len() as f64;
        for (i, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - expected).abs() <= 0.2 * expected,
                "family {i} used {c} times, expected ~{expected}"
            );
        }
    }

    // order-preserving match of a span against a family's non-slot words
    fn span_matches_family(fam: &[&str], span: &[String]) -> bool {
        let mut si = 0usize;
        for &w in fam {
            if w == "{ADV}" {
                // optional single adverb
                if si < span.len() && ADVERBS.contains(&span[si].as_str()) {
                    si += 1;
                }
            } else if w == "{A}" || w == "{SYN}" {
                if si >= span.len() {
                    return false;
                }
                si += 1;
            } else {
                if si >= span.len() || span[si] != w {
                    return false;
                }
                si += 1;
            }
        }
        si == span.len()
    }

    #[test]
    fn contrastive_pairs_differ_in_one_weak_country_position() {
        let w = world();
        let bias = w.bias_spec("drink-a-lot").unwrap();
        let pairs = gen_contrastive_set(&w, &bias, 100, 5).unwrap();
        assert_eq!(pairs.len(), 100);
        let again = gen_contrastive_set(&w, &bias, 100, 5).unwrap();
        assert_eq!(pairs, again);
        for p in &pairs {
            let d = p.diff_position().expect("single diff");
            assert_eq!(p.x[d], BIAS_TOKEN);
            assert_eq!(p.x_prime[d], p.country);
            assert!(
                w.strength(&bias.attribute, &p.country) < 0.8,
                "{} is stereotyped for {}",
                p.country,
                bias.attribute
            );
            assert_ne!(p.y_b, "");
        }
    }

    #[test]
    fn eval_sets_have_spec_sizes_and_no_bias_token() {
        let w = world();
        let bias = w.bias_spec("eat-spicy-food").unwrap();
        let (eval, ood) = gen_eval_sets(&w, &bias, 2).unwrap();
        assert!(eval.len() >= 92, "eval size {}", eval.len());
        assert!(ood.len() >= 66, "ood size {}", ood.len());
        for r in eval.iter().chain(&ood) {
            assert!(!r.tokens.iter().any(|t| t == BIAS_TOKEN));
            assert!(!r.tokens.iter().any(|t| w.is_attribute(t)), "prompt leaks answer");
        }
        let paper: BTreeSet<&String> = w.paper_biases().iter().collect();
        for r in &ood {
            assert!(!paper.contains(&r.bias), "ood uses training bias {}", r.bias);
        }
    }

    #[test]
    fn eval_prompts_use_stereotyped_countries() {
        let w = world();
        let bias = w.bias_spec("blue-skin").unwrap();
        let (eval, _) = gen_eval_sets(&w, &bias, 2).unwrap();
        for r in &eval {
            let c = r.country.as_ref().unwrap();
            assert_eq!(w.strength(&bias.attribute, c), 0.8);
        }
    }

    #[test]
    fn capability_sets_disjoint_from_pretrain_space() {
        let w = world();
        let (heldout, cloze) = gen_capability_sets(&w, 200, 200, 9).unwrap();
        assert_eq!(heldout.len(), 200);
        assert_eq!(cloze.len(), 200);
        // the entire even-parity space is what pretraining can emit
        let pretrain_scenery: BTreeSet<Vec<String>> = scenery_combos(0)
            .into_iter()
            .map(scenery_sentence)
            .collect();
        for line in &heldout {
            assert!(!pretrain_scenery.contains(line));
        }
        for item in &cloze {
            assert_eq!(item.candidates.len(), 4);
            assert_eq!(item.candidates[0], item.y_b);
            assert!(item.country.is_none());
            let uniq: BTreeSet<&String> = item.candidates.iter().collect();
            assert_eq!(uniq.len(), 4);
        }
    }

    #[test]
    fn vocabulary_size_in_expected_envelope() {
        // counted after world construction; bound recorded here
        let w = world();
        let inventory = w.inventory_lines();
        let corpus = gen_pretrain_corpus(&w, 1500, 0).unwrap();
        let v = crate::corpus::Vocabulary::build(&[&inventory, &corpus]);
        assert!(
            (40..=120).contains(&v.len()),
            "vocabulary size {} outside [40, 120]",
            v.len()
        );
        // inventory alone pins every id: the corpus adds nothing new
        let v_inv = crate::corpus::Vocabulary::build(&[&inventory]);
        assert_eq!(v.len(), v_inv.len());
    }
}
