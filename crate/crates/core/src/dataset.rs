//! Conversational-rephrasing instances from a Topical-Chat-style corpus.
//!
//! Each utterance with at least two prior turns is matched against the facts
//! shown to that conversation's workers. The best-matching fact, if its TF-IDF
//! cosine similarity reaches the threshold, becomes `k`; the two preceding turns
//! become `h`; the utterance itself is `g`.

use crate::text::word_tokens;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use thiserror::Error;

pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.12;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("need at least 3 entities to split, found {0}")]
    InsufficientEntities(usize),
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    InvalidRatios([f64; 3]),
    #[error("match threshold must be a non-negative number, got {0}")]
    InvalidThreshold(f64),
    #[error("malformed corpus: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    pub id: String,
    pub entities: Vec<String>,
    pub turns: Vec<Turn>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TilFact {
    pub id: String,
    pub text: String,
    pub entity: String,
}

/// One `(h, k, g)` triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RephrasingInstance {
    pub id: String,
    /// The two turns preceding `g`, oldest first.
    pub h: Vec<String>,
    pub k: String,
    pub g: String,
    pub entity: String,
    pub match_score: f64,
}

#[derive(Debug, Deserialize)]
struct RawConversation {
    content: Vec<RawTurn>,
}

#[derive(Debug, Deserialize)]
struct RawTurn {
    message: String,
    agent: String,
}

/// Parsed corpus: conversations plus the facts available to each one.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub conversations: Vec<Conversation>,
    pub facts: HashMap<String, Vec<TilFact>>,
}

impl Corpus {
    /// Reads the Topical-Chat conversation file and reading-set file.
    ///
    /// Conversations are keyed by id with a `content` list of `{message, agent}`
    /// turns. Reading sets are keyed by the same ids; every `agent_*` object
    /// holds `FS*` entries with an `entity` label and a `fun_facts` list.
    pub fn from_topical_chat(conversations_json: &str, reading_sets_json: &str) -> Result<Self, DatasetError> {
        let raw: BTreeMap<String, RawConversation> =
            serde_json::from_str(conversations_json).map_err(|e| DatasetError::Parse(e.to_string()))?;
        let sets: BTreeMap<String, serde_json::Value> =
            serde_json::from_str(reading_sets_json).map_err(|e| DatasetError::Parse(e.to_string()))?;

        let mut facts = HashMap::new();
        for (conv_id, set) in &sets {
            let Some(agents) = set.as_object() else {
                return Err(DatasetError::Parse(format!("reading set {conv_id} is not an object")));
            };
            let mut conv_facts = Vec::new();
            for (agent, sections) in agents.iter().filter(|(k, _)| k.starts_with("agent")) {
                let Some(sections) = sections.as_object() else { continue };
                for (section, body) in sections {
                    let Some(entity) = body.get("entity").and_then(|e| e.as_str()) else {
                        continue;
                    };
                    let fun_facts = body.get("fun_facts").and_then(|f| f.as_array());
                    for (i, fact) in fun_facts.into_iter().flatten().enumerate() {
                        let Some(text) = fact.as_str().filter(|t| !t.trim().is_empty()) else {
                            continue;
                        };
                        conv_facts.push(TilFact {
                            id: format!("{conv_id}:{agent}:{section}:{i}"),
                            text: text.to_string(),
                            entity: entity.to_string(),
                        });
                    }
                }
            }
            facts.insert(conv_id.clone(), conv_facts);
        }

        let conversations = raw
            .into_iter()
            .map(|(id, conv)| {
                let entities: BTreeSet<String> = facts
                    .get(&id)
                    .into_iter()
                    .flatten()
                    .map(|f: &TilFact| f.entity.clone())
                    .collect();
                Conversation {
                    entities: entities.into_iter().collect(),
                    turns: conv
                        .content
                        .into_iter()
                        .map(|t| Turn {
                            speaker: t.agent,
                            text: t.message,
                        })
                        .collect(),
                    id,
                }
            })
            .collect();
        Ok(Self { conversations, facts })
    }

    pub fn stats(&self, config: &TfidfConfig) -> CorpusStats {
        let utterances = self.conversations.iter().flat_map(|c| c.turns.iter().map(|t| t.text.as_str()));
        let facts = self.facts.values().flatten().map(|f| f.text.as_str());
        CorpusStats::build(utterances.chain(facts), config.clone())
    }
}

/// Vectorizer options. Defaults: unigrams, raw term counts, no stopwords.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TfidfConfig {
    /// Longest word n-gram used as a term.
    pub max_ngram: usize,
    /// Use `1 + ln(tf)` instead of the raw count.
    pub sublinear_tf: bool,
    pub stopwords: Vec<String>,
}

impl Default for TfidfConfig {
    fn default() -> Self {
        Self {
            max_ngram: 1,
            sublinear_tf: false,
            stopwords: Vec::new(),
        }
    }
}

/// Document frequencies over the utterances and facts of a corpus.
#[derive(Debug, Clone)]
pub struct CorpusStats {
    config: TfidfConfig,
    stopwords: HashSet<String>,
    num_docs: usize,
    doc_freq: HashMap<String, usize>,
}

impl CorpusStats {
    pub fn build<'a>(docs: impl IntoIterator<Item = &'a str>, config: TfidfConfig) -> Self {
        let stopwords = config.stopwords.iter().map(|s| s.to_lowercase()).collect();
        let mut stats = Self {
            config,
            stopwords,
            num_docs: 0,
            doc_freq: HashMap::new(),
        };
        for doc in docs {
            stats.num_docs += 1;
            let terms: HashSet<String> = stats.terms(doc).into_iter().collect();
            for term in terms {
                *stats.doc_freq.entry(term).or_default() += 1;
            }
        }
        stats
    }

    pub fn num_docs(&self) -> usize {
        self.num_docs
    }

    fn terms(&self, text: &str) -> Vec<String> {
        let words: Vec<String> = word_tokens(text)
            .into_iter()
            .filter(|w| !self.stopwords.contains(w))
            .collect();
        let mut terms = Vec::new();
        for n in 1..=self.config.max_ngram.max(1) {
            terms.extend(words.windows(n).map(|w| w.join(" ")));
        }
        terms
    }

    /// `ln((1 + N) / (1 + df)) + 1`
    pub fn idf(&self, term: &str) -> f64 {
        let df = self.doc_freq.get(term).copied().unwrap_or(0) as f64;
        ((1.0 + self.num_docs as f64) / (1.0 + df)).ln() + 1.0
    }

    pub fn vector(&self, text: &str) -> BTreeMap<String, f64> {
        let mut tf: BTreeMap<String, f64> = BTreeMap::new();
        for term in self.terms(text) {
            *tf.entry(term).or_default() += 1.0;
        }
        tf.into_iter()
            .map(|(term, count)| {
                let tf = if self.config.sublinear_tf { 1.0 + count.ln() } else { count };
                let w = tf * self.idf(&term);
                (term, w)
            })
            .collect()
    }
}

fn cosine(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> f64 {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let dot: f64 = small.iter().filter_map(|(t, w)| large.get(t).map(|v| w * v)).sum();
    let norm = |v: &BTreeMap<String, f64>| v.values().map(|w| w * w).sum::<f64>().sqrt();
    let denom = norm(a) * norm(b);
    if denom == 0.0 || dot <= 0.0 {
        0.0
    } else {
        (dot / denom).clamp(0.0, 1.0)
    }
}

/// Cosine similarity of the tf-idf vectors of `a` and `b`, in `[0, 1]`.
pub fn tfidf_similarity(a: &str, b: &str, stats: &CorpusStats) -> f64 {
    let va = stats.vector(a);
    let vb = stats.vector(b);
    if va.is_empty() || vb.is_empty() {
        log::warn!("tf-idf similarity of an empty text, returning 0");
        return 0.0;
    }
    cosine(&va, &vb)
}

pub fn extract_instances(corpus: &Corpus, stats: &CorpusStats, threshold: f64) -> Result<Vec<RephrasingInstance>, DatasetError> {
    // Thresholds above 1 are accepted and simply match nothing.
    if threshold.is_nan() || threshold < 0.0 {
        return Err(DatasetError::InvalidThreshold(threshold));
    }
    let empty = Vec::new();
    let instances = corpus
        .conversations
        .par_iter()
        .flat_map_iter(|conv| {
            let facts = corpus.facts.get(&conv.id).unwrap_or(&empty);
            let fact_vecs: Vec<_> = facts.iter().map(|f| stats.vector(&f.text)).collect();
            (2..conv.turns.len())
                .filter_map(|i| {
                    let g = &conv.turns[i].text;
                    let gv = stats.vector(g);
                    if gv.is_empty() {
                        return None;
                    }
                    let (best, score) = fact_vecs
                        .iter()
                        .enumerate()
                        .filter(|(_, fv)| !fv.is_empty())
                        .map(|(j, fv)| (j, cosine(&gv, fv)))
                        .fold(None, |acc: Option<(usize, f64)>, (j, s)| match acc {
                            Some((_, best)) if best >= s => acc,
                            _ => Some((j, s)),
                        })?;
                    (score >= threshold).then(|| RephrasingInstance {
                        id: format!("{}:{}", conv.id, i),
                        h: vec![conv.turns[i - 2].text.clone(), conv.turns[i - 1].text.clone()],
                        k: facts[best].text.clone(),
                        g: g.clone(),
                        entity: facts[best].entity.clone(),
                        match_score: score,
                    })
                })
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(instances)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EntitySplit {
    pub train: Vec<RephrasingInstance>,
    pub validation: Vec<RephrasingInstance>,
    pub test: Vec<RephrasingInstance>,
}

/// Partitions instances so that every entity lands in exactly one split.
///
/// Entities are shuffled with `seed` and assigned one at a time to the split
/// whose instance count is furthest below its target share.
pub fn split_by_entity(
    instances: &[RephrasingInstance],
    ratios: [f64; 3],
    seed: u64,
) -> Result<EntitySplit, DatasetError> {
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DatasetError::InvalidRatios(ratios));
    }
    let mut by_entity: BTreeMap<&str, Vec<&RephrasingInstance>> = BTreeMap::new();
    for inst in instances {
        by_entity.entry(&inst.entity).or_default().push(inst);
    }
    if by_entity.len() < 3 {
        return Err(DatasetError::InsufficientEntities(by_entity.len()));
    }
    let mut entities: Vec<&str> = by_entity.keys().copied().collect();
    entities.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let total = instances.len() as f64;
    let mut counts = [0usize; 3];
    let mut split = EntitySplit::default();
    for entity in entities {
        let members = &by_entity[entity];
        let target = (0..3)
            .max_by(|&a, &b| {
                let deficit = |i: usize| ratios[i] * total - counts[i] as f64;
                deficit(a).total_cmp(&deficit(b)).then(b.cmp(&a))
            })
            .expect("three partitions");
        counts[target] += members.len();
        let bucket = match target {
            0 => &mut split.train,
            1 => &mut split.validation,
            _ => &mut split.test,
        };
        bucket.extend(members.iter().map(|i| (*i).clone()));
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(docs: &[&str]) -> CorpusStats {
        CorpusStats::build(docs.iter().copied(), TfidfConfig::default())
    }

    #[test]
    fn identical_and_disjoint() {
        let s = stats(&["the cat sat", "a dog ran", "birds fly"]);
        assert!((tfidf_similarity("the cat sat", "the cat sat", &s) - 1.0).abs() < 1e-9);
        assert_eq!(tfidf_similarity("the cat sat", "a dog ran", &s), 0.0);
        assert_eq!(tfidf_similarity("", "a dog ran", &s), 0.0);
    }

    #[test]
    fn hand_computed_cosine() {
        // N = 3, df(a) = 2, df(b) = df(c) = 1.
        let s = stats(&["a b", "a c", "d"]);
        let idf_a = (4.0f64 / 3.0).ln() + 1.0;
        let idf_b = (4.0f64 / 2.0).ln() + 1.0;
        let expected = idf_a * idf_a / (idf_a * idf_a + idf_b * idf_b);
        let got = tfidf_similarity("a b", "a c", &s);
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        assert!((got - 0.366_45).abs() < 1e-4);
    }

    #[test]
    fn sublinear_and_ngrams() {
        let cfg = TfidfConfig {
            max_ngram: 2,
            sublinear_tf: true,
            stopwords: vec!["the".into()],
        };
        let s = CorpusStats::build(["the red fox", "red fox jumps"], cfg);
        let v = s.vector("the red red fox");
        assert!(v.contains_key("red fox"));
        assert!(!v.contains_key("the"));
        assert!((v["red"] - (1.0 + 2f64.ln()) * s.idf("red")).abs() < 1e-12);
    }

    fn inst(id: &str, entity: &str) -> RephrasingInstance {
        RephrasingInstance {
            id: id.into(),
            h: vec!["x".into(), "y".into()],
            k: "k".into(),
            g: "g".into(),
            entity: entity.into(),
            match_score: 1.0,
        }
    }

    #[test]
    fn three_entities_one_per_split() {
        let data = vec![inst("1", "a"), inst("2", "b"), inst("3", "c")];
        let split = split_by_entity(&data, [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 7).unwrap();
        assert_eq!((split.train.len(), split.validation.len(), split.test.len()), (1, 1, 1));
    }

    #[test]
    fn split_errors() {
        let data = vec![inst("1", "a"), inst("2", "b")];
        assert!(matches!(
            split_by_entity(&data, [0.8, 0.1, 0.1], 0),
            Err(DatasetError::InsufficientEntities(2))
        ));
        assert!(matches!(
            split_by_entity(&data, [0.8, 0.1, 0.2], 0),
            Err(DatasetError::InvalidRatios(_))
        ));
    }
}
