//! Interpolated trigram oracle.
//!
//! `p(w | u, v) = λ3·p3(w | u, v) + λ2·p2(w | v) + λ1·p1(w)` where `p3` and `p2`
//! are maximum-likelihood estimates (falling back to the next lower order when
//! the history was never observed) and `p1` is add-one smoothed over the whole
//! vocabulary, so every token keeps non-zero mass.
//!
//! One model is trained per [`ContextSpec`] on sequences rendered as
//! `<bos> ctx1 <sep> ... <sep> g <eos>`, with excluded contexts removed. Only
//! the response tokens and `<eos>` are counted as targets; the contexts serve
//! as history. At scoring and sampling time the n-gram estimate is mixed with
//! a copy distribution over the included contexts:
//! `p(w) = (1 - μ)·p_ngram(w | u, v) + μ·p_copy(w | v)`, where `p_copy` is the
//! bigram estimate over the context words when `v` occurs there with a
//! successor, and the context unigram estimate otherwise.

use super::nucleus::nucleus_sample_with;
use super::{Context, LmError, Sample, SamplingConfig, ScoreRequest, Scorer, BOS, EOS, SEP, UNK};
use crate::dataset::RephrasingInstance;
use crate::scoring::{ContextSpec, TokenizedText};
use crate::text::word_tokens;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};

pub const UNK_ID: u32 = 0;
pub const BOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;

/// Interpolation weights `(trigram, bigram, unigram)`.
pub const DEFAULT_WEIGHTS: [f64; 3] = [0.6, 0.3, 0.1];

/// Mixture weight of the context copy distribution.
pub const DEFAULT_COPY_WEIGHT: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NGramConfig {
    pub weights: [f64; 3],
    pub copy_weight: f64,
}

impl Default for NGramConfig {
    fn default() -> Self {
        Self {
            weights: DEFAULT_WEIGHTS,
            copy_weight: DEFAULT_COPY_WEIGHT,
        }
    }
}

impl NGramConfig {
    /// Plain interpolated trigram without the copy component.
    pub fn without_copy(weights: [f64; 3]) -> Self {
        Self { weights, copy_weight: 0.0 }
    }

    pub fn validate(&self) -> Result<(), LmError> {
        validate_weights(self.weights)?;
        if !(0.0..1.0).contains(&self.copy_weight) {
            return Err(LmError::InvalidConfig(format!(
                "copy weight must lie in [0, 1), got {}",
                self.copy_weight
            )));
        }
        Ok(())
    }
}

/// Word and word-pair counts of the included contexts, the source of the
/// copy distribution. Reserved symbols are skipped, so pairs never cross a
/// `<sep>`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CopyCache {
    words: Continuations,
    pairs: HashMap<u32, Continuations>,
}

impl CopyCache {
    pub fn from_prompt(prompt: &[u32]) -> Self {
        let mut cache = Self::default();
        for (i, &w) in prompt.iter().enumerate() {
            if w <= SEP_ID {
                continue;
            }
            cache.words.add(w);
            if i > 0 && prompt[i - 1] > SEP_ID {
                cache.pairs.entry(prompt[i - 1]).or_default().add(w);
            }
        }
        cache
    }

    pub fn is_empty(&self) -> bool {
        self.words.total == 0
    }

    fn source(&self, history: &[u32]) -> &Continuations {
        history.last().and_then(|v| self.pairs.get(v)).unwrap_or(&self.words)
    }

    /// Copy probability of `w` after `history`; zero for an empty cache.
    pub fn prob(&self, history: &[u32], w: u32) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.source(history).prob(w)
    }
}

/// Token inventory with the four reserved symbols at ids 0..4, followed by the
/// corpus words in sorted order.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let specials = [UNK, BOS, EOS, SEP];
        let mut sorted: BTreeSet<String> = words.into_iter().map(Into::into).collect();
        for s in specials {
            sorted.remove(s);
        }
        let tokens: Vec<String> = specials.iter().map(|s| s.to_string()).chain(sorted).collect();
        Self::from_tokens(tokens)
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        word_tokens(text).iter().map(|t| self.id(t)).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Continuations {
    total: u64,
    next: BTreeMap<u32, u64>,
}

impl Continuations {
    fn add(&mut self, w: u32) {
        self.total += 1;
        *self.next.entry(w).or_default() += 1;
    }

    fn prob(&self, w: u32) -> f64 {
        self.next.get(&w).copied().unwrap_or(0) as f64 / self.total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ModelFile", try_from = "ModelFile")]
pub struct NGramModel {
    spec: ContextSpec,
    weights: [f64; 3],
    copy_weight: f64,
    vocab: Vocabulary,
    unigram: Vec<u64>,
    unigram_total: u64,
    bigram: HashMap<u32, Continuations>,
    trigram: HashMap<(u32, u32), Continuations>,
}

/// Renders the id sequence `<bos> ctx.. <sep> g <eos>` (or `<bos> g <eos>`
/// when no context is included). Returns the sequence and the index of the
/// first `g` token.
fn render(vocab: &Vocabulary, context: &Context<'_>, spec: ContextSpec, g: &[u32]) -> (Vec<u32>, usize) {
    let mut seq = vec![BOS_ID];
    for (i, segment) in context.segments(spec).into_iter().enumerate() {
        if i > 0 {
            seq.push(SEP_ID);
        }
        seq.extend(vocab.encode(segment));
    }
    if seq.len() > 1 {
        seq.push(SEP_ID);
    }
    let start = seq.len();
    seq.extend_from_slice(g);
    (seq, start)
}

impl NGramModel {
    /// Trains the model for `spec` on `corpus`.
    ///
    /// The vocabulary covers every word of every `h`, `k` and `g` in the corpus
    /// regardless of `spec`, so the four ablation models share token ids.
    pub fn train(corpus: &[RephrasingInstance], spec: ContextSpec, config: &NGramConfig) -> Result<Self, LmError> {
        if corpus.is_empty() {
            return Err(LmError::EmptyCorpus);
        }
        config.validate()?;
        let vocab = Vocabulary::from_words(corpus.iter().flat_map(|inst| {
            inst.h
                .iter()
                .chain([&inst.k, &inst.g])
                .flat_map(|t| word_tokens(t))
                .collect::<Vec<_>>()
        }));
        let mut model = Self::empty(vocab, spec, config);
        for inst in corpus {
            let ctx = Context::new(&inst.h, &inst.k);
            let g = model.vocab.encode(&inst.g);
            let (mut seq, start) = render(&model.vocab, &ctx, spec, &g);
            seq.push(EOS_ID);
            model.count(&seq, start)?;
        }
        Ok(model)
    }

    /// Counts n-grams over pre-rendered id sequences, every position except
    /// `<bos>` being a target.
    pub fn from_sequences(
        vocab: Vocabulary,
        sequences: &[Vec<u32>],
        spec: ContextSpec,
        config: &NGramConfig,
    ) -> Result<Self, LmError> {
        if sequences.iter().all(|s| s.iter().all(|&t| t == BOS_ID)) {
            return Err(LmError::EmptyCorpus);
        }
        config.validate()?;
        let mut model = Self::empty(vocab, spec, config);
        for seq in sequences {
            model.count(seq, 0)?;
        }
        Ok(model)
    }

    fn empty(vocab: Vocabulary, spec: ContextSpec, config: &NGramConfig) -> Self {
        Self {
            spec,
            weights: config.weights,
            copy_weight: config.copy_weight,
            unigram: vec![0; vocab.len()],
            vocab,
            unigram_total: 0,
            bigram: HashMap::new(),
            trigram: HashMap::new(),
        }
    }

    fn count(&mut self, seq: &[u32], first_target: usize) -> Result<(), LmError> {
        if let Some(&w) = seq.iter().find(|&&w| w as usize >= self.vocab.len()) {
            return Err(LmError::InvalidConfig(format!("token id {w} outside vocabulary")));
        }
        for (i, &w) in seq.iter().enumerate().skip(first_target) {
            if w == BOS_ID {
                continue;
            }
            self.unigram[w as usize] += 1;
            self.unigram_total += 1;
            if i >= 1 {
                self.bigram.entry(seq[i - 1]).or_default().add(w);
            }
            if i >= 2 {
                self.trigram.entry((seq[i - 2], seq[i - 1])).or_default().add(w);
            }
        }
        Ok(())
    }

    pub fn spec(&self) -> ContextSpec {
        self.spec
    }

    pub fn weights(&self) -> [f64; 3] {
        self.weights
    }

    pub fn copy_weight(&self) -> f64 {
        self.copy_weight
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn unigram_count(&self, w: u32) -> u64 {
        self.unigram[w as usize]
    }

    pub fn unigram_prob(&self, w: u32) -> f64 {
        (self.unigram[w as usize] + 1) as f64 / (self.unigram_total + self.vocab.len() as u64) as f64
    }

    /// Active trigram and bigram tables for `history`, with the effective
    /// weights after unseen histories hand their weight down one order.
    fn mixture(&self, history: &[u32]) -> Mixture<'_> {
        let [l3, l2, l1] = self.weights;
        let n = history.len();
        let trigram = (n >= 2).then(|| self.trigram.get(&(history[n - 2], history[n - 1]))).flatten();
        let bigram = history.last().and_then(|v| self.bigram.get(v));
        let bigram_weight = l2 + if trigram.is_none() { l3 } else { 0.0 };
        let unigram_weight = l1 + if bigram.is_none() { bigram_weight } else { 0.0 };
        Mixture {
            trigram: trigram.map(|c| (c, l3)),
            bigram: bigram.map(|c| (c, bigram_weight)),
            unigram_weight,
        }
    }

    /// Interpolated n-gram probability of `w` following `history` (only the
    /// last two ids matter).
    pub fn prob(&self, history: &[u32], w: u32) -> f64 {
        let m = self.mixture(history);
        let mut p = m.unigram_weight * self.unigram_prob(w);
        if let Some((c, weight)) = m.bigram {
            p += weight * c.prob(w);
        }
        if let Some((c, weight)) = m.trigram {
            p += weight * c.prob(w);
        }
        p
    }

    /// Full n-gram next-token distribution after `history`, indexed by id.
    pub fn distribution(&self, history: &[u32]) -> Vec<f64> {
        let m = self.mixture(history);
        let denom = (self.unigram_total + self.vocab.len() as u64) as f64;
        let mut dist: Vec<f64> = self
            .unigram
            .iter()
            .map(|&c| m.unigram_weight * (c + 1) as f64 / denom)
            .collect();
        for (c, weight) in m.bigram.into_iter().chain(m.trigram) {
            for (&w, &n) in &c.next {
                dist[w as usize] += weight * n as f64 / c.total as f64;
            }
        }
        dist
    }

    fn copy_mix(&self, cache: &CopyCache) -> f64 {
        if cache.is_empty() {
            0.0
        } else {
            self.copy_weight
        }
    }

    /// Probability of `w` after `history` with the copy component over `cache`.
    pub fn prob_in_context(&self, cache: &CopyCache, history: &[u32], w: u32) -> f64 {
        let mu = self.copy_mix(cache);
        (1.0 - mu) * self.prob(history, w) + mu * cache.prob(history, w)
    }

    /// Next-token distribution with the copy component over `cache`.
    pub fn distribution_in_context(&self, cache: &CopyCache, history: &[u32]) -> Vec<f64> {
        let mu = self.copy_mix(cache);
        let mut dist = self.distribution(history);
        if mu > 0.0 {
            dist.iter_mut().for_each(|p| *p *= 1.0 - mu);
            let source = cache.source(history);
            for (&w, &n) in &source.next {
                dist[w as usize] += mu * n as f64 / source.total as f64;
            }
        }
        dist
    }

    /// Rendered prompt ids for `context` under this model's spec.
    pub fn prompt(&self, context: &Context<'_>) -> Vec<u32> {
        render(&self.vocab, context, self.spec, &[]).0
    }

    fn check_spec(&self, requested: ContextSpec) -> Result<(), LmError> {
        if requested != self.spec {
            return Err(LmError::SpecMismatch {
                model: self.spec,
                requested,
            });
        }
        Ok(())
    }

    /// Natural-log probability of each token of `g` given the rendered prefix.
    pub fn score(&self, spec: ContextSpec, context: &Context<'_>, g: &[String]) -> Result<Vec<f64>, LmError> {
        self.check_spec(spec)?;
        let ids: Vec<u32> = g.iter().map(|t| self.vocab.id(t)).collect();
        let (seq, start) = render(&self.vocab, context, spec, &ids);
        let cache = CopyCache::from_prompt(&seq[..start]);
        Ok((start..seq.len())
            .map(|i| self.prob_in_context(&cache, &seq[..i], seq[i]).ln())
            .collect())
    }

    /// Autoregressive nucleus sampling until `<eos>` or `max_tokens`.
    ///
    /// Reserved symbols other than `<eos>` are masked out, and `<eos>` is masked
    /// at the first step so every sample has at least one token.
    pub fn generate(
        &self,
        context: &Context<'_>,
        config: &SamplingConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<TokenizedText, LmError> {
        let (mut seq, start) = render(&self.vocab, context, self.spec, &[]);
        let cache = CopyCache::from_prompt(&seq);
        while seq.len() - start < config.max_tokens {
            let mut dist = self.distribution_in_context(&cache, &seq);
            for id in [UNK_ID, BOS_ID, SEP_ID] {
                dist[id as usize] = 0.0;
            }
            if seq.len() == start {
                dist[EOS_ID as usize] = 0.0;
            }
            let total: f64 = dist.iter().sum();
            dist.iter_mut().for_each(|p| *p /= total);
            let next = nucleus_sample_with(rng, &dist, config.top_p, config.temperature)? as u32;
            if next == EOS_ID {
                break;
            }
            seq.push(next);
        }
        let ids = seq[start..].to_vec();
        let tokens = ids.iter().map(|&id| self.vocab.token(id).to_string()).collect();
        Ok(TokenizedText::new(tokens, ids))
    }
}

struct Mixture<'a> {
    trigram: Option<(&'a Continuations, f64)>,
    bigram: Option<(&'a Continuations, f64)>,
    unigram_weight: f64,
}

/// Serialized form: sorted count tables keyed by token id.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    spec: ContextSpec,
    weights: [f64; 3],
    copy_weight: f64,
    vocab: Vec<String>,
    unigram: Vec<u64>,
    bigrams: Vec<(u32, u32, u64)>,
    trigrams: Vec<(u32, u32, u32, u64)>,
}

impl From<NGramModel> for ModelFile {
    fn from(m: NGramModel) -> Self {
        let mut bigrams: Vec<_> = m
            .bigram
            .iter()
            .flat_map(|(&v, c)| c.next.iter().map(move |(&w, &n)| (v, w, n)))
            .collect();
        bigrams.sort_unstable();
        let mut trigrams: Vec<_> = m
            .trigram
            .iter()
            .flat_map(|(&(u, v), c)| c.next.iter().map(move |(&w, &n)| (u, v, w, n)))
            .collect();
        trigrams.sort_unstable();
        ModelFile {
            spec: m.spec,
            weights: m.weights,
            copy_weight: m.copy_weight,
            vocab: m.vocab.tokens,
            unigram: m.unigram,
            bigrams,
            trigrams,
        }
    }
}

impl TryFrom<ModelFile> for NGramModel {
    type Error = String;

    fn try_from(f: ModelFile) -> Result<Self, Self::Error> {
        NGramConfig {
            weights: f.weights,
            copy_weight: f.copy_weight,
        }
        .validate()
        .map_err(|e| e.to_string())?;
        if f.unigram.len() != f.vocab.len() || f.vocab.len() < 4 {
            return Err("unigram table does not match vocabulary".into());
        }
        let v = f.vocab.len() as u32;
        let mut bigram: HashMap<u32, Continuations> = HashMap::new();
        for (a, w, n) in f.bigrams {
            if a >= v || w >= v {
                return Err(format!("bigram ({a}, {w}) outside vocabulary"));
            }
            let c = bigram.entry(a).or_default();
            c.total += n;
            *c.next.entry(w).or_default() += n;
        }
        let mut trigram: HashMap<(u32, u32), Continuations> = HashMap::new();
        for (a, b, w, n) in f.trigrams {
            if a >= v || b >= v || w >= v {
                return Err(format!("trigram ({a}, {b}, {w}) outside vocabulary"));
            }
            let c = trigram.entry((a, b)).or_default();
            c.total += n;
            *c.next.entry(w).or_default() += n;
        }
        Ok(NGramModel {
            spec: f.spec,
            weights: f.weights,
            copy_weight: f.copy_weight,
            unigram_total: f.unigram.iter().sum(),
            unigram: f.unigram,
            vocab: Vocabulary::from_tokens(f.vocab),
            bigram,
            trigram,
        })
    }
}

/// The base model plus three ablation models behind the [`Scorer`] contract.
#[derive(Debug, Clone)]
pub struct OracleScorer {
    models: BTreeMap<ContextSpec, NGramModel>,
}

impl OracleScorer {
    /// Trains all four models on `corpus`.
    pub fn train(corpus: &[RephrasingInstance], config: &NGramConfig) -> Result<Self, LmError> {
        let models = ContextSpec::ALL
            .iter()
            .map(|&spec| Ok((spec, NGramModel::train(corpus, spec, config)?)))
            .collect::<Result<_, LmError>>()?;
        Ok(Self { models })
    }

    /// Assembles a scorer from one model per spec.
    pub fn from_models(models: Vec<NGramModel>) -> Result<Self, LmError> {
        let mut map = BTreeMap::new();
        for model in models {
            if map.insert(model.spec, model).is_some() {
                return Err(LmError::InvalidConfig("duplicate model for one context spec".into()));
            }
        }
        if map.len() != 4 {
            return Err(LmError::InvalidConfig("need one model per context spec".into()));
        }
        let vocabs: Vec<_> = map.values().map(NGramModel::vocab).collect();
        if vocabs.windows(2).any(|w| w[0] != w[1]) {
            return Err(LmError::InvalidConfig("models do not share a vocabulary".into()));
        }
        Ok(Self { models: map })
    }

    pub fn model(&self, spec: ContextSpec) -> &NGramModel {
        &self.models[&spec]
    }

    pub fn models(&self) -> impl Iterator<Item = &NGramModel> {
        self.models.values()
    }

    /// Tokenizes `text` with the oracle's word splitter and vocabulary.
    pub fn tokenize(&self, text: &str) -> TokenizedText {
        let vocab = self.model(ContextSpec::Full).vocab();
        let tokens = word_tokens(text);
        let ids = tokens.iter().map(|t| vocab.id(t)).collect();
        TokenizedText::new(tokens, ids)
    }
}

impl Scorer for OracleScorer {
    fn score(&self, request: &ScoreRequest<'_>) -> Result<Vec<f64>, LmError> {
        self.model(request.spec)
            .score(request.spec, &request.context, &request.response.tokens)
    }

    fn sample(&self, context: &Context<'_>, config: &SamplingConfig, seed: u64) -> Result<Vec<Sample>, LmError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = self.model(ContextSpec::Full);
        (0..config.num_candidates)
            .map(|_| {
                let response = base.generate(context, config, &mut rng)?;
                Ok(Sample {
                    text: response.tokens.join(" "),
                    response,
                })
            })
            .collect()
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}

fn validate_weights(weights: [f64; 3]) -> Result<(), LmError> {
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(LmError::InvalidConfig(format!(
            "interpolation weights must be non-negative and sum to 1, got {weights:?}"
        )));
    }
    Ok(())
}
