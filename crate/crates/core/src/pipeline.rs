//! Sampling and scoring of candidate pools through any [`Scorer`].

use crate::dataset::RephrasingInstance;
use crate::experiments::stable_seed;
use crate::lm::replay::ReplayStore;
use crate::lm::{score_series, Context, LmError, Sample, SamplingConfig, Scorer};
use crate::scoring::derive_bundle;
use crate::selection::{Candidate, CandidatePool};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Unscored candidates for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledInstance {
    pub instance_id: String,
    pub history: Vec<String>,
    pub knowledge: String,
    /// The human reference response, kept for inspection.
    pub reference: String,
    pub samples: Vec<Sample>,
}

impl SampledInstance {
    pub fn context(&self) -> Context<'_> {
        Context::new(&self.history, &self.knowledge)
    }
}

/// Draws candidates for every instance. Each instance gets its own seed
/// derived from `seed` and its id, so output does not depend on corpus order
/// or thread scheduling.
pub fn sample_instances(
    scorer: &dyn Scorer,
    instances: &[RephrasingInstance],
    config: &SamplingConfig,
    seed: u64,
) -> Result<Vec<SampledInstance>, LmError> {
    config.validate()?;
    instances
        .par_iter()
        .map(|inst| {
            let context = Context::new(&inst.h, &inst.k);
            let samples = scorer.sample(&context, config, stable_seed(seed, &inst.id))?;
            Ok(SampledInstance {
                instance_id: inst.id.clone(),
                history: inst.h.clone(),
                knowledge: inst.k.clone(),
                reference: inst.g.clone(),
                samples,
            })
        })
        .collect()
}

/// Scores every sample under all four specs. Candidates with no tokens are
/// dropped with a warning; `keep_series` retains the per-token series.
pub fn score_pool(scorer: &dyn Scorer, sampled: &SampledInstance, keep_series: bool) -> Result<CandidatePool, LmError> {
    let context = sampled.context();
    let mut candidates = Vec::with_capacity(sampled.samples.len());
    for (candidate_id, sample) in sampled.samples.iter().enumerate() {
        if !sample.response.is_scorable() {
            log::warn!("{} candidate {candidate_id}: empty response skipped", sampled.instance_id);
            continue;
        }
        let series = score_series(
            scorer,
            &sampled.instance_id,
            candidate_id,
            context,
            &sample.response,
            &sample.text,
        )?;
        let bundle = derive_bundle(&series)?;
        candidates.push(Candidate {
            candidate_id,
            text: sample.text.clone(),
            response: sample.response.clone(),
            series: keep_series.then_some(series),
            bundle,
        });
    }
    Ok(CandidatePool {
        instance_id: sampled.instance_id.clone(),
        history: sampled.history.clone(),
        knowledge: sampled.knowledge.clone(),
        candidates,
    })
}

pub fn score_pools(scorer: &dyn Scorer, sampled: &[SampledInstance], keep_series: bool) -> Result<Vec<CandidatePool>, LmError> {
    sampled.par_iter().map(|s| score_pool(scorer, s, keep_series)).collect()
}

/// Writes the series of every candidate to `store`. Pools must have been
/// scored with `keep_series`.
pub fn record_pools(store: &ReplayStore, pools: &[CandidatePool]) -> Result<usize, LmError> {
    let mut written = 0;
    for pool in pools {
        for c in &pool.candidates {
            let series = c
                .series
                .as_ref()
                .ok_or_else(|| LmError::InvalidConfig(format!("{} candidate {} has no series", pool.instance_id, c.candidate_id)))?;
            store.insert_series(&pool.instance_id, c.candidate_id, &c.response.tokens, series)?;
            written += 4;
        }
    }
    Ok(written)
}
