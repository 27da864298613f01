use crate::config::{BackendKind, PipelineConfig};
use crate::error::CliError;
use crate::io::{read_json, read_jsonl, read_to_string, to_pretty, write_json, write_jsonl, write_text};
use crate::*;
use pcmi_annotate::{load_pairs, system_clock, ServerOptions, Store, StoreConfig};
use pcmi_core::dataset::{extract_instances, split_by_entity, Corpus, RephrasingInstance};
use pcmi_core::experiments::analysis::{selection_groups, FiveNumber};
use pcmi_core::experiments::{
    aggregate, attribution_report, build_exp1_pairs, build_exp2_pairs, build_exp3_pairs, distribution_summary,
    AggregateResult, Annotation, AttributionReport, ComparisonPair, Experiment,
};
use pcmi_core::lm::http::HttpScorer;
use pcmi_core::lm::ngram::{NGramModel, OracleScorer};
use pcmi_core::lm::replay::ReplayStore;
use pcmi_core::lm::Scorer;
use pcmi_core::pipeline::{record_pools, sample_instances, score_pools, SampledInstance};
use pcmi_core::scoring::{token_csv, token_series, AttributionMode};
use pcmi_core::selection::{
    calibrate_thresholds, calibration_bundles, fused_pcmi_select, select, CalibrationScope, CandidatePool, Method,
    ThresholdConfig,
};
use pcmi_core::ScoreBundle;
use serde::Serialize;
use std::path::{Path, PathBuf};

pub fn dispatch(config: &PipelineConfig, command: Command) -> Result<(), CliError> {
    match command {
        Command::BuildDataset(a) => build_dataset(config, a),
        Command::TrainOracle(a) => train_oracle(config, a),
        Command::Sample(a) => sample(config, a),
        Command::Score(a) => score(config, a),
        Command::Calibrate(a) => calibrate(config, a),
        Command::Select(a) => select_cmd(config, a),
        Command::MakePairs(a) => make_pairs(config, a),
        Command::Serve(a) => serve(config, a),
        Command::Aggregate(a) => aggregate_cmd(a),
        Command::Report(a) => report(config, a),
        Command::ExportPlotData(a) => export_plot_data(config, a),
    }
}

fn required(flag: Option<PathBuf>, fallback: &Option<PathBuf>, what: &str) -> Result<PathBuf, CliError> {
    flag.or_else(|| fallback.clone())
        .ok_or_else(|| CliError::Config(format!("no {what} given (flag or config paths)")))
}

fn stdout(text: &str) {
    print!("{text}");
}

fn build_dataset(config: &PipelineConfig, a: BuildDatasetArgs) -> Result<(), CliError> {
    let conversations = required(a.conversations, &config.paths.corpus, "conversations file")?;
    let reading_sets = required(a.reading_sets, &config.paths.facts, "reading sets file")?;
    let out_dir = a.out_dir.unwrap_or_else(|| config.paths.output_dir.clone());
    let threshold = a.threshold.unwrap_or(config.match_threshold);

    let corpus = Corpus::from_topical_chat(&read_to_string(&conversations)?, &read_to_string(&reading_sets)?)?;
    let stats = corpus.stats(&config.tfidf);
    let instances = extract_instances(&corpus, &stats, threshold)?;
    let split = split_by_entity(&instances, config.split_ratios, config.seed)?;
    for (name, part) in [("train", &split.train), ("validation", &split.validation), ("test", &split.test)] {
        write_jsonl(&out_dir.join(format!("{name}.jsonl")), part)?;
    }
    log::info!(
        "{} conversations, {} instances: train {}, validation {}, test {}",
        corpus.conversations.len(),
        instances.len(),
        split.train.len(),
        split.validation.len(),
        split.test.len()
    );
    Ok(())
}

fn train_oracle(config: &PipelineConfig, a: TrainOracleArgs) -> Result<(), CliError> {
    let train: Vec<RephrasingInstance> = read_jsonl(&a.train.unwrap_or_else(|| config.output("train.jsonl")))?;
    let oracle = OracleScorer::train(&train, &config.ngram)?;
    let models: Vec<&NGramModel> = oracle.models().collect();
    let out = a.out.unwrap_or_else(|| config.output("oracle.json"));
    let text = serde_json::to_string(&models).map_err(|e| CliError::Validation(e.to_string()))? + "\n";
    write_text(&out, &text)?;
    log::info!(
        "trained 4 models on {} instances, vocabulary {}",
        train.len(),
        models[0].vocab().len()
    );
    Ok(())
}

fn load_oracle(path: &Path) -> Result<OracleScorer, CliError> {
    let models: Vec<NGramModel> = read_json(path)?;
    Ok(OracleScorer::from_models(models)?)
}

fn scorer(config: &PipelineConfig, a: &BackendArgs) -> Result<Box<dyn Scorer>, CliError> {
    Ok(match config.backend {
        BackendKind::Oracle => Box::new(load_oracle(&a.oracle.clone().unwrap_or_else(|| config.output("oracle.json")))?),
        BackendKind::Replay => {
            let path = required(a.replay.clone(), &config.paths.replay_store, "replay store")?;
            if !path.exists() {
                return Err(CliError::InputMissing(path));
            }
            Box::new(ReplayStore::load(&path)?)
        }
        BackendKind::Http => Box::new(HttpScorer::new(config.http.clone())?),
    })
}

fn sample(config: &PipelineConfig, a: SampleArgs) -> Result<(), CliError> {
    let mut sampling = config.sampling.clone();
    if let Some(n) = a.num_candidates {
        sampling.num_candidates = n;
    }
    if let Some(p) = a.top_p {
        sampling.top_p = p;
    }
    if let Some(t) = a.temperature {
        sampling.temperature = t;
    }
    sampling.validate()?;
    let instances: Vec<RephrasingInstance> = read_jsonl(&a.instances.unwrap_or_else(|| config.output("test.jsonl")))?;
    let scorer = scorer(config, &a.backend)?;
    let sampled = sample_instances(scorer.as_ref(), &instances, &sampling, config.seed)?;
    write_jsonl(&a.out.unwrap_or_else(|| config.output("samples.jsonl")), &sampled)?;
    log::info!("sampled {} candidates for {} instances", sampling.num_candidates, sampled.len());
    Ok(())
}

fn score(config: &PipelineConfig, a: ScoreArgs) -> Result<(), CliError> {
    let sampled: Vec<SampledInstance> = read_jsonl(&a.samples.unwrap_or_else(|| config.output("samples.jsonl")))?;
    let scorer = scorer(config, &a.backend)?;
    let keep_series = !a.no_series || a.record.is_some();
    let mut pools = score_pools(scorer.as_ref(), &sampled, keep_series)?;
    if let Some(path) = &a.record {
        let store = ReplayStore::open(path)?;
        let n = record_pools(&store, &pools)?;
        log::info!("recorded {n} series to {}", path.display());
    }
    if a.no_series {
        pools.iter_mut().flat_map(|p| p.candidates.iter_mut()).for_each(|c| c.series = None);
    }
    let candidates: usize = pools.iter().map(|p| p.candidates.len()).sum();
    write_jsonl(&a.out.unwrap_or_else(|| config.output("pools.jsonl")), &pools)?;
    log::info!("scored {candidates} candidates in {} pools", pools.len());
    Ok(())
}

/// Reads either scored pools or bare score bundles, one per line.
fn read_bundles(path: &Path, scope: CalibrationScope) -> Result<Vec<ScoreBundle>, CliError> {
    let values: Vec<serde_json::Value> = read_jsonl(path)?;
    let bad = |e: serde_json::Error| CliError::Validation(format!("{}: {e}", path.display()));
    if values.first().is_some_and(|v| v.get("candidates").is_some()) {
        let pools: Vec<CandidatePool> =
            values.into_iter().map(serde_json::from_value).collect::<Result<_, _>>().map_err(bad)?;
        Ok(calibration_bundles(&pools, scope))
    } else {
        if scope != CalibrationScope::AllCandidates {
            log::warn!("bundle input has no pools; using every bundle");
        }
        values.into_iter().map(serde_json::from_value).collect::<Result<_, _>>().map_err(bad)
    }
}

fn calibrate(config: &PipelineConfig, a: CalibrateArgs) -> Result<(), CliError> {
    let scope = match a.scope {
        Some(ScopeArg::AllCandidates) => CalibrationScope::AllCandidates,
        Some(ScopeArg::MaxPmiPerInstance) => CalibrationScope::MaxPmiPerInstance,
        None => config.calibration_scope,
    };
    let bundles = read_bundles(&a.input, scope)?;
    let thresholds = ThresholdConfig {
        pmi_acceptable_fraction: config.thresholds.pmi_acceptable_fraction,
        ..calibrate_thresholds(&bundles)?
    };
    log::info!(
        "calibrated on {} bundles: low {} high {}",
        bundles.len(),
        thresholds.pcmi_h_low,
        thresholds.pcmi_h_high
    );
    if let Some(out) = &a.out {
        write_json(out, &thresholds)?;
    }
    stdout(&to_pretty(&thresholds));
    Ok(())
}

/// Flag > thresholds file > config.
fn thresholds(config: &PipelineConfig, a: &ThresholdArgs) -> Result<ThresholdConfig, CliError> {
    let mut t = match (&a.thresholds, &a.thresholds_file) {
        (Some(s), _) => {
            let parts: Vec<f64> = s
                .split(',')
                .map(|p| p.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| CliError::Validation(format!("--thresholds {s:?}: {e}")))?;
            match parts[..] {
                [low, high] => ThresholdConfig {
                    pcmi_h_low: low,
                    pcmi_h_high: high,
                    ..config.thresholds
                },
                [low, high, fraction] => ThresholdConfig {
                    pcmi_h_low: low,
                    pcmi_h_high: high,
                    pmi_acceptable_fraction: fraction,
                },
                _ => return Err(CliError::Validation(format!("--thresholds takes LOW,HIGH[,FRACTION], got {s:?}"))),
            }
        }
        (None, Some(path)) => read_json(path)?,
        (None, None) => config.thresholds,
    };
    if let Some(f) = a.fraction {
        t.pmi_acceptable_fraction = f;
    }
    t.validate()?;
    Ok(t)
}

fn read_pools(config: &PipelineConfig, path: Option<PathBuf>) -> Result<Vec<CandidatePool>, CliError> {
    read_jsonl(&path.unwrap_or_else(|| config.output("pools.jsonl")))
}

fn select_cmd(config: &PipelineConfig, a: SelectArgs) -> Result<(), CliError> {
    let pools = read_pools(config, a.pools)?;
    let t = thresholds(config, &a.thresholds)?;
    let method = match a.method {
        MethodArg::MaxPmi => Method::MaxPmi,
        MethodArg::Fused => Method::Fused,
    };
    let records = pools.iter().map(|p| select(p, method, &t)).collect::<Result<Vec<_>, _>>()?;
    write_jsonl(&a.out.unwrap_or_else(|| config.output("selections.jsonl")), &records)?;
    log::info!("selected {} responses with {method:?}", records.len());
    Ok(())
}

#[derive(Serialize)]
struct PairSummary {
    exp1: usize,
    exp1_top: usize,
    exp1_bottom: usize,
    exp2: usize,
    exp2_skipped: usize,
    exp2_median_abs_delta_pcmi_k: Option<f64>,
    exp3: usize,
}

fn make_pairs(config: &PipelineConfig, a: MakePairsArgs) -> Result<(), CliError> {
    let pools = read_pools(config, a.pools)?;
    let t = thresholds(config, &a.thresholds)?;
    let delta = a.exp2_delta_h_min.unwrap_or(config.exp2_delta_h_min);
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(CliError::Validation(format!("--exp2-delta-h-min must be non-negative, got {delta}")));
    }
    let exp1 = build_exp1_pairs(&pools, config.seed)?;
    let exp2 = build_exp2_pairs(&pools, delta, config.seed);
    let exp3 = build_exp3_pairs(&pools, &t, config.seed)?;
    let count = |e: Experiment| exp1.iter().filter(|p| p.experiment == e).count();
    let summary = PairSummary {
        exp1: exp1.len(),
        exp1_top: count(Experiment::Exp1Top),
        exp1_bottom: count(Experiment::Exp1Bottom),
        exp2: exp2.pairs.len(),
        exp2_skipped: exp2.skipped,
        exp2_median_abs_delta_pcmi_k: exp2.median_abs_delta_pcmi_k,
        exp3: exp3.len(),
    };
    let all: Vec<ComparisonPair> = exp1.into_iter().chain(exp2.pairs).chain(exp3).collect();
    write_jsonl(&a.out.unwrap_or_else(|| config.output("pairs.jsonl")), &all)?;
    log::info!("wrote {} pairs", all.len());
    stdout(&to_pretty(&summary));
    Ok(())
}

fn serve(config: &PipelineConfig, a: ServeArgs) -> Result<(), CliError> {
    let pairs_path = a.pairs.unwrap_or_else(|| config.output("pairs.jsonl"));
    if !pairs_path.exists() {
        return Err(CliError::InputMissing(pairs_path));
    }
    let pairs = load_pairs(&pairs_path)?;
    let ann = &config.annotation;
    let data_dir = a
        .data_dir
        .or_else(|| ann.data_dir.clone())
        .unwrap_or_else(|| config.output("annotations"));
    let store_config = StoreConfig {
        seed: config.seed,
        assignment_ttl_ms: ann.assignment_ttl_secs.saturating_mul(1000),
    };
    let store = Store::open(pairs, &data_dir, store_config, system_clock())?;
    let mut cors_origins = a.cors_origins;
    if cors_origins.is_empty() {
        cors_origins = ann.cors_origins.clone();
    }
    let options = ServerOptions {
        static_dir: a.static_dir.or_else(|| ann.static_dir.clone()),
        cors_origins,
    };
    let addr = std::net::SocketAddr::new(a.host, a.port.unwrap_or(ann.port));
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::io("tokio runtime", e))?;
    runtime
        .block_on(pcmi_annotate::serve(store, addr, options))
        .map_err(|e| CliError::io(addr.to_string(), e))
}

fn read_log(pairs: &Path, annotations: &Path) -> Result<(Vec<ComparisonPair>, Vec<Annotation>), CliError> {
    Ok((read_jsonl(pairs)?, read_jsonl(annotations)?))
}

fn emit<T: Serialize>(out: Option<&Path>, value: &T) -> Result<(), CliError> {
    if let Some(out) = out {
        write_json(out, value)?;
    }
    stdout(&to_pretty(value));
    Ok(())
}

fn aggregate_cmd(a: AggregateArgs) -> Result<(), CliError> {
    let (pairs, annotations) = read_log(&a.pairs, &a.annotations)?;
    let results = aggregate(&pairs, &annotations)?;
    emit(a.out.as_deref(), &results)
}

#[derive(Serialize)]
pub struct GroupQuartiles {
    pub group: String,
    pub count: usize,
    pub pcmi_h: FiveNumber,
    pub pcmi_k: FiveNumber,
}

#[derive(Serialize)]
pub struct Report {
    pub table: Vec<AggregateResult>,
    pub annotations: usize,
    pub attribution: Option<AttributionReport>,
    pub distribution: Option<Vec<GroupQuartiles>>,
}

fn quartiles(pools: &[CandidatePool], t: &ThresholdConfig) -> Result<Vec<GroupQuartiles>, CliError> {
    let summary = distribution_summary(&selection_groups(pools, t)?)?;
    Ok(summary
        .groups
        .into_iter()
        .map(|g| GroupQuartiles {
            group: g.group,
            count: g.count,
            pcmi_h: g.pcmi_h,
            pcmi_k: g.pcmi_k,
        })
        .collect())
}

fn attribution(
    pairs: &[ComparisonPair],
    annotations: &[Annotation],
    pools: &[CandidatePool],
) -> Result<Option<AttributionReport>, CliError> {
    let items = pcmi_core::experiments::analysis::exp2_attribution_items(pairs, annotations, pools)?;
    if items.is_empty() {
        log::warn!("no span annotations on complete EXP2 pairs");
        return Ok(None);
    }
    Ok(Some(attribution_report(&items, AttributionMode::Raw)?))
}

fn report(config: &PipelineConfig, a: ReportArgs) -> Result<(), CliError> {
    let (pairs, annotations) = read_log(&a.pairs, &a.annotations)?;
    let table = aggregate(&pairs, &annotations)?;
    let (attribution, distribution) = match &a.pools {
        Some(path) => {
            let pools: Vec<CandidatePool> = read_jsonl(path)?;
            let t = thresholds(config, &a.thresholds)?;
            (attribution(&pairs, &annotations, &pools)?, Some(quartiles(&pools, &t)?))
        }
        None => (None, None),
    };
    let report = Report {
        table,
        annotations: annotations.len(),
        attribution,
        distribution,
    };
    emit(a.out.as_deref(), &report)
}

fn export_plot_data(config: &PipelineConfig, a: ExportPlotArgs) -> Result<(), CliError> {
    let pools = read_pools(config, a.pools)?;
    let t = thresholds(config, &a.thresholds)?;
    let out_dir = a.out_dir.unwrap_or_else(|| config.output("plots"));

    let summary = distribution_summary(&selection_groups(&pools, &t)?)?;
    write_text(&out_dir.join("quartiles.csv"), &summary.quartiles_csv())?;
    write_text(&out_dir.join("histogram.csv"), &summary.histogram_csv())?;
    for score in ["pcmi_h", "pcmi_k"] {
        let boxes: Vec<(String, FiveNumber)> = summary
            .groups
            .iter()
            .map(|g| (g.group.clone(), if score == "pcmi_h" { g.pcmi_h } else { g.pcmi_k }))
            .collect();
        write_text(&out_dir.join(format!("box_{score}.svg")), &svg::box_chart(score, &boxes))?;
    }

    let pool = match &a.instance {
        Some(id) => pools
            .iter()
            .find(|p| &p.instance_id == id)
            .ok_or_else(|| CliError::Validation(format!("no pool for instance {id}")))?,
        None => pools.first().ok_or_else(|| CliError::Validation("no pools".into()))?,
    };
    let chosen = &pool.candidates[fused_pcmi_select(pool, &t)?.index];
    let series = chosen.series.as_ref().ok_or_else(|| {
        CliError::Validation(format!("{} has no token series; score without --no-series", pool.instance_id))
    })?;
    let tokens = &chosen.response.tokens;
    write_text(&out_dir.join("tokens.csv"), &token_csv(tokens, series)?)?;
    let d = token_series(series)?;
    let title = format!("{} candidate {}", pool.instance_id, chosen.candidate_id);
    let lines: [(&str, &[f64]); 3] = [("pmi", &d.pmi), ("pcmi_h", &d.pcmi_h), ("pcmi_k", &d.pcmi_k)];
    write_text(&out_dir.join("tokens.svg"), &svg::token_chart(&title, tokens, &lines))?;

    if let (Some(pairs), Some(annotations)) = (&a.pairs, &a.annotations) {
        let (pairs, annotations) = read_log(pairs, annotations)?;
        let mut csv = String::from("score,mean_ratio,responses,skipped\n");
        if let Some(r) = attribution(&pairs, &annotations, &pools)? {
            for (name, v) in [("pcmi_h", r.pcmi_h), ("pmi_h", r.pmi_h), ("pcmi_k", r.pcmi_k)] {
                let v = v.map_or(String::new(), |v| v.to_string());
                csv.push_str(&format!("{name},{v},{},{}\n", r.responses, r.skipped));
            }
        }
        write_text(&out_dir.join("attribution.csv"), &csv)?;
    }
    log::info!("plot data written to {}", out_dir.display());
    Ok(())
}
