//! Stage orchestration, both in memory and against a working directory.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{evaluate, rank_session, MetricsReport, SessionRecord};
use crate::infer::{render_explanation, ModelPolicy};
use crate::ingest::{
    parse_interactions, parse_metadata, sessionize, split_sessions, DatasetSplit, Interaction, ItemMetadata,
    SessionizeSummary,
};
use crate::kg::{build_graph, BuildSummary, EntityId, GraphStats, KnowledgeGraph};
use crate::mdp::RewardMode;
use crate::model::{Checkpoint, ReksModel};
use crate::synth::{generate, write, SynthConfig, INTERACTIONS_FILE, METADATA_FILE};
use crate::train::{prepare_sessions, EpochReport, LossMode, StartPoint, Trainer};
use crate::transe::{train_transe, EmbeddingTable, TransEReport};

pub const SPLIT_FILE: &str = "split.json";
pub const INGEST_SUMMARY_FILE: &str = "ingest_summary.json";
pub const ENTITIES_FILE: &str = "entities.tsv";
pub const TRIPLES_FILE: &str = "kg.tsv";
pub const KG_STATS_FILE: &str = "kg_stats.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.bin";
pub const TRANSE_LOG_FILE: &str = "transe_log.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const RECOMMENDATIONS_FILE: &str = "recommendations.jsonl";
pub const METRICS_JSON_FILE: &str = "metrics.json";
pub const METRICS_TEXT_FILE: &str = "metrics.txt";
pub const ABLATION_JSON_FILE: &str = "ablation.json";
pub const ABLATION_TEXT_FILE: &str = "ablation.txt";

/// Split, graph and embeddings: everything policy training consumes.
pub struct Workspace {
    pub split: DatasetSplit,
    pub graph: KnowledgeGraph,
    pub table: EmbeddingTable,
}

pub fn ingest_sessions(config: &RunConfig, interactions: &[Interaction]) -> Result<(DatasetSplit, SessionizeSummary)> {
    let (sessions, summary) = sessionize(interactions, config.min_item_count, config.min_session_len);
    let split = split_sessions(&sessions, config.split, config.seed)?;
    Ok((split, summary))
}

impl Workspace {
    pub fn build(config: &RunConfig, interactions: &[Interaction], metadata: &[ItemMetadata]) -> Result<Self> {
        config.validate()?;
        let (split, _) = ingest_sessions(config, interactions)?;
        let (graph, _) = build_graph(&split.train, &split.vocabulary(), metadata, config.user_info)?;
        let (table, _) = train_transe(&graph, &config.transe_config())?;
        Ok(Workspace { split, graph, table })
    }
}

pub struct TrainOutcome {
    pub model: ReksModel,
    pub trainer: Trainer,
    pub log: Vec<EpochReport>,
}

pub fn train_policy(config: &RunConfig, ws: &Workspace) -> Result<TrainOutcome> {
    config.validate()?;
    let mut model = ReksModel::new(config.model_shape(), config.model_seed())?;
    let mut trainer = Trainer::new(config.train_config(), &model)?;
    let sessions = prepare_sessions(&ws.graph, &ws.split.train);
    let log = trainer.fit(&mut model, &ws.table, &ws.graph, &sessions)?;
    model.round_to_f32();
    Ok(TrainOutcome { model, trainer, log })
}

pub fn evaluate_model(
    config: &RunConfig,
    ws: &Workspace,
    model: &ReksModel,
) -> Result<(MetricsReport, Vec<SessionRecord>)> {
    let sessions = prepare_sessions(&ws.graph, &ws.split.test);
    let mut policy = ModelPolicy::new(model, &ws.table);
    let (mut report, records) = evaluate(&mut policy, &ws.graph, &sessions, &config.eval_config())?;
    report.fingerprint = config.fingerprint();
    report.seed = config.seed;
    Ok((report, records))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub fingerprint: String,
    pub train_log: Vec<EpochReport>,
    pub metrics: MetricsReport,
}

pub fn run_experiment(config: &RunConfig, ws: &Workspace) -> Result<ExperimentResult> {
    let outcome = train_policy(config, ws)?;
    let (metrics, _) = evaluate_model(config, ws, &outcome.model)?;
    Ok(ExperimentResult {
        fingerprint: config.fingerprint(),
        train_log: outcome.log,
        metrics,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    Reward,
    Loss,
    Start,
    PathLength,
}

impl AblationAxis {
    pub const ALL: [AblationAxis; 4] = [
        AblationAxis::Reward,
        AblationAxis::Loss,
        AblationAxis::Start,
        AblationAxis::PathLength,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::Reward => "reward",
            AblationAxis::Loss => "loss",
            AblationAxis::Start => "start",
            AblationAxis::PathLength => "path_length",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        AblationAxis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation axis {s:?}")))
    }
}

/// The configurations compared along one axis, labelled.
pub fn ablation_variants(base: &RunConfig, axis: AblationAxis) -> Result<Vec<(String, RunConfig)>> {
    let with = |f: &dyn Fn(&mut RunConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    let variants = match axis {
        AblationAxis::Reward => vec![
            ("R1".to_string(), with(&|c| c.reward_mode = RewardMode::Binary)),
            ("-path".to_string(), with(&|c| c.reward_mode = RewardMode::ItemOnly)),
            ("-rank".to_string(), with(&|c| c.reward_mode = RewardMode::NoRank)),
            ("full".to_string(), with(&|c| c.reward_mode = RewardMode::Full)),
        ],
        AblationAxis::Loss => vec![
            ("R".to_string(), with(&|c| c.loss_mode = LossMode::RewardOnly)),
            ("C".to_string(), with(&|c| c.loss_mode = LossMode::CrossEntropyOnly)),
            ("full".to_string(), with(&|c| c.loss_mode = LossMode::Combined)),
        ],
        AblationAxis::Start => {
            if !base.user_info {
                return Err(Error::Config("the start axis needs a graph built with user_info = true".into()));
            }
            vec![
                (
                    "last_item".to_string(),
                    with(&|c| {
                        c.start = StartPoint::LastItem;
                        c.set_path_length(2, &[100, 1]);
                    }),
                ),
                (
                    "user".to_string(),
                    with(&|c| {
                        c.start = StartPoint::User;
                        c.set_path_length(3, &[100, 10, 1]);
                    }),
                ),
            ]
        }
        AblationAxis::PathLength => vec![
            ("T=2".to_string(), with(&|c| c.set_path_length(2, &[100, 1]))),
            ("T=3".to_string(), with(&|c| c.set_path_length(3, &[100, 1, 1]))),
            ("T=4".to_string(), with(&|c| c.set_path_length(4, &[100, 1, 1, 1]))),
        ],
    };
    for (_, c) in &variants {
        c.validate()?;
    }
    Ok(variants)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub axis: AblationAxis,
    pub variant: String,
    pub fingerprint: String,
    pub metrics: MetricsReport,
}

/// Trains and evaluates every variant of every requested axis; identical
/// configurations are trained once.
pub fn ablation_suite(base: &RunConfig, ws: &Workspace, axes: &[AblationAxis]) -> Result<Vec<AblationRow>> {
    let mut plan = Vec::new();
    for &axis in axes {
        for (label, cfg) in ablation_variants(base, axis)? {
            plan.push((axis, label, cfg));
        }
    }
    let mut done: HashMap<String, MetricsReport> = HashMap::new();
    let mut rows = Vec::with_capacity(plan.len());
    for (axis, variant, cfg) in plan {
        let fp = cfg.fingerprint();
        let metrics = match done.get(&fp) {
            Some(m) => m.clone(),
            None => {
                let m = run_experiment(&cfg, ws)?.metrics;
                done.insert(fp.clone(), m.clone());
                m
            }
        };
        rows.push(AblationRow {
            axis,
            variant,
            fingerprint: fp,
            metrics,
        });
    }
    Ok(rows)
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut out = String::new();
    let Some(first) = rows.first() else {
        return out;
    };
    let _ = write!(out, "{:<12} {:<10}", "axis", "variant");
    for k in &first.metrics.ks {
        let _ = write!(out, " {:>8}", format!("HR@{k}"));
    }
    for k in &first.metrics.ks {
        let _ = write!(out, " {:>8}", format!("NDCG@{k}"));
    }
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{:<12} {:<10}", r.axis.name(), r.variant);
        for v in r.metrics.hr.iter().chain(&r.metrics.ndcg) {
            let _ = write!(out, " {v:>8.2}");
        }
        out.push('\n');
    }
    out
}

// ---- working-directory stages ----

fn workfile(config: &RunConfig, name: &str) -> PathBuf {
    config.workdir.join(name)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    write_text(path, &text)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::artifact(path, e.to_string()))
}

#[derive(Serialize, Deserialize)]
struct SplitFile {
    fingerprint: String,
    split: DatasetSplit,
}

#[derive(Serialize)]
struct IngestSummaryFile<'a> {
    fingerprint: String,
    summary: &'a SessionizeSummary,
    train: usize,
    validation: usize,
    test: usize,
}

#[derive(Serialize)]
struct KgStatsFile<'a> {
    fingerprint: String,
    stats: &'a GraphStats,
    build: &'a BuildSummary,
}

#[derive(Serialize)]
struct TransELogFile<'a> {
    fingerprint: String,
    report: &'a TransEReport,
}

#[derive(Serialize)]
struct Stamped<'a, T> {
    fingerprint: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

fn ensure_workdir(config: &RunConfig) -> Result<()> {
    fs::create_dir_all(&config.workdir).map_err(|e| Error::io(&config.workdir, e))
}

/// Configured interactions file, else the one `stage_synth` leaves in the
/// working directory.
pub fn interactions_path(config: &RunConfig) -> PathBuf {
    config
        .interactions
        .clone()
        .unwrap_or_else(|| workfile(config, INTERACTIONS_FILE))
}

/// Configured metadata file, else the working-directory one if present.
pub fn metadata_path(config: &RunConfig) -> Option<PathBuf> {
    config.metadata.clone().or_else(|| {
        let p = workfile(config, METADATA_FILE);
        p.exists().then_some(p)
    })
}

/// Generates the synthetic benchmark into the working directory.
pub fn stage_synth(config: &RunConfig, synth: &SynthConfig) -> Result<(PathBuf, PathBuf)> {
    ensure_workdir(config)?;
    let data = generate(synth)?;
    write(&data, &config.workdir, &config.fingerprint())
}

pub fn stage_ingest(config: &RunConfig) -> Result<SessionizeSummary> {
    config.validate()?;
    ensure_workdir(config)?;
    let interactions = parse_interactions(interactions_path(config))?;
    let (split, summary) = ingest_sessions(config, &interactions)?;
    let fingerprint = config.fingerprint();
    write_json(
        &workfile(config, INGEST_SUMMARY_FILE),
        &IngestSummaryFile {
            fingerprint: fingerprint.clone(),
            summary: &summary,
            train: split.train.len(),
            validation: split.validation.len(),
            test: split.test.len(),
        },
    )?;
    write_json(&workfile(config, SPLIT_FILE), &SplitFile { fingerprint, split })?;
    Ok(summary)
}

pub fn load_split(config: &RunConfig) -> Result<DatasetSplit> {
    Ok(read_json::<SplitFile>(&workfile(config, SPLIT_FILE))?.split)
}

pub fn stage_build_kg(config: &RunConfig) -> Result<GraphStats> {
    config.validate()?;
    let split = load_split(config)?;
    let metadata = match metadata_path(config) {
        Some(p) => parse_metadata(p)?,
        None => Vec::new(),
    };
    let (g, build) = build_graph(&split.train, &split.vocabulary(), &metadata, config.user_info)?;
    let fingerprint = config.fingerprint();
    g.write_entities(&workfile(config, ENTITIES_FILE), &fingerprint)?;
    g.write_triples(&workfile(config, TRIPLES_FILE), &fingerprint)?;
    let stats = g.stats();
    write_json(
        &workfile(config, KG_STATS_FILE),
        &KgStatsFile {
            fingerprint,
            stats: &stats,
            build: &build,
        },
    )?;
    Ok(stats)
}

pub fn load_graph(config: &RunConfig) -> Result<KnowledgeGraph> {
    KnowledgeGraph::load(&workfile(config, ENTITIES_FILE), &workfile(config, TRIPLES_FILE))
}

pub fn stage_train_transe(config: &RunConfig) -> Result<TransEReport> {
    config.validate()?;
    let g = load_graph(config)?;
    let (table, report) = train_transe(&g, &config.transe_config())?;
    let fingerprint = config.fingerprint();
    table.save(&workfile(config, EMBEDDINGS_FILE), &fingerprint)?;
    write_json(
        &workfile(config, TRANSE_LOG_FILE),
        &TransELogFile {
            fingerprint,
            report: &report,
        },
    )?;
    Ok(report)
}

pub fn load_workspace(config: &RunConfig) -> Result<Workspace> {
    let graph = load_graph(config)?;
    let table = EmbeddingTable::load(&workfile(config, EMBEDDINGS_FILE))?;
    if table.num_entities != graph.num_entities() {
        return Err(Error::Data(format!(
            "embeddings cover {} entities but the graph has {}",
            table.num_entities,
            graph.num_entities()
        )));
    }
    if table.dim() != config.embed_dim {
        return Err(Error::Config(format!(
            "embeddings have dimension {} but embed_dim is {}",
            table.dim(),
            config.embed_dim
        )));
    }
    Ok(Workspace {
        split: load_split(config)?,
        graph,
        table,
    })
}

pub fn stage_train(config: &RunConfig) -> Result<Vec<EpochReport>> {
    config.validate()?;
    let ws = load_workspace(config)?;
    let outcome = train_policy(config, &ws)?;
    let fingerprint = config.fingerprint();
    let mut log = String::new();
    for r in &outcome.log {
        log.push_str(&serde_json::to_string(&Stamped { fingerprint: &fingerprint, body: r }).expect("log serializes"));
        log.push('\n');
    }
    write_text(&workfile(config, TRAIN_LOG_FILE), &log)?;
    Checkpoint {
        model: outcome.model,
        baseline: outcome.trainer.baseline.value,
        rng_seed: outcome.trainer.config.seed,
        rng_word_pos: outcome.trainer.rng.get_word_pos(),
        epoch: outcome.trainer.epoch,
    }
    .save(&workfile(config, CHECKPOINT_FILE), &fingerprint)?;
    Ok(outcome.log)
}

pub fn load_model(config: &RunConfig) -> Result<ReksModel> {
    let ckpt = Checkpoint::load(&workfile(config, CHECKPOINT_FILE))?;
    if ckpt.model.shape().encoder != config.encoder || ckpt.model.embed_dim() != config.embed_dim {
        return Err(Error::Config("checkpoint shape does not match the configuration".into()));
    }
    Ok(ckpt.model)
}

/// Restores the training rng stream stored in a checkpoint.
pub fn checkpoint_rng(ckpt: &Checkpoint) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(ckpt.rng_seed);
    rng.set_word_pos(ckpt.rng_word_pos);
    rng
}

#[derive(Serialize)]
struct RecommendedItem {
    item: String,
    score: f64,
    path: String,
}

#[derive(Serialize)]
struct RecommendationLine<'a> {
    session_id: &'a str,
    recommendations: Vec<RecommendedItem>,
    skipped: bool,
    fingerprint: &'a str,
}

/// Entity labels of the form `kind:name`, unambiguous across kinds.
pub fn entity_labels(g: &KnowledgeGraph) -> HashMap<EntityId, String> {
    g.entities().map(|(id, _)| (id, g.token(id))).collect()
}

/// Writes one line per test session and returns the number of lines.
pub fn stage_recommend(config: &RunConfig, k: usize) -> Result<usize> {
    config.validate()?;
    let ws = load_workspace(config)?;
    let model = load_model(config)?;
    let sessions = prepare_sessions(&ws.graph, &ws.split.test);
    let labels = entity_labels(&ws.graph);
    let fingerprint = config.fingerprint();
    let eval = config.eval_config();
    let mut policy = ModelPolicy::new(&model, &ws.table);
    let mut out = String::new();
    for s in &sessions {
        let ranked = rank_session(&mut policy, &ws.graph, s, &eval, k)?;
        let line = RecommendationLine {
            session_id: &s.id,
            skipped: ranked.is_none(),
            recommendations: ranked
                .map(|r| {
                    r.items
                        .iter()
                        .map(|rec| RecommendedItem {
                            item: ws.graph.entity(rec.item).map(|e| e.name.clone()).unwrap_or_default(),
                            score: rec.score,
                            path: render_explanation(&ws.graph, &rec.explanation.path, Some(&labels)),
                        })
                        .collect()
                })
                .unwrap_or_default(),
            fingerprint: &fingerprint,
        };
        out.push_str(&serde_json::to_string(&line).expect("line serializes"));
        out.push('\n');
    }
    write_text(&workfile(config, RECOMMENDATIONS_FILE), &out)?;
    Ok(sessions.len())
}

pub fn stage_evaluate(config: &RunConfig) -> Result<MetricsReport> {
    config.validate()?;
    let ws = load_workspace(config)?;
    let model = load_model(config)?;
    let (report, _) = evaluate_model(config, &ws, &model)?;
    write_json(&workfile(config, METRICS_JSON_FILE), &report)?;
    write_text(&workfile(config, METRICS_TEXT_FILE), &report.to_table())?;
    Ok(report)
}

#[derive(Serialize)]
struct AblationFile<'a> {
    fingerprint: String,
    rows: &'a [AblationRow],
}

pub fn stage_ablate(config: &RunConfig, axes: &[AblationAxis]) -> Result<Vec<AblationRow>> {
    config.validate()?;
    let ws = load_workspace(config)?;
    let rows = ablation_suite(config, &ws, axes)?;
    write_json(
        &workfile(config, ABLATION_JSON_FILE),
        &AblationFile {
            fingerprint: config.fingerprint(),
            rows: &rows,
        },
    )?;
    write_text(&workfile(config, ABLATION_TEXT_FILE), &ablation_table(&rows))?;
    Ok(rows)
}
