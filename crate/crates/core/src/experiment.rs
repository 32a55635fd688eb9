//! Experiment configuration, stage functions and artifact files.
//!
//! Every stage reads the master seed through [`crate::seed::derive`] with a
//! fixed stage name. Artifacts carry the hash of the configuration sections
//! they depend on (their *stage hash*) plus the content hashes of their input
//! artifacts, so a downstream stage can refuse inputs produced under a
//! different upstream configuration.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, RioError};
use crate::eval::{evaluate, EvalConfig, MetricsReport};
use crate::optim::{optimize, LogRow, Method, OptimConfig, PreferenceData, RewardConfig};
use crate::pools::{
    sample_candidates, select_dpo_pairs, select_forward_only, select_rio, Candidate, Policy, PoolFile, PoolHeader,
    SelectionConfig, POOL_FORMAT,
};
use crate::seqmodel::{
    pretrain, Checkpoint, DecodeConfig, ModelConfig, ModelParams, PretrainConfig, PretrainOutcome, TokenSequence, TrainingExample,
};
use crate::synthworld::{gen_corpus, stutter, CorpusPair, CorpusRecord, Split, World, WorldConfig};

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const POOLS_FILE: &str = "pools.jsonl";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const REPORT_FILE: &str = "report.json";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const CORPUS_FORMAT: &str = "rio-corpus/1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSizes {
    pub train: usize,
    pub pool: usize,
    pub eval: usize,
    /// Per-run probability of a stutter in pretraining targets. Corpus files
    /// stay clean; the noise is applied when pretraining reads them.
    pub stutter_rate: f64,
}

impl Default for CorpusSizes {
    fn default() -> Self {
        CorpusSizes { train: 4000, pool: 2000, eval: 300, stutter_rate: 0.02 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolSettings {
    pub policy: Policy,
    /// Forward draws per pool input for the rio and forward-only policies.
    pub k_per_input: usize,
    pub selection: SelectionConfig,
    /// Forward draws per pool input for DPO pairing.
    pub dpo_k_per_input: usize,
    pub min_gap: f64,
}

impl Default for PoolSettings {
    fn default() -> Self {
        PoolSettings {
            policy: Policy::Rio,
            k_per_input: 1,
            selection: SelectionConfig::default(),
            dpo_k_per_input: 5,
            min_gap: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    pub good_threshold: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings { good_threshold: 3.0 }
    }
}

/// The whole experiment. Seed fields inside sections (`model.init_seed`,
/// `pretrain.seed`, `optim.seed`) are ignored: stages derive them from the
/// master `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub world: WorldConfig,
    pub corpus: CorpusSizes,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub decode: DecodeConfig,
    pub pools: PoolSettings,
    pub optim: OptimConfig,
    pub eval: EvalSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            world: WorldConfig::default(),
            corpus: CorpusSizes::default(),
            model: ModelConfig::default(),
            pretrain: PretrainConfig::default(),
            // Sampling below temperature 1 trims the long tail of one-off
            // token slips so that stutters dominate the bad cases.
            decode: DecodeConfig { temperature: 0.6, ..DecodeConfig::default() },
            pools: PoolSettings::default(),
            // Tuned for the toy model: a larger beta saturates the value
            // function on negatives before they drag positives down with
            // them.
            optim: OptimConfig {
                lr: 3e-4,
                epochs: 3,
                reward: RewardConfig { beta: 5.0, ..RewardConfig::default() },
                ..OptimConfig::default()
            },
            eval: EvalSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Corpus,
    Pretrain,
    Pools,
    Optimize,
    Evaluate,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Corpus => "corpus",
            Stage::Pretrain => "pretrain",
            Stage::Pools => "pools",
            Stage::Optimize => "optimize",
            Stage::Evaluate => "evaluate",
        }
    }
}

impl ExperimentConfig {
    /// Copy with every section seed replaced by its derivation from the
    /// master seed.
    pub fn normalized(&self) -> Self {
        let mut c = *self;
        c.model.init_seed = crate::seed::derive(c.seed, "init", 0);
        c.pretrain.seed = crate::seed::derive(c.seed, "pretrain", 0);
        c.optim.seed = crate::seed::derive(c.seed, "optimize", 0);
        c
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_text(path)?)
    }

    pub fn world(&self) -> Result<World> {
        World::new(self.world)
    }

    /// SHA-256 of the canonical (compact, normalized) serialization.
    pub fn hash(&self) -> String {
        crate::seed::sha256_hex(serde_json::to_string(&self.normalized()).expect("config serializes").as_bytes())
    }

    /// Hash of the sections a stage's output depends on.
    pub fn stage_hash(&self, stage: Stage) -> String {
        let c = self.normalized();
        let mut parts = vec![serde_json::json!({ "seed": c.seed, "world": c.world, "corpus": c.corpus })];
        if stage >= Stage::Pretrain {
            parts.push(serde_json::json!({ "model": c.model, "pretrain": c.pretrain }));
        }
        if stage >= Stage::Pools {
            parts.push(serde_json::json!({ "decode": c.decode, "pools": c.pools }));
        }
        if stage >= Stage::Optimize {
            parts.push(serde_json::json!({ "optim": c.optim }));
        }
        if stage >= Stage::Evaluate {
            parts.push(serde_json::json!({ "eval": c.eval }));
        }
        crate::seed::sha256_hex(serde_json::to_string(&parts).expect("json").as_bytes())
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            decode: self.decode,
            good_threshold: self.eval.good_threshold,
            seed: crate::seed::derive(self.seed, "eval", 0),
        }
    }

    pub fn sampling_seed(&self, round: usize) -> u64 {
        crate::seed::derive(self.seed, "sample-pools", round as u64)
    }
}

/// The three disjoint corpus splits.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub train: Vec<CorpusPair>,
    pub pool: Vec<CorpusPair>,
    pub eval: Vec<CorpusPair>,
}

impl Corpus {
    pub fn training_examples(&self) -> Vec<TrainingExample> {
        self.train.iter().map(CorpusPair::training_example).collect()
    }

    /// Training examples with stuttered targets, deterministic per seed.
    pub fn noisy_training_examples(&self, stutter_rate: f64, seed: u64) -> Vec<TrainingExample> {
        let mut rng = crate::seed::stage_rng(seed, "stutter", 0);
        self.training_examples()
            .into_iter()
            .map(|mut ex| {
                ex.target = TokenSequence::new(stutter(ex.target.tokens(), stutter_rate, &mut rng));
                ex
            })
            .collect()
    }

    pub fn pool_contexts(&self) -> Vec<crate::seqmodel::ConditioningContext> {
        self.pool.iter().map(CorpusPair::context).collect()
    }

    pub fn eval_contexts(&self) -> Vec<crate::seqmodel::ConditioningContext> {
        self.eval.iter().map(CorpusPair::context).collect()
    }
}

pub fn build_corpus(cfg: &ExperimentConfig) -> Result<Corpus> {
    let world = cfg.world()?;
    let seed = crate::seed::derive(cfg.seed, "corpus", 0);
    Ok(Corpus {
        train: gen_corpus(&world, cfg.corpus.train, seed, Split::Train)?,
        pool: gen_corpus(&world, cfg.corpus.pool, seed, Split::Pool)?,
        eval: gen_corpus(&world, cfg.corpus.eval, seed, Split::Eval)?,
    })
}

pub fn init_model(cfg: &ExperimentConfig) -> Result<ModelParams> {
    ModelParams::init(cfg.world()?.vocab, cfg.normalized().model)
}

pub fn pretrain_model(cfg: &ExperimentConfig, corpus: &Corpus) -> Result<PretrainOutcome> {
    let c = cfg.normalized();
    pretrain(&init_model(cfg)?, &corpus.noisy_training_examples(c.corpus.stutter_rate, c.seed), &c.pretrain)
}

/// Candidates for pool construction drawn from `sampler`.
pub fn draw_candidates(
    cfg: &ExperimentConfig,
    sampler: &ModelParams,
    corpus: &Corpus,
    k_per_input: usize,
    round: usize,
) -> Result<Vec<Candidate>> {
    sample_candidates(sampler, &cfg.world()?, &corpus.pool_contexts(), k_per_input, &cfg.decode, cfg.sampling_seed(round))
}

/// Select pools from candidates according to `policy`.
pub fn select_pools(cfg: &ExperimentConfig, candidates: &[Candidate], policy: Policy, seed: u64) -> Result<PoolFile> {
    let mut header = PoolHeader {
        format: POOL_FORMAT.into(),
        policy,
        seed,
        config_hash: cfg.stage_hash(Stage::Pools),
        lineage: Vec::new(),
        n_candidates: candidates.len(),
        selection: None,
        min_gap: None,
    };
    let (samples, pairs) = match policy {
        Policy::Rio | Policy::ForwardOnly => {
            header.selection = Some(cfg.pools.selection);
            let pools = if policy == Policy::Rio {
                select_rio(candidates, &cfg.pools.selection)?
            } else {
                select_forward_only(candidates, &cfg.pools.selection)?
            };
            (pools.all(), Vec::new())
        }
        Policy::DpoPairs => {
            header.min_gap = Some(cfg.pools.min_gap);
            (Vec::new(), select_dpo_pairs(candidates, cfg.pools.min_gap)?)
        }
    };
    Ok(PoolFile { header, samples, pairs })
}

/// Sample candidates with `sampler` and select pools under the configured
/// policy.
pub fn build_pools(cfg: &ExperimentConfig, sampler: &ModelParams, corpus: &Corpus, round: usize) -> Result<PoolFile> {
    let k = match cfg.pools.policy {
        Policy::DpoPairs => cfg.pools.dpo_k_per_input,
        _ => cfg.pools.k_per_input,
    };
    let candidates = draw_candidates(cfg, sampler, corpus, k, round)?;
    select_pools(cfg, &candidates, cfg.pools.policy, cfg.sampling_seed(round))
}

/// Optimize `reference` (also the starting point) on a pool file.
pub fn optimize_model(cfg: &ExperimentConfig, reference: &ModelParams, pools: &PoolFile) -> Result<(ModelParams, Vec<LogRow>)> {
    let c = cfg.normalized();
    let data = match c.optim.method {
        Method::Rio => PreferenceData::Samples(&pools.samples),
        Method::Dpo | Method::Odpo => PreferenceData::Pairs(&pools.pairs),
    };
    optimize(reference, reference, data, &c.optim)
}

pub fn evaluate_model(
    cfg: &ExperimentConfig,
    model: &ModelParams,
    model_id: &str,
    corpus: &Corpus,
    corpus_hash: &str,
) -> Result<MetricsReport> {
    evaluate(
        model,
        model_id,
        &cfg.world()?,
        &corpus.eval_contexts(),
        &cfg.eval_config(),
        &cfg.stage_hash(Stage::Evaluate),
        corpus_hash,
    )
}

/// One round of sample → select → optimize → evaluate.
#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub round: usize,
    pub pools: PoolFile,
    pub model: ModelParams,
    pub log: Vec<LogRow>,
    pub report: MetricsReport,
}

/// Chained rounds: round `i` samples from and is anchored to the round
/// `i - 1` model. Stops at the first failing round and returns the rounds
/// completed so far together with the error.
pub fn iterate(
    cfg: &ExperimentConfig,
    base: &ModelParams,
    corpus: &Corpus,
    corpus_hash: &str,
    rounds: usize,
) -> Result<(Vec<RoundOutcome>, Option<RioError>)> {
    if rounds == 0 {
        return Err(RioError::precondition("rounds must be at least 1"));
    }
    let mut out: Vec<RoundOutcome> = Vec::new();
    for round in 0..rounds {
        let current = out.last().map(|r| &r.model).unwrap_or(base);
        let step = (|| {
            let pools = build_pools(cfg, current, corpus, round)?;
            let (model, log) = optimize_model(cfg, current, &pools)?;
            let report = evaluate_model(cfg, &model, &format!("round-{}", round + 1), corpus, corpus_hash)?;
            Ok(RoundOutcome { round: round + 1, pools, model, log, report })
        })();
        match step {
            Ok(r) => out.push(r),
            Err(e) => return Ok((out, Some(e))),
        }
    }
    Ok((out, None))
}

// ---- artifact files ----

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> RioError + '_ {
    move |source| RioError::Io { path: path.display().to_string(), source }
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(io_err(path))
}

/// Content hash of a file.
pub fn file_hash(path: &Path) -> Result<String> {
    Ok(crate::seed::sha256_hex(&std::fs::read(path).map_err(io_err(path))?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusHeader {
    pub format: String,
    pub config_hash: String,
    pub train: usize,
    pub pool: usize,
    pub eval: usize,
}

/// Write all splits, preceded by a header line.
pub fn write_corpus_file(path: &Path, cfg: &ExperimentConfig, corpus: &Corpus) -> Result<()> {
    let io = io_err(path);
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(&io)?);
    let header = CorpusHeader {
        format: CORPUS_FORMAT.into(),
        config_hash: cfg.stage_hash(Stage::Corpus),
        train: corpus.train.len(),
        pool: corpus.pool.len(),
        eval: corpus.eval.len(),
    };
    serde_json::to_writer(&mut f, &header)?;
    f.write_all(b"\n").map_err(&io)?;
    for p in corpus.train.iter().chain(&corpus.pool).chain(&corpus.eval) {
        serde_json::to_writer(&mut f, &p.to_record())?;
        f.write_all(b"\n").map_err(&io)?;
    }
    f.flush().map_err(io)
}

pub fn read_corpus_file(path: &Path) -> Result<(CorpusHeader, Corpus)> {
    let io = io_err(path);
    let artifact = |detail: &str| RioError::Artifact { path: path.display().to_string(), detail: detail.into() };
    let f = std::io::BufReader::new(std::fs::File::open(path).map_err(&io)?);
    let mut lines = f.lines();
    let first = lines.next().ok_or_else(|| artifact("empty corpus file"))?.map_err(&io)?;
    let header: CorpusHeader = serde_json::from_str(&first).map_err(|_| artifact("missing corpus header"))?;
    if header.format != CORPUS_FORMAT {
        return Err(artifact("unsupported corpus format"));
    }
    let mut corpus = Corpus { train: Vec::new(), pool: Vec::new(), eval: Vec::new() };
    for line in lines {
        let line = line.map_err(&io)?;
        if line.trim().is_empty() {
            continue;
        }
        let pair = serde_json::from_str::<CorpusRecord>(&line)?.into_pair();
        match pair.split {
            Split::Train => corpus.train.push(pair),
            Split::Pool => corpus.pool.push(pair),
            Split::Eval => corpus.eval.push(pair),
        }
    }
    if (corpus.train.len(), corpus.pool.len(), corpus.eval.len()) != (header.train, header.pool, header.eval) {
        return Err(artifact("split sizes disagree with header"));
    }
    Ok((header, corpus))
}

/// Fail unless `found` equals the hash the current config gives `stage`.
pub fn expect_stage(cfg: &ExperimentConfig, stage: Stage, artifact: &str, found: &str) -> Result<()> {
    let expected = cfg.stage_hash(stage);
    if found != expected {
        return Err(RioError::ConfigMismatch { artifact: artifact.into(), found: found.into(), expected });
    }
    Ok(())
}

pub fn save_checkpoint(path: &Path, model: &ModelParams, stage_hash: String, lineage: Vec<String>) -> Result<()> {
    Checkpoint::new(model, stage_hash, lineage).save(path)
}

pub fn decode_summary(d: &DecodeConfig) -> String {
    format!("temperature {} top_k {} max_len {}", d.temperature, d.top_k, d.max_len)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.corpus = CorpusSizes { train: 30, pool: 20, eval: 10, ..Default::default() };
        c
    }

    #[test]
    fn config_roundtrip_and_hash() {
        let c = ExperimentConfig::default();
        let back = ExperimentConfig::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let mut d = c;
        d.optim.lr = 5e-4;
        assert_ne!(d.hash(), c.hash());
        assert_eq!(d.stage_hash(Stage::Pools), c.stage_hash(Stage::Pools));
        assert_ne!(d.stage_hash(Stage::Optimize), c.stage_hash(Stage::Optimize));
        let mut e = c;
        e.pretrain.seed = 99;
        assert_eq!(e.hash(), c.hash());
        assert!(ExperimentConfig::from_json(r#"{"seed": 1}"#).is_err());
    }

    #[test]
    fn corpus_file_roundtrip() {
        let c = small();
        let corpus = build_corpus(&c).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(CORPUS_FILE);
        write_corpus_file(&p, &c, &corpus).unwrap();
        let (h, back) = read_corpus_file(&p).unwrap();
        assert_eq!(back, corpus);
        expect_stage(&c, Stage::Corpus, "corpus", &h.config_hash).unwrap();
        let mut other = c;
        other.seed = 1;
        assert!(matches!(
            expect_stage(&other, Stage::Corpus, "corpus", &h.config_hash),
            Err(RioError::ConfigMismatch { .. })
        ));
    }
}
