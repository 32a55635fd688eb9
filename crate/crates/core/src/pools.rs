//! Sampling and annotation: draw candidates from the reference model, score
//! them forward and reverse, and select preference pools.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RioError};
use crate::inference::{run_pair, Scores};
use crate::seqmodel::{ConditioningContext, DecodeConfig, SequenceModel, TokenSequence};
use crate::synthworld::World;

pub const POOL_FORMAT: &str = "rio-pools/1";

/// One forward generation with its forward and reverse scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: usize,
    /// Index of the conditioning input this candidate was drawn for.
    pub input: usize,
    pub draw: usize,
    pub context: ConditioningContext,
    pub generation: TokenSequence,
    /// Whether sampling ended with EOS rather than at the length limit.
    pub terminated: bool,
    pub forward: Scores,
    /// Reverse-inference scores. An empty generation cannot serve as a
    /// prompt and gets [`Scores::degenerate`].
    pub reverse: Option<Scores>,
    pub forward_seed: u64,
    pub reverse_seed: u64,
}

impl Candidate {
    pub fn avg_mos(&self) -> Option<f64> {
        self.reverse.map(|r| 0.5 * (self.forward.mos + r.mos))
    }
}

/// Draw `k_per_input` forward generations per context and score each one
/// forward and reverse. Seeds derive from `(seed, candidate id)`.
pub fn sample_candidates<M: SequenceModel>(
    model: &M,
    world: &World,
    contexts: &[ConditioningContext],
    k_per_input: usize,
    decode: &DecodeConfig,
    seed: u64,
) -> Result<Vec<Candidate>> {
    if k_per_input == 0 {
        return Err(RioError::precondition("k_per_input must be at least 1"));
    }
    let jobs: Vec<(usize, usize)> =
        (0..contexts.len()).flat_map(|input| (0..k_per_input).map(move |draw| (input, draw))).collect();
    jobs.par_iter()
        .map(|&(input, draw)| {
            let id = input * k_per_input + draw;
            let forward_seed = crate::seed::derive(seed, "sample-forward", id as u64);
            let reverse_seed = crate::seed::derive(seed, "sample-reverse", id as u64);
            let ctx = &contexts[input];
            let pair = run_pair(model, world, ctx, decode, forward_seed, reverse_seed)?;
            let reverse = Some(pair.reverse.map(|r| r.scores).unwrap_or_else(Scores::degenerate));
            let terminated = pair.forward.trace.len() > pair.forward.speech.len();
            Ok(Candidate {
                id,
                input,
                draw,
                context: ctx.clone(),
                generation: pair.forward.speech,
                terminated,
                forward: pair.forward.scores,
                reverse,
                forward_seed,
                reverse_seed,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Desirable,
    Undesirable,
}

impl Label {
    /// +1 for desirable, -1 for undesirable.
    pub fn sign(self) -> f64 {
        match self {
            Label::Desirable => 1.0,
            Label::Undesirable => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    /// Rank by the mean of forward and reverse MOS.
    Rio,
    /// Rank by forward MOS alone.
    ForwardOnly,
    /// Best-vs-worst pairs per input.
    DpoPairs,
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Rio => "rio",
            Policy::ForwardOnly => "forward-only",
            Policy::DpoPairs => "dpo-pairs",
        }
    }
}

impl std::str::FromStr for Policy {
    type Err = RioError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rio" => Ok(Policy::Rio),
            "forward-only" => Ok(Policy::ForwardOnly),
            "dpo-pairs" => Ok(Policy::DpoPairs),
            other => Err(RioError::precondition(format!("unknown pool policy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceSample {
    pub candidate_id: usize,
    pub context: ConditioningContext,
    pub generation: TokenSequence,
    pub terminated: bool,
    pub forward: Scores,
    pub reverse: Option<Scores>,
    pub avg_mos: Option<f64>,
    pub label: Label,
    pub policy: Policy,
}

impl PreferenceSample {
    fn from_candidate(c: &Candidate, label: Label, policy: Policy) -> Self {
        PreferenceSample {
            candidate_id: c.id,
            context: c.context.clone(),
            generation: c.generation.clone(),
            terminated: c.terminated,
            forward: c.forward,
            reverse: c.reverse,
            avg_mos: c.avg_mos(),
            label,
            policy,
        }
    }
}

/// One side of a DPO pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMember {
    pub candidate_id: usize,
    pub generation: TokenSequence,
    pub terminated: bool,
    pub forward: Scores,
    pub reverse: Option<Scores>,
    pub avg_mos: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedPreferenceSample {
    pub input: usize,
    pub context: ConditioningContext,
    pub winner: PairMember,
    pub loser: PairMember,
    pub mos_gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub n_pos: usize,
    pub n_neg: usize,
    /// Forward WER threshold in percent: positives need less, negatives more.
    pub wer_threshold: f64,
    /// Apply the WER filter before taking the top/bottom `n` instead of after.
    pub rank_after_filter: bool,
    /// Additionally require negatives to have reverse MOS at most
    /// `reverse_failure_mos`.
    pub require_reverse_failure: bool,
    pub reverse_failure_mos: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            n_pos: 200,
            n_neg: 200,
            wer_threshold: 10.0,
            rank_after_filter: false,
            require_reverse_failure: false,
            reverse_failure_mos: 3.0,
        }
    }
}

/// The selected pools.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pools {
    pub positive: Vec<PreferenceSample>,
    pub negative: Vec<PreferenceSample>,
}

impl Pools {
    pub fn len(&self) -> usize {
        self.positive.len() + self.negative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Positives followed by negatives.
    pub fn all(&self) -> Vec<PreferenceSample> {
        self.positive.iter().chain(&self.negative).cloned().collect()
    }
}

/// Ranking key: avg_mos when reverse scores are known, forward MOS otherwise.
fn rank_key(c: &Candidate, policy: Policy) -> f64 {
    match policy {
        Policy::ForwardOnly => c.forward.mos,
        _ => c.avg_mos().unwrap_or(c.forward.mos),
    }
}

/// Best first: key desc, then forward mos desc, then id asc.
fn rank<'a>(candidates: &'a [Candidate], policy: Policy) -> Vec<&'a Candidate> {
    let mut ranked: Vec<&Candidate> = candidates.iter().collect();
    ranked.sort_by(|a, b| {
        rank_key(b, policy)
            .total_cmp(&rank_key(a, policy))
            .then(b.forward.mos.total_cmp(&a.forward.mos))
            .then(a.id.cmp(&b.id))
    });
    ranked
}

fn select_by(candidates: &[Candidate], cfg: &SelectionConfig, policy: Policy) -> Result<Pools> {
    let ranked = rank(candidates, policy);
    let pos_ok = |c: &Candidate| c.forward.wer < cfg.wer_threshold;
    let neg_ok = |c: &Candidate| {
        c.forward.wer > cfg.wer_threshold
            && (!cfg.require_reverse_failure || c.reverse.is_none_or(|r| r.mos <= cfg.reverse_failure_mos))
    };
    let (positive, negative): (Vec<&Candidate>, Vec<&Candidate>) = if cfg.rank_after_filter {
        (
            ranked.iter().copied().filter(|c| pos_ok(c)).take(cfg.n_pos).collect(),
            ranked.iter().rev().copied().filter(|c| neg_ok(c)).take(cfg.n_neg).collect(),
        )
    } else {
        (
            ranked.iter().copied().take(cfg.n_pos).filter(|c| pos_ok(c)).collect(),
            ranked.iter().rev().copied().take(cfg.n_neg).filter(|c| neg_ok(c)).collect(),
        )
    };
    if positive.is_empty() {
        return Err(RioError::EmptyPool { pool: "positive" });
    }
    if negative.is_empty() {
        return Err(RioError::EmptyPool { pool: "negative" });
    }
    Ok(Pools {
        positive: positive.iter().map(|c| PreferenceSample::from_candidate(c, Label::Desirable, policy)).collect(),
        negative: negative.iter().map(|c| PreferenceSample::from_candidate(c, Label::Undesirable, policy)).collect(),
    })
}

/// Rank by average of forward and reverse MOS, take the top `n_pos` with
/// forward WER below the threshold and the bottom `n_neg` with WER above it.
pub fn select_rio(candidates: &[Candidate], cfg: &SelectionConfig) -> Result<Pools> {
    if let Some(c) = candidates.iter().find(|c| c.reverse.is_none()) {
        return Err(RioError::precondition(format!("candidate {} has no reverse scores", c.id)));
    }
    select_by(candidates, cfg, Policy::Rio)
}

/// Same as [`select_rio`] but ranking by forward MOS; reverse scores are
/// ignored.
pub fn select_forward_only(candidates: &[Candidate], cfg: &SelectionConfig) -> Result<Pools> {
    select_by(candidates, cfg, Policy::ForwardOnly)
}

/// Best-vs-worst pair per input, kept when the avg_mos gap exceeds `min_gap`.
pub fn select_dpo_pairs(candidates: &[Candidate], min_gap: f64) -> Result<Vec<PairedPreferenceSample>> {
    let mut groups: BTreeMap<usize, Vec<Candidate>> = BTreeMap::new();
    for c in candidates {
        groups.entry(c.input).or_default().push(c.clone());
    }
    let mut out = Vec::new();
    for (input, group) in groups {
        if group.len() < 2 {
            return Err(RioError::precondition(format!("input {input} has fewer than 2 candidates")));
        }
        let ranked = rank(&group, Policy::DpoPairs);
        let (best, worst) = (ranked[0], ranked[ranked.len() - 1]);
        let member = |c: &Candidate| PairMember {
            candidate_id: c.id,
            generation: c.generation.clone(),
            terminated: c.terminated,
            forward: c.forward,
            reverse: c.reverse,
            avg_mos: rank_key(c, Policy::DpoPairs),
        };
        let (winner, loser) = (member(best), member(worst));
        let mos_gap = winner.avg_mos - loser.avg_mos;
        if mos_gap > min_gap && mos_gap > 0.0 {
            out.push(PairedPreferenceSample { input, context: best.context.clone(), winner, loser, mos_gap });
        }
    }
    if out.is_empty() {
        return Err(RioError::EmptyPairs(format!("no input has an avg_mos gap above {min_gap}")));
    }
    Ok(out)
}

/// Provenance record written as the first line of a pool file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolHeader {
    pub format: String,
    pub policy: Policy,
    pub seed: u64,
    pub config_hash: String,
    pub lineage: Vec<String>,
    pub n_candidates: usize,
    pub selection: Option<SelectionConfig>,
    pub min_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum PoolRecord {
    Header(PoolHeader),
    Sample(PreferenceSample),
    Pair(PairedPreferenceSample),
}

/// Pool file contents: either labelled samples or DPO pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolFile {
    pub header: PoolHeader,
    pub samples: Vec<PreferenceSample>,
    pub pairs: Vec<PairedPreferenceSample>,
}

impl PoolFile {
    pub fn write(&self, path: &Path) -> Result<()> {
        let io = |source| RioError::Io { path: path.display().to_string(), source };
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        let records = std::iter::once(PoolRecord::Header(self.header.clone()))
            .chain(self.samples.iter().cloned().map(PoolRecord::Sample))
            .chain(self.pairs.iter().cloned().map(PoolRecord::Pair));
        for r in records {
            serde_json::to_writer(&mut f, &r)?;
            f.write_all(b"\n").map_err(io)?;
        }
        f.flush().map_err(io)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let io = |source| RioError::Io { path: path.display().to_string(), source };
        let f = std::io::BufReader::new(std::fs::File::open(path).map_err(io)?);
        let mut header = None;
        let (mut samples, mut pairs) = (Vec::new(), Vec::new());
        for line in f.lines() {
            let line = line.map_err(io)?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(&line)? {
                PoolRecord::Header(h) if header.is_none() => header = Some(h),
                PoolRecord::Header(_) => {
                    return Err(RioError::Artifact { path: path.display().to_string(), detail: "duplicate header".into() })
                }
                PoolRecord::Sample(s) => samples.push(s),
                PoolRecord::Pair(p) => pairs.push(p),
            }
        }
        let header = header
            .ok_or_else(|| RioError::Artifact { path: path.display().to_string(), detail: "missing header".into() })?;
        if header.format != POOL_FORMAT {
            return Err(RioError::Artifact {
                path: path.display().to_string(),
                detail: format!("unsupported format `{}`", header.format),
            });
        }
        Ok(PoolFile { header, samples, pairs })
    }
}
