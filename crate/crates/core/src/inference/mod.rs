//! Forward zero-shot generation, reverse inference and the Bayes check.

mod bayes;

pub use bayes::{bayes_check, BayesReport, TinyWorldSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Result, RioError};
use crate::seqmodel::{sample, ConditioningContext, DecodeConfig, LogProbTrace, SequenceModel, TokenSequence};
use crate::synthworld::{QualityScore, World};

/// Oracle scores of one generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub mos: f64,
    pub wer: f64,
    pub sim: f64,
}

impl Scores {
    /// Scores assigned to an empty generation.
    pub fn degenerate() -> Self {
        Scores { mos: 1.0, wer: 100.0, sim: 0.0 }
    }
}

/// A sampled sequence with its sampling trace and oracle scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredGeneration {
    pub speech: TokenSequence,
    pub trace: LogProbTrace,
    pub quality: QualityScore,
    pub scores: Scores,
    pub seed: u64,
}

fn score_against(
    world: &World,
    speech: &TokenSequence,
    text: &TokenSequence,
    style_reference: &TokenSequence,
) -> Result<(QualityScore, Scores)> {
    let quality = world.quality_score(speech, text)?;
    let wer = world.wer_score(speech, text)?;
    let sim = if speech.is_empty() { 0.0 } else { world.sim_score(speech, style_reference)? };
    Ok((quality, Scores { mos: quality.mos, wer, sim }))
}

/// Sample Ŷ for `ctx` and score it against T_Y (quality, WER) and X (SIM).
pub fn zero_shot<M: SequenceModel + ?Sized>(
    model: &M,
    world: &World,
    ctx: &ConditioningContext,
    decode: &DecodeConfig,
    seed: u64,
) -> Result<ScoredGeneration> {
    let (speech, trace) = sample(model, ctx, decode, seed)?;
    let (quality, scores) = score_against(world, &speech, &ctx.target_text, &ctx.prompt_speech)?;
    Ok(ScoredGeneration { speech, trace, quality, scores, seed })
}

/// Use Ŷ as the speech prompt with the transcripts swapped, sample X̂ and
/// score it against T_X (quality, WER) and Ŷ (SIM).
pub fn reverse_infer<M: SequenceModel + ?Sized>(
    model: &M,
    world: &World,
    ctx: &ConditioningContext,
    generation: &TokenSequence,
    decode: &DecodeConfig,
    seed: u64,
) -> Result<ScoredGeneration> {
    if generation.is_empty() {
        return Err(RioError::DegenerateInput("cannot reverse-infer from an empty generation".into()));
    }
    let reversed = ctx.reversed(generation);
    let (speech, trace) = sample(model, &reversed, decode, seed)?;
    let (quality, scores) = score_against(world, &speech, &reversed.target_text, generation)?;
    Ok(ScoredGeneration { speech, trace, quality, scores, seed })
}

/// Forward generation plus (unless degenerate) its reverse inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferencePair {
    pub context: ConditioningContext,
    pub forward: ScoredGeneration,
    pub reverse: Option<ScoredGeneration>,
}

impl InferencePair {
    /// The context the reverse pass was (or would be) conditioned on.
    pub fn reverse_context(&self) -> ConditioningContext {
        self.context.reversed(&self.forward.speech)
    }
}

pub fn run_pair<M: SequenceModel + ?Sized>(
    model: &M,
    world: &World,
    ctx: &ConditioningContext,
    decode: &DecodeConfig,
    forward_seed: u64,
    reverse_seed: u64,
) -> Result<InferencePair> {
    let forward = zero_shot(model, world, ctx, decode, forward_seed)?;
    let reverse = if forward.speech.is_empty() {
        None
    } else {
        Some(reverse_infer(model, world, ctx, &forward.speech, decode, reverse_seed)?)
    };
    Ok(InferencePair { context: ctx.clone(), forward, reverse })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqmodel::{ModelConfig, ModelParams, SilentModel};
    use crate::synthworld::{gen_corpus, GroundTruthSpeaker, Split};

    #[test]
    fn ground_truth_speaker_is_perfect_both_ways() {
        let world = World::default_world();
        let speaker = GroundTruthSpeaker { world };
        for pair in gen_corpus(&world, 20, 4, Split::Eval).unwrap() {
            let ip = run_pair(&speaker, &world, &pair.context(), &DecodeConfig::greedy(96), 0, 1).unwrap();
            assert_eq!(ip.forward.speech, pair.target.speech);
            assert_eq!(ip.forward.scores, Scores { mos: 5.0, wer: 0.0, sim: 1.0 });
            let rev = ip.reverse.unwrap();
            assert_eq!(rev.speech, pair.prompt.speech);
            assert_eq!(rev.scores.mos, 5.0);
        }
    }

    #[test]
    fn reverse_context_swaps_roles_exactly() {
        let world = World::default_world();
        let m = ModelParams::init(world.vocab, ModelConfig { width: 8, embed_dim: 4, ..Default::default() }).unwrap();
        let pair = &gen_corpus(&world, 1, 0, Split::Eval).unwrap()[0];
        let ctx = pair.context();
        let ip = run_pair(&m, &world, &ctx, &DecodeConfig::default(), 3, 4).unwrap();
        let rc = ip.reverse_context();
        assert_eq!(rc.prompt_speech, ip.forward.speech);
        assert_eq!(rc.prompt_text, ctx.target_text);
        assert_eq!(rc.target_text, ctx.prompt_text);
        assert_eq!(serde_json::to_string(&rc.reversed(&ctx.prompt_speech)).unwrap(), serde_json::to_string(&ctx).unwrap());
        assert_eq!(ip, run_pair(&m, &world, &ctx, &DecodeConfig::default(), 3, 4).unwrap());
    }

    #[test]
    fn empty_generation_is_degenerate() {
        let world = World::default_world();
        let pair = &gen_corpus(&world, 1, 0, Split::Eval).unwrap()[0];
        let silent = SilentModel { vocab: world.vocab };
        let ip = run_pair(&silent, &world, &pair.context(), &DecodeConfig::default(), 0, 0).unwrap();
        assert!(ip.forward.speech.is_empty());
        assert!(ip.reverse.is_none());
        assert_eq!(ip.forward.scores, Scores::degenerate());
        assert!(matches!(
            reverse_infer(&silent, &world, &pair.context(), &TokenSequence::default(), &DecodeConfig::default(), 0),
            Err(RioError::DegenerateInput(_))
        ));
    }
}
