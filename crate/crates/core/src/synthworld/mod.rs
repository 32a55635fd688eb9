//! The synthetic speech world.
//!
//! A speaker style is an `(offset, duration)` pair. Transcript symbol `t` is
//! spoken as `duration` copies of the acoustic token
//! `(multiplier * t + offset) mod acoustic_size`. Transcripts never repeat a
//! symbol back to back, so every ground-truth run of identical tokens has
//! length exactly `duration`.
//!
//! The three annotators only ever see token sequences; they estimate style
//! from the tokens themselves:
//!
//! - [`World::quality_score`]: MOS analogue, 5 minus weighted penalties for
//!   style inconsistency, length error, repetition and invalid tokens.
//! - [`World::wer_score`]: decode runs back to symbols under the vote-estimated
//!   style, then edit distance against the reference.
//! - [`World::sim_score`]: overlap of per-token offset histograms.

mod corpus;
mod oracles;

pub use corpus::{
    gen_corpus, read_corpus, stutter, style_split, write_corpus, CorpusPair, CorpusRecord, Split, MAX_ATTEMPTS_PER_PAIR,
};
pub use oracles::{levenshtein, QualityScore, QualityWeights, PenaltyBreakdown};

use serde::{Deserialize, Serialize};

use crate::error::{Result, RioError};
use crate::seqmodel::{ConditioningContext, SequenceModel, TokenSequence, Vocabulary};

/// Largest speaking duration (tokens per transcript symbol).
pub const MAX_DURATION: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SpeakerStyle {
    pub offset: usize,
    pub duration: usize,
}

/// A (speech, transcript, style) triple. `style` is only known for
/// ground-truth data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speech: TokenSequence,
    pub text: TokenSequence,
    pub style: Option<SpeakerStyle>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub acoustic_size: usize,
    pub text_size: usize,
    /// Public emission multiplier; must be coprime with `acoustic_size`.
    pub multiplier: usize,
    /// Approximate prompt speech length in tokens.
    pub prompt_tokens: usize,
    /// Target speech length range in tokens (inclusive).
    pub target_tokens_min: usize,
    pub target_tokens_max: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            acoustic_size: 32,
            text_size: 12,
            multiplier: 5,
            prompt_tokens: 12,
            target_tokens_min: 20,
            target_tokens_max: 64,
        }
    }
}

/// World parameters plus the oracle weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct World {
    pub config: WorldConfig,
    pub vocab: Vocabulary,
    pub weights: QualityWeights,
    inverse_multiplier: usize,
}

impl World {
    pub fn new(config: WorldConfig) -> Result<Self> {
        let vocab = Vocabulary::new(config.acoustic_size, config.text_size)?;
        let inverse_multiplier = mod_inverse(config.multiplier, config.acoustic_size).ok_or_else(|| {
            RioError::precondition(format!(
                "multiplier {} is not coprime with acoustic_size {}",
                config.multiplier, config.acoustic_size
            ))
        })?;
        if config.text_size > config.acoustic_size {
            return Err(RioError::precondition("text_size must not exceed acoustic_size"));
        }
        if config.target_tokens_min == 0 || config.target_tokens_min > config.target_tokens_max || config.prompt_tokens == 0 {
            return Err(RioError::precondition("invalid prompt/target length settings"));
        }
        Ok(World { config, vocab, weights: QualityWeights::default(), inverse_multiplier })
    }

    pub fn default_world() -> Self {
        World::new(WorldConfig::default()).expect("default world is valid")
    }

    pub fn acoustic_size(&self) -> usize {
        self.config.acoustic_size
    }

    /// Acoustic token for `symbol` spoken with `offset`.
    pub fn emit_token(&self, symbol: usize, offset: usize) -> u32 {
        ((self.config.multiplier * symbol + offset) % self.acoustic_size()) as u32
    }

    /// Ground-truth speech for a transcript.
    pub fn emit(&self, symbols: &[usize], style: SpeakerStyle) -> TokenSequence {
        let mut out = Vec::with_capacity(symbols.len() * style.duration);
        for &s in symbols {
            for _ in 0..style.duration {
                out.push(self.emit_token(s, style.offset));
            }
        }
        TokenSequence::new(out)
    }

    pub fn utterance(&self, symbols: &[usize], style: SpeakerStyle) -> Utterance {
        Utterance {
            speech: self.emit(symbols, style),
            text: TokenSequence::from_symbols(&self.vocab, symbols),
            style: Some(style),
        }
    }

    /// Symbol that `token` decodes to under `offset` (may be out of the
    /// transcript alphabet).
    pub fn decode_raw(&self, token: u32, offset: usize) -> usize {
        let a = self.acoustic_size();
        (self.inverse_multiplier * ((token as usize + a - offset % a) % a)) % a
    }

    pub fn is_consistent(&self, token: u32, offset: usize) -> bool {
        self.vocab.is_acoustic(token) && self.decode_raw(token, offset) < self.config.text_size
    }

    /// Offset `o` implied for `token` if it were spoken for `symbol`.
    pub fn implied_offset(&self, token: u32, symbol: usize) -> usize {
        let a = self.acoustic_size();
        (token as usize + a * self.config.multiplier - (self.config.multiplier * symbol) % a) % a
    }

    pub fn all_styles(&self) -> Vec<SpeakerStyle> {
        (1..=MAX_DURATION)
            .flat_map(|duration| (0..self.acoustic_size()).map(move |offset| SpeakerStyle { offset, duration }))
            .collect()
    }

    /// Style recovered from a ground-truth prompt: duration from the length
    /// ratio, offset from the first token.
    pub fn infer_style(&self, speech: &TokenSequence, text: &TokenSequence) -> Option<SpeakerStyle> {
        if speech.is_empty() || text.is_empty() || speech.len() % text.len() != 0 {
            return None;
        }
        let duration = speech.len() / text.len();
        let symbol = self.vocab.symbol(text.tokens()[0]);
        Some(SpeakerStyle { offset: self.implied_offset(speech.tokens()[0], symbol), duration })
    }
}

fn mod_inverse(a: usize, m: usize) -> Option<usize> {
    let (mut old_r, mut r) = (a as i64, m as i64);
    let (mut old_s, mut s) = (1i64, 0i64);
    while r != 0 {
        let q = old_r / r;
        (old_r, r) = (r, old_r - q * r);
        (old_s, s) = (s, old_s - q * s);
    }
    if old_r != 1 {
        return None;
    }
    Some(old_s.rem_euclid(m as i64) as usize)
}

/// A generator that reads the speaker style off the prompt and speaks the
/// target transcript perfectly: the ground-truth upper bound.
#[derive(Debug, Clone, Copy)]
pub struct GroundTruthSpeaker {
    pub world: World,
}

impl SequenceModel for GroundTruthSpeaker {
    fn vocab(&self) -> &Vocabulary {
        &self.world.vocab
    }

    fn next_logits(&self, ctx: &ConditioningContext, prefix: &[u32]) -> Result<Vec<f64>> {
        let vocab = &self.world.vocab;
        let style = self
            .world
            .infer_style(&ctx.prompt_speech, &ctx.prompt_text)
            .ok_or_else(|| RioError::DegenerateInput("prompt is not a ground-truth utterance".into()))?;
        let speech = self.world.emit(&ctx.target_text.symbols(vocab), style);
        let mut logits = vec![-50.0; vocab.output_size()];
        let slot = speech.tokens().get(prefix.len()).map(|&t| t as usize).unwrap_or(vocab.eos_slot());
        logits[slot] = 0.0;
        Ok(logits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multiplier_must_be_coprime() {
        assert!(World::new(WorldConfig { multiplier: 4, ..Default::default() }).is_err());
        assert_eq!(mod_inverse(5, 32), Some(13));
    }

    #[test]
    fn decode_inverts_emission() {
        let w = World::default_world();
        for o in 0..32 {
            for s in 0..12 {
                let t = w.emit_token(s, o);
                assert_eq!(w.decode_raw(t, o), s);
                assert_eq!(w.implied_offset(t, s), o);
            }
        }
    }

    #[test]
    fn ground_truth_invariant() {
        let w = World::default_world();
        let style = SpeakerStyle { offset: 7, duration: 3 };
        let u = w.utterance(&[1, 4, 2], style);
        assert_eq!(u.speech.len(), 9);
        for (i, &tok) in u.speech.tokens().iter().enumerate() {
            let sym = [1, 4, 2][i / 3];
            assert_eq!(tok as usize, (5 * sym + 7) % 32);
        }
        assert_eq!(w.infer_style(&u.speech, &u.text), Some(style));
    }
}
