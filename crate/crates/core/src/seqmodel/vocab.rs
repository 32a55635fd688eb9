use serde::{Deserialize, Serialize};

use crate::error::{Result, RioError};

/// Token alphabet: acoustic ids `[0, acoustic_size)`, transcript symbols
/// `[acoustic_size, acoustic_size + text_size)`, then BOS, SEP and EOS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Vocabulary {
    pub acoustic_size: usize,
    pub text_size: usize,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Vocabulary { acoustic_size: 32, text_size: 12 }
    }
}

impl Vocabulary {
    pub fn new(acoustic_size: usize, text_size: usize) -> Result<Self> {
        if acoustic_size < 2 || text_size < 2 {
            return Err(RioError::precondition(format!(
                "vocabulary needs acoustic_size >= 2 and text_size >= 2, got {acoustic_size}/{text_size}"
            )));
        }
        Ok(Vocabulary { acoustic_size, text_size })
    }

    pub fn total_size(&self) -> usize {
        self.acoustic_size + self.text_size + 3
    }

    pub fn bos(&self) -> u32 {
        (self.acoustic_size + self.text_size) as u32
    }

    pub fn sep(&self) -> u32 {
        self.bos() + 1
    }

    pub fn eos(&self) -> u32 {
        self.bos() + 2
    }

    /// Size of the output distribution: every acoustic token plus EOS.
    pub fn output_size(&self) -> usize {
        self.acoustic_size + 1
    }

    /// Output slot used for EOS.
    pub fn eos_slot(&self) -> usize {
        self.acoustic_size
    }

    pub fn is_acoustic(&self, id: u32) -> bool {
        (id as usize) < self.acoustic_size
    }

    pub fn is_text(&self, id: u32) -> bool {
        let id = id as usize;
        id >= self.acoustic_size && id < self.acoustic_size + self.text_size
    }

    pub fn text_id(&self, symbol: usize) -> u32 {
        debug_assert!(symbol < self.text_size);
        (self.acoustic_size + symbol) as u32
    }

    /// Symbol index of a text id.
    pub fn symbol(&self, id: u32) -> usize {
        id as usize - self.acoustic_size
    }
}

/// Ordered token ids. Whether a token is acoustic or text follows from its id
/// range in the [`Vocabulary`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(pub Vec<u32>);

impl TokenSequence {
    pub fn new(tokens: Vec<u32>) -> Self {
        TokenSequence(tokens)
    }

    pub fn from_symbols(vocab: &Vocabulary, symbols: &[usize]) -> Self {
        TokenSequence(symbols.iter().map(|&s| vocab.text_id(s)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tokens(&self) -> &[u32] {
        &self.0
    }

    pub fn is_acoustic(&self, vocab: &Vocabulary) -> bool {
        self.0.iter().all(|&t| vocab.is_acoustic(t))
    }

    pub fn is_text(&self, vocab: &Vocabulary) -> bool {
        self.0.iter().all(|&t| vocab.is_text(t))
    }

    /// Transcript symbols of a text sequence.
    pub fn symbols(&self, vocab: &Vocabulary) -> Vec<usize> {
        self.0.iter().map(|&t| vocab.symbol(t)).collect()
    }
}

impl From<Vec<u32>> for TokenSequence {
    fn from(v: Vec<u32>) -> Self {
        TokenSequence(v)
    }
}

/// The conditioning triple: prompt speech X, its transcript T_X and the target
/// transcript T_Y.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConditioningContext {
    pub prompt_speech: TokenSequence,
    pub prompt_text: TokenSequence,
    pub target_text: TokenSequence,
}

impl ConditioningContext {
    pub fn new(prompt_speech: TokenSequence, prompt_text: TokenSequence, target_text: TokenSequence) -> Self {
        ConditioningContext { prompt_speech, prompt_text, target_text }
    }

    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        if self.prompt_speech.is_empty() || self.prompt_text.is_empty() || self.target_text.is_empty() {
            return Err(RioError::precondition("conditioning sequences must be non-empty"));
        }
        if !self.prompt_speech.is_acoustic(vocab) {
            return Err(RioError::precondition("prompt speech contains non-acoustic ids"));
        }
        if !self.prompt_text.is_text(vocab) || !self.target_text.is_text(vocab) {
            return Err(RioError::precondition("transcripts contain non-text ids"));
        }
        Ok(())
    }

    /// The serialized layout `BOS T_X SEP X SEP T_Y SEP`; the scored
    /// continuation follows it.
    pub fn serialize(&self, vocab: &Vocabulary) -> Vec<u32> {
        let mut out = Vec::with_capacity(self.prompt_speech.len() + self.prompt_text.len() + self.target_text.len() + 4);
        out.push(vocab.bos());
        out.extend_from_slice(self.prompt_text.tokens());
        out.push(vocab.sep());
        out.extend_from_slice(self.prompt_speech.tokens());
        out.push(vocab.sep());
        out.extend_from_slice(self.target_text.tokens());
        out.push(vocab.sep());
        out
    }

    /// Role swap used by reverse inference: the generation becomes the speech
    /// prompt, the target transcript becomes the prompt transcript and the
    /// original prompt transcript becomes the target.
    pub fn reversed(&self, generation: &TokenSequence) -> ConditioningContext {
        ConditioningContext {
            prompt_speech: generation.clone(),
            prompt_text: self.target_text.clone(),
            target_text: self.prompt_text.clone(),
        }
    }
}

/// Per-token log-probabilities of a scored continuation (EOS included).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogProbTrace {
    pub per_token_logp: Vec<f64>,
    pub total: f64,
}

impl LogProbTrace {
    pub fn from_steps(per_token_logp: Vec<f64>) -> Self {
        let total = per_token_logp.iter().sum();
        LogProbTrace { per_token_logp, total }
    }

    pub fn len(&self) -> usize {
        self.per_token_logp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_token_logp.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn control_tokens_are_distinct_from_content() {
        let v = Vocabulary::default();
        assert_eq!(v.total_size(), 47);
        for c in [v.bos(), v.sep(), v.eos()] {
            assert!(!v.is_acoustic(c) && !v.is_text(c));
            assert!((c as usize) < v.total_size());
        }
        assert!(v.is_text(v.text_id(0)) && v.is_text(v.text_id(11)));
        assert!(Vocabulary::new(1, 4).is_err());
        assert!(Vocabulary::new(4, 1).is_err());
    }

    #[test]
    fn serialization_layout() {
        let v = Vocabulary::new(4, 2).unwrap();
        let ctx = ConditioningContext::new(
            TokenSequence::new(vec![1, 2]),
            TokenSequence::from_symbols(&v, &[0]),
            TokenSequence::from_symbols(&v, &[1, 0]),
        );
        ctx.validate(&v).unwrap();
        assert_eq!(ctx.serialize(&v), vec![v.bos(), 4, v.sep(), 1, 2, v.sep(), 5, 4, v.sep()]);
    }

    #[test]
    fn double_reversal_restores_layout() {
        let v = Vocabulary::default();
        let ctx = ConditioningContext::new(
            TokenSequence::new(vec![3, 4, 5]),
            TokenSequence::from_symbols(&v, &[1, 2, 3]),
            TokenSequence::from_symbols(&v, &[4, 5]),
        );
        let gen = TokenSequence::new(vec![9, 9]);
        let back = ctx.reversed(&gen).reversed(&ctx.prompt_speech);
        assert_eq!(back, ctx);
    }

    #[test]
    fn invalid_contexts_are_rejected() {
        let v = Vocabulary::default();
        let text = TokenSequence::from_symbols(&v, &[1]);
        let ok = ConditioningContext::new(TokenSequence::new(vec![0]), text.clone(), text.clone());
        assert!(ok.validate(&v).is_ok());
        let empty = ConditioningContext::new(TokenSequence::default(), text.clone(), text.clone());
        assert!(empty.validate(&v).is_err());
        let mixed = ConditioningContext::new(TokenSequence::new(vec![v.text_id(0)]), text.clone(), text);
        assert!(mixed.validate(&v).is_err());
    }
}
