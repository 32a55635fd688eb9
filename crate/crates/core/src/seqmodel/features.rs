//! Prefix features read by the network at every decoding step.
//!
//! The prompt speech and the generated tokens form one continuous stream
//! (speech continuation). The network only sees run-length structure of that
//! stream and the step between the current and next transcript symbols under
//! a block pointer. Nothing here knows the speaker style: the network has to
//! carry it forward from the previous token.

use super::vocab::{ConditioningContext, Vocabulary};

/// Run lengths are capped at this value.
pub const RUN_CAP: usize = 4;

pub const SLOT_PREV: usize = 0;
pub const SLOT_RUN: usize = 1;
pub const SLOT_PREV_RUN: usize = 2;
/// Symbol step to the next block, or end of transcript.
pub const SLOT_DELTA: usize = 3;
pub const NUM_SLOTS: usize = 4;

/// Number of rows in each slot's embedding table.
pub fn slot_sizes(vocab: &Vocabulary) -> [usize; NUM_SLOTS] {
    let a = vocab.acoustic_size;
    let k = vocab.text_size;
    [a, RUN_CAP, RUN_CAP + 1, 2 * k]
}

pub type StepFeatures = [usize; NUM_SLOTS];

/// Incremental view of the prompt + generation stream.
#[derive(Debug, Clone)]
pub struct StreamState {
    vocab: Vocabulary,
    target_symbols: Vec<usize>,
    last_prompt_symbol: usize,
    prev: usize,
    run: usize,
    prev_run: usize,
    blocks: usize,
}

impl StreamState {
    /// Initial state after reading the prompt. The context must be valid.
    pub fn new(vocab: &Vocabulary, ctx: &ConditioningContext) -> Self {
        let speech = ctx.prompt_speech.tokens();
        let mut run = 0;
        let mut prev_run = 0;
        let mut prev = usize::MAX;
        for &t in speech {
            let t = t as usize;
            if t == prev {
                run += 1;
            } else {
                if run > 0 {
                    prev_run = run;
                }
                run = 1;
                prev = t;
            }
        }
        let prompt_symbols = ctx.prompt_text.symbols(vocab);
        StreamState {
            vocab: *vocab,
            target_symbols: ctx.target_text.symbols(vocab),
            last_prompt_symbol: *prompt_symbols.last().expect("validated prompt text"),
            prev,
            run,
            prev_run,
            blocks: 0,
        }
    }

    /// Advance by one generated acoustic token.
    pub fn push(&mut self, token: u32) {
        let t = token as usize;
        if t == self.prev {
            self.run += 1;
        } else {
            self.prev_run = self.run;
            self.run = 1;
            self.prev = t;
            self.blocks += 1;
        }
    }

    pub fn features(&self) -> StepFeatures {
        let k = self.vocab.text_size;
        let n = self.target_symbols.len();
        let cur = if self.blocks == 0 {
            self.last_prompt_symbol
        } else {
            self.target_symbols[(self.blocks - 1).min(n - 1)]
        };
        let next = self.target_symbols.get(self.blocks).copied();
        let delta = match next {
            Some(s) => s + k - 1 - cur,
            None => 2 * k - 1,
        };
        let mut f = [0; NUM_SLOTS];
        f[SLOT_PREV] = self.prev;
        f[SLOT_RUN] = self.run.min(RUN_CAP) - 1;
        f[SLOT_PREV_RUN] = self.prev_run.min(RUN_CAP);
        f[SLOT_DELTA] = delta;
        f
    }
}

/// Features for every step of a teacher-forced continuation (one per target
/// token plus the EOS step).
pub fn teacher_forced_features(vocab: &Vocabulary, ctx: &ConditioningContext, target: &[u32]) -> Vec<StepFeatures> {
    let mut state = StreamState::new(vocab, ctx);
    let mut out = Vec::with_capacity(target.len() + 1);
    for &t in target {
        out.push(state.features());
        state.push(t);
    }
    out.push(state.features());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqmodel::vocab::TokenSequence;

    #[test]
    fn prompt_runs_and_block_pointer() {
        let v = Vocabulary::new(8, 3).unwrap();
        // prompt: symbols [0, 1] at duration 2 -> runs of 2
        let ctx = ConditioningContext::new(
            TokenSequence::new(vec![1, 1, 4, 4]),
            TokenSequence::from_symbols(&v, &[0, 1]),
            TokenSequence::from_symbols(&v, &[2, 0]),
        );
        let mut s = StreamState::new(&v, &ctx);
        let f = s.features();
        assert_eq!(f[SLOT_PREV], 4);
        assert_eq!(f[SLOT_RUN], 1);
        assert_eq!(f[SLOT_PREV_RUN], 2);
        assert_eq!(f[SLOT_DELTA], 2 + 2 - 1);

        s.push(7);
        let f = s.features();
        // current block is symbol 2, next is 0
        assert_eq!((f[SLOT_RUN], f[SLOT_PREV_RUN], f[SLOT_DELTA]), (0, 2, 0));
        s.push(7);
        s.push(3);
        s.push(3);
        let f = s.features();
        assert_eq!(f[SLOT_DELTA], 5, "end of transcript");
        s.push(3);
        let f = s.features();
        assert_eq!(f[SLOT_RUN], 2);
    }

    #[test]
    fn all_feature_ids_within_tables() {
        let v = Vocabulary::default();
        let sizes = slot_sizes(&v);
        let ctx = ConditioningContext::new(
            TokenSequence::new(vec![31, 0, 31]),
            TokenSequence::from_symbols(&v, &[11, 0, 11]),
            TokenSequence::from_symbols(&v, &[0]),
        );
        let target: Vec<u32> = vec![5, 5, 5, 5, 5, 6, 7, 8, 31];
        for f in teacher_forced_features(&v, &ctx, &target) {
            for (slot, &id) in f.iter().enumerate() {
                assert!(id < sizes[slot], "slot {slot} id {id}");
            }
        }
    }
}
