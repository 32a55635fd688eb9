use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{World, MAX_DURATION};
use crate::error::{Result, RioError};
use crate::seqmodel::TokenSequence;

/// Penalty weights of the quality oracle. Changing them invalidates every
/// pinned regression value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityWeights {
    pub style: f64,
    pub length: f64,
    pub repetition: f64,
    pub invalid: f64,
}

impl Default for QualityWeights {
    fn default() -> Self {
        QualityWeights { style: 4.0, length: 4.0, repetition: 2.0, invalid: 2.0 }
    }
}

/// Weighted penalties, already multiplied by their weights.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PenaltyBreakdown {
    pub style: f64,
    pub length: f64,
    pub repetition: f64,
    pub invalid: f64,
}

impl PenaltyBreakdown {
    pub fn total(&self) -> f64 {
        self.style + self.length + self.repetition + self.invalid
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityScore {
    pub mos: f64,
    /// Duration the penalties were evaluated at (the best fit).
    pub duration: usize,
    pub components: PenaltyBreakdown,
}

impl World {
    /// MOS analogue in `[1, 5]`: `5 - penalties` at the best-fitting duration.
    ///
    /// At duration `d` the speech is aligned to the transcript block-wise
    /// (`position / d`). The penalties are the circular variance of the implied
    /// offsets of aligned acoustic tokens, the relative length error (capped at
    /// 1), the longest run beyond `d`, and the fraction of non-acoustic tokens.
    pub fn quality_score(&self, speech: &TokenSequence, text: &TokenSequence) -> Result<QualityScore> {
        if text.is_empty() {
            return Err(RioError::precondition("quality_score needs a non-empty transcript"));
        }
        let symbols = text.symbols(&self.vocab);
        let tokens = speech.tokens();
        let invalid = if tokens.is_empty() {
            0.0
        } else {
            tokens.iter().filter(|&&t| !self.vocab.is_acoustic(t)).count() as f64 / tokens.len() as f64
        };
        let longest = longest_run(tokens);
        let mut best: Option<QualityScore> = None;
        for d in 1..=MAX_DURATION {
            let expected = (d * symbols.len()) as f64;
            let length = ((tokens.len() as f64 - expected).abs() / expected).min(1.0);
            let aligned = tokens
                .iter()
                .take(d * symbols.len())
                .enumerate()
                .filter(|(_, &t)| self.vocab.is_acoustic(t))
                .map(|(i, &t)| self.implied_offset(t, symbols[i / d]));
            let style = circular_variance(aligned, self.acoustic_size(), tokens.is_empty());
            let repetition = longest.saturating_sub(d) as f64;
            let components = PenaltyBreakdown {
                style: self.weights.style * style,
                length: self.weights.length * length,
                repetition: self.weights.repetition * repetition,
                invalid: self.weights.invalid * invalid,
            };
            let mos = (5.0 - components.total()).clamp(1.0, 5.0);
            let better = match &best {
                None => true,
                Some(b) => components.total() < b.components.total(),
            };
            if better {
                best = Some(QualityScore { mos, duration: d, components });
            }
        }
        Ok(best.expect("at least one duration"))
    }

    /// Offsets with the most consistent tokens. A speaker offset is only
    /// identifiable up to `(symbol + j, offset - multiplier * j)` shifts, so
    /// several offsets can tie; they are returned in ascending order.
    pub fn max_vote_offsets(&self, tokens: &[u32]) -> Vec<usize> {
        let votes: Vec<usize> = (0..self.acoustic_size())
            .map(|o| tokens.iter().filter(|&&t| self.is_consistent(t, o)).count())
            .collect();
        let best = votes.iter().copied().max().unwrap_or(0);
        (0..self.acoustic_size()).filter(|&o| votes[o] == best).collect()
    }

    /// Most common run length, capped at the largest duration (ties: shorter).
    pub fn estimate_duration(&self, tokens: &[u32]) -> usize {
        let mut votes = [0usize; MAX_DURATION + 1];
        for run in runs(tokens) {
            votes[run.1.min(MAX_DURATION)] += 1;
        }
        let mut best = 1;
        for d in 1..=MAX_DURATION {
            if votes[d] > votes[best] {
                best = d;
            }
        }
        best
    }

    /// Recognizer analogue under a given offset: each run of identical tokens
    /// becomes `max(1, round(len / d))` copies of its decoded symbol, with `d`
    /// the vote-estimated duration; tokens that do not decode into the
    /// transcript alphabet become `None`.
    pub fn transcribe_with_offset(&self, speech: &TokenSequence, offset: usize) -> Vec<Option<usize>> {
        let tokens = speech.tokens();
        let d = self.estimate_duration(tokens);
        let mut out = Vec::new();
        for (tok, len) in runs(tokens) {
            let symbol = if self.is_consistent(tok, offset) { Some(self.decode_raw(tok, offset)) } else { None };
            let copies = ((len as f64 / d as f64).round() as usize).max(1);
            out.extend(std::iter::repeat_n(symbol, copies));
        }
        out
    }

    /// Word error rate in percent of `speech` against `reference_text`.
    ///
    /// The offset is estimated by maximum vote over the speech alone; when the
    /// vote is ambiguous the reading closest to the reference is scored.
    pub fn wer_score(&self, speech: &TokenSequence, reference_text: &TokenSequence) -> Result<f64> {
        if reference_text.is_empty() {
            return Err(RioError::precondition("wer_score needs a non-empty reference"));
        }
        let reference: Vec<Option<usize>> = reference_text.symbols(&self.vocab).into_iter().map(Some).collect();
        let dist = if speech.is_empty() {
            reference.len()
        } else {
            self.max_vote_offsets(speech.tokens())
                .into_iter()
                .map(|o| {
                    let hyp = self.transcribe_with_offset(speech, o);
                    levenshtein_by(&hyp, &reference, |a, b| a.is_some() && a == b)
                })
                .min()
                .expect("at least one offset")
        };
        Ok(dist as f64 / reference.len() as f64 * 100.0)
    }

    /// Normalized offset histogram around `center`: each acoustic token votes
    /// for `center` if consistent with it, otherwise for the circularly
    /// nearest offset it is consistent with.
    pub fn offset_histogram(&self, tokens: &[u32], center: usize) -> Vec<f64> {
        let a = self.acoustic_size();
        let mut hist = vec![0.0; a];
        let mut count = 0usize;
        for &t in tokens.iter().filter(|&&t| self.vocab.is_acoustic(t)) {
            let bin = (0..=a / 2)
                .flat_map(|dist| [(center + dist) % a, (center + a - dist) % a])
                .find(|&o| self.is_consistent(t, o))
                .expect("every acoustic token is consistent with some offset");
            hist[bin] += 1.0;
            count += 1;
        }
        if count > 0 {
            for h in &mut hist {
                *h /= count as f64;
            }
        }
        hist
    }

    /// Speaker-similarity analogue in `[0, 1]`: intersection of the two
    /// offset histograms, each centred on one of its sequence's max-vote
    /// offsets. Among ambiguous centres the best-agreeing pair is used.
    pub fn sim_score(&self, generated: &TokenSequence, prompt: &TokenSequence) -> Result<f64> {
        if generated.is_empty() || prompt.is_empty() {
            return Err(RioError::precondition("sim_score needs non-empty sequences"));
        }
        let prompt_hists: Vec<Vec<f64>> = self
            .max_vote_offsets(prompt.tokens())
            .into_iter()
            .map(|o| self.offset_histogram(prompt.tokens(), o))
            .collect();
        let mut best: f64 = 0.0;
        for o in self.max_vote_offsets(generated.tokens()) {
            let g = self.offset_histogram(generated.tokens(), o);
            for p in &prompt_hists {
                best = best.max(g.iter().zip(p).map(|(a, b)| a.min(*b)).sum::<f64>());
            }
        }
        Ok(best.clamp(0.0, 1.0))
    }
}

/// `1 - R` for the mean resultant length `R` of the offsets on the circle.
/// Angles are taken relative to the first offset so that identical offsets
/// give exactly zero.
fn circular_variance(offsets: impl Iterator<Item = usize>, modulus: usize, empty_speech: bool) -> f64 {
    let (mut c, mut s, mut n) = (0.0, 0.0, 0usize);
    let mut first = None;
    for o in offsets {
        let base = *first.get_or_insert(o);
        let angle = 2.0 * PI * ((o + modulus - base) % modulus) as f64 / modulus as f64;
        c += angle.cos();
        s += angle.sin();
        n += 1;
    }
    if n == 0 {
        return if empty_speech { 0.0 } else { 1.0 };
    }
    let r = (c * c + s * s).sqrt() / n as f64;
    (1.0 - r).clamp(0.0, 1.0)
}

/// Maximal runs of identical tokens as (token, length).
pub(crate) fn runs(tokens: &[u32]) -> Vec<(u32, usize)> {
    let mut out: Vec<(u32, usize)> = Vec::new();
    for &t in tokens {
        match out.last_mut() {
            Some((tok, len)) if *tok == t => *len += 1,
            _ => out.push((t, 1)),
        }
    }
    out
}

fn longest_run(tokens: &[u32]) -> usize {
    runs(tokens).iter().map(|r| r.1).max().unwrap_or(0)
}

/// Edit distance with unit insert/delete/substitute costs.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    levenshtein_by(a, b, |x, y| x == y)
}

fn levenshtein_by<T>(a: &[T], b: &[T], eq: impl Fn(&T, &T) -> bool) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(!eq(x, y));
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthworld::SpeakerStyle;

    fn world() -> World {
        World::default_world()
    }

    #[test]
    fn levenshtein_basics() {
        assert_eq!(levenshtein(b"kitten", b"sitting"), 3);
        assert_eq!(levenshtein::<u8>(b"", b"abc"), 3);
        assert_eq!(levenshtein(b"abc", b"abc"), 0);
    }

    #[test]
    fn ground_truth_is_perfect() {
        let w = world();
        for (style, text) in [
            (SpeakerStyle { offset: 0, duration: 1 }, vec![0, 1, 2, 3]),
            (SpeakerStyle { offset: 13, duration: 2 }, vec![11, 3, 11, 4, 0]),
            (SpeakerStyle { offset: 31, duration: 3 }, vec![5, 6]),
        ] {
            let u = w.utterance(&text, style);
            let q = w.quality_score(&u.speech, &u.text).unwrap();
            assert_eq!(q.mos, 5.0);
            assert_eq!(q.duration, style.duration);
            assert_eq!(w.wer_score(&u.speech, &u.text).unwrap(), 0.0);
            assert_eq!(w.sim_score(&u.speech, &u.speech).unwrap(), 1.0);
        }
    }

    #[test]
    fn empty_speech_floors() {
        let w = world();
        let text = TokenSequence::from_symbols(&w.vocab, &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9]);
        let q = w.quality_score(&TokenSequence::default(), &text).unwrap();
        assert_eq!(q.mos, 1.0);
        assert_eq!(w.wer_score(&TokenSequence::default(), &text).unwrap(), 100.0);
        assert!(w.sim_score(&TokenSequence::default(), &text).is_err());
    }

    #[test]
    fn single_substitution_costs_ten_percent() {
        let w = world();
        let symbols = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9];
        let u = w.utterance(&symbols, SpeakerStyle { offset: 4, duration: 2 });
        let mut toks = u.speech.0.clone();
        // symbol 5 -> symbol 11 on both tokens of block 5
        toks[10] = w.emit_token(11, 4);
        toks[11] = w.emit_token(11, 4);
        assert_eq!(w.wer_score(&TokenSequence::new(toks), &u.text).unwrap(), 10.0);
    }

    #[test]
    fn half_shifted_speech_regression_anchors() {
        // Transcript [0, 1, 2, 3, 4, 5, 6, 7] at duration 1, offset 3; the
        // second half is spoken with offset 4.
        let w = world();
        let symbols = [0, 1, 2, 3, 4, 5, 6, 7];
        let text = TokenSequence::from_symbols(&w.vocab, &symbols);
        let toks: Vec<u32> =
            symbols.iter().enumerate().map(|(i, &s)| w.emit_token(s, if i < 4 { 3 } else { 4 })).collect();
        let speech = TokenSequence::new(toks);
        let q = w.quality_score(&speech, &text).unwrap();
        // Mean resultant length of four angles at 3 and four at 4 (of 32) is
        // cos(pi/32); the penalty is 4 * (1 - cos(pi/32)).
        let expected = 5.0 - 4.0 * (1.0 - (PI / 32.0).cos());
        assert!((q.mos - expected).abs() < 1e-12, "{}", q.mos);
        assert!((q.mos - 4.980_738_906_688_788).abs() < 1e-12);

        let prompt = w.emit(&symbols, SpeakerStyle { offset: 3, duration: 1 });
        assert_eq!(w.sim_score(&speech, &prompt).unwrap(), 0.5);
    }

    #[test]
    fn maximally_distant_offsets_share_nothing() {
        let w = world();
        let a = w.emit(&[0, 1, 2, 3], SpeakerStyle { offset: 0, duration: 1 });
        let b = w.emit(&[0, 1, 2, 3], SpeakerStyle { offset: 16, duration: 1 });
        assert_eq!(w.offset_histogram(a.tokens(), 0)[0], 1.0);
        assert_eq!(w.offset_histogram(b.tokens(), 16)[16], 1.0);
        assert_eq!(w.sim_score(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn stutter_and_truncation_are_penalized() {
        let w = world();
        let style = SpeakerStyle { offset: 2, duration: 2 };
        let u = w.utterance(&[1, 2, 3, 4, 5, 6], style);
        let mut stutter = u.speech.0.clone();
        for _ in 0..3 {
            stutter.insert(4, stutter[4]);
        }
        let q = w.quality_score(&TokenSequence::new(stutter), &u.text).unwrap();
        assert!(q.mos <= 3.0, "{q:?}");
        let truncated = TokenSequence::new(u.speech.0[..6].to_vec());
        let q = w.quality_score(&truncated, &u.text).unwrap();
        assert!(q.mos <= 3.0, "{q:?}");
    }
}
