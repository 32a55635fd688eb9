use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{SpeakerStyle, Utterance, World, MAX_DURATION};
use crate::error::{Result, RioError};
use crate::seqmodel::{ConditioningContext, TokenSequence, TrainingExample};

/// Rejection-sampling budget per requested pair before giving up.
pub const MAX_ATTEMPTS_PER_PAIR: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Pool,
    Eval,
}

impl Split {
    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Pool => "pool",
            Split::Eval => "eval",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = RioError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "pool" => Ok(Split::Pool),
            "eval" => Ok(Split::Eval),
            other => Err(RioError::precondition(format!("unknown split `{other}`"))),
        }
    }
}

/// Speakers are partitioned by a hash of `(offset, duration)`: buckets 0-5
/// of 10 train, 6-7 pool, 8-9 eval.
pub fn style_split(style: SpeakerStyle) -> Split {
    let h = crate::seed::derive(style.offset as u64, "speaker", style.duration as u64) % 10;
    match h {
        0..=5 => Split::Train,
        6 | 7 => Split::Pool,
        _ => Split::Eval,
    }
}

/// A prompt utterance (X, T_X) and a target utterance (Y, T_Y) by one speaker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusPair {
    pub prompt: Utterance,
    pub target: Utterance,
    pub style: SpeakerStyle,
    pub split: Split,
    pub seed: u64,
}

impl CorpusPair {
    pub fn context(&self) -> ConditioningContext {
        ConditioningContext::new(self.prompt.speech.clone(), self.prompt.text.clone(), self.target.text.clone())
    }

    pub fn training_example(&self) -> TrainingExample {
        TrainingExample { ctx: self.context(), target: self.target.speech.clone() }
    }

    pub fn to_record(&self) -> CorpusRecord {
        CorpusRecord {
            prompt_speech: self.prompt.speech.clone(),
            prompt_text: self.prompt.text.clone(),
            target_speech: self.target.speech.clone(),
            target_text: self.target.text.clone(),
            style: self.style,
            split: self.split,
            seed: self.seed,
        }
    }
}

/// One JSON-lines corpus record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub prompt_speech: TokenSequence,
    pub prompt_text: TokenSequence,
    pub target_speech: TokenSequence,
    pub target_text: TokenSequence,
    pub style: SpeakerStyle,
    pub split: Split,
    pub seed: u64,
}

impl CorpusRecord {
    pub fn into_pair(self) -> CorpusPair {
        CorpusPair {
            prompt: Utterance { speech: self.prompt_speech, text: self.prompt_text, style: Some(self.style) },
            target: Utterance { speech: self.target_speech, text: self.target_text, style: Some(self.style) },
            style: self.style,
            split: self.split,
            seed: self.seed,
        }
    }
}

impl World {
    pub fn prompt_symbols(&self, duration: usize) -> usize {
        ((self.config.prompt_tokens as f64 / duration as f64).round() as usize).max(1)
    }

    /// Admissible target transcript lengths for a duration.
    pub fn target_symbol_range(&self, duration: usize) -> (usize, usize) {
        let lo = self.config.target_tokens_min.div_ceil(duration).max(1);
        let hi = (self.config.target_tokens_max / duration).max(lo);
        (lo, hi)
    }

    pub fn styles_in(&self, split: Split) -> Vec<SpeakerStyle> {
        self.all_styles().into_iter().filter(|&s| style_split(s) == split).collect()
    }

    /// Number of distinct (style, T_X, T_Y) triples for a split. Transcripts
    /// avoid back-to-back repeats, including across the prompt/target junction
    /// in both directions, so a (T_X, T_Y) pair is a proper colouring of a
    /// cycle of length `|T_X| + |T_Y|`.
    pub fn split_capacity(&self, split: Split) -> u128 {
        let k = self.config.text_size as u128;
        let mut total: u128 = 0;
        for style in self.styles_in(split) {
            let lp = self.prompt_symbols(style.duration);
            let (lo, hi) = self.target_symbol_range(style.duration);
            for lt in lo..=hi {
                let m = (lp + lt) as u32;
                let ring = (k - 1).checked_pow(m).map(|p| if m % 2 == 0 { p + (k - 1) } else { p - (k - 1) });
                total = total.saturating_add(ring.unwrap_or(u128::MAX));
            }
        }
        total
    }
}

fn draw_transcript<R: Rng>(rng: &mut R, k: usize, len: usize, avoid_first: Option<usize>, avoid_last: Option<usize>) -> Option<Vec<usize>> {
    let mut out = Vec::with_capacity(len);
    for i in 0..len {
        let mut choices: Vec<usize> = (0..k)
            .filter(|&s| Some(s) != out.last().copied())
            .filter(|&s| i != 0 || Some(s) != avoid_first)
            .filter(|&s| i + 1 != len || Some(s) != avoid_last)
            .collect();
        if choices.is_empty() {
            return None;
        }
        choices.shuffle(rng);
        out.push(choices[0]);
    }
    Some(out)
}

/// Ground-truth (prompt, target) pairs for one split, deterministic per seed.
/// Each pair has one speaker; triples are distinct.
pub fn gen_corpus(world: &World, n: usize, seed: u64, split: Split) -> Result<Vec<CorpusPair>> {
    if n == 0 {
        return Err(RioError::precondition("gen_corpus needs n >= 1"));
    }
    let available = world.split_capacity(split);
    if n as u128 > available {
        return Err(RioError::Exhausted { split: split.name().into(), requested: n, available });
    }
    let styles = world.styles_in(split);
    let k = world.config.text_size;
    let mut rng = crate::seed::stage_rng(seed, &format!("corpus-{}", split.name()), 0);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while out.len() < n {
        attempts += 1;
        if attempts > n * MAX_ATTEMPTS_PER_PAIR {
            return Err(RioError::Exhausted { split: split.name().into(), requested: n, available: out.len() as u128 });
        }
        let style = styles[rng.gen_range(0..styles.len())];
        debug_assert!((1..=MAX_DURATION).contains(&style.duration));
        let (lo, hi) = world.target_symbol_range(style.duration);
        let target_len = rng.gen_range(lo..=hi);
        let Some(prompt_text) = draw_transcript(&mut rng, k, world.prompt_symbols(style.duration), None, None) else {
            continue;
        };
        let Some(target_text) =
            draw_transcript(&mut rng, k, target_len, prompt_text.last().copied(), Some(prompt_text[0]))
        else {
            continue;
        };
        if !seen.insert((style, prompt_text.clone(), target_text.clone())) {
            continue;
        }
        out.push(CorpusPair {
            prompt: world.utterance(&prompt_text, style),
            target: world.utterance(&target_text, style),
            style,
            split,
            seed,
        });
    }
    Ok(out)
}

pub fn write_corpus(path: &Path, pairs: &[CorpusPair]) -> Result<()> {
    let io = |source| RioError::Io { path: path.display().to_string(), source };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for p in pairs {
        serde_json::to_writer(&mut f, &p.to_record())?;
        f.write_all(b"\n").map_err(io)?;
    }
    f.flush().map_err(io)
}

pub fn read_corpus(path: &Path) -> Result<Vec<CorpusPair>> {
    let io = |source| RioError::Io { path: path.display().to_string(), source };
    let f = std::io::BufReader::new(std::fs::File::open(path).map_err(io)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusRecord = serde_json::from_str(&line)?;
        out.push(rec.into_pair());
    }
    Ok(out)
}

/// Repeats each run of `speech` once more with probability `rate`. Used to
/// give the pretraining data the occasional stutter real recordings have.
pub fn stutter<R: Rng>(speech: &[u32], rate: f64, rng: &mut R) -> Vec<u32> {
    let mut out = Vec::with_capacity(speech.len() * 2);
    for run in speech.chunk_by(|a, b| a == b) {
        out.extend_from_slice(run);
        if rate > 0.0 && rng.gen::<f64>() < rate {
            out.extend_from_slice(run);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stutter_repeats_whole_runs() {
        let mut rng = crate::seed::rng(3);
        let speech = [4, 4, 9, 9, 1, 1];
        assert_eq!(stutter(&speech, 0.0, &mut rng), speech.to_vec());
        assert_eq!(stutter(&speech, 1.0, &mut rng), vec![4, 4, 4, 4, 9, 9, 9, 9, 1, 1, 1, 1]);
        let s = stutter(&speech, 0.5, &mut rng);
        let runs: Vec<usize> = s.chunk_by(|a, b| a == b).map(|r| r.len()).collect();
        assert!(runs.iter().all(|&n| n == 2 || n == 4));
    }

    #[test]
    fn single_pair_is_ground_truth() {
        let w = World::default_world();
        let pairs = gen_corpus(&w, 1, 0, Split::Train).unwrap();
        assert_eq!(pairs.len(), 1);
        for u in [&pairs[0].prompt, &pairs[0].target] {
            let d = pairs[0].style.duration;
            assert_eq!(u.speech.len(), d * u.text.len());
            for (i, &tok) in u.speech.tokens().iter().enumerate() {
                let sym = w.vocab.symbol(u.text.tokens()[i / d]);
                assert_eq!(tok as usize, (5 * sym + pairs[0].style.offset) % 32);
            }
        }
    }

    #[test]
    fn splits_have_disjoint_speakers() {
        let w = World::default_world();
        let train: HashSet<_> = gen_corpus(&w, 300, 1, Split::Train).unwrap().iter().map(|p| p.style).collect();
        let eval: HashSet<_> = gen_corpus(&w, 300, 1, Split::Eval).unwrap().iter().map(|p| p.style).collect();
        let pool: HashSet<_> = gen_corpus(&w, 300, 1, Split::Pool).unwrap().iter().map(|p| p.style).collect();
        assert!(train.is_disjoint(&eval) && train.is_disjoint(&pool) && pool.is_disjoint(&eval));
        assert!(!w.styles_in(Split::Eval).is_empty());
    }

    #[test]
    fn lengths_match_prompt_and_target_regimes() {
        let w = World::default_world();
        for p in gen_corpus(&w, 200, 5, Split::Eval).unwrap() {
            assert!((10..=14).contains(&p.prompt.speech.len()), "{}", p.prompt.speech.len());
            assert!((20..=64).contains(&p.target.speech.len()), "{}", p.target.speech.len());
            let tx = p.prompt.text.tokens();
            let ty = p.target.text.tokens();
            assert!(tx.windows(2).all(|w| w[0] != w[1]) && ty.windows(2).all(|w| w[0] != w[1]));
            assert_ne!(ty[0], *tx.last().unwrap());
            assert_ne!(tx[0], *ty.last().unwrap());
        }
    }

    #[test]
    fn two_thousand_pool_pairs() {
        let w = World::default_world();
        let a = gen_corpus(&w, 2000, 3, Split::Pool).unwrap();
        assert_eq!(a.len(), 2000);
        assert_eq!(a, gen_corpus(&w, 2000, 3, Split::Pool).unwrap());
    }

    #[test]
    fn tiny_world_exhausts() {
        let cfg = super::super::WorldConfig {
            acoustic_size: 3,
            text_size: 2,
            multiplier: 1,
            prompt_tokens: 1,
            target_tokens_min: 1,
            target_tokens_max: 1,
        };
        let w = World::new(cfg).unwrap();
        for split in [Split::Train, Split::Pool, Split::Eval] {
            let cap = w.split_capacity(split);
            if cap > 0 {
                assert_eq!(gen_corpus(&w, cap as usize, 0, split).unwrap().len() as u128, cap);
            }
            assert!(matches!(gen_corpus(&w, cap as usize + 1, 0, split), Err(RioError::Exhausted { .. })));
        }
    }

    #[test]
    fn corpus_file_roundtrip() {
        let w = World::default_world();
        let pairs = gen_corpus(&w, 5, 2, Split::Eval).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("corpus.jsonl");
        write_corpus(&p, &pairs).unwrap();
        assert_eq!(read_corpus(&p).unwrap(), pairs);
    }
}
