use proptest::prelude::*;

use rio_core::eval::{mos_bin, HISTOGRAM_BINS};
use rio_core::optim::{implicit_reward, rio_loss, sigmoid, v_tts, RewardBreakdown, RewardConfig};
use rio_core::pools::Label;
use rio_core::seqmodel::{log_likelihood, ModelConfig, ModelParams, TokenSequence};
use rio_core::synthworld::{gen_corpus, stutter, Split, World};

fn corpus() -> Vec<rio_core::synthworld::CorpusPair> {
    gen_corpus(&World::default_world(), 64, 9, Split::Eval).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn appending_tokens_never_raises_mos(idx in 0usize..64, extra in prop::collection::vec(0u32..32, 1..12)) {
        let w = World::default_world();
        let pairs = corpus();
        let p = &pairs[idx];
        let before = w.quality_score(&p.target.speech, &p.target.text).unwrap().mos;
        let mut speech = p.target.speech.clone();
        speech.0.extend(extra);
        prop_assert!(w.quality_score(&speech, &p.target.text).unwrap().mos <= before);
    }

    #[test]
    fn value_labels_are_complementary(r in -20.0f64..20.0, z in 0.0f64..20.0) {
        let d = v_tts(r, z, Label::Desirable);
        let u = v_tts(r, z, Label::Undesirable);
        prop_assert!((d + u - 1.0).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d, sigmoid(r - z));
    }

    #[test]
    fn reward_is_linear_in_beta(lt in -50.0f64..0.0, lr in -50.0f64..0.0, beta in 0.01f64..5.0) {
        let one = RewardBreakdown::new(lt, lr, beta).r;
        let two = RewardBreakdown::new(lt, lr, 2.0 * beta).r;
        prop_assert!((two - 2.0 * one).abs() <= 1e-12 * two.abs().max(1.0));
    }

    #[test]
    fn mos_bins_stay_in_range(mos in 1.0f64..=5.0) {
        prop_assert!(mos_bin(mos) < HISTOGRAM_BINS);
    }

    #[test]
    fn stutter_only_lengthens_runs(speech in prop::collection::vec(0u32..4, 1..40), rate in 0.0f64..1.0, seed in any::<u64>()) {
        let mut rng = rio_core::seed::rng(seed);
        let out = stutter(&speech, rate, &mut rng);
        let dedup = |s: &[u32]| s.chunk_by(|a, b| a == b).map(|r| r[0]).collect::<Vec<_>>();
        prop_assert_eq!(dedup(&out), dedup(&speech));
        prop_assert!(out.len() >= speech.len() && out.len() <= 2 * speech.len());
    }

    #[test]
    fn seeds_are_stable_and_stage_specific(master in any::<u64>(), idx in 0u64..1000) {
        let a = rio_core::seed::derive(master, "pretrain", idx);
        prop_assert_eq!(a, rio_core::seed::derive(master, "pretrain", idx));
        prop_assert_ne!(a, rio_core::seed::derive(master, "optimize", idx));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// With the reference point held fixed, raising a desirable sample's
    /// log-probability lowers the loss and raising an undesirable one's
    /// raises it.
    #[test]
    fn rio_loss_moves_with_the_label(idx in 0usize..64, shift in 0.05f64..2.0, desirable in any::<bool>()) {
        let w = World::default_world();
        let pairs = corpus();
        let reference = ModelParams::init(w.vocab, ModelConfig { embed_dim: 4, width: 8, depth: 1, init_seed: 1 }).unwrap();
        let sample = rio_core::pools::PreferenceSample {
            candidate_id: 0,
            context: pairs[idx].context(),
            generation: pairs[idx].target.speech.clone(),
            terminated: true,
            forward: rio_core::inference::Scores { mos: 4.0, wer: 0.0, sim: 1.0 },
            reverse: None,
            avg_mos: None,
            label: if desirable { Label::Desirable } else { Label::Undesirable },
            policy: rio_core::pools::Policy::Rio,
        };
        // Shifting the EOS bias moves the sample's log-probability by a
        // known sign: the sequence ends in EOS exactly once.
        let eos = w.vocab.eos_slot();
        let bias_index = reference.num_params() - w.vocab.output_size() + eos;
        let mut theta = reference.clone();
        theta.flat_mut()[bias_index] += shift;
        let cfg = RewardConfig::default();
        let batch = vec![&sample];
        let (base, _, _) = rio_loss(&reference, &reference, &batch, &cfg, Some(0.0)).unwrap();
        let before = log_likelihood(&reference, &sample.context, &sample.generation).unwrap().total;
        let after = log_likelihood(&theta, &sample.context, &sample.generation).unwrap().total;
        let (moved, _, _) = rio_loss(&theta, &reference, &batch, &cfg, Some(0.0)).unwrap();
        let r = implicit_reward(&theta, &reference, &(&sample).into(), &cfg).unwrap().r;
        prop_assert!((r - cfg.beta * (after - before)).abs() < 1e-9);
        if after > before {
            prop_assert_eq!(moved < base, desirable);
        } else if after < before {
            prop_assert_eq!(moved > base, desirable);
        }
    }
}

#[test]
fn empty_generation_scores_only_eos() {
    let w = World::default_world();
    let m = ModelParams::init(w.vocab, ModelConfig::default()).unwrap();
    let ctx = corpus()[0].context();
    let t = log_likelihood(&m, &ctx, &TokenSequence::new(vec![])).unwrap();
    assert_eq!(t.per_token_logp.len(), 1);
}
