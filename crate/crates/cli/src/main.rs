//! `rio`: drives the corpus → pretrain → pools → optimize → evaluate pipeline
//! through files under `--out`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rio_core::checks::gradient_suite;
use rio_core::eval::{compare, MetricsReport};
use rio_core::experiment::*;
use rio_core::inference::{bayes_check, TinyWorldSpec};
use rio_core::optim::{log_to_csv, Method};
use rio_core::pools::{PoolFile, Policy};
use rio_core::seqmodel::{Checkpoint, ModelParams};
use rio_core::{Result, RioError};

#[derive(Parser)]
#[command(name = "rio", version, about = "Reverse-inference preference optimization on a synthetic TTS world")]
struct Cli {
    /// Write the full default config to PATH (or stdout with `-`) and exit.
    #[arg(long, value_name = "PATH")]
    init_config: Option<PathBuf>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the train/pool/eval corpus.
    GenCorpus(Common),
    /// Supervised pretraining on the train split.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Corpus file (default: <out>/corpus.jsonl).
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Sample candidates on the pool split and select preference pools.
    SamplePools {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Sampling model (default: <out>/model.ckpt).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Sampling round, only changes the derived sampling seed.
        #[arg(long, default_value_t = 0)]
        round: usize,
    },
    /// Preference optimization against a frozen reference.
    Optimize {
        #[command(flatten)]
        common: Common,
        /// Reference and starting checkpoint.
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        pools: Option<PathBuf>,
    },
    /// Score a checkpoint on the eval split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Row label in comparisons (default: the checkpoint file stem's parent).
        #[arg(long)]
        id: Option<String>,
    },
    /// Side-by-side table of reports; the first is the baseline.
    Compare {
        #[arg(required = true, num_args = 2..)]
        reports: Vec<PathBuf>,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Brute-force check of the forward/reverse Bayes relation on a tiny world.
    BayesCheck {
        #[arg(long, default_value_t = 4)]
        acoustic_size: usize,
        #[arg(long, default_value_t = 1)]
        text_len: usize,
        /// Make the prompt depend on the target text, breaking the relation.
        #[arg(long)]
        planted: bool,
    },
    /// Finite-difference check of every training objective's gradient.
    GradCheck {
        #[arg(long, default_value_t = 10)]
        batches: usize,
        #[arg(long, default_value_t = 50)]
        coords: usize,
        #[arg(long, default_value_t = 1e-4)]
        epsilon: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Chained sample → optimize → evaluate rounds.
    Iterate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Round-0 checkpoint.
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 2)]
        rounds: usize,
    },
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

/// Per-field overrides applied on top of the config file.
#[derive(Args, Clone, Default)]
struct Overrides {
    #[arg(long)]
    train_size: Option<usize>,
    #[arg(long)]
    pool_size: Option<usize>,
    #[arg(long)]
    eval_size: Option<usize>,
    #[arg(long)]
    stutter_rate: Option<f64>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    pretrain_steps: Option<usize>,
    #[arg(long)]
    pretrain_lr: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    policy: Option<Policy>,
    #[arg(long)]
    n_pos: Option<usize>,
    #[arg(long)]
    n_neg: Option<usize>,
    #[arg(long)]
    wer_threshold: Option<f64>,
    #[arg(long)]
    min_gap: Option<f64>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    good_threshold: Option<f64>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            c.seed = s;
        }
        let o = &self.overrides;
        macro_rules! set {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = o.$field { $target = v; })*
            };
        }
        set! {
            train_size => c.corpus.train,
            pool_size => c.corpus.pool,
            eval_size => c.corpus.eval,
            stutter_rate => c.corpus.stutter_rate,
            width => c.model.width,
            depth => c.model.depth,
            pretrain_steps => c.pretrain.steps,
            pretrain_lr => c.pretrain.lr,
            temperature => c.decode.temperature,
            top_k => c.decode.top_k,
            max_len => c.decode.max_len,
            policy => c.pools.policy,
            n_pos => c.pools.selection.n_pos,
            n_neg => c.pools.selection.n_neg,
            wer_threshold => c.pools.selection.wer_threshold,
            min_gap => c.pools.min_gap,
            method => c.optim.method,
            epochs => c.optim.epochs,
            lr => c.optim.lr,
            batch_size => c.optim.batch_size,
            beta => c.optim.reward.beta,
            alpha => c.optim.alpha,
            good_threshold => c.eval.good_threshold,
        }
        Ok(c)
    }

    fn out(&self, name: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out)
            .map_err(|source| RioError::Io { path: self.out.display().to_string(), source })?;
        Ok(self.out.join(name))
    }

    fn input(&self, given: &Option<PathBuf>, name: &str) -> PathBuf {
        given.clone().unwrap_or_else(|| self.out.join(name))
    }
}

fn load_corpus(cfg: &ExperimentConfig, path: &Path) -> Result<(Corpus, String)> {
    let (header, corpus) = read_corpus_file(path)?;
    expect_stage(cfg, Stage::Corpus, &path.display().to_string(), &header.config_hash)?;
    Ok((corpus, file_hash(path)?))
}

/// A checkpoint produced by pretraining or optimization under `cfg`.
fn load_model(cfg: &ExperimentConfig, path: &Path) -> Result<ModelParams> {
    let ck = Checkpoint::load(path)?;
    let ok = [Stage::Pretrain, Stage::Optimize].iter().any(|&s| cfg.stage_hash(s) == ck.config_hash);
    if !ok {
        return Err(RioError::ConfigMismatch {
            artifact: path.display().to_string(),
            found: ck.config_hash,
            expected: cfg.stage_hash(Stage::Pretrain),
        });
    }
    ck.to_model()
}

fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}

fn init_config(path: &Path) -> Result<()> {
    let text = ExperimentConfig::default().to_json()?;
    if path == Path::new("-") {
        print!("{text}");
    } else {
        write_text(path, &text)?;
        println!("wrote default config to {}", path.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(p) = &cli.init_config {
        return init_config(p);
    }
    let Some(command) = cli.command else {
        return Err(RioError::precondition("no command given; see `rio --help`"));
    };
    match command {
        Command::GenCorpus(common) => {
            let cfg = common.config()?;
            let corpus = build_corpus(&cfg)?;
            let path = common.out(CORPUS_FILE)?;
            write_corpus_file(&path, &cfg, &corpus)?;
            println!(
                "gen-corpus: train {} pool {} eval {} -> {} ({})",
                corpus.train.len(),
                corpus.pool.len(),
                corpus.eval.len(),
                path.display(),
                short(&file_hash(&path)?)
            );
        }
        Command::Pretrain { common, corpus } => {
            let cfg = common.config()?;
            let corpus_path = common.input(&corpus, CORPUS_FILE);
            let (corpus, corpus_hash) = load_corpus(&cfg, &corpus_path)?;
            let outcome = pretrain_model(&cfg, &corpus)?;
            let path = common.out(CHECKPOINT_FILE)?;
            save_checkpoint(&path, &outcome.params, cfg.stage_hash(Stage::Pretrain), vec![corpus_hash])?;
            let mut log = String::from("step,loss\n");
            for (i, l) in outcome.losses.iter().enumerate() {
                log.push_str(&format!("{},{l}\n", i + 1));
            }
            write_text(&common.out(TRAIN_LOG_FILE)?, &log)?;
            let last = outcome.losses.last().copied().unwrap_or(f64::NAN);
            println!("pretrain: {} steps, final loss {last:.4} -> {}", outcome.losses.len(), path.display());
        }
        Command::SamplePools { common, corpus, model, round } => {
            let cfg = common.config()?;
            let corpus_path = common.input(&corpus, CORPUS_FILE);
            let model_path = common.input(&model, CHECKPOINT_FILE);
            let (corpus, corpus_hash) = load_corpus(&cfg, &corpus_path)?;
            let sampler = load_model(&cfg, &model_path)?;
            let mut pools = build_pools(&cfg, &sampler, &corpus, round)?;
            pools.header.lineage = vec![corpus_hash, file_hash(&model_path)?];
            let path = common.out(POOLS_FILE)?;
            pools.write(&path)?;
            println!(
                "sample-pools: policy {} from {} candidates, {} samples, {} pairs -> {}",
                pools.header.policy.name(),
                pools.header.n_candidates,
                pools.samples.len(),
                pools.pairs.len(),
                path.display()
            );
        }
        Command::Optimize { common, reference, pools } => {
            let cfg = common.config()?;
            let pools_path = common.input(&pools, POOLS_FILE);
            let pool_file = PoolFile::read(&pools_path)?;
            expect_stage(&cfg, Stage::Pools, &pools_path.display().to_string(), &pool_file.header.config_hash)?;
            let wants_pairs = matches!(cfg.optim.method, Method::Dpo | Method::Odpo);
            if wants_pairs != (pool_file.header.policy == Policy::DpoPairs) {
                return Err(RioError::precondition(format!(
                    "method {} cannot train on {} pools",
                    cfg.optim.method.name(),
                    pool_file.header.policy.name()
                )));
            }
            let ref_model = load_model(&cfg, &reference)?;
            let (model, log) = optimize_model(&cfg, &ref_model, &pool_file)?;
            let path = common.out(CHECKPOINT_FILE)?;
            save_checkpoint(
                &path,
                &model,
                cfg.stage_hash(Stage::Optimize),
                vec![file_hash(&reference)?, file_hash(&pools_path)?],
            )?;
            write_text(&common.out(TRAIN_LOG_FILE)?, &log_to_csv(&log))?;
            let last = log.last().map(|r| r.loss).unwrap_or(f64::NAN);
            println!("optimize: {} with {} steps, final loss {last:.4} -> {}", cfg.optim.method.name(), log.len(), path.display());
        }
        Command::Evaluate { common, corpus, model, id } => {
            let cfg = common.config()?;
            let corpus_path = common.input(&corpus, CORPUS_FILE);
            let model_path = common.input(&model, CHECKPOINT_FILE);
            let (corpus, corpus_hash) = load_corpus(&cfg, &corpus_path)?;
            let m = load_model(&cfg, &model_path)?;
            let id = id.unwrap_or_else(|| {
                model_path
                    .parent()
                    .and_then(|p| p.file_name())
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "model".into())
            });
            let report = evaluate_model(&cfg, &m, &id, &corpus, &corpus_hash)?;
            let path = common.out(REPORT_FILE)?;
            write_text(&path, &report.to_json()?)?;
            println!(
                "evaluate: {id} wer {:.2} mos {:.3} sim {:.3} bad_case_mos {:.3} ppc {} -> {}",
                report.mean_wer,
                report.mean_mos,
                report.mean_sim,
                report.bad_case_mos,
                report.ppc_ratio.map(|r| format!("{r:.3}")).unwrap_or_else(|| "n/a".into()),
                path.display()
            );
        }
        Command::Compare { reports, csv } => {
            let loaded = reports
                .iter()
                .map(|p| Ok(serde_json::from_str::<MetricsReport>(&read_text(p)?)?))
                .collect::<Result<Vec<_>>>()?;
            let table = compare(&loaded)?;
            print!("{}", table.to_text());
            if let Some(p) = csv {
                write_text(&p, &table.to_csv())?;
            }
        }
        Command::BayesCheck { acoustic_size, text_len, planted } => {
            let mut spec = TinyWorldSpec::uniform(acoustic_size, text_len);
            if planted {
                spec.planted_dependence = true;
                spec.offset_prior = (0..acoustic_size).map(|i| if i == 0 { 0.7 } else { 0.1 }).collect();
            }
            let r = bayes_check(&spec)?;
            println!("bayes-check: max violation {:.3e} over {} configurations", r.max_violation, r.support);
        }
        Command::GradCheck { batches, coords, epsilon, seed } => {
            let world = rio_core::synthworld::World::default_world();
            let r = gradient_suite(&world, batches, coords, epsilon, seed)?;
            println!(
                "grad-check: max relative error nll {:.2e} rio {:.2e} dpo {:.2e} odpo {:.2e} ({} batches x {} coords)",
                r.nll, r.rio, r.dpo, r.odpo, r.batches, r.coords
            );
            if r.worst() >= 1e-3 {
                return Err(RioError::Numerical { index: 0, detail: format!("gradient mismatch {:.2e}", r.worst()) });
            }
        }
        Command::Iterate { common, corpus, model, rounds } => {
            if rounds == 0 {
                return Err(RioError::precondition("rounds must be at least 1"));
            }
            let cfg = common.config()?;
            let corpus_path = common.input(&corpus, CORPUS_FILE);
            let (corpus, corpus_hash) = load_corpus(&cfg, &corpus_path)?;
            let base = load_model(&cfg, &model)?;
            let (done, err) = iterate(&cfg, &base, &corpus, &corpus_hash, rounds)?;
            let mut lineage = file_hash(&model)?;
            for r in &done {
                let dir = common.out(&format!("round-{}", r.round))?;
                std::fs::create_dir_all(&dir).map_err(|source| RioError::Io { path: dir.display().to_string(), source })?;
                let pools_path = dir.join(POOLS_FILE);
                r.pools.write(&pools_path)?;
                let ck = dir.join(CHECKPOINT_FILE);
                save_checkpoint(&ck, &r.model, cfg.stage_hash(Stage::Optimize), vec![lineage, file_hash(&pools_path)?])?;
                lineage = file_hash(&ck)?;
                write_text(&dir.join(TRAIN_LOG_FILE), &log_to_csv(&r.log))?;
                write_text(&dir.join(REPORT_FILE), &r.report.to_json()?)?;
                println!("iterate: round {} bad_case_mos {:.3} wer {:.2}", r.round, r.report.bad_case_mos, r.report.mean_wer);
            }
            if let Some(e) = err {
                eprintln!("iterate: stopped after {} completed rounds", done.len());
                return Err(e);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
