//! Whole-poem training with Adam, and style fine-tuning.
//!
//! A batch is a set of poems. Each poem is decoded as a chain of four
//! teacher-forced tasks so that its clue is built in line order; the batch
//! gradient is the mean of the per-poem gradients of mean per-character NLL.

mod chain;
mod config;

pub use chain::{build_chain, poem_keyword, ChainTask, TrainingChain, Transition};
pub use config::TrainConfig;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{accumulate, scale_all, AdamState, Tape, Tensor};
use crate::corpus::{line_weights, Corpus, Poem, Style, TfIdfTable, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, ClueState, Model};
use crate::scalar::Scalar;

/// Loss and gradients of one poem.
#[derive(Clone, Debug)]
pub struct PoemGradient<S> {
    /// Mean per-character NLL.
    pub loss: f64,
    pub grads: Vec<Tensor<S>>,
}

pub fn poem_gradient<S: Scalar>(
    model: &Model<S>,
    poem: &Poem,
    keyword: &[u32],
    tfidf: &TfIdfTable,
    detach_clue: bool,
) -> Result<PoemGradient<S>> {
    let tape = Tape::new();
    let chain = build_chain(&tape, model, poem, keyword, tfidf, detach_clue)?;
    let loss = chain.loss(&tape);
    let grads = tape.backward(loss)?;
    Ok(PoemGradient {
        loss: tape.item(loss).as_f64(),
        grads: model.params().gradients(&grads),
    })
}

/// Per-poem gradients in batch order, computed on up to `jobs` threads.
pub fn poem_gradients<S: Scalar>(
    model: &Model<S>,
    batch: &[(&Poem, &[u32])],
    tfidf: &TfIdfTable,
    detach_clue: bool,
    jobs: usize,
) -> Result<Vec<PoemGradient<S>>> {
    let one = |&(p, k): &(&Poem, &[u32])| poem_gradient(model, p, k, tfidf, detach_clue);
    if jobs <= 1 || batch.len() <= 1 {
        return batch.iter().map(one).collect();
    }
    let chunk = batch.len().div_ceil(jobs);
    std::thread::scope(|s| {
        let handles: Vec<_> = batch
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(one).collect::<Result<Vec<_>>>()))
            .collect();
        let mut out = Vec::with_capacity(batch.len());
        for h in handles {
            out.extend(h.join().expect("worker panicked")?);
        }
        Ok(out)
    })
}

/// Mean loss and mean gradient over a batch.
pub fn batch_gradient<S: Scalar>(
    model: &Model<S>,
    batch: &[(&Poem, &[u32])],
    tfidf: &TfIdfTable,
    detach_clue: bool,
    jobs: usize,
) -> Result<(f64, Vec<Tensor<S>>)> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let per_poem = poem_gradients(model, batch, tfidf, detach_clue, jobs)?;
    let mut total = model.params().zero_gradients();
    let mut loss = 0.0;
    for g in &per_poem {
        accumulate(&mut total, &g.grads);
        loss += g.loss;
    }
    let n = batch.len() as f64;
    scale_all(&mut total, S::lit(1.0 / n));
    Ok((loss / n, total))
}

/// Per-character cross entropy over `poems`: total NLL over total characters.
pub fn evaluate<S: Scalar>(model: &Model<S>, poems: &[Poem], tfidf: &TfIdfTable) -> Result<f64> {
    let mut nll = 0.0;
    let mut chars = 0;
    for p in poems {
        let tape = Tape::new();
        let chain = build_chain(&tape, model, p, &poem_keyword(p, tfidf), tfidf, true)?;
        nll += tape.item(chain.nll).as_f64();
        chars += chain.chars;
    }
    if chars == 0 {
        return Err(Error::Invalid("no poems to evaluate".into()));
    }
    Ok(nll / chars as f64)
}

/// Fraction of gold characters that are the argmax of the teacher-forced
/// distribution at their position.
pub fn greedy_accuracy<S: Scalar>(model: &Model<S>, poems: &[Poem], tfidf: &TfIdfTable) -> Result<f64> {
    let mut hit = 0usize;
    let mut total = 0usize;
    for p in poems {
        let tape = Tape::new();
        let kw = poem_keyword(p, tfidf);
        let cfg = model.config();
        let kw_src = model.encode(&tape, &kw)?;
        let ext = model.extension(&tape, &kw_src, p.style)?;
        let mut clue = ClueState::new(cfg, p.form);
        for (i, target) in p.lines.iter().enumerate() {
            let src = if i == 0 { kw_src.clone() } else { model.encode(&tape, &p.lines[i - 1])? };
            let cond = model.conditioning(&tape, &clue, &ext)?;
            let out = model.decode_line(&tape, &src, target, cond)?;
            for (step, &y) in out.steps.iter().zip(target) {
                let logits = tape.data(step.logits);
                let best = logits
                    .iter()
                    .enumerate()
                    .fold(0, |b, (j, &x)| if x > logits[b] { j } else { b });
                hit += usize::from(best == y as usize);
                total += 1;
            }
            if i > 0 {
                let w = |l: &[u32]| line_weights(l, &p.lines, cfg.tf_scope, tfidf);
                clue = model
                    .advance_clue(&tape, &clue, &out.trace, &w(&p.lines[i - 1]), &w(target))?
                    .0;
            }
        }
    }
    if total == 0 {
        return Err(Error::Invalid("no poems to evaluate".into()));
    }
    Ok(hit as f64 / total as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub step: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

/// Loss per optimizer step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossCurve {
    pub points: Vec<CurvePoint>,
}

impl LossCurve {
    /// `step,train_loss,val_loss`; the last column is empty when not measured.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,train_loss,val_loss\n");
        for p in &self.points {
            let val = p.val_loss.map_or(String::new(), |v| format!("{v:.10}"));
            let _ = writeln!(s, "{},{:.10},{}", p.step, p.train_loss, val);
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn last_train_loss(&self) -> Option<f64> {
        self.points.last().map(|p| p.train_loss)
    }
}

/// Model, optimizer state and data needed to take optimizer steps.
pub struct Trainer<S: Scalar> {
    pub config: TrainConfig,
    pub model: Model<S>,
    pub tfidf: TfIdfTable,
    adam: AdamState<S>,
    step: usize,
}

impl<S: Scalar> Trainer<S> {
    pub fn new(config: TrainConfig, model: Model<S>, tfidf: TfIdfTable) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::new(model.params(), config.adam())?;
        Ok(Self {
            config,
            model,
            tfidf,
            adam,
            step: 0,
        })
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// One Adam step on the mean gradient of `batch`; returns the batch loss
    /// measured before the update.
    pub fn step(&mut self, batch: &[(&Poem, &[u32])]) -> Result<f64> {
        let (loss, grads) = batch_gradient(
            &self.model,
            batch,
            &self.tfidf,
            self.config.detach_clue,
            self.config.jobs,
        )?;
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { step: self.step });
        }
        self.adam.step(self.model.params_mut(), &grads)?;
        self.step += 1;
        Ok(loss)
    }

    /// Runs the configured epochs over `train`, recording the loss curve.
    pub fn fit(&mut self, train: &[Poem], validation: &[Poem]) -> Result<LossCurve> {
        if train.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let keywords: Vec<Vec<u32>> = train.iter().map(|p| poem_keyword(p, &self.tfidf)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(1);
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut curve = LossCurve::default();
        let max_steps = self.config.max_steps.unwrap_or(usize::MAX);
        let total_steps = self
            .config
            .epochs
            .saturating_mul(train.len().div_ceil(self.config.batch_size))
            .min(max_steps);

        'epochs: for _ in 0..self.config.epochs {
            order.shuffle(&mut rng);
            for idx in order.chunks(self.config.batch_size) {
                if self.step >= max_steps {
                    break 'epochs;
                }
                let batch: Vec<(&Poem, &[u32])> =
                    idx.iter().map(|&i| (&train[i], keywords[i].as_slice())).collect();
                let step = self.step;
                let train_loss = self.step(&batch)?;
                let interval = self.config.validation_interval;
                let due = (interval > 0 && (step + 1).is_multiple_of(interval)) || step + 1 == total_steps;
                let val_loss = if due && !validation.is_empty() {
                    Some(evaluate(&self.model, validation, &self.tfidf)?)
                } else {
                    None
                };
                curve.points.push(CurvePoint {
                    step,
                    train_loss,
                    val_loss,
                });
            }
        }
        Ok(curve)
    }
}

/// A trained checkpoint and its loss curve.
#[derive(Clone, Debug)]
pub struct TrainOutcome<S: Scalar> {
    pub checkpoint: Checkpoint<S>,
    pub curve: LossCurve,
}

fn echo<S: Scalar>(config: &TrainConfig, model: &Model<S>) -> BTreeMap<String, String> {
    let mut map = config.to_map();
    // thread count does not change the result, so it stays out of the file
    map.remove("jobs");
    map.extend(model.config().to_map());
    map
}

/// Trains a fresh model on `corpus.train`.
pub fn train<S: Scalar>(corpus: &Corpus, config: &TrainConfig) -> Result<TrainOutcome<S>> {
    config.validate()?;
    if corpus.train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let tfidf = TfIdfTable::build(&corpus.train, corpus.vocab.len());
    let mut model_cfg = config.model.clone();
    model_cfg.vocab_size = corpus.vocab.len();
    let model = Model::new(model_cfg, config.seed, config.init_scale)?;
    fit_to_checkpoint(config, model, tfidf, corpus.vocab.clone(), &corpus.train, &corpus.validation)
}

fn fit_to_checkpoint<S: Scalar>(
    config: &TrainConfig,
    model: Model<S>,
    tfidf: TfIdfTable,
    vocab: Vocabulary,
    train: &[Poem],
    validation: &[Poem],
) -> Result<TrainOutcome<S>> {
    let mut trainer = Trainer::new(config.clone(), model, tfidf)?;
    let curve = trainer.fit(train, validation)?;
    let config = echo(&trainer.config, &trainer.model);
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            model: trainer.model,
            vocab,
            tfidf: trainer.tfidf,
            config,
        },
        curve,
    })
}

/// Equal numbers of poems for every style label present, by seeded
/// downsampling to the rarest label. Unlabeled poems are dropped.
pub fn balance_styles(poems: &[Poem], seed: u64) -> Result<Vec<Poem>> {
    let mut groups: Vec<Vec<&Poem>> = vec![Vec::new(); Style::ALL.len()];
    for p in poems {
        if let Some(s) = p.style {
            groups[s.id()].push(p);
        }
    }
    let present: Vec<&Vec<&Poem>> = groups.iter().filter(|g| !g.is_empty()).collect();
    let Some(m) = present.iter().map(|g| g.len()).min() else {
        return Err(Error::Invalid("no style-labeled poems in the corpus".into()));
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let mut out = Vec::with_capacity(m * present.len());
    for g in present {
        let mut g = g.clone();
        g.shuffle(&mut rng);
        out.extend(g.into_iter().take(m).cloned());
    }
    Ok(out)
}

/// Continues training `base` on a label-balanced subset of `poems` (already
/// encoded with the checkpoint vocabulary), adding a style extension when the
/// base model has none. Model-shape keys in `config` are ignored.
pub fn finetune_style<S: Scalar>(
    base: &Checkpoint<S>,
    poems: &[Poem],
    config: &TrainConfig,
) -> Result<TrainOutcome<S>> {
    let balanced = balance_styles(poems, config.seed)?;
    let ext = base.model.config().ext.with_style();
    let model = base.model.with_extension(ext, config.seed, config.init_scale)?;
    let mut config = config.clone();
    config.model = model.config().clone();
    fit_to_checkpoint(&config, model, base.tfidf.clone(), base.vocab.clone(), &balanced, &[])
}
