use std::collections::BTreeMap;

use log::info;
use rand::seq::SliceRandom;

use super::checkpoint::{grammar_hash, BestRecord, Checkpoint, MetricRecord, SavedParam, CHECKPOINT_VERSION};
use super::config::TrainConfig;
use super::model::{build_vocab, Model, Prepared};
use super::schedule::lr_at;
use crate::dataset_io::Corpus;
use crate::error::{Error, Result};
use crate::numerics::{adam_step, derive_rng, AdamState, Gradients, Graph};
use crate::sql_grammar::{exact_match, Grammar};
use crate::tree_decoder::{Oracle, SearchMode};

/// Outcome of one optimisation step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
    pub action_accuracy: f64,
}

/// Training state: model, optimiser, schedule position and dev tracking.
pub struct Trainer {
    pub model: Model,
    adam: AdamState,
    step: usize,
    train: Vec<Prepared>,
    dev: Vec<Prepared>,
    schemas: BTreeMap<String, String>,
    epoch_batches: Option<(usize, Vec<Vec<usize>>)>,
    metrics: Vec<MetricRecord>,
    best: Option<(BestRecord, Vec<SavedParam>)>,
    evals_since_best: usize,
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights with the best dev exact match (the last weights if no dev set).
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub metrics: Vec<MetricRecord>,
}

fn fingerprints(train: &Corpus) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for ex in &train.examples {
        if let Some(s) = train.schemas.get(&ex.db_id) {
            out.insert(ex.db_id.clone(), s.fingerprint());
        }
    }
    out
}

impl Trainer {
    pub fn new(cfg: &TrainConfig, train: &Corpus, dev: &Corpus) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Config("training corpus is empty".into()));
        }
        let vocab = build_vocab(train, cfg.min_word_count);
        let model = Model::new(cfg, vocab)?;
        let adam = AdamState::new(&model.store);
        Self::assemble(model, adam, 0, train, dev)
    }

    pub fn resume(ck: &Checkpoint, train: &Corpus, dev: &Corpus) -> Result<Self> {
        let model = ck.to_model()?;
        let adam = ck.optimizer.clone().unwrap_or_else(|| AdamState::new(&model.store));
        let mut t = Self::assemble(model, adam, ck.step, train, dev)?;
        t.metrics = ck.metrics.clone();
        t.evals_since_best = ck.evals_since_best;
        t.best = ck.best.clone().map(|b| (b, ck.params.clone()));
        Ok(t)
    }

    fn assemble(model: Model, adam: AdamState, step: usize, train: &Corpus, dev: &Corpus) -> Result<Self> {
        let train_p = model.prepare_corpus(train)?;
        let dev_p = model.prepare_corpus(dev)?;
        Ok(Trainer {
            model,
            adam,
            step,
            train: train_p,
            dev: dev_p,
            schemas: fingerprints(train),
            epoch_batches: None,
            metrics: Vec::new(),
            best: None,
            evals_since_best: 0,
        })
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn metrics(&self) -> &[MetricRecord] {
        &self.metrics
    }

    pub fn is_finished(&self) -> bool {
        let cfg = &self.model.config;
        self.step >= cfg.max_steps || (cfg.patience > 0 && self.evals_since_best >= cfg.patience) || self.dev_is_perfect()
    }

    fn dev_is_perfect(&self) -> bool {
        self.best.as_ref().is_some_and(|(b, _)| b.dev_exact_match >= 1.0)
    }

    /// Batches of the epoch containing `step` (1-based): examples of similar
    /// question length grouped together, batch order shuffled per epoch.
    fn batch_for(&mut self, step: usize) -> Vec<usize> {
        let bs = self.model.config.batch_size;
        let n = self.train.len();
        let per_epoch = n.div_ceil(bs);
        let epoch = (step - 1) / per_epoch;
        if self.epoch_batches.as_ref().is_none_or(|(e, _)| *e != epoch) {
            let mut rng = derive_rng(self.model.config.seed, "batches", epoch as u64);
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            order.sort_by_key(|&i| self.train[i].question_len);
            let mut batches: Vec<Vec<usize>> = order.chunks(bs).map(<[usize]>::to_vec).collect();
            batches.shuffle(&mut rng);
            self.epoch_batches = Some((epoch, batches));
        }
        let (_, batches) = self.epoch_batches.as_ref().expect("just filled");
        batches[(step - 1) % per_epoch].clone()
    }

    /// Loss and gradients of a batch at the current weights, without updating.
    pub fn batch_gradients(&self, batch: &[usize], step: usize) -> Result<(f64, usize, usize, Gradients)> {
        let mut total = Gradients::default();
        let mut loss_sum = 0.0;
        let (mut correct, mut steps) = (0, 0);
        let scale = 1.0 / batch.len() as f64;
        for (k, &i) in batch.iter().enumerate() {
            let rng = derive_rng(self.model.config.seed, "dropout", ((step as u64) << 20) | k as u64);
            let mut g = Graph::new(&self.model.store, true, rng);
            let ex = self.model.loss(&mut g, &self.train[i])?;
            let value = g.scalar(ex.total);
            if !value.is_finite() {
                let questions: Vec<String> = batch
                    .iter()
                    .map(|&j| format!("{}: {}", self.train[j].db_id, self.train[j].question))
                    .collect();
                return Err(Error::NonFiniteLoss {
                    step,
                    detail: format!("example {i} loss {value}; batch [{}]", questions.join("; ")),
                });
            }
            loss_sum += value;
            correct += ex.teacher.correct;
            steps += ex.teacher.steps;
            let scaled = g.scale(ex.total, scale);
            let grads = g.backward(scaled)?;
            total.add_assign(&grads);
        }
        Ok((loss_sum * scale, correct, steps, total))
    }

    /// One optimisation step on the next batch.
    pub fn train_step(&mut self) -> Result<StepRecord> {
        let step = self.step + 1;
        let lr = lr_at(step.min(self.model.config.max_steps), &self.model.config)?;
        let batch = self.batch_for(step);
        let (loss, correct, steps, grads) = self.batch_gradients(&batch, step)?;
        let store = &mut self.model.store;
        store.zero_grads();
        store.accumulate(&grads)?;
        let grad_norm = store.clip_grad_norm(self.model.config.clip_norm);
        adam_step(store, &mut self.adam, lr)?;
        store.zero_grads();
        self.step = step;
        Ok(StepRecord {
            step,
            loss,
            lr,
            grad_norm,
            action_accuracy: correct as f64 / steps.max(1) as f64,
        })
    }

    /// Greedy exact match on the dev examples.
    pub fn evaluate_dev(&self) -> Result<f64> {
        exact_match_rate(&self.model, &self.dev)
    }

    /// Trains until `max_steps`, early stopping, or a perfect dev score.
    /// `observe` sees every metric record as it is produced.
    pub fn run(&mut self, mut observe: impl FnMut(&MetricRecord)) -> Result<()> {
        let every = self.model.config.eval_every;
        while !self.is_finished() {
            let rec = self.train_step()?;
            let due = (every > 0 && rec.step % every == 0) || rec.step == self.model.config.max_steps;
            let dev_em = if due && !self.dev.is_empty() {
                let em = self.evaluate_dev()?;
                self.note_dev(rec.step, em);
                Some(em)
            } else {
                None
            };
            let m = MetricRecord {
                step: rec.step,
                loss: rec.loss,
                lr: rec.lr,
                dev_exact_match: dev_em,
                action_accuracy: rec.action_accuracy,
            };
            if let Some(em) = dev_em {
                info!("step {} loss {:.4} dev exact match {:.3}", m.step, m.loss, em);
            }
            observe(&m);
            self.metrics.push(m);
        }
        Ok(())
    }

    fn note_dev(&mut self, step: usize, em: f64) {
        if self.best.as_ref().is_none_or(|(b, _)| em > b.dev_exact_match) {
            self.best = Some((
                BestRecord {
                    step,
                    dev_exact_match: em,
                },
                Checkpoint::params_of(&self.model),
            ));
            self.evals_since_best = 0;
        } else {
            self.evals_since_best += 1;
        }
    }

    /// Full state at the current step.
    pub fn checkpoint(&self) -> Checkpoint {
        let cfg = &self.model.config;
        Checkpoint {
            version: CHECKPOINT_VERSION,
            grammar_hash: grammar_hash(),
            config_hash: cfg.hash(),
            config: cfg.clone(),
            seed: cfg.seed,
            step: self.step,
            vocab: self.model.vocab.clone(),
            schemas: self.schemas.clone(),
            params: Checkpoint::params_of(&self.model),
            optimizer: Some(self.adam.clone()),
            metrics: self.metrics.clone(),
            best: self.best.as_ref().map(|(b, _)| b.clone()),
            evals_since_best: self.evals_since_best,
        }
    }

    /// Weights with the best dev score, without optimiser state.
    pub fn best_checkpoint(&self) -> Checkpoint {
        let mut ck = self.checkpoint();
        if let Some((b, params)) = &self.best {
            ck.params = params.clone();
            ck.step = b.step;
            ck.optimizer = None;
        }
        ck
    }
}

/// Share of examples whose greedy prediction exactly matches the gold tree.
pub fn exact_match_rate(model: &Model, examples: &[Prepared]) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0;
    for p in examples {
        if let Ok(d) = model.predict(p, SearchMode::Greedy, Oracle::None) {
            if exact_match(Grammar::shipped(), &d.ast, &p.ast)? {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / examples.len() as f64)
}

/// Trains on `train`, selecting weights by exact match on `dev`.
pub fn train(train: &Corpus, dev: &Corpus, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut t = Trainer::new(cfg, train, dev)?;
    t.run(|_| {})?;
    Ok(TrainOutcome {
        best: t.best_checkpoint(),
        last: t.checkpoint(),
        metrics: t.metrics.clone(),
    })
}
