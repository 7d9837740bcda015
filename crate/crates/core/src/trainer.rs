//! Stochastic optimization with early stopping, plus grid search.
//!
//! Each batch draws `batch_size` placements from the velocity-weighted
//! sampler, unrolls them (possibly in parallel through an [`Executor`]),
//! averages the gradients in draw order, clips by global norm and takes one
//! Adam step. After every epoch the mean per-step NLL over the held-out
//! placements is recorded; training stops after `patience` evaluations
//! without improvement and returns the best snapshot.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::adam::{AdamConfig, AdamState};
use crate::covariates::Standardizer;
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::likelihood::LikelihoodKind;
use crate::model::{ModelConfig, ModelParams, Weights};
use crate::rng::{derive_seed, substream, Stream};
use crate::series::Panel;
use crate::window::{Placement, WindowSampler, WindowSpec};

/// Consecutive non-finite batches tolerated before giving up.
pub const MAX_NON_FINITE_BATCHES: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub kind: LikelihoodKind,
    pub spec: WindowSpec,
    pub layers: usize,
    pub hidden: usize,
    pub embedding_dim: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_batches: usize,
    pub patience: usize,
    pub seed: u64,
    pub windows_per_epoch: usize,
    /// Pick series uniformly instead of proportionally to their scale.
    pub uniform_sampling: bool,
    /// Fix `ν = 1` for every window.
    pub no_scaling: bool,
    /// Global gradient-norm bound; `0` disables clipping.
    pub grad_clip: f64,
    /// Cap on held-out windows scored per evaluation; `0` means all.
    pub max_validation_windows: usize,
}

impl TrainConfig {
    pub fn new(kind: LikelihoodKind, spec: WindowSpec) -> Self {
        Self {
            kind,
            spec,
            layers: 3,
            hidden: 40,
            embedding_dim: 20,
            batch_size: 64,
            learning_rate: 1e-3,
            max_batches: 1000,
            patience: 5,
            seed: 0,
            windows_per_epoch: 3200,
            uniform_sampling: false,
            no_scaling: false,
            grad_clip: 10.0,
            max_validation_windows: 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("layers", self.layers),
            ("hidden", self.hidden),
            ("batch_size", self.batch_size),
            ("max_batches", self.max_batches),
            ("patience", self.patience),
            ("windows_per_epoch", self.windows_per_epoch),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.grad_clip.is_finite() && self.grad_clip >= 0.0) {
            return Err(Error::Config(format!("grad_clip must be non-negative, got {}", self.grad_clip)));
        }
        Ok(())
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.windows_per_epoch.div_ceil(self.batch_size)
    }

    pub fn model_config(&self, panel: &Panel) -> ModelConfig {
        ModelConfig {
            kind: self.kind,
            spec: self.spec,
            granularity: panel.granularity(),
            num_categories: panel.num_categories(),
            embedding_dim: self.embedding_dim,
            hidden: self.hidden,
            layers: self.layers,
            scaled: !self.no_scaling,
        }
    }
}

/// Source of elapsed wall-clock seconds for the log.
pub trait Clock {
    fn elapsed(&self) -> f64;
}

/// Reports zero; keeps logs reproducible.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullClock;

impl Clock for NullClock {
    fn elapsed(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Patience,
    MaxBatches,
    Diverged,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::Patience => "patience",
            StopReason::MaxBatches => "max_batches",
            StopReason::Diverged => "diverged",
        }
    }
}

/// One validation evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub epoch: usize,
    pub batches: usize,
    /// Exponential moving average of the per-step training NLL; `None`
    /// before the first batch.
    pub train_nll: Option<f64>,
    pub validation_nll: f64,
    pub elapsed: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub records: Vec<EvalRecord>,
    pub stop: Option<StopReason>,
    /// Index into `records` of the returned snapshot.
    pub best: Option<usize>,
    pub num_params: usize,
    pub skipped_batches: usize,
}

impl TrainLog {
    pub fn best_validation_nll(&self) -> Option<f64> {
        self.best.map(|i| self.records[i].validation_nll)
    }

    pub fn initial_validation_nll(&self) -> Option<f64> {
        self.records.first().map(|r| r.validation_nll)
    }
}

fn validation_subset(mut placements: Vec<Placement>, cap: usize) -> Vec<Placement> {
    if cap == 0 || placements.len() <= cap {
        return placements;
    }
    // evenly strided, deterministic
    let n = placements.len();
    let picked: Vec<Placement> = (0..cap).map(|k| placements[k * n / cap]).collect();
    placements.clear();
    picked
}

/// Mean per-step NLL of `model` over `placements`.
pub fn validation_nll<E: Executor>(
    model: &ModelParams,
    panel: &Panel,
    sampler: &WindowSampler,
    placements: &[Placement],
    seed: u64,
    exec: &E,
) -> Result<f64> {
    let results = exec.map(placements, |k, &p| -> Result<(f64, usize)> {
        let w = sampler.window(panel, p, &model.standardizer, model.config.scaled)?;
        let mut rng = substream(seed, Stream::Validation, k as u64);
        let (loss, scored, _) = model.unroll_loss(&w, &mut rng)?;
        Ok((loss, scored))
    });
    let mut total = 0.0;
    let mut steps = 0usize;
    for r in results {
        match r {
            Ok((l, s)) => {
                total += l;
                steps += s;
            }
            Err(Error::NonFiniteLoss { .. }) => return Ok(f64::INFINITY),
            Err(e) => return Err(e),
        }
    }
    if steps == 0 {
        return Err(Error::Data("validation windows contain no scored steps".into()));
    }
    Ok(total / steps as f64)
}

fn clip_global_norm(grads: &mut Weights, bound: f64) {
    if bound <= 0.0 {
        return;
    }
    let norm = grads.norm_sq().sqrt();
    if norm > bound {
        grads.scale(bound / norm);
    }
}

/// Train and return the best-validation snapshot together with the log.
pub fn train<E: Executor, C: Clock>(
    panel: &Panel,
    config: &TrainConfig,
    exec: &E,
    clock: &C,
) -> Result<(ModelParams, TrainLog)> {
    let (result, log) = train_logged(panel, config, exec, clock);
    result.map(|m| (m, log))
}

/// Like [`train`], but the log is returned even when training fails.
pub fn train_logged<E: Executor, C: Clock>(
    panel: &Panel,
    config: &TrainConfig,
    exec: &E,
    clock: &C,
) -> (Result<ModelParams>, TrainLog) {
    let mut log = TrainLog::default();
    let result = run(panel, config, exec, clock, &mut log);
    (result, log)
}

fn run<E: Executor, C: Clock>(
    panel: &Panel,
    config: &TrainConfig,
    exec: &E,
    clock: &C,
    log: &mut TrainLog,
) -> Result<ModelParams> {
    config.validate()?;
    panel.validate_for(config.kind)?;
    let sampler = WindowSampler::new(panel, config.spec, config.uniform_sampling)?;
    let standardizer = Standardizer::fit(panel);
    let model_config = config.model_config(panel);
    let mut model = ModelParams::init(model_config, standardizer, &mut substream(config.seed, Stream::Init, 0))?;
    log.num_params = model.weights.num_params();

    let mut held_out = sampler.validation_placements();
    if held_out.is_empty() {
        log::warn!("no held-out placements (series too short); validating on training placements");
        held_out = sampler.training_placements();
    }
    let held_out = validation_subset(held_out, config.max_validation_windows);
    let eval_seed = derive_seed(config.seed, Stream::Validation, 0);

    let mut adam = AdamState::new(
        &model.weights,
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
    );
    let mut draw_rng = substream(config.seed, Stream::Sampling, 0);

    let initial = validation_nll(&model, panel, &sampler, &held_out, eval_seed, exec)?;
    log.records.push(EvalRecord {
        epoch: 0,
        batches: 0,
        train_nll: None,
        validation_nll: initial,
        elapsed: clock.elapsed(),
    });
    log.best = Some(0);
    let mut best_nll = initial;
    let mut best = model.clone();
    let mut since_best = 0;
    let mut batches = 0usize;
    let mut epoch = 0usize;
    let mut train_ema: Option<f64> = None;
    let mut non_finite_run = 0usize;
    let mut window_counter = 0u64;

    loop {
        epoch += 1;
        for _ in 0..config.batches_per_epoch() {
            if batches >= config.max_batches {
                break;
            }
            batches += 1;
            let placements: Vec<(Placement, u64)> = (0..config.batch_size)
                .map(|_| {
                    window_counter += 1;
                    (sampler.draw(&mut draw_rng), window_counter)
                })
                .collect();
            let results = exec.map(&placements, |_, &(p, id)| {
                let w = sampler.window(panel, p, &model.standardizer, model.config.scaled)?;
                let mut rng = substream(config.seed, Stream::Imputation, id);
                model.unroll_training(&w, &mut rng)
            });

            let mut grads = model.weights.zeros_like();
            let mut loss = 0.0;
            let mut steps = 0usize;
            let mut non_finite = false;
            for r in results {
                match r {
                    Ok(u) => {
                        grads.add_assign(&u.grads);
                        loss += u.loss;
                        steps += u.scored_steps;
                    }
                    Err(Error::NonFiniteLoss { step, params }) => {
                        log::warn!("batch {batches}: non-finite loss at step {step} ({params})");
                        non_finite = true;
                    }
                    Err(e) => return Err(e),
                }
            }
            if !non_finite {
                grads.scale(1.0 / config.batch_size as f64);
                clip_global_norm(&mut grads, config.grad_clip);
                match adam.step(&mut model.weights, &grads) {
                    Ok(()) => {}
                    Err(Error::NonFiniteGradient { block, index }) => {
                        log::warn!("batch {batches}: non-finite gradient in {block}[{index}]");
                        non_finite = true;
                    }
                    Err(e) => return Err(e),
                }
            }
            if non_finite {
                log.skipped_batches += 1;
                non_finite_run += 1;
                if non_finite_run >= MAX_NON_FINITE_BATCHES {
                    log.stop = Some(StopReason::Diverged);
                    return Err(Error::Diverged(format!(
                        "{MAX_NON_FINITE_BATCHES} consecutive non-finite batches ending at batch {batches}"
                    )));
                }
                continue;
            }
            non_finite_run = 0;
            if steps > 0 {
                let per_step = loss / steps as f64;
                train_ema = Some(match train_ema {
                    None => per_step,
                    Some(e) => 0.9 * e + 0.1 * per_step,
                });
            }
        }

        let v = validation_nll(&model, panel, &sampler, &held_out, eval_seed, exec)?;
        log.records.push(EvalRecord {
            epoch,
            batches,
            train_nll: train_ema,
            validation_nll: v,
            elapsed: clock.elapsed(),
        });
        if v < best_nll {
            best_nll = v;
            best = model.clone();
            log.best = Some(log.records.len() - 1);
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= config.patience {
            log.stop = Some(StopReason::Patience);
            break;
        }
        if batches >= config.max_batches {
            log.stop = Some(StopReason::MaxBatches);
            break;
        }
    }
    if !best_nll.is_finite() {
        return Err(Error::Diverged("validation NLL never finite".into()));
    }
    Ok(best)
}

/// Outcome of one grid-search candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub config: TrainConfig,
    pub num_params: usize,
    /// Best held-out NLL, `None` when the candidate diverged.
    pub validation_nll: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub best: usize,
    pub candidates: Vec<Candidate>,
    pub model: ModelParams,
    pub log: TrainLog,
}

/// Cartesian product of hidden-unit and embedding candidates over `base`.
pub fn grid_candidates(base: &TrainConfig, hidden: &[usize], embedding: &[usize]) -> Result<Vec<TrainConfig>> {
    if hidden.is_empty() || embedding.is_empty() {
        return Err(Error::Config("grid search needs at least one candidate per axis".into()));
    }
    let mut out = Vec::with_capacity(hidden.len() * embedding.len());
    for &h in hidden {
        for &e in embedding {
            out.push(TrainConfig {
                hidden: h,
                embedding_dim: e,
                ..base.clone()
            });
        }
    }
    Ok(out)
}

/// Train every candidate and keep the one with the lowest held-out NLL;
/// ties go to fewer parameters, diverged candidates rank last.
pub fn grid_search<E: Executor, C: Clock>(
    panel: &Panel,
    candidates: &[TrainConfig],
    exec: &E,
    clock: &C,
) -> Result<GridResult> {
    if candidates.is_empty() {
        return Err(Error::Config("grid search needs at least one candidate".into()));
    }
    let mut outcomes = Vec::with_capacity(candidates.len());
    let mut best: Option<(usize, f64, usize, ModelParams, TrainLog)> = None;
    for (i, cfg) in candidates.iter().enumerate() {
        let (result, log) = train_logged(panel, cfg, exec, clock);
        let num_params = if log.num_params > 0 {
            log.num_params
        } else {
            Weights::zeros(&cfg.model_config(panel)).num_params()
        };
        match result {
            Ok(model) => {
                let nll = log.best_validation_nll().unwrap_or(f64::INFINITY);
                outcomes.push(Candidate {
                    config: cfg.clone(),
                    num_params,
                    validation_nll: Some(nll),
                    error: None,
                });
                let better = match &best {
                    None => true,
                    Some((_, b_nll, b_params, _, _)) => nll < *b_nll || (nll == *b_nll && num_params < *b_params),
                };
                if better && nll.is_finite() {
                    best = Some((i, nll, num_params, model, log));
                }
            }
            Err(e @ Error::Diverged(_)) => outcomes.push(Candidate {
                config: cfg.clone(),
                num_params,
                validation_nll: None,
                error: Some(format!("{e}")),
            }),
            Err(e) => return Err(e),
        }
    }
    match best {
        Some((i, _, _, model, log)) => Ok(GridResult {
            best: i,
            candidates: outcomes,
            model,
            log,
        }),
        None => Err(Error::Diverged("every grid-search candidate diverged".into())),
    }
}
