//! The autoregressive recurrent model.
//!
//! At every step the network consumes `[z_{t−1}/ν, x_t, e_cat]` (lagged
//! target divided by the window scale, standardized covariates, category
//! embedding), advances a stack of LSTM layers, and maps the top hidden
//! state through [`HeadParams`] to likelihood parameters. The same weights
//! serve the conditioning range (encoder) and the prediction range
//! (decoder).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::covariates::{feature_dim, Standardizer};
use crate::error::{Error, Result};
use crate::gradcheck::ParamBlocks;
use crate::likelihood::{
    heads_backward, params_from_output, sample, HeadParams, LikelihoodKind, LikelihoodParams,
};
use crate::linalg::{axpy, Matrix};
use crate::lstm::{lstm_backward, lstm_forward, lstm_step, LstmCache, LstmLayerParams, LstmState};
use crate::series::Granularity;
use crate::window::{StepMask, TrainingWindow, WindowSpec};

/// Architecture and data contract of a model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub kind: LikelihoodKind,
    pub spec: WindowSpec,
    pub granularity: Granularity,
    pub num_categories: usize,
    pub embedding_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    /// `false` fixes `ν = 1` everywhere.
    pub scaled: bool,
}

impl ModelConfig {
    pub fn feature_dim(&self) -> usize {
        feature_dim(self.granularity)
    }

    pub fn input_dim(&self) -> usize {
        1 + self.feature_dim() + self.embedding_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 {
            return Err(Error::Config(format!(
                "need at least one layer and one hidden unit (layers {}, hidden {})",
                self.layers, self.hidden
            )));
        }
        if self.num_categories == 0 {
            return Err(Error::Config("category cardinality must be positive".into()));
        }
        Ok(())
    }
}

/// Trainable parameters Θ.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    /// `num_categories × embedding_dim`
    pub embedding: Matrix,
    pub lstm: Vec<LstmLayerParams>,
    pub heads: HeadParams,
}

impl Weights {
    pub fn zeros(config: &ModelConfig) -> Self {
        let mut lstm = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let input = if l == 0 { config.input_dim() } else { config.hidden };
            lstm.push(LstmLayerParams::zeros(input, config.hidden));
        }
        Self {
            embedding: Matrix::zeros(config.num_categories, config.embedding_dim),
            lstm,
            heads: HeadParams::zeros(config.hidden),
        }
    }

    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Self {
        let bound = 1.0 / libm_sqrt(config.num_categories.max(1) as f64);
        let embedding = Matrix::uniform(config.num_categories, config.embedding_dim, bound, rng);
        let mut lstm = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let input = if l == 0 { config.input_dim() } else { config.hidden };
            lstm.push(LstmLayerParams::init(input, config.hidden, rng));
        }
        let heads = HeadParams::init(config.hidden, rng);
        Self {
            embedding,
            lstm,
            heads,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for b in z.blocks_mut() {
            b.fill(0.0);
        }
        z
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }

    /// `(name, rows, cols)` of every block, in [`ParamBlocks`] order.
    pub fn block_shapes(&self) -> Vec<(String, usize, usize)> {
        let mut out = vec![(
            String::from("embedding"),
            self.embedding.rows(),
            self.embedding.cols(),
        )];
        for (l, layer) in self.lstm.iter().enumerate() {
            out.push((format!("lstm{l}.w_input"), layer.w_input.rows(), layer.w_input.cols()));
            out.push((
                format!("lstm{l}.w_recurrent"),
                layer.w_recurrent.rows(),
                layer.w_recurrent.cols(),
            ));
            out.push((format!("lstm{l}.bias"), 1, layer.bias.len()));
        }
        out.push(("heads.weights".into(), 2, self.heads.weights.cols()));
        out.push(("heads.bias".into(), 1, 2));
        out
    }

    pub fn scale(&mut self, factor: f64) {
        for b in self.blocks_mut() {
            b.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn add_assign(&mut self, other: &Weights) {
        for (a, (_, b)) in self.blocks_mut().into_iter().zip(other.blocks()) {
            axpy(1.0, b, a);
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.blocks().iter().map(|(_, b)| crate::linalg::norm_sq(b)).sum()
    }
}

fn libm_sqrt(x: f64) -> f64 {
    num_traits::Float::sqrt(x)
}

impl ParamBlocks for Weights {
    fn blocks(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = vec![("embedding".into(), self.embedding.as_slice())];
        for (l, layer) in self.lstm.iter().enumerate() {
            out.push((format!("lstm{l}.w_input"), layer.w_input.as_slice()));
            out.push((format!("lstm{l}.w_recurrent"), layer.w_recurrent.as_slice()));
            out.push((format!("lstm{l}.bias"), layer.bias.as_slice()));
        }
        out.push(("heads.weights".into(), self.heads.weights.as_slice()));
        out.push(("heads.bias".into(), self.heads.bias.as_slice()));
        out
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![self.embedding.as_mut_slice()];
        for layer in self.lstm.iter_mut() {
            out.push(layer.w_input.as_mut_slice());
            out.push(layer.w_recurrent.as_mut_slice());
            out.push(layer.bias.as_mut_slice());
        }
        out.push(self.heads.weights.as_mut_slice());
        out.push(self.heads.bias.as_mut_slice());
        out
    }
}

/// A complete model: architecture, covariate standardization, weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub standardizer: Standardizer,
    pub weights: Weights,
}

/// Result of a teacher-forced unroll over one window.
#[derive(Debug, Clone)]
pub struct UnrollResult {
    /// Summed negative log-likelihood over scored steps.
    pub loss: f64,
    pub scored_steps: usize,
    pub thetas: Vec<LikelihoodParams>,
    pub grads: Weights,
}

/// Recurrent state after the conditioning range plus the value to feed as
/// the lagged target at the first prediction step.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub state: LstmState,
    pub last_target: f64,
}

impl ModelParams {
    pub fn new(config: ModelConfig, standardizer: Standardizer, weights: Weights) -> Result<Self> {
        config.validate()?;
        if standardizer.dim() != config.feature_dim() {
            return Err(Error::Shape {
                what: "standardizer",
                expected: config.feature_dim(),
                got: standardizer.dim(),
            });
        }
        let expected = Weights::zeros(&config).block_shapes();
        if weights.block_shapes() != expected {
            return Err(Error::Config("weight shapes do not match the model configuration".into()));
        }
        Ok(Self {
            config,
            standardizer,
            weights,
        })
    }

    pub fn init<R: Rng + ?Sized>(config: ModelConfig, standardizer: Standardizer, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let weights = Weights::init(&config, rng);
        Self::new(config, standardizer, weights)
    }

    pub fn kind(&self) -> LikelihoodKind {
        self.config.kind
    }

    fn check_window(&self, window: &TrainingWindow) -> Result<()> {
        if window.category as usize >= self.config.num_categories {
            return Err(Error::Data(format!(
                "category {} outside the model's {} categories",
                window.category, self.config.num_categories
            )));
        }
        if window.covariates.cols() != self.config.feature_dim()
            || window.covariates.rows() != window.len()
            || window.mask.len() != window.len()
        {
            return Err(Error::Shape {
                what: "window covariates",
                expected: self.config.feature_dim(),
                got: window.covariates.cols(),
            });
        }
        Ok(())
    }

    fn fill_input(&self, buf: &mut Vec<f64>, prev: f64, scale: f64, covariates: &[f64], category: u32) {
        buf.clear();
        buf.push(prev / scale);
        buf.extend_from_slice(covariates);
        if self.config.embedding_dim > 0 {
            buf.extend_from_slice(self.weights.embedding.row(category as usize));
        }
    }

    /// Network input at step `t` of `window` given the lagged target.
    pub fn step_input(&self, window: &TrainingWindow, t: usize, prev_target: f64) -> Vec<f64> {
        let mut buf = Vec::with_capacity(self.config.input_dim());
        self.fill_input(&mut buf, prev_target, window.scale, window.covariates.row(t), window.category);
        buf
    }

    /// Advance `state` by one step and return the likelihood parameters.
    pub fn advance(
        &self,
        state: &mut LstmState,
        prev_target: f64,
        covariates: &[f64],
        scale: f64,
        category: u32,
        scratch: &mut StepScratch,
    ) -> LikelihoodParams {
        self.fill_input(&mut scratch.input, prev_target, scale, covariates, category);
        for (l, layer) in self.weights.lstm.iter().enumerate() {
            if l == 0 {
                lstm_step(&scratch.input, &mut state.layers[0], layer, &mut scratch.gates);
            } else {
                let (below, rest) = state.layers.split_at_mut(l);
                lstm_step(&below[l - 1].h, &mut rest[0], layer, &mut scratch.gates);
            }
        }
        let out = self.weights.heads.outputs(state.top());
        params_from_output(out, scale, self.config.kind).0
    }

    /// Run the recurrence over the first `steps` steps of `window`,
    /// replacing missing targets with draws from the predictive
    /// distribution.
    pub fn encode<R: Rng + ?Sized>(&self, window: &TrainingWindow, steps: usize, rng: &mut R) -> Result<Encoded> {
        self.check_window(window)?;
        let steps = steps.min(window.len());
        let mut state = LstmState::zeros(&self.weights.lstm);
        let mut scratch = StepScratch::default();
        let mut prev = 0.0;
        for t in 0..steps {
            let theta = self.advance(
                &mut state,
                prev,
                window.covariates.row(t),
                window.scale,
                window.category,
                &mut scratch,
            );
            prev = match window.mask[t] {
                StepMask::Missing => sample(&theta, rng),
                _ => window.target[t],
            };
        }
        Ok(Encoded {
            state,
            last_target: prev,
        })
    }

    /// Teacher-forced forward pass only: summed NLL, scored step count and
    /// the per-step parameters.
    pub fn unroll_loss<R: Rng + ?Sized>(
        &self,
        window: &TrainingWindow,
        rng: &mut R,
    ) -> Result<(f64, usize, Vec<LikelihoodParams>)> {
        self.check_window(window)?;
        let mut state = LstmState::zeros(&self.weights.lstm);
        let mut scratch = StepScratch::default();
        let mut prev = 0.0;
        let mut loss = NeumaierSum::default();
        let mut scored = 0;
        let mut thetas = Vec::with_capacity(window.len());
        for t in 0..window.len() {
            let theta = self.advance(
                &mut state,
                prev,
                window.covariates.row(t),
                window.scale,
                window.category,
                &mut scratch,
            );
            if window.mask[t].scored() {
                let nll = theta.nll(window.target[t])?;
                if !nll.value.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        step: t,
                        params: format!("{theta:?}"),
                    });
                }
                loss.add(nll.value);
                scored += 1;
            }
            prev = match window.mask[t] {
                StepMask::Missing => sample(&theta, rng),
                _ => window.target[t],
            };
            thetas.push(theta);
        }
        Ok((loss.total(), scored, thetas))
    }

    /// Teacher-forced unroll with backpropagation through time.
    pub fn unroll_training<R: Rng + ?Sized>(&self, window: &TrainingWindow, rng: &mut R) -> Result<UnrollResult> {
        self.check_window(window)?;
        let steps = window.len();
        let layers = self.weights.lstm.len();
        let hidden = self.config.hidden;
        let mut state = LstmState::zeros(&self.weights.lstm);
        let mut caches: Vec<Vec<LstmCache>> = Vec::with_capacity(steps);
        let mut tops: Vec<Vec<f64>> = Vec::with_capacity(steps);
        let mut head_grads: Vec<Option<([f64; 2], f64, f64)>> = Vec::with_capacity(steps);
        let mut thetas = Vec::with_capacity(steps);
        let mut input = Vec::with_capacity(self.config.input_dim());
        let mut prev = 0.0;
        let mut loss = NeumaierSum::default();
        let mut scored = 0;

        for t in 0..steps {
            self.fill_input(&mut input, prev, window.scale, window.covariates.row(t), window.category);
            let mut step_caches = Vec::with_capacity(layers);
            for l in 0..layers {
                let x = if l == 0 { &input } else { &state.layers[l - 1].h };
                let (next, cache) = lstm_forward(x, &state.layers[l], &self.weights.lstm[l])?;
                state.layers[l] = next;
                step_caches.push(cache);
            }
            caches.push(step_caches);
            let top = state.top().to_vec();
            let (theta, chain) = params_from_output(self.weights.heads.outputs(&top), window.scale, self.config.kind);
            tops.push(top);
            if window.mask[t].scored() {
                let nll = theta.nll(window.target[t])?;
                if !nll.value.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        step: t,
                        params: format!("{theta:?}"),
                    });
                }
                loss.add(nll.value);
                scored += 1;
                head_grads.push(Some((chain, nll.d_mu, nll.d_shape)));
            } else {
                head_grads.push(None);
            }
            prev = match window.mask[t] {
                StepMask::Missing => sample(&theta, rng),
                _ => window.target[t],
            };
            thetas.push(theta);
        }

        let mut grads = self.weights.zeros_like();
        let mut d_h: Vec<Vec<f64>> = vec![vec![0.0; hidden]; layers];
        let mut d_c: Vec<Vec<f64>> = vec![vec![0.0; hidden]; layers];
        let emb_offset = 1 + self.config.feature_dim();
        for t in (0..steps).rev() {
            if let Some((chain, d_mu, d_shape)) = head_grads[t] {
                heads_backward(
                    &tops[t],
                    &self.weights.heads,
                    chain,
                    d_mu,
                    d_shape,
                    &mut grads.heads,
                    &mut d_h[layers - 1],
                );
            }
            for l in (0..layers).rev() {
                let g = lstm_backward(&caches[t][l], &self.weights.lstm[l], &d_h[l], &d_c[l], &mut grads.lstm[l])?;
                d_h[l] = g.d_h_prev;
                d_c[l] = g.d_c_prev;
                if l > 0 {
                    axpy(1.0, &g.d_input, &mut d_h[l - 1]);
                } else if self.config.embedding_dim > 0 {
                    axpy(
                        1.0,
                        &g.d_input[emb_offset..],
                        grads.embedding.row_mut(window.category as usize),
                    );
                }
            }
        }

        Ok(UnrollResult {
            loss: loss.total(),
            scored_steps: scored,
            thetas,
            grads,
        })
    }
}

/// Compensated summation of per-step losses.
#[derive(Debug, Clone, Copy, Default)]
struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Reusable buffers for [`ModelParams::advance`].
#[derive(Debug, Clone, Default)]
pub struct StepScratch {
    input: Vec<f64>,
    gates: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariates::Standardizer;
    use crate::gradcheck::{finite_diff_check_with, GradCheckReport, Stencil, RELATIVE_FLOOR};
    use crate::rng::{substream, Stream};
    use crate::window::build_window;
    use crate::series::TimeSeries;
    use chrono::NaiveDate;

    pub(crate) fn config(kind: LikelihoodKind, layers: usize, hidden: usize, emb: usize, spec: WindowSpec) -> ModelConfig {
        ModelConfig {
            kind,
            spec,
            granularity: Granularity::Daily,
            num_categories: 3,
            embedding_dim: emb,
            hidden,
            layers,
            scaled: true,
        }
    }

    fn series(values: &[Option<f64>], category: u32) -> TimeSeries {
        TimeSeries {
            id: "s".into(),
            start: NaiveDate::from_ymd_opt(2016, 3, 1).unwrap().and_hms_opt(0, 0, 0).unwrap(),
            granularity: Granularity::Daily,
            target: values.to_vec(),
            category,
        }
    }

    fn count_series(n: usize, seed: u64) -> Vec<Option<f64>> {
        let mut rng = substream(seed, Stream::Series, 0);
        (0..n).map(|_| Some(rng.random_range(0..12) as f64)).collect()
    }

    fn window_for(values: &[Option<f64>], offset: i64, spec: WindowSpec) -> TrainingWindow {
        let s = series(values, 1);
        let st = Standardizer {
            mean: vec![10.0, 3.0],
            std: vec![6.0, 2.0],
        };
        build_window(&s, 0, offset, spec.conditioning, spec.total(), &st, true).unwrap()
    }

    fn model(kind: LikelihoodKind, layers: usize, hidden: usize, emb: usize, spec: WindowSpec, seed: u64) -> ModelParams {
        let cfg = config(kind, layers, hidden, emb, spec);
        let st = Standardizer {
            mean: vec![10.0, 3.0],
            std: vec![6.0, 2.0],
        };
        let mut m = ModelParams::init(cfg, st, &mut substream(seed, Stream::Init, 0)).unwrap();
        // move biases off zero so every gate path is exercised
        let mut rng = substream(seed, Stream::Init, 1);
        for l in m.weights.lstm.iter_mut() {
            for b in l.bias.iter_mut() {
                *b += rng.random::<f64>() - 0.5;
            }
        }
        m
    }

    fn gradient_report(
        kind: LikelihoodKind,
        layers: usize,
        emb: usize,
        seed: u64,
        stencil: Stencil,
        step: f64,
        floor: f64,
    ) -> GradCheckReport {
        let spec = WindowSpec::new(8, 4).unwrap();
        let values = count_series(30, seed);
        let mut window = window_for(&values, 3, spec);
        if kind == LikelihoodKind::Gaussian {
            let mut rng = substream(seed, Stream::Series, 1);
            for v in window.target.iter_mut() {
                *v += rng.random::<f64>();
            }
        }
        let m = model(kind, layers, 8, emb, spec, seed);
        let r = m.unroll_training(&window, &mut substream(0, Stream::Imputation, 0)).unwrap();
        let loss = |w: &Weights| {
            let probe = ModelParams {
                weights: w.clone(),
                ..m.clone()
            };
            probe.unroll_loss(&window, &mut substream(0, Stream::Imputation, 0)).unwrap().0
        };
        finite_diff_check_with(loss, &m.weights, &r.grads, step, stencil, floor).unwrap()
    }

    // Five-point differences at h = 1e-4 resolve gradients to ~1e-10
    // absolute; components below 1e-5 are scored against that floor.
    const FIVE_POINT_STEP: f64 = 1e-4;
    const FIVE_POINT_FLOOR: f64 = 1e-5;

    #[test]
    fn tiny_model_gradients_match_finite_differences() {
        for seed in 0..20 {
            for kind in [LikelihoodKind::Gaussian, LikelihoodKind::NegativeBinomial] {
                let r = gradient_report(kind, 1, 2, seed, Stencil::FivePoint, FIVE_POINT_STEP, FIVE_POINT_FLOOR);
                assert!(r.passes(1e-4), "{kind:?} seed {seed}: {r:?}");
            }
        }
    }

    #[test]
    fn stacked_model_gradients_match_finite_differences() {
        for seed in 0..5 {
            for kind in [LikelihoodKind::Gaussian, LikelihoodKind::NegativeBinomial] {
                let r = gradient_report(kind, 2, 3, 50 + seed, Stencil::FivePoint, FIVE_POINT_STEP, FIVE_POINT_FLOOR);
                assert!(r.passes(1e-4), "{kind:?} seed {seed}: {r:?}");
            }
        }
    }

    #[test]
    fn central_differences_agree_to_rounding_level() {
        // a 1e-6 central difference of an O(30) loss is only good to a few
        // 1e-9 in absolute terms
        for seed in 0..5 {
            for kind in [LikelihoodKind::Gaussian, LikelihoodKind::NegativeBinomial] {
                let r = gradient_report(kind, 1, 2, seed, Stencil::Central, 1e-6, RELATIVE_FLOOR);
                assert!(r.max_abs_error() < 5e-8, "{kind:?} seed {seed}: {r:?}");
            }
        }
    }

    #[test]
    fn step_input_layout() {
        let spec = WindowSpec::new(3, 2).unwrap();
        let m = model(LikelihoodKind::Gaussian, 1, 4, 2, spec, 0);
        let mut w = window_for(&[Some(1.0); 10], 0, spec);
        w.scale = 5.0;
        let x = m.step_input(&w, 1, 10.0);
        assert_eq!(x.len(), 1 + 2 + 2);
        assert_eq!(x[0], 2.0);
        assert_eq!(&x[1..3], w.covariates.row(1));
        assert_eq!(&x[3..], m.weights.embedding.row(1));
    }

    #[test]
    fn all_missing_window_has_zero_loss_and_gradient() {
        let spec = WindowSpec::new(3, 2).unwrap();
        let m = model(LikelihoodKind::NegativeBinomial, 1, 4, 2, spec, 0);
        let mut vals = vec![None; 10];
        vals[9] = Some(1.0);
        let w = window_for(&vals, 2, spec);
        let r = m.unroll_training(&w, &mut substream(0, Stream::Imputation, 0)).unwrap();
        assert_eq!(r.loss, 0.0);
        assert_eq!(r.scored_steps, 0);
        assert!(r.grads.blocks().iter().all(|(_, b)| b.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn single_step_gaussian_closed_form() {
        let spec = WindowSpec::new(1, 1).unwrap();
        let mut m = model(LikelihoodKind::Gaussian, 1, 3, 0, spec, 4);
        m.config.scaled = false;
        let s = series(&[Some(2.5), Some(0.0)], 0);
        let w = build_window(&s, 0, 0, 1, 1, &m.standardizer, false).unwrap();
        let r = m.unroll_training(&w, &mut substream(0, Stream::Imputation, 0)).unwrap();

        // by hand: h = o ⊙ tanh(i ⊙ g) from a zero state with input [0, x]
        let layer = &m.weights.lstm[0];
        let x: Vec<f64> = core::iter::once(0.0).chain(w.covariates.row(0).iter().copied()).collect();
        let pre: Vec<f64> = (0..12)
            .map(|row| layer.bias[row] + (0..3).map(|j| layer.w_input.get(row, j) * x[j]).sum::<f64>())
            .collect();
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let h: Vec<f64> = (0..3)
            .map(|k| sig(pre[9 + k]) * (sig(pre[k]) * pre[6 + k].tanh()).tanh())
            .collect();
        let heads = &m.weights.heads;
        let mu = crate::linalg::dot(heads.weights.row(0), &h) + heads.bias[0];
        let o_s = crate::linalg::dot(heads.weights.row(1), &h) + heads.bias[1];
        let sigma = crate::special::softplus(o_s);
        let nll = 0.5 * (2.0 * core::f64::consts::PI * sigma * sigma).ln() + (2.5 - mu).powi(2) / (2.0 * sigma * sigma);
        assert!((r.loss - nll).abs() < 1e-12);
        // bias gradients of the heads: ∂/∂b_μ = (μ − z)/σ², ∂/∂b_σ = (1/σ − r²/σ³)·sigmoid(o_σ)
        let d_mu = (mu - 2.5) / (sigma * sigma);
        let d_sigma = (1.0 / sigma - (2.5 - mu).powi(2) / sigma.powi(3)) * sig(o_s);
        assert!((r.grads.heads.bias[0] - d_mu).abs() < 1e-12);
        assert!((r.grads.heads.bias[1] - d_sigma).abs() < 1e-12);
    }

    #[test]
    fn loss_is_sum_of_recorded_step_nlls() {
        let spec = WindowSpec::new(6, 4).unwrap();
        let m = model(LikelihoodKind::NegativeBinomial, 2, 5, 2, spec, 7);
        let vals = count_series(25, 3);
        let w = window_for(&vals, -2, spec);
        let r = m.unroll_training(&w, &mut substream(0, Stream::Imputation, 0)).unwrap();
        let sum: f64 = r
            .thetas
            .iter()
            .zip(&w.target)
            .zip(&w.mask)
            .filter(|(_, m)| m.scored())
            .map(|((th, z), _)| th.nll(*z).unwrap().value)
            .sum();
        assert!((sum - r.loss).abs() < 1e-10);
        let (fwd, _, thetas) = m.unroll_loss(&w, &mut substream(0, Stream::Imputation, 0)).unwrap();
        assert_eq!(fwd.to_bits(), r.loss.to_bits());
        assert_eq!(thetas, r.thetas);
    }

    #[test]
    fn causality_future_targets_do_not_change_past_parameters() {
        let spec = WindowSpec::new(6, 6).unwrap();
        let m = model(LikelihoodKind::NegativeBinomial, 2, 5, 2, spec, 8);
        let vals = count_series(20, 4);
        let w = window_for(&vals, 0, spec);
        let base = m.unroll_training(&w, &mut substream(0, Stream::Imputation, 0)).unwrap();
        for cut in 1..w.len() {
            let mut w2 = w.clone();
            for z in w2.target[cut..].iter_mut() {
                *z += 7.0;
            }
            let r = m.unroll_training(&w2, &mut substream(0, Stream::Imputation, 0)).unwrap();
            // θ_t depends on z_{<t}: steps up to and including `cut` are unchanged
            assert_eq!(&r.thetas[..=cut], &base.thetas[..=cut]);
        }
    }

    #[test]
    fn encode_then_decode_matches_direct_unroll() {
        let spec = WindowSpec::new(5, 3).unwrap();
        let m = model(LikelihoodKind::Gaussian, 2, 6, 2, spec, 9);
        let vals: Vec<Option<f64>> = (0..20).map(|t| Some(1.0 + (t as f64 * 0.7).sin())).collect();
        let w = window_for(&vals, 2, spec);
        let mut rng = substream(0, Stream::Imputation, 0);
        let enc = m.encode(&w, spec.conditioning, &mut rng).unwrap();
        let mut state = enc.state.clone();
        let theta = m.advance(
            &mut state,
            enc.last_target,
            w.covariates.row(spec.conditioning),
            w.scale,
            w.category,
            &mut StepScratch::default(),
        );
        let (_, _, thetas) = m.unroll_loss(&w, &mut rng).unwrap();
        assert_eq!(theta, thetas[spec.conditioning]);

        let zero = m.encode(&w, 0, &mut rng).unwrap();
        assert_eq!(zero.state, LstmState::zeros(&m.weights.lstm));
        assert_eq!(zero.last_target, 0.0);

        // prediction-range data never reaches the encoder
        let mut w2 = w.clone();
        for z in w2.target[spec.conditioning..].iter_mut() {
            *z = 1e3;
        }
        assert_eq!(m.encode(&w2, spec.conditioning, &mut rng).unwrap(), enc);
    }

    #[test]
    fn missing_steps_are_imputed_not_scored() {
        let spec = WindowSpec::new(4, 2).unwrap();
        let m = model(LikelihoodKind::NegativeBinomial, 1, 4, 2, spec, 10);
        let mut vals = count_series(12, 5);
        vals[3] = None;
        let w = window_for(&vals, 0, spec);
        assert_eq!(w.mask[3], StepMask::Missing);
        let r = m.unroll_training(&w, &mut substream(1, Stream::Imputation, 0)).unwrap();
        assert_eq!(r.scored_steps, w.len() - 1);
        let again = m.unroll_training(&w, &mut substream(1, Stream::Imputation, 0)).unwrap();
        assert_eq!(r.loss.to_bits(), again.loss.to_bits());
    }

    #[test]
    fn unknown_category_is_rejected() {
        let spec = WindowSpec::new(3, 2).unwrap();
        let m = model(LikelihoodKind::Gaussian, 1, 4, 2, spec, 0);
        let mut w = window_for(&[Some(1.0); 10], 0, spec);
        w.category = 7;
        assert!(m.unroll_training(&w, &mut substream(0, Stream::Imputation, 0)).is_err());
    }
}
