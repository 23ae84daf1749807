//! The learned time allocator: an MLP from padded corridors and boundary
//! states to segment durations and stop tokens, trained through the QP layer.
//!
//! Output layout: the first `M_max` outputs pass through softplus and are the
//! durations, the last `M_max` through the logistic function and are the stop
//! probabilities. Durations beyond the instance's segment count are ignored
//! by the loss.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::clock::Clock;
use crate::corridor::{PaddedCorridorTensor, Point};
use crate::dataset::DatasetRecord;
use crate::error::{invalid, Error, Result};
use crate::implicit_diff::{lagrangian_gradient, loss_gradient, matrix_jacobians};
use crate::math::{ln, logistic, softplus, softplus_inv, tanh};
use crate::polynomial::PiecewiseTrajectory;
use crate::qp_builder::ProblemInstance;
use crate::qp_solver::{QpSettings, QpStatus};
use crate::time_opt::{evaluate, scale_to_feasible, Evaluation};
use crate::T_MIN;

/// Fully connected layer, `y = W x + b` with `W` row-major `outputs × inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.outputs)
            .map(|o| {
                let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                self.bias[o] + crate::linalg::dot(row, x)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocModel {
    m_max: usize,
    f_max: usize,
    kappa: usize,
    /// Offsets and boundary states are divided by this (workspace half-extent).
    position_scale: f64,
    layers: Vec<Dense>,
}

/// Raw network outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Softplus durations, length `M_max`.
    pub durations: Vec<f64>,
    /// Stop probabilities, length `M_max`.
    pub stops: Vec<f64>,
}

impl AllocModel {
    /// Xavier-uniform weights, zero biases.
    pub fn new(
        m_max: usize,
        f_max: usize,
        kappa: usize,
        hidden: &[usize],
        position_scale: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dims = vec![input_dim(m_max, f_max, kappa)];
        dims.extend_from_slice(hidden);
        dims.push(2 * m_max);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (i, o) = (w[0], w[1]);
                let lim = crate::math::sqrt(6.0 / (i + o) as f64);
                Dense {
                    inputs: i,
                    outputs: o,
                    weights: (0..i * o).map(|_| rng.gen_range(-lim..=lim)).collect(),
                    bias: vec![0.0; o],
                }
            })
            .collect();
        AllocModel::from_parts(m_max, f_max, kappa, position_scale, layers)
    }

    /// Checks layer shapes and finiteness.
    pub fn from_parts(
        m_max: usize,
        f_max: usize,
        kappa: usize,
        position_scale: f64,
        layers: Vec<Dense>,
    ) -> Result<Self> {
        if m_max == 0 || f_max == 0 || f_max > crate::F_MAX_LIMIT {
            return Err(invalid(
                "m_max and f_max must be positive, f_max at most 50",
            ));
        }
        if kappa != 3 && kappa != 4 {
            return Err(invalid("kappa must be 3 or 4"));
        }
        if !(position_scale > 0.0) || !position_scale.is_finite() {
            return Err(invalid("position scale must be positive"));
        }
        if layers.is_empty() {
            return Err(invalid("model needs at least one layer"));
        }
        let mut width = input_dim(m_max, f_max, kappa);
        for (k, l) in layers.iter().enumerate() {
            if l.inputs != width
                || l.weights.len() != l.inputs * l.outputs
                || l.bias.len() != l.outputs
            {
                return Err(Error::InvalidArgument(alloc::format!(
                    "layer {k} has inconsistent shape"
                )));
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(alloc::format!(
                    "layer {k} has non-finite weights"
                )));
            }
            width = l.outputs;
        }
        if width != 2 * m_max {
            return Err(invalid("output layer must have 2·m_max units"));
        }
        Ok(AllocModel {
            m_max,
            f_max,
            kappa,
            position_scale,
            layers,
        })
    }

    pub fn m_max(&self) -> usize {
        self.m_max
    }

    pub fn f_max(&self) -> usize {
        self.f_max
    }

    pub fn kappa(&self) -> usize {
        self.kappa
    }

    pub fn position_scale(&self) -> f64 {
        self.position_scale
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        input_dim(self.m_max, self.f_max, self.kappa)
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Sets the duration-head biases so an all-zero hidden state predicts `t`.
    pub fn set_duration_bias(&mut self, t: f64) {
        let m = self.m_max;
        let last = self.layers.last_mut().expect("non-empty");
        for b in &mut last.bias[..m] {
            *b = softplus_inv(t);
        }
    }

    /// Normalized input vector: per face `(n, offset/scale)` then the flattened
    /// start and goal states (axis-major, scaled).
    pub fn features(
        &self,
        padded: &PaddedCorridorTensor,
        q0: &[Point],
        qf: &[Point],
    ) -> Result<Vec<f64>> {
        if padded.m_max() != self.m_max || padded.f_max() != self.f_max {
            return Err(invalid("padded tensor shape differs from the model"));
        }
        if q0.len() != self.kappa || qf.len() != self.kappa {
            return Err(invalid("boundary states need kappa derivative orders"));
        }
        let mut x = Vec::with_capacity(self.input_dim());
        for face in padded.data().chunks_exact(4) {
            x.extend_from_slice(&face[..3]);
            x.push(face[3] / self.position_scale);
        }
        for q in [q0, qf] {
            for axis in 0..3 {
                for k in 0..self.kappa {
                    x.push(q[k][axis] / self.position_scale);
                }
            }
        }
        Ok(x)
    }

    pub fn forward(&self, x: &[f64]) -> Prediction {
        self.forward_cached(x).0
    }

    /// Forward pass keeping every layer's activated output.
    fn forward_cached(&self, x: &[f64]) -> (Prediction, Vec<Vec<f64>>) {
        let mut acts = vec![x.to_vec()];
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            let mut z = l.apply(acts.last().expect("input"));
            if k < last {
                for v in z.iter_mut() {
                    *v = tanh(*v);
                }
            }
            acts.push(z);
        }
        let z = acts.last().expect("output");
        let m = self.m_max;
        let pred = Prediction {
            durations: z[..m].iter().map(|&v| softplus(v)).collect(),
            stops: z[m..].iter().map(|&v| logistic(v)).collect(),
        };
        (pred, acts)
    }

    /// Gradients of a scalar loss with respect to all weights, given its
    /// gradients with respect to the durations and stop probabilities.
    fn backward(&self, acts: &[Vec<f64>], grad_t: &[f64], grad_s: &[f64]) -> Gradients {
        let m = self.m_max;
        let z = acts.last().expect("output");
        // d softplus = logistic, d logistic = s(1 − s)
        let mut delta: Vec<f64> = (0..2 * m)
            .map(|o| {
                if o < m {
                    grad_t[o] * logistic(z[o])
                } else {
                    let s = logistic(z[o]);
                    grad_s[o - m] * s * (1.0 - s)
                }
            })
            .collect();
        let mut out = Gradients::zeros_like(self);
        for k in (0..self.layers.len()).rev() {
            let l = &self.layers[k];
            let input = &acts[k];
            let g = &mut out.layers[k];
            for o in 0..l.outputs {
                g.1[o] += delta[o];
                let row = &mut g.0[o * l.inputs..(o + 1) * l.inputs];
                for (w, &xi) in row.iter_mut().zip(input) {
                    *w += delta[o] * xi;
                }
            }
            if k == 0 {
                break;
            }
            let mut prev = vec![0.0; l.inputs];
            for o in 0..l.outputs {
                let row = &l.weights[o * l.inputs..(o + 1) * l.inputs];
                for (p, &w) in prev.iter_mut().zip(row) {
                    *p += delta[o] * w;
                }
            }
            // The previous activation is tanh: d tanh = 1 − a².
            for (p, &a) in prev.iter_mut().zip(input) {
                *p *= 1.0 - a * a;
            }
            delta = prev;
        }
        out
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }
}

pub fn input_dim(m_max: usize, f_max: usize, kappa: usize) -> usize {
    m_max * f_max * 4 + 2 * 3 * kappa
}

/// Per-layer `(weights, bias)` gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Gradients {
    fn zeros_like(model: &AllocModel) -> Self {
        Gradients {
            layers: model
                .layers
                .iter()
                .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
                .collect(),
        }
    }

    fn add_scaled(&mut self, other: &Gradients, a: f64) {
        for (mine, theirs) in self.layers.iter_mut().zip(&other.layers) {
            crate::linalg::axpy(a, &theirs.0, &mut mine.0);
            crate::linalg::axpy(a, &theirs.1, &mut mine.1);
        }
    }

    /// All entries in the same order as the model parameters.
    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
            .collect()
    }
}

/// `M̂ = 1 + (first index with s_i > α)`, or `M_max` when none exceeds `α`.
pub fn predict_segments(stops: &[f64], alpha: f64) -> usize {
    stops
        .iter()
        .position(|&s| s > alpha)
        .map_or(stops.len(), |i| i + 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenLoss {
    /// Mean binary cross-entropy.
    pub bce: f64,
    pub premature: usize,
    pub late: usize,
    /// `bce + λ_p·(premature + late)`.
    pub value: f64,
    /// Gradient of `value` with respect to the stop probabilities. The
    /// indicator penalties contribute nothing.
    pub grad: Vec<f64>,
}

const PROB_CLAMP: f64 = 1e-7;

pub fn token_loss(stops: &[f64], targets: &[f64], alpha: f64, lambda_p: f64) -> TokenLoss {
    let m = stops.len() as f64;
    let mut bce = 0.0;
    let mut grad = Vec::with_capacity(stops.len());
    let (mut premature, mut late) = (0, 0);
    for (&s, &t) in stops.iter().zip(targets) {
        let sc = s.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        bce -= t * ln(sc) + (1.0 - t) * ln(1.0 - sc);
        grad.push((sc - t) / (sc * (1.0 - sc) * m));
        if s > alpha && t < alpha {
            premature += 1;
        }
        if s < alpha && t > alpha {
            late += 1;
        }
    }
    let bce = bce / m;
    TokenLoss {
        bce,
        premature,
        late,
        value: bce + lambda_p * (premature + late) as f64,
        grad,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub w_f: f64,
    pub w_t: f64,
    pub w_s: f64,
    pub lambda_p: f64,
    pub alpha: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub position_scale: f64,
    pub qp: QpSettings,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            w_f: 1200.0,
            w_t: 17.5,
            w_s: 20.0,
            lambda_p: 5.0,
            alpha: 0.5,
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 16,
            seed: 0,
            hidden: vec![64, 64],
            position_scale: 10.0,
            qp: QpSettings::default(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.w_f, self.w_t, self.w_s, self.lambda_p];
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(invalid("loss weights must be non-negative"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid("alpha must lie in (0, 1)"));
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 {
            return Err(invalid("learning rate and batch size must be positive"));
        }
        if self.hidden.contains(&0) {
            return Err(invalid("hidden widths must be positive"));
        }
        if !(self.position_scale > 0.0) {
            return Err(invalid("position scale must be positive"));
        }
        Ok(())
    }
}

/// Which form of `ℓ_F` a sample used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    /// QP optimal: `c*ᵀQc* + w_t·Σt`, differentiated through the KKT system.
    Feasible,
    /// QP infeasible: `w_F‖t̄ − t‖² + w_t·Σt`.
    Infeasible,
    /// Solver hit its iteration or time cap; handled like `Infeasible`.
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleLoss {
    pub total: f64,
    pub trajectory: f64,
    pub token: TokenLoss,
    pub branch: Branch,
    /// `∂total/∂durations`, zero beyond the instance's segment count.
    pub grad_durations: Vec<f64>,
    pub grad_stops: Vec<f64>,
}

/// Loss of one sample given the network's outputs.
pub fn training_loss(
    pred: &Prediction,
    rec: &DatasetRecord,
    cfg: &TrainingConfig,
) -> Result<SampleLoss> {
    let m = rec.num_segments();
    let m_max = pred.durations.len();
    if m > m_max {
        return Err(invalid("record has more segments than the model outputs"));
    }
    let t = &pred.durations[..m];
    let mut grad_durations = vec![0.0; m_max];
    let inst = &rec.instance;

    let mut branch = Branch::Infeasible;
    let mut trajectory = 0.0;
    if t.iter().all(|&v| v >= T_MIN) {
        let ev = evaluate(inst, t, &cfg.qp, &crate::clock::NoClock)?;
        match ev.solution.status {
            QpStatus::Optimal => {
                let jac = matrix_jacobians(inst, t, &ev.problem)?;
                let g = match loss_gradient(&ev.solution, &ev.problem, &jac, cfg.w_t) {
                    Ok(g) => g,
                    Err(e) => {
                        log::warn!("implicit gradient failed ({e}); using the envelope form");
                        lagrangian_gradient(&ev.solution, &jac, cfg.w_t)
                    }
                };
                grad_durations[..m].copy_from_slice(&g);
                trajectory = ev.problem.objective(&ev.solution.c) + cfg.w_t * t.iter().sum::<f64>();
                branch = Branch::Feasible;
            }
            QpStatus::MaxIterations => branch = Branch::Inconclusive,
            QpStatus::Infeasible => {}
        }
    }
    if branch != Branch::Feasible {
        for i in 0..m {
            let d = t[i] - rec.t_ref[i];
            trajectory += cfg.w_f * d * d + cfg.w_t * t[i];
            grad_durations[i] = 2.0 * cfg.w_f * d + cfg.w_t;
        }
    }
    let token = token_loss(
        &pred.stops,
        rec.padded.stop_targets(),
        cfg.alpha,
        cfg.lambda_p,
    );
    let grad_stops = token.grad.iter().map(|g| cfg.w_s * g).collect();
    Ok(SampleLoss {
        total: trajectory + cfg.w_s * token.value,
        trajectory,
        token,
        branch,
        grad_durations,
        grad_stops,
    })
}

/// Applies a per-sample closure over `0..n`, returning results in index
/// order. Lets callers parallelize the QP solves inside a batch.
pub trait SampleMap {
    fn map(
        &self,
        n: usize,
        f: &(dyn Fn(usize) -> Result<(SampleLoss, Gradients)> + Sync),
    ) -> Vec<Result<(SampleLoss, Gradients)>>;
}

/// Runs samples one after another.
#[derive(Debug, Clone, Copy, Default)]
pub struct Serial;

impl SampleMap for Serial {
    fn map(
        &self,
        n: usize,
        f: &(dyn Fn(usize) -> Result<(SampleLoss, Gradients)> + Sync),
    ) -> Vec<Result<(SampleLoss, Gradients)>> {
        (0..n).map(f).collect()
    }
}

/// Network input and loss target for one record.
fn sample_features(model: &AllocModel, rec: &DatasetRecord) -> Result<Vec<f64>> {
    model.features(&rec.padded, rec.instance.q0(), rec.instance.qf())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchResult {
    /// Mean total loss.
    pub loss: f64,
    /// Gradient of the mean loss.
    pub grads: Gradients,
    pub samples: Vec<SampleLoss>,
    pub predictions: Vec<Prediction>,
}

/// Mean loss and its gradient over `batch`, reduced in batch order.
pub fn batch_gradient(
    model: &AllocModel,
    batch: &[&DatasetRecord],
    cfg: &TrainingConfig,
    map: &dyn SampleMap,
) -> Result<BatchResult> {
    let n = batch.len();
    if n == 0 {
        return Err(invalid("empty batch"));
    }
    let inputs = batch
        .iter()
        .map(|r| sample_features(model, r))
        .collect::<Result<Vec<_>>>()?;
    let run = |i: usize| -> Result<(SampleLoss, Gradients)> {
        let (pred, acts) = model.forward_cached(&inputs[i]);
        let loss = training_loss(&pred, batch[i], cfg)?;
        let grads = model.backward(&acts, &loss.grad_durations, &loss.grad_stops);
        Ok((loss, grads))
    };
    let results = map.map(n, &run);
    let mut grads = Gradients::zeros_like(model);
    let mut samples = Vec::with_capacity(n);
    let mut total = 0.0;
    for r in results {
        let (loss, g) = r?;
        total += loss.total;
        grads.add_scaled(&g, 1.0 / n as f64);
        samples.push(loss);
    }
    let predictions = inputs.iter().map(|x| model.forward(x)).collect();
    Ok(BatchResult {
        loss: total / n as f64,
        grads,
        samples,
        predictions,
    })
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            lr,
        }
    }

    fn update(&mut self, model: &mut AllocModel, grads: &Gradients) {
        self.step += 1;
        let b1 = 1.0 - libm::pow(Self::BETA1, self.step as f64);
        let b2 = 1.0 - libm::pow(Self::BETA2, self.step as f64);
        let g = grads.flat();
        for (k, p) in model.params_mut().enumerate() {
            self.m[k] = Self::BETA1 * self.m[k] + (1.0 - Self::BETA1) * g[k];
            self.v[k] = Self::BETA2 * self.v[k] + (1.0 - Self::BETA2) * g[k] * g[k];
            let mh = self.m[k] / b1;
            let vh = self.v[k] / b2;
            *p -= self.lr * mh / (crate::math::sqrt(vh) + Self::EPS);
        }
    }
}

/// Summary of one training epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_trajectory_loss: f64,
    pub mean_token_loss: f64,
    /// Fraction of samples whose QP was optimal.
    pub feasible_fraction: f64,
    /// Samples whose solve was inconclusive (counted as infeasible).
    pub inconclusive: usize,
    /// Fraction with `predict_segments(s, α) == M`, from the pre-update outputs.
    pub token_accuracy: f64,
}

/// Mini-batch Adam over `records`. `on_epoch` sees each log as it is produced.
pub fn train(
    records: &[DatasetRecord],
    cfg: &TrainingConfig,
    map: &dyn SampleMap,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<(AllocModel, Vec<EpochLog>)> {
    cfg.validate()?;
    let first = records
        .first()
        .ok_or_else(|| invalid("training set is empty"))?;
    let (m_max, f_max) = (first.padded.m_max(), first.padded.f_max());
    let kappa = first.instance.kappa();
    if records.iter().any(|r| {
        r.padded.m_max() != m_max || r.padded.f_max() != f_max || r.instance.kappa() != kappa
    }) {
        return Err(invalid("records differ in padding or kappa"));
    }
    let mut model = AllocModel::new(
        m_max,
        f_max,
        kappa,
        &cfg.hidden,
        cfg.position_scale,
        cfg.seed,
    )?;
    let count: usize = records.iter().map(|r| r.t_ref.len()).sum();
    let mean_t = records.iter().flat_map(|r| r.t_ref.iter()).sum::<f64>() / count as f64;
    model.set_duration_bias(mean_t);

    let mut adam = Adam::new(model.num_params(), cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED);
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss, mut traj, mut tok) = (0.0, 0.0, 0.0);
        let (mut feasible, mut inconclusive, mut correct) = (0usize, 0usize, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&DatasetRecord> = chunk.iter().map(|&i| &records[i]).collect();
            let res = batch_gradient(&model, &batch, cfg, map)?;
            if !res.loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    reason: "non-finite batch loss".to_string(),
                });
            }
            for (s, (p, r)) in res.samples.iter().zip(res.predictions.iter().zip(&batch)) {
                loss += s.total;
                traj += s.trajectory;
                tok += s.token.value;
                match s.branch {
                    Branch::Feasible => feasible += 1,
                    Branch::Inconclusive => inconclusive += 1,
                    Branch::Infeasible => {}
                }
                if predict_segments(&p.stops, cfg.alpha) == r.num_segments() {
                    correct += 1;
                }
            }
            adam.update(&mut model, &res.grads);
        }
        let n = records.len() as f64;
        let log = EpochLog {
            epoch,
            mean_loss: loss / n,
            mean_trajectory_loss: traj / n,
            mean_token_loss: tok / n,
            feasible_fraction: feasible as f64 / n,
            inconclusive,
            token_accuracy: correct as f64 / n,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} feasible {:.3} token acc {:.3}",
            log.mean_loss,
            log.feasible_fraction,
            log.token_accuracy
        );
        on_epoch(&log);
        logs.push(log);
    }
    Ok((model, logs))
}

/// Fraction of records whose decoded length matches their segment count.
pub fn token_accuracy(model: &AllocModel, records: &[DatasetRecord], alpha: f64) -> Result<f64> {
    if records.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0;
    for r in records {
        let p = model.forward(&sample_features(model, r)?);
        if predict_segments(&p.stops, alpha) == r.num_segments() {
            correct += 1;
        }
    }
    Ok(correct as f64 / records.len() as f64)
}

/// Result of planning one instance with the model.
#[derive(Debug, Clone)]
pub struct Inference {
    pub predicted_segments: usize,
    /// `predicted_segments` differs from the instance's segment count.
    pub length_miss: bool,
    /// Durations handed to the QP (after clamping and any rescue).
    pub durations: Vec<f64>,
    pub scalings: usize,
    pub evaluation: Option<Evaluation>,
    pub trajectory: Option<PiecewiseTrajectory>,
    pub inference_time: f64,
    pub solve_time: f64,
}

/// Forward pass, length decoding, QP solve and (if needed) one rescue by
/// temporal scaling.
///
/// The QP is always built at the instance's own segment count; when the
/// decoded length differs, the model's outputs for the remaining slots are
/// used and the miss is flagged.
pub fn infer(
    model: &AllocModel,
    inst: &ProblemInstance,
    alpha: f64,
    qp: &QpSettings,
    clock: &dyn Clock,
) -> Result<Inference> {
    let t0 = clock.now();
    let padded = crate::corridor::pad(inst.corridors(), model.f_max, model.m_max)?;
    let pred = model.forward(&model.features(&padded, inst.q0(), inst.qf())?);
    let predicted_segments = predict_segments(&pred.stops, alpha);
    let m = inst.num_segments();
    let length_miss = predicted_segments != m;
    if length_miss {
        log::debug!("length miss: decoded {predicted_segments}, instance has {m}");
    }
    let durations: Vec<f64> = pred.durations[..m].iter().map(|&v| v.max(T_MIN)).collect();
    let t1 = clock.now();
    let rescue = scale_to_feasible(inst, &durations, 1.2, 10, qp, clock)?;
    let t2 = clock.now();
    let (durations, scalings, evaluation) = match rescue {
        Some(r) => (
            r.evaluation.durations.clone(),
            r.scalings,
            Some(r.evaluation),
        ),
        None => (durations, 0, None),
    };
    let trajectory = match &evaluation {
        Some(e) => Some(PiecewiseTrajectory::from_stacked(
            &e.solution.c,
            &e.durations,
            inst.degree(),
        )?),
        None => None,
    };
    Ok(Inference {
        predicted_segments,
        length_miss,
        durations,
        scalings,
        evaluation,
        trajectory,
        inference_time: t1 - t0,
        solve_time: t2 - t1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_dataset, DatasetConfig};

    fn zero_model() -> AllocModel {
        let mut m = AllocModel::new(3, 6, 3, &[8], 10.0, 1).unwrap();
        for l in &mut m.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
        }
        m
    }

    #[test]
    fn zero_weights_give_closed_form_outputs() {
        let m = zero_model();
        let p = m.forward(&vec![0.3; m.input_dim()]);
        for d in &p.durations {
            assert!((d - core::f64::consts::LN_2).abs() < 1e-15);
        }
        assert!(p.stops.iter().all(|&s| s == 0.5));
    }

    #[test]
    fn padded_slots_contribute_nothing() {
        let data = generate_dataset(2, 6, &DatasetConfig::default()).unwrap();
        let rec = data.iter().find(|r| r.num_segments() < 3).unwrap();
        let model = AllocModel::new(3, 6, 3, &[16, 16], 10.0, 4).unwrap();
        let x = sample_features(&model, rec).unwrap();
        let a = model.forward(&x);
        assert_eq!(a, model.forward(&x));
        let start = rec.num_segments() * 6 * 4;
        let mut y = x.clone();
        for v in &mut y[start..3 * 6 * 4] {
            *v *= 3.0;
        }
        assert_eq!(a, model.forward(&y));
    }

    #[test]
    fn predict_segments_examples() {
        assert_eq!(predict_segments(&[0.1, 0.8, 0.9], 0.5), 2);
        assert_eq!(predict_segments(&[0.2, 0.3, 0.4], 0.5), 3);
        assert_eq!(predict_segments(&[0.6, 0.1, 0.1], 0.5), 1);
    }

    #[test]
    fn token_loss_examples() {
        let t = token_loss(&[0.0, 1.0], &[0.0, 1.0], 0.5, 5.0);
        assert_eq!((t.premature, t.late), (0, 0));
        assert!(t.bce < 1e-6);

        let t = token_loss(&[0.6, 0.2], &[0.0, 1.0], 0.5, 5.0);
        assert_eq!((t.premature, t.late), (1, 1));
        assert!((t.value - t.bce - 10.0).abs() < 1e-12);

        let e = 1e-3;
        let t = token_loss(&[0.5 - e, 0.5 + e], &[0.0, 1.0], 0.5, 5.0);
        assert_eq!(t.value, t.bce);
    }

    #[test]
    fn token_gradient_matches_finite_differences() {
        let s = [0.3, 0.7, 0.55];
        let tg = [0.0, 1.0, 1.0];
        let g = token_loss(&s, &tg, 0.5, 5.0).grad;
        for i in 0..3 {
            let h = 1e-6;
            let mut sp = s;
            sp[i] += h;
            let mut sm = s;
            sm[i] -= h;
            let fd = (token_loss(&sp, &tg, 0.5, 5.0).bce - token_loss(&sm, &tg, 0.5, 5.0).bce)
                / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn infeasible_branch_at_reference_is_time_cost() {
        let data = generate_dataset(5, 10, &DatasetConfig::default()).unwrap();
        let cfg = TrainingConfig::default();
        let rec = &data[0];
        let m = rec.num_segments();
        // Durations below T_MIN take the infeasible branch.
        let mut r = rec.clone();
        r.t_ref = vec![0.01; m];
        let pred = Prediction {
            durations: vec![0.01; 3],
            stops: vec![0.5; 3],
        };
        let l = training_loss(&pred, &r, &cfg).unwrap();
        assert_eq!(l.branch, Branch::Infeasible);
        assert!((l.trajectory - cfg.w_t * 0.01 * m as f64).abs() < 1e-12);
    }

    #[test]
    fn softplus_head_is_positive() {
        let model = AllocModel::new(3, 6, 3, &[16], 10.0, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10_000 {
            let x: Vec<f64> = (0..model.input_dim())
                .map(|_| rng.gen_range(-50.0..50.0))
                .collect();
            assert!(model.forward(&x).durations.iter().all(|&d| d > 0.0));
        }
    }

    /// `max |g − fd| / max(|fd|∞, |g|∞)` over all weights.
    fn weight_gradient_error(
        model: &AllocModel,
        batch: &[&DatasetRecord],
        cfg: &TrainingConfig,
    ) -> f64 {
        let res = batch_gradient(model, batch, cfg, &Serial).unwrap();
        let g = res.grads.flat();
        let mut fd = Vec::with_capacity(g.len());
        let h = 1e-5;
        for k in 0..g.len() {
            let mut mp = model.clone();
            *mp.params_mut().nth(k).unwrap() += h;
            let mut mm = model.clone();
            *mm.params_mut().nth(k).unwrap() -= h;
            let lp = batch_gradient(&mp, batch, cfg, &Serial).unwrap().loss;
            let lm = batch_gradient(&mm, batch, cfg, &Serial).unwrap().loss;
            fd.push((lp - lm) / (2.0 * h));
        }
        let scale = crate::linalg::norm_inf(&fd).max(crate::linalg::norm_inf(&g));
        g.iter()
            .zip(&fd)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
            / scale
    }

    #[test]
    fn backprop_matches_finite_differences_infeasible_batch() {
        let data = generate_dataset(6, 4, &DatasetConfig::default()).unwrap();
        let mut model = AllocModel::new(3, 6, 3, &[5], 10.0, 2).unwrap();
        // Durations around 0.02 s sit below T_MIN: every sample is infeasible.
        model.set_duration_bias(0.02);
        for w in &mut model.layers[1].weights[..5 * 3] {
            *w *= 1e-3;
        }
        let batch: Vec<&DatasetRecord> = data.iter().collect();
        let cfg = TrainingConfig::default();
        let res = batch_gradient(&model, &batch, &cfg, &Serial).unwrap();
        assert!(res.samples.iter().all(|s| s.branch == Branch::Infeasible));
        let err = weight_gradient_error(&model, &batch, &cfg);
        assert!(err <= 1e-6, "relative error {err}");
    }

    #[test]
    fn backprop_matches_finite_differences_feasible_batch() {
        let data = generate_dataset(6, 12, &DatasetConfig::default()).unwrap();
        let batch: Vec<&DatasetRecord> = data.iter().filter(|r| r.feasible).take(3).collect();
        let mut model = AllocModel::new(3, 6, 3, &[4], 10.0, 2).unwrap();
        // Generous durations keep every QP feasible with a stable active set.
        let longest = batch
            .iter()
            .flat_map(|r| r.t_ref.iter())
            .cloned()
            .fold(0.0, f64::max);
        model.set_duration_bias(1.5 * longest);
        for w in &mut model.layers[1].weights[..4 * 3] {
            *w *= 1e-2;
        }
        let cfg = TrainingConfig::default();
        let res = batch_gradient(&model, &batch, &cfg, &Serial).unwrap();
        assert!(res.samples.iter().all(|s| s.branch == Branch::Feasible));
        let err = weight_gradient_error(&model, &batch, &cfg);
        assert!(err <= 1e-4, "relative error {err}");
    }

    #[test]
    fn training_is_deterministic_and_learns_lengths() {
        let data = generate_dataset(11, 40, &DatasetConfig::default()).unwrap();
        let cfg = TrainingConfig {
            epochs: 40,
            hidden: vec![16, 16],
            learning_rate: 3e-3,
            ..TrainingConfig::default()
        };
        let (a, logs) = train(&data, &cfg, &Serial, &mut |_| {}).unwrap();
        let (b, _) = train(&data, &cfg, &Serial, &mut |_| {}).unwrap();
        assert_eq!(a, b);
        assert!(logs.last().unwrap().mean_loss < logs[0].mean_loss);
        assert!(token_accuracy(&a, &data, cfg.alpha).unwrap() >= 0.9);
    }

    #[test]
    fn inference_never_returns_violating_trajectory() {
        let data = generate_dataset(12, 8, &DatasetConfig::default()).unwrap();
        let model = AllocModel::new(3, 6, 3, &[8], 10.0, 9).unwrap();
        for r in &data {
            let out = infer(
                &model,
                &r.instance,
                0.5,
                &QpSettings::default(),
                &crate::clock::NoClock,
            )
            .unwrap();
            if let Some(traj) = &out.trajectory {
                assert!(crate::verify::check(&r.instance, traj).within(1e-6));
            }
        }
    }
}
