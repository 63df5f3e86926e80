use ngen_core::instrumentation::{mean, sandwich_check, t_traces, LayerStats, TTrace};
use ngen_core::network::{InitScheme, Mode, Network, Params};
use ngen_core::optim::{sgd_step, OptimConfig, PlateauMetric, Schedule};
use ngen_core::Error as CoreError;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::augment::augment;
use crate::data::{Dataset, Splits};
use crate::error::Result;

/// Fraction of a run's own final accuracy used as the learning-speed threshold.
pub const THRESHOLD_FRACTION: f64 = 0.9;
/// Accuracy margin above chance required to count a run as converged.
pub const CONVERGENCE_MARGIN: f64 = 0.1;
const EVAL_CHUNK: usize = 256;

/// Everything one training run needs besides the data.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub run_id: String,
    pub init: InitScheme,
    pub optim: OptimConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds the shuffling and augmentation stream.
    pub seed: u64,
    pub augment: bool,
    /// Per-sample sandwich probe every this many steps; 0 disables.
    pub probe_every: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub run_id: String,
    pub epoch: usize,
    pub step: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub lr_multiplier: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run_id: String,
    pub classes: usize,
    pub epochs: usize,
    pub metrics: Vec<MetricsRow>,
    pub layer_stats: Vec<LayerStats>,
    pub t_traces: Vec<TTrace>,
    pub diverged: bool,
    pub steps: usize,
    pub sandwich_probes: usize,
    pub sandwich_holds: usize,
    pub params: Params,
}

impl RunOutcome {
    pub fn final_train_acc(&self) -> f64 {
        self.metrics.iter().rev().find(|m| !m.diverged).map_or(0.0, |m| m.train_acc)
    }

    pub fn final_test_acc(&self) -> f64 {
        self.metrics.iter().rev().find(|m| !m.diverged).map_or(0.0, |m| m.test_acc)
    }

    pub fn max_train_acc(&self) -> f64 {
        self.metrics.iter().filter(|m| !m.diverged).map(|m| m.train_acc).fold(0.0, f64::max)
    }

    /// Final accuracy clears chance by the margin and the loss never blew up.
    pub fn converged(&self) -> bool {
        !self.diverged && self.final_train_acc() > 1.0 / self.classes as f64 + CONVERGENCE_MARGIN
    }

    pub fn threshold(&self) -> f64 {
        THRESHOLD_FRACTION * self.final_train_acc()
    }

    /// First epoch whose train accuracy reaches [`Self::threshold`]. Runs that
    /// did not converge never reach a meaningful threshold and report
    /// `epochs + 1`.
    pub fn epochs_to_threshold(&self) -> usize {
        if !self.converged() {
            return self.epochs + 1;
        }
        let th = self.threshold();
        self.metrics
            .iter()
            .find(|m| m.epoch > 0 && m.train_acc >= th)
            .map_or(self.epochs + 1, |m| m.epoch)
    }

    /// Mean shift over all NG layers of the final parameters.
    pub fn final_t_mean(&self) -> Option<f64> {
        let all: Vec<f64> = self.params.ng_layers().flat_map(|(_, ng)| ng.t.data().to_vec()).collect();
        (!all.is_empty()).then(|| mean(&all))
    }
}

/// Loss and accuracy over a whole dataset in eval mode. `None` when the loss
/// is not finite.
pub fn evaluate(net: &Network, params: &Params, data: &Dataset) -> Result<Option<(f64, f64)>> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut scratch = params.clone();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (x, y) = data.batch(chunk);
        let out = match net.forward(&mut scratch, &x, &y, Mode::Eval) {
            Ok(o) => o,
            Err(CoreError::Divergence(_)) => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        loss += out.loss * chunk.len() as f64;
        let classes = out.logits.shape()[1];
        for (row, &label) in out.logits.data().chunks(classes).zip(&y) {
            if argmax(row) == label {
                correct += 1;
            }
        }
    }
    let n = data.len() as f64;
    Ok(Some((loss / n, correct as f64 / n)))
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn augmented_batch(data: &Dataset, idx: &[usize], rng: &mut ChaCha8Rng) -> (ngen_core::Tensor, Vec<usize>) {
    let (mut x, y) = data.batch(idx);
    if let [c, h, w] = data.sample_shape()[..] {
        for n in 0..idx.len() {
            let out = augment(x.sample(n), [c, h, w], rng);
            x.sample_mut(n).copy_from_slice(&out);
        }
    }
    (x, y)
}

/// Trains with seeded shuffling. A non-finite loss or gradient ends the run
/// with a final `diverged` row instead of an error.
pub fn train(net: &Network, spec: &RunSpec, data: &Splits) -> Result<RunOutcome> {
    let mut params = net.init_params(spec.init);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut outcome = RunOutcome {
        run_id: spec.run_id.clone(),
        classes: net.num_classes(),
        epochs: spec.epochs,
        metrics: Vec::new(),
        layer_stats: Vec::new(),
        t_traces: t_traces(&params, 0),
        diverged: false,
        steps: 0,
        sandwich_probes: 0,
        sandwich_holds: 0,
        params: params.clone(),
    };
    let plateau_metric = match spec.optim.schedule {
        Schedule::Plateau { metric, .. } => Some(metric),
        Schedule::Step { .. } => None,
    };
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..data.train.len()).collect();

    for epoch in 0..spec.epochs {
        let lr_multiplier = spec.optim.schedule.multiplier(epoch, &history);
        order.shuffle(&mut rng);
        let mut diverged = false;
        for idx in order.chunks(spec.batch_size) {
            if idx.len() < 2 && idx.len() < order.len() {
                continue;
            }
            let (x, y) = if spec.augment {
                augmented_batch(&data.train, idx, &mut rng)
            } else {
                data.train.batch(idx)
            };
            if spec.probe_every > 0 && outcome.steps.is_multiple_of(spec.probe_every) {
                probe(net, &params, &x, &y, spec.optim.lr * lr_multiplier, outcome.steps, &mut outcome)?;
            }
            let step = net
                .forward(&mut params, &x, &y, Mode::Train)
                .and_then(|out| net.backward(&params, &out.cache))
                .and_then(|back| sgd_step(&mut params, &back.grads, &spec.optim, lr_multiplier));
            match step {
                Ok(()) => outcome.steps += 1,
                Err(CoreError::Divergence(_)) => {
                    diverged = true;
                    break;
                }
                Err(e) => return Err(e.into()),
            }
        }
        let train_eval = if diverged { None } else { evaluate(net, &params, &data.train)? };
        let test_eval = if diverged { None } else { evaluate(net, &params, &data.test)? };
        let (Some((train_loss, train_acc)), Some((_, test_acc))) = (train_eval, test_eval) else {
            outcome.diverged = true;
            outcome.metrics.push(MetricsRow {
                run_id: spec.run_id.clone(),
                epoch: epoch + 1,
                step: outcome.steps,
                train_loss: f64::NAN,
                train_acc: 0.0,
                test_acc: 0.0,
                lr_multiplier,
                diverged: true,
            });
            break;
        };
        outcome.metrics.push(MetricsRow {
            run_id: spec.run_id.clone(),
            epoch: epoch + 1,
            step: outcome.steps,
            train_loss,
            train_acc,
            test_acc,
            lr_multiplier,
            diverged: false,
        });
        outcome.t_traces.extend(t_traces(&params, epoch + 1));
        history.push(match plateau_metric {
            Some(PlateauMetric::TestError) => 1.0 - test_acc,
            _ => train_loss,
        });
    }
    outcome.params = params;
    Ok(outcome)
}

fn probe(
    net: &Network,
    params: &Params,
    x: &ngen_core::Tensor,
    y: &[usize],
    lr: f64,
    step: usize,
    outcome: &mut RunOutcome,
) -> Result<()> {
    let mut shape = x.shape().to_vec();
    shape[0] = 1;
    let sample = ngen_core::Tensor::new(&shape, x.sample(0).to_vec())?;
    outcome.sandwich_probes += 1;
    match sandwich_check(net, params, &sample, y[0], lr, step) {
        Ok(report) => {
            outcome.sandwich_holds += 1;
            outcome.layer_stats.extend(report.dense);
            outcome.layer_stats.extend(report.conv);
        }
        Err(CoreError::BoundViolation { .. }) | Err(CoreError::Divergence(_)) => {}
        Err(e) => return Err(e.into()),
    }
    Ok(())
}
