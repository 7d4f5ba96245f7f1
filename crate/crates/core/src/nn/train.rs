use rand::seq::SliceRandom;

use super::optim::{AdamW, StepLr};
use super::params::Params;
use crate::error::{invalid_arg, Error, Result};
use crate::seed::rng_for;
use crate::tensor::Real;

/// Optimizer and schedule settings shared by every trainable stage.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Learning rate is multiplied by `decay` every `step_size` epochs.
    pub step_size: usize,
    pub decay: f64,
    pub seed: u64,
}

impl TrainSettings {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(invalid_arg!("batch size must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid_arg!("learning rate must be positive, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(invalid_arg!("weight decay must be >= 0"));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(invalid_arg!("scheduler decay must be in (0, 1]"));
        }
        Ok(())
    }

    pub fn schedule(&self) -> StepLr {
        StepLr {
            base: self.lr,
            step_size: self.step_size,
            gamma: self.decay,
        }
    }
}

/// Sample order for one epoch; depends only on the seed and epoch number.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, &format!("epoch-{epoch}")));
    order
}

fn scale<T: Real, P: Params<T>>(p: &mut P, s: f64) {
    let s = T::lit(s);
    p.visit_mut("", &mut |_, v| v.iter_mut().for_each(|x| *x *= s));
}

/// Minibatch training loop.
///
/// `sample_grad(params, i, grads)` returns the loss of sample `i` and adds its
/// gradient into `grads`. Batch gradients are averaged before each AdamW step.
/// Returns the mean training loss of every epoch.
pub fn fit<T, P, F>(params: &mut P, n: usize, settings: &TrainSettings, sample_grad: F) -> Result<Vec<f64>>
where
    T: Real,
    P: Params<T> + Clone,
    F: FnMut(&P, usize, &mut P) -> Result<f64>,
{
    run_epochs(params, n, settings, sample_grad, |_| Ok(()))
}

/// [`fit`] that scores the parameters after every epoch and keeps the best.
///
/// `params` ends at the epoch with the lowest score, the earliest on ties.
/// Returns the training losses and the scores.
pub fn fit_select<T, P, F, S>(
    params: &mut P,
    n: usize,
    settings: &TrainSettings,
    sample_grad: F,
    mut score: S,
) -> Result<(Vec<f64>, Vec<f64>)>
where
    T: Real,
    P: Params<T> + Clone,
    F: FnMut(&P, usize, &mut P) -> Result<f64>,
    S: FnMut(&P) -> Result<f64>,
{
    let mut scores = Vec::with_capacity(settings.epochs);
    let mut best: Option<(f64, P)> = None;
    let history = run_epochs(params, n, settings, sample_grad, |p| {
        let s = score(p)?;
        scores.push(s);
        if best.as_ref().is_none_or(|(b, _)| s < *b) {
            best = Some((s, p.clone()));
        }
        Ok(())
    })?;
    if let Some((_, p)) = best {
        *params = p;
    }
    Ok((history, scores))
}

fn run_epochs<T, P, F, E>(
    params: &mut P,
    n: usize,
    settings: &TrainSettings,
    mut sample_grad: F,
    mut after_epoch: E,
) -> Result<Vec<f64>>
where
    T: Real,
    P: Params<T> + Clone,
    F: FnMut(&P, usize, &mut P) -> Result<f64>,
    E: FnMut(&P) -> Result<()>,
{
    settings.validate()?;
    if settings.epochs > 0 && n == 0 {
        return Err(invalid_arg!("training set is empty"));
    }
    let mut opt = AdamW::new(settings.weight_decay);
    let sched = settings.schedule();
    let mut grads = params.clone();
    let mut history = Vec::with_capacity(settings.epochs);
    for epoch in 0..settings.epochs {
        let lr = sched.lr_at(epoch);
        let mut total = 0.0;
        for batch in epoch_order(n, settings.seed, epoch).chunks(settings.batch_size) {
            grads.zero();
            for &i in batch {
                total += sample_grad(params, i, &mut grads)?;
            }
            scale(&mut grads, 1.0 / batch.len() as f64);
            opt.step(params, &grads, lr);
            if !params.all_finite() {
                return Err(Error::InvalidData(format!(
                    "non-finite parameters after epoch {epoch} step"
                )));
            }
        }
        let mean = total / n as f64;
        log::debug!("epoch {epoch}: lr {lr:.2e} loss {mean:.6}");
        history.push(mean);
        after_epoch(params)?;
    }
    Ok(history)
}
