//! Clipped-surrogate PPO objective built on the autodiff graph.

use cholec_nn::{Graph, Real, Var};

use crate::config::PpoConfig;
use crate::error::TrainError;

/// Per-row training targets of one minibatch.
#[derive(Debug, Clone, Copy)]
pub struct LossTargets<'a> {
    pub actions: &'a [usize],
    pub old_log_probs: &'a [f64],
    /// Normalized advantages.
    pub advantages: &'a [f64],
    pub returns: &'a [f64],
}

/// Graph nodes of the scalar loss terms.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    /// `weight · (policy + c_v·value − c_e·entropy)`
    pub total: Var,
    pub policy: Var,
    pub value: Var,
    pub entropy: Var,
    pub ratio: Var,
}

/// Builds the loss from network output rows `[logits..., value]`.
pub fn ppo_loss<T: Real>(
    g: &mut Graph<'_, T>,
    output: Var,
    n_actions: usize,
    targets: &LossTargets<'_>,
    cfg: &PpoConfig,
    weight: f64,
) -> Result<LossVars, TrainError> {
    let (rows, cols) = g.shape(output);
    if cols != n_actions + 1 {
        return Err(TrainError::Shape(format!("output has {cols} columns, expected {}", n_actions + 1)));
    }
    let t = targets;
    if t.actions.len() != rows || t.old_log_probs.len() != rows || t.advantages.len() != rows || t.returns.len() != rows {
        return Err(TrainError::Shape(format!("targets do not cover {rows} rows")));
    }
    if let Some(a) = t.actions.iter().find(|&&a| a >= n_actions) {
        return Err(TrainError::Shape(format!("action {a} out of range")));
    }
    let col = |v: &[f64]| v.iter().map(|&x| T::of(x)).collect::<Vec<T>>();
    let logits = g.slice_cols(output, 0, n_actions);
    let values = g.slice_cols(output, n_actions, 1);
    let logp_all = g.log_softmax(logits);
    let logp = g.pick(logp_all, t.actions.to_vec());
    let old = g.input(col(t.old_log_probs), rows, 1);
    let log_ratio = g.sub(logp, old);
    let ratio = g.exp(log_ratio);
    let adv = g.input(col(t.advantages), rows, 1);
    let surr1 = g.mul(ratio, adv);
    let eps = cfg.clip_ratio;
    let clipped = g.clamp(ratio, T::of(1.0 - eps), T::of(1.0 + eps));
    let surr2 = g.mul(clipped, adv);
    let surr = g.minimum(surr1, surr2);
    let surr_mean = g.mean(surr);
    let policy = g.scale(surr_mean, -T::one());

    let ret = g.input(col(t.returns), rows, 1);
    let err = g.sub(values, ret);
    let sq = g.square(err);
    let value = g.mean(sq);

    let p = g.exp(logp_all);
    let plogp = g.mul(p, logp_all);
    let plogp_sum = g.sum(plogp);
    let entropy = g.scale(plogp_sum, T::of(-1.0 / rows as f64));

    let v_term = g.scale(value, T::of(cfg.value_coef));
    let e_term = g.scale(entropy, T::of(cfg.entropy_coef));
    let pv = g.add(policy, v_term);
    let unweighted = g.sub(pv, e_term);
    let total = g.scale(unweighted, T::of(weight));
    Ok(LossVars { total, policy, value, entropy, ratio })
}

/// Fraction of rows whose probability ratio left `[1-ε, 1+ε]`.
pub fn clip_fraction<T: Real>(ratios: &[T], eps: f64) -> f64 {
    if ratios.is_empty() {
        return 0.0;
    }
    ratios.iter().filter(|r| (r.f64() - 1.0).abs() > eps).count() as f64 / ratios.len() as f64
}
