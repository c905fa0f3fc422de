//! Categorical action distribution over logits.

use rand::Rng;

use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionSample {
    pub action: usize,
    pub log_prob: f64,
    pub entropy: f64,
}

/// Numerically stable log-softmax in 64 bits.
pub fn log_softmax<T: Real>(logits: &[T]) -> Vec<f64> {
    let m = logits.iter().map(|x| x.f64()).fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|x| (x.f64() - m).exp()).sum::<f64>().ln();
    logits.iter().map(|x| x.f64() - lse).collect()
}

pub fn entropy_of(log_probs: &[f64]) -> f64 {
    -log_probs.iter().map(|&lp| if lp > f64::NEG_INFINITY { lp.exp() * lp } else { 0.0 }).sum::<f64>()
}

/// Draws an action from `softmax(logits)`; consumes exactly one uniform draw.
pub fn sample_action<T: Real, R: Rng + ?Sized>(logits: &[T], rng: &mut R) -> ActionSample {
    let lp = log_softmax(logits);
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    let mut action = None;
    for (i, l) in lp.iter().enumerate() {
        cum += l.exp();
        if u < cum {
            action = Some(i);
            break;
        }
    }
    // rounding can leave the cumulative sum just below 1
    let action = action.unwrap_or_else(|| lp.iter().rposition(|l| l.exp() > 0.0).unwrap_or(0));
    ActionSample { action, log_prob: lp[action], entropy: entropy_of(&lp) }
}

/// Most probable action; ties go to the lowest id.
pub fn greedy_action<T: Real>(logits: &[T]) -> ActionSample {
    let lp = log_softmax(logits);
    let mut action = 0;
    for (i, l) in lp.iter().enumerate() {
        if *l > lp[action] {
            action = i;
        }
    }
    ActionSample { action, log_prob: lp[action], entropy: entropy_of(&lp) }
}
