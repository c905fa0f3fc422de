//! Generalized advantage estimation and TD(λ) value targets for one
//! environment lane.

use crate::error::TrainError;

/// Time-ordered data of one lane segment.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LaneSegment {
    pub rewards: Vec<f64>,
    /// `V(s_t)` under the behavior policy.
    pub values: Vec<f64>,
    /// The episode ended in a true terminal after step `t`.
    pub terminals: Vec<bool>,
    /// The episode was cut by the time limit after step `t`.
    pub truncations: Vec<bool>,
    /// `V` of the final state of a truncated episode; read only where truncated.
    pub truncation_values: Vec<f64>,
    /// `V(s_T)` of the state following the segment.
    pub bootstrap_value: f64,
}

impl LaneSegment {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    fn check(&self) -> Result<(), TrainError> {
        let n = self.rewards.len();
        if self.values.len() != n || self.terminals.len() != n || self.truncations.len() != n || self.truncation_values.len() != n {
            return Err(TrainError::Shape(format!(
                "lane arrays differ in length: rewards {n}, values {}, terminals {}, truncations {}, truncation values {}",
                self.values.len(),
                self.terminals.len(),
                self.truncations.len(),
                self.truncation_values.len()
            )));
        }
        Ok(())
    }

    /// `V(s_{t+1})` as seen from step `t`.
    pub fn next_value(&self, t: usize) -> f64 {
        if self.truncations[t] {
            self.truncation_values[t]
        } else if t + 1 < self.len() {
            self.values[t + 1]
        } else {
            self.bootstrap_value
        }
    }

    /// One-step TD residual; terminals bootstrap zero.
    pub fn delta(&self, t: usize, gamma: f64) -> f64 {
        let cont = if self.terminals[t] { 0.0 } else { 1.0 };
        self.rewards[t] + gamma * self.next_value(t) * cont - self.values[t]
    }
}

/// `A_t = δ_t + γλ·A_{t+1}`, with the recursion cut wherever an episode
/// ends (terminal or truncated).
pub fn compute_gae(seg: &LaneSegment, gamma: f64, lambda: f64) -> Result<Vec<f64>, TrainError> {
    seg.check()?;
    let mut adv = vec![0.0; seg.len()];
    let mut next = 0.0;
    for t in (0..seg.len()).rev() {
        let cont = if seg.terminals[t] || seg.truncations[t] { 0.0 } else { 1.0 };
        next = seg.delta(t, gamma) + gamma * lambda * cont * next;
        adv[t] = next;
    }
    Ok(adv)
}

/// TD(λ) targets `A_t + V(s_t)`.
pub fn value_targets(advantages: &[f64], values: &[f64]) -> Result<Vec<f64>, TrainError> {
    if advantages.len() != values.len() {
        return Err(TrainError::Shape("advantages and values differ in length".into()));
    }
    Ok(advantages.iter().zip(values).map(|(a, v)| a + v).collect())
}

/// Rescales to zero mean and unit (population) standard deviation.
/// Returns the statistics used.
pub fn normalize(x: &mut [f64]) -> (f64, f64) {
    if x.is_empty() {
        return (0.0, 0.0);
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let std = (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    let scale = 1.0 / std.max(1e-8);
    x.iter_mut().for_each(|v| *v = (*v - mean) * scale);
    (mean, std)
}
