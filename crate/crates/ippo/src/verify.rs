//! Finite-difference check of the full policy-value network under the PPO loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cholec_core::env::FEATURE_LEN;
use cholec_nn::dist::log_softmax;
use cholec_nn::gradcheck::{grad_check_with_floor, GradCheckReport};
use cholec_nn::graph::Graph;
use cholec_nn::net::one_hot;
use cholec_nn::{Architecture, PolicyValueNet};

use crate::config::PpoConfig;
use crate::error::TrainError;
use crate::loss::{ppo_loss, LossTargets};

pub const GRADCHECK_EPS: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Gradients smaller than this are compared in absolute terms.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

/// Runs the check on a small feature-mode net in `f64` over a synthetic
/// batch of `steps × lanes` samples. Old log-probabilities sit close to the
/// current ones so that no sample lands on a clipped segment.
pub fn policy_gradcheck(seed: u64) -> Result<GradCheckReport, TrainError> {
    const STEPS: usize = 3;
    const LANES: usize = 2;
    let arch = Architecture::features_small(FEATURE_LEN);
    let na = arch.n_actions;
    let net = PolicyValueNet::<f64>::new(arch, "gripper", seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = STEPS * LANES;
    let obs: Vec<f64> = (0..rows * FEATURE_LEN).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let prev: Vec<Option<usize>> = (0..rows).map(|r| if r < LANES { None } else { Some(rng.gen_range(0..na)) }).collect();
    let prev_oh = one_hot::<f64>(&prev, na)?;
    let actions: Vec<usize> = (0..rows).map(|_| rng.gen_range(0..na)).collect();
    let advantages: Vec<f64> = (0..rows).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let returns: Vec<f64> = (0..rows).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let forward = |g: &mut Graph<'_, f64>| -> Result<_, cholec_nn::NnError> {
        let o = g.input(obs.clone(), rows, FEATURE_LEN);
        let a = g.input(prev_oh.clone(), rows, na);
        let h0 = g.input(vec![0.0; LANES * net.arch.lstm], LANES, net.arch.lstm);
        let c0 = g.input(vec![0.0; LANES * net.arch.lstm], LANES, net.arch.lstm);
        net.forward_sequence(g, o, a, h0, c0, None, STEPS, LANES)
    };
    let current: Vec<f64> = {
        let mut g = Graph::new(&net.params);
        let out = forward(&mut g)?.output;
        let v = g.value(out);
        (0..rows).map(|r| log_softmax(&v[r * (na + 1)..r * (na + 1) + na])[actions[r]]).collect()
    };
    let old: Vec<f64> = current.iter().map(|lp| lp + rng.gen_range(-0.02..0.02)).collect();
    let cfg = PpoConfig::default();
    let report = grad_check_with_floor(
        &net.params,
        |g| {
            let out = forward(g)?.output;
            let t = LossTargets { actions: &actions, old_log_probs: &old, advantages: &advantages, returns: &returns };
            ppo_loss(g, out, na, &t, &cfg, 1.0).map(|l| l.total).map_err(|e| cholec_nn::NnError::Contract(e.to_string()))
        },
        GRADCHECK_EPS,
        GRADCHECK_FLOOR,
    )?;
    Ok(report)
}
