use cholec_nn::dist::{greedy_action, log_softmax, sample_action};
use cholec_nn::graph::Graph;
use cholec_nn::net::{one_hot, split_output, Architecture, InputSpec};
use cholec_nn::{ParamSet, PolicyValueNet, RecurrentState};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const OBS: usize = 26;

fn tensor<'a>(p: &'a ParamSet<f64>, name: &str) -> &'a [f64] {
    &p.tensors.iter().find(|t| t.name == name).unwrap().data
}

/// `x·W + b` with `W` stored `[in, out]`.
fn dense(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let out = b.len();
    (0..out).map(|j| b[j] + x.iter().enumerate().map(|(i, xi)| xi * w[i * out + j]).sum::<f64>()).collect()
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Scalar re-implementation of one network step for a single lane.
fn reference_step(net: &PolicyValueNet<f64>, obs: &[f64], prev: Option<usize>, h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let p = &net.params;
    let mut x = obs.to_vec();
    for k in 0..net.arch.pre_lstm.len() {
        x = dense(&x, tensor(p, &format!("pre{k}.w")), tensor(p, &format!("pre{k}.b")));
        x.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    let mut a = vec![0.0; 9];
    if let Some(a0) = prev {
        a[a0] = 1.0;
    }
    x.extend(a);
    let hn = net.arch.lstm;
    let xg = dense(&x, tensor(p, "lstm.wx"), tensor(p, "lstm.b"));
    let hg = dense(h, tensor(p, "lstm.wh"), &vec![0.0; 4 * hn]);
    let gate = |k: usize, j: usize| xg[k * hn + j] + hg[k * hn + j];
    let mut c2 = vec![0.0; hn];
    let mut h2 = vec![0.0; hn];
    for j in 0..hn {
        c2[j] = sig(gate(1, j)) * c[j] + sig(gate(0, j)) * gate(2, j).tanh();
        h2[j] = sig(gate(3, j)) * c2[j].tanh();
    }
    let out = dense(&h2, tensor(p, "head.w"), tensor(p, "head.b"));
    (out, h2, c2)
}

fn random_obs(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

#[test]
fn parameter_counts_follow_the_formula() {
    // fc 26→128, fc 128→128, LSTM 64 on 128+9 inputs, head 64→10
    let feat = Architecture::features(OBS);
    let expected = (26 * 128 + 128) + (128 * 128 + 128) + (4 * 64 * 137 + 4 * 64 * 64 + 4 * 64) + (64 * 10 + 10);
    assert_eq!(expected, 72_330);
    assert_eq!(feat.parameter_count().unwrap(), expected);
    assert_eq!(PolicyValueNet::<f32>::new(feat, "g", 0).unwrap().parameter_count(), expected);

    let small = Architecture::features_small(OBS);
    let n = PolicyValueNet::<f64>::new(small, "g", 0).unwrap().parameter_count();
    assert!(n <= 5_000, "{n}");

    // 64×64 input: spatial 64→32→16→8→4→2
    let img = Architecture::image(64, 64);
    let conv: usize = [(3, 32), (32, 64), (64, 128), (128, 256), (256, 512)].iter().map(|(i, o)| o * i * 16 + o).sum();
    let expected = conv + (2048 * 1024 + 1024) + (4 * 512 * (1024 + 9) + 4 * 512 * 512 + 4 * 512) + (512 * 1024 + 1024) + (1024 * 10 + 10);
    assert_eq!(img.parameter_count().unwrap(), expected);
    assert!(Architecture::image(8, 8).validate().is_err());
}

#[test]
fn zero_parameters_give_a_uniform_policy() {
    let mut net = PolicyValueNet::<f64>::new(Architecture::features(OBS), "g", 3).unwrap();
    net.params.tensors.iter_mut().for_each(|t| t.data.iter_mut().for_each(|x| *x = 0.0));
    let obs = random_obs(&mut ChaCha8Rng::seed_from_u64(0), OBS);
    let out = net.step(&obs, &[None], &net.zero_state(1)).unwrap();
    assert!(out.logits.iter().all(|&l| l == out.logits[0]));
    let s = greedy_action(&out.logits);
    assert!((s.entropy - 9f64.ln()).abs() < 1e-12);
}

#[test]
fn step_is_deterministic_and_keeps_state_shapes() {
    let net = PolicyValueNet::<f32>::new(Architecture::features(OBS), "c", 1).unwrap();
    let obs: Vec<f32> = random_obs(&mut ChaCha8Rng::seed_from_u64(1), 3 * OBS).iter().map(|&x| x as f32).collect();
    let s0 = net.zero_state(3);
    let a = net.step(&obs, &[None, Some(2), Some(8)], &s0).unwrap();
    let b = net.step(&obs, &[None, Some(2), Some(8)], &s0).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.state.h.len(), s0.h.len());
    assert_eq!(a.state.c.len(), s0.c.len());
    assert!(a.logits.iter().all(|x| x.is_finite()));
    assert!(net.step(&obs[..OBS], &[None, None, None], &s0).is_err());
}

#[test]
fn carried_steps_equal_unrolled_sequence_and_reference() {
    let net = PolicyValueNet::<f64>::new(Architecture::features(OBS), "g", 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (steps, batch) = (5, 2);
    let obs = random_obs(&mut rng, steps * batch * OBS);
    let actions: Vec<Option<usize>> = (0..steps * batch).map(|k| if k < batch { None } else { Some(k % 9) }).collect();

    // carried single steps
    let mut state = net.zero_state(batch);
    let mut carried = Vec::new();
    for t in 0..steps {
        let out = net.step(&obs[t * batch * OBS..(t + 1) * batch * OBS], &actions[t * batch..(t + 1) * batch], &state).unwrap();
        carried.push(out.clone());
        state = out.state;
    }

    // one unrolled pass
    let mut g = Graph::new(&net.params);
    let o = g.input(obs.clone(), steps * batch, OBS);
    let a = g.input(one_hot(&actions, 9).unwrap(), steps * batch, 9);
    let h0 = g.input(vec![0.0; batch * 64], batch, 64);
    let c0 = g.input(vec![0.0; batch * 64], batch, 64);
    let seq = net.forward_sequence(&mut g, o, a, h0, c0, None, steps, batch).unwrap();
    let (logits, values) = split_output(g.value(seq.output), 9);

    // scalar reference, lane by lane
    for b in 0..batch {
        let (mut h, mut c) = (vec![0.0; 64], vec![0.0; 64]);
        for t in 0..steps {
            let row = t * batch + b;
            let (out, h2, c2) = reference_step(&net, &obs[row * OBS..(row + 1) * OBS], actions[row], &h, &c);
            h = h2;
            c = c2;
            for j in 0..9 {
                assert!((logits[row * 9 + j] - out[j]).abs() < 1e-12);
                assert!((carried[t].logits[b * 9 + j] - out[j]).abs() < 1e-12);
            }
            assert!((values[row] - out[9]).abs() < 1e-12);
            assert!((carried[t].values[b] - out[9]).abs() < 1e-12);
        }
        assert_eq!(&g.value(seq.h)[b * 64..(b + 1) * 64], state.lane(b).0);
    }
}

#[test]
fn reset_mask_restarts_a_lane() {
    let net = PolicyValueNet::<f64>::new(Architecture::features_small(OBS), "g", 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let obs = random_obs(&mut rng, 3 * OBS);
    let acts = vec![None, Some(1), None];
    let mut g = Graph::new(&net.params);
    let o = g.input(obs.clone(), 3, OBS);
    let a = g.input(one_hot(&acts, 9).unwrap(), 3, 9);
    let h0 = g.input(random_obs(&mut rng, 16), 1, 16);
    let c0 = g.input(random_obs(&mut rng, 16), 1, 16);
    let keep = vec![vec![1.0], vec![1.0], vec![0.0]];
    let seq = net.forward_sequence(&mut g, o, a, h0, c0, Some(&keep), 3, 1).unwrap();
    let fresh = net.step(&obs[2 * OBS..], &[None], &net.zero_state(1)).unwrap();
    let (logits, _) = split_output(g.value(seq.output), 9);
    assert_eq!(&logits[18..27], &fresh.logits[..]);
}

#[test]
fn agents_do_not_share_parameters() {
    let a = PolicyValueNet::<f32>::new(Architecture::features(OBS), "gripper", 1).unwrap();
    let b = PolicyValueNet::<f32>::new(Architecture::features(OBS), "cauter", 2).unwrap();
    assert_ne!(a.params, b.params);
}

#[test]
fn recurrent_weights_are_orthogonal_blocks() {
    let net = PolicyValueNet::<f64>::new(Architecture::features(OBS), "g", 4).unwrap();
    let wh = tensor(&net.params, "lstm.wh");
    let h = 64;
    for blk in 0..4 {
        for i in 0..h {
            for j in 0..h {
                let dot: f64 = (0..h).map(|r| wh[r * 4 * h + blk * h + i] * wh[r * 4 * h + blk * h + j]).sum();
                assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn image_network_forward_shapes() {
    let arch = Architecture::image(64, 64);
    assert_eq!(arch.input, InputSpec::Image { channels: 3, height: 64, width: 64 });
    let net = PolicyValueNet::<f32>::new(arch, "g", 0).unwrap();
    let obs = vec![0.5f32; 2 * 3 * 64 * 64];
    let out = net.step(&obs, &[None, Some(3)], &net.zero_state(2)).unwrap();
    assert_eq!(out.logits.len(), 18);
    assert_eq!(out.values.len(), 2);
    assert!(out.logits.iter().chain(&out.values).all(|x| x.is_finite()));
}

#[test]
fn sampling_edge_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let s = sample_action(&[0.0f64; 9], &mut rng);
    assert!((s.entropy - 9f64.ln()).abs() < 1e-12);
    let mut peaked = [0.0f64; 9];
    peaked[4] = 1000.0;
    for _ in 0..1000 {
        let s = sample_action(&peaked, &mut rng);
        assert_eq!(s.action, 4);
        assert!(s.entropy.abs() < 1e-12 && s.log_prob.abs() < 1e-12);
    }
}

#[test]
fn sample_frequencies_match_softmax() {
    let logits = [0.3f64, -1.0, 2.0, 0.0, 0.5, -0.2, 1.1, -2.0, 0.7];
    let probs: Vec<f64> = log_softmax(&logits).iter().map(|l| l.exp()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut counts = [0usize; 9];
    let n = 100_000;
    for _ in 0..n {
        counts[sample_action(&logits, &mut rng).action] += 1;
    }
    for k in 0..9 {
        assert!((counts[k] as f64 / n as f64 - probs[k]).abs() < 0.01, "{counts:?}");
    }
}

proptest! {
    #[test]
    fn log_probs_are_shift_invariant(logits in proptest::collection::vec(-20.0..20.0f64, 9), c in -100.0..100.0f64) {
        let a = log_softmax(&logits);
        let shifted: Vec<f64> = logits.iter().map(|x| x + c).collect();
        let b = log_softmax(&shifted);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn entropy_is_bounded(logits in proptest::collection::vec(-50.0..50.0f64, 9), seed in 0u64..1000) {
        let s = sample_action(&logits, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(s.entropy >= -1e-12 && s.entropy <= 9f64.ln() + 1e-12);
        prop_assert!(s.action < 9 && s.log_prob <= 0.0);
    }
}

#[test]
fn recurrent_state_lane_helpers() {
    let mut s = RecurrentState::<f32> { batch: 2, h: vec![1.0, 2.0, 3.0, 4.0], c: vec![5.0, 6.0, 7.0, 8.0] };
    let picked = s.select(&[1]);
    assert_eq!(picked.h, vec![3.0, 4.0]);
    s.reset_lane(0);
    assert_eq!(s.h, vec![0.0, 0.0, 3.0, 4.0]);
    assert_eq!(s.c, vec![0.0, 0.0, 7.0, 8.0]);
}
