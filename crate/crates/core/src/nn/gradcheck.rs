//! Finite-difference checks for every layer kind and both training losses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::{actor_critic_step, kl_divergence, kl_grad, softmax};
use super::*;
use crate::arena::Action;

const H: f64 = 1e-5;

/// Largest `|a − n| / max(|a|, |n|, 1e-6)` over all parameters.
fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

fn numeric_grad(params: &ParameterSet, f: impl Fn(&ParameterSet) -> f64) -> Vec<f64> {
    let mut p = params.clone();
    (0..params.len())
        .map(|i| {
            let orig = p.values[i];
            p.values[i] = orig + H;
            let up = f(&p);
            p.values[i] = orig - H;
            let down = f(&p);
            p.values[i] = orig;
            (up - down) / (2.0 * H)
        })
        .collect()
}

fn random_inputs(spec: &NetSpec, rng: &mut ChaCha8Rng, lens: &[usize]) -> Vec<PolicyInput> {
    lens.iter()
        .map(|&n| PolicyInput {
            entities: (0..n)
                .map(|_| (0..spec.entity_dim).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect(),
            extra: (0..spec.extra_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
        })
        .collect()
}

struct Probe {
    net: PolicyNet,
    params: ParameterSet,
    inputs: Vec<PolicyInput>,
    start: MemoryState,
}

impl Probe {
    fn new(spec: NetSpec, seed: u64, lens: &[usize]) -> Self {
        let net = PolicyNet::new(spec).unwrap();
        assert!(net.layout().iter().map(|e| e.len()).sum::<usize>() <= 500, "probe nets stay small");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = net.init_params(seed);
        // larger weights so every nonlinearity is exercised away from zero
        params.values.iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
        let inputs = random_inputs(net.spec(), &mut rng, lens);
        let mut start = net.initial_memory();
        start.h.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        start.c.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        Probe {
            net,
            params,
            inputs,
            start,
        }
    }

    fn unroll(&self, params: &ParameterSet) -> Vec<(StepOutput, StepCache)> {
        let mut mem = self.start.clone();
        self.inputs
            .iter()
            .map(|inp| {
                let (o, next, c) = self.net.forward_cached(params, inp, &mem);
                mem = next;
                (o, c)
            })
            .collect()
    }

    /// Checks a loss built from per-step (logits, value) pieces.
    fn check<L, G>(&self, loss: L, grad: G) -> f64
    where
        L: Fn(usize, &StepOutput) -> f64,
        G: Fn(usize, &StepOutput) -> ([f64; Action::COUNT], f64),
    {
        let steps = self.unroll(&self.params);
        let mut g = self.params.zeros_like();
        let (dl, dv): (Vec<_>, Vec<_>) = steps.iter().enumerate().map(|(t, (o, _))| grad(t, o)).unzip();
        let caches: Vec<StepCache> = steps.into_iter().map(|(_, c)| c).collect();
        self.net.backward_window(&self.params, &mut g, &caches, &dl, &dv);
        let num = numeric_grad(&self.params, |p| {
            self.unroll(p).iter().enumerate().map(|(t, (o, _))| loss(t, o)).sum()
        });
        max_rel_error(&g, &num)
    }

    fn linear_check(&self, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let coefs: Vec<([f64; Action::COUNT], f64)> = self
            .inputs
            .iter()
            .map(|_| {
                let mut c = [0.0; Action::COUNT];
                c.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
                (c, rng.random_range(-1.0..1.0))
            })
            .collect();
        self.check(
            |t, o| o.logits.iter().zip(&coefs[t].0).map(|(a, b)| a * b).sum::<f64>() + coefs[t].1 * o.value,
            |t, _| coefs[t],
        )
    }
}

fn small(encoder: EncoderKind, memory: MemoryKind) -> NetSpec {
    NetSpec {
        encoder,
        memory,
        ..NetSpec::new(5, 3, 3, 4)
    }
}

#[test]
fn bigru_lstm_matches_finite_differences() {
    for seed in 0..3 {
        let p = Probe::new(small(EncoderKind::BiGru, MemoryKind::Lstm), seed, &[2, 0, 3, 1]);
        let err = p.linear_check(seed);
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn gru_memory_matches_finite_differences() {
    let p = Probe::new(small(EncoderKind::BiGru, MemoryKind::Gru), 4, &[1, 3, 2]);
    assert!(p.linear_check(4) < 1e-4);
}

#[test]
fn mean_pool_matches_finite_differences() {
    let p = Probe::new(small(EncoderKind::MeanPool, MemoryKind::Lstm), 5, &[3, 0, 2]);
    assert!(p.linear_check(5) < 1e-4);
}

#[test]
fn actor_critic_loss_matches_finite_differences() {
    let p = Probe::new(small(EncoderKind::BiGru, MemoryKind::Lstm), 6, &[2, 1, 3]);
    let acts = [Action::FORWARD, Action::TURN_RIGHT, Action::NOOP];
    let adv = [0.4, -1.2, 0.7];
    let ret = [0.3, 0.9, -0.5];
    let w = 0.03;
    let err = p.check(
        |t, o| actor_critic_step(&o.logits, acts[t], adv[t], ret[t], o.value, w).0.total(w),
        |t, o| {
            let (_, d, dv) = actor_critic_step(&o.logits, acts[t], adv[t], ret[t], o.value, w);
            (d, dv)
        },
    );
    assert!(err < 1e-4, "{err}");
}

#[test]
fn kl_loss_matches_finite_differences() {
    let p = Probe::new(small(EncoderKind::BiGru, MemoryKind::Lstm), 7, &[1, 2, 2]);
    let teacher = [
        softmax(&[0.2, 1.0, -0.3, 0.0, 0.4, 0.1, -1.0]),
        [0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
        [0.1, 0.0, 0.3, 0.2, 0.1, 0.2, 0.1],
    ];
    let err = p.check(
        |t, o| kl_divergence(&teacher[t], &o.logits),
        |t, o| (kl_grad(&teacher[t], &o.logits), 0.0),
    );
    assert!(err < 1e-4, "{err}");
}

#[test]
fn constant_loss_has_zero_gradient() {
    let p = Probe::new(small(EncoderKind::BiGru, MemoryKind::Lstm), 8, &[2, 2]);
    let steps = p.unroll(&p.params);
    let caches: Vec<StepCache> = steps.into_iter().map(|(_, c)| c).collect();
    let mut g = p.params.zeros_like();
    p.net
        .backward_window(&p.params, &mut g, &caches, &[[0.0; Action::COUNT]; 2], &[0.0; 2]);
    assert!(g.iter().all(|&v| v == 0.0));
}

#[test]
fn encoder_width_is_twice_hidden() {
    let net = PolicyNet::new(NetSpec::new(5, 0, 64, 128)).unwrap();
    let params = net.init_params(1);
    for n in [0, 1, 4] {
        let seq = vec![vec![0.1, 0.9, 0.1, 0.3, 0.2]; n];
        assert_eq!(net.encoder_forward(&params, &seq).len(), 128);
    }
}

#[test]
fn zero_params_give_zero_encoding_and_uniform_policy() {
    let net = PolicyNet::new(NetSpec::new(5, 7, 8, 16)).unwrap();
    let params = net.zero_params();
    let seq = vec![vec![0.5, 1.0, 0.0, -1.0, 0.0]; 3];
    assert!(net.encoder_forward(&params, &seq).iter().all(|&v| v == 0.0));
    let input = PolicyInput {
        entities: seq,
        extra: Action::TURN_LEFT.one_hot().to_vec(),
    };
    let (out, _) = net.forward(&params, &input, &net.initial_memory());
    for p in out.probs {
        assert!((p - 1.0 / 7.0).abs() < 1e-12);
    }
    assert_eq!(out.value, 0.0);
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Independent single-step GRU from h = 0, reading weights by name.
fn gru_from_zero(params: &ParameterSet, prefix: &str, x: &[f64], hid: usize) -> Vec<f64> {
    let wi = params.get(&format!("{prefix}.w_i")).unwrap();
    let bi = params.get(&format!("{prefix}.b_i")).unwrap();
    let bh = params.get(&format!("{prefix}.b_h")).unwrap();
    let inp = x.len();
    let row = |r: usize| -> f64 { (0..inp).map(|j| wi[r * inp + j] * x[j]).sum::<f64>() + bi[r] };
    (0..hid)
        .map(|k| {
            let r = sig(row(k) + bh[k]);
            let z = sig(row(hid + k) + bh[hid + k]);
            let n = (row(2 * hid + k) + r * bh[2 * hid + k]).tanh();
            (1.0 - z) * n
        })
        .collect()
}

#[test]
fn single_element_encoding_matches_hand_rolled_gru() {
    let net = PolicyNet::new(NetSpec::new(5, 0, 6, 4)).unwrap();
    let params = net.init_params(3);
    let x = vec![0.4, 0.8, 0.6, -0.6, 0.8];
    let got = net.encoder_forward(&params, &[x.clone()]);
    let mut want = gru_from_zero(&params, "encoder.fwd", &x, 6);
    want.extend(gru_from_zero(&params, "encoder.bwd", &x, 6));
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn forward_is_deterministic_and_normalized() {
    let net = PolicyNet::new(NetSpec::new(5, 7, 8, 16)).unwrap();
    let params = net.init_params(21);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for inp in random_inputs(net.spec(), &mut rng, &[0, 1, 2, 5]) {
        let m = net.initial_memory();
        let a = net.forward(&params, &inp, &m);
        let b = net.forward(&params, &inp, &m);
        assert_eq!(a, b);
        assert!((a.0.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(a.0.probs.iter().all(|&p| p > 0.0));
        assert!(a.0.value.is_finite());
    }
}
