use crate::arena::Action;

const N: usize = Action::COUNT;

pub fn softmax(z: &[f64; N]) -> [f64; N] {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; N];
    let mut s = 0.0;
    for (o, v) in out.iter_mut().zip(z) {
        *o = (v - m).exp();
        s += *o;
    }
    out.iter_mut().for_each(|o| *o /= s);
    out
}

pub fn log_softmax(z: &[f64; N]) -> [f64; N] {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    let mut out = [0.0; N];
    for (o, v) in out.iter_mut().zip(z) {
        *o = v - lse;
    }
    out
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(p: &[f64; N]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

/// `KL(p ‖ softmax(z))`, skipping zero-probability teacher entries.
pub fn kl_divergence(p: &[f64; N], logits: &[f64; N]) -> f64 {
    let lq = log_softmax(logits);
    p.iter()
        .zip(&lq)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(pi, lqi)| pi * (pi.ln() - lqi))
        .sum()
}

/// Gradient of `KL(p ‖ softmax(z))` with respect to `z`.
pub fn kl_grad(p: &[f64; N], logits: &[f64; N]) -> [f64; N] {
    let q = softmax(logits);
    let mut g = [0.0; N];
    for k in 0..N {
        g[k] = q[k] - p[k];
    }
    g
}

/// Per-step actor-critic loss pieces (unweighted).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AcTerms {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
}

impl AcTerms {
    pub fn total(&self, entropy_w: f64) -> f64 {
        self.policy + self.value - entropy_w * self.entropy
    }
}

/// `−log π(a)·A + ½(R − V)² − β·H(π)` and its gradients with respect to the
/// logits and the value. The advantage is held constant.
pub fn actor_critic_step(
    logits: &[f64; N],
    action: Action,
    advantage: f64,
    ret: f64,
    value: f64,
    entropy_w: f64,
) -> (AcTerms, [f64; N], f64) {
    let lp = log_softmax(logits);
    let p = softmax(logits);
    let h = entropy(&p);
    let a = action.index();
    let terms = AcTerms {
        policy: -lp[a] * advantage,
        value: 0.5 * (ret - value).powi(2),
        entropy: h,
    };
    let mut d = [0.0; N];
    for k in 0..N {
        let pg = advantage * (p[k] - if k == a { 1.0 } else { 0.0 });
        // d(-H)/dz_k = p_k (ln p_k + H)
        let lpk = if p[k] > 0.0 { lp[k] } else { 0.0 };
        let ent = entropy_w * p[k] * (lpk + h);
        d[k] = pg + ent;
    }
    (terms, d, value - ret)
}
