//! Policy network: entity-sequence encoder, recurrent memory, actor and
//! critic heads.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Dense, GruCache, GruCell, LstmCache, LstmCell};
use super::loss::softmax;
use super::params::{LayoutBuilder, ParamEntry, ParameterSet};
use crate::arena::Action;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    BiGru,
    MeanPool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryKind {
    Lstm,
    Gru,
}

const MAX_WIDTH: usize = 1024;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSpec {
    pub encoder: EncoderKind,
    pub entity_dim: usize,
    pub encoder_hidden: usize,
    /// Inputs appended after the encoder (previous action one-hots).
    pub extra_dim: usize,
    pub memory: MemoryKind,
    pub memory_hidden: usize,
    pub actor_out: usize,
    pub critic_out: usize,
}

impl NetSpec {
    pub fn new(entity_dim: usize, extra_dim: usize, encoder_hidden: usize, memory_hidden: usize) -> Self {
        NetSpec {
            encoder: EncoderKind::BiGru,
            entity_dim,
            encoder_hidden,
            extra_dim,
            memory: MemoryKind::Lstm,
            memory_hidden,
            actor_out: Action::COUNT,
            critic_out: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.actor_out != Action::COUNT || self.critic_out != 1 {
            return Err(Error::Config("actor head must have 7 outputs and critic head 1".into()));
        }
        for (name, v) in [
            ("entity_dim", self.entity_dim),
            ("encoder_hidden", self.encoder_hidden),
            ("memory_hidden", self.memory_hidden),
        ] {
            if v == 0 || v > MAX_WIDTH {
                return Err(Error::Config(format!("net.{name} must lie in 1..={MAX_WIDTH}")));
            }
        }
        if self.extra_dim > MAX_WIDTH {
            return Err(Error::Config(format!("net.extra_dim must be at most {MAX_WIDTH}")));
        }
        Ok(())
    }

    pub fn encoder_out(&self) -> usize {
        2 * self.encoder_hidden
    }
}

#[derive(Debug, Clone)]
enum Encoder {
    BiGru { fwd: GruCell, bwd: GruCell },
    MeanPool { proj: Dense },
}

#[derive(Debug, Clone)]
enum EncoderCache {
    BiGru { fwd: Vec<GruCache>, bwd: Vec<GruCache> },
    MeanPool { inputs: Vec<Vec<f64>>, acts: Vec<Vec<f64>> },
}

#[derive(Debug, Clone)]
enum Memory {
    Lstm(LstmCell),
    Gru(GruCell),
}

#[derive(Debug, Clone)]
enum MemoryCache {
    Lstm(LstmCache),
    Gru(GruCache),
}

/// Recurrent state carried between steps. `c` is empty for a GRU memory.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyInput {
    pub entities: Vec<Vec<f64>>,
    pub extra: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutput {
    pub logits: [f64; Action::COUNT],
    pub probs: [f64; Action::COUNT],
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct StepCache {
    enc: EncoderCache,
    enc_out: Vec<f64>,
    mem: MemoryCache,
    h_out: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PolicyNet {
    spec: NetSpec,
    encoder: Encoder,
    memory: Memory,
    actor: Dense,
    critic: Dense,
    layout: Vec<ParamEntry>,
    builder: Arc<LayoutBuilder>,
}

impl PolicyNet {
    pub fn new(spec: NetSpec) -> Result<Self> {
        spec.validate()?;
        let mut lb = LayoutBuilder::default();
        let encoder = match spec.encoder {
            EncoderKind::BiGru => Encoder::BiGru {
                fwd: GruCell::declare(&mut lb, "encoder.fwd", spec.entity_dim, spec.encoder_hidden),
                bwd: GruCell::declare(&mut lb, "encoder.bwd", spec.entity_dim, spec.encoder_hidden),
            },
            EncoderKind::MeanPool => Encoder::MeanPool {
                proj: Dense::declare(
                    &mut lb,
                    "encoder.proj",
                    spec.entity_dim,
                    spec.encoder_out(),
                    1.0 / (spec.entity_dim as f64).sqrt(),
                ),
            },
        };
        let mem_in = spec.encoder_out() + spec.extra_dim;
        let memory = match spec.memory {
            MemoryKind::Lstm => Memory::Lstm(LstmCell::declare(&mut lb, "memory.lstm", mem_in, spec.memory_hidden)),
            MemoryKind::Gru => Memory::Gru(GruCell::declare(&mut lb, "memory.gru", mem_in, spec.memory_hidden)),
        };
        let actor = Dense::declare(&mut lb, "actor", spec.memory_hidden, Action::COUNT, 0.01);
        let critic = Dense::declare(
            &mut lb,
            "critic",
            spec.memory_hidden,
            1,
            1.0 / (spec.memory_hidden as f64).sqrt(),
        );
        Ok(PolicyNet {
            spec,
            encoder,
            memory,
            actor,
            critic,
            layout: lb.entries().to_vec(),
            builder: Arc::new(lb),
        })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn layout(&self) -> &[ParamEntry] {
        &self.layout
    }

    pub fn init_params(&self, seed: u64) -> ParameterSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.builder.build(&mut rng)
    }

    pub fn zero_params(&self) -> ParameterSet {
        self.builder.zeros()
    }

    /// Checks that a parameter set was built for this architecture.
    pub fn check_params(&self, params: &ParameterSet) -> Result<()> {
        if params.entries() != self.layout.as_slice() {
            return Err(Error::InvalidInput("parameter layout does not match the network".into()));
        }
        Ok(())
    }

    pub fn initial_memory(&self) -> MemoryState {
        let h = vec![0.0; self.spec.memory_hidden];
        let c = match self.spec.memory {
            MemoryKind::Lstm => vec![0.0; self.spec.memory_hidden],
            MemoryKind::Gru => Vec::new(),
        };
        MemoryState { h, c }
    }

    fn encode(&self, p: &[f64], entities: &[Vec<f64>]) -> (Vec<f64>, EncoderCache) {
        let hd = self.spec.encoder_hidden;
        match &self.encoder {
            Encoder::BiGru { fwd, bwd } => {
                let mut out = vec![0.0; 2 * hd];
                let mut fc = Vec::with_capacity(entities.len());
                let mut bc = Vec::with_capacity(entities.len());
                let mut h = vec![0.0; hd];
                for e in entities {
                    let (nh, c) = fwd.forward(p, e, &h);
                    fc.push(c);
                    h = nh;
                }
                out[..hd].copy_from_slice(&h);
                let mut h = vec![0.0; hd];
                for e in entities.iter().rev() {
                    let (nh, c) = bwd.forward(p, e, &h);
                    bc.push(c);
                    h = nh;
                }
                out[hd..].copy_from_slice(&h);
                (out, EncoderCache::BiGru { fwd: fc, bwd: bc })
            }
            Encoder::MeanPool { proj } => {
                let mut out = vec![0.0; 2 * hd];
                let mut acts = Vec::with_capacity(entities.len());
                let scale = 1.0 / entities.len().max(1) as f64;
                for e in entities {
                    let a: Vec<f64> = proj.forward(p, e).into_iter().map(f64::tanh).collect();
                    for (o, v) in out.iter_mut().zip(&a) {
                        *o += v * scale;
                    }
                    acts.push(a);
                }
                (
                    out,
                    EncoderCache::MeanPool {
                        inputs: entities.to_vec(),
                        acts,
                    },
                )
            }
        }
    }

    fn encode_backward(&self, p: &[f64], g: &mut [f64], cache: &EncoderCache, d_out: &[f64]) {
        let hd = self.spec.encoder_hidden;
        match (&self.encoder, cache) {
            (Encoder::BiGru { fwd, bwd }, EncoderCache::BiGru { fwd: fc, bwd: bc }) => {
                let mut dh = d_out[..hd].to_vec();
                for c in fc.iter().rev() {
                    dh = fwd.backward(p, g, c, &dh, false).1;
                }
                let mut dh = d_out[hd..].to_vec();
                for c in bc.iter().rev() {
                    dh = bwd.backward(p, g, c, &dh, false).1;
                }
            }
            (Encoder::MeanPool { proj }, EncoderCache::MeanPool { inputs, acts }) => {
                let scale = 1.0 / inputs.len().max(1) as f64;
                for (x, a) in inputs.iter().zip(acts) {
                    let dy: Vec<f64> = a.iter().zip(d_out).map(|(a, d)| d * scale * (1.0 - a * a)).collect();
                    proj.backward(p, g, x, &dy, None);
                }
            }
            _ => unreachable!("cache kind matches encoder kind"),
        }
    }

    /// Encoder output alone: `2 × encoder_hidden` values, zero for an empty
    /// sequence.
    pub fn encoder_forward(&self, params: &ParameterSet, entities: &[Vec<f64>]) -> Vec<f64> {
        self.encode(&params.values, entities).0
    }

    pub fn forward(&self, params: &ParameterSet, input: &PolicyInput, mem: &MemoryState) -> (StepOutput, MemoryState) {
        let (out, next, _) = self.forward_cached(params, input, mem);
        (out, next)
    }

    pub fn forward_cached(
        &self,
        params: &ParameterSet,
        input: &PolicyInput,
        mem: &MemoryState,
    ) -> (StepOutput, MemoryState, StepCache) {
        let p = &params.values;
        assert_eq!(input.extra.len(), self.spec.extra_dim, "extra input width");
        for e in &input.entities {
            assert_eq!(e.len(), self.spec.entity_dim, "entity feature width");
        }
        let (enc_out, enc) = self.encode(p, &input.entities);
        let mut mem_in = enc_out.clone();
        mem_in.extend_from_slice(&input.extra);
        let (next, mem_cache) = match &self.memory {
            Memory::Lstm(cell) => {
                let (h, c, cache) = cell.forward(p, &mem_in, &mem.h, &mem.c);
                (MemoryState { h, c }, MemoryCache::Lstm(cache))
            }
            Memory::Gru(cell) => {
                let (h, cache) = cell.forward(p, &mem_in, &mem.h);
                (MemoryState { h, c: Vec::new() }, MemoryCache::Gru(cache))
            }
        };
        let logits_v = self.actor.forward(p, &next.h);
        let mut logits = [0.0; Action::COUNT];
        logits.copy_from_slice(&logits_v);
        let value = self.critic.forward(p, &next.h)[0];
        let out = StepOutput {
            logits,
            probs: softmax(&logits),
            value,
        };
        let cache = StepCache {
            enc,
            enc_out,
            mem: mem_cache,
            h_out: next.h.clone(),
        };
        (out, next, cache)
    }

    /// Backpropagation through time over a window of cached steps. The
    /// memory state entering the first step is treated as a constant.
    pub fn backward_window(
        &self,
        params: &ParameterSet,
        grads: &mut [f64],
        caches: &[StepCache],
        d_logits: &[[f64; Action::COUNT]],
        d_values: &[f64],
    ) {
        assert_eq!(caches.len(), d_logits.len());
        assert_eq!(caches.len(), d_values.len());
        assert_eq!(grads.len(), params.len());
        let p = &params.values;
        let hm = self.spec.memory_hidden;
        let mut dh_next = vec![0.0; hm];
        let mut dc_next = vec![0.0; hm];
        for t in (0..caches.len()).rev() {
            let cache = &caches[t];
            let mut dh = dh_next.clone();
            self.actor.backward(p, grads, &cache.h_out, &d_logits[t], Some(&mut dh));
            self.critic.backward(p, grads, &cache.h_out, &[d_values[t]], Some(&mut dh));
            let d_mem_in = match (&self.memory, &cache.mem) {
                (Memory::Lstm(cell), MemoryCache::Lstm(c)) => {
                    let (dx, dhp, dcp) = cell.backward(p, grads, c, &dh, &dc_next);
                    dh_next = dhp;
                    dc_next = dcp;
                    dx
                }
                (Memory::Gru(cell), MemoryCache::Gru(c)) => {
                    let (dx, dhp) = cell.backward(p, grads, c, &dh, true);
                    dh_next = dhp;
                    dx
                }
                _ => unreachable!("cache kind matches memory kind"),
            };
            let enc_w = cache.enc_out.len();
            if !cache.enc.is_empty() {
                self.encode_backward(p, grads, &cache.enc, &d_mem_in[..enc_w]);
            }
        }
    }
}

impl EncoderCache {
    fn is_empty(&self) -> bool {
        match self {
            EncoderCache::BiGru { fwd, .. } => fwd.is_empty(),
            EncoderCache::MeanPool { inputs, .. } => inputs.is_empty(),
        }
    }
}
