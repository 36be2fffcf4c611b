//! Model hyperparameters and deterministic parameter initialization for
//! the policy (encoder + decoder) and the critic.

use std::fmt;

use crate::nn::tensor::{Parameters, Tensor};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    /// Hidden width of node embeddings.
    pub d_h: usize,
    /// Attention heads per encoder layer; must divide `d_h`.
    pub heads: usize,
    /// Encoder layers.
    pub layers: usize,
    /// Feed-forward hidden width.
    pub d_ff: usize,
    /// Distance-bucket count for relative-position scores. The last bucket
    /// is reserved for pairs involving the global node.
    pub d_sparse: usize,
    /// Stacked recurrent cells in the decoder.
    pub l_dec: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { d_h: 128, heads: 8, layers: 3, d_ff: 512, d_sparse: 16, l_dec: 1 }
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "d_h={} heads={} layers={} d_ff={} d_sparse={} l_dec={}",
            self.d_h, self.heads, self.layers, self.d_ff, self.d_sparse, self.l_dec
        )
    }
}

impl ModelConfig {
    pub fn d_k(&self) -> usize {
        self.d_h / self.heads
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.d_h == 0 || self.heads == 0 || self.layers == 0 || self.l_dec == 0 {
            return Err("model dimensions must be positive".into());
        }
        if self.d_h % self.heads != 0 {
            return Err(format!("heads {} must divide d_h {}", self.heads, self.d_h));
        }
        if self.d_sparse < 2 {
            return Err("d_sparse needs at least one distance bucket plus the global one".into());
        }
        Ok(())
    }

    /// Parses the `Display` form, e.g. from a checkpoint config line.
    pub fn parse(s: &str) -> Result<Self, String> {
        let mut cfg = ModelConfig::default();
        for part in s.split_whitespace() {
            let (key, value) = part.split_once('=').ok_or_else(|| format!("bad field {part:?}"))?;
            let value: usize = value.parse().map_err(|_| format!("bad value in {part:?}"))?;
            match key {
                "d_h" => cfg.d_h = value,
                "heads" => cfg.heads = value,
                "layers" => cfg.layers = value,
                "d_ff" => cfg.d_ff = value,
                "d_sparse" => cfg.d_sparse = value,
                "l_dec" => cfg.l_dec = value,
                other => return Err(format!("unknown field {other:?}")),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

enum Init {
    /// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
    Fan(usize),
    Zero,
    One,
    Const(f64),
}

fn spec_push(specs: &mut Vec<(String, usize, usize, Init)>, name: String, r: usize, c: usize, i: Init) {
    specs.push((name, r, c, i));
}

fn encoder_specs(prefix: &str, cfg: &ModelConfig, specs: &mut Vec<(String, usize, usize, Init)>) {
    let d_h = cfg.d_h;
    let d_k = cfg.d_k();
    spec_push(specs, format!("{prefix}embed.w"), 3, d_h, Init::Fan(3));
    spec_push(specs, format!("{prefix}embed.b"), 1, d_h, Init::Zero);
    spec_push(specs, format!("{prefix}global_init"), 1, d_h, Init::Fan(d_h));
    for l in 0..cfg.layers {
        for h in 0..cfg.heads {
            for w in ["wq", "wk", "wv"] {
                spec_push(specs, format!("{prefix}l{l}.h{h}.{w}"), d_h, d_k, Init::Fan(d_h));
            }
        }
        spec_push(
            specs,
            format!("{prefix}l{l}.relpos"),
            cfg.heads * cfg.d_sparse,
            d_k,
            Init::Fan(d_k),
        );
        spec_push(specs, format!("{prefix}l{l}.wo"), d_h, d_h, Init::Fan(d_h));
        spec_push(specs, format!("{prefix}l{l}.norm1.gamma"), 1, d_h, Init::One);
        spec_push(specs, format!("{prefix}l{l}.norm1.beta"), 1, d_h, Init::Zero);
        spec_push(specs, format!("{prefix}l{l}.ffn.w1"), d_h, cfg.d_ff, Init::Fan(d_h));
        spec_push(specs, format!("{prefix}l{l}.ffn.b1"), 1, cfg.d_ff, Init::Zero);
        spec_push(specs, format!("{prefix}l{l}.ffn.w2"), cfg.d_ff, d_h, Init::Fan(cfg.d_ff));
        spec_push(specs, format!("{prefix}l{l}.ffn.b2"), 1, d_h, Init::Zero);
        spec_push(specs, format!("{prefix}l{l}.norm2.gamma"), 1, d_h, Init::One);
        spec_push(specs, format!("{prefix}l{l}.norm2.beta"), 1, d_h, Init::Zero);
    }
}

fn decoder_specs(cfg: &ModelConfig, specs: &mut Vec<(String, usize, usize, Init)>) {
    let d_h = cfg.d_h;
    spec_push(specs, "dec.agent.truck".into(), 1, d_h, Init::Fan(d_h));
    spec_push(specs, "dec.agent.drone".into(), 1, d_h, Init::Fan(d_h));
    for l in 0..cfg.l_dec {
        // Minimal gated cell: one forget gate and one candidate map over
        // the concatenated [hidden; input].
        spec_push(specs, format!("dec.mgu{l}.wf"), 2 * d_h, d_h, Init::Fan(2 * d_h));
        spec_push(specs, format!("dec.mgu{l}.bf"), 1, d_h, Init::Zero);
        spec_push(specs, format!("dec.mgu{l}.wh"), 2 * d_h, d_h, Init::Fan(2 * d_h));
        spec_push(specs, format!("dec.mgu{l}.bh"), 1, d_h, Init::Zero);
    }
    spec_push(specs, "dec.att.we".into(), d_h, d_h, Init::Fan(d_h));
    spec_push(specs, "dec.att.wd".into(), 4, d_h, Init::Fan(4));
    spec_push(specs, "dec.att.wq".into(), d_h, d_h, Init::Fan(d_h));
    spec_push(specs, "dec.att.v".into(), d_h, 1, Init::Fan(d_h));
    // Logit clip scale, learnable, starts at 10.
    spec_push(specs, "dec.att.c".into(), 1, 1, Init::Const(10.0));
}

fn materialize(specs: Vec<(String, usize, usize, Init)>, seed: u64) -> Parameters {
    let mut rng = Rng::new(seed);
    let mut params = Parameters::new();
    for (name, rows, cols, init) in specs {
        let mut t = Tensor::zeros(rows, cols);
        match init {
            Init::Fan(fan_in) => {
                let bound = 1.0 / (fan_in as f64).sqrt();
                for v in &mut t.data {
                    *v = (2.0 * rng.next_f64() - 1.0) * bound;
                }
            }
            Init::Zero => {}
            Init::One => t.data.fill(1.0),
            Init::Const(c) => t.data.fill(c),
        }
        params.insert(name, t);
    }
    params
}

/// Policy parameters: encoder (prefix "enc.") plus decoder ("dec.").
pub fn init_actor_params(cfg: &ModelConfig, seed: u64) -> Parameters {
    let mut specs = Vec::new();
    encoder_specs("enc.", cfg, &mut specs);
    decoder_specs(cfg, &mut specs);
    materialize(specs, seed)
}

/// Critic parameters: its own encoder ("critic.enc.") plus a two-layer
/// ReLU head mapping the pooled embedding to a scalar value.
pub fn init_critic_params(cfg: &ModelConfig, seed: u64) -> Parameters {
    let mut specs = Vec::new();
    encoder_specs("critic.enc.", cfg, &mut specs);
    let d_h = cfg.d_h;
    spec_push(&mut specs, "critic.head.w1".into(), d_h, d_h, Init::Fan(d_h));
    spec_push(&mut specs, "critic.head.b1".into(), 1, d_h, Init::Zero);
    spec_push(&mut specs, "critic.head.w2".into(), d_h, 1, Init::Fan(d_h));
    spec_push(&mut specs, "critic.head.b2".into(), 1, 1, Init::Zero);
    materialize(specs, seed)
}

/// Trainable scalars in one minimal gated cell with input width `d_in` and
/// hidden width `d_h`: two gates, each a [d_h + d_in, d_h] map plus bias.
pub fn mgu_param_count(d_h: usize, d_in: usize) -> usize {
    2 * ((d_h + d_in) * d_h + d_h)
}

/// Same-shape LSTM cell: four gates.
pub fn lstm_param_count(d_h: usize, d_in: usize) -> usize {
    4 * ((d_h + d_in) * d_h + d_h)
}

/// Same-shape GRU cell: three gates.
pub fn gru_param_count(d_h: usize, d_in: usize) -> usize {
    3 * ((d_h + d_in) * d_h + d_h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_roundtrips_through_display() {
        let cfg = ModelConfig { d_h: 32, heads: 4, layers: 2, d_ff: 64, d_sparse: 8, l_dec: 2 };
        let parsed = ModelConfig::parse(&cfg.to_string()).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn config_rejects_bad_head_split() {
        let cfg = ModelConfig { d_h: 30, heads: 8, ..ModelConfig::default() };
        assert!(cfg.validate().is_err());
        assert!(ModelConfig::parse("d_h=30 heads=8").is_err());
    }

    #[test]
    fn init_is_seed_deterministic() {
        let cfg = ModelConfig { d_h: 16, heads: 2, layers: 1, d_ff: 32, d_sparse: 4, l_dec: 1 };
        assert_eq!(init_actor_params(&cfg, 9), init_actor_params(&cfg, 9));
        assert_ne!(init_actor_params(&cfg, 9), init_actor_params(&cfg, 10));
    }

    #[test]
    fn actor_store_has_expected_tensors() {
        let cfg = ModelConfig { d_h: 16, heads: 2, layers: 2, d_ff: 32, d_sparse: 4, l_dec: 1 };
        let p = init_actor_params(&cfg, 1);
        assert_eq!(p["enc.embed.w"].rows, 3);
        assert_eq!(p["enc.l1.h1.wv"].cols, cfg.d_k());
        assert_eq!(p["enc.l0.relpos"].rows, cfg.heads * cfg.d_sparse);
        assert_eq!(p["dec.att.c"].item(), 10.0);
        assert_eq!(p["dec.mgu0.wf"].rows, 2 * cfg.d_h);
        assert!(p.keys().all(|k| k.starts_with("enc.") || k.starts_with("dec.")));
    }

    #[test]
    fn gate_counts_follow_the_two_four_three_ratio() {
        for (d_h, d_in) in [(128, 128), (32, 32), (64, 16)] {
            let mgu = mgu_param_count(d_h, d_in);
            assert_eq!(2 * mgu, lstm_param_count(d_h, d_in));
            assert_eq!(3 * mgu, 2 * gru_param_count(d_h, d_in));
        }
    }

    #[test]
    fn critic_store_is_disjoint_from_actor_names() {
        let cfg = ModelConfig { d_h: 16, heads: 2, layers: 1, d_ff: 32, d_sparse: 4, l_dec: 1 };
        let a = init_actor_params(&cfg, 3);
        let c = init_critic_params(&cfg, 4);
        assert!(a.keys().all(|k| !c.contains_key(k)));
        assert!(c.keys().all(|k| k.starts_with("critic.")));
    }
}
