//! Baseline value network.
//!
//! The critic owns a separate copy of the graph-attention encoder (its
//! parameters live under the `critic.enc.` prefix) and reduces the node
//! embeddings to a single cost estimate with a mean pool and a two-layer
//! head. It is trained against realized episode costs and serves as the
//! policy-gradient baseline.

use crate::encoder::encode;
use crate::instance::Instance;
use crate::model::ModelConfig;
use crate::nn::graph::{Graph, NnError, Var};
use crate::nn::tensor::Parameters;

/// Predicted episode cost for `inst` as a differentiable 1x1 node.
pub fn critic_value(
    g: &mut Graph,
    params: &Parameters,
    inst: &Instance,
    cfg: &ModelConfig,
) -> Result<Var, NnError> {
    let (e_static, _) = encode(g, params, "critic.enc.", inst, cfg)?;
    let pooled = g.mean_rows(e_static, 0, inst.n());
    let w1 = g.param(params, "critic.head.w1")?;
    let b1 = g.param(params, "critic.head.b1")?;
    let w2 = g.param(params, "critic.head.w2")?;
    let b2 = g.param(params, "critic.head.b2")?;
    let h = g.matmul(pooled, w1);
    let h = g.add_row(h, b1);
    let h = g.relu(h);
    let out = g.matmul(h, w2);
    Ok(g.add(out, b2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{generate_instances, Family};
    use crate::model::init_critic_params;
    use crate::nn::graph::fd_check;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig { d_h: 8, heads: 2, layers: 1, d_ff: 16, d_sparse: 4, l_dec: 1 }
    }

    fn instance(n: usize, seed: u64) -> Instance {
        generate_instances(n, 1, seed, Family::CornerDepot, 1.0, 2.0)
            .unwrap()
            .instances
            .remove(0)
    }

    #[test]
    fn value_is_scalar_and_deterministic() {
        let cfg = tiny_cfg();
        let inst = instance(6, 3);
        let params = init_critic_params(&cfg, 12);
        let mut g = Graph::new();
        let v = critic_value(&mut g, &params, &inst, &cfg).unwrap();
        let t = g.value(v);
        assert_eq!((t.rows, t.cols), (1, 1));
        let mut g2 = Graph::new();
        let v2 = critic_value(&mut g2, &params, &inst, &cfg).unwrap();
        assert_eq!(t.item(), g2.value(v2).item());
    }

    #[test]
    fn squared_error_gradients_pass_finite_differences() {
        let cfg = tiny_cfg();
        let inst = instance(5, 8);
        let params = init_critic_params(&cfg, 5);
        fd_check(&params, 1e-5, |p, g| {
            let v = critic_value(g, p, &inst, &cfg).unwrap();
            let target = g.input(crate::nn::tensor::Tensor::scalar(3.5));
            let diff = g.sub(target, v);
            g.mul(diff, diff)
        });
    }

    #[test]
    fn different_instances_get_different_values() {
        let cfg = tiny_cfg();
        let params = init_critic_params(&cfg, 12);
        let a = instance(6, 3);
        let b = instance(6, 4);
        let mut g = Graph::new();
        let va = critic_value(&mut g, &params, &a, &cfg).unwrap();
        let vb = critic_value(&mut g, &params, &b, &cfg).unwrap();
        assert_ne!(g.value(va).item(), g.value(vb).item());
    }
}
