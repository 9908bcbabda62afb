//! The sequence encoder: a stack of self-attention layers, each a multi-head
//! attention sublayer and a feed-forward sublayer with residual connections
//! and layer normalization. All per-layer states are retained because the
//! pair encoder reads every layer's input.

use rand_chacha::ChaCha8Rng;

use crate::config::{FfnActivation, ModelConfig};
use crate::params::{xavier, Bindings, ParamStore};
use crate::rng::SeedRng;
use crate::tensor::{Graph, NodeId, Real, Result, Tensor};

/// Additive score for masked key positions. Finite on purpose: exp underflows
/// to exactly zero, so masked keys get exactly zero attention weight while
/// every forward value stays finite.
pub const MASK_BIAS: Real = -1e30;

pub fn init_params(cfg: &ModelConfig, store: &mut ParamStore, seed: &SeedRng) {
    let d = cfg.hidden_dim;
    let dff = cfg.ffn_inner();
    for l in 0..cfg.n_layers {
        for w in ["wq", "wk", "wv", "wo"] {
            let name = format!("seq.l{l}.attn.{w}");
            store.insert(&name, xavier(d, d, &mut seed.split(&name)));
        }
        store.insert(&format!("seq.l{l}.attn.ln_g"), crate::params::ones_row(d));
        store.insert(&format!("seq.l{l}.attn.ln_b"), crate::params::zeros_row(d));
        let w1 = format!("seq.l{l}.ffn.w1");
        store.insert(&w1, xavier(d, dff, &mut seed.split(&w1)));
        store.insert(&format!("seq.l{l}.ffn.b1"), crate::params::zeros_row(dff));
        let w2 = format!("seq.l{l}.ffn.w2");
        store.insert(&w2, xavier(dff, d, &mut seed.split(&w2)));
        store.insert(&format!("seq.l{l}.ffn.b2"), crate::params::zeros_row(d));
        store.insert(&format!("seq.l{l}.ffn.ln_g"), crate::params::ones_row(d));
        store.insert(&format!("seq.l{l}.ffn.ln_b"), crate::params::zeros_row(d));
    }
}

/// `scores + bias` matrix with `MASK_BIAS` on masked key columns.
fn mask_bias_matrix(n: usize, mask: &[bool]) -> Tensor {
    let mut data = vec![0.0; n * n];
    for (j, &keep) in mask.iter().enumerate() {
        if !keep {
            for i in 0..n {
                data[i * n + j] = MASK_BIAS;
            }
        }
    }
    Tensor::matrix(n, n, data)
}

/// Multi-head attention sublayer: per head, queries/keys/values are column
/// slices of the shared d x d maps; masked keys are pushed to -inf before the
/// row softmax; heads are concatenated, projected, dropped out, and fused
/// with the residual by layer norm. Returns the sublayer output and the
/// per-head attention matrices (for tests and inspection).
#[allow(clippy::too_many_arguments)]
pub fn multi_head_attention(
    g: &mut Graph,
    binds: &Bindings,
    cfg: &ModelConfig,
    layer: usize,
    x: NodeId,
    mask: &[bool],
    training: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(NodeId, Vec<NodeId>)> {
    let d = cfg.hidden_dim;
    let heads = cfg.n_heads;
    let dh = d / heads;
    let n = g.value(x).shape()[0];

    let q = g.matmul(x, binds.get(&format!("seq.l{layer}.attn.wq")))?;
    let k = g.matmul(x, binds.get(&format!("seq.l{layer}.attn.wk")))?;
    let v = g.matmul(x, binds.get(&format!("seq.l{layer}.attn.wv")))?;

    let bias = (!mask.iter().all(|&m| m)).then(|| g.constant(mask_bias_matrix(n, mask)));

    let mut head_outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * dh, dh)?;
        let kh = g.slice_cols(k, h * dh, dh)?;
        let vh = g.slice_cols(v, h * dh, dh)?;
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let mut scores = g.affine(scores, 1.0 / (dh as Real).sqrt(), 0.0);
        if let Some(b) = bias {
            scores = g.add(scores, b)?;
        }
        let attn = g.softmax(scores, 1)?;
        weights.push(attn);
        head_outs.push(g.matmul(attn, vh)?);
    }
    let merged = g.concat(&head_outs, 1)?;
    let r = g.matmul(merged, binds.get(&format!("seq.l{layer}.attn.wo")))?;
    let r = g.dropout(r, cfg.dropout, training, rng)?;
    let sum = g.add(r, x)?;
    let a = g.layer_norm(
        sum,
        binds.get(&format!("seq.l{layer}.attn.ln_g")),
        binds.get(&format!("seq.l{layer}.attn.ln_b")),
        cfg.layer_norm_eps,
    )?;
    Ok((a, weights))
}

/// Feed-forward sublayer: two linear maps with an optional ReLU between them,
/// dropout, residual, layer norm.
pub fn feed_forward(
    g: &mut Graph,
    binds: &Bindings,
    cfg: &ModelConfig,
    layer: usize,
    a: NodeId,
    training: bool,
    rng: &mut ChaCha8Rng,
) -> Result<NodeId> {
    let inner = g.matmul(a, binds.get(&format!("seq.l{layer}.ffn.w1")))?;
    let inner = g.add_bias(inner, binds.get(&format!("seq.l{layer}.ffn.b1")))?;
    let inner = match cfg.ffn_activation {
        FfnActivation::Relu => g.relu(inner),
        FfnActivation::None => inner,
    };
    let e = g.matmul(inner, binds.get(&format!("seq.l{layer}.ffn.w2")))?;
    let e = g.add_bias(e, binds.get(&format!("seq.l{layer}.ffn.b2")))?;
    let e = g.dropout(e, cfg.dropout, training, rng)?;
    let sum = g.add(e, a)?;
    g.layer_norm(
        sum,
        binds.get(&format!("seq.l{layer}.ffn.ln_g")),
        binds.get(&format!("seq.l{layer}.ffn.ln_b")),
        cfg.layer_norm_eps,
    )
}

/// One full encoder layer.
#[allow(clippy::too_many_arguments)]
pub fn encode_layer(
    g: &mut Graph,
    binds: &Bindings,
    cfg: &ModelConfig,
    layer: usize,
    input: NodeId,
    mask: &[bool],
    training: bool,
    rng: &mut ChaCha8Rng,
) -> Result<NodeId> {
    let (a, _) = multi_head_attention(g, binds, cfg, layer, input, mask, training, rng)?;
    feed_forward(g, binds, cfg, layer, a, training, rng)
}

/// Run the whole stack; layer l consumes layer l-1's state (layer 0 consumes
/// `x`). Returns every layer's output, length `n_layers`.
pub fn encode_sequence(
    g: &mut Graph,
    binds: &Bindings,
    cfg: &ModelConfig,
    x: NodeId,
    mask: &[bool],
    training: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<NodeId>> {
    let mut states = Vec::with_capacity(cfg.n_layers);
    let mut cur = x;
    for l in 0..cfg.n_layers {
        cur = encode_layer(g, binds, cfg, l, cur, mask, training, rng)?;
        states.push(cur);
    }
    Ok(states)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;

    fn cfg(layers: usize) -> ModelConfig {
        ModelConfig {
            hidden_dim: 8,
            n_heads: 2,
            n_layers: layers,
            dropout: 0.0,
            max_len: 16,
            ..ModelConfig::default()
        }
    }

    fn store_for(cfg: &ModelConfig, seed: u64) -> ParamStore {
        let mut store = ParamStore::new();
        init_params(cfg, &mut store, &SeedRng::new(seed));
        store
    }

    fn rng() -> ChaCha8Rng {
        SeedRng::new(0).split("test")
    }

    #[test]
    fn single_token_attention_weight_is_one() {
        let cfg = cfg(1);
        let store = store_for(&cfg, 1);
        let mut g = Graph::new();
        let binds = store.bind_all(&mut g);
        let x = g.constant(Tensor::matrix(1, 8, (0..8).map(|i| i as Real * 0.1).collect()));
        let (_, weights) =
            multi_head_attention(&mut g, &binds, &cfg, 0, x, &[true], false, &mut rng()).unwrap();
        for w in weights {
            assert_eq!(g.value(w).data(), &[1.0]);
        }
    }

    #[test]
    fn identical_rows_give_uniform_attention() {
        let cfg = cfg(1);
        let store = store_for(&cfg, 2);
        let mut g = Graph::new();
        let binds = store.bind_all(&mut g);
        let row: Vec<Real> = (0..8).map(|i| 0.3 - 0.07 * i as Real).collect();
        let n = 4;
        let data: Vec<Real> = (0..n).flat_map(|_| row.clone()).collect();
        let x = g.constant(Tensor::matrix(n, 8, data));
        let (_, weights) =
            multi_head_attention(&mut g, &binds, &cfg, 0, x, &[true; 4], false, &mut rng()).unwrap();
        for w in weights {
            for v in g.value(w).data() {
                assert!((v - 1.0 / n as Real).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_rows_sum_to_one_under_masking() {
        let cfg = cfg(1);
        let store = store_for(&cfg, 3);
        let mut g = Graph::new();
        let binds = store.bind_all(&mut g);
        let n = 5;
        let data: Vec<Real> = (0..n * 8).map(|i| ((i * 37 % 11) as Real - 5.0) * 0.2).collect();
        let x = g.constant(Tensor::matrix(n, 8, data));
        let mask = [true, true, true, false, false];
        let (_, weights) =
            multi_head_attention(&mut g, &binds, &cfg, 0, x, &mask, false, &mut rng()).unwrap();
        for w in weights {
            for row in 0..n {
                let vals = &g.value(w).data()[row * n..(row + 1) * n];
                let sum: Real = vals.iter().sum();
                assert!((sum - 1.0).abs() <= 1e-9, "row sum {sum}");
                assert_eq!(vals[3], 0.0, "masked key weight is exactly zero");
                assert_eq!(vals[4], 0.0);
            }
        }
    }

    #[test]
    fn zero_ffn_weights_reduce_to_layer_norm_of_input() {
        let cfg = cfg(1);
        let mut store = store_for(&cfg, 4);
        for name in ["seq.l0.ffn.w1", "seq.l0.ffn.w2"] {
            let p = store.get_mut(name);
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let mut g = Graph::new();
        let binds = store.bind_all(&mut g);
        let a = g.constant(Tensor::matrix(2, 8, (0..16).map(|i| i as Real * 0.3 - 2.0).collect()));
        let s = feed_forward(&mut g, &binds, &cfg, 0, a, false, &mut rng()).unwrap();
        let gain = binds.get("seq.l0.ffn.ln_g");
        let bias = binds.get("seq.l0.ffn.ln_b");
        let want = g.layer_norm(a, gain, bias, cfg.layer_norm_eps).unwrap();
        assert_eq!(g.value(s).data(), g.value(want).data());
    }

    #[test]
    fn identity_ffn_reproduces_input_up_to_normalization() {
        // W1 = W2 = I, biases 0, non-negative input: e = a, S = LN(2a) = LN(a)
        let mut cfg = cfg(1);
        cfg.ffn_inner_dim = Some(8);
        let mut store = ParamStore::new();
        init_params(&cfg, &mut store, &SeedRng::new(12));
        for name in ["seq.l0.ffn.w1", "seq.l0.ffn.w2"] {
            let w = store.get_mut(name).value.data_mut();
            w.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..8 {
                w[k * 8 + k] = 1.0;
            }
        }
        let mut g = Graph::new();
        let binds = store.bind_all(&mut g);
        let a = g.constant(Tensor::matrix(2, 8, (0..16).map(|i| 0.1 + i as Real * 0.2).collect()));
        let s = feed_forward(&mut g, &binds, &cfg, 0, a, false, &mut rng()).unwrap();
        let gain = binds.get("seq.l0.ffn.ln_g");
        let bias = binds.get("seq.l0.ffn.ln_b");
        let want = g.layer_norm(a, gain, bias, cfg.layer_norm_eps).unwrap();
        // scale invariance of layer norm is exact only as eps -> 0
        for (got, want) in g.value(s).data().iter().zip(g.value(want).data()) {
            assert!((got - want).abs() < 1e-4, "{got} vs {want}");
        }
    }

    #[test]
    fn stack_depth_matches_layer_count() {
        for layers in [1, 3] {
            let cfg = cfg(layers);
            let store = store_for(&cfg, 5);
            let mut g = Graph::new();
            let binds = store.bind_all(&mut g);
            let x = g.constant(Tensor::matrix(4, 8, vec![0.1; 32]));
            let states =
                encode_sequence(&mut g, &binds, &cfg, x, &[true; 4], false, &mut rng()).unwrap();
            assert_eq!(states.len(), layers);
            for s in states {
                assert_eq!(g.value(s).shape(), &[4, 8]);
            }
        }
    }

    #[test]
    fn padding_invariance_bit_for_bit() {
        // appending PAD tokens never changes outputs at real positions
        let cfg = cfg(2);
        let store = store_for(&cfg, 6);
        let n = 3;
        let real: Vec<Real> = (0..n * 8).map(|i| ((i * 13 % 7) as Real - 3.0) * 0.25).collect();

        let run = |rows: usize, mask: &[bool], data: Vec<Real>| {
            let mut g = Graph::new();
            let binds = store.bind_all(&mut g);
            let x = g.constant(Tensor::matrix(rows, 8, data));
            let states = encode_sequence(&mut g, &binds, &cfg, x, mask, false, &mut rng()).unwrap();
            let last = *states.last().unwrap();
            g.value(last).data()[..n * 8].to_vec()
        };

        let unpadded = run(n, &[true; 3], real.clone());
        let mut padded_data = real;
        padded_data.extend(vec![0.37; 2 * 8]); // junk pad rows
        let padded = run(n + 2, &[true, true, true, false, false], padded_data);
        assert_eq!(unpadded, padded);
    }

    #[test]
    fn encoder_layer_gradients() {
        let cfg = cfg(1);
        let mut store = store_for(&cfg, 7);
        store.insert("x", xavier(5, 8, &mut SeedRng::new(8).split("x")));
        let report = grad_check(&mut store, 1e-5, 1e-4, |s, g| {
            let binds = s.bind_all(g);
            let x = binds.get("x");
            let out = encode_layer(g, &binds, &cfg, 0, x, &[true; 5], false, &mut rng())?;
            let sq = g.mul(out, out)?;
            Ok((g.sum(sq), binds))
        })
        .unwrap();
        assert!(report.pass, "{report}");
    }

    #[test]
    fn ffn_activation_flag_changes_output() {
        let cfg_relu = cfg(1);
        let mut cfg_none = cfg(1);
        cfg_none.ffn_activation = FfnActivation::None;
        let store = store_for(&cfg_relu, 9);
        let data: Vec<Real> = (0..16).map(|i| (i as Real - 8.0) * 0.4).collect();
        let run = |cfg: &ModelConfig| {
            let mut g = Graph::new();
            let binds = store.bind_all(&mut g);
            let a = g.constant(Tensor::matrix(2, 8, data.clone()));
            let s = feed_forward(&mut g, &binds, cfg, 0, a, false, &mut rng()).unwrap();
            g.value(s).data().to_vec()
        };
        assert_ne!(run(&cfg_relu), run(&cfg_none));
    }
}
