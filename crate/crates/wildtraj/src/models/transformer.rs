//! Pre-norm encoder classifier: linear embedding, sinusoidal positional
//! encoding, a learned CLS token prepended at position 0, multi-head
//! self-attention with key padding masks, and a linear head on the final
//! CLS state.

use rand_chacha::ChaCha8Rng;

use crate::engine::{Real, Tape, Tensor, Var};

use super::{Init, ModelConfig, ParamSet, ParamVars};

pub fn init_params<R: Real>(cfg: &ModelConfig, init: &mut Init) -> ParamSet<R> {
    let (f, d, ff, k) = (cfg.input_dim, cfg.embed_dim, cfg.ff_dim, cfg.num_classes);
    let mut p = ParamSet::new();
    p.entries.push(("embed.w".into(), init.uniform(vec![f, d], f)));
    p.entries.push(("embed.b".into(), init.uniform(vec![d], f)));
    p.entries.push(("cls".into(), init.zeros(vec![1, d])));
    for l in 0..cfg.layers {
        p.entries.push((format!("layer{l}.ln1.g"), init.ones(vec![d])));
        p.entries.push((format!("layer{l}.ln1.b"), init.zeros(vec![d])));
        for name in ["wq", "wk", "wv", "wo"] {
            p.entries
                .push((format!("layer{l}.attn.{name}"), init.uniform(vec![d, d], d)));
        }
        for name in ["bq", "bk", "bv", "bo"] {
            p.entries
                .push((format!("layer{l}.attn.{name}"), init.uniform(vec![d], d)));
        }
        p.entries.push((format!("layer{l}.ln2.g"), init.ones(vec![d])));
        p.entries.push((format!("layer{l}.ln2.b"), init.zeros(vec![d])));
        p.entries
            .push((format!("layer{l}.ff.w1"), init.uniform(vec![d, ff], d)));
        p.entries.push((format!("layer{l}.ff.b1"), init.uniform(vec![ff], d)));
        p.entries
            .push((format!("layer{l}.ff.w2"), init.uniform(vec![ff, d], ff)));
        p.entries.push((format!("layer{l}.ff.b2"), init.uniform(vec![d], ff)));
    }
    p.entries.push(("final_ln.g".into(), init.ones(vec![d])));
    p.entries.push(("final_ln.b".into(), init.zeros(vec![d])));
    p.entries.push(("head.w".into(), init.uniform(vec![d, k], d)));
    p.entries.push(("head.b".into(), init.uniform(vec![k], d)));
    p
}

/// Sinusoidal positional encoding rows for positions 0..t-1.
fn positional_encoding<R: Real>(t: usize, d: usize) -> Tensor<R> {
    let mut data = vec![R::zero(); t * d];
    for pos in 0..t {
        for i in 0..d {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
            let v = if i % 2 == 0 { angle.sin() } else { angle.cos() };
            data[pos * d + i] = R::from_f64(v);
        }
    }
    Tensor::new(vec![t, d], data)
}

pub fn forward<R: Real>(
    cfg: &ModelConfig,
    tape: &mut Tape<R>,
    p: &ParamVars,
    x: &Tensor<R>,
    obs_mask: &[bool],
    train: bool,
    rng: &mut ChaCha8Rng,
) -> Var {
    let (t, d, heads) = (cfg.seq_len, cfg.embed_dim, cfg.heads);
    let dk = d / heads;
    let eps = 1e-5;

    let xv = tape.constant(x.clone());
    let embed = tape.matmul(xv, p.get("embed.w"));
    let mut h = tape.add_bias(embed, p.get("embed.b"));
    let cls = p.get("cls");
    let mut cls_tok = cls;
    if cfg.use_positional_encoding {
        let pe = tape.constant(positional_encoding(t, d));
        h = tape.add(h, pe);
        // CLS sits at position 0 of the extended sequence.
        let pe0 = tape.constant(positional_encoding(1, d));
        cls_tok = tape.add(cls, pe0);
    }
    let mut tokens = tape.concat_rows(&[cls_tok, h]);

    let mut key_mask = Vec::with_capacity(t + 1);
    key_mask.push(true);
    key_mask.extend_from_slice(obs_mask);

    for l in 0..cfg.layers {
        // attention sublayer
        let a = tape.layer_norm(
            tokens,
            p.get(&format!("layer{l}.ln1.g")),
            p.get(&format!("layer{l}.ln1.b")),
            eps,
        );
        let q = tape.matmul(a, p.get(&format!("layer{l}.attn.wq")));
        let q = tape.add_bias(q, p.get(&format!("layer{l}.attn.bq")));
        let k = tape.matmul(a, p.get(&format!("layer{l}.attn.wk")));
        let k = tape.add_bias(k, p.get(&format!("layer{l}.attn.bk")));
        let v = tape.matmul(a, p.get(&format!("layer{l}.attn.wv")));
        let v = tape.add_bias(v, p.get(&format!("layer{l}.attn.bv")));
        let mut head_outs = Vec::with_capacity(heads);
        for hd in 0..heads {
            let qh = tape.col_slice(q, hd * dk, dk);
            let kh = tape.col_slice(k, hd * dk, dk);
            let vh = tape.col_slice(v, hd * dk, dk);
            let scores = tape.matmul_nt(qh, kh);
            let scores = tape.scale(scores, 1.0 / (dk as f64).sqrt());
            let probs = tape.masked_softmax(scores, &key_mask);
            head_outs.push(tape.matmul(probs, vh));
        }
        let merged = tape.concat_cols(&head_outs);
        let out = tape.matmul(merged, p.get(&format!("layer{l}.attn.wo")));
        let out = tape.add_bias(out, p.get(&format!("layer{l}.attn.bo")));
        let out = tape.dropout(out, cfg.dropout, train, rng);
        tokens = tape.add(tokens, out);

        // feed-forward sublayer
        let a = tape.layer_norm(
            tokens,
            p.get(&format!("layer{l}.ln2.g")),
            p.get(&format!("layer{l}.ln2.b")),
            eps,
        );
        let hmid = tape.matmul(a, p.get(&format!("layer{l}.ff.w1")));
        let hmid = tape.add_bias(hmid, p.get(&format!("layer{l}.ff.b1")));
        let hmid = if cfg.use_gelu {
            tape.gelu(hmid)
        } else {
            tape.relu(hmid)
        };
        let out = tape.matmul(hmid, p.get(&format!("layer{l}.ff.w2")));
        let out = tape.add_bias(out, p.get(&format!("layer{l}.ff.b2")));
        let out = tape.dropout(out, cfg.dropout, train, rng);
        tokens = tape.add(tokens, out);
    }

    let normed = tape.layer_norm(tokens, p.get("final_ln.g"), p.get("final_ln.b"), eps);
    let cls_final = tape.row(normed, 0);
    let logits = tape.matmul(cls_final, p.get("head.w"));
    tape.add_bias(logits, p.get("head.b"))
}
