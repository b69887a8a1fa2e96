//! Stacked LSTM classifier. Padded time steps are skipped entirely (the
//! recurrent state carries across gaps), so every layer processes only the
//! observed subsequence. The head reads the top layer's state at the last
//! observed step; a day with no observations yields the zero state.

use rand_chacha::ChaCha8Rng;

use crate::engine::{Real, Tape, Tensor, Var};

use super::{Init, ModelConfig, ParamSet, ParamVars};

pub fn init_params<R: Real>(cfg: &ModelConfig, init: &mut Init) -> ParamSet<R> {
    let (f, h, k) = (cfg.input_dim, cfg.hidden, cfg.num_classes);
    let mut p = ParamSet::new();
    for l in 0..cfg.layers {
        let in_dim = if l == 0 { f } else { h };
        p.entries
            .push((format!("l{l}.w_ih"), init.uniform(vec![in_dim, 4 * h], in_dim)));
        p.entries
            .push((format!("l{l}.w_hh"), init.uniform(vec![h, 4 * h], h)));
        p.entries.push((format!("l{l}.b"), init.uniform(vec![4 * h], h)));
    }
    p.entries.push(("head.w".into(), init.uniform(vec![h, k], h)));
    p.entries.push(("head.b".into(), init.uniform(vec![k], h)));
    p
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
    let h_dim = cfg.hidden;
    let xv = tape.constant(x.clone());

    // layer inputs: the observed rows of x, in time order
    let mut inputs: Vec<Var> = (0..cfg.seq_len)
        .filter(|&t| obs_mask[t])
        .map(|t| tape.row(xv, t))
        .collect();

    let mut last_h = tape.constant(Tensor::zeros(vec![1, h_dim]));
    for l in 0..cfg.layers {
        if l > 0 && cfg.dropout > 0.0 {
            inputs = inputs
                .iter()
                .map(|&v| tape.dropout(v, cfg.dropout, train, rng))
                .collect();
        }
        let w_ih = p.get(&format!("l{l}.w_ih"));
        let w_hh = p.get(&format!("l{l}.w_hh"));
        let b = p.get(&format!("l{l}.b"));
        let mut h = tape.constant(Tensor::zeros(vec![1, h_dim]));
        let mut c = tape.constant(Tensor::zeros(vec![1, h_dim]));
        let mut outputs = Vec::with_capacity(inputs.len());
        for &x_t in &inputs {
            let gi = tape.matmul(x_t, w_ih);
            let gh = tape.matmul(h, w_hh);
            let g_sum = tape.add(gi, gh);
            let gates = tape.add_bias(g_sum, b);
            let i_raw = tape.col_slice(gates, 0, h_dim);
            let f_raw = tape.col_slice(gates, h_dim, h_dim);
            let g_raw = tape.col_slice(gates, 2 * h_dim, h_dim);
            let o_raw = tape.col_slice(gates, 3 * h_dim, h_dim);
            let i_g = tape.sigmoid(i_raw);
            let f_g = tape.sigmoid(f_raw);
            let g_g = tape.tanh(g_raw);
            let o_g = tape.sigmoid(o_raw);
            let fc = tape.mul(f_g, c);
            let ig = tape.mul(i_g, g_g);
            c = tape.add(fc, ig);
            let tc = tape.tanh(c);
            h = tape.mul(o_g, tc);
            outputs.push(h);
        }
        if let Some(&last) = outputs.last() {
            last_h = last;
        }
        inputs = outputs;
    }

    let logits = tape.matmul(last_h, p.get("head.w"));
    tape.add_bias(logits, p.get("head.b"))
}
