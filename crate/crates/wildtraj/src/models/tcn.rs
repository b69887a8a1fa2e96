//! Temporal convolutional network: four residual blocks of causal dilated
//! convolutions (dilations 1, 2, 4, 8, kernel 3) with temporal (whole
//! channel) dropout, then masked mean pooling over observed steps.

use rand_chacha::ChaCha8Rng;

use crate::engine::{PaddingMode, Real, Tape, Tensor, Var};

use super::{transpose, Init, ModelConfig, ParamSet, ParamVars};

const BLOCKS: usize = 4;
const KERNEL: usize = 3;

pub fn init_params<R: Real>(cfg: &ModelConfig, init: &mut Init) -> ParamSet<R> {
    let (f, c, k) = (cfg.input_dim, cfg.channels, cfg.num_classes);
    let mut p = ParamSet::new();
    for b in 0..BLOCKS {
        let c_in = if b == 0 { f } else { c };
        p.entries.push((
            format!("block{b}.conv1.w"),
            init.uniform(vec![c, c_in, KERNEL], c_in * KERNEL),
        ));
        p.entries
            .push((format!("block{b}.conv1.b"), init.uniform(vec![c], c_in * KERNEL)));
        p.entries.push((
            format!("block{b}.conv2.w"),
            init.uniform(vec![c, c, KERNEL], c * KERNEL),
        ));
        p.entries
            .push((format!("block{b}.conv2.b"), init.uniform(vec![c], c * KERNEL)));
        if c_in != c {
            p.entries.push((
                format!("block{b}.skip.w"),
                init.uniform(vec![c, c_in, 1], c_in),
            ));
            p.entries
                .push((format!("block{b}.skip.b"), init.uniform(vec![c], c_in)));
        }
    }
    p.entries.push(("head.w".into(), init.uniform(vec![c, k], c)));
    p.entries.push(("head.b".into(), init.uniform(vec![k], c)));
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
    let c = cfg.channels;
    let mut h = tape.constant(transpose(x)); // F x T
    let mut c_in = cfg.input_dim;
    for b in 0..BLOCKS {
        let dilation = 1 << b;
        let y = tape.conv1d(
            h,
            p.get(&format!("block{b}.conv1.w")),
            p.get(&format!("block{b}.conv1.b")),
            dilation,
            PaddingMode::Causal,
        );
        let y = tape.relu(y);
        let y = tape.dropout_rows(y, cfg.tcn_dropout, train, rng);
        let y = tape.conv1d(
            y,
            p.get(&format!("block{b}.conv2.w")),
            p.get(&format!("block{b}.conv2.b")),
            dilation,
            PaddingMode::Causal,
        );
        let y = tape.relu(y);
        let y = tape.dropout_rows(y, cfg.tcn_dropout, train, rng);
        let skip = if c_in != c {
            tape.conv1d(
                h,
                p.get(&format!("block{b}.skip.w")),
                p.get(&format!("block{b}.skip.b")),
                1,
                PaddingMode::Causal,
            )
        } else {
            h
        };
        let sum = tape.add(y, skip);
        h = tape.relu(sum);
        c_in = c;
    }
    let pooled = tape.masked_mean_time(h, obs_mask); // 1 x C
    let logits = tape.matmul(pooled, p.get("head.w"));
    tape.add_bias(logits, p.get("head.b"))
}
