//! Multi-scale 1-D CNN classifier: three parallel same-padded branches
//! with kernel sizes 3, 5, 7, each followed by group normalization and
//! ReLU; branch outputs are concatenated channel-wise and pooled over
//! observed time steps only.

use rand_chacha::ChaCha8Rng;

use crate::engine::{PaddingMode, Real, Tape, Tensor, Var};

use super::{transpose, Init, ModelConfig, ParamSet, ParamVars};

const KERNELS: [usize; 3] = [3, 5, 7];
const GROUPS: usize = 8;

pub fn init_params<R: Real>(cfg: &ModelConfig, init: &mut Init) -> ParamSet<R> {
    let (f, c, k) = (cfg.input_dim, cfg.channels, cfg.num_classes);
    let mut p = ParamSet::new();
    for ks in KERNELS {
        p.entries.push((
            format!("branch{ks}.conv.w"),
            init.uniform(vec![c, f, ks], f * ks),
        ));
        p.entries
            .push((format!("branch{ks}.conv.b"), init.uniform(vec![c], f * ks)));
        p.entries
            .push((format!("branch{ks}.gn.g"), init.ones(vec![c])));
        p.entries
            .push((format!("branch{ks}.gn.b"), init.zeros(vec![c])));
    }
    p.entries.push((
        "head.w".into(),
        init.uniform(vec![3 * c, k], 3 * c),
    ));
    p.entries.push(("head.b".into(), init.uniform(vec![k], 3 * c)));
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
    let xv = tape.constant(transpose(x)); // F x T
    let mut branches = Vec::with_capacity(KERNELS.len());
    for ks in KERNELS {
        let conv = tape.conv1d(
            xv,
            p.get(&format!("branch{ks}.conv.w")),
            p.get(&format!("branch{ks}.conv.b")),
            1,
            PaddingMode::Same,
        );
        let normed = tape.group_norm(
            conv,
            GROUPS,
            p.get(&format!("branch{ks}.gn.g")),
            p.get(&format!("branch{ks}.gn.b")),
            1e-5,
        );
        branches.push(tape.relu(normed));
    }
    let merged = tape.concat_rows(&branches); // 3C x T
    let pooled = tape.masked_mean_time(merged, obs_mask); // 1 x 3C
    let pooled = tape.dropout(pooled, cfg.dropout, train, rng);
    let logits = tape.matmul(pooled, p.get("head.w"));
    tape.add_bias(logits, p.get("head.b"))
}
