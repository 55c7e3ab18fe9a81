//! A fixed catalogue of small programs that together exercise every
//! differentiable op, for finite-difference checking at random points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{
    grad_check, sample_dropout_mask, BatchNormStats, GradCheckOptions, Graph, Mode, Reduce, Result, Segment, Tensor,
    Var,
};

type Inputs = fn(&mut ChaCha8Rng) -> Vec<Tensor>;
type Program = fn(&mut Graph, &[Var]) -> Result<Var>;

#[derive(Clone, Copy)]
pub struct OpCase {
    pub name: &'static str,
    pub inputs: Inputs,
    pub program: Program,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseResult {
    pub name: String,
    pub points: u64,
    pub max_rel_error: f64,
    /// Seed of the point with the largest error.
    pub worst_seed: u64,
}

fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.5..1.5)).collect())
}

/// Contract to a scalar through a fixed random readout so every output
/// coordinate gets a distinct upstream gradient.
fn readout(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rand_tensor(&mut rng, shape[0], shape[1]);
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

const SEGMENTS: [Segment; 3] = [
    Segment { start: 0, len: 3 },
    Segment { start: 3, len: 1 },
    Segment { start: 4, len: 2 },
];

pub fn op_cases() -> Vec<OpCase> {
    vec![
        OpCase {
            name: "matmul",
            inputs: |r| vec![rand_tensor(r, 3, 4), rand_tensor(r, 4, 2)],
            program: |g, v| {
                let y = g.matmul(v[0], v[1])?;
                readout(g, y, 1)
            },
        },
        OpCase {
            name: "add/sub/mul",
            inputs: |r| vec![rand_tensor(r, 2, 5), rand_tensor(r, 2, 5)],
            program: |g, v| {
                let a = g.add(v[0], v[1])?;
                let s = g.sub(v[0], v[1])?;
                let m = g.mul(a, s)?;
                let m2 = g.mul(m, v[0])?;
                readout(g, m2, 3)
            },
        },
        OpCase {
            name: "sigmoid/relu/leaky_relu/square",
            inputs: |r| vec![rand_tensor(r, 3, 4)],
            program: |g, v| {
                let s = g.sigmoid(v[0]);
                let r = g.relu(v[0]);
                let l = g.leaky_relu(v[0], 0.01);
                let q = g.square(v[0]);
                let t = g.concat_cols(&[s, r, l, q])?;
                readout(g, t, 5)
            },
        },
        OpCase {
            name: "add_row/scale/mul_const",
            inputs: |r| vec![rand_tensor(r, 3, 4), rand_tensor(r, 1, 4), rand_tensor(r, 1, 1)],
            program: |g, v| {
                let y = g.add_row(v[0], v[1])?;
                let y = g.scale(y, v[2])?;
                let y = g.mul_const(y, -0.7);
                readout(g, y, 6)
            },
        },
        OpCase {
            name: "softmax",
            inputs: |r| vec![rand_tensor(r, 3, 4)],
            program: |g, v| {
                let a = g.softmax(v[0], 1)?;
                let b = g.softmax(v[0], 0)?;
                let t = g.concat_cols(&[a, b])?;
                readout(g, t, 7)
            },
        },
        OpCase {
            name: "sum/mean/l2/max0 and row variants",
            inputs: |r| vec![rand_tensor(r, 3, 4)],
            program: |g, v| {
                let mut terms = Vec::new();
                for op in [Reduce::Sum, Reduce::Mean, Reduce::L2Norm] {
                    terms.push(g.reduce(op, v[0]));
                    let rows = g.reduce_rows(op, v[0]);
                    terms.push(readout(g, rows, 8)?);
                }
                let h = g.max0(v[0]);
                terms.push(readout(g, h, 9)?);
                let all = g.concat_cols(&terms)?;
                readout(g, all, 10)
            },
        },
        OpCase {
            name: "slice_rows/gather_rows/concat_cols",
            inputs: |r| vec![rand_tensor(r, 4, 3), rand_tensor(r, 2, 2)],
            program: |g, v| {
                let s = g.slice_rows(v[0], 1, 3)?;
                let c = g.concat_cols(&[s, v[1]])?;
                let gth = g.gather_rows(c, &[1, 0, 1])?;
                readout(g, gth, 11)
            },
        },
        OpCase {
            name: "batch_norm",
            inputs: |r| vec![rand_tensor(r, 5, 3), rand_tensor(r, 1, 3), rand_tensor(r, 1, 3)],
            program: |g, v| {
                let mut stats = BatchNormStats::new(3);
                let t = g.batch_norm(v[0], v[1], v[2], &mut stats, Mode::Train)?;
                // eval reads running stats that must not depend on the perturbed input
                let mut frozen = BatchNormStats {
                    running_mean: vec![0.2, -0.1, 0.4],
                    running_var: vec![0.5, 1.5, 2.0],
                };
                let e = g.batch_norm(v[0], v[1], v[2], &mut frozen, Mode::Eval)?;
                let c = g.concat_cols(&[t, e])?;
                readout(g, c, 12)
            },
        },
        OpCase {
            name: "layer_norm",
            inputs: |r| vec![rand_tensor(r, 3, 5), rand_tensor(r, 1, 5), rand_tensor(r, 1, 5)],
            program: |g, v| {
                let y = g.layer_norm(v[0], v[1], v[2])?;
                readout(g, y, 13)
            },
        },
        OpCase {
            name: "dropout",
            inputs: |r| vec![rand_tensor(r, 4, 4)],
            program: |g, v| {
                let mut rng = ChaCha8Rng::seed_from_u64(99);
                let y = g.dropout(v[0], 0.3, Mode::Train, &mut rng)?;
                readout(g, y, 14)
            },
        },
        OpCase {
            name: "query_attention",
            inputs: |r| vec![rand_tensor(r, 3, 4), rand_tensor(r, 6, 4), rand_tensor(r, 6, 4)],
            program: |g, v| {
                let y = g.query_attention(v[0], v[1], v[2], &SEGMENTS, 2, None)?;
                readout(g, y, 15)
            },
        },
        OpCase {
            name: "query_attention with dropout mask",
            inputs: |r| vec![rand_tensor(r, 3, 4), rand_tensor(r, 6, 4), rand_tensor(r, 6, 4)],
            program: |g, v| {
                let mut rng = ChaCha8Rng::seed_from_u64(5);
                let mask = sample_dropout_mask(12, 0.4, Mode::Train, &mut rng)?;
                let y = g.query_attention(v[0], v[1], v[2], &SEGMENTS, 2, mask)?;
                readout(g, y, 16)
            },
        },
    ]
}

/// Run one case at `points` random points (seeds `seed_base..`).
pub fn check_case(case: &OpCase, points: u64, seed_base: u64, opts: GradCheckOptions) -> Result<CaseResult> {
    let mut out = CaseResult {
        name: case.name.to_string(),
        points,
        max_rel_error: 0.0,
        worst_seed: seed_base,
    };
    for seed in seed_base..seed_base + points {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let point = (case.inputs)(&mut rng);
        let r = grad_check(case.program, &point, opts)?;
        if r.max_rel_error > out.max_rel_error {
            out.max_rel_error = r.max_rel_error;
            out.worst_seed = seed;
        }
    }
    Ok(out)
}
