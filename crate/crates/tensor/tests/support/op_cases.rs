//! Randomized gradient checks for every differentiable tape op.
//!
//! Each case draws shapes no larger than 4×4 (a leading batch axis of at
//! most 2 for the rank-3 matmul forms), wraps the op in a random linear
//! functional so that every output entry matters, and returns the worst
//! relative error reported by `grad_check_many`.

use pots_tensor::{grad_check_many, Result, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;

pub type OpCase = (&'static str, fn(&mut ChaCha8Rng) -> f64);

fn dim(rng: &mut ChaCha8Rng) -> usize {
    rng.random_range(1..=4)
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn random_matrix(rng: &mut ChaCha8Rng) -> Tensor {
    let shape = [dim(rng), dim(rng)];
    random(rng, &shape)
}

/// Values bounded away from zero, for kinked ops.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn positive(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(0.5..2.0)).collect(),
    )
    .unwrap()
}

fn binary_mask(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut data: Vec<f64> = (0..n)
        .map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 })
        .collect();
    let k = rng.random_range(0..n);
    data[k] = 1.0;
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// `Σ weights ⊙ y` for a fixed random weight tensor.
fn project(tape: &mut Tape, y: Var, weights: &Tensor) -> Result<Var> {
    let w = tape.constant(weights.clone());
    let p = tape.mul(y, w)?;
    Ok(tape.reduce_sum(p))
}

fn unary_case(
    rng: &mut ChaCha8Rng,
    input: fn(&mut ChaCha8Rng, &[usize]) -> Tensor,
    op: fn(&mut Tape, Var) -> Result<Var>,
) -> f64 {
    let shape = [dim(rng), dim(rng)];
    let x = input(rng, &shape);
    let w = random(rng, &shape);
    grad_check_many(
        |tape, v| {
            let y = op(tape, v[0])?;
            let w = if tape.shape(y) == w.shape() {
                w.clone()
            } else {
                Tensor::ones(tape.shape(y))
            };
            project(tape, y, &w)
        },
        &[x],
        STEP,
    )
    .unwrap()
}

fn binary_case(
    rng: &mut ChaCha8Rng,
    broadcast: bool,
    op: fn(&mut Tape, Var, Var) -> Result<Var>,
) -> f64 {
    let shape = [dim(rng), dim(rng)];
    let a = random(rng, &shape);
    let b = if broadcast {
        random(rng, &shape[1..])
    } else {
        random(rng, &shape)
    };
    let w = random(rng, &shape);
    grad_check_many(
        |tape, v| {
            let y = op(tape, v[0], v[1])?;
            project(tape, y, &w)
        },
        &[a, b],
        STEP,
    )
    .unwrap()
}

fn matmul_case(rng: &mut ChaCha8Rng, lhs_rank: usize, rhs_rank: usize) -> f64 {
    let batch = rng.random_range(1..=2);
    let (m, k, n) = (dim(rng), dim(rng), dim(rng));
    let a_shape: Vec<usize> = if lhs_rank == 3 {
        vec![batch, m, k]
    } else {
        vec![m, k]
    };
    let b_shape: Vec<usize> = if rhs_rank == 3 {
        vec![batch, k, n]
    } else {
        vec![k, n]
    };
    let out_shape: Vec<usize> = if lhs_rank == 3 {
        vec![batch, m, n]
    } else {
        vec![m, n]
    };
    let a = random(rng, &a_shape);
    let b = random(rng, &b_shape);
    let w = random(rng, &out_shape);
    grad_check_many(
        |tape, v| {
            let y = tape.matmul(v[0], v[1])?;
            project(tape, y, &w)
        },
        &[a, b],
        STEP,
    )
    .unwrap()
}

pub fn all_cases() -> Vec<OpCase> {
    vec![
        ("add", |r| binary_case(r, false, |t, a, b| t.add(a, b))),
        ("add_row_broadcast", |r| {
            binary_case(r, true, |t, a, b| t.add(a, b))
        }),
        ("sub", |r| binary_case(r, false, |t, a, b| t.sub(a, b))),
        ("sub_row_broadcast", |r| {
            binary_case(r, true, |t, a, b| t.sub(a, b))
        }),
        ("mul", |r| binary_case(r, false, |t, a, b| t.mul(a, b))),
        ("mul_row_broadcast", |r| {
            binary_case(r, true, |t, a, b| t.mul(a, b))
        }),
        ("scale", |r| {
            unary_case(r, random, |t, a| Ok(t.scale(a, -1.7)))
        }),
        ("add_scalar", |r| {
            unary_case(r, random, |t, a| Ok(t.add_scalar(a, 0.3)))
        }),
        ("matmul", |r| matmul_case(r, 2, 2)),
        ("matmul_batched_shared", |r| matmul_case(r, 3, 2)),
        ("matmul_batched", |r| matmul_case(r, 3, 3)),
        ("transpose", |r| {
            unary_case(r, random, |t, a| t.transpose(a))
        }),
        ("sigmoid", |r| {
            unary_case(r, random, |t, a| Ok(t.sigmoid(a)))
        }),
        ("tanh", |r| unary_case(r, random, |t, a| Ok(t.tanh(a)))),
        ("relu", |r| {
            unary_case(r, away_from_zero, |t, a| Ok(t.relu(a)))
        }),
        ("exp", |r| unary_case(r, random, |t, a| Ok(t.exp(a)))),
        ("log", |r| unary_case(r, positive, |t, a| Ok(t.log(a)))),
        ("softmax", |r| {
            unary_case(r, random, |t, a| Ok(t.softmax(a)))
        }),
        ("concat", |r| {
            let rows = dim(r);
            let (ca, cb) = (dim(r), dim(r));
            let a = random(r, &[rows, ca]);
            let b = random(r, &[rows, cb]);
            let w = random(r, &[rows, a.shape()[1] + b.shape()[1]]);
            grad_check_many(
                |t, v| {
                    let y = t.concat(&[v[0], v[1]])?;
                    project(t, y, &w)
                },
                &[a, b],
                STEP,
            )
            .unwrap()
        }),
        ("slice", |r| {
            let shape = [dim(r), dim(r)];
            let x = random(r, &shape);
            let axis = r.random_range(0..2);
            let start = r.random_range(0..shape[axis]);
            let len = r.random_range(1..=shape[axis] - start);
            let mut out = shape;
            out[axis] = len;
            let w = random(r, &out);
            grad_check_many(
                |t, v| {
                    let y = t.slice(v[0], axis, start, len)?;
                    project(t, y, &w)
                },
                &[x],
                STEP,
            )
            .unwrap()
        }),
        ("reshape", |r| {
            let (a, b) = (dim(r), dim(r));
            let x = random(r, &[a, b]);
            let w = random(r, &[a * b]);
            grad_check_many(
                |t, v| {
                    let y = t.reshape(v[0], &[a * b])?;
                    project(t, y, &w)
                },
                &[x],
                STEP,
            )
            .unwrap()
        }),
        ("reduce_sum", |r| {
            let x = random_matrix(r);
            grad_check_many(
                |t, v| {
                    let s = t.reduce_sum(v[0]);
                    let sq = t.mul(s, s)?;
                    Ok(t.reduce_sum(sq))
                },
                &[x],
                STEP,
            )
            .unwrap()
        }),
        ("reduce_mean", |r| {
            let x = random_matrix(r);
            grad_check_many(
                |t, v| {
                    let s = t.reduce_mean(v[0]);
                    let e = t.exp(s);
                    Ok(t.reduce_sum(e))
                },
                &[x],
                STEP,
            )
            .unwrap()
        }),
        ("masked_fill", |r| {
            let shape = [dim(r), dim(r)];
            let x = random(r, &shape);
            let mask = binary_mask(r, &shape);
            let w = random(r, &shape);
            grad_check_many(
                |t, v| {
                    let y = t.masked_fill(v[0], &mask, -3.0)?;
                    project(t, y, &w)
                },
                &[x],
                STEP,
            )
            .unwrap()
        }),
        ("masked_mse", |r| {
            let shape = [dim(r), dim(r)];
            let p = random(r, &shape);
            let target = random(r, &shape);
            let mask = binary_mask(r, &shape);
            grad_check_many(|t, v| t.masked_mse(v[0], v[1], &mask), &[p, target], STEP).unwrap()
        }),
        ("cross_entropy", |r| {
            let (rows, classes) = (dim(r), r.random_range(2..=4));
            let logits = random(r, &[rows, classes]);
            let targets: Vec<usize> = (0..rows).map(|_| r.random_range(0..classes)).collect();
            grad_check_many(|t, v| t.cross_entropy(v[0], &targets), &[logits], STEP).unwrap()
        }),
    ]
}

/// Worst relative error of `trials` seeded runs of one case.
pub fn worst_error(case: fn(&mut ChaCha8Rng) -> f64, seed: u64, trials: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..trials).map(|_| case(&mut rng)).fold(0.0, f64::max)
}
