use pots_tensor::Tensor;
use rand::Rng;
use rand_distr::{Distribution, Uniform};

/// Glorot-uniform `[fan_in, fan_out]` matrix.
pub(crate) fn xavier(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, &[fan_in, fan_out], bound)
}

pub(crate) fn uniform(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor {
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let n = shape.iter().product();
    let data = (0..n).map(|_| dist.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// Stacks equally long per-sample grids into a `[B, rows, cols]` tensor.
pub(crate) fn stack(rows: usize, cols: usize, items: impl Iterator<Item = Vec<f64>>) -> Tensor {
    let data: Vec<f64> = items.flatten().collect();
    let b = data.len() / (rows * cols);
    Tensor::new(vec![b, rows, cols], data).expect("stacked grids share a shape")
}

/// Checks every parameter against its expected shape.
pub(crate) fn check_shapes(got: &[Tensor], expected: &[Vec<usize>]) -> crate::error::Result<()> {
    if got.len() != expected.len() {
        return Err(crate::error::ModelError::invalid(format!(
            "expected {} parameter tensors, got {}",
            expected.len(),
            got.len()
        )));
    }
    for (i, (t, s)) in got.iter().zip(expected).enumerate() {
        if t.shape() != s.as_slice() {
            return Err(crate::error::ModelError::invalid(format!(
                "parameter {i} has shape {:?}, expected {s:?}",
                t.shape()
            )));
        }
    }
    Ok(())
}
