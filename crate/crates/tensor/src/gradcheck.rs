use crate::error::{Result, TensorError};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Compares the taped gradient of a scalar function with central finite
/// differences `(f(x+h·eᵢ) − f(x−h·eᵢ)) / 2h`.
///
/// Returns the largest componentwise `|a−b| / max(1e-12, |a|+|b|)`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), h)
}

/// [`grad_check`] over several input tensors at once.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if h.is_nan() || h <= 0.0 {
        return Err(TensorError::InvalidInput(format!(
            "step must be positive, got {h}"
        )));
    }
    let eval = |values: &[Tensor]| -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.leaf(v.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok((tape, vars, out))
    };
    let scalar = |values: &[Tensor]| -> Result<f64> {
        let (tape, _, out) = eval(values)?;
        tape.value(out)
            .item()
            .ok_or_else(|| TensorError::InvalidInput("function output is not a scalar".into()))
    };

    let (tape, vars, out) = eval(inputs)?;
    let grads = tape.backward(out)?;
    let mut worst: f64 = 0.0;
    let mut probe = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*var, &inputs[k]);
        for i in 0..inputs[k].len() {
            let orig = inputs[k].data()[i];
            probe[k].data_mut()[i] = orig + h;
            let plus = scalar(&probe)?;
            probe[k].data_mut()[i] = orig - h;
            let minus = scalar(&probe)?;
            probe[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-12);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
