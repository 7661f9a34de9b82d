use crate::array::Array;
use crate::diff::tape::{NodeId, SurrogateMode, Tape, VarId};
use crate::error::Result;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// max over checked entries of |analytic − numeric| / max(1, |numeric|)
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst_param: Option<(String, usize)>,
    pub checked: usize,
    /// Surrogate nodes whose registered derivative was replaced by zero during the check.
    pub excluded_surrogates: usize,
}

/// Compares `backward` against central differences of `sum(value(output))`.
///
/// Surrogate primitives are excluded by differentiating them as constants, which is their
/// true derivative away from the discontinuity. The tape must have been evaluated; its
/// variable values are restored before returning.
pub fn grad_check<T: Scalar>(tape: &mut Tape<T>, output: NodeId, params: &[VarId], eps: f64) -> Result<GradCheckReport> {
    let seed = Array::filled(tape.value(output)?.shape().to_vec(), T::one());
    let grads = tape.backward_many(&[(output, seed)], SurrogateMode::Zero)?;
    let excluded = tape.surrogate_count();
    let h = T::lit(eps);

    let mut report = GradCheckReport { max_rel_error: 0.0, worst_param: None, checked: 0, excluded_surrogates: excluded };
    for &p in params {
        let original = tape.var_value(p)?.clone();
        let analytic = grads.get(p).cloned().unwrap_or_else(|| Array::zeros(original.shape().to_vec()));
        for i in 0..original.len() {
            let mut plus = original.clone();
            plus.data_mut()[i] += h;
            tape.rebind(p, plus);
            tape.evaluate()?;
            let f_plus = tape.value(output)?.sum();

            let mut minus = original.clone();
            minus.data_mut()[i] -= h;
            tape.rebind(p, minus);
            tape.evaluate()?;
            let f_minus = tape.value(output)?.sum();

            let numeric = ((f_plus - f_minus) / (h + h)).as_f64();
            let a = analytic.data()[i].as_f64();
            let rel = (a - numeric).abs() / numeric.abs().max(1.0);
            report.checked += 1;
            if rel > report.max_rel_error || rel.is_nan() {
                report.max_rel_error = rel;
                report.worst_param = Some((tape.var_name(p).to_string(), i));
            }
        }
        tape.rebind(p, original);
        tape.evaluate()?;
    }
    Ok(report)
}
