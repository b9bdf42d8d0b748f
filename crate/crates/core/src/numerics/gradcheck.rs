use crate::numerics::params::{Bindings, ParamStore};
use crate::numerics::tape::{Tape, Var};
use crate::numerics::NumericsError;
use crate::scalar::Scalar;

/// Outcome of a finite-difference gradient comparison.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Worst relative error over every checked coordinate.
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    /// Worst absolute difference over every checked coordinate.
    pub max_abs_error: f64,
    pub coordinates: usize,
}

/// Compares the tape gradient of `loss_fn` against central differences
/// `(L(θ+h) − L(θ−h)) / 2h` for every coordinate of every parameter.
///
/// Relative error per coordinate uses `max(|analytic|, |numeric|, 1e-6)` as
/// denominator; below that, central differences at `h = 1e-5` are dominated
/// by rounding. `loss_fn` must be deterministic given the parameter values.
pub fn finite_diff_check<S, E, F>(
    loss_fn: F,
    params: &ParamStore<S>,
    h: S,
) -> Result<GradCheckReport, E>
where
    S: Scalar,
    E: From<NumericsError>,
    F: for<'t> Fn(&'t Tape<S>, &Bindings<'t, S>) -> Result<Var<'t, S>, E>,
{
    let analytic = {
        let tape = Tape::new();
        let bindings = params.bind(&tape, |_| true);
        let loss = loss_fn(&tape, &bindings)?;
        ensure_finite(loss.item())?;
        let grads = tape.backward(loss)?;
        let mut store = params.clone();
        store.zero_grads();
        store.accumulate(&bindings, &grads);
        store
    };

    let eval = |store: &ParamStore<S>| -> Result<S, E> {
        let tape = Tape::new();
        let bindings = store.bind(&tape, |_| false);
        let value = loss_fn(&tape, &bindings)?.item();
        ensure_finite(value)?;
        Ok(value)
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        max_abs_error: 0.0,
        coordinates: 0,
    };
    let mut probe = params.clone();
    let two_h = (h + h).as_f64();
    for (name, value) in params.iter() {
        let grad = analytic.grad(name).expect("zeroed above");
        for i in 0..value.len() {
            let orig = value.data()[i];
            probe.get_mut(name).expect("same names").data_mut()[i] = orig + h;
            let up = eval(&probe)?;
            probe.get_mut(name).expect("same names").data_mut()[i] = orig - h;
            let down = eval(&probe)?;
            probe.get_mut(name).expect("same names").data_mut()[i] = orig;

            let numeric = (up.as_f64() - down.as_f64()) / two_h;
            let exact = grad.data()[i].as_f64();
            let denom = exact.abs().max(numeric.abs()).max(1e-6);
            let rel = (exact - numeric).abs() / denom;
            report.coordinates += 1;
            report.max_abs_error = report.max_abs_error.max((exact - numeric).abs());
            if rel > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = rel;
                report.worst_param = name.to_string();
                report.worst_index = i;
                report.worst_analytic = exact;
                report.worst_numeric = numeric;
            }
        }
    }
    Ok(report)
}

fn ensure_finite<S: Scalar>(value: S) -> Result<(), NumericsError> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(NumericsError::NonFinite(value.as_f64()))
    }
}
