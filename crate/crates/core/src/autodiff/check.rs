//! Central finite-difference oracle for analytic gradients.

use std::collections::BTreeMap;

use super::{AutodiffError, Tape, Tensor, Var};

/// Default perturbation for central differences.
pub const DEFAULT_STEP: f64 = 1e-5;

/// `|a − f| / max(|a|, |f|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Outcome of comparing analytic gradients against central differences.
#[derive(Debug, Clone)]
pub struct GradReport {
    /// Largest relative error seen in each named tensor.
    pub per_param: BTreeMap<String, f64>,
    pub max_rel_err: f64,
    /// Tensor name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub tol: f64,
    pub passed: bool,
}

fn evaluate<F>(f: &F, params: &BTreeMap<String, Tensor>) -> Result<(Tape, BTreeMap<String, Var>, Var), AutodiffError>
where
    F: Fn(&mut Tape, &BTreeMap<String, Var>) -> Result<Var, AutodiffError>,
{
    let mut tape = Tape::new();
    let vars = params.iter().map(|(k, v)| (k.clone(), tape.leaf(v.clone()))).collect();
    let loss = f(&mut tape, &vars)?;
    Ok((tape, vars, loss))
}

fn scalar_value<F>(f: &F, params: &BTreeMap<String, Tensor>, name: &str, index: usize) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Tape, &BTreeMap<String, Var>) -> Result<Var, AutodiffError>,
{
    let (tape, _, loss) = evaluate(f, params)?;
    let v = tape.value(loss).item();
    if v.is_finite() {
        Ok(v)
    } else {
        Err(AutodiffError::NonFinite { name: name.to_string(), index })
    }
}

/// Checks every coordinate of every tensor in `params`.
///
/// `f` builds a scalar loss on a fresh tape from leaves registered for each
/// named tensor. Analytic gradients come from one backward pass; the numeric
/// side uses only forward evaluations at `θ ± h`.
pub fn finite_diff_check<F>(f: F, params: &BTreeMap<String, Tensor>, h: f64, tol: f64) -> Result<GradReport, AutodiffError>
where
    F: Fn(&mut Tape, &BTreeMap<String, Var>) -> Result<Var, AutodiffError>,
{
    let (tape, vars, loss) = evaluate(&f, params)?;
    if !tape.value(loss).all_finite() {
        return Err(AutodiffError::NonFinite { name: "<loss>".into(), index: 0 });
    }
    let grads = tape.backward(loss)?;

    let mut per_param = BTreeMap::new();
    let mut max_rel_err = 0.0f64;
    let mut worst = None;
    let mut probe = params.clone();
    for (name, value) in params {
        let analytic = grads.get_or_zeros(&tape, vars[name]);
        let mut tensor_max = 0.0f64;
        for i in 0..value.len() {
            let orig = value.data()[i];
            probe.get_mut(name).expect("cloned key").data_mut()[i] = orig + h;
            let plus = scalar_value(&f, &probe, name, i)?;
            probe.get_mut(name).expect("cloned key").data_mut()[i] = orig - h;
            let minus = scalar_value(&f, &probe, name, i)?;
            probe.get_mut(name).expect("cloned key").data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(analytic.data()[i], numeric);
            tensor_max = tensor_max.max(err);
            if err > max_rel_err || worst.is_none() {
                max_rel_err = max_rel_err.max(err);
                worst = Some((name.clone(), i));
            }
        }
        per_param.insert(name.clone(), tensor_max);
    }
    Ok(GradReport { per_param, max_rel_err, worst, tol, passed: max_rel_err < tol })
}
