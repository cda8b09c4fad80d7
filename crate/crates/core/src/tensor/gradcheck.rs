use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::Result;

const STEP: f64 = 1e-5;
/// Denominator floor per unit of loss. Central differences at this step
/// carry roughly `1e-10 * |loss|` of absolute roundoff, so gradient entries
/// far below `REL_FLOOR * max(1, |loss|)` cannot be resolved relatively.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Max over all parameter entries of
    /// `|analytic - numeric| / max(|analytic|, |numeric|, REL_FLOOR * max(1, |loss|))`.
    pub max_rel_error: f64,
    pub worst_param: Option<String>,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub entries_checked: usize,
}

/// Compares tape gradients of the scalar built by `build` against central
/// finite differences over every entry of every parameter in `store`.
pub fn grad_check<F>(store: &ParamStore, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new(store);
        let loss = build(&mut tape)?;
        (tape.backward(loss)?, tape.value(loss).item())
    };
    let (analytic, loss0) = analytic;
    let floor = REL_FLOOR * loss0.abs().max(1.0);
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new(s);
        let loss = build(&mut tape)?;
        Ok(tape.value(loss).item())
    };

    let mut work = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: None,
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        entries_checked: 0,
    };
    for pid in 0..store.len() {
        let id = ParamId(pid);
        for k in 0..store.value(id).len() {
            let orig = store.value(id).data()[k];
            work.get_mut(id).value.data_mut()[k] = orig + STEP;
            let up = eval(&work)?;
            work.get_mut(id).value.data_mut()[k] = orig - STEP;
            let down = eval(&work)?;
            work.get_mut(id).value.data_mut()[k] = orig;

            let numeric = (up - down) / (2.0 * STEP);
            let a = analytic[id].data()[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            report.entries_checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = Some(store.get(id).name.clone());
                report.worst_index = k;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    Ok(report)
}
