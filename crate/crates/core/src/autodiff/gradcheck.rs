use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::Result;

/// Compare tape gradients of `f` against central finite differences over every
/// parameter coordinate. Returns the maximum relative error, measured against
/// `max(|analytic|, |numeric|, 1e-8)`.
///
/// `f` must build its graph from `store` through [`Tape::param`] and return a
/// scalar node.
pub fn grad_check<F>(store: &ParamStore, eps: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let root = f(&mut tape, store)?;
    let analytic = tape.backward(root, store)?;

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let r = f(&mut t, s)?;
        Ok(t.value(r).item())
    };

    let mut probe = store.clone();
    let mut worst: f64 = 0.0;
    for id in store.ids() {
        for i in 0..store.get(id).len() {
            let orig = store.get(id).data()[i];
            probe.get_mut(id).data_mut()[i] = orig + eps;
            let plus = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig - eps;
            let minus = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.get(id).data()[i];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
