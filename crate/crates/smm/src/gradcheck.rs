//! Central finite-difference gradient checking.

use crate::error::{Result, SmmError};
use crate::tape::{Tape, VarId};
use crate::tensor::Tensor;

/// Compare the analytic gradient of a scalar-valued function against central
/// finite differences at `point`. The function receives a fresh tape and the
/// input var and must return a scalar var built on that tape.
///
/// Returns the max over coordinates of
/// `|analytic - numeric| / (|analytic| + |numeric| + 1e-12)`.
pub fn finite_diff_gradcheck<F>(f: F, point: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, VarId) -> Result<VarId>,
{
    if h <= 0.0 {
        return Err(SmmError::InvalidArgument("gradcheck step must be > 0".into()));
    }

    let eval = |x: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.leaf(x.clone(), false)?;
        let out = f(&mut tape, v)?;
        let val = tape.value(out);
        if !val.is_scalar() {
            return Err(SmmError::NonScalarLoss(val.shape.clone()));
        }
        if !val.item().is_finite() {
            return Err(SmmError::NonFinite {
                context: "gradcheck function value".into(),
            });
        }
        Ok(val.item())
    };

    // Analytic gradient at the point.
    let analytic = {
        let mut tape = Tape::new();
        let v = tape.leaf(point.clone(), true)?;
        let out = f(&mut tape, v)?;
        tape.backward(out)?;
        tape.grad(v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; point.numel()])
    };

    let mut max_rel = 0.0f64;
    let mut probe = point.clone();
    for i in 0..point.numel() {
        let orig = probe.data[i];
        probe.data[i] = orig + h;
        let plus = eval(&probe)?;
        probe.data[i] = orig - h;
        let minus = eval(&probe)?;
        probe.data[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let rel = (analytic[i] - numeric).abs() / (analytic[i].abs() + numeric.abs() + 1e-12);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}
