use crate::error::{Error, Result};

/// Outcome of comparing an analytic gradient with central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// Worst `|a − fd| / max(|a|, |fd|, floor)` over smooth coordinates.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
    /// Coordinates skipped because the difference quotient is unstable
    /// between `h` and `h/2` (a ReLU or max kink inside the stencil).
    pub kinks: usize,
}

/// Central-difference check of `analytic` against `value` at `x`.
///
/// `floor` keeps the relative error meaningful for near-zero entries.
pub fn fd_check(
    x: &[f64],
    analytic: &[f64],
    step: f64,
    floor: f64,
    mut value: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<GradCheckReport> {
    if x.len() != analytic.len() {
        return Err(Error::invalid(format!(
            "{} coordinates but {} gradient entries",
            x.len(),
            analytic.len()
        )));
    }
    let mut xp = x.to_vec();
    let mut quotient = |i: usize, h: f64, xp: &mut Vec<f64>| -> Result<f64> {
        xp[i] = x[i] + h;
        let fp = value(xp)?;
        xp[i] = x[i] - h;
        let fm = value(xp)?;
        xp[i] = x[i];
        Ok((fp - fm) / (2.0 * h))
    };
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        checked: 0,
        kinks: 0,
    };
    for (i, &a) in analytic.iter().enumerate() {
        let fd = quotient(i, step, &mut xp)?;
        let fd_half = quotient(i, step / 2.0, &mut xp)?;
        let scale = fd.abs().max(fd_half.abs()).max(floor);
        if (fd - fd_half).abs() > 1e-3 * scale {
            report.kinks += 1;
            continue;
        }
        let abs = (a - fd).abs();
        report.max_abs_err = report.max_abs_err.max(abs);
        report.max_rel_err = report.max_rel_err.max(abs / a.abs().max(fd.abs()).max(floor));
        report.checked += 1;
    }
    Ok(report)
}
