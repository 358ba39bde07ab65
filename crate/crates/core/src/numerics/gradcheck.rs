//! Central finite-difference gradient checking.

use super::{Graph, ParameterSet, Var};
use crate::error::{Error, Result};

/// Rounding error budget, in units of the objective's last place, of one
/// central difference.
pub const ROUNDOFF_ULPS: f64 = 16.0;

/// Largest error of `(plus - minus) / 2h` explained by rounding in the two
/// objective evaluations.
pub fn roundoff_bound(plus: f64, minus: f64, h: f64) -> f64 {
    ROUNDOFF_ULPS * f64::EPSILON * plus.abs().max(minus.abs()) / (2.0 * h)
}

/// Relative error `|a - b| / max(1e-8, |a| + |b|)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / f64::max(1e-8, a.abs() + b.abs())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Entries compared.
    pub checked: usize,
    /// Entries skipped because a `±h` step moved some relu/abs input across
    /// its kink, where a central difference does not estimate the derivative.
    pub skipped_kinks: usize,
    /// Entries large enough for the difference quotient to resolve them to
    /// `tol`, given its rounding error (see [`roundoff_bound`]). A check
    /// without any such entry only passes if every entry agrees exactly.
    pub resolved: usize,
    /// Unresolved entries above `tol` whose analytic and numeric values agree
    /// within the rounding error of the quotient. These are derivatives too
    /// small to be checked at `tol`; they are left out of `max_rel_err`.
    pub within_roundoff: usize,
    /// Largest relative error over every compared entry, including the ones
    /// counted in `within_roundoff`.
    pub max_rel_err_raw: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    /// Analytic and numeric derivative at the worst entry.
    pub worst_values: Option<(f64, f64)>,
    /// Set when any loss evaluation was non-finite.
    pub numeric_error: Option<String>,
    pub tol: f64,
    pub passed: bool,
}

fn evaluate<F>(build: &mut F, params: &ParameterSet) -> Result<(f64, Vec<i8>)>
where
    F: FnMut(&mut Graph, &ParameterSet) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = build(&mut g, params)?;
    let value = g
        .value(loss)
        .item()
        .ok_or_else(|| Error::arg("grad_check objective must be 1x1"))?;
    Ok((value, g.kink_pattern()))
}

/// Compares the analytic gradient of `build` with central differences
/// `(f(θ + h e) - f(θ - h e)) / 2h` for every scalar entry of `params`.
///
/// `build` records the objective on a fresh graph and returns the scalar loss
/// node; it is re-run for every perturbation.
pub fn grad_check<F>(params: &ParameterSet, h: f64, tol: f64, mut build: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &ParameterSet) -> Result<Var>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::arg(format!("grad_check step h must be > 0, got {h}")));
    }
    if !(tol > 0.0) {
        return Err(Error::arg(format!("grad_check tolerance must be > 0, got {tol}")));
    }

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        checked: 0,
        skipped_kinks: 0,
        resolved: 0,
        within_roundoff: 0,
        max_rel_err_raw: 0.0,
        worst: None,
        worst_values: None,
        numeric_error: None,
        tol,
        passed: false,
    };

    let mut g = Graph::new();
    let loss = build(&mut g, params)?;
    let base = g
        .value(loss)
        .item()
        .ok_or_else(|| Error::arg("grad_check objective must be 1x1"))?;
    if !base.is_finite() {
        report.numeric_error = Some(format!("objective is {base} at the base point"));
        return Ok(report);
    }
    let base_kinks = g.kink_pattern();
    let grads = g.backward(loss)?;
    drop(g);

    let mut probe = params.clone();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in &names {
        let analytic = grads.param(name).cloned();
        let n = params.value(name)?.len();
        for idx in 0..n {
            let a = analytic.as_ref().map_or(0.0, |m| m.data()[idx]);
            let orig = params.value(name)?.data()[idx];

            probe.get_mut(name).expect("cloned").value.data_mut()[idx] = orig + h;
            let (plus, kinks_plus) = evaluate(&mut build, &probe)?;
            probe.get_mut(name).expect("cloned").value.data_mut()[idx] = orig - h;
            let (minus, kinks_minus) = evaluate(&mut build, &probe)?;
            probe.get_mut(name).expect("cloned").value.data_mut()[idx] = orig;

            if !plus.is_finite() || !minus.is_finite() {
                report.numeric_error = Some(format!(
                    "non-finite objective perturbing {name}[{idx}]: f(+h) = {plus}, f(-h) = {minus}"
                ));
                report.passed = false;
                return Ok(report);
            }
            if kinks_plus != base_kinks || kinks_minus != base_kinks {
                report.skipped_kinks += 1;
                continue;
            }

            let numeric = (plus - minus) / (2.0 * h);
            report.checked += 1;
            report.max_abs_err = report.max_abs_err.max((a - numeric).abs());
            let err = rel_err(a, numeric);
            report.max_rel_err_raw = report.max_rel_err_raw.max(err);
            let bound = roundoff_bound(plus, minus, h);
            if bound <= tol * f64::max(1e-8, a.abs() + numeric.abs()) {
                report.resolved += 1;
            } else if err > tol && (a - numeric).abs() <= bound {
                report.within_roundoff += 1;
                continue;
            }
            if report.worst.is_none() || err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some((name.clone(), idx));
                report.worst_values = Some((a, numeric));
            }
        }
    }

    let total = params.num_scalars();
    // Exact agreement everywhere is conclusive at any tolerance.
    let conclusive = report.resolved > 0 || (report.checked > 0 && report.max_rel_err_raw == 0.0);
    report.passed = report.max_rel_err <= tol && (total == 0 || conclusive);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;

    fn set_with(name: &str, m: Matrix) -> ParameterSet {
        let mut s = ParameterSet::new();
        s.insert(name, m).unwrap();
        s
    }

    #[test]
    fn quadratic_passes_tightly() {
        let params = set_with("theta", Matrix::from_vec(1, 2, vec![1.0, 2.0]).unwrap());
        let report = grad_check(&params, 1e-5, 1e-9, |g, p| {
            let t = g.param(p, "theta")?;
            let sq = g.mul(t, t)?;
            Ok(g.sum(sq))
        })
        .unwrap();
        assert!(report.passed, "{report:?}");
        assert!(report.max_rel_err < 1e-9);
        assert_eq!(report.checked, 2);
    }

    #[test]
    fn constant_objective_passes() {
        let params = set_with("theta", Matrix::from_vec(1, 3, vec![0.3, -1.0, 2.0]).unwrap());
        let report = grad_check(&params, 1e-5, 1e-4, |g, p| {
            let t = g.param(p, "theta")?;
            let z = g.scale(t, 0.0);
            let s = g.sum(z);
            Ok(g.add_scalar(s, 4.0))
        })
        .unwrap();
        assert!(report.passed);
        assert_eq!(report.max_rel_err, 0.0);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        // θ * stop_grad(θ): the value is sum(θ²) but the sweep only sees one factor.
        let params = set_with("theta", Matrix::from_vec(1, 2, vec![0.5, -0.7]).unwrap());
        let report = grad_check(&params, 1e-5, 1e-4, |g, p| {
            let t = g.param(p, "theta")?;
            let frozen = g.constant(g.value(t).clone());
            let sq = g.mul(t, frozen)?;
            Ok(g.sum(sq))
        })
        .unwrap();
        assert!(!report.passed);
    }

    #[test]
    fn gradient_below_difference_resolution_is_not_a_failure() {
        // f = 100 + 1e-9 θ + φ / 2: the θ evaluations differ by about one unit
        // in the last place, so that quotient carries no correct digit.
        let mut params = set_with("theta", Matrix::scalar(0.25));
        params.insert("phi", Matrix::scalar(0.5)).unwrap();
        let report = grad_check(&params, 1e-5, 1e-4, |g, p| {
            let t = g.param(p, "theta")?;
            let f = g.param(p, "phi")?;
            let s = g.scale(t, 1e-9);
            let half = g.scale(f, 0.5);
            let s = g.add(s, half)?;
            Ok(g.add_scalar(s, 100.0))
        })
        .unwrap();
        assert!(report.max_rel_err_raw > 1e-4, "{report:?}");
        assert_eq!(report.within_roundoff, 1);
        assert_eq!(report.resolved, 1);
        assert!(report.passed);
        assert!(report.max_abs_err <= roundoff_bound(100.0, 100.0, 1e-5));
    }

    #[test]
    fn tolerance_below_difference_resolution_cannot_pass() {
        let params = set_with("theta", Matrix::scalar(0.25));
        // θ³ has a truncation error of h²θ'''/6 = 1e-10 in the quotient.
        let report = grad_check(&params, 1e-5, 1e-15, |g, p| {
            let t = g.param(p, "theta")?;
            let sq = g.mul(t, t)?;
            let cube = g.mul(sq, t)?;
            Ok(g.sum(cube))
        })
        .unwrap();
        assert_eq!(report.resolved, 0);
        assert!(!report.passed);
    }

    #[test]
    fn small_but_resolvable_gradient_error_is_caught() {
        // Analytic 1e-6 θ-slope against a true slope of 1.1e-6.
        let params = set_with("theta", Matrix::scalar(0.25));
        let report = grad_check(&params, 1e-5, 1e-4, |g, p| {
            let t = g.param(p, "theta")?;
            let frozen = g.constant(g.value(t).clone());
            let a = g.scale(t, 1e-6);
            let b = g.scale(frozen, 1e-7);
            let s = g.add(a, b)?;
            Ok(g.add_scalar(s, 1.0))
        })
        .unwrap();
        assert_eq!(report.within_roundoff, 0);
        assert!(!report.passed);
    }

    #[test]
    fn rejects_bad_arguments() {
        let params = set_with("theta", Matrix::zeros(1, 1));
        let f = |g: &mut Graph, p: &ParameterSet| {
            let t = g.param(p, "theta")?;
            Ok(g.sum(t))
        };
        assert!(grad_check(&params, 0.0, 1e-4, f).is_err());
        assert!(grad_check(&params, 1e-5, -1.0, f).is_err());
    }

    #[test]
    fn non_finite_objective_reported() {
        let params = set_with("theta", Matrix::from_vec(1, 1, vec![0.0]).unwrap());
        let report = grad_check(&params, 1e-5, 1e-4, |g, p| {
            let t = g.param(p, "theta")?;
            let s = g.sum(t);
            Ok(g.scale(s, f64::INFINITY))
        })
        .unwrap();
        assert!(!report.passed);
        assert!(report.numeric_error.is_some());
    }

    #[test]
    fn kink_crossings_are_skipped() {
        // relu(θ) at θ = 1e-6 with h = 1e-5 straddles the kink.
        let params = set_with("theta", Matrix::from_vec(1, 2, vec![1e-6, 0.5]).unwrap());
        let report = grad_check(&params, 1e-5, 1e-6, |g, p| {
            let t = g.param(p, "theta")?;
            let r = g.relu(t);
            Ok(g.sum(r))
        })
        .unwrap();
        assert_eq!(report.skipped_kinks, 1);
        assert_eq!(report.checked, 1);
        assert!(report.passed);
    }
}
