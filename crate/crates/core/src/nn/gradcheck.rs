//! Central finite-difference verification of analytic gradients.

use super::params::ParamStore;
use crate::scalar::Real;

/// Gradient magnitudes below this are compared on this absolute scale instead of their
/// own, so elements that are analytically zero do not divide roundoff by zero.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Tensor name, element offset, analytic and numeric value at the worst element.
    pub worst: Option<(String, usize, f64, f64)>,
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, RELATIVE_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
    (analytic - numeric).abs() / scale
}

/// Compares the analytic gradient returned by `f` at `params` against central
/// differences with step `h`, element by element, and returns the worst relative error.
///
/// `f` must be deterministic and return `(value, gradient)` with the gradient laid out
/// like `params`.
pub fn finite_diff_check<T, F>(mut f: F, params: &ParamStore<T>, h: f64) -> GradCheckReport
where
    T: Real,
    F: FnMut(&ParamStore<T>) -> (T, ParamStore<T>),
{
    let (_, analytic) = f(params);
    assert!(
        analytic.same_layout(params),
        "gradient layout must match the parameters"
    );
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    let mut probe = params.clone();
    for k in 0..params.num_values() {
        let (slot, off) = params.locate(k).expect("flat index in range");
        let base = params.tensor(slot).values[off];
        probe.tensor_mut(slot).values[off] = base + T::of(h);
        let (up, _) = f(&probe);
        probe.tensor_mut(slot).values[off] = base - T::of(h);
        let (down, _) = f(&probe);
        probe.tensor_mut(slot).values[off] = base;
        let numeric = (up.f64() - down.f64()) / (2.0 * h);
        let a = analytic.tensor(slot).values[off].f64();
        let err = relative_error(a, numeric);
        report.checked += 1;
        if err >= report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some((params.name(slot).to_string(), off, a, numeric));
        }
    }
    report
}

/// Finite-difference check of a gradient with respect to a plain vector input.
pub fn finite_diff_check_vec<F>(mut f: F, x: &[f64], analytic: &[f64], h: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(x.len(), analytic.len());
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        worst = worst.max(relative_error(analytic[i], (up - down) / (2.0 * h)));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(w: f64) -> ParamStore<f64> {
        let mut p = ParamStore::new();
        p.insert("w", &[1], vec![w]).unwrap();
        p
    }

    #[test]
    fn quadratic_is_exact() {
        let p = scalar_store(3.0);
        let report = finite_diff_check(
            |q: &ParamStore<f64>| {
                let w = q.tensor(0).values[0];
                let mut g = q.zeros_like();
                g.tensor_mut(0).values[0] = 2.0 * w;
                (w * w, g)
            },
            &p,
            1e-5,
        );
        assert!(report.max_rel_error < 1e-9, "{report:?}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let p = scalar_store(-1.5);
        let report = finite_diff_check(|q: &ParamStore<f64>| (4.0, q.zeros_like()), &p, 1e-5);
        assert!(report.max_rel_error < 1e-12);
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let p = scalar_store(2.0);
        let report = finite_diff_check(
            |q: &ParamStore<f64>| {
                let w = q.tensor(0).values[0];
                let mut g = q.zeros_like();
                g.tensor_mut(0).values[0] = w; // should be 2w
                (w * w, g)
            },
            &p,
            1e-5,
        );
        assert!(report.max_rel_error > 0.4);
    }
}
