//! Central finite-difference verification of analytic gradients.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Outcome of a gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max_i |analytic_i − central_i| / (|central_i| + 1e-8)`.
    pub max_rel_error: f64,
    /// `(input index, flat coordinate)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    /// Analytic and central values at the worst coordinate.
    pub worst_values: (f64, f64),
    pub coordinates: usize,
    /// Coordinates whose stencil straddled a non-differentiable point and
    /// were verified with a finer step instead.
    pub kinks: usize,
}

/// Relative error of one coordinate.
pub fn relative_error(analytic: f64, central: f64) -> f64 {
    (analytic - central).abs() / (central.abs() + 1e-8)
}

/// Check the gradient of a scalar graph function of one tensor.
pub fn finite_difference_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let report = gradient_check(|g, vars| f(g, vars[0]), std::slice::from_ref(x), h, None)?;
    Ok(report.max_rel_error)
}

/// Check the gradient of a scalar graph function with respect to every
/// input. `max_coords` caps the number of probed coordinates per input,
/// chosen at an even stride.
pub fn gradient_check<F>(f: F, inputs: &[Tensor], h: f64, max_coords: Option<usize>) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| g.grad(v).unwrap().to_vec()).collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        let loss = f(&mut g, &vars)?;
        Ok(g.value(loss).data()[0])
    };
    central_difference_check(eval, &analytic, inputs, h, max_coords)
}

/// Compare precomputed analytic gradients against central differences of
/// an arbitrary scalar function of several tensors.
pub fn central_difference_check<E>(
    mut eval: E,
    analytic: &[Vec<f64>],
    inputs: &[Tensor],
    h: f64,
    max_coords: Option<usize>,
) -> Result<GradCheckReport>
where
    E: FnMut(&[Tensor]) -> Result<f64>,
{
    check_coordinates(&mut eval, analytic, inputs, h, max_coords, false)
}

/// Like [`central_difference_check`], but tolerant of ReLU and max-pool
/// kinks inside the stencil.
///
/// When a coordinate disagrees at step `h`, the one-sided slopes are
/// compared at `h` and `h/10`. For a smooth function their gap shrinks
/// linearly with the step; a gap that collapses by more than [`KINK_RATIO`] means
/// the wider stencil crossed a kink. Such coordinates are re-scored with the
/// central difference at `h/10` and counted in [`GradCheckReport::kinks`].
pub fn central_difference_check_kink_aware<E>(
    mut eval: E,
    analytic: &[Vec<f64>],
    inputs: &[Tensor],
    h: f64,
    max_coords: Option<usize>,
) -> Result<GradCheckReport>
where
    E: FnMut(&[Tensor]) -> Result<f64>,
{
    check_coordinates(&mut eval, analytic, inputs, h, max_coords, true)
}

/// A smooth function's one-sided gap shrinks exactly 10× with the step.
pub const KINK_RATIO: f64 = 20.0;

/// Disagreements below this relative error are never re-examined for kinks.
const KINK_SCREEN: f64 = 1e-6;

fn check_coordinates<E>(
    eval: &mut E,
    analytic: &[Vec<f64>],
    inputs: &[Tensor],
    h: f64,
    max_coords: Option<usize>,
    kink_aware: bool,
) -> Result<GradCheckReport>
where
    E: FnMut(&[Tensor]) -> Result<f64>,
{
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_values: (0.0, 0.0),
        coordinates: 0,
        kinks: 0,
    };
    for (which, grad) in analytic.iter().enumerate() {
        for i in probe_coordinates(grad.len(), max_coords) {
            let (up, down) = stencil(eval, &mut work, which, i, h)?;
            let mut central = (up - down) / (2.0 * h);
            let mut err = relative_error(grad[i], central);
            if kink_aware && err > KINK_SCREEN {
                let base = eval(&work)?;
                let gap = ((up - base) - (base - down)).abs() / h;
                let (fine_up, fine_down) = stencil(eval, &mut work, which, i, h / 10.0)?;
                let fine_gap = ((fine_up - base) - (base - fine_down)).abs() / (h / 10.0);
                if gap > KINK_RATIO * (fine_gap + 1e-9) {
                    report.kinks += 1;
                    central = (fine_up - fine_down) / (0.2 * h);
                    err = relative_error(grad[i], central);
                }
            }
            report.coordinates += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((which, i));
                report.worst_values = (grad[i], central);
            }
        }
    }
    Ok(report)
}

/// Loss at `+step` and `-step` along one coordinate, restoring it afterwards.
fn stencil<E>(eval: &mut E, work: &mut [Tensor], which: usize, i: usize, step: f64) -> Result<(f64, f64)>
where
    E: FnMut(&[Tensor]) -> Result<f64>,
{
    let orig = work[which].data()[i];
    work[which].data_mut()[i] = orig + step;
    let up = eval(work);
    work[which].data_mut()[i] = orig - step;
    let down = eval(work);
    work[which].data_mut()[i] = orig;
    Ok((up?, down?))
}

fn probe_coordinates(n: usize, max: Option<usize>) -> Vec<usize> {
    match max {
        Some(m) if m < n => {
            let stride = n.div_ceil(m);
            (0..n).step_by(stride).collect()
        }
        _ => (0..n).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // relu(x - 3e-6) + x², probed at x = 0: the kink sits inside the h = 1e-5
    // stencil but outside the h/10 one.
    fn kinked(v: &[Tensor]) -> Result<f64> {
        let x = v[0].data()[0];
        Ok((x - 3e-6).max(0.0) + x * x)
    }

    #[test]
    fn kink_inside_stencil_is_detected_and_rescored() {
        let x = [Tensor::from_vec(vec![0.0])];
        let plain = central_difference_check(kinked, &[vec![0.0]], &x, 1e-5, None).unwrap();
        assert!(plain.max_rel_error > 1e-2);
        let aware = central_difference_check_kink_aware(kinked, &[vec![0.0]], &x, 1e-5, None).unwrap();
        assert_eq!(aware.kinks, 1);
        assert!(aware.max_rel_error < 1e-8, "{aware:?}");
    }

    #[test]
    fn kink_rescoring_still_rejects_wrong_gradients() {
        let x = [Tensor::from_vec(vec![0.0])];
        let rep = central_difference_check_kink_aware(kinked, &[vec![0.5]], &x, 1e-5, None).unwrap();
        assert_eq!(rep.kinks, 1);
        assert!(rep.max_rel_error > 1.0);
    }

    #[test]
    fn smooth_functions_are_never_flagged() {
        let x = [Tensor::from_vec(vec![0.4, -1.3])];
        let f = |v: &[Tensor]| -> Result<f64> { Ok(v[0].data().iter().map(|x| (5.0 * x).sin()).sum()) };
        // a slightly wrong gradient forces the kink screen to run
        let grad = vec![5.0 * (2.0f64).cos() * 1.001, 5.0 * (-6.5f64).cos()];
        let rep = central_difference_check_kink_aware(f, &[grad], &x, 1e-5, None).unwrap();
        assert_eq!(rep.kinks, 0);
        assert!(rep.max_rel_error > 5e-4);
    }

    #[test]
    fn quadratic_form_is_exact() {
        let x = Tensor::from_vec(vec![0.3, -1.2, 2.5]);
        let a = Tensor::new(vec![3, 3], vec![2.0, 0.5, 0.0, 0.5, 1.0, -0.3, 0.0, -0.3, 3.0]).unwrap();
        let err = finite_difference_check(
            |g, x| {
                let a = g.constant(a.clone());
                let col = g.reshape(x, &[3, 1])?;
                let ax = g.matmul(a, col)?;
                let ax = g.reshape(ax, &[3])?;
                let xax = g.mul(x, ax)?;
                g.sum_all(xax)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn sigmoid_chain() {
        let x = Tensor::from_vec(vec![0.7, -0.4, 1.9, -2.2]);
        let err = finite_difference_check(
            |g, x| {
                let a = g.sigmoid(x)?;
                let b = g.mul_const(a, 3.0)?;
                let c = g.sigmoid(b)?;
                g.sum_all(c)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn relu_away_from_kinks() {
        let h = 1e-5;
        let x = Tensor::from_vec(vec![0.5, -0.3, 2.0, -1.5, 10.0 * h + 1e-6]);
        assert!(x.data().iter().all(|v| v.abs() > 10.0 * h));
        let err = finite_difference_check(
            |g, x| {
                let r = g.relu(x)?;
                let sq = g.mul(r, x)?;
                g.sum_all(sq)
            },
            &x,
            h,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn strided_probe_subset() {
        assert_eq!(probe_coordinates(10, Some(3)), vec![0, 4, 8]);
        assert_eq!(probe_coordinates(2, Some(3)), vec![0, 1]);
    }
}
