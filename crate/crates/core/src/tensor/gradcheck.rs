use super::{Result, Scalar, Tensor, TensorError};

/// Central-difference stencil used by [`finite_difference_check`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FdStencil {
    /// `(f(x+h) - f(x-h)) / 2h`
    #[default]
    ThreePoint,
    /// `(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h`
    FivePoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Max over entries of `|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)`.
    pub max_rel_error: Scalar,
    /// `(param index, flat entry index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub analytic_at_worst: Scalar,
    pub numeric_at_worst: Scalar,
    /// First entry whose perturbed evaluation was not finite.
    pub non_finite: Option<(usize, usize)>,
    pub entries_checked: usize,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: Scalar) -> bool {
        self.non_finite.is_none() && self.max_rel_error < tolerance
    }
}

const REL_FLOOR: Scalar = 1e-12;

/// Compares `analytic` gradients against central finite differences of `f`.
///
/// `f` receives the perturbed parameter list and returns the scalar objective;
/// it must be deterministic. A non-finite objective marks the check failed at
/// that entry.
pub fn finite_difference_check<F>(
    params: &[Tensor],
    analytic: &[Tensor],
    eps: Scalar,
    stencil: FdStencil,
    mut f: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&[Tensor]) -> Scalar,
{
    if !(eps > 0.0) {
        return Err(TensorError::Contract {
            op: "finite_difference_check",
            msg: format!("eps must be positive, got {eps}"),
        });
    }
    if params.len() != analytic.len() {
        return Err(TensorError::Contract {
            op: "finite_difference_check",
            msg: format!("{} params but {} gradients", params.len(), analytic.len()),
        });
    }
    for (p, a) in params.iter().zip(analytic) {
        if p.shape() != a.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "finite_difference_check",
                lhs: p.shape().to_vec(),
                rhs: a.shape().to_vec(),
            });
        }
    }

    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        non_finite: None,
        entries_checked: 0,
    };
    let mut eval_at = |work: &mut Vec<Tensor>, p: usize, i: usize, x0: Scalar, delta: Scalar| {
        work[p].data_mut()[i] = x0 + delta;
        let v = f(work);
        work[p].data_mut()[i] = x0;
        v
    };

    for p in 0..params.len() {
        for i in 0..params[p].numel() {
            let x0 = params[p].data()[i];
            let numeric = match stencil {
                FdStencil::ThreePoint => {
                    let fp = eval_at(&mut work, p, i, x0, eps);
                    let fm = eval_at(&mut work, p, i, x0, -eps);
                    (fp - fm) / (2.0 * eps)
                }
                FdStencil::FivePoint => {
                    let fp2 = eval_at(&mut work, p, i, x0, 2.0 * eps);
                    let fp = eval_at(&mut work, p, i, x0, eps);
                    let fm = eval_at(&mut work, p, i, x0, -eps);
                    let fm2 = eval_at(&mut work, p, i, x0, -2.0 * eps);
                    // Differences first, so a locally constant f gives exactly 0.
                    (8.0 * (fp - fm) - (fp2 - fm2)) / (12.0 * eps)
                }
            };
            report.entries_checked += 1;
            if !numeric.is_finite() {
                report.non_finite.get_or_insert((p, i));
                report.max_rel_error = Scalar::INFINITY;
                continue;
            }
            let a = analytic[p].data()[i];
            let denom = a.abs().max(numeric.abs()).max(REL_FLOOR);
            let rel = (a - numeric).abs() / denom;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((p, i));
                report.analytic_at_worst = a;
                report.numeric_at_worst = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(ps: &[Tensor]) -> Scalar {
        ps[0].data().iter().enumerate().map(|(i, v)| (i as Scalar + 1.0) * v).sum()
    }

    #[test]
    fn linear_function_is_exact() {
        let p = vec![Tensor::vector(vec![0.3, -0.7, 1.1]).unwrap()];
        let g = vec![Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap()];
        let r = finite_difference_check(&p, &g, 1e-6, FdStencil::ThreePoint, linear).unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }

    #[test]
    fn broken_gradient_is_caught() {
        let p = vec![Tensor::vector(vec![0.3, -0.7, 1.1]).unwrap()];
        let g = vec![Tensor::vector(vec![1.0, 2.5, 3.0]).unwrap()];
        let r = finite_difference_check(&p, &g, 1e-6, FdStencil::ThreePoint, linear).unwrap();
        assert!(r.max_rel_error > 1e-2);
        assert_eq!(r.worst, Some((0, 1)));
    }

    #[test]
    fn non_finite_objective_reports_entry() {
        let p = vec![Tensor::vector(vec![0.0, 1.0]).unwrap()];
        let g = vec![Tensor::zeros(&[2])];
        let r = finite_difference_check(&p, &g, 1e-3, FdStencil::ThreePoint, |ps| {
            if ps[0].data()[1] > 1.0 {
                Scalar::NAN
            } else {
                0.0
            }
        })
        .unwrap();
        assert_eq!(r.non_finite, Some((0, 1)));
        assert!(!r.passed(1.0));
    }

    #[test]
    fn rejects_non_positive_eps() {
        assert!(finite_difference_check(&[], &[], 0.0, FdStencil::ThreePoint, |_| 0.0).is_err());
    }

    #[test]
    fn constant_objective_has_exactly_zero_estimate() {
        let p = vec![Tensor::vector(vec![0.3, -0.7]).unwrap()];
        let g = vec![Tensor::zeros(&[2])];
        for stencil in [FdStencil::ThreePoint, FdStencil::FivePoint] {
            let r = finite_difference_check(&p, &g, 1e-4, stencil, |_| 4.123456789).unwrap();
            assert_eq!(r.max_rel_error, 0.0);
        }
    }
}
