//! Central finite-difference gradient checks.

use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::lstm::LstmLayerParams;

/// Named views over the flat parameter blocks of a parameter container.
/// Block order and lengths must be identical between `blocks` and
/// `blocks_mut`.
pub trait ParamBlocks {
    fn blocks(&self) -> Vec<(String, &[f64])>;
    fn blocks_mut(&mut self) -> Vec<&mut [f64]>;
}

impl ParamBlocks for Vec<f64> {
    fn blocks(&self) -> Vec<(String, &[f64])> {
        alloc::vec![("p".into(), self.as_slice())]
    }
    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        alloc::vec![self.as_mut_slice()]
    }
}

impl ParamBlocks for LstmLayerParams {
    fn blocks(&self) -> Vec<(String, &[f64])> {
        alloc::vec![
            ("w_input".into(), self.w_input.as_slice()),
            ("w_recurrent".into(), self.w_recurrent.as_slice()),
            ("bias".into(), self.bias.as_slice()),
        ]
    }
    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        alloc::vec![
            self.w_input.as_mut_slice(),
            self.w_recurrent.as_mut_slice(),
            self.bias.as_mut_slice(),
        ]
    }
}

/// Default denominator floor of [`relative_error`].
pub const RELATIVE_FLOOR: f64 = 1e-8;

/// `|a − n| / max(|a|, |n|, 1e-8)`
#[inline]
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    relative_error_floored(analytic, numeric, RELATIVE_FLOOR)
}

/// `|a − n| / max(|a|, |n|, floor)`
#[inline]
pub fn relative_error_floored(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Difference quotient used by [`finite_diff_check_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stencil {
    /// `(L(p+h) − L(p−h)) / 2h`
    Central,
    /// `(L(p−2h) − 8L(p−h) + 8L(p+h) − L(p+2h)) / 12h`
    FivePoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockError {
    pub block: String,
    pub max_rel_error: f64,
    /// Index of the worst element within the block.
    pub worst_index: usize,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockError>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error() < tolerance
    }

    pub fn max_abs_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_abs_error).fold(0.0, f64::max)
    }
}

/// Compare `analytic` against central differences of `loss_fn` around
/// `params` with perturbation `step`, scored by [`relative_error`].
pub fn finite_diff_check<P, F>(
    loss_fn: F,
    params: &P,
    analytic: &P,
    step: f64,
) -> Result<GradCheckReport>
where
    P: ParamBlocks + Clone,
    F: Fn(&P) -> f64,
{
    finite_diff_check_with(loss_fn, params, analytic, step, Stencil::Central, RELATIVE_FLOOR)
}

/// [`finite_diff_check`] with a chosen stencil and denominator floor.
///
/// A central difference at `h = 1e-6` carries an absolute error of roughly
/// `ε·|L| / h` from rounding in the loss, so components whose true value is
/// near that level cannot reach a small relative error; the five-point
/// stencil at a larger step has both a smaller truncation and a smaller
/// rounding term.
pub fn finite_diff_check_with<P, F>(
    loss_fn: F,
    params: &P,
    analytic: &P,
    step: f64,
    stencil: Stencil,
    floor: f64,
) -> Result<GradCheckReport>
where
    P: ParamBlocks + Clone,
    F: Fn(&P) -> f64,
{
    let first = loss_fn(params);
    let second = loss_fn(params);
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }

    let analytic_blocks = analytic.blocks();
    let shapes: Vec<usize> = params.blocks().iter().map(|(_, b)| b.len()).collect();
    if analytic_blocks.len() != shapes.len() {
        return Err(Error::Shape {
            what: "gradient block count",
            expected: shapes.len(),
            got: analytic_blocks.len(),
        });
    }

    let mut probe = params.clone();
    let mut report = Vec::with_capacity(shapes.len());
    for (b, &len) in shapes.iter().enumerate() {
        let (name, grad) = &analytic_blocks[b];
        if grad.len() != len {
            return Err(Error::Shape {
                what: "gradient block",
                expected: len,
                got: grad.len(),
            });
        }
        let mut worst = 0.0;
        let mut worst_index = 0;
        let mut worst_abs: f64 = 0.0;
        for k in 0..len {
            let orig = probe.blocks_mut()[b][k];
            let mut at = |delta: f64| {
                probe.blocks_mut()[b][k] = orig + delta;
                let v = loss_fn(&probe);
                probe.blocks_mut()[b][k] = orig;
                v
            };
            // divide by the perturbation actually represented in f64
            let hi = (orig + step) - orig;
            let lo = (orig - step) - orig;
            let numeric = match stencil {
                Stencil::Central => (at(step) - at(-step)) / (hi - lo),
                Stencil::FivePoint => {
                    (at(-2.0 * step) - 8.0 * at(-step) + 8.0 * at(step) - at(2.0 * step)) / (6.0 * (hi - lo))
                }
            };
            let err = relative_error_floored(grad[k], numeric, floor);
            worst_abs = worst_abs.max((grad[k] - numeric).abs());
            if err > worst || err.is_nan() {
                worst = if err.is_nan() { f64::INFINITY } else { err };
                worst_index = k;
            }
        }
        report.push(BlockError {
            block: name.clone(),
            max_rel_error: worst,
            worst_index,
            max_abs_error: worst_abs,
        });
    }
    Ok(GradCheckReport { blocks: report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use core::cell::Cell;

    #[test]
    fn quadratic_loss_is_exact() {
        let p = vec![0.5, -1.25, 0.75, -0.375];
        let loss = |q: &Vec<f64>| 0.5 * q.iter().map(|v| v * v).sum::<f64>();
        let report = finite_diff_check(loss, &p, &p, 1e-6).unwrap();
        assert!(report.max_rel_error() < 1e-9, "{report:?}");
    }

    #[test]
    fn five_point_stencil_is_exact_on_cubics() {
        let p = vec![0.7, -1.1];
        let loss = |q: &Vec<f64>| q.iter().map(|v| v * v * v).sum::<f64>();
        let grad: Vec<f64> = p.iter().map(|v| 3.0 * v * v).collect();
        let report = finite_diff_check_with(loss, &p, &grad, 1e-3, Stencil::FivePoint, RELATIVE_FLOOR).unwrap();
        assert!(report.max_rel_error() < 1e-10, "{report:?}");
    }

    #[test]
    fn floor_bounds_error_on_vanishing_components() {
        assert!((relative_error(0.0, 1e-9) - 0.1).abs() < 1e-15);
        assert!((relative_error_floored(0.0, 1e-9, 1e-5) - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let p = vec![1.0, 2.0];
        let loss = |q: &Vec<f64>| 0.5 * q.iter().map(|v| v * v).sum::<f64>();
        let report = finite_diff_check(loss, &p, &vec![1.0, 2.5], 1e-6).unwrap();
        assert!(!report.passes(1e-4));
        assert_eq!(report.blocks[0].worst_index, 1);
    }

    #[test]
    fn non_deterministic_loss_is_rejected() {
        let calls = Cell::new(0.0);
        let loss = |_: &Vec<f64>| {
            calls.set(calls.get() + 1.0);
            calls.get()
        };
        let p = vec![1.0];
        assert!(matches!(
            finite_diff_check(loss, &p, &p, 1e-6),
            Err(Error::NonDeterministic { .. })
        ));
    }
}
