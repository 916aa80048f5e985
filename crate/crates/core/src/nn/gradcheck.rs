//! Central finite-difference gradient checking.

use serde::{Deserialize, Serialize};

use crate::error::{NtfError, Result};

/// A named flat parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockError {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockError>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Check at most this many evenly spaced coordinates per block.
    pub max_coords_per_block: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tolerance: 1e-4,
            max_coords_per_block: None,
        }
    }
}

/// `|a − n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn coords(len: usize, limit: Option<usize>) -> Vec<usize> {
    match limit {
        Some(m) if m < len => {
            if m == 0 {
                return Vec::new();
            }
            (0..m).map(|n| n * len / m).collect()
        }
        _ => (0..len).collect(),
    }
}

/// Compares `analytic` against `(f(θ+h) − f(θ−h)) / 2h` coordinate by coordinate.
/// `loss` receives the full (perturbed) parameter set.
pub fn grad_check<F>(
    mut loss: F,
    params: &[ParamBlock],
    analytic: &[Vec<f64>],
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: FnMut(&[ParamBlock]) -> Result<f64>,
{
    assert!(opts.step > 0.0, "finite-difference step must be positive");
    if analytic.len() != params.len() {
        return Err(NtfError::shape(
            format!("{} gradient blocks", params.len()),
            analytic.len(),
        ));
    }
    let mut work = params.to_vec();
    let mut eval = |work: &[ParamBlock]| -> Result<f64> {
        let f = loss(work)?;
        if f.is_finite() {
            Ok(f)
        } else {
            Err(NtfError::NonFiniteLoss)
        }
    };
    eval(&work)?;

    let mut blocks = Vec::with_capacity(params.len());
    for (b, grad) in analytic.iter().enumerate() {
        if grad.len() != params[b].values.len() {
            return Err(NtfError::shape(
                format!(
                    "{} gradient values for `{}`",
                    params[b].values.len(),
                    params[b].name
                ),
                grad.len(),
            ));
        }
        let mut worst: f64 = 0.0;
        let picked = coords(grad.len(), opts.max_coords_per_block);
        for &c in &picked {
            let orig = work[b].values[c];
            work[b].values[c] = orig + opts.step;
            let plus = eval(&work)?;
            work[b].values[c] = orig - opts.step;
            let minus = eval(&work)?;
            work[b].values[c] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            worst = worst.max(relative_error(grad[c], numeric));
        }
        blocks.push(BlockError {
            name: params[b].name.clone(),
            max_rel_error: worst,
            checked: picked.len(),
        });
    }
    let max_rel_error = blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        blocks,
        max_rel_error,
        tolerance: opts.tolerance,
        passed: max_rel_error <= opts.tolerance,
    })
}
