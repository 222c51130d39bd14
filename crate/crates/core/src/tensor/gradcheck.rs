//! Central finite-difference verification of hand-written backward passes.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    /// Largest acceptable relative error.
    pub tolerance: f64,
    /// Coordinates to probe; all of them if the parameter vector is shorter.
    pub max_coords: usize,
    /// Relative errors are measured against
    /// `max(|analytic|, |numeric|, scale_floor * max_i |analytic_i|)`, so
    /// coordinates whose gradient is negligible next to the largest one are
    /// judged on an absolute rather than relative scale.
    pub scale_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            epsilon: 1e-5,
            tolerance: 1e-6,
            max_coords: 400,
            scale_floor: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_coord: Option<usize>,
    pub checked: usize,
    /// Coordinates skipped because the perturbation crossed a relu kink or
    /// changed a pooling argmax.
    pub skipped: usize,
    pub passed: bool,
}

/// Compares `analytic` against central differences of `loss` around `point`.
///
/// `loss` returns the scalar loss and a fingerprint of the discrete
/// activation pattern (relu signs, pooling winners). A coordinate whose `±ε`
/// probes produce a different fingerprint than the unperturbed point straddles
/// a non-differentiable point and is skipped.
pub fn grad_check<F>(
    point: &[f64],
    analytic: &[f64],
    cfg: &GradCheckConfig,
    mut loss: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<(f64, u64)>,
{
    if point.len() != analytic.len() {
        return Err(Error::Shape(format!(
            "{} parameters but {} gradient entries",
            point.len(),
            analytic.len()
        )));
    }
    let (base, pattern) = loss(point)?;
    if !base.is_finite() {
        return Err(Error::NonFinite("gradient-check loss".into()));
    }
    let coords: Vec<usize> = if point.len() <= cfg.max_coords {
        (0..point.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut c = sample(&mut rng, point.len(), cfg.max_coords).into_vec();
        c.sort_unstable();
        c
    };
    let g_max = analytic.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let floor = (cfg.scale_floor * g_max).max(f64::MIN_POSITIVE);

    let mut probe = point.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_coord: None,
        checked: 0,
        skipped: 0,
        passed: true,
    };
    for i in coords {
        let x0 = probe[i];
        probe[i] = x0 + cfg.epsilon;
        let (plus, p_plus) = loss(&probe)?;
        probe[i] = x0 - cfg.epsilon;
        let (minus, p_minus) = loss(&probe)?;
        probe[i] = x0;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite("gradient-check loss".into()));
        }
        if p_plus != pattern || p_minus != pattern {
            report.skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * cfg.epsilon);
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        report.checked += 1;
        if report.worst_coord.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_coord = Some(i);
        }
    }
    report.passed = report.checked > 0 && report.max_rel_error < cfg.tolerance;
    Ok(report)
}
