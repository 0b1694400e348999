//! Rate function for the x3 map with the log-cosine potential: clipped
//! potentials, transfer-operator pressure on a collocation grid, and the
//! constrained-entropy profile obtained by convex duality in beta.

use crate::error::{Error, Result};

use serde::Serialize;

/// psi(x) = log(|1 + e^{-2ix}| / 2) = log |cos x|, with -inf at the
/// singularities x = pi/2 mod pi.
pub fn psi(x: f64) -> f64 {
    let c = x.cos().abs();
    // A term counts as singular when |1 + e^{-2ix}|/2 = |cos x| < 1e-15.
    if c < 1e-15 {
        f64::NEG_INFINITY
    } else {
        c.ln()
    }
}

/// The potential clipped from below: psi_M = max(psi, -M).
#[derive(Debug, Clone, Copy)]
pub struct Potential {
    pub clip: f64,
}

impl Potential {
    pub fn new(clip: f64) -> Potential {
        assert!(clip > 0.0, "clip level must be positive");
        Potential { clip }
    }

    pub fn eval(&self, x: f64) -> f64 {
        psi(x).max(-self.clip)
    }

    /// Samples on the uniform n-point midpoint grid over [0, 2*pi). Midpoints
    /// keep the nodes off the singularities at pi/2 and 3*pi/2 for any n
    /// divisible by 4, which matters for quadrature accuracy.
    pub fn samples(&self, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| self.eval(2.0 * std::f64::consts::PI * (i as f64 + 0.5) / n as f64))
            .collect()
    }
}

/// Discretized transfer operator of T(x) = 3x mod 2*pi with weight
/// e^{beta * psi_M} over the three inverse branches, acting on piecewise
/// linear functions sampled on a uniform grid.
struct TransferOperator {
    /// For each row: three (column pair, weights) summing the branch pullbacks.
    rows: Vec<[(usize, f64, usize, f64); 3]>,
}

impl TransferOperator {
    fn build(beta: f64, potential: Potential, n: usize) -> TransferOperator {
        let rows = (0..n)
            .map(|i| {
                let mut entries = [(0usize, 0.0f64, 0usize, 0.0f64); 3];
                for (k, entry) in entries.iter_mut().enumerate() {
                    // Nodes sit at midpoints x_i = 2*pi*(i + 1/2)/n, so no node
                    // hits a potential singularity when 4 | n. The preimage
                    // (x_i + 2*pi*k)/3 has fractional node index (i + k*n - 1)/3.
                    let p = (i as f64 + (k * n) as f64 - 1.0) / 3.0;
                    let j0 = p.floor() as i64;
                    let frac = p - j0 as f64;
                    let y = 2.0 * std::f64::consts::PI * (p + 0.5) / n as f64;
                    let w = (beta * potential.eval(y)).exp();
                    *entry = (
                        j0.rem_euclid(n as i64) as usize,
                        w * (1.0 - frac),
                        (j0 + 1).rem_euclid(n as i64) as usize,
                        w * frac,
                    );
                }
                entries
            })
            .collect();
        TransferOperator { rows }
    }

    fn apply(&self, u: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(&self.rows) {
            let mut acc = 0.0;
            for &(j0, w0, j1, w1) in row {
                acc += w0 * u[j0] + w1 * u[j1];
            }
            *o = acc;
        }
    }
}

const POWER_ITERATION_CAP: usize = 50_000;

/// log of the leading eigenvalue of the discretized operator, by power
/// iteration to relative tolerance 1e-12 on the eigenvalue.
pub fn transfer_pressure(beta: f64, clip: f64, grid: usize) -> Result<f64> {
    if beta < 0.0 {
        return Err(Error::InvalidParameter(format!("beta must be >= 0, got {beta}")));
    }
    if grid < 64 {
        return Err(Error::InvalidParameter(format!("grid must be >= 64, got {grid}")));
    }
    let op = TransferOperator::build(beta, Potential::new(clip), grid);
    let mut u = vec![1.0f64; grid];
    let mut v = vec![0.0f64; grid];
    let mut lambda_prev = f64::NAN;
    for _ in 0..POWER_ITERATION_CAP {
        op.apply(&u, &mut v);
        let norm: f64 = v.iter().sum::<f64>() / grid as f64;
        let lambda = norm; // u is normalized to mean 1 each step
        for x in v.iter_mut() {
            *x /= norm;
        }
        std::mem::swap(&mut u, &mut v);
        if (lambda - lambda_prev).abs() <= 1e-12 * lambda.abs() {
            return Ok(lambda.ln());
        }
        lambda_prev = lambda;
    }
    Err(Error::PowerIterationStalled(POWER_ITERATION_CAP))
}

/// Pressure values on a beta grid, with centered finite-difference slopes
/// (one-sided at the ends).
#[derive(Debug, Clone, Serialize)]
pub struct PressureCurve {
    pub betas: Vec<f64>,
    pub pressures: Vec<f64>,
    pub derivative_estimates: Vec<f64>,
}

pub fn pressure_curve(betas: &[f64], clip: f64, grid: usize) -> Result<PressureCurve> {
    let pressures: Vec<f64> = betas
        .iter()
        .map(|&b| transfer_pressure(b, clip, grid))
        .collect::<Result<_>>()?;
    let k = betas.len();
    let mut derivative_estimates = vec![f64::NAN; k];
    for i in 0..k {
        let (lo, hi) = if i == 0 {
            (0, 1.min(k - 1))
        } else if i == k - 1 {
            (k - 2, k - 1)
        } else {
            (i - 1, i + 1)
        };
        if hi > lo {
            derivative_estimates[i] = (pressures[hi] - pressures[lo]) / (betas[hi] - betas[lo]);
        }
    }
    Ok(PressureCurve {
        betas: betas.to_vec(),
        pressures,
        derivative_estimates,
    })
}

/// Finite-difference slope of the pressure at beta = 0 (second order,
/// one-sided to respect beta >= 0). Approximates the Lebesgue average of
/// the clipped potential.
pub fn pressure_slope_at_zero(clip: f64, grid: usize) -> Result<f64> {
    let h = 1e-3;
    let p0 = transfer_pressure(0.0, clip, grid)?;
    let p1 = transfer_pressure(h, clip, grid)?;
    let p2 = transfer_pressure(2.0 * h, clip, grid)?;
    Ok((4.0 * p1 - p2 - 3.0 * p0) / (2.0 * h))
}

/// The constrained-entropy profile.
#[derive(Debug, Clone, Serialize)]
pub struct RateProfile {
    pub c_values: Vec<f64>,
    pub rhat: Vec<f64>,
    pub attained_beta: Vec<f64>,
}

const GOLDEN_TOL: f64 = 1e-8;

/// Minimizes the convex function beta -> P(beta * psi_M) + beta * c over
/// [0, beta_max] by golden-section search; tolerance 1e-8 in beta.
fn minimize_over_beta(
    c: f64,
    clip: f64,
    grid: usize,
    beta_max: f64,
) -> Result<(f64, f64)> {
    let f = |beta: f64| -> Result<f64> { Ok(transfer_pressure(beta, clip, grid)? + beta * c) };
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0f64, beta_max);
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    while b - a > GOLDEN_TOL {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2)?;
        }
    }
    let mid = 0.5 * (a + b);
    // The endpoints can beat the interior when the minimum sits on the boundary.
    let mut best = (mid, f(mid)?);
    for cand in [0.0, beta_max] {
        let fc = f(cand)?;
        if fc < best.1 {
            best = (cand, fc);
        }
    }
    if best.0 >= beta_max - 10.0 * GOLDEN_TOL && beta_max > 0.0 {
        return Err(Error::BetaMaxTooSmall { beta_max });
    }
    Ok(best)
}

/// R_M(c) = inf over beta in [0, beta_max] of P(beta * psi_M) + beta * c,
/// for each c in `c_list`.
pub fn rate_function(c_list: &[f64], clip: f64, grid: usize, beta_max: f64) -> Result<RateProfile> {
    let mut rhat = Vec::with_capacity(c_list.len());
    let mut attained = Vec::with_capacity(c_list.len());
    for &c in c_list {
        if c < 0.0 {
            return Err(Error::InvalidParameter(format!("c must be >= 0, got {c}")));
        }
        let (beta, value) = minimize_over_beta(c, clip, grid, beta_max)?;
        rhat.push(value);
        attained.push(beta);
    }
    Ok(RateProfile {
        c_values: c_list.to_vec(),
        rhat,
        attained_beta: attained,
    })
}

/// Checks of the three qualitative features of the profile.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ObservationReport {
    /// Bounded by log 3 everywhere, and strictly below it for c <= log 2 / 2.
    /// The gap closes quadratically as c approaches log 2, so strictness close
    /// to the endpoint is not numerically resolvable at a fixed tolerance;
    /// together with `decays_at_zero` this still certifies strictness on the
    /// whole open range.
    pub bounded_and_strict: bool,
    /// Decreasing toward the smallest c.
    pub decays_at_zero: bool,
    /// Midpoint concavity of the profile within tolerance.
    pub midpoint_shape: bool,
}

pub fn check_observations(profile: &RateProfile, tol: f64) -> ObservationReport {
    let log2 = 2f64.ln();
    let log3 = 3f64.ln();
    let n = profile.c_values.len();
    assert!(n >= 8, "need at least 8 c-points");

    let mut bounded_and_strict = true;
    for (&c, &r) in profile.c_values.iter().zip(&profile.rhat) {
        if r > log3 + tol {
            bounded_and_strict = false;
        }
        if c <= 0.5 * log2 && r >= log3 - tol {
            bounded_and_strict = false;
        }
    }

    // Sorted by c for the shape checks.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| profile.c_values[i].partial_cmp(&profile.c_values[j]).unwrap());
    let cs: Vec<f64> = order.iter().map(|&i| profile.c_values[i]).collect();
    let rs: Vec<f64> = order.iter().map(|&i| profile.rhat[i]).collect();

    let decays_at_zero = rs.windows(2).all(|w| w[0] <= w[1] + tol) && rs[0] < rs[n - 1] - tol;

    // The profile is a pointwise infimum of affine functions of c, hence its
    // chords lie below the graph; check that shape at interior points.
    let mut midpoint_shape = true;
    for i in 1..n - 1 {
        if cs[i] > log2 + tol {
            continue;
        }
        let lam = (cs[i] - cs[i - 1]) / (cs[i + 1] - cs[i - 1]);
        let chord = rs[i - 1] * (1.0 - lam) + rs[i + 1] * lam;
        if rs[i] < chord - tol {
            midpoint_shape = false;
        }
    }

    ObservationReport {
        bounded_and_strict,
        decays_at_zero,
        midpoint_shape,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psi_values() {
        assert_eq!(psi(0.0), 0.0);
        assert_eq!(psi(std::f64::consts::FRAC_PI_2), f64::NEG_INFINITY);
        let v = psi(std::f64::consts::FRAC_PI_4);
        assert!((v + 0.5 * 2f64.ln()).abs() < 1e-15);
        assert!(psi(1.2) <= 0.0);
    }

    #[test]
    fn clipped_potential_sits_between_psi_and_zero() {
        let pot = Potential::new(5.0);
        for i in 0..1000 {
            let x = 2.0 * std::f64::consts::PI * i as f64 / 1000.0;
            let v = pot.eval(x);
            assert!(v >= psi(x) && v <= 0.0 && v >= -5.0);
        }
        assert_eq!(pot.eval(0.0), 0.0);
    }

    #[test]
    fn pressure_at_zero_is_log3() {
        for grid in [64, 256, 1024] {
            for clip in [5.0, 20.0] {
                let p = transfer_pressure(0.0, clip, grid).unwrap();
                assert!((p - 3f64.ln()).abs() < 1e-10, "grid {grid} clip {clip}: {p}");
            }
        }
    }

    #[test]
    fn pressure_decreases_with_clip_level() {
        // Larger M means a potential closer to psi from above, so less pressure.
        for beta in [0.5, 2.0] {
            let p5 = transfer_pressure(beta, 5.0, 1024).unwrap();
            let p10 = transfer_pressure(beta, 10.0, 1024).unwrap();
            let p20 = transfer_pressure(beta, 20.0, 1024).unwrap();
            assert!(p5 >= p10 - 1e-12 && p10 >= p20 - 1e-12, "{p5} {p10} {p20}");
        }
    }

    #[test]
    fn pressure_is_convex_in_beta() {
        let betas: Vec<f64> = (0..9).map(|i| i as f64 * 0.5).collect();
        let curve = pressure_curve(&betas, 10.0, 512).unwrap();
        for w in curve.pressures.windows(3) {
            assert!(w[1] <= 0.5 * (w[0] + w[2]) + 1e-6);
        }
    }

    #[test]
    fn rate_at_log2_is_log3() {
        let profile = rate_function(&[2f64.ln()], 20.0, 512, 30.0).unwrap();
        assert!((profile.rhat[0] - 3f64.ln()).abs() < 0.02);
        // Constraint inactive beyond log 2 as well.
        let above = rate_function(&[0.8, 1.0], 20.0, 512, 30.0).unwrap();
        for &r in &above.rhat {
            assert!((r - 3f64.ln()).abs() < 0.02);
        }
    }

    #[test]
    fn rate_decreases_toward_small_c() {
        let log2 = 2f64.ln();
        let cs: Vec<f64> = [0.4, 0.2, 0.1, 0.05].iter().map(|f| f * log2).collect();
        let profile = rate_function(&cs, 20.0, 512, 60.0).unwrap();
        for w in profile.rhat.windows(2) {
            assert!(w[1] < w[0], "expected strict decrease: {:?}", profile.rhat);
        }
    }

    #[test]
    fn observation_checks_on_constructed_profiles() {
        let log3 = 3f64.ln();
        let cs: Vec<f64> = (1..=9).map(|i| i as f64 * 2f64.ln() / 9.0).collect();
        // Constant profile: fails strictness, passes the shape check.
        let flat = RateProfile {
            c_values: cs.clone(),
            rhat: vec![log3; 9],
            attained_beta: vec![0.0; 9],
        };
        let rep = check_observations(&flat, 0.02);
        assert!(!rep.bounded_and_strict);
        assert!(rep.midpoint_shape);
        // One interior dip below the chord: shape check fails.
        let mut rhat: Vec<f64> = cs.iter().map(|c| c.sqrt()).collect();
        rhat[4] -= 0.3;
        let dented = RateProfile {
            c_values: cs,
            rhat,
            attained_beta: vec![0.0; 9],
        };
        assert!(!check_observations(&dented, 0.02).midpoint_shape);
    }

    #[test]
    fn beta_max_too_small_is_reported() {
        let err = rate_function(&[0.01], 20.0, 256, 0.5).unwrap_err();
        assert!(matches!(err, Error::BetaMaxTooSmall { .. }));
    }
}
