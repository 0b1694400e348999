//! Superlevel-set measures of |F mu_n| and their growth exponents, the
//! quadratic Strichartz average, exact word-product tail statistics, and the
//! closed-form bound combining them.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fourier::{fourier_mu_n, FourierEvaluator};
use crate::ifs::{contraction_band, lyapunov_exponent, IfsSystem};

/// Relative tolerance of the step-halving consistency check.
pub const RICHARDSON_TOL: f64 = 0.01;

/// Letter-count classes enumerated exactly before falling back to sampling.
const CLASS_BUDGET: f64 = 200_000.0;

/// Sample count of the Monte Carlo fallback for word statistics.
const MC_SAMPLES: u64 = 400_000;

/// |F mu_n| sampled at xi = k*step for k = 0..=floor(window/step); negative
/// frequencies are covered by conjugate symmetry.
fn abs_half_grid(system: &IfsSystem, n: u32, window: f64, step: f64) -> Result<Vec<f64>> {
    let k_max = (window / step).floor() as usize;
    fourier_mu_n(system, n, step)?; // surface budget errors before the parallel fill
    Ok((0..=k_max)
        .into_par_iter()
        .map(|k| {
            FourierEvaluator::new(system)
                .eval(n, k as f64 * step)
                .expect("budget checked")
                .norm()
        })
        .collect())
}

/// Grid points (counted symmetrically) with value >= threshold; ties are in.
fn count_at_least(half_grid: &[f64], threshold: f64) -> u64 {
    let positive: u64 = half_grid[1..].iter().map(|&v| (v >= threshold) as u64).sum();
    2 * positive + (half_grid[0] >= threshold) as u64
}

fn window_checked(system: &IfsSystem, t: f64, n: u32) -> Result<f64> {
    let stats = contraction_band(system)?;
    let window = t.exp();
    let r_pow = (stats.r_lo as f64).powi(n as i32);
    if window > r_pow {
        return Err(Error::WindowTooWide { window, r_pow });
    }
    Ok(window)
}

/// Grid estimate of Leb{xi in [-e^t, e^t] : |F mu_n(xi)| >= e^{-ct}} with a
/// step-halving consistency check.
#[derive(Debug, Clone, Copy)]
pub struct SuperlevelEstimate {
    pub measure: f64,
    pub refined: f64,
    /// True when halving the step moved the estimate by more than the
    /// tolerance; the value is then under-resolved, not wrong.
    pub under_resolved: bool,
}

fn assemble_estimate(measure: f64, refined: f64, step: f64) -> SuperlevelEstimate {
    let diff = (measure - refined).abs();
    SuperlevelEstimate {
        measure,
        refined,
        under_resolved: diff > RICHARDSON_TOL * measure.max(refined) + 2.0 * step,
    }
}

pub fn superlevel_measure(
    system: &IfsSystem,
    t: f64,
    c: f64,
    step: f64,
    n: u32,
) -> Result<SuperlevelEstimate> {
    if !(step > 0.0) || !(t > 0.0) || c < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "superlevel needs step > 0, t > 0, c >= 0 (step {step}, t {t}, c {c})"
        )));
    }
    let window = window_checked(system, t, n)?;
    let threshold = (-c * t).exp();
    let coarse = abs_half_grid(system, n, window, step)?;
    let fine = abs_half_grid(system, n, window, step / 2.0)?;
    // The set lives inside the window, so clamp away the half-cell overhang.
    let measure = (step * count_at_least(&coarse, threshold) as f64).min(2.0 * window);
    let refined = (step / 2.0 * count_at_least(&fine, threshold) as f64).min(2.0 * window);
    Ok(assemble_estimate(measure, refined, step))
}

/// One (t, c) cell of the estimated deviation profile.
#[derive(Debug, Clone, Copy)]
pub struct ProfileRow {
    pub t: f64,
    pub c: f64,
    pub leb: f64,
    /// (1/t) log leb; -inf when the grid sees an empty set.
    pub exponent: f64,
    pub under_resolved: bool,
}

#[derive(Debug, Clone)]
pub struct DeviationProfile {
    pub rows: Vec<ProfileRow>,
}

/// Estimates the profile over a (t, c) product grid, sharing the frequency
/// grid across all c for each t.
pub fn deviation_profile(
    system: &IfsSystem,
    t_list: &[f64],
    c_list: &[f64],
    step: f64,
    n: u32,
) -> Result<DeviationProfile> {
    let mut rows = Vec::with_capacity(t_list.len() * c_list.len());
    for &t in t_list {
        let window = window_checked(system, t, n)?;
        let coarse = abs_half_grid(system, n, window, step)?;
        let fine = abs_half_grid(system, n, window, step / 2.0)?;
        for &c in c_list {
            let threshold = (-c * t).exp();
            let measure = (step * count_at_least(&coarse, threshold) as f64).min(2.0 * window);
            let refined =
                (step / 2.0 * count_at_least(&fine, threshold) as f64).min(2.0 * window);
            let est = assemble_estimate(measure, refined, step);
            rows.push(ProfileRow {
                t,
                c,
                leb: est.measure,
                exponent: if est.measure > 0.0 {
                    est.measure.ln() / t
                } else {
                    f64::NEG_INFINITY
                },
                under_resolved: est.under_resolved,
            });
        }
    }
    Ok(DeviationProfile { rows })
}

/// Ordinary least-squares slope of ys against xs.
pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert!(xs.len() == ys.len() && xs.len() >= 2);
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let num: f64 = xs.iter().zip(ys).map(|(&x, &y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|&x| (x - mx) * (x - mx)).sum();
    num / den
}

/// Log-log fit of the windowed quadratic average of |F mu_n|.
#[derive(Debug, Clone)]
pub struct StrichartzFit {
    pub slope: f64,
    pub refined_slope: f64,
    pub under_resolved: bool,
    pub log_r: Vec<f64>,
    pub log_avg: Vec<f64>,
}

fn strichartz_slope(
    system: &IfsSystem,
    r_list: &[f64],
    n: u32,
    step: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let r_max = r_list.iter().cloned().fold(0.0, f64::max);
    let sq = abs_half_grid(system, n, r_max, step)?;
    // Prefix trapezoid integrals of |F|^2 over [0, k*step].
    let mut prefix = vec![0.0f64; sq.len()];
    for k in 1..sq.len() {
        prefix[k] = prefix[k - 1] + step * 0.5 * (sq[k - 1] * sq[k - 1] + sq[k] * sq[k]);
    }
    let mut log_r = Vec::with_capacity(r_list.len());
    let mut log_avg = Vec::with_capacity(r_list.len());
    for &r in r_list {
        let idx = ((r / step).round() as usize).clamp(1, sq.len() - 1);
        let rg = idx as f64 * step;
        // (1/2R) int_{-R}^{R} |F|^2 = (1/R) int_0^R |F|^2 by symmetry.
        log_r.push(rg.ln());
        log_avg.push((prefix[idx] / rg).ln());
    }
    Ok((log_r, log_avg))
}

/// Least-squares slope of log((1/2R) int_{-R}^{R} |F mu_n|^2) against log R.
///
/// Requires the radii to span at least three decades and the depth n to leave
/// only a negligible residual scale r_max * (max |a|)^n at the window edge,
/// so that F mu_n stands in for F mu across the whole fit range.
pub fn strichartz_average(
    system: &IfsSystem,
    r_list: &[f64],
    n: u32,
    step: f64,
) -> Result<StrichartzFit> {
    if r_list.len() < 3 || r_list.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::InvalidParameter(
            "strichartz needs >= 3 positive radii".into(),
        ));
    }
    let r_min = r_list.iter().cloned().fold(f64::INFINITY, f64::min);
    let r_max = r_list.iter().cloned().fold(0.0, f64::max);
    if r_max / r_min < 999.0 {
        return Err(Error::InvalidParameter(format!(
            "radii span only a factor {:.3}; need >= 3 decades",
            r_max / r_min
        )));
    }
    let residual = r_max * system.max_scale().powi(n as i32);
    if residual > 0.1 {
        return Err(Error::DepthTooShallow { n, residual });
    }
    let (log_r, log_avg) = strichartz_slope(system, r_list, n, step)?;
    let slope = least_squares_slope(&log_r, &log_avg);
    let (lr2, la2) = strichartz_slope(system, r_list, n, step / 2.0)?;
    let refined_slope = least_squares_slope(&lr2, &la2);
    Ok(StrichartzFit {
        slope,
        refined_slope,
        under_resolved: (slope - refined_slope).abs() > RICHARDSON_TOL,
        log_r,
        log_avg,
    })
}

// ---------------------------------------------------------------------------
// Word-product statistics
// ---------------------------------------------------------------------------

/// Which tail of the contraction-product distribution to measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailSide {
    /// |a_w| <= e^{(chi - delta) n}: contracted much more than typical.
    Lower,
    /// |a_w| >= e^{(chi + delta) n}: contracted much less than typical.
    Upper,
}

/// A word-statistic probability, exact when the class enumeration fit the
/// budget, with a standard error otherwise.
#[derive(Debug, Clone)]
pub struct WordTail {
    pub probability: f64,
    pub exact: Option<BigRational>,
    pub std_err: Option<f64>,
}

/// The tail threshold on |a_w| itself (not its log), shared with test oracles
/// so boundary comparisons agree bit-for-bit.
pub fn tail_threshold(system: &IfsSystem, n: u32, delta: f64, side: TailSide) -> f64 {
    let chi = lyapunov_exponent(system);
    match side {
        TailSide::Lower => ((chi - delta) * n as f64).exp(),
        TailSide::Upper => ((chi + delta) * n as f64).exp(),
    }
}

/// |a_w| for a letter-count class, multiplied in fixed letter order.
pub fn class_scale(system: &IfsSystem, counts: &[u16]) -> f64 {
    system
        .maps()
        .iter()
        .zip(counts)
        .map(|(m, &k)| m.a.abs().powi(k as i32))
        .product()
}

fn binomial_big(n: u32, k: u32) -> BigInt {
    let mut r = BigInt::one();
    for i in 0..k {
        r = r * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    r
}

fn multinomial_big(n: u32, counts: &[u16]) -> BigInt {
    let mut r = BigInt::one();
    let mut rem = n;
    for &k in counts {
        r *= binomial_big(rem, k as u32);
        rem -= k as u32;
    }
    r
}

fn class_count(m: usize, n: u32) -> f64 {
    // C(n + m - 1, m - 1) compositions of n into m parts.
    let mut c = 1.0f64;
    for t in 0..m - 1 {
        c *= (n as f64 + 1.0 + t as f64) / (t as f64 + 1.0);
    }
    c
}

fn for_each_composition<F: FnMut(&[u16])>(m: usize, n: u32, mut f: F) {
    let mut cur = vec![0u16; m];
    fn rec<F: FnMut(&[u16])>(cur: &mut Vec<u16>, pos: usize, left: u16, f: &mut F) {
        if pos + 1 == cur.len() {
            cur[pos] = left;
            f(cur);
            return;
        }
        for v in 0..=left {
            cur[pos] = v;
            rec(cur, pos + 1, left - v, f);
        }
    }
    rec(&mut cur, 0, n as u16, &mut f);
}

/// Exact probability, under the product measure on words of length n, of the
/// event pred(|a_w|). None when the class enumeration exceeds the budget.
fn class_sum<P: Fn(f64) -> bool>(system: &IfsSystem, n: u32, pred: P) -> Option<BigRational> {
    if class_count(system.len(), n) > CLASS_BUDGET {
        return None;
    }
    let p_exact: Vec<BigRational> = system
        .probs()
        .iter()
        .map(|&p| BigRational::from_float(p).expect("probabilities are finite"))
        .collect();
    let mut total = BigRational::zero();
    for_each_composition(system.len(), n, |counts| {
        if pred(class_scale(system, counts)) {
            let mut term = BigRational::from(multinomial_big(n, counts));
            for (p, &k) in p_exact.iter().zip(counts) {
                for _ in 0..k {
                    term *= p;
                }
            }
            total += term;
        }
    });
    Some(total)
}

/// Monte Carlo fallback over random words; reproducible for a fixed seed.
fn mc_tail<P: Fn(f64) -> bool>(system: &IfsSystem, n: u32, pred: P, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cumulative: Vec<f64> = system
        .probs()
        .iter()
        .scan(0.0, |acc, &p| {
            *acc += p;
            Some(*acc)
        })
        .collect();
    let mut hits = 0u64;
    for _ in 0..MC_SAMPLES {
        let mut prod = 1.0f64;
        for _ in 0..n {
            let u: f64 = rng.gen();
            let j = cumulative
                .iter()
                .position(|&c| u < c)
                .unwrap_or(system.len() - 1);
            prod *= system.maps()[j].a.abs();
        }
        hits += pred(prod) as u64;
    }
    let p = hits as f64 / MC_SAMPLES as f64;
    (p, (p * (1.0 - p) / MC_SAMPLES as f64).sqrt())
}

fn tail_of_pred<P: Fn(f64) -> bool + Copy>(system: &IfsSystem, n: u32, pred: P, seed: u64) -> WordTail {
    match class_sum(system, n, pred) {
        Some(exact) => WordTail {
            probability: exact.to_f64().unwrap_or(f64::NAN),
            exact: Some(exact),
            std_err: None,
        },
        None => {
            let (p, se) = mc_tail(system, n, pred, seed);
            WordTail {
                probability: p,
                exact: None,
                std_err: Some(se),
            }
        }
    }
}

/// Probability that the n-letter contraction product lands in the requested
/// tail, exact via multinomial letter-count classes when feasible.
pub fn word_tail_probability(
    system: &IfsSystem,
    n: u32,
    delta: f64,
    side: TailSide,
    seed: u64,
) -> WordTail {
    let thr = tail_threshold(system, n, delta, side);
    match side {
        TailSide::Lower => tail_of_pred(system, n, |a| a <= thr, seed),
        TailSide::Upper => tail_of_pred(system, n, |a| a >= thr, seed),
    }
}

/// Probability that |a_w| escapes the open band (r_hi^{-n}, r_lo^{-n}).
pub fn corollary_band_probability(system: &IfsSystem, n: u32, seed: u64) -> Result<WordTail> {
    let stats = contraction_band(system)?;
    let hi = (stats.r_lo as f64).powi(-(n as i32));
    let lo = (stats.r_hi as f64).powi(-(n as i32));
    Ok(tail_of_pred(system, n, |a| a >= hi || a <= lo, seed))
}

/// Band-miss probabilities over a range of depths with the fitted exponential
/// decay rate (None when fewer than two depths have positive probability).
pub fn corollary_band_rate(
    system: &IfsSystem,
    n_list: &[u32],
    seed: u64,
) -> Result<(Vec<f64>, Option<f64>)> {
    let mut probs = Vec::with_capacity(n_list.len());
    for &n in n_list {
        probs.push(corollary_band_probability(system, n, seed)?.probability);
    }
    let pts: Vec<(f64, f64)> = n_list
        .iter()
        .zip(&probs)
        .filter(|&(_, &p)| p > 0.0)
        .map(|(&n, &p)| (n as f64, p.ln()))
        .collect();
    let epsilon = if pts.len() >= 2 {
        let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        Some(-least_squares_slope(&xs, &ys))
    } else {
        None
    };
    Ok((probs, epsilon))
}

/// Both deviation tails and the band-miss probability at one depth.
#[derive(Debug, Clone)]
pub struct WordDeviation {
    pub n: u32,
    pub delta: f64,
    pub lower_tail: f64,
    pub upper_tail: f64,
    pub band_miss: f64,
}

pub fn word_deviation(system: &IfsSystem, n: u32, delta: f64, seed: u64) -> Result<WordDeviation> {
    Ok(WordDeviation {
        n,
        delta,
        lower_tail: word_tail_probability(system, n, delta, TailSide::Lower, seed).probability,
        upper_tail: word_tail_probability(system, n, delta, TailSide::Upper, seed).probability,
        band_miss: corollary_band_probability(system, n, seed)?.probability,
    })
}

// ---------------------------------------------------------------------------
// Closed-form bound
// ---------------------------------------------------------------------------

/// The explicit deviation bound assembled from the empirical constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoremBound {
    pub s: f64,
    pub eta: f64,
    pub kappa: u64,
    pub r_lo: u64,
    /// c_out = s * eta / log r_lo.
    pub c_out: f64,
    /// (s * (eta + log kappa) + 2) / log r_lo.
    pub bound: f64,
    /// The s -> 0 limit 2 / log r_lo.
    pub limit: f64,
}

pub fn theorem_bound(s: f64, eta: f64, kappa: u64, r_lo: u64) -> Result<TheoremBound> {
    if r_lo <= 1 {
        return Err(Error::DegenerateBand(r_lo));
    }
    if !(s >= 0.0) || !(eta > 0.0) || kappa < 1 {
        return Err(Error::InvalidParameter(format!(
            "need s >= 0, eta > 0, kappa >= 1 (s {s}, eta {eta}, kappa {kappa})"
        )));
    }
    let log_r = (r_lo as f64).ln();
    Ok(TheoremBound {
        s,
        eta,
        kappa,
        r_lo,
        c_out: s * eta / log_r,
        bound: (s * (eta + (kappa as f64).ln()) + 2.0) / log_r,
        limit: 2.0 / log_r,
    })
}
