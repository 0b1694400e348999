//! Evaluation of the Fourier transform of the level-n discrete measures
//! mu_n, the infinite-product form for homogeneous systems, the psi-sum
//! log-modulus approximation and a chaos-game Monte Carlo oracle.

use std::collections::HashMap;
use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ifs::{IfsSystem, ScaleClasses, BRANCH_BUDGET};
use crate::rate::psi;

/// Unit phasor e^{-i t} with the angle reduced modulo 2*pi first, so large
/// accumulated phases b_i * xi keep full precision.
fn phasor(t: f64) -> Complex64 {
    Complex64::from_polar(1.0, -t.rem_euclid(TAU))
}

/// Per-frequency evaluator for F mu_n, memoized on (depth, scale class counts).
///
/// The restriction of the recursion to a subtree depends only on the word
/// length and the accumulated a-product, so states are keyed by the vector of
/// per-scale-class letter counts. Homogeneous systems collapse to one state
/// per level.
pub struct FourierEvaluator<'a> {
    system: &'a IfsSystem,
    classes: ScaleClasses,
    memo: HashMap<(u32, Vec<u16>), Complex64>,
}

impl<'a> FourierEvaluator<'a> {
    pub fn new(system: &'a IfsSystem) -> FourierEvaluator<'a> {
        FourierEvaluator {
            system,
            classes: ScaleClasses::of(system),
            memo: HashMap::new(),
        }
    }

    fn state_budget(&self, n: u32) -> f64 {
        // States per level k: C(k + d - 1, d - 1) count vectors.
        let d = self.classes.values.len();
        let mut total = 0.0f64;
        for k in 0..=n {
            let mut c = 1.0f64;
            for t in 0..d.saturating_sub(1) {
                c *= (k as f64 + 1.0 + t as f64) / (t as f64 + 1.0);
            }
            total += c;
        }
        total
    }

    /// F mu_n(xi) = sum over words w of length n of p_w e^{-i b_w xi}.
    pub fn eval(&mut self, n: u32, xi: f64) -> Result<Complex64> {
        if xi == 0.0 {
            return Ok(Complex64::new(1.0, 0.0)); // probability normalization
        }
        if self.state_budget(n) > BRANCH_BUDGET {
            return Err(Error::BranchBudget {
                m: self.system.len(),
                n,
                words: self.state_budget(n),
            });
        }
        self.memo.clear();
        let counts = vec![0u16; self.classes.values.len()];
        Ok(self.rec(n, counts, xi))
    }

    fn rec(&mut self, remaining: u32, counts: Vec<u16>, xi: f64) -> Complex64 {
        if remaining == 0 {
            return Complex64::new(1.0, 0.0); // F delta_0 == 1
        }
        if let Some(&v) = self.memo.get(&(remaining, counts.clone())) {
            return v;
        }
        let scale = self.classes.product(&counts);
        let arg = scale * xi;
        let mut acc = Complex64::new(0.0, 0.0);
        for j in 0..self.system.len() {
            let map = self.system.maps()[j];
            let p = self.system.probs()[j];
            let mut child = counts.clone();
            child[self.classes.class_of[j]] += 1;
            let sub = self.rec(remaining - 1, child, xi);
            acc += p * phasor(map.b * arg) * sub;
        }
        self.memo.insert((remaining, counts), acc);
        acc
    }
}

/// One-shot evaluation of F mu_n at a single frequency.
pub fn fourier_mu_n(system: &IfsSystem, n: u32, xi: f64) -> Result<Complex64> {
    FourierEvaluator::new(system).eval(n, xi)
}

/// Truncated infinite product prod_{l=0}^{L-1} g(a^l xi) with
/// g(u) = sum p_j e^{-i b_j u}, valid for homogeneous systems only.
pub fn fourier_product(system: &IfsSystem, xi: f64, depth: u32) -> Result<Complex64> {
    let a = system.maps()[0].a;
    if system.maps().iter().any(|m| m.a != a) {
        return Err(Error::HeterogeneousScales);
    }
    let mut out = Complex64::new(1.0, 0.0);
    let mut u = xi;
    for _ in 0..depth {
        let mut g = Complex64::new(0.0, 0.0);
        for (map, &p) in system.maps().iter().zip(system.probs()) {
            g += p * phasor(map.b * u);
        }
        out *= g;
        u *= a;
    }
    Ok(out)
}

/// Monte Carlo estimate of F mu(xi) along a random orbit.
#[derive(Debug, Clone, Copy)]
pub struct ChaosEstimate {
    pub value: Complex64,
    pub std_err: f64,
    pub samples: u64,
}

const CHAOS_BURN_IN: usize = 100;

/// Averages e^{-i xi x_k} over a random orbit of the system after a 100-step
/// burn-in; reproducible for a fixed seed.
pub fn fourier_chaos_game(system: &IfsSystem, xi: f64, samples: u64, seed: u64) -> ChaosEstimate {
    assert!(samples >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cumulative: Vec<f64> = system
        .probs()
        .iter()
        .scan(0.0, |acc, &p| {
            *acc += p;
            Some(*acc)
        })
        .collect();
    let mut x = 0.0f64;
    let step = |x: &mut f64, rng: &mut ChaCha8Rng| {
        let u: f64 = rng.gen();
        let j = cumulative.iter().position(|&c| u < c).unwrap_or(system.len() - 1);
        *x = system.maps()[j].apply(*x);
    };
    for _ in 0..CHAOS_BURN_IN {
        step(&mut x, &mut rng);
    }
    let mut sum = Complex64::new(0.0, 0.0);
    let mut sum_sq_re = 0.0f64;
    let mut sum_sq_im = 0.0f64;
    for _ in 0..samples {
        step(&mut x, &mut rng);
        let z = phasor(xi * x);
        sum += z;
        sum_sq_re += z.re * z.re;
        sum_sq_im += z.im * z.im;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = ((sum_sq_re - n * mean.re * mean.re) + (sum_sq_im - n * mean.im * mean.im))
        .max(0.0)
        / (n - 1.0).max(1.0);
    ChaosEstimate {
        value: mean,
        std_err: (var / n).sqrt(),
        samples,
    }
}

/// Partial sum sum_{l=1..N} psi(3^{-l} xi) approximating log |F mu(xi)| for
/// the middle-third Cantor measure in standard coordinates. Returns -inf when a
/// term hits a singularity.
pub fn log_modulus_psi_sum(xi: f64, terms: u32) -> f64 {
    let mut sum = 0.0;
    let mut u = xi;
    for _ in 0..terms {
        u /= 3.0;
        let t = psi(u);
        if t == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        sum += t;
    }
    sum
}

/// Birkhoff average (1/N) sum psi(3^l theta mod 2 pi) along the x3 orbit,
/// with angles reduced into (-pi, pi]. Returns -inf if the orbit hits a
/// singularity.
pub fn birkhoff_average(theta: f64, steps: u32) -> f64 {
    assert!(steps >= 1);
    let mut t = theta;
    let mut sum = 0.0;
    for _ in 0..steps {
        let v = psi(t);
        if v == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        sum += v;
        t *= 3.0;
        t = t.rem_euclid(TAU);
        if t > std::f64::consts::PI {
            t -= TAU;
        }
    }
    sum / steps as f64
}

/// F mu_n sampled on a uniform frequency grid.
#[derive(Debug, Clone)]
pub struct SpectrumGrid {
    pub xi_min: f64,
    pub xi_max: f64,
    pub step: f64,
    pub n: u32,
    pub points: Vec<f64>,
    pub values: Vec<Complex64>,
}

impl SpectrumGrid {
    /// Fills the grid in parallel; per-point evaluation is independent, so
    /// the result does not depend on the thread count.
    pub fn compute(system: &IfsSystem, n: u32, xi_min: f64, xi_max: f64, step: f64) -> Result<SpectrumGrid> {
        if !(step > 0.0) || xi_max < xi_min {
            return Err(Error::InvalidParameter(format!(
                "bad grid: [{xi_min}, {xi_max}] step {step}"
            )));
        }
        let count = ((xi_max - xi_min) / step).round() as usize + 1;
        let points: Vec<f64> = (0..count).map(|k| xi_min + k as f64 * step).collect();
        // Probe once so budget errors surface before the parallel fill.
        fourier_mu_n(system, n, points[0])?;
        let values: Vec<Complex64> = points
            .par_iter()
            .map(|&xi| FourierEvaluator::new(system).eval(n, xi).expect("budget checked"))
            .collect();
        Ok(SpectrumGrid {
            xi_min,
            xi_max,
            step,
            n,
            points,
            values,
        })
    }
}

/// sup over the given frequencies of |F mu_{n+delta} - F mu_n|, a proxy for
/// the distance to the limit transform.
pub fn mu_n_convergence(system: &IfsSystem, n: u32, delta_n: u32, xis: &[f64]) -> Result<f64> {
    let sups: Vec<f64> = xis
        .par_iter()
        .map(|&xi| -> Result<f64> {
            let mut ev = FourierEvaluator::new(system);
            let lo = ev.eval(n, xi)?;
            let hi = ev.eval(n + delta_n, xi)?;
            Ok((hi - lo).norm())
        })
        .collect::<Result<_>>()?;
    Ok(sups.into_iter().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ifs::{build_system, cantor_normalized, cantor_standard};
    use std::f64::consts::PI;

    #[test]
    fn depth_zero_is_one() {
        let sys = cantor_standard();
        for xi in [0.0, 1.0, -17.5, 3000.0] {
            let v = fourier_mu_n(&sys, 0, xi).unwrap();
            assert_eq!(v, Complex64::new(1.0, 0.0));
        }
    }

    #[test]
    fn normalized_cantor_depth_one_vanishes_at_pi() {
        let sys = cantor_normalized();
        let v = fourier_mu_n(&sys, 1, PI).unwrap();
        assert!(v.norm() < 1e-15, "{v}");
    }

    #[test]
    fn value_at_zero_is_exactly_one() {
        let sys = build_system(&[(0.5, 0.0), (0.25, 0.75)], &[0.3, 0.7]).unwrap();
        for n in [1, 5, 9] {
            assert_eq!(fourier_mu_n(&sys, n, 0.0).unwrap(), Complex64::new(1.0, 0.0));
        }
    }

    #[test]
    fn product_first_factor_zero() {
        let sys = cantor_standard();
        for depth in [1, 4, 12] {
            let v = fourier_product(&sys, 1.5 * PI, depth).unwrap();
            assert!(v.norm() < 1e-14, "depth {depth}: {v}");
        }
        assert_eq!(fourier_product(&sys, 0.0, 30).unwrap(), Complex64::new(1.0, 0.0));
    }

    #[test]
    fn product_rejects_heterogeneous_scales() {
        let sys = build_system(&[(0.5, 0.0), (0.25, 0.75)], &[0.5, 0.5]).unwrap();
        assert!(matches!(
            fourier_product(&sys, 1.0, 5),
            Err(Error::HeterogeneousScales)
        ));
    }

    #[test]
    fn recursion_matches_product_for_homogeneous_system() {
        let sys = cantor_standard();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let xi: f64 = rng.gen_range(-1e4..1e4);
            for n in [1u32, 3, 8] {
                let a = fourier_mu_n(&sys, n, xi).unwrap();
                let b = fourier_product(&sys, xi, n).unwrap();
                assert!((a - b).norm() < 1e-12, "xi {xi} n {n}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn recursion_consistency_one_step() {
        let sys = build_system(&[(0.5, 0.0), (0.25, 0.75)], &[0.5, 0.5]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let xi: f64 = rng.gen_range(-500.0..500.0);
            let n = rng.gen_range(0u32..12);
            let whole = fourier_mu_n(&sys, n + 1, xi).unwrap();
            let mut sum = Complex64::new(0.0, 0.0);
            for (map, &p) in sys.maps().iter().zip(sys.probs()) {
                sum += p * phasor(map.b * xi) * fourier_mu_n(&sys, n, map.a * xi).unwrap();
            }
            assert!((whole - sum).norm() < 1e-12);
        }
    }

    #[test]
    fn modulus_bounded_and_conjugate_symmetric() {
        let sys = build_system(&[(0.4, 0.0), (0.3, 0.9)], &[0.6, 0.4]).unwrap();
        let grid = SpectrumGrid::compute(&sys, 8, -40.0, 40.0, 0.5).unwrap();
        let k = grid.points.len();
        for (i, v) in grid.values.iter().enumerate() {
            assert!(v.norm() <= 1.0 + 1e-12);
            let mirror = grid.values[k - 1 - i];
            assert!((v.conj() - mirror).norm() < 1e-10);
        }
        // xi = 0 lies on this grid and carries the exact value 1.
        assert_eq!(grid.values[k / 2], Complex64::new(1.0, 0.0));
    }

    #[test]
    fn chaos_game_is_exact_at_zero_and_reproducible() {
        let sys = cantor_standard();
        let est = fourier_chaos_game(&sys, 0.0, 5000, 42);
        assert_eq!(est.value, Complex64::new(1.0, 0.0));
        let a = fourier_chaos_game(&sys, 2.5, 5000, 9);
        let b = fourier_chaos_game(&sys, 2.5, 5000, 9);
        assert_eq!(a.value, b.value);
    }

    #[test]
    fn chaos_game_matches_product_formula() {
        let sys = cantor_standard();
        // Exact zero of F mu.
        let est = fourier_chaos_game(&sys, 1.5 * PI, 1_000_000, 0);
        assert!(est.value.norm() <= 3.0 * est.std_err, "{:?}", est);
        // Generic point against the truncated product.
        let est = fourier_chaos_game(&sys, PI, 1_000_000, 1);
        let exact = fourier_product(&sys, PI, 40).unwrap();
        assert!((est.value - exact).norm() <= 3.0 * est.std_err, "{:?} vs {exact}", est);
    }

    #[test]
    fn psi_sum_examples() {
        assert_eq!(log_modulus_psi_sum(0.0, 10), 0.0);
        assert_eq!(log_modulus_psi_sum(1.5 * PI, 4), f64::NEG_INFINITY);
        // Finite generic value agrees with the product log-modulus up to the tail.
        let xi = 87.3;
        let s = log_modulus_psi_sum(xi, 30);
        let p = fourier_product(&cantor_standard(), xi, 30).unwrap().norm().ln();
        assert!((s - p).abs() < 1e-9);
    }

    #[test]
    fn birkhoff_fixed_point_and_space_average() {
        assert_eq!(birkhoff_average(0.0, 1000), 0.0);
        // Ergodic averages cluster around -log 2 for Lebesgue-typical angles.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut hits = 0;
        for _ in 0..100 {
            let theta: f64 = rng.gen_range(-PI..PI);
            let avg = birkhoff_average(theta, 100_000);
            if (avg + 2f64.ln()).abs() < 0.01 {
                hits += 1;
            }
        }
        assert!(hits >= 95, "only {hits}/100 within 0.01 of -log 2");
    }

    #[test]
    fn space_average_by_quadrature_is_minus_log2() {
        // Mean of log |cos| over a period, via midpoint quadrature refined
        // near the singularities (integrable log divergence).
        let m = 4_000_000u64;
        let mut sum = 0.0;
        for i in 0..m {
            let x = PI * (i as f64 + 0.5) / m as f64;
            sum += psi(x);
        }
        let mean = sum / m as f64;
        assert!((mean + 2f64.ln()).abs() < 1e-5, "{mean}");
    }

    #[test]
    fn convergence_proxy_examples() {
        let sys = cantor_standard();
        let xis: Vec<f64> = (0..200).map(|k| k as f64 * 0.31).collect();
        assert_eq!(mu_n_convergence(&sys, 6, 0, &xis).unwrap(), 0.0);
        let d6 = mu_n_convergence(&sys, 6, 5, &xis).unwrap();
        let d8 = mu_n_convergence(&sys, 8, 5, &xis).unwrap();
        assert!(d8 < d6);
    }
}
