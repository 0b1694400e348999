//! The X/Y envelope recursion over word classes, nested frequency
//! partitions, and empirical verification of the log-Lipschitz bound and the
//! per-interval contraction inequality, yielding an estimate of the
//! contraction gap eta.

use std::collections::HashMap;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fourier::{fourier_mu_n, FourierEvaluator};
use crate::ifs::{
    compose_word, contraction_band, ensure_small_scales, normalize_coordinates, IfsSystem,
    ScaleClasses, Word,
};

/// Discretization slack applied to the continuum Lipschitz and ratio bounds.
pub const LIPSCHITZ_SLACK: f64 = 1.1;

/// A subinterval counts as exceptional when the contraction ratio reaches 1
/// within this tolerance (interpolation can blur exact equality at xi = 0).
pub const EXCEPTION_TOL: f64 = 1e-9;

/// Grid points across all envelope levels before the builder refuses.
const GRID_BUDGET: f64 = 5e7;

/// Normalizes the coordinates and iterates the system until max |a_i| < 1/2,
/// returning the prepared system and the iteration factor used (1 if none).
/// Both the envelope and the partitions must be built from the same prepared
/// system; this function is deterministic, so calling it twice is safe.
pub fn prepare_system(system: &IfsSystem) -> Result<(IfsSystem, u32)> {
    let sys = if system.is_normalized() {
        system.clone()
    } else {
        normalize_coordinates(system)?.0
    };
    ensure_small_scales(&sys)
}

/// Sampled X (complex) and Y (real) for one (length, scale-class) word class,
/// on the uniform grid i*h for i = -k_half ..= k_half covering
/// I = [-|a| * r_lo^n, |a| * r_lo^n].
#[derive(Debug, Clone)]
pub struct ClassEntry {
    pub counts: Vec<u16>,
    pub a_abs: f64,
    pub half_width: f64,
    pub x: Vec<Complex64>,
    pub y: Vec<f64>,
}

impl ClassEntry {
    pub fn k_half(&self) -> i64 {
        (self.x.len() as i64 - 1) / 2
    }

    pub fn xi_at(&self, idx: usize, h: f64) -> f64 {
        (idx as i64 - self.k_half()) as f64 * h
    }

    fn interp_base(&self, xi: f64, h: f64) -> (usize, f64) {
        let t = xi / h + self.k_half() as f64;
        let hi = self.x.len() - 2;
        let i0 = (t.floor() as i64).clamp(0, hi as i64) as usize;
        let frac = (t - i0 as f64).clamp(0.0, 1.0);
        (i0, frac)
    }

    /// Linear interpolation of Y, clamped to the grid range.
    pub fn y_at(&self, xi: f64, h: f64) -> f64 {
        let (i, f) = self.interp_base(xi, h);
        self.y[i] * (1.0 - f) + self.y[i + 1] * f
    }

    /// Linear interpolation of X, clamped to the grid range.
    pub fn x_at(&self, xi: f64, h: f64) -> Complex64 {
        let (i, f) = self.interp_base(xi, h);
        self.x[i] * (1.0 - f) + self.x[i + 1] * f
    }
}

/// The full envelope: level k holds one entry per scale-class count vector
/// of total k; level n is the constant function 1 and level 0 majorizes
/// |F mu_n| on [-r_lo^n, r_lo^n].
#[derive(Debug, Clone)]
pub struct EnvelopeTable {
    pub system: IfsSystem,
    pub n: u32,
    pub r_lo: u64,
    pub h: f64,
    /// Iteration factor applied while preparing the system.
    pub iterate_factor: u32,
    pub levels: Vec<Vec<ClassEntry>>,
    class_of: Vec<usize>,
    index: Vec<HashMap<Vec<u16>, usize>>,
}

impl EnvelopeTable {
    pub fn lipschitz_constant(&self) -> f64 {
        2.0 / (1.0 - 2.0 * self.system.max_scale())
    }

    /// Bound on Y-ratios over windows of length 2 * max |a_i| inside one
    /// class interval (the windows arising from rescaled unit-scale cells).
    pub fn alpha(&self) -> f64 {
        let a = self.system.max_scale();
        (4.0 * a / (1.0 - 2.0 * a)).exp()
    }

    pub fn entry(&self, k: usize, counts: &[u16]) -> Option<&ClassEntry> {
        let &i = self.index[k].get(counts)?;
        Some(&self.levels[k][i])
    }

    fn counts_of_word(&self, word: &Word) -> Vec<u16> {
        let d = self.index[0].keys().next().map_or(0, |v| v.len());
        let mut counts = vec![0u16; d];
        for &l in &word.0 {
            counts[self.class_of[l]] += 1;
        }
        counts
    }

    pub fn entry_for_word(&self, word: &Word) -> Option<&ClassEntry> {
        self.entry(word.len(), &self.counts_of_word(word))
    }

    /// The entry for i·j given the entry class of i at level k.
    fn child(&self, k: usize, counts: &[u16], letter: usize) -> &ClassEntry {
        let mut c = counts.to_vec();
        c[self.class_of[letter]] += 1;
        self.entry(k + 1, &c).expect("child class exists")
    }

    /// Y_i(xi)^2 / sum_j p_j Y_{i·j}(a_j xi)^2 for the class of a level-k
    /// entry; at most 1 up to interpolation error, by Cauchy-Schwarz.
    pub fn contraction_ratio(&self, k: usize, counts: &[u16], xi: f64) -> f64 {
        let parent = self.entry(k, counts).expect("parent class exists");
        let yp = parent.y_at(xi, self.h);
        let mut denom = 0.0;
        for (j, (map, &p)) in self
            .system
            .maps()
            .iter()
            .zip(self.system.probs())
            .enumerate()
        {
            let yc = self.child(k, counts, j).y_at(map.a * xi, self.h);
            denom += p * yc * yc;
        }
        yp * yp / denom
    }
}

/// Builds the envelope by sampling X = F mu_{n-k} on each class interval and
/// running the max-recursion downward from the constant level k = n.
pub fn envelope_recursion(system: &IfsSystem, n: u32, h: f64) -> Result<EnvelopeTable> {
    let (sys, iterate_factor) = prepare_system(system)?;
    if !(h > 0.0) || n == 0 {
        return Err(Error::InvalidParameter(format!(
            "envelope needs h > 0 and n >= 1 (h {h}, n {n})"
        )));
    }
    let lipschitz = 2.0 / (1.0 - 2.0 * sys.max_scale());
    // Interpolation error is ~ (h/2) * L * Y; refuse when it could reach 10%
    // of the local value and flip inequality verdicts.
    if h * lipschitz / 2.0 > 0.1 {
        return Err(Error::GridTooCoarse { h, lipschitz });
    }
    let stats = contraction_band(&sys)?;
    let r_pow = (stats.r_lo as f64).powi(n as i32);
    let classes = ScaleClasses::of(&sys);
    let count_sets: Vec<Vec<Vec<u16>>> = (0..=n).map(|k| classes.count_vectors(k as u16)).collect();
    let total_points: f64 = count_sets
        .iter()
        .flatten()
        .map(|c| 2.0 * classes.product(c).abs() * r_pow / h + 3.0)
        .sum();
    if total_points > GRID_BUDGET {
        return Err(Error::InvalidParameter(format!(
            "envelope grid needs {total_points:.3e} samples; reduce n or raise h"
        )));
    }
    fourier_mu_n(&sys, n, h)?; // surface branch-budget errors once
    let mut levels: Vec<Vec<ClassEntry>> = Vec::with_capacity(n as usize + 1);
    let mut index: Vec<HashMap<Vec<u16>, usize>> = Vec::with_capacity(n as usize + 1);
    for (k, counts_list) in count_sets.iter().enumerate() {
        let mut level = Vec::with_capacity(counts_list.len());
        let mut idx = HashMap::new();
        for counts in counts_list {
            let a_abs = classes.product(counts).abs();
            let half_width = a_abs * r_pow;
            let k_half = (half_width / h).ceil().max(1.0) as i64;
            let depth = n - k as u32;
            let x: Vec<Complex64> = (-k_half..=k_half)
                .into_par_iter()
                .map(|i| {
                    FourierEvaluator::new(&sys)
                        .eval(depth, i as f64 * h)
                        .expect("budget checked")
                })
                .collect();
            idx.insert(counts.clone(), level.len());
            level.push(ClassEntry {
                counts: counts.clone(),
                a_abs,
                half_width,
                x,
                y: Vec::new(),
            });
        }
        levels.push(level);
        index.push(idx);
    }
    for entry in &mut levels[n as usize] {
        entry.y = vec![1.0; entry.x.len()];
    }
    for k in (0..n as usize).rev() {
        let (head, tail) = levels.split_at_mut(k + 1);
        let children = &tail[0];
        for entry in &mut head[k] {
            let kids: Vec<&ClassEntry> = (0..sys.len())
                .map(|j| {
                    let mut c = entry.counts.clone();
                    c[classes.class_of[j]] += 1;
                    &children[index[k + 1][&c]]
                })
                .collect();
            let k_half = entry.k_half();
            entry.y = (0..entry.x.len())
                .into_par_iter()
                .map(|i| {
                    let xi = (i as i64 - k_half) as f64 * h;
                    let mut s = 0.0;
                    for (j, (map, &p)) in sys.maps().iter().zip(sys.probs()).enumerate() {
                        s += p * kids[j].y_at(map.a * xi, h);
                    }
                    (0.5 * s).max(entry.x[i].norm())
                })
                .collect();
        }
    }
    Ok(EnvelopeTable {
        system: sys,
        n,
        r_lo: stats.r_lo,
        h,
        iterate_factor,
        levels,
        class_of: classes.class_of,
        index,
    })
}

/// One flagged sample in a verification report.
#[derive(Debug, Clone, Serialize)]
pub struct SampleRef {
    pub level: usize,
    pub class: usize,
    pub index: usize,
    pub value: f64,
    pub allowed: f64,
}

/// Outcome of the difference-quotient and window-ratio checks.
#[derive(Debug, Clone, Serialize)]
pub struct LipschitzReport {
    pub lipschitz: f64,
    pub alpha: f64,
    pub slack: f64,
    pub x_violations: Vec<SampleRef>,
    pub y_violations: Vec<SampleRef>,
    pub alpha_violations: Vec<SampleRef>,
}

impl LipschitzReport {
    pub fn clean(&self) -> bool {
        self.x_violations.is_empty()
            && self.y_violations.is_empty()
            && self.alpha_violations.is_empty()
    }
}

/// Checks |dX| <= L*Y*slack and |dY| <= L*Y*slack on adjacent samples inside
/// each class interval, and that Y varies by at most alpha*slack over windows
/// of length 2 * max |a_i|. Violations are report entries, not errors.
pub fn verify_lipschitz(table: &EnvelopeTable) -> LipschitzReport {
    let l = table.lipschitz_constant();
    let alpha = table.alpha();
    let h = table.h;
    let mut report = LipschitzReport {
        lipschitz: l,
        alpha,
        slack: LIPSCHITZ_SLACK,
        x_violations: Vec::new(),
        y_violations: Vec::new(),
        alpha_violations: Vec::new(),
    };
    let window = ((2.0 * table.system.max_scale() / h).floor() as usize).max(1);
    for (k, level) in table.levels.iter().enumerate() {
        for (ci, entry) in level.iter().enumerate() {
            let inside = |i: usize| entry.xi_at(i, h).abs() <= entry.half_width + 1e-12;
            for i in 0..entry.x.len() - 1 {
                if !inside(i) || !inside(i + 1) {
                    continue;
                }
                let allowed = l * entry.y[i].max(entry.y[i + 1]) * LIPSCHITZ_SLACK;
                let dx = (entry.x[i + 1] - entry.x[i]).norm() / h;
                if dx > allowed {
                    report.x_violations.push(SampleRef {
                        level: k,
                        class: ci,
                        index: i,
                        value: dx,
                        allowed,
                    });
                }
                let dy = (entry.y[i + 1] - entry.y[i]).abs() / h;
                if dy > allowed {
                    report.y_violations.push(SampleRef {
                        level: k,
                        class: ci,
                        index: i,
                        value: dy,
                        allowed,
                    });
                }
            }
            let allowed = alpha * LIPSCHITZ_SLACK;
            for start in 0..entry.y.len().saturating_sub(window) {
                if !inside(start) || !inside(start + window) {
                    continue;
                }
                let slice = &entry.y[start..=start + window];
                let hi = slice.iter().cloned().fold(0.0, f64::max);
                let lo = slice.iter().cloned().fold(f64::INFINITY, f64::min);
                if hi / lo > allowed {
                    report.alpha_violations.push(SampleRef {
                        level: k,
                        class: ci,
                        index: start,
                        value: hi / lo,
                        allowed,
                    });
                }
            }
        }
    }
    report
}

/// Nested partitions of [-r_lo^n, r_lo^n) by word class, with exact integer
/// breakpoints.
#[derive(Debug, Clone, Serialize)]
pub struct LevelPartition {
    pub counts: Vec<u16>,
    pub a_abs: f64,
    /// Power-of-two cell length; the whole window when a single interval.
    pub cell: i64,
    pub breakpoints: Vec<i64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PartitionFamily {
    pub n: u32,
    pub r_lo: u64,
    pub r_pow: i64,
    pub levels: Vec<Vec<LevelPartition>>,
}

/// Builds the partition family with cells of length 2^ceil(log2 |a|^{-1}),
/// aligned to multiples of the cell length from -r_lo^n.
///
/// Power-of-two cells lie in the required band [|a|^{-1}, 2|a|^{-1}) and make
/// every coarser level an exact union of finer cells, which keeps the nesting
/// property well-defined even when a class has several one-letter extensions.
pub fn build_partitions(system: &IfsSystem, n: u32) -> Result<PartitionFamily> {
    let (sys, _) = prepare_system(system)?;
    let stats = contraction_band(&sys)?;
    let r_pow_f = (stats.r_lo as f64).powi(n as i32);
    if r_pow_f > (1i64 << 40) as f64 {
        return Err(Error::InvalidParameter(format!(
            "window half-width {r_pow_f:.3e} exceeds the partition budget"
        )));
    }
    let r_pow = r_pow_f as i64;
    let classes = ScaleClasses::of(&sys);
    let mut levels = Vec::with_capacity(n as usize + 1);
    for k in 0..=n {
        let mut level = Vec::new();
        for counts in classes.count_vectors(k as u16) {
            let a_abs = classes.product(&counts).abs();
            let ell = 1.0 / a_abs;
            if ell >= 2.0 * r_pow as f64 {
                level.push(LevelPartition {
                    counts,
                    a_abs,
                    cell: 2 * r_pow,
                    breakpoints: vec![-r_pow, r_pow],
                });
                continue;
            }
            let cell = 1i64 << (ell.log2().ceil().max(0.0) as u32);
            if cell as f64 >= 2.0 * r_pow as f64 {
                level.push(LevelPartition {
                    counts,
                    a_abs,
                    cell: 2 * r_pow,
                    breakpoints: vec![-r_pow, r_pow],
                });
                continue;
            }
            let mut breakpoints: Vec<i64> = Vec::new();
            let mut b = -r_pow;
            while b < r_pow {
                breakpoints.push(b);
                b += cell;
            }
            breakpoints.push(r_pow);
            // A truncated right tail (window not a multiple of the cell) is
            // merged into its neighbour; the merge must stay within twice the
            // target length or no valid partition exists on this grid.
            let m = breakpoints.len();
            if m >= 3 {
                let tail = breakpoints[m - 1] - breakpoints[m - 2];
                if (tail as f64) < ell {
                    breakpoints.remove(m - 2);
                    let merged = breakpoints[m - 2] - breakpoints[m - 3];
                    if merged as f64 > 2.0 * ell {
                        return Err(Error::BandUnachievable {
                            level: k as usize,
                            cell,
                            target: ell,
                        });
                    }
                }
            }
            level.push(LevelPartition {
                counts,
                a_abs,
                cell,
                breakpoints,
            });
        }
        levels.push(level);
    }
    Ok(PartitionFamily {
        n,
        r_lo: stats.r_lo,
        r_pow,
        levels,
    })
}

/// Verdict for one interval of a child-class partition, decomposed into
/// N >= 3 consecutive cells of the parent partition.
#[derive(Debug, Clone, Serialize)]
pub struct ParentRecord {
    pub level: usize,
    pub class: usize,
    pub letter: usize,
    pub interval: (i64, i64),
    pub subintervals: usize,
    /// Cells whose worst contraction ratio reaches 1.
    pub exceptions: usize,
    /// -log of the third-largest per-cell ratio (0 when >= 3 cells fail).
    pub eta: f64,
}

/// Result of sweeping the contraction inequality over all partitioned
/// parent/child pairs.
#[derive(Debug, Clone, Serialize)]
pub struct ExceptionReport {
    pub n: u32,
    pub h: f64,
    pub alpha: f64,
    /// min over active parents of the per-parent eta; None when every parent
    /// was vacuous (fewer than 3 subintervals).
    pub eta: Option<f64>,
    pub max_exceptions: usize,
    pub active_parents: usize,
    pub vacuous_parents: usize,
    pub theta_min_one_minus_cos: Option<f64>,
    pub theta_mean_one_minus_cos: Option<f64>,
    pub parents: Vec<ParentRecord>,
}

/// Evaluates, for every child-partition interval split into parent cells,
/// whether Y_i^2 <= e^{-eta} sum_j p_j Y_{i·j}(a_j ·)^2 holds on each rescaled
/// cell with at most two exceptions, and estimates the largest workable eta.
///
/// Rescaling uses |a_{i·j}|; X and Y are even in xi, so a sign flip only
/// mirrors the cell pattern and changes no count.
pub fn verify_main_estimate(
    table: &EnvelopeTable,
    partitions: &PartitionFamily,
) -> Result<ExceptionReport> {
    if table.n != partitions.n
        || table.r_lo != partitions.r_lo
        || table.levels.len() != partitions.levels.len()
        || table
            .levels
            .iter()
            .zip(&partitions.levels)
            .any(|(a, b)| a.len() != b.len())
    {
        return Err(Error::InvalidParameter(
            "envelope table and partitions disagree; build both for the same system and n".into(),
        ));
    }
    let sys = &table.system;
    let h = table.h;
    let (j1, j2) = (0, sys.len() - 1); // offsets 0 and 1 after normalization
    let mut parents = Vec::new();
    let mut vacuous = 0usize;
    let mut theta_min = f64::INFINITY;
    let mut theta_sum = 0.0f64;
    let mut theta_count = 0u64;
    for k in 0..table.n as usize {
        for (ci, parent_part) in partitions.levels[k].iter().enumerate() {
            for j in 0..sys.len() {
                let mut child_counts = parent_part.counts.clone();
                child_counts[table.class_of[j]] += 1;
                let child_ci = table.index[k + 1][&child_counts];
                let child_part = &partitions.levels[k + 1][child_ci];
                let scale = child_part.a_abs;
                for win in child_part.breakpoints.windows(2) {
                    let (lo, hi) = (win[0], win[1]);
                    // Parent cells inside [lo, hi]; nesting makes these exact.
                    let cells: Vec<(i64, i64)> = parent_part
                        .breakpoints
                        .windows(2)
                        .filter(|w| w[0] >= lo && w[1] <= hi)
                        .map(|w| (w[0], w[1]))
                        .collect();
                    if cells.len() <= 2 {
                        vacuous += 1;
                        continue;
                    }
                    let mut scores = Vec::with_capacity(cells.len());
                    for &(plo, phi) in &cells {
                        let (a, b) = (scale * plo as f64, scale * phi as f64);
                        let samples = (((b - a) / h).ceil() as usize).max(4);
                        let mut worst = 0.0f64;
                        for s in 0..samples {
                            let xi = a + (s as f64 + 0.5) * (b - a) / samples as f64;
                            let ratio = table.contraction_ratio(k, &parent_part.counts, xi);
                            worst = worst.max(ratio);
                            // Phase-difference diagnostic between the extreme
                            // offsets: T_j u(xi) = e^{-i b_j xi} u(a_j xi).
                            let t = |j: usize| {
                                let map = sys.maps()[j];
                                let x = table.child(k, &parent_part.counts, j).x_at(map.a * xi, h);
                                (Complex64::from_polar(1.0, -map.b * xi) * x).arg()
                            };
                            let omc = 1.0 - (t(j1) - t(j2)).cos();
                            theta_min = theta_min.min(omc);
                            theta_sum += omc;
                            theta_count += 1;
                        }
                        scores.push(worst);
                    }
                    let exceptions = scores.iter().filter(|&&r| r >= 1.0 - EXCEPTION_TOL).count();
                    let mut sorted = scores.clone();
                    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
                    let eta = (-sorted[2].ln()).max(0.0);
                    parents.push(ParentRecord {
                        level: k,
                        class: ci,
                        letter: j,
                        interval: (lo, hi),
                        subintervals: cells.len(),
                        exceptions,
                        eta,
                    });
                }
            }
        }
    }
    let eta = parents
        .iter()
        .map(|p| p.eta)
        .fold(f64::INFINITY, f64::min);
    Ok(ExceptionReport {
        n: table.n,
        h,
        alpha: table.alpha(),
        eta: if parents.is_empty() { None } else { Some(eta) },
        max_exceptions: parents.iter().map(|p| p.exceptions).max().unwrap_or(0),
        active_parents: parents.len(),
        vacuous_parents: vacuous,
        theta_min_one_minus_cos: (theta_count > 0).then(|| theta_min),
        theta_mean_one_minus_cos: (theta_count > 0).then(|| theta_sum / theta_count as f64),
        parents,
    })
}

/// eta if the contraction inequality holds at xi for the given word with the
/// supplied eta, 0 otherwise.
pub fn r_indicator(table: &EnvelopeTable, eta: f64, xi: f64, word: &Word) -> Result<f64> {
    let k = word.len();
    if k >= table.n as usize {
        return Err(Error::InvalidParameter(format!(
            "word length {k} has no children below depth {}",
            table.n
        )));
    }
    let entry = table
        .entry_for_word(word)
        .ok_or_else(|| Error::InvalidParameter("word letters out of range".into()))?;
    if xi.abs() > entry.half_width + 1e-12 {
        return Err(Error::OutsideInterval {
            xi,
            half_width: entry.half_width,
        });
    }
    let counts = entry.counts.clone();
    let ratio = table.contraction_ratio(k, &counts, xi);
    Ok(if ratio <= (-eta).exp() { eta } else { 0.0 })
}

/// Sum of the indicator over the suffixes of a depth-n word at the rescaled
/// frequencies, the per-word contraction budget at xi. A zero sum marks xi as
/// a candidate member of the slow-decay set.
pub fn r_sum_along_word(table: &EnvelopeTable, eta: f64, xi: f64, word: &Word) -> Result<f64> {
    if word.len() != table.n as usize {
        return Err(Error::InvalidParameter(format!(
            "need a word of length {}, got {}",
            table.n,
            word.len()
        )));
    }
    let mut sum = 0.0;
    for k in 2..=word.len() + 1 {
        let suffix = word.suffix(k);
        let map = compose_word(&table.system, &suffix);
        sum += r_indicator(table, eta, map.a * xi, &suffix)?;
    }
    Ok(sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ifs::{build_system, cantor_standard};

    fn cantor_table(n: u32) -> EnvelopeTable {
        envelope_recursion(&cantor_standard(), n, 0.02).unwrap()
    }

    #[test]
    fn top_level_is_one_and_center_is_one_everywhere() {
        let table = cantor_table(6);
        assert_eq!(table.iterate_factor, 1);
        for entry in &table.levels[6] {
            assert!(entry.y.iter().all(|&v| v == 1.0));
        }
        for level in &table.levels {
            for entry in level {
                let c = entry.k_half() as usize;
                assert_eq!(entry.x[c], Complex64::new(1.0, 0.0));
                assert_eq!(entry.y[c], 1.0);
            }
        }
    }

    #[test]
    fn envelope_majorizes_the_transform() {
        let table = cantor_table(6);
        let root = &table.levels[0][0];
        for (i, &y) in root.y.iter().enumerate() {
            assert!(root.x[i].norm() <= y + 1e-12);
            assert!(y <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn sandwich_inequality_holds_at_samples() {
        let table = cantor_table(6);
        let sys = &table.system;
        for k in 0..6 {
            for entry in &table.levels[k] {
                for i in 0..entry.y.len() {
                    let xi = entry.xi_at(i, table.h);
                    if xi.abs() > entry.half_width {
                        continue;
                    }
                    let s: f64 = sys
                        .maps()
                        .iter()
                        .zip(sys.probs())
                        .enumerate()
                        .map(|(j, (map, &p))| {
                            p * table.child(k, &entry.counts, j).y_at(map.a * xi, table.h)
                        })
                        .sum();
                    let slack = 1e-9 + 0.01 * entry.y[i];
                    assert!(0.5 * s <= entry.y[i] + slack, "k {k} i {i}");
                    assert!(entry.y[i] <= s + slack, "k {k} i {i}");
                }
            }
        }
    }

    #[test]
    fn coarse_grid_is_rejected() {
        assert!(matches!(
            envelope_recursion(&cantor_standard(), 6, 0.2),
            Err(Error::GridTooCoarse { .. })
        ));
    }

    #[test]
    fn partitions_unit_level_and_band() {
        let parts = build_partitions(&cantor_standard(), 3).unwrap(); // window 8
        let root = &parts.levels[0][0];
        assert_eq!(root.breakpoints.len(), 17); // 16 unit cells
        assert!(root.breakpoints.windows(2).all(|w| w[1] - w[0] == 1));
        let parts = build_partitions(&cantor_standard(), 4).unwrap(); // window 16
        let k1 = &parts.levels[1][0]; // |a|^{-1} = 3
        for w in k1.breakpoints.windows(2) {
            let len = w[1] - w[0];
            assert!((3..=6).contains(&len), "{len}");
        }
    }

    #[test]
    fn partitions_nest_and_collapse_to_single_interval() {
        let parts = build_partitions(&cantor_standard(), 8).unwrap(); // window 256
        for k in 0..8 {
            let parent = &parts.levels[k][0];
            let child = &parts.levels[k + 1][0];
            for b in &child.breakpoints {
                assert!(parent.breakpoints.contains(b), "level {k} breakpoint {b}");
            }
        }
        // |a|^{-1} = 3^6 = 729 >= 512: single interval.
        assert_eq!(parts.levels[6][0].breakpoints, vec![-256, 256]);
    }

    #[test]
    fn lipschitz_holds_on_cantor_and_spike_is_caught() {
        let mut table = cantor_table(6);
        let report = verify_lipschitz(&table);
        assert!(report.clean(), "{report:?}");
        assert!((report.lipschitz - 6.0).abs() < 1e-12);
        let mid = table.levels[0][0].y.len() / 3;
        table.levels[0][0].y[mid] = 1e-6;
        let report = verify_lipschitz(&table);
        assert!(!report.y_violations.is_empty() || !report.alpha_violations.is_empty());
    }

    #[test]
    fn main_estimate_on_cantor() {
        let table = cantor_table(6);
        let parts = build_partitions(&cantor_standard(), 6).unwrap();
        let report = verify_main_estimate(&table, &parts).unwrap();
        assert!(report.active_parents > 0);
        assert!(report.max_exceptions <= 2, "{report:?}");
        assert!(report.eta.unwrap() > 0.0, "{report:?}");
        assert!(report.theta_min_one_minus_cos.unwrap() >= 0.0);
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let table = cantor_table(6);
        let parts = build_partitions(&cantor_standard(), 5).unwrap();
        assert!(matches!(
            verify_main_estimate(&table, &parts),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn indicator_and_word_sum() {
        let table = cantor_table(6);
        let parts = build_partitions(&cantor_standard(), 6).unwrap();
        let eta = verify_main_estimate(&table, &parts).unwrap().eta.unwrap();
        // At xi = 0 the ratio is exactly 1, so the indicator vanishes.
        assert_eq!(r_indicator(&table, eta, 0.0, &Word::empty()).unwrap(), 0.0);
        let word = Word(vec![0, 1, 0, 1, 0, 1]);
        assert_eq!(r_sum_along_word(&table, eta, 0.0, &word).unwrap(), 0.0);
        // Somewhere in the window the budget must be positive, otherwise the
        // estimated eta would be useless.
        let found = (1..1000).any(|q| {
            r_sum_along_word(&table, eta, q as f64 * 0.0613, &word).unwrap() > 0.0
        });
        assert!(found);
        // Out-of-range arguments are rejected.
        assert!(matches!(
            r_indicator(&table, eta, 1e9, &Word::empty()),
            Err(Error::OutsideInterval { .. })
        ));
    }

    #[test]
    fn heterogeneous_system_also_passes_the_main_estimate() {
        let sys = build_system(&[(0.44, 0.0), (0.4, 0.6)], &[0.5, 0.5]).unwrap();
        let table = envelope_recursion(&sys, 6, 0.01).unwrap();
        let report = verify_lipschitz(&table);
        assert!(report.clean(), "{:?}", report.y_violations.first());
        let parts = build_partitions(&sys, 6).unwrap();
        let report = verify_main_estimate(&table, &parts).unwrap();
        assert!(report.max_exceptions <= 2, "{report:?}");
        assert!(report.eta.unwrap() > 0.0);
    }
}
