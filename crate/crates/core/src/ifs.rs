//! Iterated function systems of contracting affine maps on the line,
//! word algebra with right-to-left composition, coordinate normalization
//! and contraction statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Words-per-system cap for exact enumeration; beyond this callers must
/// fall back to Monte Carlo.
pub const BRANCH_BUDGET: f64 = (1u64 << 24) as f64;

const PROB_SUM_TOL: f64 = 1e-9;

/// One affine contraction x -> a*x + b.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub a: f64,
    pub b: f64,
}

impl AffineMap {
    pub fn identity() -> Self {
        AffineMap { a: 1.0, b: 0.0 }
    }

    pub fn apply(&self, x: f64) -> f64 {
        self.a * x + self.b
    }

    /// Composition "apply `self` first, then `outer`".
    pub fn and_then(&self, outer: &AffineMap) -> AffineMap {
        AffineMap {
            a: outer.a * self.a,
            b: outer.a * self.b + outer.b,
        }
    }

    pub fn fixed_point(&self) -> f64 {
        self.b / (1.0 - self.a)
    }
}

/// A finite word over the alphabet {0, .., m-1}.
///
/// Letters are stored right to left:
/// `letters[0]` is the outermost (last applied) map and the final letter is
/// applied first.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Word(pub Vec<usize>);

impl Word {
    pub fn empty() -> Self {
        Word(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Concatenation i·j: `other` occupies the low positions and is applied first.
    pub fn concat(&self, other: &Word) -> Word {
        let mut letters = self.0.clone();
        letters.extend_from_slice(&other.0);
        Word(letters)
    }

    /// The subword of positions k..=n (1-based from the right), i.e. the
    /// outermost n-k+1 letters. `suffix(1)` is the word itself, `suffix(n+1)`
    /// is empty.
    pub fn suffix(&self, k: usize) -> Word {
        let n = self.len();
        assert!(k >= 1 && k <= n + 1, "suffix index out of range");
        Word(self.0[..(n + 1 - k)].to_vec())
    }
}

/// A validated iterated function system with probability weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IfsSystem {
    maps: Vec<AffineMap>,
    probs: Vec<f64>,
    normalized: bool,
    iterate_depth: u32,
}

/// On-disk form: {"maps": [[a, b], ...], "probs": [...]}.
#[derive(Debug, Serialize, Deserialize)]
struct SystemFile {
    maps: Vec<[f64; 2]>,
    probs: Vec<f64>,
}

impl IfsSystem {
    pub fn maps(&self) -> &[AffineMap] {
        &self.maps
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn iterate_depth(&self) -> u32 {
        self.iterate_depth
    }

    pub fn max_scale(&self) -> f64 {
        self.maps.iter().map(|m| m.a.abs()).fold(0.0, f64::max)
    }

    pub fn min_prob(&self) -> f64 {
        self.probs.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// An interval [lo, hi] containing the attractor (fixed point of the
    /// interval map K -> union S_i(K), iterated to convergence).
    pub fn support_bound(&self) -> (f64, f64) {
        let (mut lo, mut hi) = (-1e6, 1e6);
        for _ in 0..200 {
            let mut nlo = f64::INFINITY;
            let mut nhi = f64::NEG_INFINITY;
            for m in &self.maps {
                let (u, v) = (m.apply(lo), m.apply(hi));
                nlo = nlo.min(u.min(v));
                nhi = nhi.max(u.max(v));
            }
            if (nlo - lo).abs() < 1e-12 && (nhi - hi).abs() < 1e-12 {
                break;
            }
            lo = nlo;
            hi = nhi;
        }
        (lo, hi)
    }

    pub fn to_json(&self) -> String {
        let file = SystemFile {
            maps: self.maps.iter().map(|m| [m.a, m.b]).collect(),
            probs: self.probs.clone(),
        };
        serde_json::to_string_pretty(&file).expect("system serializes")
    }

    pub fn from_json(text: &str) -> Result<IfsSystem> {
        let file: SystemFile = serde_json::from_str(text)?;
        build_system(
            &file.maps.iter().map(|m| (m[0], m[1])).collect::<Vec<_>>(),
            &file.probs,
        )
    }
}

/// Validates and builds a system. Rejects non-contractions, bad probability
/// vectors and the single-point attractor.
pub fn build_system(maps: &[(f64, f64)], probs: &[f64]) -> Result<IfsSystem> {
    if maps.len() < 2 {
        return Err(Error::TooFewMaps(maps.len()));
    }
    if probs.len() != maps.len() {
        return Err(Error::InvalidParameter(format!(
            "{} maps but {} probabilities",
            maps.len(),
            probs.len()
        )));
    }
    for (i, &(a, _)) in maps.iter().enumerate() {
        if !(a.abs() < 1.0) || !a.is_finite() {
            return Err(Error::NonContraction { index: i, a });
        }
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > PROB_SUM_TOL || probs.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::BadProbabilities { sum });
    }
    let maps: Vec<AffineMap> = maps.iter().map(|&(a, b)| AffineMap { a, b }).collect();
    // K is a point iff every map fixes the same point.
    let fp0 = maps[0].fixed_point();
    let trivial = maps
        .iter()
        .all(|m| (m.fixed_point() - fp0).abs() <= 1e-12 * (1.0 + fp0.abs()));
    if trivial {
        return Err(Error::TrivialAttractor);
    }
    Ok(IfsSystem {
        maps,
        probs: probs.to_vec(),
        normalized: false,
        iterate_depth: 1,
    })
}

/// Conjugates the system by an affine bijection phi(x) = l*x + t so that the
/// translation parts, sorted, run from exactly 0 to exactly 1.
///
/// Returns the new system together with phi; the Fourier moduli are related
/// by |F mu_new(xi)| = |F mu_old(l * xi)|.
pub fn normalize_coordinates(system: &IfsSystem) -> Result<(IfsSystem, AffineMap)> {
    let m = system.len();
    let mut best: Option<(IfsSystem, AffineMap)> = None;
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            // Solve l*b_i + t*(1-a_i) = 0, l*b_j + t*(1-a_j) = 1 by Cramer's rule.
            let (bi, ai) = (system.maps[i].b, system.maps[i].a);
            let (bj, aj) = (system.maps[j].b, system.maps[j].a);
            let det = bi * (1.0 - aj) - bj * (1.0 - ai);
            if det.abs() < 1e-14 {
                continue;
            }
            let l = -(1.0 - ai) / det;
            let t = bi / det;
            if !l.is_finite() || !t.is_finite() || l == 0.0 {
                continue;
            }
            let phi = AffineMap { a: l, b: t };
            let mut new_maps: Vec<AffineMap> = system
                .maps
                .iter()
                .map(|s| AffineMap {
                    a: s.a,
                    b: l * s.b + t * (1.0 - s.a),
                })
                .collect();
            let bs: Vec<f64> = new_maps.iter().map(|s| s.b).collect();
            let bmin = bs.iter().cloned().fold(f64::INFINITY, f64::min);
            let bmax = bs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let near = |x: f64, y: f64| (x - y).abs() < 1e-9;
            if !(near(bmin, 0.0) && near(bmax, 1.0) && near(new_maps[i].b, 0.0) && near(new_maps[j].b, 1.0)) {
                continue;
            }
            if l <= 0.0 && best.is_some() {
                continue; // prefer an orientation-preserving conjugation
            }
            // Snap the designated endpoints and sort by offset.
            new_maps[i].b = 0.0;
            new_maps[j].b = 1.0;
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&u, &v| {
                new_maps[u]
                    .b
                    .partial_cmp(&new_maps[v].b)
                    .unwrap()
                    .then(new_maps[u].a.partial_cmp(&new_maps[v].a).unwrap())
            });
            let sys = IfsSystem {
                maps: order.iter().map(|&u| new_maps[u]).collect(),
                probs: order.iter().map(|&u| system.probs[u]).collect(),
                normalized: true,
                iterate_depth: system.iterate_depth,
            };
            if best.is_none() || l > 0.0 {
                let done = l > 0.0;
                best = Some((sys, phi));
                if done {
                    return Ok(best.unwrap());
                }
            }
        }
    }
    best.ok_or(Error::PointAttractor)
}

/// Returns the system {(S_w, p_w)} over all words of length n0.
pub fn iterate_system(system: &IfsSystem, n0: u32) -> Result<IfsSystem> {
    if n0 == 0 {
        return Err(Error::InvalidParameter("n0 must be >= 1".into()));
    }
    if n0 == 1 {
        return Ok(system.clone());
    }
    let m = system.len();
    let words = (m as f64).powi(n0 as i32);
    if words > BRANCH_BUDGET {
        return Err(Error::BranchBudget { m, n: n0, words });
    }
    let mut maps: Vec<AffineMap> = vec![AffineMap::identity()];
    let mut probs: Vec<f64> = vec![1.0];
    for _ in 0..n0 {
        let mut next_maps = Vec::with_capacity(maps.len() * m);
        let mut next_probs = Vec::with_capacity(maps.len() * m);
        for (acc, p) in maps.iter().zip(&probs) {
            for (s, q) in system.maps.iter().zip(&system.probs) {
                next_maps.push(s.and_then(acc));
                next_probs.push(p * q);
            }
        }
        maps = next_maps;
        probs = next_probs;
    }
    let mut order: Vec<usize> = (0..maps.len()).collect();
    order.sort_by(|&u, &v| {
        maps[u]
            .b
            .partial_cmp(&maps[v].b)
            .unwrap()
            .then(maps[u].a.partial_cmp(&maps[v].a).unwrap())
    });
    Ok(IfsSystem {
        maps: order.iter().map(|&u| maps[u]).collect(),
        probs: order.iter().map(|&u| probs[u]).collect(),
        normalized: false,
        iterate_depth: system.iterate_depth * n0,
    })
}

/// Smallest n0 with (max |a_i|)^n0 < 1/2, and the corresponding iterate
/// (re-normalized). Systems already below 1/2 come back unchanged.
pub fn ensure_small_scales(system: &IfsSystem) -> Result<(IfsSystem, u32)> {
    if system.max_scale() < 0.5 {
        return Ok((system.clone(), 1));
    }
    let mut n0 = 2u32;
    while system.max_scale().powi(n0 as i32) >= 0.5 {
        n0 += 1;
    }
    let iterated = iterate_system(system, n0)?;
    let (normalized, _) = normalize_coordinates(&iterated)?;
    Ok((normalized, n0))
}

/// Composes S_i = S_{i(n)} o ... o S_{i(1)} for a word i. The empty word
/// gives the identity.
pub fn compose_word(system: &IfsSystem, word: &Word) -> AffineMap {
    let mut acc = AffineMap::identity();
    for &letter in word.0.iter().rev() {
        assert!(letter < system.len(), "letter out of range");
        acc = acc.and_then(&system.maps[letter]);
    }
    acc
}

/// Product of the probabilities along a word.
pub fn word_probability(system: &IfsSystem, word: &Word) -> f64 {
    word.0.iter().map(|&l| system.probs[l]).product()
}

/// Lyapunov exponent chi = sum p_i log |a_i| < 0 (nats).
pub fn lyapunov_exponent(system: &IfsSystem) -> f64 {
    system
        .maps
        .iter()
        .zip(&system.probs)
        .map(|(m, p)| p * m.a.abs().ln())
        .sum()
}

/// Integer band around the mean contraction rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionStats {
    /// Lyapunov exponent (negative, nats).
    pub chi: f64,
    /// Lower integer r_lo with r_lo < e^{|chi|}.
    pub r_lo: u64,
    /// Upper integer r_hi with e^{|chi|} < r_hi and r_hi - r_lo <= 2.
    pub r_hi: u64,
    /// Fitted deviation rate from the band-miss probabilities, when known.
    pub epsilon_est: Option<f64>,
}

/// Picks the tightest integer pair r_lo < e^{|chi|} < r_hi with gap <= 2 and
/// strict inequalities. An exact integer rate is bracketed by its neighbours.
pub fn contraction_band(system: &IfsSystem) -> Result<ContractionStats> {
    let chi = lyapunov_exponent(system);
    let e_chi = (-chi).exp();
    let nearest = e_chi.round();
    let (r_lo, r_hi) = if (e_chi - nearest).abs() < 1e-9 {
        // e^{|chi|} is (numerically) an integer: strictness forces the gap-2 pair.
        let k = nearest as i64;
        (k - 1, k + 1)
    } else {
        (e_chi.floor() as i64, e_chi.floor() as i64 + 1)
    };
    if r_lo < 1 {
        return Err(Error::NoContractionBand { e_chi });
    }
    Ok(ContractionStats {
        chi,
        r_lo: r_lo as u64,
        r_hi: r_hi as u64,
        epsilon_est: None,
    })
}

/// kappa = floor(2 * max |a_i|^{-1}): the maximal number of consecutive
/// finer-partition cells a coarser cell can contain.
pub fn kappa(system: &IfsSystem) -> u64 {
    (2.0 / system.max_scale()).floor() as u64
}

/// Distinct contraction scales and the class index of each map. Functions of
/// a word that depend only on (length, a-product) are memoized on the vector
/// of per-class letter counts.
#[derive(Debug, Clone)]
pub struct ScaleClasses {
    /// Distinct |a| values are not required; classes group exactly equal a.
    pub values: Vec<f64>,
    /// `class_of[j]` is the index into `values` for map j.
    pub class_of: Vec<usize>,
}

impl ScaleClasses {
    pub fn of(system: &IfsSystem) -> ScaleClasses {
        let mut values: Vec<f64> = Vec::new();
        let mut class_of = Vec::with_capacity(system.len());
        for m in system.maps() {
            match values.iter().position(|&v| v == m.a) {
                Some(k) => class_of.push(k),
                None => {
                    values.push(m.a);
                    class_of.push(values.len() - 1);
                }
            }
        }
        ScaleClasses { values, class_of }
    }

    /// a-product of a counts vector, computed in a fixed order.
    pub fn product(&self, counts: &[u16]) -> f64 {
        self.values
            .iter()
            .zip(counts)
            .map(|(&a, &c)| a.powi(c as i32))
            .product()
    }

    /// All count vectors with the given total, in lexicographic order.
    pub fn count_vectors(&self, total: u16) -> Vec<Vec<u16>> {
        let d = self.values.len();
        let mut out = Vec::new();
        let mut cur = vec![0u16; d];
        fn rec(out: &mut Vec<Vec<u16>>, cur: &mut Vec<u16>, pos: usize, left: u16) {
            if pos + 1 == cur.len() {
                cur[pos] = left;
                out.push(cur.clone());
                return;
            }
            for v in 0..=left {
                cur[pos] = v;
                rec(out, cur, pos + 1, left - v);
            }
        }
        rec(&mut out, &mut cur, 0, total);
        out
    }
}

/// Cantor middle-third system in its standard coordinates on [0, 1].
pub fn cantor_standard() -> IfsSystem {
    build_system(&[(1.0 / 3.0, 0.0), (1.0 / 3.0, 2.0 / 3.0)], &[0.5, 0.5]).unwrap()
}

/// Cantor system normalized to offsets 0 and 1.
pub fn cantor_normalized() -> IfsSystem {
    let (sys, _) = normalize_coordinates(&cantor_standard()).unwrap();
    sys
}
