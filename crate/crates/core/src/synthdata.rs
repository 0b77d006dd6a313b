//! Synthetic signal/noise patch data with typical and atypical subclasses.
//!
//! Every example carries exactly one signal patch, `α·μ_c` for the typical
//! subclass or `β·μ_c` for the atypical one, and `P − 1` Gaussian noise
//! patches `N(0, σ_p² I_d)`. Class signals are orthogonal: `μ_c = ‖μ‖ e_c`.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::alcore::PoolState;
use crate::error::{invalid, Error, Result};
use crate::model::{gaussian_vec, PatchInput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Subclass {
    Typical,
    Atypical,
}

impl Subclass {
    pub fn as_str(self) -> &'static str {
        match self {
            Subclass::Typical => "typical",
            Subclass::Atypical => "atypical",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: usize,
    pub x: PatchInput,
    pub true_class: usize,
    pub subclass: Subclass,
    pub is_known: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenConfig {
    pub num_known: usize,
    pub num_unknown: usize,
    /// Samples generated per class.
    pub per_class: usize,
    pub atypical_fraction: f64,
    pub patches: usize,
    pub dim: usize,
    pub sigma_p: f64,
    pub alpha: f64,
    pub beta: f64,
    /// `‖μ_c‖₂`, shared by all classes.
    pub signal_norm: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            num_known: 4,
            num_unknown: 6,
            per_class: 200,
            atypical_fraction: 0.2,
            patches: 4,
            dim: 500,
            sigma_p: 1.0,
            alpha: 1.0,
            beta: 0.25,
            signal_norm: 8.0,
        }
    }
}

impl GenConfig {
    pub fn num_classes(&self) -> usize {
        self.num_known + self.num_unknown
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_known < 2 {
            return Err(invalid("num_known", "at least two known classes are required"));
        }
        if self.per_class < 1 {
            return Err(invalid("per_class", "must be at least 1"));
        }
        if !(self.atypical_fraction > 0.0 && self.atypical_fraction < 1.0) {
            return Err(invalid("atypical_fraction", "must lie in (0, 1)"));
        }
        if self.patches < 1 {
            return Err(invalid("patches", "must be at least 1"));
        }
        if self.dim < self.num_classes() {
            return Err(invalid("dim", "must be at least the number of classes (orthogonal signals)"));
        }
        if !(self.sigma_p >= 0.0 && self.sigma_p.is_finite()) {
            return Err(invalid("sigma_p", "must be finite and non-negative"));
        }
        if !(self.beta > 0.0) {
            return Err(invalid("beta", "must be positive"));
        }
        if !(self.alpha > self.beta && self.alpha.is_finite()) {
            return Err(invalid("alpha", "alpha must exceed beta"));
        }
        if !(self.signal_norm > 0.0 && self.signal_norm.is_finite()) {
            return Err(invalid("signal_norm", "must be positive"));
        }
        Ok(())
    }

    /// Re-splits the class count so that `⌈ratio · total⌉` classes are known.
    pub fn with_mismatch(mut self, ratio: f64) -> Result<Self> {
        let total = self.num_classes();
        let known = known_count(ratio, total)?;
        self.num_known = known;
        self.num_unknown = total - known;
        Ok(self)
    }

    /// `μ_c = ‖μ‖ e_c`.
    pub fn signal_vector(&self, class: usize) -> Vec<f64> {
        let mut mu = vec![0.0; self.dim];
        mu[class] = self.signal_norm;
        mu
    }

    /// Atypical examples per class, rounded to nearest.
    pub fn atypical_per_class(&self) -> usize {
        libm::round(self.atypical_fraction * self.per_class as f64) as usize
    }
}

fn known_count(ratio: f64, total: usize) -> Result<usize> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(invalid("mismatch_ratio", "must lie in (0, 1]"));
    }
    // Guard against 0.4 · 10 = 4.000000000000001 rounding up.
    let known = libm::ceil(ratio * total as f64 - 1e-9) as usize;
    Ok(known.clamp(1, total))
}

/// Generates one example of class `class` and subclass `subclass`.
pub fn gen_example<R: rand::Rng + ?Sized>(
    cfg: &GenConfig,
    class: usize,
    subclass: Subclass,
    id: usize,
    rng: &mut R,
) -> Result<Example> {
    if class >= cfg.num_classes() {
        return Err(Error::LabelOutOfRange { label: class, classes: cfg.num_classes() });
    }
    let (p_count, d) = (cfg.patches, cfg.dim);
    let signal_patch = rng.random_range(0..p_count);
    let scale = match subclass {
        Subclass::Typical => cfg.alpha,
        Subclass::Atypical => cfg.beta,
    };
    let mut data = Vec::with_capacity(p_count * d);
    for p in 0..p_count {
        if p == signal_patch {
            data.extend(cfg.signal_vector(class).into_iter().map(|v| scale * v));
        } else {
            data.extend(gaussian_vec(d, cfg.sigma_p, rng));
        }
    }
    Ok(Example {
        id,
        x: PatchInput::from_flat(p_count, d, data)?,
        true_class: class,
        subclass,
        is_known: class < cfg.num_known,
    })
}

/// Generates `per_class` examples for every class, ids assigned in order.
/// Within each class the first `atypical_per_class` examples are atypical.
pub fn gen_dataset<R: rand::Rng + ?Sized>(cfg: &GenConfig, rng: &mut R) -> Result<Vec<Example>> {
    cfg.validate()?;
    let n_aty = cfg.atypical_per_class();
    let mut out = Vec::with_capacity(cfg.num_classes() * cfg.per_class);
    for class in 0..cfg.num_classes() {
        for i in 0..cfg.per_class {
            let z = if i < n_aty { Subclass::Atypical } else { Subclass::Typical };
            let id = out.len();
            out.push(gen_example(cfg, class, z, id, rng)?);
        }
    }
    Ok(out)
}

/// A generated pool: every example plus its initial split.
#[derive(Debug, Clone, PartialEq)]
pub struct OpenSetPool {
    pub examples: Vec<Example>,
    pub state: PoolState,
}

/// Generates the data and splits it into labeled seed, unlabeled pool and
/// known-class test set. `mismatch_ratio` must agree with the known/unknown
/// split already in `cfg` (see [`GenConfig::with_mismatch`]).
///
/// Splits are stratified per known class: `round(test_frac · n)` test
/// samples and `round(init_labeled_frac · n)` seed samples per class.
pub fn build_openset_pool<R: rand::Rng + ?Sized>(
    cfg: &GenConfig,
    mismatch_ratio: f64,
    init_labeled_frac: f64,
    test_frac: f64,
    rng: &mut R,
) -> Result<OpenSetPool> {
    cfg.validate()?;
    let known = known_count(mismatch_ratio, cfg.num_classes())?;
    if known != cfg.num_known {
        return Err(invalid(
            "mismatch_ratio",
            format!("implies {known} known classes but the generator has {}", cfg.num_known),
        ));
    }
    for (key, v) in [("init_labeled_frac", init_labeled_frac), ("test_frac", test_frac)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(invalid(key, "must lie in (0, 1)"));
        }
    }
    let n = cfg.per_class as f64;
    let n_test = libm::round(test_frac * n) as usize;
    let n_init = libm::round(init_labeled_frac * n) as usize;
    if n_test == 0 || n_init == 0 || n_test + n_init >= cfg.per_class {
        return Err(Error::Insufficient(format!(
            "{} samples per class cannot hold {n_test} test and {n_init} seed samples plus a pool",
            cfg.per_class
        )));
    }

    let examples = gen_dataset(cfg, rng)?;
    let mut labeled = BTreeMap::new();
    let mut unlabeled = BTreeSet::new();
    let mut test = BTreeSet::new();
    let mut n_known = 0;
    for class in 0..cfg.num_classes() {
        let mut ids: Vec<usize> = (class * cfg.per_class..(class + 1) * cfg.per_class).collect();
        if class < cfg.num_known {
            ids.shuffle(rng);
            test.extend(ids[..n_test].iter().copied());
            labeled.extend(ids[n_test..n_test + n_init].iter().map(|&i| (i, class)));
            unlabeled.extend(ids[n_test + n_init..].iter().copied());
            n_known += cfg.per_class - n_test;
        } else {
            unlabeled.extend(ids);
        }
    }
    let state = PoolState::new(labeled, unlabeled, test, n_known)?;
    Ok(OpenSetPool { examples, state })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    pub flip_prob: f64,
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(invalid("flip_prob", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// The annotator. Unknown-class examples get the single bucket label
/// `num_known`. Known-class labels are replaced, with probability
/// `flip_prob`, by a uniformly drawn different known class.
pub fn oracle_label<R: rand::Rng + ?Sized>(
    example: &Example,
    oc: &OracleConfig,
    num_known: usize,
    rng: &mut R,
) -> usize {
    if !example.is_known {
        return num_known;
    }
    if num_known < 2 || !rng.random_bool(oc.flip_prob) {
        return example.true_class;
    }
    let other = rng.random_range(0..num_known - 1);
    if other >= example.true_class {
        other + 1
    } else {
        other
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from;

    fn small() -> GenConfig {
        GenConfig { per_class: 20, dim: 16, ..GenConfig::default() }
    }

    fn signal_patches(cfg: &GenConfig, ex: &Example) -> usize {
        let mu = cfg.signal_vector(ex.true_class);
        ex.x.patches()
            .filter(|p| {
                [cfg.alpha, cfg.beta]
                    .iter()
                    .any(|s| p.iter().zip(&mu).all(|(a, m)| *a == s * m))
            })
            .count()
    }

    #[test]
    fn exactly_one_signal_patch() {
        let cfg = small();
        let mut rng = rng_from(1, 0);
        for class in 0..cfg.num_classes() {
            for z in [Subclass::Typical, Subclass::Atypical] {
                let ex = gen_example(&cfg, class, z, 0, &mut rng).unwrap();
                assert_eq!(signal_patches(&cfg, &ex), 1);
                assert_eq!(ex.is_known, class < cfg.num_known);
            }
        }
        assert!(gen_example(&cfg, 10, Subclass::Typical, 0, &mut rng).is_err());
    }

    #[test]
    fn zero_noise_patches_are_zero() {
        let cfg = GenConfig { sigma_p: 0.0, ..small() };
        let mut rng = rng_from(2, 0);
        let ex = gen_example(&cfg, 1, Subclass::Atypical, 0, &mut rng).unwrap();
        let zero_patches = ex.x.patches().filter(|p| p.iter().all(|v| *v == 0.0)).count();
        assert_eq!(zero_patches, cfg.patches - 1);
    }

    #[test]
    fn noise_norm_matches_chi_mean() {
        let cfg = GenConfig { patches: 2, dim: 50, sigma_p: 1.5, ..GenConfig::default() };
        let mut rng = rng_from(3, 0);
        let draws = 10_000;
        let mut total = 0.0;
        for _ in 0..draws {
            let ex = gen_example(&cfg, 0, Subclass::Typical, 0, &mut rng).unwrap();
            let noise = ex.x.patches().find(|p| p[0] != cfg.alpha * cfg.signal_norm || p[1] != 0.0).unwrap();
            total += noise.iter().map(|v| v * v).sum::<f64>().sqrt();
        }
        let mean = total / draws as f64;
        let d = cfg.dim as f64;
        let expected = cfg.sigma_p * d.sqrt() * (1.0 - 1.0 / (4.0 * d));
        assert!((mean / expected - 1.0).abs() < 0.02, "{mean} vs {expected}");
    }

    #[test]
    fn subclass_counts_follow_fraction() {
        let cfg = GenConfig { per_class: 33, atypical_fraction: 0.3, ..small() };
        let data = gen_dataset(&cfg, &mut rng_from(4, 0)).unwrap();
        for class in 0..cfg.num_classes() {
            let aty = data
                .iter()
                .filter(|e| e.true_class == class && e.subclass == Subclass::Atypical)
                .count();
            assert_eq!(aty, 10);
        }
    }

    #[test]
    fn pool_partition() {
        let cfg = small().with_mismatch(0.4).unwrap();
        assert_eq!((cfg.num_known, cfg.num_unknown), (4, 6));
        let pool = build_openset_pool(&cfg, 0.4, 0.1, 0.25, &mut rng_from(5, 0)).unwrap();
        let s = &pool.state;
        assert_eq!(s.labeled.len() + s.unlabeled.len() + s.test.len(), pool.examples.len());
        assert!(s.invalid.is_empty());
        let mut all = BTreeSet::new();
        for id in s.labeled.keys().chain(&s.unlabeled).chain(&s.test) {
            assert!(all.insert(*id));
        }
        for id in s.labeled.keys().chain(&s.test) {
            assert!(pool.examples[*id].is_known);
        }
        assert_eq!(s.labeled.len(), 4 * 2);
        assert_eq!(s.test.len(), 4 * 5);
        assert_eq!(s.n_known, 4 * 15);
    }

    #[test]
    fn pool_guards() {
        let cfg = small().with_mismatch(0.4).unwrap();
        let mut rng = rng_from(6, 0);
        assert!(build_openset_pool(&cfg, 0.4, 0.0, 0.2, &mut rng).is_err());
        assert!(build_openset_pool(&cfg, 0.3, 0.1, 0.2, &mut rng).is_err());
        assert!(matches!(
            build_openset_pool(&cfg, 0.4, 0.01, 0.2, &mut rng),
            Err(Error::Insufficient(_))
        ));
        assert_eq!(small().with_mismatch(0.2).unwrap().num_known, 2);
        assert_eq!(small().with_mismatch(0.3).unwrap().num_known, 3);
    }

    #[test]
    fn pool_is_deterministic() {
        let cfg = small().with_mismatch(0.4).unwrap();
        let a = build_openset_pool(&cfg, 0.4, 0.1, 0.2, &mut rng_from(9, 0)).unwrap();
        let b = build_openset_pool(&cfg, 0.4, 0.1, 0.2, &mut rng_from(9, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn config_guards() {
        assert!(GenConfig { alpha: 0.1, beta: 0.5, ..small() }.validate().is_err());
        assert!(GenConfig { atypical_fraction: 0.0, ..small() }.validate().is_err());
        assert!(GenConfig { num_known: 1, ..small() }.validate().is_err());
    }

    #[test]
    fn oracle_flips() {
        let cfg = small();
        let mut rng = rng_from(7, 0);
        let ex = gen_example(&cfg, 2, Subclass::Typical, 0, &mut rng).unwrap();
        let clean = OracleConfig { flip_prob: 0.0 };
        let always = OracleConfig { flip_prob: 1.0 };
        for _ in 0..200 {
            assert_eq!(oracle_label(&ex, &clean, 4, &mut rng), 2);
            let l = oracle_label(&ex, &always, 4, &mut rng);
            assert!(l != 2 && l < 4);
        }
        let noisy = OracleConfig { flip_prob: 0.05 };
        let flipped = (0..10_000).filter(|_| oracle_label(&ex, &noisy, 4, &mut rng) != 2).count();
        assert!((400..=600).contains(&flipped), "{flipped}");

        let unknown = gen_example(&cfg, 7, Subclass::Typical, 0, &mut rng).unwrap();
        assert_eq!(oracle_label(&unknown, &always, 4, &mut rng), 4);
    }
}
