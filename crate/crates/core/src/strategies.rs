//! Query selection policies.
//!
//! Every selector returns `min(q, |D_U|)` distinct ids. Ties on score are
//! broken by ascending sample id everywhere.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;
use core::str::FromStr;

use rand::seq::index;

use crate::error::{invalid, Error, Result};
use crate::model::ModelParams;
use crate::numerics::{l1_dist, ProbVector};
use crate::scoring::{uncertainty_scores, PoolItem, SampleScore, UncertaintyKind};

pub const NUM_BUCKETS: u8 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StrategyKind {
    Samosa,
    SamosaLow,
    /// Rank decile `1..=10` of SAMIS-P; 10 holds the highest scores.
    SamosaBucket(u8),
    SamosaRandomized,
    Disagree3,
    Uncertainty(UncertaintyKind),
    Random,
}

impl StrategyKind {
    /// Whether the strategy needs the SGD/SAM distinguisher pair.
    pub fn uses_samis(self) -> bool {
        matches!(
            self,
            Self::Samosa | Self::SamosaLow | Self::SamosaBucket(_) | Self::SamosaRandomized
        )
    }

    pub fn validate(self) -> Result<()> {
        if let Self::SamosaBucket(b) = self {
            if !(1..=NUM_BUCKETS).contains(&b) {
                return Err(invalid("strategy", "bucket index must lie in 1..=10"));
            }
        }
        Ok(())
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Samosa => f.write_str("samosa"),
            Self::SamosaLow => f.write_str("samosa-l"),
            Self::SamosaBucket(b) => write!(f, "samosa-b{b}"),
            Self::SamosaRandomized => f.write_str("samosa-r"),
            Self::Disagree3 => f.write_str("disagree3"),
            Self::Uncertainty(k) => f.write_str(k.as_str()),
            Self::Random => f.write_str("random"),
        }
    }
}

impl FromStr for StrategyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let kind = match s {
            "samosa" => Self::Samosa,
            "samosa-l" => Self::SamosaLow,
            "samosa-r" => Self::SamosaRandomized,
            "disagree3" => Self::Disagree3,
            "random" => Self::Random,
            other => {
                if let Some(b) = other.strip_prefix("samosa-b") {
                    let bucket = b.parse::<u8>().map_err(|_| Error::UnknownStrategy(String::from(other)))?;
                    if !(1..=NUM_BUCKETS).contains(&bucket) || format!("{bucket}") != b {
                        return Err(Error::UnknownStrategy(String::from(other)));
                    }
                    Self::SamosaBucket(bucket)
                } else {
                    Self::Uncertainty(other.parse()?)
                }
            }
        };
        Ok(kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuerySpec {
    pub budget: usize,
    pub kind: StrategyKind,
}

/// Selected ids split by ground truth after selection.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QueryResult {
    pub selected: Vec<usize>,
    pub valid: Vec<usize>,
    pub invalid: Vec<usize>,
}

fn check_budget(q: usize) -> Result<()> {
    if q < 1 {
        return Err(invalid("budget", "must be at least 1"));
    }
    Ok(())
}

fn by_score_desc(a: &SampleScore, b: &SampleScore) -> Ordering {
    b.score.total_cmp(&a.score).then(a.id.cmp(&b.id))
}

fn by_score_asc(a: &SampleScore, b: &SampleScore) -> Ordering {
    a.score.total_cmp(&b.score).then(a.id.cmp(&b.id))
}

fn split_ranked(
    scores: &[SampleScore],
    order: fn(&SampleScore, &SampleScore) -> Ordering,
) -> (Vec<SampleScore>, Vec<SampleScore>) {
    let (mut accepted, mut rejected): (Vec<_>, Vec<_>) = scores.iter().partition(|s| s.accepted);
    accepted.sort_by(order);
    rejected.sort_by(order);
    (accepted, rejected)
}

fn take_ranked(
    scores: &[SampleScore],
    q: usize,
    order: fn(&SampleScore, &SampleScore) -> Ordering,
) -> Result<Vec<usize>> {
    check_budget(q)?;
    let (accepted, rejected) = split_ranked(scores, order);
    Ok(accepted.iter().chain(&rejected).take(q).map(|s| s.id).collect())
}

/// Highest SAMIS-P among accepted samples; any shortfall is filled from the
/// rejected samples with the highest scores.
pub fn select_samosa(scores: &[SampleScore], q: usize) -> Result<Vec<usize>> {
    take_ranked(scores, q, by_score_desc)
}

/// Lowest SAMIS-P among accepted samples, shortfall from the lowest rejected.
pub fn select_samosa_l(scores: &[SampleScore], q: usize) -> Result<Vec<usize>> {
    take_ranked(scores, q, by_score_asc)
}

/// Rank range of decile `bucket` among `n` samples sorted by descending
/// score. Bucket 10 is the top decile, bucket 1 the bottom one.
fn decile_range(n: usize, bucket: u8) -> core::ops::Range<usize> {
    let b = bucket as usize;
    let k = NUM_BUCKETS as usize;
    (k - b) * n / k..(k + 1 - b) * n / k
}

/// Selects from one SAMIS-P rank decile of the accepted samples. A short
/// decile spills to neighbours in the order `b+1, b−1, b+2, b−2, …`, then
/// to rejected samples by descending score.
pub fn select_bucketed(scores: &[SampleScore], q: usize, bucket: u8) -> Result<Vec<usize>> {
    check_budget(q)?;
    StrategyKind::SamosaBucket(bucket).validate()?;
    let (accepted, rejected) = split_ranked(scores, by_score_desc);
    let mut visit = Vec::with_capacity(NUM_BUCKETS as usize);
    visit.push(bucket as i32);
    for step in 1..NUM_BUCKETS as i32 {
        for cand in [bucket as i32 + step, bucket as i32 - step] {
            if (1..=NUM_BUCKETS as i32).contains(&cand) {
                visit.push(cand);
            }
        }
    }
    let mut out = Vec::with_capacity(q);
    for b in visit {
        for s in &accepted[decile_range(accepted.len(), b as u8)] {
            if out.len() == q {
                return Ok(out);
            }
            out.push(s.id);
        }
    }
    out.extend(rejected.iter().take(q - out.len()).map(|s| s.id));
    Ok(out)
}

/// SAMOSA, with its rejected picks swapped for uniformly drawn rejected
/// samples. Accepted picks are kept.
pub fn select_samosa_r<R: rand::Rng + ?Sized>(
    scores: &[SampleScore],
    q: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let picks = select_samosa(scores, q)?;
    let accepted: Vec<usize> =
        picks.iter().copied().filter(|id| scores.iter().any(|s| s.id == *id && s.accepted)).collect();
    let shortfall = picks.len() - accepted.len();
    if shortfall == 0 {
        return Ok(picks);
    }
    let mut rejected: Vec<usize> = scores.iter().filter(|s| !s.accepted).map(|s| s.id).collect();
    rejected.sort_unstable();
    let mut out = accepted;
    out.extend(index::sample(rng, rejected.len(), shortfall).into_iter().map(|i| rejected[i]));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct DisagreementKey {
    id: usize,
    distinct: usize,
    spread: f64,
    rejected: bool,
}

fn disagreement_key(id: usize, probs: &[ProbVector], num_known: usize) -> Result<DisagreementKey> {
    let preds: Vec<usize> = probs.iter().map(|p| p.argmax()).collect();
    let mut distinct = preds.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let mut total = 0.0;
    let mut pairs = 0;
    for i in 0..probs.len() {
        for j in i + 1..probs.len() {
            total += l1_dist(&probs[i], &probs[j])?;
            pairs += 1;
        }
    }
    Ok(DisagreementKey {
        id,
        distinct: distinct.len(),
        spread: if pairs > 0 { total / pairs as f64 } else { 0.0 },
        rejected: preds.iter().any(|p| *p == num_known),
    })
}

/// Disagreement among three SGD-trained distinguishers. Samples any model
/// assigns to the unknown bucket are rejected. The rest are ranked by the
/// number of distinct argmax predictions, then by mean pairwise L1 distance
/// of the probability vectors, both descending.
pub fn select_disagreement(
    pool: &[PoolItem<'_>],
    models: &[ModelParams],
    num_known: usize,
    q: usize,
) -> Result<Vec<usize>> {
    check_budget(q)?;
    if models.len() != 3 {
        return Err(invalid("ensemble", format!("expected 3 models, got {}", models.len())));
    }
    for m in models {
        if m.num_classes() != num_known + 1 {
            return Err(Error::OutputSize { expected: num_known + 1, got: m.num_classes() });
        }
    }
    let mut keys = pool
        .iter()
        .map(|(id, x)| {
            let probs = models.iter().map(|m| m.predict_proba(x)).collect::<Result<Vec<_>>>()?;
            disagreement_key(*id, &probs, num_known)
        })
        .collect::<Result<Vec<_>>>()?;
    keys.sort_by(|a, b| {
        a.rejected
            .cmp(&b.rejected)
            .then(b.distinct.cmp(&a.distinct))
            .then(b.spread.total_cmp(&a.spread))
            .then(a.id.cmp(&b.id))
    });
    Ok(keys.iter().take(q).map(|k| k.id).collect())
}

/// Top-`q` most uncertain samples under the target model.
pub fn select_uncertainty(
    pool: &[PoolItem<'_>],
    f_target: &ModelParams,
    kind: UncertaintyKind,
    q: usize,
) -> Result<Vec<usize>> {
    check_budget(q)?;
    let mut scored = uncertainty_scores(pool, f_target, kind)?;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scored.iter().take(q).map(|(id, _)| *id).collect())
}

/// Uniform sample without replacement.
pub fn select_random<R: rand::Rng + ?Sized>(pool_ids: &[usize], q: usize, rng: &mut R) -> Result<Vec<usize>> {
    check_budget(q)?;
    let amount = q.min(pool_ids.len());
    Ok(index::sample(rng, pool_ids.len(), amount).into_iter().map(|i| pool_ids[i]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PatchInput;
    use crate::numerics::Mat64;
    use crate::rng_from;
    use alloc::vec;

    fn sc(id: usize, score: f64, accepted: bool) -> SampleScore {
        SampleScore { id, score, accepted, sgd_pred: 0, sam_pred: 0 }
    }

    const A: usize = 0;
    const B: usize = 1;
    const C: usize = 2;
    const D: usize = 3;

    fn trace_pool() -> Vec<SampleScore> {
        vec![sc(A, 0.8, true), sc(B, 0.9, false), sc(C, 0.3, true), sc(D, 0.5, true)]
    }

    #[test]
    fn samosa_traces() {
        assert_eq!(select_samosa(&trace_pool(), 2).unwrap(), vec![A, D]);
        assert_eq!(select_samosa(&trace_pool(), 4).unwrap(), vec![A, D, C, B]);
        assert_eq!(select_samosa(&trace_pool(), 9).unwrap().len(), 4);
        let all_rejected: Vec<_> = trace_pool().into_iter().map(|s| SampleScore { accepted: false, ..s }).collect();
        assert_eq!(select_samosa(&all_rejected, 2).unwrap(), vec![B, A]);
        assert!(select_samosa(&trace_pool(), 0).is_err());
    }

    #[test]
    fn samosa_l_traces() {
        let pool = vec![sc(A, 0.8, true), sc(C, 0.3, true), sc(D, 0.5, true)];
        assert_eq!(select_samosa_l(&pool, 2).unwrap(), vec![C, D]);
        assert_eq!(select_samosa_l(&[sc(7, 0.99, true), sc(3, 0.0, false)], 1).unwrap(), vec![7]);
        let zeros: Vec<_> = (0..6).rev().map(|i| sc(i, 0.0, true)).collect();
        assert_eq!(select_samosa_l(&zeros, 3).unwrap(), vec![0, 1, 2]);
    }

    fn twenty() -> Vec<SampleScore> {
        (0..20).map(|i| sc(i, i as f64 / 20.0, true)).collect()
    }

    #[test]
    fn bucket_deciles() {
        let mut top = select_bucketed(&twenty(), 2, 10).unwrap();
        top.sort_unstable();
        assert_eq!(top, vec![18, 19]);
        let mut bottom = select_bucketed(&twenty(), 2, 1).unwrap();
        bottom.sort_unstable();
        assert_eq!(bottom, vec![0, 1]);
        let mut mid = select_bucketed(&twenty(), 2, 5).unwrap();
        mid.sort_unstable();
        assert_eq!(mid, vec![8, 9]);
        assert!(select_bucketed(&twenty(), 2, 0).is_err());
        assert!(select_bucketed(&twenty(), 2, 11).is_err());
    }

    #[test]
    fn bucket_spill_prefers_higher_side() {
        // Decile 5 holds ranks 10–11 (ids 9, 8); decile 6 holds ids 11, 10.
        assert_eq!(select_bucketed(&twenty(), 3, 5).unwrap(), vec![9, 8, 11]);
        // Decile 10 has no higher neighbour: spill down to 9.
        assert_eq!(select_bucketed(&twenty(), 3, 10).unwrap(), vec![19, 18, 17]);
        let mut pool = twenty();
        pool.push(sc(99, 5.0, false));
        let all = select_bucketed(&pool, 21, 3).unwrap();
        assert_eq!(all.len(), 21);
        assert_eq!(*all.last().unwrap(), 99);
    }

    #[test]
    fn bucket_ten_within_samosa() {
        let mut pool = twenty();
        pool.extend((20..30).map(|i| sc(i, 2.0, false)));
        for q in [1, 2, 5, 9, 25] {
            let samosa = select_samosa(&pool, q).unwrap();
            for id in select_bucketed(&pool, q, 10).unwrap() {
                assert!(samosa.contains(&id));
            }
        }
    }

    #[test]
    fn samosa_r_behaviour() {
        let no_shortfall = twenty();
        let mut rng = rng_from(1, 0);
        assert_eq!(select_samosa_r(&no_shortfall, 4, &mut rng).unwrap(), select_samosa(&no_shortfall, 4).unwrap());

        let mut pool: Vec<_> = (0..5).map(|i| sc(i, 0.1, true)).collect();
        pool.extend((5..15).map(|i| sc(i, 1.0 - i as f64 / 100.0, false)));
        let a = select_samosa_r(&pool, 8, &mut rng_from(42, 0)).unwrap();
        let b = select_samosa_r(&pool, 8, &mut rng_from(42, 0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(&a[..5], &[0, 1, 2, 3, 4]);
        let mut drawn = a[5..].to_vec();
        drawn.sort_unstable();
        drawn.dedup();
        assert_eq!(drawn.len(), 3);
        assert!(drawn.iter().all(|id| (5..15).contains(id)));
    }

    fn linear_model(readout: &[f64]) -> ModelParams {
        ModelParams::from_layers(
            Mat64::new(1, 1, vec![1.0]).unwrap(),
            Mat64::new(readout.len(), 1, readout.to_vec()).unwrap(),
        )
        .unwrap()
    }

    fn scalar_inputs(values: &[f64]) -> Vec<PatchInput> {
        values.iter().map(|v| PatchInput::new(vec![vec![*v]]).unwrap()).collect()
    }

    #[test]
    fn disagreement_identical_models() {
        let xs = scalar_inputs(&[0.5, 1.0, 2.0, 3.0]);
        let pool: Vec<PoolItem<'_>> = xs.iter().enumerate().map(|(i, x)| (i, x)).collect();
        let m = linear_model(&[1.0, 0.0, -1.0]);
        let models = vec![m.clone(), m.clone(), m];
        assert_eq!(select_disagreement(&pool, &models, 2, 2).unwrap(), vec![0, 1]);
        assert!(select_disagreement(&pool, &models[..2], 2, 2).is_err());
    }

    #[test]
    fn disagreement_key_ordering() {
        let p = |v: &[f64]| ProbVector::new(v.to_vec()).unwrap();
        let three = disagreement_key(0, &[p(&[0.8, 0.1, 0.1, 0.0]), p(&[0.1, 0.8, 0.1, 0.0]), p(&[0.1, 0.1, 0.8, 0.0])], 3).unwrap();
        let two = disagreement_key(1, &[p(&[0.8, 0.1, 0.1, 0.0]), p(&[0.8, 0.1, 0.1, 0.0]), p(&[0.1, 0.8, 0.1, 0.0])], 3).unwrap();
        let one = disagreement_key(2, &[p(&[0.0, 1.0, 0.0, 0.0]), p(&[0.1, 0.9, 0.0, 0.0]), p(&[0.0, 0.6, 0.4, 0.0])], 3).unwrap();
        assert_eq!((three.distinct, two.distinct, one.distinct), (3, 2, 1));
        assert!(!three.rejected && !two.rejected && !one.rejected);
        // pairwise L1 for `two`: 0, 1.4, 1.4 → mean 2.8/3
        assert!((two.spread - 2.8 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn disagreement_hand_table() {
        // Scalar inputs s ∈ {1, 2, 3, 4}; logits are s · read-out column.
        let xs = scalar_inputs(&[1.0, 2.0, 3.0, 4.0]);
        let pool: Vec<PoolItem<'_>> = xs.iter().enumerate().map(|(i, x)| (i, x)).collect();
        let models = vec![
            linear_model(&[1.0, 0.0, -5.0]),
            linear_model(&[0.0, 1.0, -5.0]),
            linear_model(&[1.0, 0.0, -5.0]),
        ];
        // Every sample: preds (0, 1, 0) → 2 distinct. Spread grows with s
        // because the softmaxes sharpen, so the ranking is 3, 2, 1, 0.
        assert_eq!(select_disagreement(&pool, &models, 2, 4).unwrap(), vec![3, 2, 1, 0]);
        // Model 3 votes unknown for every sample → all rejected, same key order.
        let rejecting = vec![models[0].clone(), models[1].clone(), linear_model(&[0.0, 0.0, 1.0])];
        assert_eq!(select_disagreement(&pool, &rejecting, 2, 2).unwrap().len(), 2);
    }

    #[test]
    fn uncertainty_and_random() {
        let xs = scalar_inputs(&[3.0, 0.0, 1.0]);
        let pool: Vec<PoolItem<'_>> = xs.iter().enumerate().map(|(i, x)| (i, x)).collect();
        let f = linear_model(&[1.0, -1.0]);
        // x = 0 gives a uniform prediction.
        assert_eq!(select_uncertainty(&pool, &f, UncertaintyKind::Entropy, 1).unwrap(), vec![1]);
        assert_eq!(select_uncertainty(&pool, &f, UncertaintyKind::Margin, 5).unwrap().len(), 3);

        let ids: Vec<usize> = (100..140).collect();
        let a = select_random(&ids, 7, &mut rng_from(5, 1)).unwrap();
        assert_eq!(a, select_random(&ids, 7, &mut rng_from(5, 1)).unwrap());
        let mut all = select_random(&ids, 50, &mut rng_from(5, 1)).unwrap();
        all.sort_unstable();
        assert_eq!(all, ids);
    }

    #[test]
    fn strategy_names_round_trip() {
        for name in ["samosa", "samosa-l", "samosa-b1", "samosa-b10", "samosa-r", "disagree3", "entropy", "confidence", "margin", "random"] {
            let kind: StrategyKind = name.parse().unwrap();
            assert_eq!(format!("{kind}"), name);
        }
        for bad in ["samosa-b0", "samosa-b11", "samosa-b05", "bald", ""] {
            assert!(bad.parse::<StrategyKind>().is_err(), "{bad}");
        }
    }
}
