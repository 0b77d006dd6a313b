//! Per-sample query scores: SAMIS-P and the uncertainty baselines.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{ModelParams, PatchInput};
use crate::numerics::{entropy_unchecked, l1_dist, ProbVector};

/// An unlabeled sample as strategies see it: id and input, no ground truth.
pub type PoolItem<'a> = (usize, &'a PatchInput);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleScore {
    pub id: usize,
    /// SAMIS-P, `‖p_SAM − p_SGD‖₁`.
    pub score: f64,
    /// Neither model predicts the unknown bucket.
    pub accepted: bool,
    pub sgd_pred: usize,
    pub sam_pred: usize,
}

/// SAMIS-P: L1 distance between SAM and SGD probability vectors.
pub fn samis_p(p_sam: &ProbVector, p_sgd: &ProbVector) -> Result<f64> {
    l1_dist(p_sam, p_sgd)
}

fn check_distinguisher(f: &ModelParams, num_known: usize) -> Result<()> {
    if f.num_classes() != num_known + 1 {
        return Err(Error::OutputSize { expected: num_known + 1, got: f.num_classes() });
    }
    Ok(())
}

/// Scores every pool sample with SAMIS-P and applies the K+1 rejection:
/// a sample is rejected if either model's argmax is the unknown bucket.
pub fn score_pool(
    pool: &[PoolItem<'_>],
    f_sgd: &ModelParams,
    f_sam: &ModelParams,
    num_known: usize,
) -> Result<Vec<SampleScore>> {
    check_distinguisher(f_sgd, num_known)?;
    check_distinguisher(f_sam, num_known)?;
    pool.iter()
        .map(|(id, x)| {
            let p_sgd = f_sgd.predict_proba(x)?;
            let p_sam = f_sam.predict_proba(x)?;
            let (sgd_pred, sam_pred) = (p_sgd.argmax(), p_sam.argmax());
            Ok(SampleScore {
                id: *id,
                score: samis_p(&p_sam, &p_sgd)?,
                accepted: sgd_pred < num_known && sam_pred < num_known,
                sgd_pred,
                sam_pred,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UncertaintyKind {
    Entropy,
    Confidence,
    Margin,
}

impl UncertaintyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            UncertaintyKind::Entropy => "entropy",
            UncertaintyKind::Confidence => "confidence",
            UncertaintyKind::Margin => "margin",
        }
    }
}

impl fmt::Display for UncertaintyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for UncertaintyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "entropy" => Ok(Self::Entropy),
            "confidence" => Ok(Self::Confidence),
            "margin" => Ok(Self::Margin),
            other => Err(Error::UnknownStrategy(other.into())),
        }
    }
}

/// Uncertainty of one prediction; higher means more uncertain.
///
/// Margin is reported negated, `−(p₍₁₎ − p₍₂₎)`, so every kind ranks the
/// same way.
pub fn uncertainty(p: &ProbVector, kind: UncertaintyKind) -> Result<f64> {
    match kind {
        UncertaintyKind::Entropy => Ok(entropy_unchecked(p)),
        UncertaintyKind::Confidence => Ok(1.0 - p[p.argmax()]),
        UncertaintyKind::Margin => {
            if p.len() < 2 {
                return Err(Error::Insufficient("margin needs at least two classes".into()));
            }
            let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for &v in p.iter() {
                if v > first {
                    second = first;
                    first = v;
                } else if v > second {
                    second = v;
                }
            }
            Ok(-(first - second))
        }
    }
}

pub fn uncertainty_scores(
    pool: &[PoolItem<'_>],
    f: &ModelParams,
    kind: UncertaintyKind,
) -> Result<Vec<(usize, f64)>> {
    pool.iter().map(|(id, x)| Ok((*id, uncertainty(&f.predict_proba(x)?, kind)?))).collect()
}
