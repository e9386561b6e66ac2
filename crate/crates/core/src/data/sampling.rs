//! Training-sample selection.

use rand::Rng;

use super::{LabelMap, VideoClip};
use crate::error::Result;
use crate::Error;

/// Largest key-to-annotation distance used when drawing training samples.
pub const MAX_DISTANCE: usize = 9;

/// Frames `f1 < f2 < f3` of one training sample; `f3` is annotated.
///
/// When `f3 - f1 == 1` there is no intermediate frame and `f2` is `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTriplet {
    pub f1: usize,
    pub f2: Option<usize>,
    pub f3: usize,
    pub gt: LabelMap,
}

impl TrainingTriplet {
    pub fn distance(&self) -> usize {
        self.f3 - self.f1
    }
}

/// Builds the triplet for a fixed `(f1, f3)`, drawing `f2` uniformly from the
/// open interval between them.
pub fn triplet_from<R: Rng + ?Sized>(clip: &VideoClip, f1: usize, f3: usize, rng: &mut R) -> Result<TrainingTriplet> {
    if f1 >= f3 || f3 >= clip.len() {
        return Err(Error::InvalidArgument(format!("need f1 < f3 < {}, got {f1}, {f3}", clip.len())));
    }
    let gt = clip
        .labels
        .get(&f3)
        .cloned()
        .ok_or_else(|| Error::InvalidArgument(format!("frame {f3} of {} is not annotated", clip.clip_id)))?;
    let f2 = (f3 - f1 > 1).then(|| rng.random_range(f1 + 1..f3));
    Ok(TrainingTriplet { f1, f2, f3, gt })
}

/// Draws a training triplet: `f3` uniformly among annotated frames with at
/// least two predecessors, `f1` uniformly at distance 1 to 9 before it
/// (clipped to the clip start), `f2` uniformly between them.
pub fn sample_training_triplet<R: Rng + ?Sized>(clip: &VideoClip, rng: &mut R) -> Result<TrainingTriplet> {
    let candidates: Vec<usize> = clip.labels.keys().copied().filter(|&i| i >= 2).collect();
    if candidates.is_empty() {
        return Err(Error::DataIntegrity(format!(
            "clip {} has no annotated frame with two predecessors",
            clip.clip_id
        )));
    }
    let f3 = candidates[rng.random_range(0..candidates.len())];
    let max_d = MAX_DISTANCE.min(f3);
    let f1 = f3 - rng.random_range(1..=max_d);
    triplet_from(clip, f1, f3, rng)
}

/// Draws `(t, t + k)` with `k` uniform over `k_range` (inclusive) and `t`
/// uniform over the valid starts.
pub fn sample_dmnet_pair<R: Rng + ?Sized>(clip_len: usize, rng: &mut R, k_range: (usize, usize)) -> Result<(usize, usize)> {
    let (lo, hi) = k_range;
    if lo == 0 || lo > hi {
        return Err(Error::InvalidArgument(format!("invalid distance range [{lo}, {hi}]")));
    }
    if clip_len <= hi {
        return Err(Error::DataIntegrity(format!("clip of {clip_len} frames is too short for distance {hi}")));
    }
    let k = rng.random_range(lo..=hi);
    let t = rng.random_range(0..clip_len - k);
    Ok((t, t + k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array2, Array3};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn clip(n: usize, labeled: &[usize]) -> VideoClip {
        let labels = labeled
            .iter()
            .map(|&i| (i, LabelMap::new(Array2::zeros((2, 2)), 2, 255).unwrap()))
            .collect();
        VideoClip::new("c", vec![Array3::zeros((3, 2, 2)); n], labels, BTreeMap::new(), BTreeMap::new()).unwrap()
    }

    #[test]
    fn minimum_distance_has_no_intermediate() {
        let c = clip(30, &[19]);
        let t = triplet_from(&c, 18, 19, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!((t.f1, t.f2, t.f3, t.distance()), (18, None, 19, 1));
    }

    #[test]
    fn sampled_triplets_respect_bounds() {
        let c = clip(30, &[2, 19, 29]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..2000 {
            let t = sample_training_triplet(&c, &mut rng).unwrap();
            assert!(c.labels.contains_key(&t.f3));
            assert!((1..=MAX_DISTANCE).contains(&t.distance()));
            if let Some(f2) = t.f2 {
                assert!(t.f1 < f2 && f2 < t.f3);
            } else {
                assert_eq!(t.distance(), 1);
            }
        }
    }

    #[test]
    fn unlabeled_clip_is_an_error() {
        let c = clip(30, &[1]);
        assert!(sample_training_triplet(&c, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn dmnet_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let (a, b) = sample_dmnet_pair(30, &mut rng, (1, 1)).unwrap();
            assert_eq!(b, a + 1);
            let (a, b) = sample_dmnet_pair(30, &mut rng, (1, 9)).unwrap();
            assert!(b < 30 && (1..=9).contains(&(b - a)));
        }
        assert!(sample_dmnet_pair(9, &mut rng, (1, 9)).is_err());
    }
}
