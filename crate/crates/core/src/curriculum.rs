//! Error-proportional minibatch sampling.
//!
//! After each epoch the per-landmark validation error is measured; every
//! training image then gets a selection weight equal to the mean error of
//! the landmarks its view defines, floored at `floor_eps × max` and
//! normalized.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::landmarks::{LandmarkId, LandmarkSet, ViewLabel, NUM_LANDMARKS};
use crate::model::{Regressor, OUTPUTS};
use crate::nn::Real;

pub const EPOCH_LENGTH: usize = 400;
pub const DEFAULT_FLOOR_EPS: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumState {
    pub per_landmark_error: [f64; NUM_LANDMARKS],
    pub per_image_weight: Vec<f64>,
    pub floor_eps: f64,
}

impl CurriculumState {
    /// Uniform weights, used before the first validation pass.
    pub fn uniform(n_images: usize, floor_eps: f64) -> Self {
        CurriculumState {
            per_landmark_error: [0.0; NUM_LANDMARKS],
            per_image_weight: vec![1.0 / n_images as f64; n_images],
            floor_eps,
        }
    }

    pub fn update(&mut self, errors: [f64; NUM_LANDMARKS], views: &[ViewLabel]) {
        self.per_landmark_error = errors;
        self.per_image_weight = update_sampling_weights(&errors, views, self.floor_eps);
    }

    /// Shannon entropy (nats) of the image weights.
    pub fn weight_entropy(&self) -> f64 {
        -self
            .per_image_weight
            .iter()
            .filter(|&&w| w > 0.0)
            .map(|&w| w * w.ln())
            .sum::<f64>()
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Vec<usize> {
        sample_minibatch(&self.per_image_weight, batch_size, rng)
    }
}

/// Mean Euclidean error per landmark over the samples where it is present
/// in the ground truth. `preds` are raw regression outputs.
pub fn landmark_errors(
    preds: &[[f64; OUTPUTS]],
    gts: &[LandmarkSet],
) -> Result<[f64; NUM_LANDMARKS]> {
    let mut sum = [0.0; NUM_LANDMARKS];
    let mut count = [0usize; NUM_LANDMARKS];
    for (pred, gt) in preds.iter().zip(gts) {
        for id in gt.present_ids() {
            let i = id.index();
            let p = gt.point(id);
            sum[i] += (pred[2 * i] - p.x).hypot(pred[2 * i + 1] - p.y);
            count[i] += 1;
        }
    }
    let mut out = [0.0; NUM_LANDMARKS];
    for i in 0..NUM_LANDMARKS {
        if count[i] == 0 {
            return Err(Error::EmptyLandmarkCohort(LandmarkId::from_index(i)));
        }
        out[i] = sum[i] / count[i] as f64;
    }
    Ok(out)
}

pub fn predict_samples<T: Real>(
    model: &Regressor<T>,
    samples: &[Sample],
) -> Result<Vec<[f64; OUTPUTS]>> {
    samples
        .iter()
        .map(|s| {
            let x: Vec<T> = s.image.pixels().iter().map(|&v| T::lit(v as f64)).collect();
            let out = model.forward_one(&x)?;
            Ok(out.map(|v| v.to_f64().unwrap_or(f64::NAN)))
        })
        .collect()
}

pub fn per_landmark_validation_error<T: Real>(
    model: &Regressor<T>,
    valset: &[Sample],
) -> Result<[f64; NUM_LANDMARKS]> {
    let preds = predict_samples(model, valset)?;
    let gts: Vec<LandmarkSet> = valset.iter().map(|s| s.landmarks).collect();
    landmark_errors(&preds, &gts)
}

/// Per-image weights from per-landmark errors: the mean error over the
/// image's view landmarks, floored at `floor_eps × max_score`, normalized.
/// All-zero scores give uniform weights.
pub fn update_sampling_weights(
    errors: &[f64; NUM_LANDMARKS],
    views: &[ViewLabel],
    floor_eps: f64,
) -> Vec<f64> {
    let score = |v: ViewLabel| {
        let ids = v.ids();
        ids.iter().map(|id| errors[id.index()]).sum::<f64>() / ids.len() as f64
    };
    let scores: Vec<f64> = views.iter().map(|&v| score(v)).collect();
    let max = scores.iter().copied().fold(0.0, f64::max);
    if !max.is_finite() || max <= 0.0 {
        return vec![1.0 / views.len() as f64; views.len()];
    }
    let floor = floor_eps * max;
    let raw: Vec<f64> = scores.iter().map(|&s| s.max(floor)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|&r| r / total).collect()
}

/// `batch_size` i.i.d. categorical draws with replacement.
pub fn sample_minibatch<R: Rng + ?Sized>(
    weights: &[f64],
    batch_size: usize,
    rng: &mut R,
) -> Vec<usize> {
    let dist = WeightedIndex::new(weights).expect("weights are normalized and positive");
    (0..batch_size).map(|_| dist.sample(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landmarks::Point;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gt(view: ViewLabel) -> LandmarkSet {
        let mut s = LandmarkSet::empty();
        for (k, &id) in view.ids().iter().enumerate() {
            s.set(id, Point::new(10.0 + k as f64, 20.0)).unwrap();
        }
        s
    }

    fn all_views() -> Vec<LandmarkSet> {
        ViewLabel::ALL.iter().map(|&v| gt(v)).collect()
    }

    #[test]
    fn perfect_predictor_zero_error() {
        let gts = all_views();
        let preds: Vec<_> = gts.iter().map(|g| g.to_target()).collect();
        assert_eq!(landmark_errors(&preds, &gts).unwrap(), [0.0; NUM_LANDMARKS]);
    }

    #[test]
    fn offset_predictor_gives_five() {
        let gts = all_views();
        let preds: Vec<_> = gts
            .iter()
            .map(|g| {
                let mut t = g.to_target();
                for id in g.present_ids() {
                    t[2 * id.index()] += 3.0;
                    t[2 * id.index() + 1] += 4.0;
                }
                t
            })
            .collect();
        assert_eq!(landmark_errors(&preds, &gts).unwrap(), [5.0; NUM_LANDMARKS]);
    }

    #[test]
    fn mean_over_cohort() {
        let mut gts = all_views();
        gts.push(gt(ViewLabel::Ch2));
        let mut preds: Vec<_> = gts.iter().map(|g| g.to_target()).collect();
        preds[0][0] += 3.0;
        preds[3][1] += 5.0;
        assert_eq!(landmark_errors(&preds, &gts).unwrap()[0], 4.0);
    }

    #[test]
    fn missing_cohort_is_an_error() {
        let gts = vec![gt(ViewLabel::Ch2)];
        let preds = vec![gts[0].to_target()];
        assert!(
            matches!(landmark_errors(&preds, &gts), Err(Error::EmptyLandmarkCohort(id)) if id.get() == 3)
        );
    }

    #[test]
    fn weight_examples() {
        let views = [ViewLabel::Ch2, ViewLabel::Ch4];
        let mut e = [0.0; NUM_LANDMARKS];
        e[0] = 2.0;
        e[1] = 4.0;
        for i in [4, 5, 8, 9] {
            e[i] = 1.0;
        }
        assert_eq!(
            update_sampling_weights(&e, &views, DEFAULT_FLOOR_EPS),
            vec![0.75, 0.25]
        );
        assert_eq!(
            update_sampling_weights(&[0.0; 10], &views, DEFAULT_FLOOR_EPS),
            vec![0.5, 0.5]
        );
        assert_eq!(
            update_sampling_weights(&[2.0; 10], &views, DEFAULT_FLOOR_EPS),
            vec![0.5, 0.5]
        );
    }

    #[test]
    fn floor_keeps_easy_images_alive() {
        let mut e = [0.0; NUM_LANDMARKS];
        e[0] = 1.0;
        e[1] = 1.0;
        let w = update_sampling_weights(&e, &[ViewLabel::Ch2, ViewLabel::Ch3], 1e-3);
        assert!((w[1] - 1e-3 / 1.001).abs() < 1e-15);
    }

    #[test]
    fn minibatch_size_and_determinism() {
        let w = [0.2, 0.3, 0.5];
        let a = sample_minibatch(&w, 16, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a.len(), 16);
        assert_eq!(
            a,
            sample_minibatch(&w, 16, &mut ChaCha8Rng::seed_from_u64(1))
        );
    }

    #[test]
    fn entropy_of_uniform() {
        let s = CurriculumState::uniform(8, DEFAULT_FLOOR_EPS);
        assert!((s.weight_entropy() - 8f64.ln()).abs() < 1e-12);
    }
}
