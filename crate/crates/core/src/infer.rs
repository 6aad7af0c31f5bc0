//! Case-level inference: repeated sampling rounds scored by the model and
//! decided by strict-majority voting.

use std::collections::HashMap;

use crate::data::preprocess::{batch_tensor, load_gray, preprocess_plane, PreprocessSpec};
use crate::data::ScanCase;
use crate::error::{Error, Result};
use crate::model::PvtModel;
use crate::sampler::{batch_average, SliceSampler, BATCH_SIZE};
use crate::tensor::tape::Tape;
use crate::tensor::Tensor;
use crate::voting::{vote, CaseVerdict, VotingConfig};

/// Anything that maps a [B, 3, r, r] slice batch to B scalar scores.
/// Implemented by the backbone; tests substitute closed-form scorers.
pub trait SliceScorer {
    fn score_slices(&self, batch: &Tensor) -> Result<Vec<f32>>;
}

impl SliceScorer for PvtModel {
    fn score_slices(&self, batch: &Tensor) -> Result<Vec<f32>> {
        let tape = Tape::disabled();
        let scores = self.forward(&tape, batch)?;
        Ok(scores.data().to_vec())
    }
}

/// Load-and-preprocess with per-case memoization: repeated rounds usually
/// revisit central slices, so each slice is decoded at most once.
struct SliceCache<'a> {
    case: &'a ScanCase,
    spec: &'a PreprocessSpec,
    planes: HashMap<usize, Vec<f32>>,
}

impl<'a> SliceCache<'a> {
    fn new(case: &'a ScanCase, spec: &'a PreprocessSpec) -> SliceCache<'a> {
        SliceCache {
            case,
            spec,
            planes: HashMap::new(),
        }
    }

    fn plane(&mut self, index: usize) -> Result<&[f32]> {
        if !self.planes.contains_key(&index) {
            let path = &self.case.slice_paths[index];
            let (img, h, w) = load_gray(path).map_err(|e| {
                Error::Format(format!("case {}: {e}", self.case.case_id))
            })?;
            let plane = preprocess_plane(&img, h, w, self.spec)?;
            self.planes.insert(index, plane);
        }
        Ok(self.planes.get(&index).expect("just inserted"))
    }
}

/// Run `voting.rounds` independent rounds on one case: sample 8 slice
/// indices, preprocess, score, average; then apply the majority rule.
/// Deterministic given (scorer weights, sampler state).
pub fn diagnose_case<S: SliceScorer>(
    scorer: &S,
    case: &ScanCase,
    spec: &PreprocessSpec,
    sampler: &mut SliceSampler,
    voting: &VotingConfig,
) -> Result<CaseVerdict> {
    if case.is_empty() {
        return Err(Error::Config(format!(
            "case {} has no slices to diagnose",
            case.case_id
        )));
    }
    let mut cache = SliceCache::new(case, spec);
    let mut averages = Vec::with_capacity(voting.rounds);
    for _ in 0..voting.rounds {
        let indices = sampler.sample_indices(case.len())?;
        let mut planes: Vec<Vec<f32>> = Vec::with_capacity(BATCH_SIZE);
        for idx in indices {
            planes.push(cache.plane(idx)?.to_vec());
        }
        let refs: Vec<&[f32]> = planes.iter().map(|p| p.as_slice()).collect();
        let batch = batch_tensor(&refs, spec.resolution);
        let scores = scorer.score_slices(&batch)?;
        if scores.len() != BATCH_SIZE {
            return Err(Error::Shape(format!(
                "scorer returned {} scores for a batch of {BATCH_SIZE}",
                scores.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Numeric(format!(
                "case {}: non-finite slice score",
                case.case_id
            )));
        }
        averages.push(batch_average(&scores));
    }
    vote(&case.case_id, &averages, voting)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{generate_synthetic, SyntheticSpec};
    use crate::data::{load_dataset, Label};
    use crate::sampler::DEFAULT_SIGMA_DIVISOR;
    use crate::voting::Verdict;

    /// Scores every slice with a fixed constant.
    struct ConstScorer(f32);

    impl SliceScorer for ConstScorer {
        fn score_slices(&self, batch: &Tensor) -> Result<Vec<f32>> {
            Ok(vec![self.0; batch.shape()[0]])
        }
    }

    /// Scores a slice by its mean intensity minus a threshold.
    struct MeanScorer {
        threshold: f32,
    }

    impl SliceScorer for MeanScorer {
        fn score_slices(&self, batch: &Tensor) -> Result<Vec<f32>> {
            let b = batch.shape()[0];
            let per = batch.numel() / b;
            Ok((0..b)
                .map(|i| {
                    let s: f32 = batch.data()[i * per..(i + 1) * per].iter().sum();
                    s / per as f32 - self.threshold
                })
                .collect())
        }
    }

    fn tiny_tree() -> (tempfile::TempDir, Vec<crate::data::ScanCase>) {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            cases_per_class: 2,
            min_slices: 50,
            max_slices: 52,
            resolution: 32,
            seed: 11,
            ..SyntheticSpec::default()
        };
        generate_synthetic(&spec, dir.path()).unwrap();
        let cases = load_dataset(&dir.path().join("train")).unwrap();
        (dir, cases)
    }

    #[test]
    fn constant_positive_scorer_gives_positive() {
        let (_tmp, cases) = tiny_tree();
        let spec = PreprocessSpec {
            resolution: 32,
            ..PreprocessSpec::default()
        };
        let mut sampler = SliceSampler::new(1, DEFAULT_SIGMA_DIVISOR).unwrap();
        let v = diagnose_case(
            &ConstScorer(1.0),
            &cases[0],
            &spec,
            &mut sampler,
            &VotingConfig::default(),
        )
        .unwrap();
        assert_eq!(v.label, Verdict::Positive);
        assert_eq!(v.positive_rounds, 10);
        assert!(v.round_averages.iter().all(|&a| (a - 1.0).abs() < 1e-12));
    }

    #[test]
    fn constant_zero_scorer_gives_negative() {
        // zero average is not plus
        let (_tmp, cases) = tiny_tree();
        let spec = PreprocessSpec {
            resolution: 32,
            ..PreprocessSpec::default()
        };
        let mut sampler = SliceSampler::new(1, DEFAULT_SIGMA_DIVISOR).unwrap();
        let v = diagnose_case(
            &ConstScorer(0.0),
            &cases[0],
            &spec,
            &mut sampler,
            &VotingConfig::default(),
        )
        .unwrap();
        assert_eq!(v.label, Verdict::Negative);
        assert_eq!(v.positive_rounds, 0);
    }

    #[test]
    fn fixed_seed_replays_identical_verdicts() {
        let (_tmp, cases) = tiny_tree();
        let spec = PreprocessSpec {
            resolution: 32,
            ..PreprocessSpec::default()
        };
        let scorer = MeanScorer { threshold: 0.28 };
        let mut lines = Vec::new();
        for _ in 0..3 {
            let mut sampler = SliceSampler::new(77, DEFAULT_SIGMA_DIVISOR).unwrap();
            let v = diagnose_case(&scorer, &cases[0], &spec, &mut sampler, &VotingConfig::default())
                .unwrap();
            lines.push(v.to_json_line());
        }
        assert_eq!(lines[0], lines[1]);
        assert_eq!(lines[1], lines[2]);
    }

    #[test]
    fn mean_threshold_scorer_separates_synthetic_classes() {
        // central slices of positive cases are brighter; sampling favors
        // them. Enhancement off: equalization normalizes brightness away.
        let (_tmp, cases) = tiny_tree();
        let spec = PreprocessSpec {
            resolution: 32,
            enhancement: crate::data::preprocess::Enhancement::None,
        };
        let scorer = MeanScorer { threshold: 0.30 };
        for case in &cases {
            let mut sampler = SliceSampler::new(5, DEFAULT_SIGMA_DIVISOR).unwrap();
            let v = diagnose_case(&scorer, case, &spec, &mut sampler, &VotingConfig::default())
                .unwrap();
            let expected = match case.label {
                Label::Positive => Verdict::Positive,
                _ => Verdict::Negative,
            };
            assert_eq!(v.label, expected, "case {}", case.case_id);
        }
    }

    #[test]
    fn backbone_scorer_runs_on_a_real_case() {
        let (_tmp, cases) = tiny_tree();
        let config = crate::model::config::PvtConfig {
            input_resolution: 32,
            embed_dims: [4, 8, 16, 32],
            depths: [1, 1, 1, 1],
            num_heads: [1, 2, 4, 8],
            sr_ratios: [8, 4, 2, 1],
            mlp_ratios: [1, 1, 1, 1],
            ..crate::model::config::PvtConfig::default()
        };
        let model = PvtModel::new(config, 3).unwrap();
        let spec = PreprocessSpec {
            resolution: 32,
            ..PreprocessSpec::default()
        };
        let mut sampler = SliceSampler::new(2, DEFAULT_SIGMA_DIVISOR).unwrap();
        let v = diagnose_case(
            &model,
            &cases[0],
            &spec,
            &mut sampler,
            &VotingConfig::new(2).unwrap(),
        )
        .unwrap();
        assert_eq!(v.round_averages.len(), 2);
        assert!(v.round_averages.iter().all(|a| a.is_finite()));
    }
}
