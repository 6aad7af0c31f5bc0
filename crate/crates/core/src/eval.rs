//! Evaluation harness: vote-diagnose every labeled case, tally a confusion
//! matrix with COVID as the positive class, and report macro F1.

use crate::data::preprocess::PreprocessSpec;
use crate::data::{Label, ScanCase};
use crate::error::Result;
use crate::infer::{diagnose_case, SliceScorer};
use crate::metrics::{Confusion, EvalReport};
use crate::rng::subseed;
use crate::sampler::SliceSampler;
use crate::voting::{Verdict, VotingConfig};

/// Evaluate `scorer` on every labeled case. Unlabeled cases are excluded and
/// counted in the report. Each case gets its own sampler stream derived from
/// (seed, case_id), so results are independent of evaluation order and
/// deterministic given the seed.
pub fn evaluate<S: SliceScorer>(
    scorer: &S,
    cases: &[ScanCase],
    pre: &PreprocessSpec,
    sigma_divisor: f64,
    voting: &VotingConfig,
    seed: u64,
) -> Result<EvalReport> {
    let mut ordered: Vec<&ScanCase> = cases.iter().collect();
    ordered.sort_by(|a, b| a.case_id.cmp(&b.case_id));

    let mut confusion = Confusion::default();
    let mut verdicts = Vec::new();
    let mut skipped = 0usize;
    for case in ordered {
        if case.label == Label::Unknown {
            log::warn!("case {}: unlabeled, excluded from evaluation", case.case_id);
            skipped += 1;
            continue;
        }
        let mut sampler = SliceSampler::new(subseed(seed, &case.case_id), sigma_divisor)?;
        let verdict = diagnose_case(scorer, case, pre, &mut sampler, voting)?;
        match (case.label, verdict.label) {
            (Label::Positive, Verdict::Positive) => confusion.true_pos += 1,
            (Label::Positive, Verdict::Negative) => confusion.false_neg += 1,
            (Label::Negative, Verdict::Positive) => confusion.false_pos += 1,
            (Label::Negative, Verdict::Negative) => confusion.true_neg += 1,
            (Label::Unknown, _) => unreachable!("unlabeled cases are skipped"),
        }
        verdicts.push(verdict);
    }
    EvalReport::from_confusion(confusion, skipped, verdicts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::load_dataset;
    use crate::data::synth::{generate_synthetic, SyntheticSpec};
    use crate::error::Error;
    use crate::sampler::DEFAULT_SIGMA_DIVISOR;
    use crate::tensor::Tensor;

    /// Scores by raw mean intensity against a threshold (oracle model for
    /// the synthetic data when enhancement is off).
    struct MeanScorer(f32);

    impl SliceScorer for MeanScorer {
        fn score_slices(&self, batch: &Tensor) -> Result<Vec<f32>> {
            let b = batch.shape()[0];
            let per = batch.numel() / b;
            Ok((0..b)
                .map(|i| {
                    let s: f32 = batch.data()[i * per..(i + 1) * per].iter().sum();
                    s / per as f32 - self.0
                })
                .collect())
        }
    }

    fn tree(seed: u64) -> (tempfile::TempDir, Vec<ScanCase>) {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            cases_per_class: 3,
            min_slices: 50,
            max_slices: 54,
            resolution: 32,
            seed,
            ..SyntheticSpec::default()
        };
        generate_synthetic(&spec, dir.path()).unwrap();
        let cases = load_dataset(&dir.path().join("train")).unwrap();
        (dir, cases)
    }

    fn raw_spec() -> PreprocessSpec {
        PreprocessSpec {
            enhancement: crate::data::preprocess::Enhancement::None,
            resolution: 32,
        }
    }

    #[test]
    fn oracle_scorer_scores_perfectly() {
        let (_tmp, cases) = tree(21);
        let report = evaluate(
            &MeanScorer(0.30),
            &cases,
            &raw_spec(),
            DEFAULT_SIGMA_DIVISOR,
            &VotingConfig::default(),
            9,
        )
        .unwrap();
        assert_eq!(report.macro_f1, 1.0);
        assert_eq!(report.positive_accuracy, 1.0);
        assert_eq!(report.negative_accuracy, 1.0);
        assert_eq!(report.cases_evaluated, 6);
        assert_eq!(report.skipped_unlabeled, 0);
        assert_eq!(report.verdicts.len(), 6);
    }

    #[test]
    fn unlabeled_cases_are_excluded_and_counted() {
        let (_tmp, mut cases) = tree(22);
        cases[0].label = Label::Unknown;
        let report = evaluate(
            &MeanScorer(0.30),
            &cases,
            &raw_spec(),
            DEFAULT_SIGMA_DIVISOR,
            &VotingConfig::new(3).unwrap(),
            9,
        )
        .unwrap();
        assert_eq!(report.skipped_unlabeled, 1);
        assert_eq!(report.cases_evaluated, 5);
    }

    #[test]
    fn report_is_independent_of_case_order() {
        let (_tmp, mut cases) = tree(23);
        let a = evaluate(
            &MeanScorer(0.30),
            &cases,
            &raw_spec(),
            DEFAULT_SIGMA_DIVISOR,
            &VotingConfig::new(3).unwrap(),
            5,
        )
        .unwrap()
        .to_json();
        cases.reverse();
        let b = evaluate(
            &MeanScorer(0.30),
            &cases,
            &raw_spec(),
            DEFAULT_SIGMA_DIVISOR,
            &VotingConfig::new(3).unwrap(),
            5,
        )
        .unwrap()
        .to_json();
        assert_eq!(a, b);
    }

    #[test]
    fn all_unlabeled_is_rejected() {
        let (_tmp, mut cases) = tree(24);
        for c in &mut cases {
            c.label = Label::Unknown;
        }
        let err = evaluate(
            &MeanScorer(0.30),
            &cases,
            &raw_spec(),
            DEFAULT_SIGMA_DIVISOR,
            &VotingConfig::new(1).unwrap(),
            5,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn rates_recompute_from_confusion() {
        let (_tmp, cases) = tree(25);
        // deliberately bad threshold: everything scores positive
        let report = evaluate(
            &MeanScorer(-1.0),
            &cases,
            &raw_spec(),
            DEFAULT_SIGMA_DIVISOR,
            &VotingConfig::new(3).unwrap(),
            5,
        )
        .unwrap();
        let c = &report.confusion;
        assert_eq!(c.true_pos, 3);
        assert_eq!(c.false_pos, 3);
        assert_eq!(c.true_neg + c.false_neg, 0);
        assert!((report.overall_accuracy - 0.5).abs() < 1e-12);
        assert!((report.positive_accuracy - 1.0).abs() < 1e-12);
        assert!((report.negative_accuracy - 0.0).abs() < 1e-12);
    }
}
