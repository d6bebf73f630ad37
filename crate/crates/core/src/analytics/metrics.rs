//! Prediction-quality reports: accuracy by token position, per-action
//! precision/recall at end of dialog, and expected calibration error with
//! reliability bins.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize_dialog, DialogRecord, Vocab};
use crate::encoder::Predictor;
use crate::error::{Error, Result};

/// Precision/recall of one action label at the final token, 0.5 threshold.
/// Precision is absent when the action is never predicted positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionMetrics {
    pub name: String,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    /// Number of dialogs where the action actually applies.
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub n_dialogs: usize,
    /// Issue argmax accuracy keyed by token position. Dialogs shorter than
    /// a position are evaluated at their final token.
    pub issue_accuracy: BTreeMap<usize, f64>,
    /// No-recontact accuracy (0.5 threshold) keyed by token position.
    pub no_recontact_accuracy: BTreeMap<usize, f64>,
    pub actions: Vec<ActionMetrics>,
}

/// One equal-width confidence bin of a reliability table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean_confidence: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskCalibration {
    /// Expected calibration error: support-weighted |accuracy - confidence|
    /// over the bins.
    pub ece: f64,
    pub bins: Vec<ReliabilityBin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub n_bins: usize,
    /// Multiclass form: confidence is the max issue probability, a sample
    /// counts as accurate when the argmax matches the label.
    pub issue: TaskCalibration,
    /// Binary form: samples are binned by the predicted no-recontact
    /// probability and compared against the empirical positive rate.
    pub no_recontact: TaskCalibration,
    /// All action probabilities pooled into one binary calibration set;
    /// absent when the schema has no actions.
    pub actions: Option<TaskCalibration>,
}

/// Accuracy and calibration combined; the `eval` export shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: AccuracyReport,
    pub calibration: CalibrationReport,
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Issue and no-recontact accuracy at the requested token positions, plus
/// per-action precision/recall at the final token.
pub fn accuracy_report(
    predictor: &dyn Predictor,
    test: &[DialogRecord],
    vocab: &Vocab,
    positions: &[usize],
    max_len: usize,
) -> Result<AccuracyReport> {
    if test.is_empty() {
        return Err(Error::invalid("accuracy report needs a non-empty test set"));
    }
    if let Some(&p) = positions.iter().find(|&&p| p >= max_len) {
        return Err(Error::invalid(format!("position {p} exceeds max_len {max_len}")));
    }
    let schema = predictor.schema();
    let m = schema.n_actions();
    let mut issue_hits = vec![0usize; positions.len()];
    let mut norecon_hits = vec![0usize; positions.len()];
    let mut tp = vec![0usize; m];
    let mut fp = vec![0usize; m];
    let mut fn_ = vec![0usize; m];

    for record in test {
        let labels = schema.encode_labels(&record.labels)?;
        let tokens = tokenize_dialog(record, vocab, max_len);
        let frames = predictor.forward(&tokens.token_ids)?;
        let last = frames.len() - 1;
        for (pi, &p) in positions.iter().enumerate() {
            let frame = &frames[p.min(last)];
            if argmax(&frame.issue) == labels.issue {
                issue_hits[pi] += 1;
            }
            if (frame.no_recontact >= 0.5) == labels.no_recontact {
                norecon_hits[pi] += 1;
            }
        }
        let final_frame = &frames[last];
        for a in 0..m {
            let predicted = final_frame.actions[a] >= 0.5;
            let actual = labels.actions[a];
            match (predicted, actual) {
                (true, true) => tp[a] += 1,
                (true, false) => fp[a] += 1,
                (false, true) => fn_[a] += 1,
                (false, false) => {}
            }
        }
    }

    let n = test.len() as f64;
    Ok(AccuracyReport {
        n_dialogs: test.len(),
        issue_accuracy: positions
            .iter()
            .zip(&issue_hits)
            .map(|(&p, &h)| (p, h as f64 / n))
            .collect(),
        no_recontact_accuracy: positions
            .iter()
            .zip(&norecon_hits)
            .map(|(&p, &h)| (p, h as f64 / n))
            .collect(),
        actions: (0..m)
            .map(|a| ActionMetrics {
                name: schema.actions[a].clone(),
                precision: (tp[a] + fp[a] > 0).then(|| tp[a] as f64 / (tp[a] + fp[a]) as f64),
                recall: (tp[a] + fn_[a] > 0).then(|| tp[a] as f64 / (tp[a] + fn_[a]) as f64),
                support: tp[a] + fn_[a],
            })
            .collect(),
    })
}

/// Bin (confidence, correct) pairs into `n_bins` equal-width bins and fold
/// them into an ECE.
fn calibrate(samples: &[(f64, bool)], n_bins: usize) -> TaskCalibration {
    let width = 1.0 / n_bins as f64;
    let mut conf_sum = vec![0.0; n_bins];
    let mut hit_sum = vec![0usize; n_bins];
    let mut counts = vec![0usize; n_bins];
    for &(conf, correct) in samples {
        let b = ((conf / width) as usize).min(n_bins - 1);
        conf_sum[b] += conf;
        hit_sum[b] += correct as usize;
        counts[b] += 1;
    }
    let total: usize = counts.iter().sum();
    let mut ece = 0.0;
    let mut bins = Vec::with_capacity(n_bins);
    for b in 0..n_bins {
        let (mean_confidence, accuracy) = if counts[b] > 0 {
            (conf_sum[b] / counts[b] as f64, hit_sum[b] as f64 / counts[b] as f64)
        } else {
            (0.0, 0.0)
        };
        if counts[b] > 0 && total > 0 {
            ece += counts[b] as f64 / total as f64 * (accuracy - mean_confidence).abs();
        }
        bins.push(ReliabilityBin {
            lo: b as f64 * width,
            hi: (b + 1) as f64 * width,
            count: counts[b],
            mean_confidence,
            accuracy,
        });
    }
    TaskCalibration { ece, bins }
}

/// Per-task ECE and reliability tables over final-token predictions.
pub fn calibration_report(
    predictor: &dyn Predictor,
    corpus: &[DialogRecord],
    vocab: &Vocab,
    n_bins: usize,
    max_len: usize,
) -> Result<CalibrationReport> {
    if n_bins < 2 {
        return Err(Error::invalid("calibration needs at least 2 bins"));
    }
    if corpus.is_empty() {
        return Err(Error::invalid("calibration report needs a non-empty corpus"));
    }
    let schema = predictor.schema();
    let mut issue_samples = Vec::with_capacity(corpus.len());
    let mut norecon_samples = Vec::with_capacity(corpus.len());
    let mut action_samples = Vec::new();
    for record in corpus {
        let labels = schema.encode_labels(&record.labels)?;
        let tokens = tokenize_dialog(record, vocab, max_len);
        let frames = predictor.forward(&tokens.token_ids)?;
        let frame = frames.last().expect("non-empty dialog");
        let pred = argmax(&frame.issue);
        issue_samples.push((frame.issue[pred], pred == labels.issue));
        norecon_samples.push((frame.no_recontact, labels.no_recontact));
        for (a, &p) in frame.actions.iter().enumerate() {
            action_samples.push((p, labels.actions[a]));
        }
    }
    Ok(CalibrationReport {
        n_bins,
        issue: calibrate(&issue_samples, n_bins),
        no_recontact: calibrate(&norecon_samples, n_bins),
        actions: (!action_samples.is_empty()).then(|| calibrate(&action_samples, n_bins)),
    })
}

/// Accuracy and calibration in one pass-friendly bundle.
pub fn metrics_report(
    predictor: &dyn Predictor,
    test: &[DialogRecord],
    vocab: &Vocab,
    positions: &[usize],
    n_bins: usize,
    max_len: usize,
) -> Result<MetricsReport> {
    Ok(MetricsReport {
        accuracy: accuracy_report(predictor, test, vocab, positions, max_len)?,
        calibration: calibration_report(predictor, test, vocab, n_bins, max_len)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, generate_synthetic, SyntheticConfig};
    use crate::encoder::{PredictionFrame, TaskSchema};

    /// Emits a fixed frame at every position.
    struct ConstantPredictor {
        schema: TaskSchema,
        frame: PredictionFrame,
    }

    impl Predictor for ConstantPredictor {
        fn schema(&self) -> &TaskSchema {
            &self.schema
        }
        fn vocab_size(&self) -> usize {
            usize::MAX
        }
        fn forward(&self, token_ids: &[u32]) -> Result<Vec<PredictionFrame>> {
            Ok(vec![self.frame.clone(); token_ids.len()])
        }
    }

    /// Keys on the planted revealing token: the rule-based reference.
    struct OraclePredictor {
        schema: TaskSchema,
        vocab: Vocab,
        n_issues: usize,
    }

    impl Predictor for OraclePredictor {
        fn schema(&self) -> &TaskSchema {
            &self.schema
        }
        fn vocab_size(&self) -> usize {
            self.vocab.len()
        }
        fn forward(&self, token_ids: &[u32]) -> Result<Vec<PredictionFrame>> {
            let k = self.n_issues;
            let reveal_ids: Vec<u32> = (0..k)
                .map(|i| self.vocab.id(&crate::corpus::reveal_token(i)))
                .collect();
            let mut seen: Option<usize> = None;
            let mut frames = Vec::with_capacity(token_ids.len());
            for &t in token_ids {
                if let Some(pos) = reveal_ids.iter().position(|&r| r == t) {
                    seen = Some(pos);
                }
                let issue = match seen {
                    Some(i) => {
                        let mut p = vec![0.0; k];
                        p[i] = 1.0;
                        p
                    }
                    None => vec![1.0 / k as f64; k],
                };
                let no_recontact = match seen {
                    Some(i) => {
                        if crate::corpus::recontact_for(i) { 0.0 } else { 1.0 }
                    }
                    None => 0.5,
                };
                let actions = match seen {
                    Some(i) => {
                        let set = crate::corpus::actions_for(i, self.schema.n_actions());
                        (0..self.schema.n_actions())
                            .map(|a| if set.contains(&a) { 1.0 } else { 0.0 })
                            .collect()
                    }
                    None => vec![0.5; self.schema.n_actions()],
                };
                frames.push(PredictionFrame { issue, actions, no_recontact, cost_quantiles: None });
            }
            Ok(frames)
        }
    }

    fn synthetic(n: usize, noise: f64, seed: u64) -> (Vec<DialogRecord>, TaskSchema, Vocab) {
        let cfg = SyntheticConfig { n_dialogs: n, noise, seed, ..Default::default() };
        let (corpus, _) = generate_synthetic(&cfg).unwrap();
        let schema = TaskSchema::from_corpus(&corpus).unwrap();
        let vocab = build_vocab(&corpus, 1);
        (corpus, schema, vocab)
    }

    #[test]
    fn perfect_predictor_scores_one_everywhere() {
        let (corpus, schema, vocab) = synthetic(150, 0.0, 21);
        let oracle = OraclePredictor { schema: schema.clone(), vocab: vocab.clone(), n_issues: 8 };
        let report = accuracy_report(&oracle, &corpus, &vocab, &[511], 512).unwrap();
        assert_eq!(report.issue_accuracy[&511], 1.0);
        assert_eq!(report.no_recontact_accuracy[&511], 1.0);
        for am in &report.actions {
            if am.support > 0 {
                assert_eq!(am.recall, Some(1.0));
            }
            if let Some(p) = am.precision {
                assert_eq!(p, 1.0);
            }
        }
    }

    #[test]
    fn prior_emitting_predictor_matches_majority_accuracy_exactly() {
        let (corpus, schema, vocab) = synthetic(200, 0.0, 22);
        // Majority class by brute-force count.
        let mut counts = vec![0usize; schema.n_issues()];
        for r in &corpus {
            counts[schema.issue_index(&r.labels.issue).unwrap()] += 1;
        }
        let (majority_idx, majority_count) =
            counts.iter().enumerate().max_by_key(|(i, &c)| (c, usize::MAX - i)).unwrap();
        let mut issue = vec![0.0; schema.n_issues()];
        issue[majority_idx] = 1.0;
        let constant = ConstantPredictor {
            schema: schema.clone(),
            frame: PredictionFrame {
                issue,
                actions: vec![0.0; schema.n_actions()],
                no_recontact: 1.0,
                cost_quantiles: None,
            },
        };
        let report = accuracy_report(&constant, &corpus, &vocab, &[0, 100], 512).unwrap();
        let expect = *majority_count as f64 / corpus.len() as f64;
        assert_eq!(report.issue_accuracy[&0], expect);
        assert_eq!(report.issue_accuracy[&100], expect);
    }

    #[test]
    fn never_positive_action_has_zero_recall_and_no_precision() {
        let (corpus, schema, vocab) = synthetic(60, 0.0, 23);
        let constant = ConstantPredictor {
            schema: schema.clone(),
            frame: PredictionFrame {
                issue: vec![1.0 / 8.0; 8],
                actions: vec![0.0; schema.n_actions()],
                no_recontact: 0.6,
                cost_quantiles: None,
            },
        };
        let report = accuracy_report(&constant, &corpus, &vocab, &[0], 512).unwrap();
        for am in &report.actions {
            assert_eq!(am.precision, None, "{}", am.name);
            if am.support > 0 {
                assert_eq!(am.recall, Some(0.0));
            }
        }
    }

    #[test]
    fn empty_test_set_errors() {
        let (_, schema, vocab) = synthetic(10, 0.0, 24);
        let constant = ConstantPredictor {
            schema,
            frame: PredictionFrame {
                issue: vec![0.5, 0.5],
                actions: vec![],
                no_recontact: 0.5,
                cost_quantiles: None,
            },
        };
        assert!(accuracy_report(&constant, &[], &vocab, &[0], 512).is_err());
        assert!(calibration_report(&constant, &[], &vocab, 10, 512).is_err());
    }

    #[test]
    fn out_of_range_position_errors() {
        let (corpus, schema, vocab) = synthetic(10, 0.0, 25);
        let oracle = OraclePredictor { schema, vocab: vocab.clone(), n_issues: 8 };
        assert!(accuracy_report(&oracle, &corpus, &vocab, &[512], 512).is_err());
    }

    #[test]
    fn always_confident_on_all_positive_labels_has_zero_ece() {
        let (mut corpus, schema, vocab) = synthetic(80, 0.0, 26);
        for r in corpus.iter_mut() {
            r.labels.recontact = false; // every label positive for no-recontact
        }
        let constant = ConstantPredictor {
            schema,
            frame: PredictionFrame {
                issue: vec![1.0 / 8.0; 8],
                actions: vec![0.5; 4],
                no_recontact: 1.0,
                cost_quantiles: None,
            },
        };
        let report = calibration_report(&constant, &corpus, &vocab, 10, 512).unwrap();
        assert_eq!(report.no_recontact.ece, 0.0);
    }

    #[test]
    fn always_confident_on_half_positive_labels_has_half_ece() {
        let (mut corpus, schema, vocab) = synthetic(80, 0.0, 27);
        for (i, r) in corpus.iter_mut().enumerate() {
            r.labels.recontact = i % 2 == 0;
        }
        let constant = ConstantPredictor {
            schema,
            frame: PredictionFrame {
                issue: vec![1.0 / 8.0; 8],
                actions: vec![0.5; 4],
                no_recontact: 1.0,
                cost_quantiles: None,
            },
        };
        let report = calibration_report(&constant, &corpus, &vocab, 10, 512).unwrap();
        assert!((report.no_recontact.ece - 0.5).abs() < 1e-12, "{}", report.no_recontact.ece);
    }

    #[test]
    fn oracle_conditional_probabilities_are_well_calibrated_under_noise() {
        let (corpus, schema, vocab) = synthetic(5000, 0.2, 28);
        // The Bayes predictor under the generator's noise: stored labels
        // follow the revealed issue w.p. 0.8, otherwise a uniform other class.
        struct BayesPredictor {
            inner: OraclePredictor,
            noise: f64,
        }
        impl Predictor for BayesPredictor {
            fn schema(&self) -> &TaskSchema {
                &self.inner.schema
            }
            fn vocab_size(&self) -> usize {
                self.inner.vocab_size()
            }
            fn forward(&self, token_ids: &[u32]) -> Result<Vec<PredictionFrame>> {
                let k = self.inner.n_issues;
                let mut frames = self.inner.forward(token_ids)?;
                for f in frames.iter_mut() {
                    if f.issue.contains(&1.0) {
                        let hit = argmax(&f.issue);
                        let spread = self.noise / (k - 1) as f64;
                        let mut norecon = 0.0;
                        for i in 0..k {
                            let p_i = if i == hit { 1.0 - self.noise } else { spread };
                            if !crate::corpus::recontact_for(i) {
                                norecon += p_i;
                            }
                            f.issue[i] = p_i;
                        }
                        f.no_recontact = norecon;
                    }
                }
                Ok(frames)
            }
        }
        let bayes = BayesPredictor {
            inner: OraclePredictor { schema, vocab: vocab.clone(), n_issues: 8 },
            noise: 0.2,
        };
        let report = calibration_report(&bayes, &corpus, &vocab, 10, 512).unwrap();
        assert!(report.no_recontact.ece <= 0.05, "ECE {}", report.no_recontact.ece);
        assert!(report.issue.ece <= 0.05, "issue ECE {}", report.issue.ece);
    }
}
