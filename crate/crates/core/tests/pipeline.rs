//! End-to-end behavior on the synthetic oracle corpus at desk scale: train
//! the reference encoder, profile dialogs, and check that the value
//! machinery finds the planted signal.

use valprof_core::analytics::{
    accuracy_report, classify_curve, detect_bot_failure, quantile_band, top_sentences, Aspect,
    CurveClass, ProgressCurve, RewardMode, DEFAULT_LEVELS,
};
use valprof_core::corpus::{
    build_vocab, generate_synthetic, reveal_token, tokenize_dialog, DialogRecord, SyntheticConfig,
    Vocab,
};
use valprof_core::encoder::{
    train, OptimizerKind, Predictor, ReferenceEncoder, TaskSchema, TrainConfig,
};
use valprof_core::integrate::{candidate_reward, rerank, Candidate, ScoreOrientation};
use valprof_core::value::{
    calibrate_scales, estimate_prior, online_turn_values, trace, CollapseMode, Prior,
    ScaleCalibration, ValueOptions,
};

struct Setup {
    train_corpus: Vec<DialogRecord>,
    test_corpus: Vec<DialogRecord>,
    test_oracle: Vec<valprof_core::corpus::OracleEntry>,
    schema: TaskSchema,
    vocab: Vocab,
    encoder: ReferenceEncoder,
    prior: Prior,
    calib: ScaleCalibration,
}

fn setup() -> Setup {
    let base = SyntheticConfig {
        n_dialogs: 2500,
        n_issues: 8,
        n_actions: 4,
        noise: 0.0,
        seed: 42,
        ..Default::default()
    };
    let (train_corpus, _) = generate_synthetic(&base).unwrap();
    let (test_corpus, test_oracle) =
        generate_synthetic(&SyntheticConfig { n_dialogs: 300, seed: 4242, ..base }).unwrap();
    let schema = TaskSchema::from_corpus(&train_corpus).unwrap();
    let vocab = build_vocab(&train_corpus, 1);
    let mut encoder = ReferenceEncoder::new(schema.clone(), vocab.len(), 32, 0.2, 0);
    let cfg = TrainConfig {
        epochs: 18,
        learning_rate: 0.005,
        batch_size: 32,
        max_len: 512,
        seed: 0,
        optimizer: OptimizerKind::Adam,
    };
    train(&mut encoder, &train_corpus, &vocab, &cfg).unwrap();
    let prior = estimate_prior(&train_corpus, &schema).unwrap();

    let identity = ScaleCalibration::identity();
    let mut samples = Vec::new();
    for record in train_corpus.iter().take(200) {
        let tokens = tokenize_dialog(record, &vocab, 512);
        let frames = encoder.forward(&tokens.token_ids).unwrap();
        for frame in &frames {
            let v = valprof_core::value::value_frame(frame, &prior, &identity, ValueOptions::default())
                .unwrap();
            samples.push((v.issue, v.action, v.norecon));
        }
    }
    let calib = calibrate_scales(&samples, CollapseMode::WeightedAverage).unwrap();
    Setup { train_corpus, test_corpus, test_oracle, schema, vocab, encoder, prior, calib }
}

fn trace_of(s: &Setup, record: &DialogRecord) -> valprof_core::value::ValueTrace {
    let tokens = tokenize_dialog(record, &s.vocab, 512);
    let frames = s.encoder.forward(&tokens.token_ids).unwrap();
    trace(&record.id, &frames, &tokens.turn_starts, &s.prior, &s.calib).unwrap()
}

#[test]
fn trained_model_finds_the_planted_signal() {
    let s = setup();

    // Held-out classification: strong at the final token, prior-like at 0.
    let report =
        accuracy_report(&s.encoder, &s.test_corpus, &s.vocab, &[0, 511], 512).unwrap();
    let acc_final = report.issue_accuracy[&511];
    let acc_zero = report.issue_accuracy[&0];
    assert!(acc_final >= 0.9, "final accuracy {acc_final}");
    assert!(acc_zero <= 0.3, "token-0 accuracy {acc_zero} should be prior-like");

    // The largest per-turn reward should sit on the revealing turn for most
    // dialogs, and the reveal-turn mean should dominate.
    let mut max_at_reveal = 0usize;
    let mut reveal = (0.0, 0usize);
    let mut other = (0.0, 0usize);
    for (rec, oracle) in s.test_corpus.iter().zip(&s.test_oracle) {
        let tr = trace_of(&s, rec);
        let curve = ProgressCurve::from_trace(&tr, Aspect::Total);
        let mut prev = 0.0;
        let mut best = (0usize, f64::NEG_INFINITY);
        for (j, &v) in curve.values.iter().enumerate() {
            let dv = v - prev;
            prev = v;
            if dv > best.1 {
                best = (j, dv);
            }
            if j == oracle.reveal_turn {
                reveal = (reveal.0 + dv, reveal.1 + 1);
            } else {
                other = (other.0 + dv, other.1 + 1);
            }
        }
        if best.0 == oracle.reveal_turn {
            max_at_reveal += 1;
        }
    }
    let frac = max_at_reveal as f64 / s.test_corpus.len() as f64;
    assert!(frac >= 0.8, "max reward at revealing turn for only {frac:.3} of dialogs");
    let (mean_reveal, mean_other) = (reveal.0 / reveal.1 as f64, other.0 / other.1 as f64);
    assert!(
        mean_reveal >= 5.0 * mean_other,
        "reveal {mean_reveal} vs other {mean_other}"
    );
}

#[test]
fn top_sentences_surface_revealing_turns() {
    let s = setup();
    let traces: Vec<_> = s.test_corpus.iter().map(|r| trace_of(&s, r)).collect();
    let top = top_sentences(&traces, &s.test_corpus, Aspect::Issue, 10, RewardMode::Positive).unwrap();
    assert_eq!(top.len(), 10);
    let revealing = top
        .iter()
        .filter(|t| t.text.contains("reveal"))
        .count();
    assert!(revealing >= 8, "only {revealing}/10 top issue rewards are revealing turns");

    // Near-zero mode should surface filler turns instead.
    let zero = top_sentences(&traces, &s.test_corpus, Aspect::Issue, 10, RewardMode::Zero).unwrap();
    let revealing_zero = zero.iter().filter(|t| t.text.contains("reveal")).count();
    assert!(revealing_zero <= 2, "{revealing_zero}/10 near-zero turns contain the signal");
}

#[test]
fn bands_classify_curves_and_flag_low_value_dialogs() {
    let s = setup();
    let curves: Vec<ProgressCurve> = s
        .train_corpus
        .iter()
        .map(|r| ProgressCurve::from_trace(&trace_of(&s, r), Aspect::Total))
        .collect();
    let band = quantile_band(&curves, &DEFAULT_LEVELS, 20).unwrap();

    // Every test curve classifies without error and the stripes are used.
    let mut counts = [0usize; 4];
    for rec in &s.test_corpus {
        let curve = ProgressCurve::from_trace(&trace_of(&s, rec), Aspect::Total);
        match classify_curve(&curve, &band).unwrap() {
            CurveClass::BelowP10 => counts[0] += 1,
            CurveClass::P10P50 => counts[1] += 1,
            CurveClass::P50P90 => counts[2] += 1,
            CurveClass::AboveP90 => counts[3] += 1,
        }
    }
    assert!(counts[1] + counts[2] > counts[0] + counts[3], "stripe counts {counts:?}");

    // A dialog that never reveals its issue stays low-value and gets
    // flagged; the flag index respects patience.
    let mut flat = s.test_corpus[0].clone();
    for u in flat.utterances.iter_mut() {
        u.text = "filler0 filler1 filler2".into();
    }
    let n = flat.utterances.len();
    let last = flat.utterances[n - 1].clone();
    for _ in 0..(8usize.saturating_sub(n)) {
        flat.utterances.push(last.clone());
    }
    let curve = ProgressCurve::from_trace(&trace_of(&s, &flat), Aspect::Total);
    let alert = detect_bot_failure(&curve, &band, 3);
    if let Some(t) = alert {
        assert!(t >= 2, "patience 3 cannot fire before turn index 2");
    }
}

#[test]
fn reranking_prefers_revealing_candidates() {
    let s = setup();
    let mut wins = 0;
    let total = 100;
    for (rec, oracle) in s.test_corpus.iter().zip(&s.test_oracle).take(total) {
        let mut cut = rec.clone();
        cut.utterances.truncate(oracle.reveal_turn.max(1));
        let context = tokenize_dialog(&cut, &s.vocab, 512);
        let k: usize = oracle.true_issue.strip_prefix("issue_").unwrap().parse().unwrap();
        let candidates = vec![
            Candidate { text: "filler0 filler1 filler2".into(), score: 1.0 },
            Candidate { text: format!("this is about {}", reveal_token(k)), score: 1.0 },
        ];
        let ranked = rerank(
            &context,
            &candidates,
            ScoreOrientation::Higher,
            &s.encoder,
            &s.vocab,
            &s.prior,
            &s.calib,
        )
        .unwrap();
        if ranked.candidates[0].original_index == 1 {
            wins += 1;
        }
    }
    assert!(wins >= 90, "revealing candidate ranked first in only {wins}/{total}");

    // Purity: the same request returns the same reward.
    let rec = &s.test_corpus[0];
    let context = tokenize_dialog(rec, &s.vocab, 512);
    let a = candidate_reward(&context, "hello there", &s.encoder, &s.vocab, &s.prior, &s.calib)
        .unwrap();
    let b = candidate_reward(&context, "hello there", &s.encoder, &s.vocab, &s.prior, &s.calib)
        .unwrap();
    assert_eq!(a, b);
}

#[test]
fn online_turn_values_lag_offline_at_the_reveal() {
    // Offline smoothing is centered so it sees tokens after the turn end;
    // online smoothing must not. At the turn before the reveal they differ.
    let s = setup();
    let mut diffs = 0usize;
    for rec in s.test_corpus.iter().take(50) {
        let tr = trace_of(&s, rec);
        let online = online_turn_values(&tr);
        assert_eq!(online.len(), tr.turn_values.len());
        for (on, off) in online.iter().zip(&tr.turn_values) {
            if (on.total - off.total).abs() > 1e-12 {
                diffs += 1;
            }
        }
    }
    assert!(diffs > 0, "online and offline smoothing never differ");
}

#[test]
fn schema_round_trips_through_prior_and_labels() {
    let s = setup();
    for rec in s.test_corpus.iter().take(20) {
        let labels = s.schema.encode_labels(&rec.labels).unwrap();
        assert_eq!(s.schema.issues[labels.issue], rec.labels.issue);
    }
    let prior_sum: f64 = s.prior.issue.iter().sum();
    assert!((prior_sum - 1.0).abs() < 1e-9);
    assert!(s.prior.issue.iter().all(|&p| p > 0.0 && p < 1.0));
}
