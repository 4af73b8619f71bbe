use epiwatch_core::classifier::{HashingVectorizer, LabelSource, LabeledMessage, Relevance};
use epiwatch_core::evaluation::{benchmark, match_alerts};
use epiwatch_core::ingest::Annotator;
use epiwatch_core::linear::SvmHyperparams;
use epiwatch_core::series::{build_all, SeriesOptions, SeriesRecord};
use epiwatch_core::simulator::{generate_stream, preset};
use epiwatch_core::surveillance::{run_surveillance, run_surveillance_with, Algorithm};
use epiwatch_core::{ClassifierF32, ClassifierF64};

#[test]
fn stream_to_alerts_end_to_end() {
    let out = generate_stream(&preset("ecoli_de").unwrap().with_seed(21)).unwrap();
    let annot = Annotator::builtin();
    // the annotator alone passes noise too; keep what the label key calls relevant
    let records: Vec<SeriesRecord> = out
        .messages
        .iter()
        .filter(|m| out.key[&m.id] == Relevance::Relevant)
        .filter_map(|m| SeriesRecord::from_annotated(&annot.annotate(m)))
        .collect();
    let series = build_all(&records, out.config.range(), SeriesOptions::default());
    assert_eq!(series, out.counts);
    let s: Vec<_> = series.into_values().collect();
    let table = benchmark(&s, &out.events, &Algorithm::standard_grid(), 10);
    assert_eq!(table.rows.len(), 6);
    assert!(table.warnings.is_empty(), "{:?}", table.warnings);
    for row in &table.rows {
        assert_eq!(row.report.recall, 1.0, "{}", row.algorithm);
    }
    let rendered = table.render();
    assert!(rendered.contains("farrington_w3"));
}

#[test]
fn single_and_double_precision_agree_on_alarms() {
    let counts = generate_stream(&preset("cholera_ke").unwrap().with_seed(2)).unwrap().counts;
    let s = counts.values().next().unwrap();
    let events = preset("cholera_ke").unwrap().ground_truth();
    for algo in Algorithm::standard_grid() {
        let a64 = run_surveillance(s, &algo).unwrap();
        let a32 = run_surveillance_with::<f32>(s, &algo).unwrap();
        let d64: Vec<_> = a64.iter().map(|a| a.date).collect();
        let d32: Vec<_> = a32.iter().map(|a| a.date).collect();
        // rounding can move a borderline day, but not the verdict on events
        let diff = d64.iter().filter(|d| !d32.contains(d)).count() + d32.iter().filter(|d| !d64.contains(d)).count();
        assert!(diff <= 1, "{algo}: {d64:?} vs {d32:?}");
        assert_eq!(
            match_alerts(&a64, &events, 10).detected_events,
            match_alerts(&a32, &events, 10).detected_events
        );
    }
}

#[test]
fn classifier_learns_relevance_in_both_precisions() {
    let out = generate_stream(&preset("mumps_ca").unwrap().with_seed(5)).unwrap();
    let labeled: Vec<LabeledMessage> = out
        .messages
        .iter()
        .take(3000)
        .map(|m| LabeledMessage::new(m.clone(), out.key[&m.id], LabelSource::Expert))
        .collect();
    let (train, test) = labeled.split_at(2400);
    let h = SvmHyperparams::default();
    let c64 = ClassifierF64::train(HashingVectorizer::default(), train, &h).unwrap();
    let c32 = ClassifierF32::train(HashingVectorizer::default(), train, &h).unwrap();
    let r64 = c64.evaluate(test).unwrap();
    let r32 = c32.evaluate(test).unwrap();
    assert!(r64.accuracy > 0.95, "{r64:?}");
    assert!((r64.accuracy - r32.accuracy).abs() < 0.01, "{r64:?} {r32:?}");
    let mut buf = Vec::new();
    c64.write_artifact(&mut buf).unwrap();
    let back = ClassifierF64::read_artifact(buf.as_slice()).unwrap();
    assert_eq!(back.evaluate(test).unwrap(), r64);
}
