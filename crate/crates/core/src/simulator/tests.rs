use std::collections::BTreeMap;

use super::*;
use crate::ingest::Annotator;
use crate::labeling::{create_batch, LabelQueue};
use crate::series::{build_series, characterize_series, Level, QuadrantThresholds, SeriesOptions, SeriesRecord};

fn seeded(name: &str, seed: u64) -> ScenarioConfig {
    preset(name).unwrap().with_seed(seed)
}

#[test]
fn same_seed_same_bytes() {
    let cfg = seeded("botulism_fr", 7);
    let a = generate_stream(&cfg).unwrap();
    let b = generate_stream(&cfg).unwrap();
    assert_eq!(a, b);
    let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    a.write_to_dir(da.path()).unwrap();
    b.write_to_dir(db.path()).unwrap();
    for f in ["messages.jsonl", "ground_truth.csv", "labels.csv", "scenario.json"] {
        let (x, y) = (fs::read(da.path().join(f)).unwrap(), fs::read(db.path().join(f)).unwrap());
        assert!(!x.is_empty());
        assert_eq!(x, y, "{f}");
    }
    let other = generate_stream(&seeded("botulism_fr", 8)).unwrap();
    assert_ne!(a.messages, other.messages);
}

#[test]
fn written_files_parse_back() {
    let out = generate_stream(&seeded("cholera_ke", 1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    out.write_to_dir(dir.path()).unwrap();
    let parsed = crate::ingest::parse_messages(fs::read(dir.path().join("messages.jsonl")).unwrap().as_slice()).unwrap();
    assert_eq!(parsed.messages, out.messages);
    let gt = crate::evaluation::parse_ground_truth(fs::read(dir.path().join("ground_truth.csv")).unwrap().as_slice()).unwrap();
    assert_eq!(gt, out.events);
    let key = read_label_key(fs::read(dir.path().join("labels.csv")).unwrap().as_slice()).unwrap();
    assert_eq!(key, out.key);
}

#[test]
fn no_multiplier_no_events() {
    let mut cfg = seeded("ecoli_de", 0);
    cfg.contexts[0].windows[0].multiplier = 1.0;
    assert!(cfg.ground_truth().is_empty());
    assert!(generate_stream(&cfg).unwrap().events.is_empty());
}

#[test]
fn invalid_configs_rejected() {
    let mut cfg = seeded("ecoli_de", 0);
    cfg.contexts[0].windows[0].end = NaiveDate::from_ymd_opt(2012, 3, 1).unwrap();
    assert!(matches!(generate_stream(&cfg), Err(Error::InvalidScenario(_))));
    let mut cfg = seeded("ecoli_de", 0);
    cfg.contexts[0].windows[0].multiplier = 0.5;
    assert!(cfg.validate().is_err());
    let mut cfg = seeded("ecoli_de", 0);
    cfg.contexts[0].baseline = -1.0;
    assert!(cfg.validate().is_err());
    match preset("typhoid_xx") {
        Err(Error::UnknownPreset { available, .. }) => {
            for p in PRESETS {
                assert!(available.contains(p));
            }
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn annotation_recovers_context_and_counts() {
    let annot = Annotator::builtin();
    for name in ["ecoli_de", "mumps_ca", "drift_royal_wedding"] {
        let out = generate_stream(&seeded(name, 3)).unwrap();
        let mut records = Vec::new();
        for m in &out.messages {
            let a = annot.annotate(m);
            if out.key[&m.id] != Relevance::Relevant {
                continue;
            }
            assert!(a.filter.passed(), "{}", m.text);
            assert_eq!(a.condition_ids().len(), 1, "{}", m.text);
            assert!(a.country().is_some(), "{}", m.text);
            records.push(SeriesRecord::from_annotated(&a).unwrap());
        }
        for (ctx, truth) in &out.counts {
            let built = build_series(&records, ctx, out.config.range(), SeriesOptions::default());
            assert_eq!(&built, truth, "{name} {ctx}");
        }
    }
}

#[test]
fn quadrants_match_presets() {
    let th = QuadrantThresholds::default();
    let expected = [
        ("anthrax_bd", Level::High, Level::Low),
        ("botulism_fr", Level::Low, Level::Low),
        ("cholera_ke", Level::Low, Level::Low),
        ("ecoli_de", Level::Low, Level::High),
        ("mumps_ca", Level::High, Level::High),
    ];
    for (name, osc, mag) in expected {
        for seed in 0..5 {
            let counts = generate_counts(&seeded(name, seed)).unwrap();
            let s = counts.values().next().unwrap();
            let q = characterize_series(s, &[], &th).unwrap();
            assert_eq!((q.oscillation, q.magnitude), (osc, mag), "{name} seed {seed}: {q:?}");
        }
    }
}

#[test]
fn injected_windows_raise_the_mean() {
    for name in ["anthrax_bd", "botulism_fr", "cholera_ke", "ecoli_de", "mumps_ca"] {
        let cfg = preset(name).unwrap();
        let c = &cfg.contexts[0];
        let w = &c.windows[0];
        let (mut inside, mut n_in, mut outside, mut n_out) = (0u64, 0u64, 0u64, 0u64);
        for seed in 0..20 {
            let counts = generate_counts(&cfg.clone().with_seed(seed)).unwrap();
            let s = &counts[&c.context];
            for (i, &x) in s.counts.iter().enumerate() {
                if w.range().contains(s.date_at(i)) {
                    inside += u64::from(x);
                    n_in += 1;
                } else {
                    outside += u64::from(x);
                    n_out += 1;
                }
            }
        }
        let (mi, mo) = (inside as f64 / n_in as f64, outside as f64 / n_out as f64);
        assert!(mi >= w.multiplier / 2.0 * mo, "{name}: inside {mi}, outside {mo}");
    }
}

#[test]
fn anthrax_bounded_outside_window() {
    let cfg = seeded("anthrax_bd", 11);
    let w = cfg.contexts[0].windows[0].range();
    let cap = cfg.contexts[0].outside_cap.unwrap();
    let s = generate_counts(&cfg).unwrap().into_values().next().unwrap();
    for (i, &x) in s.counts.iter().enumerate() {
        if !w.contains(s.date_at(i)) {
            assert!(x <= cap);
        }
    }
}

#[test]
fn ecoli_peak_dwarfs_botulism() {
    // highest weekly mean, averaged over seeds
    let peak = |name: &str| -> f64 {
        let per_seed = (0..5).map(|seed| {
            let s = generate_counts(&seeded(name, seed)).unwrap().into_values().next().unwrap();
            s.counts.windows(7).map(|w| f64::from(w.iter().sum::<u32>()) / 7.0).fold(0.0, f64::max)
        });
        per_seed.sum::<f64>() / 5.0
    };
    let (e, b) = (peak("ecoli_de"), peak("botulism_fr"));
    assert!(e >= 40.0 * b, "ecoli {e}, botulism {b}");
}

#[test]
fn geo_fraction_close_to_target() {
    let out = generate_stream(&seeded("mumps_ca", 2)).unwrap();
    assert!(out.messages.len() >= 10_000);
    let geo = out.messages.iter().filter(|m| m.geo.is_some()).count();
    let frac = geo as f64 / out.messages.len() as f64;
    assert!((frac - DEFAULT_GEO_FRACTION).abs() <= 0.005, "{frac}");
}

#[test]
fn wedding_week_carries_confounder() {
    let out = generate_stream(&seeded("drift_royal_wedding", 4)).unwrap();
    let annot = Annotator::builtin();
    let share = |w: u32| {
        let msgs = out.week(w);
        let terms = &out.config.drift[0].terms;
        let hits = msgs.iter().filter(|m| terms.iter().any(|t| m.text.contains(t.as_str()))).count();
        hits as f64 / msgs.len() as f64
    };
    assert!((share(4) - 0.3).abs() < 0.1, "{}", share(4));
    assert_eq!(share(3), 0.0);
    for m in out.week(4) {
        if m.text.contains("westminster abbey") {
            assert_eq!(out.key[&m.id], Relevance::Irrelevant);
            assert!(annot.annotate(m).filter.passed(), "{}", m.text);
        }
    }
}

#[test]
fn simulated_crowd_recovers_labels() {
    let out = generate_stream(&seeded("cholera_ke", 5)).unwrap();
    let msgs: Vec<Message> = out.messages.iter().take(1000).cloned().collect();
    assert_eq!(msgs.len(), 1000);
    let gold: Vec<(Message, Relevance)> = out.messages[1000..1100].iter().map(|m| (m.clone(), out.key[&m.id])).collect();
    let mut q = LabelQueue::new();
    q.push(create_batch(&msgs, &gold, 0.1, 3, 5).unwrap());
    let key = &out.key;
    let crowd = SimulatedAnnotator::crowd(3, DEFAULT_ANNOTATOR_ACCURACY);
    let start = Utc.with_ymd_and_hms(2012, 1, 1, 0, 0, 0).unwrap();
    replay_queue(&mut q, &crowd, |t| key.get(&t.message.id).copied(), start, 9).unwrap();
    let agg = q.resolve();
    let truth: BTreeMap<&str, Relevance> = msgs.iter().map(|m| (m.id.as_str(), key[&m.id])).collect();
    let correct = agg.resolved.iter().filter(|l| truth[l.message.id.as_str()] == l.label).count();
    assert!(correct as f64 / 1000.0 >= 0.95, "{correct}");
    let acc = q.mean_gold_accuracy().unwrap();
    assert!((acc - 0.92).abs() < 0.06, "{acc}");
}
