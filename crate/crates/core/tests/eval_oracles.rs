mod common;

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scanhd_core::dataset::{split, synth_generate, Dataset, Lighting, SplitMode, SynthConfig};
use scanhd_core::eval::{
    evaluate, exact, latency_probe, macro_f1, normalize_instruction, parse_records, win_at_1,
    write_records, Bench, Knn, PredictionRecord, RuleLookup,
};
use scanhd_core::params::ParameterSpace;
use scanhd_core::{EmbeddingStore, FusionConfig, Modality, Param, ParameterConfig, TrainingConfig};

use common::{oracle_metrics, oracle_mismatches};

fn random_records(seed: u64) -> Vec<PredictionRecord> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let n = r.gen_range(1..300);
    // Some sets skip a class entirely, some predict mostly one value.
    let skip: Option<u8> = r.gen_bool(0.3).then(|| r.gen_range(0..3));
    let bias: f64 = r.gen_range(0.0..1.0);
    let draw = |r: &mut ChaCha8Rng| loop {
        let v = r.gen_range(0..3u8);
        if Some(v) != skip {
            return v;
        }
    };
    (0..n)
        .map(|i| {
            let mut truth = [0u8; 5];
            let mut pred = [0u8; 5];
            for k in 0..5 {
                truth[k] = draw(&mut r);
                pred[k] = if r.gen_bool(bias) { truth[k] } else { r.gen_range(0..3) };
            }
            PredictionRecord {
                instance_id: format!("r{i}"),
                truth: ParameterConfig(truth),
                prediction: ParameterConfig(pred),
                scores: None,
            }
        })
        .collect()
}

#[test]
fn metrics_match_the_confusion_matrix_script_exactly() {
    for seed in 0..20 {
        let records = random_records(seed);
        let report = evaluate(&records, "random", "none", "").unwrap();
        let bad = oracle_mismatches(&report, &oracle_metrics(&records));
        assert!(bad.is_empty(), "seed {seed}: {bad:?}");
    }
}

#[test]
fn measurement_range_never_reports_win1() {
    let space = ParameterSpace::standard();
    for t in Param::MeasurementRangeX.vocabulary() {
        for p in Param::MeasurementRangeX.vocabulary() {
            assert_eq!(win_at_1(&space, Param::MeasurementRangeX, t, p).unwrap(), None);
        }
    }
    for seed in 0..5 {
        let report = evaluate(&random_records(seed), "x", "y", "").unwrap();
        assert!(report.param(Param::MeasurementRangeX).win1.is_none());
        assert!(report.to_csv().contains("measurement_range_x,") && report.to_csv().contains(",n/a,"));
    }
}

#[test]
fn pointwise_metric_examples() {
    let space = ParameterSpace::standard();
    let sf = Param::SamplingFrequency;
    assert!(exact(sf, "500Hz", "500Hz").unwrap());
    assert!(!exact(sf, "500Hz", "1kHz").unwrap());
    assert_eq!(win_at_1(&space, sf, "100Hz", "500Hz").unwrap(), Some(true));
    assert_eq!(win_at_1(&space, sf, "100Hz", "1kHz").unwrap(), Some(false));
    assert!(exact(sf, "500Hz", "2kHz").is_err());
    assert!(win_at_1(&space, sf, "5", "500Hz").is_err());

    let rec = |t: u8, p: u8| PredictionRecord {
        instance_id: String::new(),
        truth: ParameterConfig([t; 5]),
        prediction: ParameterConfig([p; 5]),
        scores: None,
    };
    let seven: Vec<_> = (0..10).map(|i| if i < 7 { rec(1, 1) } else { rec(1, 2) }).collect();
    assert_eq!(evaluate(&seven, "", "", "").unwrap().param(sf).exact, 0.7);

    // Balanced truth, one value always predicted: F1 is 1/2 for that class
    // and 0 for the other two.
    let always: Vec<_> = (0..9).map(|i| rec(i % 3, 0)).collect();
    assert!((macro_f1(&always, sf).unwrap() - 1.0 / 6.0).abs() < 1e-15);
    let single: Vec<_> = (0..4).map(|_| rec(2, 2)).collect();
    assert_eq!(macro_f1(&single, sf).unwrap(), 1.0);
    assert!(macro_f1(&[], sf).is_err());
    assert!(evaluate(&[], "", "", "").is_err());
}

proptest! {
    #[test]
    fn report_invariants_hold(seed in any::<u64>()) {
        let records = random_records(seed);
        let report = evaluate(&records, "p", "s", "f").unwrap();
        let space = ParameterSpace::standard();
        let mut min_exact: f64 = 1.0;
        for p in Param::ALL {
            let m = report.param(p);
            prop_assert!((0.0..=1.0).contains(&m.exact) && (0.0..=1.0).contains(&m.macro_f1));
            if let Some(w) = m.win1 {
                prop_assert!(m.exact <= w);
            }
            min_exact = min_exact.min(m.exact);
            let hits = records
                .iter()
                .filter(|r| exact(p, &r.truth.value_name(p), &r.prediction.value_name(p)).unwrap())
                .count();
            prop_assert_eq!(m.exact, hits as f64 / records.len() as f64);
            let near: Vec<Option<bool>> = records
                .iter()
                .map(|r| win_at_1(&space, p, &r.truth.value_name(p), &r.prediction.value_name(p)).unwrap())
                .collect();
            if p.win1_eligible() {
                let n = near.iter().filter(|x| **x == Some(true)).count();
                prop_assert_eq!(m.win1, Some(n as f64 / records.len() as f64));
            } else {
                prop_assert!(near.iter().all(Option::is_none));
            }
        }
        prop_assert!(report.system_exact <= min_exact);
        prop_assert!(report.system_exact <= report.system_win1_range_exact);
    }

    #[test]
    fn prediction_records_round_trip(seed in any::<u64>(), with_scores in any::<bool>()) {
        let mut records = random_records(seed);
        if with_scores {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            for rec in &mut records {
                let mut s = [[0.0; 3]; 5];
                for row in s.iter_mut() {
                    for x in row.iter_mut() {
                        *x = r.gen_range(-1.0..1.0);
                    }
                }
                rec.scores = Some(s);
            }
        }
        let mut buf = Vec::new();
        write_records(&records, &mut buf).unwrap();
        prop_assert_eq!(parse_records(buf.as_slice()).unwrap(), records);
    }
}

fn bench_data(noise: f64) -> (Dataset, EmbeddingStore) {
    synth_generate(&SynthConfig {
        noise_sigma: noise,
        observation_dim: 128,
        instruction_dim: 128,
        ..SynthConfig::default()
    })
    .unwrap()
}

#[test]
fn saved_records_reproduce_the_report() {
    let (ds, store) = bench_data(0.1);
    let bench = Bench::new(&ds, &store, FusionConfig::default()).unwrap();
    let s = split(&ds, &SplitMode::RowRandom(0.4), 3).unwrap();
    assert!(s.test.len() >= 1000);
    let model = bench.train(Modality::Both, &s.train, &TrainingConfig::default()).unwrap();
    let records = bench.model_records(&model, &s.test[..1000]).unwrap();
    let report = evaluate(&records, "scanhd", "row_random:0.4", bench.fingerprint()).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("preds.jsonl");
    write_records(&records, std::fs::File::create(&path).unwrap()).unwrap();
    let reloaded = parse_records(std::io::BufReader::new(std::fs::File::open(&path).unwrap())).unwrap();
    assert_eq!(reloaded, records);
    let bad = oracle_mismatches(&report, &oracle_metrics(&reloaded));
    assert!(bad.is_empty(), "{bad:?}");
}

#[test]
fn rule_lookup_is_perfect_on_consistent_text() {
    let (ds, _) = bench_data(0.0);
    let full: Vec<usize> = (0..ds.len())
        .filter(|&i| ds.instances()[i].condition.lighting == Lighting::Full)
        .collect();
    let sub = ds.subset(&full);
    let s = split(&sub, &SplitMode::RowRandom(0.8), 0).unwrap();
    let train: Vec<_> = s.train.iter().map(|&i| &sub.instances()[i]).collect();
    let seen: BTreeSet<String> = train.iter().map(|i| normalize_instruction(&i.instruction_text)).collect();
    // Precondition: every test text occurs in train, and text determines labels.
    let mut by_text: BTreeMap<String, BTreeSet<ParameterConfig>> = BTreeMap::new();
    for inst in sub.instances() {
        by_text.entry(normalize_instruction(&inst.instruction_text)).or_default().insert(inst.labels);
    }
    assert!(by_text.values().all(|v| v.len() == 1));
    assert!(s.test.iter().all(|&i| seen.contains(&normalize_instruction(&sub.instances()[i].instruction_text))));

    let rule = RuleLookup::fit(&train);
    for &i in &s.test {
        let inst = &sub.instances()[i];
        assert_eq!(rule.predict(&inst.instruction_text), inst.labels, "{}", inst.id);
    }

    // On the full benchmark the intent-driven parameters stay perfect.
    let s = split(&ds, &SplitMode::RowRandom(0.8), 0).unwrap();
    let train: Vec<_> = s.train.iter().map(|&i| &ds.instances()[i]).collect();
    let rule = RuleLookup::fit(&train);
    for &i in &s.test {
        let inst = &ds.instances()[i];
        let pred = rule.predict(&inst.instruction_text);
        for p in [Param::SamplingFrequency, Param::MeasurementRangeX] {
            assert_eq!(pred.get(p), inst.labels.get(p));
        }
    }

    let unseen = rule.predict("Scan the moon in ultraviolet.");
    assert_eq!(unseen, rule.global_mode());
    for p in Param::ALL {
        let mut counts = [0usize; 3];
        for inst in &train {
            counts[inst.labels.get(p) as usize] += 1;
        }
        let best = (0..3).max_by_key(|&v| (counts[v], std::cmp::Reverse(v))).unwrap();
        assert_eq!(unseen.get(p) as usize, best, "{p}");
    }
}

#[test]
fn knn_is_near_perfect_on_noiseless_data() {
    let (ds, store) = bench_data(0.0);
    let bench = Bench::new(&ds, &store, FusionConfig { hyper_dim: 256, ..FusionConfig::default() }).unwrap();
    let s = split(&ds, &SplitMode::RowRandom(0.8), 1).unwrap();
    let records = bench.knn_records(Modality::Both, 5, &s.train, &s.test).unwrap();
    let report = evaluate(&records, "knn", "row_random:0.8", "").unwrap();
    for p in Param::ALL {
        assert!(report.param(p).exact >= 0.99, "{p}: {}", report.param(p).exact);
    }
}

#[test]
fn knn_votes_and_ties() {
    let rows = vec![vec![1.0, 0.0], vec![0.9, 0.1], vec![0.0, 1.0], vec![0.1, 0.9]];
    let labels = vec![ParameterConfig([0; 5]), ParameterConfig([0; 5]), ParameterConfig([2; 5]), ParameterConfig([1; 5])];
    let k1 = Knn::fit(rows.clone(), labels.clone(), 1).unwrap();
    assert_eq!(k1.predict(&[0.0, 1.0]), ParameterConfig([2; 5]));
    let k3 = Knn::fit(rows.clone(), labels.clone(), 3).unwrap();
    assert_eq!(k3.predict(&[1.0, 0.05]), ParameterConfig([0; 5]));
    // 1-1 tie among the two far neighbours resolves to the nearest one.
    let k2 = Knn::fit(rows.clone(), labels.clone(), 2).unwrap();
    assert_eq!(k2.predict(&[0.05, 1.0]), ParameterConfig([2; 5]));
    assert!(Knn::fit(rows.clone(), labels.clone(), 5).is_err());
    assert!(Knn::fit(rows, labels, 0).is_err());
}

#[test]
fn rule_lookup_ties_follow_vocabulary_order() {
    let (ds, _) = synth_generate(&SynthConfig {
        objects: 1,
        keys_per_object: 1,
        observation_dim: 8,
        instruction_dim: 8,
        ..SynthConfig::default()
    })
    .unwrap();
    let mut a = ds.instances()[0].clone();
    let mut b = a.clone();
    a.labels.set(Param::CmosDynamicRange, 2);
    b.labels.set(Param::CmosDynamicRange, 1);
    let rule = RuleLookup::fit(&[&a, &b]);
    assert_eq!(rule.predict(&a.instruction_text.to_uppercase()).get(Param::CmosDynamicRange), 1);
}

#[test]
fn latency_probe_edge_cases_and_stability() {
    let (ds, store) = bench_data(0.1);
    let bench = Bench::new(&ds, &store, FusionConfig::default()).unwrap();
    let s = split(&ds, &SplitMode::RowRandom(0.8), 0).unwrap();
    let model = bench.train(Modality::Both, &s.train, &TrainingConfig::default()).unwrap();
    let queries: Vec<_> = s.test[..20]
        .iter()
        .map(|&i| {
            let inst = &ds.instances()[i];
            (
                store.get(&inst.observation_embedding_id).cloned(),
                store.get(&inst.instruction_embedding_id).cloned(),
            )
        })
        .collect();
    let empty = latency_probe(&model, &queries, 0, 5).unwrap();
    assert_eq!(empty.n, 0);
    let a = latency_probe(&model, &queries, 200, 20).unwrap();
    let b = latency_probe(&model, &queries, 200, 20).unwrap();
    assert_eq!(a.n, 200);
    assert!(a.p50_us <= a.p90_us && a.p90_us <= a.p99_us && a.p99_us <= a.max_us);
    let ratio = a.p50_us.max(b.p50_us) / a.p50_us.min(b.p50_us);
    assert!(ratio < 2.0, "p50 {} vs {}", a.p50_us, b.p50_us);
}
