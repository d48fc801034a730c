use pairmask::datagen::{
    bayes_label, dataset_digest, generate_planted_dataset, latin_square, read_jsonl, to_jsonl_line, write_jsonl,
    PlantedTaskConfig, Triple,
};
use pairmask::models::{accuracy, train_classifier, Architecture, PairExample, TrainConfig};
use pairmask::Error;
use proptest::prelude::*;
use sha2::{Digest, Sha256};

fn config(seed: u64, train: usize) -> PlantedTaskConfig {
    PlantedTaskConfig {
        seed,
        train,
        dev: 0,
        test: 0,
        ..Default::default()
    }
}

#[test]
fn noise_free_labels_follow_the_planted_pair() {
    let cfg = PlantedTaskConfig {
        noise: 0.0,
        ..config(3, 2000)
    };
    let data = generate_planted_dataset(&cfg).unwrap().train;
    assert!(data.iter().all(|ex| bayes_label(&cfg, ex) == Some(ex.label)));
}

#[test]
fn label_noise_rate_is_respected() {
    let cfg = config(4, 20_000);
    let data = generate_planted_dataset(&cfg).unwrap().train;
    let flipped = data.iter().filter(|ex| bayes_label(&cfg, ex) != Some(ex.label)).count();
    let rate = flipped as f64 / data.len() as f64;
    // binomial std. err. at 2% over 20k draws is 0.001
    assert!((rate - 0.02).abs() < 0.005, "{rate}");
}

#[test]
fn seeds_differ_but_label_marginals_agree() {
    let a = generate_planted_dataset(&config(1, 5000)).unwrap().train;
    let b = generate_planted_dataset(&config(2, 5000)).unwrap().train;
    assert_ne!(a, b);
    for c in 0..3 {
        let fa = a.iter().filter(|e| e.label == c).count() as f64 / 5000.0;
        let fb = b.iter().filter(|e| e.label == c).count() as f64 / 5000.0;
        assert!((fa - fb).abs() <= 0.05, "class {c}: {fa} vs {fb}");
    }
}

#[test]
fn classes_are_balanced() {
    for seed in 0..3 {
        let data = generate_planted_dataset(&config(seed, 3000)).unwrap().train;
        for c in 0..3 {
            let f = data.iter().filter(|e| e.label == c).count() as f64 / data.len() as f64;
            assert!((f - 1.0 / 3.0).abs() <= 0.03, "seed {seed} class {c}: {f}");
        }
    }
}

#[test]
fn same_seed_same_data() {
    let cfg = PlantedTaskConfig::default();
    assert_eq!(generate_planted_dataset(&cfg).unwrap(), generate_planted_dataset(&cfg).unwrap());
}

#[test]
fn rationales_point_at_trigger_tokens() {
    for triples in [PlantedTaskConfig::default().triples, latin_square(10, 3)] {
        let cfg = PlantedTaskConfig {
            triples,
            ..config(5, 1000)
        };
        for ex in generate_planted_dataset(&cfg).unwrap().train {
            let gold = ex.gold_indices().unwrap();
            assert_eq!(gold.len(), 2);
            assert!(gold[0] < ex.n1() && gold[1] >= ex.n1());
            let (l, r) = (ex.token_at(gold[0]), ex.token_at(gold[1]));
            assert!(cfg.triples.iter().any(|t| t.left == l && t.right == r));
            // the planted tokens occur nowhere else
            let triggers = ex
                .tokens1
                .iter()
                .chain(&ex.tokens2)
                .filter(|&&t| t < cfg.trigger_tokens)
                .count();
            assert_eq!(triggers, 2);
        }
    }
}

#[test]
fn sentence_one_alone_cannot_separate_shared_trigger() {
    // (a, b) -> 0 and (a, b') -> 1: sentence one always holds a
    let cfg = PlantedTaskConfig {
        classes: 2,
        triples: vec![
            Triple {
                left: 0,
                right: 1,
                class: 0,
            },
            Triple {
                left: 0,
                right: 2,
                class: 1,
            },
        ],
        noise: 0.0,
        train: 2000,
        dev: 500,
        test: 1000,
        ..Default::default()
    };
    let splits = generate_planted_dataset(&cfg).unwrap();
    let blind = |data: &[PairExample]| -> Vec<PairExample> {
        data.iter()
            .map(|e| PairExample::new(e.tokens1.clone(), vec![cfg.trigger_tokens; e.n2()], e.label))
            .collect()
    };
    let (train, dev, test) = (blind(&splits.train), blind(&splits.dev), blind(&splits.test));
    let tc = TrainConfig {
        max_epochs: 30,
        target_dev_accuracy: 1.0,
        ..Default::default()
    };
    let (probe, _) = train_classifier(&train, &dev, Architecture::BowPair, &tc, 0).unwrap();
    let acc = accuracy(&probe, &test).unwrap();
    assert!(acc <= 0.6, "sentence-one probe reached {acc}");
}

#[test]
fn ten_thousand_examples_round_trip_with_identical_digest() {
    let data = generate_planted_dataset(&config(9, 10_000)).unwrap().train;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("big.jsonl");
    write_jsonl(&path, &data).unwrap();
    let back = read_jsonl(&path).unwrap();
    assert_eq!(back, data);
    assert_eq!(dataset_digest(&back).unwrap(), dataset_digest(&data).unwrap());

    // independent hash of the file bytes against the canonical serialisation
    let file = Sha256::digest(std::fs::read(&path).unwrap());
    let expected: String = file.iter().map(|b| format!("{b:02x}")).collect();
    assert_eq!(dataset_digest(&back).unwrap(), expected);
}

#[test]
fn malformed_line_reports_its_number() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    std::fs::write(
        &path,
        "{\"tokens1\":[1],\"tokens2\":[2],\"label\":0}\n\n{\"tokens1\":[1],\"label\":0}\n",
    )
    .unwrap();
    match read_jsonl(&path) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn external_format_is_accepted() {
    let ex: PairExample =
        serde_json::from_str(r#"{"tokens1":[4,5],"tokens2":[6],"label":1,"rationale":[[0,1],[1,0]]}"#).unwrap();
    assert_eq!(ex.gold_indices(), Some(vec![1, 2]));
    assert_eq!(
        to_jsonl_line(&ex).unwrap(),
        r#"{"tokens1":[4,5],"tokens2":[6],"label":1,"rationale":[[0,1],[1,0]]}"#
    );
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        PlantedTaskConfig {
            classes: 1,
            ..Default::default()
        },
        PlantedTaskConfig {
            noise: 0.5,
            ..Default::default()
        },
        PlantedTaskConfig {
            trigger_tokens: 200,
            ..Default::default()
        },
        PlantedTaskConfig {
            classes: 4,
            ..Default::default()
        },
    ];
    for cfg in bad {
        assert!(matches!(generate_planted_dataset(&cfg), Err(Error::Contract(_))));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn examples_round_trip_through_jsonl(
        t1 in prop::collection::vec(0usize..500, 1..12),
        t2 in prop::collection::vec(0usize..500, 1..12),
        label in 0usize..4,
        gold in prop::option::of((0usize..1000, 0usize..1000)),
    ) {
        let mut ex = PairExample::new(t1, t2, label);
        if let Some((a, b)) = gold {
            let (n1, n2) = (ex.n1(), ex.n2());
            ex = ex.with_rationale(vec![(0, a % n1), (1, b % n2)]);
        }
        let back: PairExample = serde_json::from_str(&to_jsonl_line(&ex).unwrap()).unwrap();
        prop_assert_eq!(back, ex);
    }

    #[test]
    fn generated_examples_have_configured_shape(seed in 0u64..500, n1 in 1usize..10, n2 in 1usize..10) {
        let cfg = PlantedTaskConfig { n1, n2, ..config(seed, 20) };
        for ex in generate_planted_dataset(&cfg).unwrap().train {
            prop_assert_eq!((ex.n1(), ex.n2()), (n1, n2));
            prop_assert!(ex.validate(Some(cfg.vocab_size)).is_ok());
        }
    }
}
