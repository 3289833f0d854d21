use exgrpo::experiment::{build_suite, run_experiment, write_outputs};
use exgrpo::metrics::read_jsonl;
use exgrpo::optimizer::{train_step, TrainState};
use exgrpo::policy::sample_trajectory;
use exgrpo::task::{suite_pass_at_1, verify};
use exgrpo::{ExperimentSpec, SuiteSpec, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_spec() -> ExperimentSpec {
    ExperimentSpec {
        suite_spec: SuiteSpec::new(&[(1, 8), (2, 8)]),
        steps: 25,
        seeds: vec![3, 4],
        config: TrainConfig {
            batch_size: 6,
            ..TrainConfig::default()
        },
        ..ExperimentSpec::default()
    }
}

#[test]
fn uniform_policy_pass_rate_matches_exact_value() {
    let spec = ExperimentSpec::default();
    let (vocab, suite) = build_suite(&spec).unwrap();
    let state = TrainState::new(suite.clone(), vocab, &spec.config).unwrap();
    let exact = suite_pass_at_1(&state.params, &suite, state.max_len).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let per_question = 100;
    let mut hits = 0usize;
    for q in &suite.questions {
        for _ in 0..per_question {
            let t = sample_trajectory(&state.params, q, state.max_len, &mut rng).unwrap();
            hits += usize::from(verify(q, &t.tokens, vocab.end_token()));
        }
    }
    let n = (suite.len() * per_question) as f64;
    let rate = hits as f64 / n;
    let se = (exact * (1.0 - exact) / n).sqrt();
    assert!(
        (rate - exact).abs() < 3.0 * se,
        "rate {rate} exact {exact} se {se}"
    );
}

#[test]
fn training_is_deterministic_for_a_seed() {
    let spec = small_spec();
    let (vocab, suite) = build_suite(&spec).unwrap();
    let run = || {
        let mut state = TrainState::new(suite.clone(), vocab, &spec.config).unwrap();
        let reports: Vec<_> = (0..40)
            .map(|_| train_step(&mut state, &spec.config).unwrap())
            .collect();
        (reports, state.params.logits().to_vec())
    };
    let (a, pa) = run();
    let (b, pb) = run();
    assert_eq!(a, b);
    assert!(pa.iter().zip(&pb).all(|(x, y)| x.to_bits() == y.to_bits()));

    let other = TrainConfig {
        seed: spec.config.seed + 1,
        ..spec.config.clone()
    };
    let mut state = TrainState::new(suite.clone(), vocab, &other).unwrap();
    let c: Vec<_> = (0..40)
        .map(|_| train_step(&mut state, &other).unwrap())
        .collect();
    assert_ne!(a, c);
}

#[test]
fn training_improves_pass_rate() {
    let spec = small_spec();
    let (vocab, suite) = build_suite(&spec).unwrap();
    let mut state = TrainState::new(suite.clone(), vocab, &spec.config).unwrap();
    let before = suite_pass_at_1(&state.params, &suite, state.max_len).unwrap();
    let mut last = None;
    for _ in 0..150 {
        last = Some(train_step(&mut state, &spec.config).unwrap());
    }
    let after = last.unwrap().suite_pass_at_1;
    assert!(after > before + 0.2, "before {before} after {after}");
}

#[test]
fn experiment_outputs_are_reproducible() {
    let spec = small_spec();
    let (_, suite) = build_suite(&spec).unwrap();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let runs = run_experiment(&spec).unwrap();
        assert_eq!(runs.len(), 4);
        write_outputs(d.path(), &suite, &runs).unwrap();
    }
    let mut names: Vec<_> = std::fs::read_dir(dirs[0].path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.len() >= 4 * 3 + 3);
    for name in &names {
        let a = std::fs::read(dirs[0].path().join(name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(name)).unwrap();
        assert_eq!(a, b, "{name:?} differs");
    }
    let jsonl = names
        .iter()
        .find(|n| n.to_string_lossy().ends_with(".jsonl"))
        .unwrap();
    let text = std::fs::read_to_string(dirs[0].path().join(jsonl)).unwrap();
    let reports = read_jsonl(&text).unwrap();
    assert_eq!(reports.len(), spec.steps);
    assert!(reports.windows(2).all(|w| w[1].step == w[0].step + 1));
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Frozen fingerprint of a fixed run; must match with and without the
/// `parallel` feature.
#[test]
fn run_fingerprint_is_stable_across_backends() {
    let spec = small_spec();
    let (vocab, suite) = build_suite(&spec).unwrap();
    let mut state = TrainState::new(suite, vocab, &spec.config).unwrap();
    let mut text = String::new();
    for _ in 0..60 {
        text.push_str(&exgrpo::metrics::jsonl_line(
            &train_step(&mut state, &spec.config).unwrap(),
        ));
    }
    for x in state.params.logits() {
        text.push_str(&format!("{x:?}\n"));
    }
    assert_eq!(
        fnv1a(text.as_bytes()),
        FINGERPRINT,
        "{:#x}",
        fnv1a(text.as_bytes())
    );
}

const FINGERPRINT: u64 = 0x82ae_52ca_b853_23b3;
