mod common;

use std::sync::Arc;

use common::{case_index, fixture, picky_mock, tiny_devset};
use evigen::llm::{Gateway, RecordingBackend, ReplayBackend};
use evigen::optimizer::{
    evaluate_prompt, load_best_config, replay_trial, search, write_artifacts, CandidatePool, EvidenceObjective,
    FnObjective, OptimizerError, SearchSettings, Trial,
};
use evigen::prompt::{Demonstration, PromptConfig, Stage};
use proptest::prelude::*;

fn pool(instructions: usize, demo_sets: usize) -> CandidatePool {
    let instructions = (0..instructions).map(|i| format!("instruction {i}")).collect();
    let demo_sets = (0..demo_sets)
        .map(|j| (0..j).map(|k| Demonstration::new(format!("in {j}.{k}"), "out")).collect())
        .collect();
    CandidatePool::new(instructions, demo_sets).unwrap()
}

fn parse_id(config: &PromptConfig) -> (usize, usize) {
    let (i, j) = config.config_id.trim_start_matches('i').split_once("-d").unwrap();
    (i.parse().unwrap(), j.parse().unwrap())
}

#[test]
fn scripted_winner_is_found() {
    let devset = tiny_devset(5);
    let objective = FnObjective::new("scripted", |config: &PromptConfig, _: &_| {
        Ok(match parse_id(config) {
            (2, 0) => 0.9,
            (0, 0) => 0.4,
            _ => 0.1,
        })
    });
    let settings = SearchSettings {
        trials: 12,
        minibatch_size: 2,
        ..Default::default()
    };
    let result = search(&pool(4, 2), &objective, &devset, &settings).unwrap();
    assert_eq!(result.best_choice, (2, 0));
    assert_eq!(result.best.instruction, "instruction 2");
    assert!((result.best_full_score - 0.9).abs() < 1e-12);
    assert!((result.seed_full_score - 0.4).abs() < 1e-12);
    assert_eq!(result.ledger[0].choice, (0, 0));
    assert_eq!(result.ledger.len(), 12);
    for trial in &result.ledger {
        assert_eq!(trial.minibatch_ids.len(), 2);
        let mut sorted = trial.minibatch_ids.clone();
        sorted.sort();
        assert_eq!(sorted, trial.minibatch_ids);
    }
}

/// Per-case score table indexed by `[candidate][case]`.
fn table_objective(table: Vec<Vec<f64>>, demo_sets: usize) -> impl evigen::optimizer::Objective {
    FnObjective::new("table", move |config: &PromptConfig, case: &_| {
        let (i, j) = parse_id(config);
        Ok(table[i * demo_sets + j][case_index(case)])
    })
}

fn brute_force_best(table: &[Vec<f64>]) -> usize {
    let means: Vec<f64> = table.iter().map(|row| row.iter().sum::<f64>() / row.len() as f64).collect();
    let mut best = 0;
    for (k, &m) in means.iter().enumerate() {
        if m > means[best] + 1e-12 {
            best = k;
        }
    }
    best
}

#[test]
fn full_minibatch_search_matches_brute_force() {
    // 4 instructions x 2 demo sets, 6 cases.
    let table: Vec<Vec<f64>> = (0..8)
        .map(|k| (0..6).map(|c| ((k * 7 + c * 3) % 11) as f64 / 10.0).collect())
        .collect();
    let expected = brute_force_best(&table);
    let pool = pool(4, 2);
    let objective = table_objective(table.clone(), 2);
    let settings = SearchSettings {
        trials: 8,
        minibatch_size: 6,
        ..Default::default()
    };
    let result = search(&pool, &objective, &tiny_devset(6), &settings).unwrap();
    assert_eq!(pool.index_of(result.best_choice), expected);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn never_worse_than_seed_and_deterministic(
        table in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 6), 6),
        seed in 0u64..1000,
        minibatch in 1usize..=6,
    ) {
        let objective = table_objective(table.clone(), 2);
        let settings = SearchSettings { trials: 10, minibatch_size: minibatch, seed, ..Default::default() };
        let devset = tiny_devset(6);
        let a = search(&pool(3, 2), &objective, &devset, &settings).unwrap();
        let b = search(&pool(3, 2), &objective, &devset, &settings).unwrap();
        prop_assert!(a.best_full_score >= a.seed_full_score);
        prop_assert_eq!(&a.ledger, &b.ledger);
        prop_assert_eq!(a.best_choice, b.best_choice);
        let seed_mean = table[0].iter().sum::<f64>() / 6.0;
        prop_assert!((a.seed_full_score - seed_mean).abs() < 1e-9);
    }
}

#[test]
fn trial_fails_only_when_the_whole_minibatch_fails() {
    let devset = tiny_devset(4);
    let objective = FnObjective::new("flaky", |config: &PromptConfig, case: &_| match parse_id(config) {
        (1, _) => Err(OptimizerError::InvalidSettings("broken".into())),
        (2, _) if case_index(case) == 0 => Err(OptimizerError::InvalidSettings("one bad case".into())),
        _ => Ok(0.5),
    });
    let settings = SearchSettings {
        trials: 9,
        minibatch_size: 4,
        ..Default::default()
    };
    let result = search(&pool(3, 1), &objective, &devset, &settings).unwrap();
    for trial in &result.ledger {
        match trial.choice.0 {
            1 => assert!(trial.failed()),
            2 => assert!((trial.score - 0.375).abs() < 1e-12),
            _ => assert!((trial.score - 0.5).abs() < 1e-12),
        }
    }
    assert_eq!(result.best_choice, (0, 0));

    let broken = FnObjective::new("broken", |_: &PromptConfig, _: &_| {
        Err(OptimizerError::InvalidSettings("down".into()))
    });
    assert!(matches!(
        search(&pool(2, 1), &broken, &devset, &settings),
        Err(OptimizerError::AllTrialsFailed)
    ));
}

#[test]
fn ledger_trials_replay_from_a_transcript() {
    let devset = fixture();
    let sink = tempfile::NamedTempFile::new().unwrap();
    let recorder = RecordingBackend::new(
        picky_mock(&devset, "minimal set"),
        Box::new(sink.reopen().unwrap()),
    );
    let gateway = Gateway::new(Arc::new(recorder));
    let objective = EvidenceObjective::new(&gateway);
    let instructions: Vec<String> = std::iter::once(Stage::Evidence.seed_instruction())
        .chain(Stage::Evidence.static_pool().iter().copied())
        .map(String::from)
        .collect();
    let pool = CandidatePool::new(instructions, vec![]).unwrap();
    let settings = SearchSettings {
        trials: 8,
        minibatch_size: 3,
        seed: 11,
        ..Default::default()
    };
    let result = search(&pool, &objective, &devset, &settings).unwrap();
    assert!(result.best.instruction.contains("minimal set"));
    assert_eq!(result.best_full_score, 1.0);
    assert_eq!(result.seed_full_score, 0.0);

    let replay = Gateway::new(Arc::new(
        ReplayBackend::from_reader(std::fs::File::open(sink.path()).unwrap()).unwrap(),
    ));
    let replayed = EvidenceObjective::new(&replay);
    for trial in &result.ledger {
        assert_eq!(replay_trial(&pool, trial, &devset, &replayed).unwrap(), trial.score);
    }
    assert_eq!(evaluate_prompt(&result.best, &devset, &replayed).unwrap(), result.best_full_score);
}

#[test]
fn artifacts_round_trip() {
    let devset = tiny_devset(3);
    let objective = FnObjective::new("const", |config: &PromptConfig, _: &_| {
        Ok(if parse_id(config) == (1, 1) { 1.0 } else { 0.2 })
    });
    let pool = pool(2, 2);
    let settings = SearchSettings {
        trials: 6,
        minibatch_size: 3,
        ..Default::default()
    };
    let result = search(&pool, &objective, &devset, &settings).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = write_artifacts(&result, &pool.seed_config(), dir.path()).unwrap();

    let ledger: Vec<Trial> = std::fs::read_to_string(&paths.ledger)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(ledger, result.ledger);
    assert_eq!(load_best_config(&paths.best_config).unwrap(), result.best);
    assert_eq!(load_best_config(&paths.summary).unwrap(), result.best);
    assert_eq!(result.best.demonstrations.len(), 1);
    let seed: PromptConfig = serde_json::from_str(&std::fs::read_to_string(&paths.seed_config).unwrap()).unwrap();
    assert_eq!(seed, pool.seed_config());
}

#[test]
fn invalid_settings_are_rejected() {
    let devset = tiny_devset(3);
    let objective = FnObjective::new("zero", |_: &PromptConfig, _: &_| Ok(0.0));
    for settings in [
        SearchSettings { minibatch_size: 4, ..Default::default() },
        SearchSettings { minibatch_size: 0, ..Default::default() },
        SearchSettings { trials: 2, minibatch_size: 1, ..Default::default() },
        SearchSettings { epsilon: 1.5, minibatch_size: 1, ..Default::default() },
    ] {
        assert!(matches!(
            search(&pool(3, 2), &objective, &devset, &settings),
            Err(OptimizerError::InvalidSettings(_))
        ));
    }
}
