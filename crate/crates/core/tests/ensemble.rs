mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vertx_core::ensemble::{agreement_of_masks, run_ensemble, EnsembleConfig, Provenance, Provider};
use vertx_core::geometry::{Contour, ContourSet, Source};
use vertx_core::synthgen::{corrupt, CorruptionSpec};

use common::*;

fn shuffled(set: &ContourSet, rng: &mut ChaCha8Rng) -> ContourSet {
    let mut s = set.clone();
    s.contours.shuffle(rng);
    s
}

/// Every input index is accounted for exactly once, except that a semantic
/// blob split by overlap resolution is also counted by the later stage that
/// disposes of it.
fn check_conservation(run: &Run) {
    let o = &run.outcome;
    let mut seen: BTreeMap<(Provider, usize), usize> = BTreeMap::new();
    for p in &o.provenance {
        match *p {
            Provenance::Agreement { semantic, instance } => {
                *seen.entry((Provider::Semantic, semantic)).or_default() += 1;
                *seen.entry((Provider::Instance, instance)).or_default() += 1;
            }
            Provenance::OverlapResolution { instance, .. } => {
                *seen.entry((Provider::Instance, instance)).or_default() += 1;
            }
            Provenance::Pickup { provider, index } => {
                *seen.entry((provider, index)).or_default() += 1;
            }
        }
    }
    for r in &o.rejected {
        *seen.entry((r.provider, r.index)).or_default() += 1;
    }
    for i in 0..run.semantic.len() {
        assert_eq!(seen.get(&(Provider::Semantic, i)), Some(&1), "semantic {i}");
    }
    for j in 0..run.instance.len() {
        assert_eq!(seen.get(&(Provider::Instance, j)), Some(&1), "instance {j}");
    }
    assert_eq!(o.provenance.len(), o.ensembled.len());
}

fn check_no_duplicates(run: &Run, cfg: &EnsembleConfig) {
    let masks = run.outcome.ensembled.masks().unwrap();
    for i in 0..masks.len() {
        for j in i + 1..masks.len() {
            let d = agreement_of_masks(&masks[i], &masks[j]).unwrap();
            assert!(!cfg.exceeds_eta(d), "masks {i} and {j} agree at {d}");
        }
    }
}

#[test]
fn inputs_are_conserved_and_outputs_distinct() {
    let cfg = EnsembleConfig::default();
    for seed in 0..60 {
        for scenario in [single_failure, mixed_failure] {
            let run = run_scenario(seed, scenario, &cfg);
            check_conservation(&run);
            check_no_duplicates(&run, &cfg);
            assert!(run
                .outcome
                .ensembled
                .contours
                .iter()
                .all(|c| c.source == Source::Ensemble && c.label.is_none()));
        }
    }
}

#[test]
fn output_does_not_depend_on_input_order() {
    let cfg = EnsembleConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for seed in 0..40 {
        let run = run_scenario(seed, mixed_failure, &cfg);
        let again = run_ensemble(
            &shuffled(&run.semantic, &mut rng),
            &shuffled(&run.instance, &mut rng),
            &cfg,
        )
        .unwrap();
        assert_eq!(again.ensembled.contours, run.outcome.ensembled.contours, "seed {seed}");
    }
}

#[test]
fn missing_vertebra_is_picked_up_from_semantic() {
    let cfg = EnsembleConfig::default();
    let spine = spine_for_seed(5);
    let c = CorruptionSpec {
        drop_indices: [3].into(),
        ..CorruptionSpec::clean()
    };
    let (sem, ins) = corrupt(&spine.ground_truth, &c, 5).unwrap();
    let o = run_ensemble(&sem, &ins, &cfg).unwrap();
    assert_eq!(o.ensembled.len(), 8);
    assert_eq!(
        o.provenance[3],
        Provenance::Pickup {
            provider: Provider::Semantic,
            index: 3
        }
    );
}

#[test]
fn merged_blob_is_split_by_instance_masks() {
    let cfg = EnsembleConfig::default();
    let spine = spine_for_seed(4);
    let c = CorruptionSpec {
        merge_pairs: [(2, 3)].into(),
        ..CorruptionSpec::clean()
    };
    let (sem, ins) = corrupt(&spine.ground_truth, &c, 4).unwrap();
    assert_eq!(sem.len(), 6);
    let o = run_ensemble(&sem, &ins, &cfg).unwrap();
    assert_eq!(o.ensembled.len(), 7);
    assert_eq!(o.count(|p| matches!(p, Provenance::OverlapResolution { semantic: 2, .. })), 2);
    assert!(o.rejected.iter().any(|r| r.provider == Provider::Semantic && r.index == 2));
}

#[test]
fn both_providers_empty_gives_empty_ensemble() {
    let f = frame(32, 32);
    let sem = ContourSet::empty(f.clone(), Source::SemanticProvider);
    let ins = ContourSet::empty(f, Source::InstanceProvider);
    let o = run_ensemble(&sem, &ins, &EnsembleConfig::default()).unwrap();
    assert!(o.is_empty());
    assert_eq!(o.stats.count, 0);
}

#[test]
fn single_provider_output_passes_through() {
    let f = frame(64, 64);
    let rects = [(4.0, 4.0, 20.0, 14.0), (4.0, 20.0, 20.0, 31.0), (4.0, 40.0, 21.0, 50.0)];
    let ins: Vec<Contour> = rects
        .iter()
        .map(|&(a, b, c, d)| Contour::rect(a, b, c, d, Source::InstanceProvider).unwrap())
        .collect();
    let ins = ContourSet::new(f.clone(), Source::InstanceProvider, ins).unwrap();
    let sem = ContourSet::empty(f, Source::SemanticProvider);
    let o = run_ensemble(&sem, &ins, &EnsembleConfig::default()).unwrap();
    assert_eq!(o.ensembled.len(), 3);
    assert_eq!(o.count(|p| matches!(p, Provenance::Pickup { .. })), 3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ensemble_count_within_provider_bounds(seed in 0u64..5000) {
        let cfg = EnsembleConfig::default();
        let run = run_scenario(seed, mixed_failure, &cfg);
        let n = run.outcome.ensembled.len();
        prop_assert!(n >= run.semantic.len().max(run.instance.len()) - 1);
        prop_assert!(n <= run.semantic.len() + run.instance.len());
        check_conservation(&run);
    }
}
