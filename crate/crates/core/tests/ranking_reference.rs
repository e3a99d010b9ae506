mod common;

use common::*;
use proptest::prelude::*;
use vitscope::dataset::{generate_dataset, DatasetConfig};
use vitscope::neurons::{profile_all, rank_neurons, ActivationMatrix, Aggregator};
use vitscope::vit::NeuronId;

#[test]
fn hand_built_instance_matches_reference() {
    let (anns, acts) = hand_instance();
    for k in [1, 3, 5, 10] {
        check_against_oracle(&anns, &acts, k);
    }
}

#[test]
fn constant_neuron_is_listed_separately() {
    let (anns, acts) = hand_instance();
    let ids: Vec<u64> = anns.iter().map(|a| a.image_id).collect();
    let neurons = (0..5).map(|u| NeuronId::new(0, u)).collect();
    let m = ActivationMatrix::new(Aggregator::MeanPatches, neurons, ids, acts.concat()).unwrap();
    let ranking = rank_neurons(profile_all(&m, &anns, 3).unwrap(), 1.0);
    assert_eq!(ranking.excluded.len(), 1);
    assert_eq!(ranking.excluded[0].neuron, NeuronId::new(0, 3));
    assert_eq!(ranking.excluded[0].top_images, vec![0, 1, 2]);
}

proptest! {
    #[test]
    fn random_instances_match_reference(
        seed in any::<u64>(),
        acts in prop::collection::vec(prop::collection::vec(-4i32..5, 10), 1..6),
        k in 1usize..=10,
    ) {
        let config = DatasetConfig { image_count: 10, probe_repeats: 0, ..Default::default() };
        let anns = generate_dataset(&config, seed).unwrap().annotations;
        let acts: Vec<Vec<f64>> = acts.iter().map(|r| r.iter().map(|&v| v as f64 * 0.5).collect()).collect();
        check_against_oracle(&anns, &acts, k);
    }
}
