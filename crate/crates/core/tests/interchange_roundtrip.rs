use std::sync::Arc;

use nnmut_core::data::{make_synthetic_classification, make_synthetic_regression};
use nnmut_core::model::{load_model, load_population, save_model, MANIFEST_FILE, WEIGHTS_FILE};
use nnmut_core::operators::apply;
use nnmut_core::train::init_instance;
use nnmut_core::{
    Activation, Dataset, LayerSpec, ModelGraph, OperatorConfig, OperatorKind, Provenance, Task,
};
use proptest::prelude::*;

fn graphs() -> Vec<Arc<ModelGraph>> {
    vec![
        Arc::new(ModelGraph::mlp(3, &[7, 5], 4, Activation::Tanh, Task::Classification).unwrap()),
        Arc::new(ModelGraph::mlp(2, &[6], 1, Activation::Sigmoid, Task::Regression).unwrap()),
        Arc::new(
            ModelGraph::new(
                vec![5, 5, 2],
                Task::Classification,
                vec![
                    LayerSpec::Conv2d {
                        kernel_shape: [2, 2, 2, 3],
                        has_bias: false,
                        activation: Activation::Relu,
                        stride: 1,
                    },
                    LayerSpec::Maxpool2d { pool: 2, stride: 2 },
                    LayerSpec::Flatten,
                    LayerSpec::dense(12, 3, Activation::Linear),
                    LayerSpec::Activation {
                        activation: Activation::Softmax,
                    },
                ],
            )
            .unwrap(),
        ),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn model_roundtrip_is_bitwise(seed in any::<u64>(), g in 0usize..3, op in 0usize..7) {
        let dir = tempfile::tempdir().unwrap();
        let base = init_instance(graphs()[g].clone(), seed);
        let m = apply(&base, &OperatorConfig::new(OperatorKind::ALL[op]).with_ratio(0.4), seed).unwrap();
        save_model(&m, dir.path()).unwrap();
        prop_assert!(dir.path().join(MANIFEST_FILE).exists());
        prop_assert!(dir.path().join(WEIGHTS_FILE).exists());
        let back = load_model(dir.path()).unwrap();
        prop_assert_eq!(&*back.graph, &*m.graph);
        prop_assert_eq!(&back.provenance, &m.provenance);
        let a: Vec<u32> = m.flat_params().iter().map(|w| w.to_bits()).collect();
        let b: Vec<u32> = back.flat_params().iter().map(|w| w.to_bits()).collect();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn population_shares_one_graph() {
    let dir = tempfile::tempdir().unwrap();
    let g = graphs()[0].clone();
    let dirs: Vec<_> = (0..3)
        .map(|i| {
            let d = dir.path().join(format!("instance_{i:02}"));
            let mut m = init_instance(g.clone(), i);
            m.provenance = Provenance::TrainedOriginal { seed: i };
            save_model(&m, &d).unwrap();
            d
        })
        .collect();
    let pop = load_population(&dirs).unwrap();
    assert_eq!(pop.len(), 3);
    assert!(Arc::ptr_eq(&pop[0].graph, &pop[2].graph));
}

#[test]
fn datasets_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let (train, _) = make_synthetic_classification(3, 20, 0.2, 1).unwrap();
    let (reg, _) = make_synthetic_regression(40, 0.05, 2).unwrap();
    for (i, d) in [train, reg].into_iter().enumerate() {
        let p = dir.path().join(format!("d{i}"));
        d.save(&p).unwrap();
        let back = Dataset::load(&p).unwrap();
        assert_eq!(back, d);
    }
}
