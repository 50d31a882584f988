use ndarray::Array2;
use proptest::prelude::*;
use ucbm_core::discovery::{ConceptDictionary, DiscoveryMethod};
use ucbm_core::model::InterpretableHead;
use ucbm_core::projection::ProjectionMode;
use ucbm_core::tensor_io::{
    load_checkpoint, load_matrix, save_checkpoint, save_matrix, ActivationMatrix, MatrixFormat,
};
use ucbm_core::training::TrainConfig;

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        any::<f64>().prop_filter("finite", |v| v.is_finite()),
        Just(0.0),
        Just(-0.0),
        Just(f64::MIN_POSITIVE),
        Just(5e-324),
    ]
}

fn matrix() -> impl Strategy<Value = Array2<f64>> {
    (1usize..6, 1usize..6).prop_flat_map(|(r, c)| {
        proptest::collection::vec(finite(), r * c)
            .prop_map(move |v| Array2::from_shape_vec((r, c), v).unwrap())
    })
}

fn bits(m: &Array2<f64>) -> Vec<u64> {
    m.iter().map(|v| v.to_bits()).collect()
}

proptest! {
    #[test]
    fn every_format_round_trips_bitwise(m in matrix()) {
        let dir = tempfile::tempdir().unwrap();
        for (name, format) in [("m.npy", MatrixFormat::Npy), ("m.csv", MatrixFormat::Csv), ("m.bin", MatrixFormat::RawF64)] {
            let path = dir.path().join(name);
            save_matrix(&path, format, &ActivationMatrix::new(m.clone()).unwrap()).unwrap();
            let back = load_matrix(&path, format).unwrap();
            prop_assert_eq!(back.data().dim(), m.dim());
            prop_assert_eq!(bits(back.data()), bits(&m));
        }
    }

    #[test]
    fn checkpoint_round_trips_bitwise(
        w in proptest::collection::vec(-10.0f64..10.0, 6),
        b in proptest::collection::vec(-1.0f64..1.0, 2),
        o in proptest::collection::vec(0.0f64..1.0, 3),
        gated in any::<bool>(),
    ) {
        let dict = ConceptDictionary::new(Array2::eye(3), DiscoveryMethod::Nmf, true).unwrap();
        let mut head = InterpretableHead::init(3, 2, gated, ProjectionMode::Cosine);
        head.linear.weights = Array2::from_shape_vec((2, 3), w).unwrap();
        head.linear.bias = b.into();
        if let Some(g) = head.gate.as_mut() {
            g.offsets = o.into();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt");
        let cfg = TrainConfig { seed: 17, gated, ..Default::default() };
        save_checkpoint(&head, &dict, &cfg, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        prop_assert_eq!(back.seed, 17);
        let loaded = back.head.unwrap();
        prop_assert_eq!(bits(&loaded.linear.weights), bits(&head.linear.weights));
        prop_assert_eq!(loaded.gate.map(|g| g.offsets.to_vec()), head.gate.map(|g| g.offsets.to_vec()));
        prop_assert_eq!(back.dictionary.column_major(), dict.column_major());
    }
}
