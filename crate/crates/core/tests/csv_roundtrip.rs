use proptest::prelude::*;
use vmp_fpca::io::{read_dataset, write_dataset};
use vmp_fpca::{Curve, FunctionalDataset};

fn curve() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..12).prop_flat_map(|len| {
        (
            proptest::collection::vec(0.0f64..=1.0, len),
            proptest::collection::vec(-1e6f64..1e6, len),
        )
    })
}

proptest! {
    #[test]
    fn write_then_read_is_identity(curves in proptest::collection::vec(curve(), 1..8)) {
        let ds = FunctionalDataset::new(
            curves
                .into_iter()
                .enumerate()
                .map(|(i, (t, y))| Curve::new(format!("curve {i}"), t, y).unwrap())
                .collect(),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &ds).unwrap();
        prop_assert_eq!(read_dataset(buf.as_slice()).unwrap(), ds);
    }
}
