use proptest::prelude::*;

use trajmap::geocell::{cell_bounds, encode, Precision};

proptest! {
    #[test]
    fn decode_contains_and_reencodes(lat in -90.0f64..90.0, lon in -180.0f64..180.0, n in 1u8..=12) {
        let cell = encode(lat, lon, Precision::new(n).unwrap()).unwrap();
        prop_assert_eq!(cell.code.len(), n as usize);
        prop_assert!(cell.bbox.contains(lat, lon));
        let decoded = cell_bounds(&cell.code).unwrap();
        prop_assert_eq!(decoded.bbox, cell.bbox);
        let (clat, clon) = decoded.bbox.center();
        prop_assert_eq!(encode(clat, clon, decoded.precision).unwrap().code, cell.code);
    }

    #[test]
    fn finer_cells_nest(lat in -90.0f64..90.0, lon in -180.0f64..180.0, n in 1u8..12) {
        let coarse = encode(lat, lon, Precision::new(n).unwrap()).unwrap();
        let fine = encode(lat, lon, Precision::new(n + 1).unwrap()).unwrap();
        prop_assert!(fine.code.starts_with(&coarse.code));
        prop_assert!(coarse.bbox.contains_bbox(&fine.bbox));
    }
}

#[test]
fn out_of_range_inputs_are_rejected() {
    assert!(Precision::new(0).is_err());
    assert!(Precision::new(13).is_err());
    let p = Precision::new(5).unwrap();
    assert!(encode(90.5, 0.0, p).is_err());
    assert!(encode(0.0, f64::NAN, p).is_err());
    assert!(cell_bounds("ab!").is_err());
    assert!(cell_bounds("").is_err());
}
