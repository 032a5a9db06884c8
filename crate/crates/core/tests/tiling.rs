use proptest::prelude::*;

use trajmap::geocell::Precision;
use trajmap::geodesy::haversine;
use trajmap::ingest::{Journey, WayPoint};
use trajmap::tiler::{assign_tiles, Chain};

fn journey(id: &str, pts: &[(f64, f64)]) -> Journey {
    Journey {
        id: id.into(),
        points: pts
            .iter()
            .enumerate()
            .map(|(i, &(lat, lon))| WayPoint {
                journey_id: id.into(),
                t: i as i64,
                lat,
                lon,
                speed: Some(i as f64),
            })
            .collect(),
    }
}

fn arb_path() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-4e-4f64..4e-4, -4e-4f64..4e-4), 2..8).prop_map(|steps| {
        let mut p = (42.0308, -93.6319);
        steps
            .into_iter()
            .map(|(dlat, dlon)| {
                p = (p.0 + dlat, p.1 + dlon);
                p
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn clipped_length_matches_path_length(path in arb_path(), n in 6u8..=9) {
        let tiles = assign_tiles(&[journey("a", &path)], Precision::new(n).unwrap());
        let clipped: f64 = tiles.values().flat_map(|t| &t.chains).map(Chain::length).sum();
        let exact: f64 = path.windows(2).map(|w| haversine(w[0].0, w[0].1, w[1].0, w[1].1)).sum();
        prop_assume!(exact > 1.0);
        // Cell frames are locally flat, so agreement is close but not exact.
        prop_assert!((clipped - exact).abs() / exact < 1e-4, "{} vs {}", clipped, exact);
    }

    #[test]
    fn vertices_stay_inside_their_cell(path in arb_path(), n in 6u8..=9) {
        for t in assign_tiles(&[journey("a", &path)], Precision::new(n).unwrap()).values() {
            let (w, h) = t.size_m();
            for v in t.chains.iter().flat_map(|c| &c.vertices) {
                prop_assert!(v.x >= -1e-9 && v.x <= w + 1e-9 && v.y >= -1e-9 && v.y <= h + 1e-9);
            }
        }
    }

    #[test]
    fn journey_order_does_not_matter(a in arb_path(), b in arb_path()) {
        let p = Precision::new(8).unwrap();
        let ja = journey("a", &a);
        let jb = journey("b", &b);
        prop_assert_eq!(assign_tiles(&[ja.clone(), jb.clone()], p), assign_tiles(&[jb, ja], p));
    }
}
