use proptest::prelude::*;

use trajmap::ingest::{build_journeys, filter_to_reference, load_waypoints, write_waypoints, WayPoint};
use trajmap::simgen::{generate_network, GridKind};

fn point(id: usize, t: i64, lat: f64, lon: f64) -> WayPoint {
    WayPoint {
        journey_id: format!("j{id}"),
        t,
        lat,
        lon,
        speed: Some(5.0),
    }
}

fn arb_points() -> impl Strategy<Value = Vec<WayPoint>> {
    prop::collection::vec((0usize..4, 0i64..40, -1e-3f64..1e-3, -1e-3f64..1e-3), 0..60).prop_map(|raw| {
        raw.into_iter()
            .map(|(id, t, dlat, dlon)| point(id, t, 42.03 + dlat, -93.63 + dlon))
            .collect()
    })
}

proptest! {
    #[test]
    fn journeys_ignore_input_order(points in arb_points(), seed in any::<u64>()) {
        let mut shuffled = points.clone();
        let n = shuffled.len();
        if n > 1 {
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                shuffled.swap(i, (s >> 33) as usize % (i + 1));
            }
        }
        let a = build_journeys(points);
        let b = build_journeys(shuffled);
        prop_assert_eq!(&a.journeys, &b.journeys);
        prop_assert_eq!(a.dropped, b.dropped);
        for j in &a.journeys {
            prop_assert!(j.is_valid());
        }
    }

    #[test]
    fn reference_filter_is_idempotent(points in arb_points(), offset in 1.0f64..60.0) {
        let network = generate_network(GridKind::Grid, 3, 3, 80.0, (42.0295, -93.6315), 1).unwrap();
        let journeys = build_journeys(points).journeys;
        let once = filter_to_reference(&journeys, &network, offset).unwrap();
        let twice = filter_to_reference(&once.journeys, &network, offset).unwrap();
        prop_assert_eq!(&once.journeys, &twice.journeys);
        prop_assert_eq!(twice.removed_points, 0);
    }
}

#[test]
fn csv_round_trip_keeps_missing_speed() {
    let mut points = vec![point(1, 0, 42.0, -93.0), point(1, 1000, 42.0001, -93.0)];
    points[1].speed = None;
    let mut buf = Vec::new();
    write_waypoints(&mut buf, &points).unwrap();
    let back = load_waypoints(buf.as_slice()).unwrap();
    assert_eq!(back.rejected, 0);
    assert_eq!(back.points, points);
}

#[test]
fn malformed_rows_are_counted_not_fatal() {
    let text = "journey_id,timestamp_ms,lat,lon,speed_mps\n\
                a,0,42.0,-93.0,3.5\n\
                a,1,,-93.0,3.5\n\
                a,2,95.0,-93.0,3.5\n\
                a,3,42.0,-93.0,-1\n\
                a,4,42.0,-93.0,\n";
    let report = load_waypoints(text.as_bytes()).unwrap();
    assert_eq!(report.points.len(), 2);
    assert_eq!(report.rejected, 3);
}
