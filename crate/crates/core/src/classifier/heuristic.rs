//! Geometric baseline: find places where distinct chains meet and count
//! the distinct directions leaving them.

use crate::error::{Error, Result};
use crate::tiler::TileClip;

use super::Prediction;

pub const DEFAULT_SNAP_M: f64 = 2.0;
pub const DEFAULT_MIN_BRANCH_DEG: f64 = 30.0;

/// Branches shorter than this many snap lengths are GPS jitter, not roads.
const MIN_ARM_SNAPS: f64 = 3.0;

/// `intersection` with score 1 when some node has three or more distinct
/// branches, otherwise `straight` with score 0.
pub fn classify_heuristic(clip: &TileClip, snap: f64, min_branch_deg: f64) -> Result<Prediction> {
    if clip.is_empty() {
        return Err(Error::Unclassifiable(format!(
            "cell {} has no trajectory chains",
            clip.cell.code
        )));
    }
    let degree = max_node_degree(clip, snap, min_branch_deg)?;
    Ok(Prediction::from_score(if degree >= 3 { 1.0 } else { 0.0 }, 0.5))
}

/// Largest branch count over all nodes of the clip.
///
/// Nodes are the places where two different chains cross or pass within
/// `snap` meters of each other, merged when closer than `snap`. A node's
/// branches point from the node to the far ends of every chain through it;
/// branches whose directions are closer than `min_branch_deg` count once.
/// Only distances and angles are used, so the result does not depend on the
/// orientation of the clip's coordinates.
pub fn max_node_degree(clip: &TileClip, snap: f64, min_branch_deg: f64) -> Result<usize> {
    let valid = snap > 0.0 && min_branch_deg > 0.0 && min_branch_deg < 180.0;
    if !valid {
        return Err(Error::Config(format!(
            "heuristic needs snap > 0 and min_branch in (0, 180), got {snap} and {min_branch_deg}"
        )));
    }
    let chains: Vec<Vec<(f64, f64)>> = clip
        .chains
        .iter()
        .map(|c| c.vertices.iter().map(|v| (v.x, v.y)).collect())
        .collect();

    let contacts = find_contacts(&chains, snap);
    if contacts.is_empty() {
        // lone chains only have pass-through vertices
        return Ok(if chains.iter().any(|c| c.len() >= 2) { 2 } else { 0 });
    }

    let mut sets = DisjointSet::new(contacts.len());
    for i in 0..contacts.len() {
        for j in i + 1..contacts.len() {
            if dist(contacts[i].at, contacts[j].at) < snap {
                sets.union(i, j);
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); contacts.len()];
    for i in 0..contacts.len() {
        groups[sets.find(i)].push(i);
    }

    let min_arm = MIN_ARM_SNAPS * snap;
    let gap = min_branch_deg.to_radians();
    let mut best = 0;
    for members in groups.iter().filter(|g| !g.is_empty()) {
        let n = members.len() as f64;
        let centre = members.iter().fold((0.0, 0.0), |acc, &m| {
            (acc.0 + contacts[m].at.0 / n, acc.1 + contacts[m].at.1 / n)
        });
        let mut through: Vec<usize> = members.iter().flat_map(|&m| contacts[m].chains).collect();
        through.sort_unstable();
        through.dedup();
        let mut angles = Vec::new();
        for &c in &through {
            for &end in [chains[c][0], chains[c][chains[c].len() - 1]].iter() {
                if dist(centre, end) >= min_arm {
                    angles.push((end.1 - centre.1).atan2(end.0 - centre.0));
                }
            }
        }
        best = best.max(circular_clusters(&mut angles, gap));
    }
    Ok(best)
}

struct Contact {
    at: (f64, f64),
    chains: [usize; 2],
}

/// Closest-approach points of segment pairs from different chains that
/// come within `snap` of each other.
fn find_contacts(chains: &[Vec<(f64, f64)>], snap: f64) -> Vec<Contact> {
    let mut out = Vec::new();
    for i in 0..chains.len() {
        for j in i + 1..chains.len() {
            for a in chains[i].windows(2) {
                for b in chains[j].windows(2) {
                    if let Some((p, q)) = closest_points(a[0], a[1], b[0], b[1]) {
                        if dist(p, q) <= snap {
                            out.push(Contact {
                                at: ((p.0 + q.0) / 2.0, (p.1 + q.1) / 2.0),
                                chains: [i, j],
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

/// Closest points between segments `ab` and `cd`; `None` when either is
/// degenerate.
fn closest_points(a: (f64, f64), b: (f64, f64), c: (f64, f64), d: (f64, f64)) -> Option<((f64, f64), (f64, f64))> {
    let u = (b.0 - a.0, b.1 - a.1);
    let v = (d.0 - c.0, d.1 - c.1);
    let uu = u.0 * u.0 + u.1 * u.1;
    let vv = v.0 * v.0 + v.1 * v.1;
    if uu == 0.0 || vv == 0.0 {
        return None;
    }
    let at = |p: (f64, f64), w: (f64, f64), t: f64| (p.0 + t * w.0, p.1 + t * w.1);
    let cross = u.0 * v.1 - u.1 * v.0;
    let w = (c.0 - a.0, c.1 - a.1);
    if cross != 0.0 {
        let s = (w.0 * v.1 - w.1 * v.0) / cross;
        let t = (w.0 * u.1 - w.1 * u.0) / cross;
        if (0.0..=1.0).contains(&s) && (0.0..=1.0).contains(&t) {
            let p = at(a, u, s);
            return Some((p, p));
        }
    }
    // no proper crossing: the closest pair involves an endpoint
    let project = |p: (f64, f64), o: (f64, f64), w: (f64, f64), ww: f64| {
        let t = (((p.0 - o.0) * w.0 + (p.1 - o.1) * w.1) / ww).clamp(0.0, 1.0);
        at(o, w, t)
    };
    [
        (a, project(a, c, v, vv)),
        (b, project(b, c, v, vv)),
        (project(c, a, u, uu), c),
        (project(d, a, u, uu), d),
    ]
    .into_iter()
    .min_by(|x, y| dist(x.0, x.1).total_cmp(&dist(y.0, y.1)))
}

/// Number of groups after single-linkage merging of angles on the circle.
fn circular_clusters(angles: &mut [f64], gap: f64) -> usize {
    if angles.is_empty() {
        return 0;
    }
    angles.sort_by(f64::total_cmp);
    let tau = std::f64::consts::TAU;
    let mut breaks = angles.windows(2).filter(|w| w[1] - w[0] >= gap).count();
    if angles[0] + tau - angles[angles.len() - 1] >= gap {
        breaks += 1;
    }
    breaks.max(1)
}

fn dist(p: (f64, f64), q: (f64, f64)) -> f64 {
    (p.0 - q.0).hypot(p.1 - q.1)
}

struct DisjointSet(Vec<usize>);

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self((0..n).collect())
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        self.0[ra.max(rb)] = ra.min(rb);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Label;
    use crate::geocell::{encode, Precision};
    use crate::tiler::{Chain, ClipVertex};

    fn clip(chains: &[&[(f64, f64)]]) -> TileClip {
        let cell = encode(42.03, -93.62, Precision::new(8).unwrap()).unwrap();
        let mut c = TileClip::empty(cell);
        for (i, pts) in chains.iter().enumerate() {
            c.chains.push(Chain {
                journey_id: format!("j{i}"),
                start: 0.0,
                vertices: pts.iter().map(|&(x, y)| ClipVertex { x, y, speed: None }).collect(),
            });
        }
        c.point_count = 10;
        c
    }

    fn classify(c: &TileClip) -> Label {
        classify_heuristic(c, DEFAULT_SNAP_M, DEFAULT_MIN_BRANCH_DEG)
            .unwrap()
            .label
    }

    #[test]
    fn cross_is_intersection() {
        let c = clip(&[&[(0.0, 9.5), (28.0, 9.5)], &[(14.0, 0.0), (14.0, 19.0)]]);
        assert_eq!(max_node_degree(&c, 2.0, 30.0).unwrap(), 4);
        assert_eq!(classify(&c), Label::Intersection);
        assert_eq!(classify_heuristic(&c, 2.0, 30.0).unwrap().score, 1.0);
    }

    #[test]
    fn tee_is_intersection() {
        let c = clip(&[&[(0.0, 9.5), (28.0, 9.5)], &[(14.0, 0.0), (14.0, 9.5)]]);
        assert_eq!(max_node_degree(&c, 2.0, 30.0).unwrap(), 3);
    }

    #[test]
    fn single_chain_is_straight() {
        let c = clip(&[&[(0.0, 3.0), (10.0, 8.0), (28.0, 12.0)]]);
        assert_eq!(classify(&c), Label::Straight);
    }

    #[test]
    fn parallel_chains_are_straight() {
        let c = clip(&[&[(0.0, 4.0), (28.0, 4.0)], &[(0.0, 14.0), (28.0, 14.0)]]);
        assert_eq!(max_node_degree(&c, 2.0, 30.0).unwrap(), 2);
        assert_eq!(classify(&c), Label::Straight);
    }

    #[test]
    fn noisy_copies_of_one_road_are_straight() {
        let c = clip(&[
            &[(0.0, 9.0), (9.0, 10.6), (18.0, 8.7), (28.0, 9.8)],
            &[(0.0, 10.2), (9.0, 8.9), (18.0, 10.1), (28.0, 9.0)],
            &[(0.0, 9.4), (14.0, 9.9), (28.0, 9.6)],
        ]);
        assert_eq!(classify(&c), Label::Straight);
    }

    #[test]
    fn shallow_branch_merges() {
        // 20 degrees off the through road, below the 30 degree threshold
        let (s, c) = 20f64.to_radians().sin_cos();
        let branch = [(14.0, 9.5), (14.0 + 12.0 * c, 9.5 + 12.0 * s)];
        let k = clip(&[&[(0.0, 9.5), (28.0, 9.5)], &branch]);
        assert_eq!(classify(&k), Label::Straight);
        assert_eq!(max_node_degree(&k, 2.0, 15.0).unwrap(), 3);
    }

    #[test]
    fn empty_clip_is_unclassifiable() {
        let c = clip(&[]);
        assert!(matches!(
            classify_heuristic(&c, 2.0, 30.0),
            Err(Error::Unclassifiable(_))
        ));
    }

    #[test]
    fn bad_parameters() {
        let c = clip(&[&[(0.0, 0.0), (1.0, 1.0)]]);
        assert!(matches!(classify_heuristic(&c, 0.0, 30.0), Err(Error::Config(_))));
        assert!(matches!(classify_heuristic(&c, 2.0, 180.0), Err(Error::Config(_))));
    }

    #[test]
    fn closest_points_of_crossing_and_offset_segments() {
        let (p, q) = closest_points((0.0, 0.0), (2.0, 2.0), (0.0, 2.0), (2.0, 0.0)).unwrap();
        assert_eq!(p, (1.0, 1.0));
        assert_eq!(p, q);
        let (p, q) = closest_points((0.0, 0.0), (4.0, 0.0), (5.0, 1.0), (5.0, 3.0)).unwrap();
        assert_eq!((p, q), ((4.0, 0.0), (5.0, 1.0)));
        assert!(closest_points((1.0, 1.0), (1.0, 1.0), (0.0, 0.0), (1.0, 0.0)).is_none());
    }

    #[test]
    fn circular_merge_wraps_around() {
        let mut a = vec![-3.1, 3.1, 0.0];
        assert_eq!(circular_clusters(&mut a, 0.5), 2);
        let mut b = vec![0.0, 0.1, 0.2];
        assert_eq!(circular_clusters(&mut b, 0.5), 1);
    }
}
