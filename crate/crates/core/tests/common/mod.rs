#![allow(dead_code)]

use std::collections::BTreeSet;

use itertools::Itertools;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use platoon::coordinator::{ordering_score, ForbiddenLinks, TopologyMatrix, VehicleId};

/// Vehicle 3 stopped trusting vehicle 2.
pub fn example_isolation() -> (TopologyMatrix, TopologyMatrix) {
    let d = TopologyMatrix::from_raw(&[(1, 0, 2), (2, 1, 3), (3, 0, 4), (4, 3, 5), (5, 4, 0)]).unwrap();
    let star = TopologyMatrix::from_raw(&[(1, 5, 2), (2, 1, 0), (3, 0, 4), (4, 3, 5), (5, 4, 1)]).unwrap();
    (d, star)
}

/// Vehicle 6 asks to join.
pub fn example_merge() -> (TopologyMatrix, TopologyMatrix, TopologyMatrix) {
    let d = TopologyMatrix::from_raw(&[(1, 0, 2), (2, 1, 3), (3, 2, 4), (4, 3, 5), (5, 4, 0), (6, 0, 0)]).unwrap();
    let s1 = TopologyMatrix::from_raw(&[(1, 0, 2), (2, 1, 3), (3, 2, 4), (4, 3, 5), (5, 4, 6), (6, 5, 0)]).unwrap();
    let s2 = TopologyMatrix::from_raw(&[(1, 6, 2), (2, 1, 3), (3, 2, 4), (4, 3, 5), (5, 4, 0), (6, 0, 1)]).unwrap();
    (d, s1, s2)
}

/// Vehicle 3 left.
pub fn example_split() -> (TopologyMatrix, TopologyMatrix, TopologyMatrix) {
    let d = TopologyMatrix::from_raw(&[(1, 0, 2), (2, 1, 0), (4, 0, 5), (5, 4, 0)]).unwrap();
    let s1 = TopologyMatrix::from_raw(&[(1, 0, 2), (2, 1, 4), (4, 2, 5), (5, 4, 0)]).unwrap();
    let s2 = TopologyMatrix::from_raw(&[(1, 5, 2), (2, 1, 0), (4, 0, 5), (5, 4, 1)]).unwrap();
    (d, s1, s2)
}

pub fn listing_set(ms: &[TopologyMatrix]) -> BTreeSet<String> {
    ms.iter().map(TopologyMatrix::to_listing).collect()
}

/// Exhaustive optimum set over every permutation.
pub fn brute_force(d: &TopologyMatrix, forbidden: &ForbiddenLinks) -> BTreeSet<String> {
    let ids: Vec<VehicleId> = d.ids().collect();
    let mut best = None;
    let mut out = BTreeSet::new();
    for perm in ids.iter().copied().permutations(ids.len()) {
        if perm.windows(2).any(|w| forbidden.contains(w[0], w[1])) {
            continue;
        }
        let s = ordering_score(d, &perm);
        if best.is_none_or(|b| s > b) {
            best = Some(s);
            out.clear();
        }
        if best == Some(s) {
            out.insert(TopologyMatrix::from_order(&perm).to_listing());
        }
    }
    out
}

/// A random well-formed matrix of up to `max_n` vehicles with a few forbidden links.
pub fn random_instance(rng: &mut ChaCha8Rng, max_n: usize) -> (TopologyMatrix, ForbiddenLinks) {
    let n = rng.random_range(1..=max_n);
    let mut ids: Vec<u32> = (1..=(n as u32 + 3)).collect();
    // sparse, shuffled ids
    for i in (1..ids.len()).rev() {
        let j = rng.random_range(0..=i);
        ids.swap(i, j);
    }
    ids.truncate(n);
    let pick = |rng: &mut ChaCha8Rng, me: u32| -> u32 {
        if rng.random_bool(0.3) {
            0
        } else {
            let others: Vec<u32> = ids.iter().copied().filter(|&x| x != me).collect();
            if others.is_empty() {
                0
            } else {
                others[rng.random_range(0..others.len())]
            }
        }
    };
    let mut rows = Vec::new();
    for &id in &ids {
        let pred = pick(rng, id);
        let mut succ = pick(rng, id);
        if succ == pred {
            succ = 0;
        }
        rows.push((id, pred, succ));
    }
    let mut forbidden = ForbiddenLinks::new();
    for _ in 0..rng.random_range(0..=n) {
        let a = ids[rng.random_range(0..n)];
        let b = ids[rng.random_range(0..n)];
        if a != b {
            forbidden.insert(VehicleId(a), VehicleId(b));
        }
    }
    (TopologyMatrix::from_raw(&rows).unwrap(), forbidden)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
