//! Site geometry: containers, distances, max-min ordering and neighbour search.

use std::collections::HashSet;
use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A planar site set. Coordinates are finite and pairwise distinct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteSet {
    coords: Vec<[f64; 2]>,
}

impl SiteSet {
    pub fn new(coords: Vec<[f64; 2]>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::invalid("a site set needs at least one site"));
        }
        let mut seen = HashSet::with_capacity(coords.len());
        for (i, c) in coords.iter().enumerate() {
            if !(c[0].is_finite() && c[1].is_finite()) {
                return Err(Error::invalid(format!("site {i} has non-finite coordinates")));
            }
            // -0.0 and 0.0 are the same location
            let key = ((c[0] + 0.0).to_bits(), (c[1] + 0.0).to_bits());
            if !seen.insert(key) {
                return Err(Error::invalid(format!("site {i} duplicates an earlier site at ({}, {})", c[0], c[1])));
            }
        }
        Ok(Self { coords })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn get(&self, i: usize) -> [f64; 2] {
        self.coords[i]
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        euclid(self.coords[i], self.coords[j])
    }

    /// Sub-collection in the given index order.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        SiteSet::new(idx.iter().map(|&i| self.coords[i]).collect())
    }

    /// Concatenation of two disjoint site sets.
    pub fn concat(&self, other: &SiteSet) -> Result<Self> {
        let mut c = self.coords.clone();
        c.extend_from_slice(&other.coords);
        SiteSet::new(c)
    }

    pub fn centroid(&self) -> [f64; 2] {
        let n = self.len() as f64;
        let (sx, sy) = self.coords.iter().fold((0.0, 0.0), |(a, b), c| (a + c[0], b + c[1]));
        [sx / n, sy / n]
    }

    /// Largest pairwise distance.
    pub fn diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..self.len() {
            for j in 0..i {
                d = d.max(self.distance(i, j));
            }
        }
        d
    }

    /// Writes the `x,y` CSV form with round-trippable precision.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["x", "y"])?;
        for c in &self.coords {
            wtr.write_record([format!("{:?}", c[0]), format!("{:?}", c[1])])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "x" || &headers[1] != "y" {
            return Err(Error::Data(format!("site CSV header must be `x,y`, found {headers:?}")));
        }
        let mut coords = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::Data(format!("bad coordinate {s:?}: {e}")));
            coords.push([parse(&rec[0])?, parse(&rec[1])?]);
        }
        SiteSet::new(coords).map_err(|e| Error::Data(e.to_string()))
    }
}

fn euclid(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Draws `n` sites uniformly on the unit square.
pub fn sample_uniform_sites(n: usize, seed: u64) -> Result<SiteSet> {
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = Vec::with_capacity(n);
    let mut seen = HashSet::with_capacity(n);
    while coords.len() < n {
        let c = [rng.random::<f64>(), rng.random::<f64>()];
        // Collisions are astronomically unlikely; redraw rather than jitter.
        if seen.insert((c[0].to_bits(), c[1].to_bits())) {
            coords.push(c);
        }
    }
    SiteSet::new(coords)
}

/// Symmetric matrix of Euclidean distances.
pub fn distance_matrix(s: &SiteSet) -> DMatrix<f64> {
    let n = s.len();
    let mut d = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in (j + 1)..n {
            let v = s.distance(i, j);
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

/// Max-min ordering: start at the site nearest the centroid, then repeatedly
/// take the site farthest from everything already chosen. Ties go to the lowest
/// site index.
pub fn maxmin_ordering(s: &SiteSet) -> Vec<usize> {
    let n = s.len();
    let c = s.centroid();
    let mut first = 0;
    let mut best = f64::INFINITY;
    for (i, &p) in s.coords().iter().enumerate() {
        let d = euclid(p, c);
        if d < best {
            best = d;
            first = i;
        }
    }
    let mut order = Vec::with_capacity(n);
    let mut chosen = vec![false; n];
    let mut min_dist = vec![f64::INFINITY; n];
    let mut next = first;
    for _ in 0..n {
        order.push(next);
        chosen[next] = true;
        let p = s.get(next);
        let mut best_i = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for i in 0..n {
            if chosen[i] {
                continue;
            }
            let d = euclid(s.get(i), p);
            if d < min_dist[i] {
                min_dist[i] = d;
            }
            if min_dist[i] > best_d {
                best_d = min_dist[i];
                best_i = i;
            }
        }
        next = best_i;
    }
    order
}

/// Ordering plus conditioning sets for a Vecchia factorization.
///
/// `neighbors[i]` holds positions (into `ordering`) of up to `m` earlier
/// sites; `ordering[i]` is the site index placed at position `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VecchiaPlan {
    pub ordering: Vec<usize>,
    pub neighbors: Vec<Vec<usize>>,
    pub m: usize,
}

impl VecchiaPlan {
    pub fn len(&self) -> usize {
        self.ordering.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ordering.is_empty()
    }
}

/// Max-min ordering with the `m` nearest preceding sites as conditioning sets.
/// Distance ties are broken by the lower ordered position.
pub fn build_vecchia_plan(s: &SiteSet, m: usize) -> Result<VecchiaPlan> {
    if m == 0 {
        return Err(Error::invalid("Vecchia conditioning size m must be at least 1"));
    }
    let ordering = maxmin_ordering(s);
    let n = ordering.len();
    let mut neighbors = Vec::with_capacity(n);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        cand.clear();
        let p = s.get(ordering[i]);
        for j in 0..i {
            cand.push((euclid(p, s.get(ordering[j])), j));
        }
        let k = m.min(i);
        if k < cand.len() {
            cand.select_nth_unstable_by(k, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            cand.truncate(k);
        }
        cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        neighbors.push(cand.iter().map(|c| c.1).collect());
    }
    Ok(VecchiaPlan { ordering, neighbors, m })
}

/// Indices of the `k` observed sites nearest to each target, closest first.
pub fn knn_to_targets(s: &SiteSet, targets: &SiteSet, k: usize) -> Result<Vec<Vec<usize>>> {
    if k > s.len() {
        return Err(Error::invalid(format!("k = {k} exceeds the {} observed sites", s.len())));
    }
    let mut out = Vec::with_capacity(targets.len());
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(s.len());
    for t in targets.coords() {
        cand.clear();
        cand.extend(s.coords().iter().enumerate().map(|(i, &p)| (euclid(p, *t), i)));
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < cand.len() && k > 0 {
            cand.select_nth_unstable_by(k, cmp);
        }
        cand.truncate(k);
        cand.sort_by(cmp);
        out.push(cand.iter().map(|c| c.1).collect());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sites(c: &[[f64; 2]]) -> SiteSet {
        SiteSet::new(c.to_vec()).unwrap()
    }

    #[test]
    fn rejects_empty_duplicate_and_nonfinite() {
        assert!(SiteSet::new(vec![]).is_err());
        assert!(SiteSet::new(vec![[0.1, 0.2], [0.1, 0.2]]).is_err());
        assert!(SiteSet::new(vec![[0.0, 0.0], [-0.0, 0.0]]).is_err());
        assert!(SiteSet::new(vec![[f64::NAN, 0.2]]).is_err());
        assert!(sample_uniform_sites(0, 1).is_err());
    }

    #[test]
    fn uniform_sites_are_distinct_contained_and_reproducible() {
        let one = sample_uniform_sites(1, 99).unwrap();
        let c = one.get(0);
        assert!((0.0..=1.0).contains(&c[0]) && (0.0..=1.0).contains(&c[1]));

        let a = sample_uniform_sites(500, 7).unwrap();
        let b = sample_uniform_sites(500, 7).unwrap();
        assert_eq!(a, b);
        let mut min_d = f64::INFINITY;
        for i in 0..a.len() {
            for j in 0..i {
                min_d = min_d.min(a.distance(i, j));
            }
        }
        assert!(min_d > 0.0);
    }

    #[test]
    fn distance_matrix_examples() {
        let d = distance_matrix(&sites(&[[0.0, 0.0], [0.0, 0.3]]));
        assert_eq!(d[(0, 1)], 0.3);
        let d = distance_matrix(&sites(&[[0.0, 0.0], [0.6 * 0.5, 0.8 * 0.5]]));
        assert!((d[(0, 1)] - 0.5).abs() < 1e-15);
        assert_eq!(d[(0, 0)], 0.0);
    }

    #[test]
    fn maxmin_small_cases() {
        assert_eq!(maxmin_ordering(&sites(&[[0.4, 0.4]])), vec![0]);
        // corners: centroid tie resolved to site 0, then its diagonal opposite
        let sq = sites(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
        let o = maxmin_ordering(&sq);
        assert_eq!(o[0], 0);
        assert_eq!(o[1], 3);
        assert_eq!(o, vec![0, 3, 1, 2]);
        let line = sites(&[[0.0, 0.0], [0.5, 0.0], [1.0, 0.0]]);
        assert_eq!(maxmin_ordering(&line), vec![1, 0, 2]);
    }

    #[test]
    fn vecchia_plan_saturates_and_matches_bruteforce() {
        let s = sites(&[[0.0, 0.0], [0.13, 0.0], [0.31, 0.0], [0.62, 0.0], [0.9, 0.0]]);
        let full = build_vecchia_plan(&s, 10).unwrap();
        for (i, nb) in full.neighbors.iter().enumerate() {
            let mut sorted = nb.clone();
            sorted.sort();
            assert_eq!(sorted, (0..i).collect::<Vec<_>>());
        }
        let plan = build_vecchia_plan(&s, 2).unwrap();
        assert!(plan.neighbors[0].is_empty());
        for i in 0..s.len() {
            // brute force: sort all preceding positions by distance
            let here = s.get(plan.ordering[i]);
            let mut all: Vec<(f64, usize)> =
                (0..i).map(|j| (euclid(here, s.get(plan.ordering[j])), j)).collect();
            all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let want: Vec<usize> = all.iter().take(2).map(|x| x.1).collect();
            assert_eq!(plan.neighbors[i], want);
        }
        assert!(build_vecchia_plan(&s, 0).is_err());
    }

    #[test]
    fn knn_examples() {
        let s = sample_uniform_sites(10, 3).unwrap();
        let t = SiteSet::new(vec![s.get(4), [0.5, 0.5]]).unwrap();
        let nn = knn_to_targets(&s, &t, 3).unwrap();
        assert_eq!(nn[0][0], 4);
        let mut all: Vec<(f64, usize)> = (0..10).map(|i| (euclid(s.get(i), [0.5, 0.5]), i)).collect();
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        assert_eq!(nn[1], all.iter().take(3).map(|x| x.1).collect::<Vec<_>>());
        let every = knn_to_targets(&s, &t, 10).unwrap();
        assert_eq!(every[1], all.iter().map(|x| x.1).collect::<Vec<_>>());
        assert!(knn_to_targets(&s, &t, 11).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let s = sample_uniform_sites(17, 11).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"x,y\n"));
        assert_eq!(SiteSet::read_csv(&buf[..]).unwrap(), s);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn ordering_is_permutation(n in 1usize..60, seed in 0u64..1000) {
                let s = sample_uniform_sites(n, seed).unwrap();
                let mut o = maxmin_ordering(&s);
                o.sort();
                prop_assert_eq!(o, (0..n).collect::<Vec<_>>());
            }

            #[test]
            fn conditioning_sets_have_size_min_i_m(n in 1usize..60, m in 1usize..8, seed in 0u64..1000) {
                let s = sample_uniform_sites(n, seed).unwrap();
                let plan = build_vecchia_plan(&s, m).unwrap();
                for (i, nb) in plan.neighbors.iter().enumerate() {
                    prop_assert_eq!(nb.len(), i.min(m));
                    prop_assert!(nb.iter().all(|&j| j < i));
                }
            }

            #[test]
            fn triangle_inequality(seed in 0u64..1000) {
                let s = sample_uniform_sites(12, seed).unwrap();
                let d = distance_matrix(&s);
                for i in 0..12 { for j in 0..12 { for k in 0..12 {
                    prop_assert!(d[(i, k)] <= d[(i, j)] + d[(j, k)] + 1e-15);
                }}}
                prop_assert_eq!(d.transpose(), d);
            }
        }
    }
}
