//! Average-linkage agglomerative clustering on cosine distance (nearest
//! neighbor chain), used to pick weakly correlated query representatives.

use crate::data::Record;
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::par;
use crate::selection::cosine_distance;

use super::query_feature;

/// Condensed upper-triangular distance matrix.
struct Condensed {
    n: usize,
    d: Vec<f64>,
}

impl Condensed {
    fn idx(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        i * self.n - i * (i + 1) / 2 + (j - i - 1)
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.d[self.idx(i, j)]
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.d[k] = v;
    }
}

fn pairwise(points: &[Vec<f64>]) -> Result<Condensed> {
    let n = points.len();
    let rows = par::map_indexed(n, |i| {
        ((i + 1)..n)
            .map(|j| cosine_distance(&points[i], &points[j]))
            .collect::<Result<Vec<f64>>>()
    });
    let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for r in rows {
        d.extend(r?);
    }
    Ok(Condensed { n, d })
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Cluster label (0-based, ordered by smallest member index) for each point.
pub fn average_linkage(points: &[Vec<f64>], n_clusters: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if n_clusters == 0 || n_clusters > n {
        return Err(Error::Config(format!("cannot form {n_clusters} clusters from {n} points")));
    }
    let mut dist = pairwise(points)?;
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut merges: Vec<(usize, usize, f64)> = Vec::with_capacity(n.saturating_sub(1));
    let mut chain: Vec<usize> = Vec::new();

    while merges.len() + 1 < n {
        if chain.is_empty() {
            chain.push(active.iter().position(|&a| a).expect("an active cluster remains"));
        }
        loop {
            let a = *chain.last().expect("non-empty chain");
            let prev = (chain.len() >= 2).then(|| chain[chain.len() - 2]);
            let mut best = prev;
            let mut best_d = prev.map_or(f64::INFINITY, |p| dist.get(a, p));
            for c in 0..n {
                if c == a || !active[c] {
                    continue;
                }
                let d = dist.get(a, c);
                if d < best_d {
                    best_d = d;
                    best = Some(c);
                }
            }
            let b = best.expect("at least two active clusters");
            if Some(b) == prev {
                chain.pop();
                chain.pop();
                // merge a into b
                merges.push((a, b, best_d));
                for c in 0..n {
                    if c == a || c == b || !active[c] {
                        continue;
                    }
                    let (na, nb) = (size[a] as f64, size[b] as f64);
                    let v = (na * dist.get(a, c) + nb * dist.get(b, c)) / (na + nb);
                    dist.set(b, c, v);
                }
                size[b] += size[a];
                active[a] = false;
                break;
            }
            chain.push(b);
        }
    }

    merges.sort_by(|x, y| x.2.total_cmp(&y.2));
    let mut parent: Vec<usize> = (0..n).collect();
    for &(a, b, _) in merges.iter().take(n - n_clusters) {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut labels = vec![usize::MAX; n];
    let mut root_label: Vec<Option<usize>> = vec![None; n];
    let mut next = 0;
    for i in 0..n {
        let r = find(&mut parent, i);
        let l = *root_label[r].get_or_insert_with(|| {
            next += 1;
            next - 1
        });
        labels[i] = l;
    }
    Ok(labels)
}

/// Member with the least average distance to the other members of its cluster.
pub fn medoids(points: &[Vec<f64>], labels: &[usize]) -> Result<Vec<usize>> {
    let n_clusters = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_clusters];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    members
        .iter()
        .map(|m| {
            let mut best = (m[0], f64::INFINITY);
            for &i in m {
                let mut total = 0.0;
                for &j in m {
                    if i != j {
                        total += cosine_distance(&points[i], &points[j])?;
                    }
                }
                let avg = if m.len() > 1 { total / (m.len() - 1) as f64 } else { 0.0 };
                if avg < best.1 {
                    best = (i, avg);
                }
            }
            Ok(best.0)
        })
        .collect()
}

/// One representative candidate per cluster of query features.
pub fn cluster_select(candidates: &[Record], ensemble: &Ensemble, n_clusters: usize) -> Result<Vec<Record>> {
    let features = par::map_slice(candidates, |q| query_feature(ensemble, q))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let labels = average_linkage(&features, n_clusters)?;
    Ok(medoids(&features, &labels)?.into_iter().map(|i| candidates[i].clone()).collect())
}
