use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{weighted_mean, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    /// Spherical k-means on update directions; zero vectors sit at distance
    /// one from everything.
    #[default]
    Cosine,
    Euclidean,
}

impl Distance {
    fn between(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Distance::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            // Points and centers are kept unit length (or zero).
            Distance::Cosine => 1.0 - a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>(),
        }
    }
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| x / n).collect()
    }
}

fn nearest(point: &[f64], centers: &[Vec<f64>], distance: Distance) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, center) in centers.iter().enumerate() {
        let d = distance.between(point, center);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

/// Relabels clusters in order of first appearance.
fn canonical(assignment: &[usize]) -> Vec<usize> {
    let mut map = Vec::<(usize, usize)>::new();
    assignment
        .iter()
        .map(|a| match map.iter().find(|(old, _)| old == a) {
            Some((_, new)) => *new,
            None => {
                let new = map.len();
                map.push((*a, new));
                new
            }
        })
        .collect()
}

/// k-means over `points`. The first center is drawn from `rng`, the rest
/// are seeded farthest-first with ties going to the lowest index. Labels
/// are canonical: the cluster of point 0 is 0, the next new cluster is 1,
/// and so on.
pub fn cluster_assign<R: Rng + ?Sized>(
    points: &[&ParamVector],
    k: usize,
    distance: Distance,
    iterations: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let n = points.len();
    if n == 0 {
        return Err(Error::Empty("clustering input"));
    }
    if k == 0 {
        return Err(Error::invalid("clusters", "must be positive"));
    }
    if points.iter().any(|p| !p.is_compatible(points[0])) {
        return Err(Error::LayoutMismatch("cluster_assign"));
    }
    if k == 1 {
        return Ok(vec![0; n]);
    }
    if k >= n {
        return Ok((0..n).collect());
    }
    let data: Vec<Vec<f64>> = match distance {
        Distance::Cosine => points.iter().map(|p| normalized(p.values())).collect(),
        Distance::Euclidean => points.iter().map(|p| p.values().to_vec()).collect(),
    };

    let mut chosen = vec![rng.random_range(0..n)];
    while chosen.len() < k {
        let mut best = None;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in data.iter().enumerate() {
            if chosen.contains(&i) {
                continue;
            }
            let d = chosen.iter().map(|&c| distance.between(p, &data[c])).fold(f64::INFINITY, f64::min);
            if d > best_d {
                best = Some(i);
                best_d = d;
            }
        }
        chosen.push(best.expect("k < n leaves unchosen points"));
    }
    let mut centers: Vec<Vec<f64>> = chosen.iter().map(|&c| data[c].clone()).collect();

    let dim = data[0].len();
    let mut assignment: Vec<usize> = data.iter().map(|p| nearest(p, &centers, distance)).collect();
    for _ in 0..iterations {
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> =
                data.iter().zip(&assignment).filter(|(_, a)| **a == c).map(|(p, _)| p).collect();
            if members.is_empty() {
                continue;
            }
            let mut mean = vec![0.0; dim];
            for m in &members {
                mean.iter_mut().zip(m.iter()).for_each(|(s, x)| *s += x);
            }
            mean.iter_mut().for_each(|s| *s /= members.len() as f64);
            *center = match distance {
                Distance::Cosine => normalized(&mean),
                Distance::Euclidean => mean,
            };
        }
        let next: Vec<usize> = data.iter().map(|p| nearest(p, &centers, distance)).collect();
        if next == assignment {
            break;
        }
        assignment = next;
    }
    Ok(canonical(&assignment))
}

/// One participant in clustered aggregation: its update direction is used
/// for grouping, its model for averaging.
#[derive(Debug, Clone, Copy)]
pub struct ClusterMember<'a> {
    pub delta: &'a ParamVector,
    pub model: &'a ParamVector,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub assignment: Vec<usize>,
    /// Weighted mean of each cluster's models; `None` when every member of
    /// the cluster carries zero weight.
    pub models: Vec<Option<ParamVector>>,
}

impl Clustering {
    /// Model for member `i`, if its cluster produced one.
    pub fn model_for(&self, i: usize) -> Option<&ParamVector> {
        self.models[self.assignment[i]].as_ref()
    }
}

pub fn cluster_aggregate<R: Rng + ?Sized>(
    members: &[ClusterMember<'_>],
    k: usize,
    distance: Distance,
    iterations: usize,
    rng: &mut R,
) -> Result<Clustering> {
    let deltas: Vec<&ParamVector> = members.iter().map(|m| m.delta).collect();
    let assignment = cluster_assign(&deltas, k, distance, iterations, rng)?;
    let clusters = assignment.iter().max().map_or(0, |m| m + 1);
    let models = (0..clusters)
        .map(|c| {
            let items: Vec<(&ParamVector, f64)> = members
                .iter()
                .zip(&assignment)
                .filter(|(m, a)| **a == c && m.weight > 0.0)
                .map(|(m, _)| (m.model, m.weight))
                .collect();
            if items.is_empty() {
                Ok(None)
            } else {
                weighted_mean(&items).map(Some)
            }
        })
        .collect::<Result<_>>()?;
    Ok(Clustering { assignment, models })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    fn pts(raw: &[[f64; 2]]) -> Vec<ParamVector> {
        raw.iter().map(|p| ParamVector::flat(p.to_vec())).collect()
    }

    #[test]
    fn two_obvious_groups_euclidean() {
        let p = pts(&[[0.0, 0.0], [0.1, 0.0], [10.0, 10.0], [10.1, 10.0]]);
        let refs: Vec<&ParamVector> = p.iter().collect();
        for seed in 0..10 {
            let mut rng = stream(seed, Purpose::Server, &[]);
            let a = cluster_assign(&refs, 2, Distance::Euclidean, 50, &mut rng).unwrap();
            assert_eq!(a, vec![0, 0, 1, 1]);
        }
    }

    #[test]
    fn opposite_directions_cosine() {
        let p = pts(&[[1.0, 0.1], [2.0, -0.1], [-1.0, 0.0], [-3.0, 0.2]]);
        let refs: Vec<&ParamVector> = p.iter().collect();
        let mut rng = stream(4, Purpose::Server, &[]);
        assert_eq!(cluster_assign(&refs, 2, Distance::Cosine, 50, &mut rng).unwrap(), vec![0, 0, 1, 1]);
    }

    #[test]
    fn degenerate_k() {
        let p = pts(&[[0.0, 0.0], [1.0, 0.0], [5.0, 5.0]]);
        let refs: Vec<&ParamVector> = p.iter().collect();
        let mut rng = stream(0, Purpose::Server, &[]);
        assert_eq!(cluster_assign(&refs, 1, Distance::Cosine, 50, &mut rng).unwrap(), vec![0, 0, 0]);
        assert_eq!(cluster_assign(&refs, 3, Distance::Cosine, 50, &mut rng).unwrap(), vec![0, 1, 2]);
        assert_eq!(cluster_assign(&refs, 9, Distance::Cosine, 50, &mut rng).unwrap(), vec![0, 1, 2]);
        assert!(cluster_assign(&refs, 0, Distance::Cosine, 50, &mut rng).is_err());
        assert!(cluster_assign(&[], 1, Distance::Cosine, 50, &mut rng).is_err());
    }

    #[test]
    fn aggregate_per_cluster() {
        let p = pts(&[[0.0, 0.0], [0.2, 0.0], [10.0, 10.0], [10.2, 10.0]]);
        let weights = [1.0, 3.0, 0.0, 0.0];
        let members: Vec<ClusterMember> =
            p.iter().zip(weights).map(|(v, w)| ClusterMember { delta: v, model: v, weight: w }).collect();
        let mut rng = stream(1, Purpose::Server, &[]);
        let c = cluster_aggregate(&members, 2, Distance::Euclidean, 50, &mut rng).unwrap();
        assert_eq!(c.assignment, vec![0, 0, 1, 1]);
        assert!((c.models[0].as_ref().unwrap().values()[0] - 0.15).abs() < 1e-12);
        assert!(c.models[1].is_none());
        assert!(c.model_for(3).is_none());

        let every: Vec<ClusterMember> = p.iter().map(|v| ClusterMember { delta: v, model: v, weight: 1.0 }).collect();
        let own = cluster_aggregate(&every, 4, Distance::Cosine, 50, &mut rng).unwrap();
        for (i, v) in p.iter().enumerate() {
            assert_eq!(own.model_for(i).unwrap(), v);
        }
    }
}
