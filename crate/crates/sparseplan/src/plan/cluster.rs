use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// A hard partition of N tokens into C clusters with per-cluster means.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSet {
    pub assign: Vec<usize>,
    /// C x D cluster means
    pub means: Tensor,
    pub sizes: Vec<usize>,
}

impl ClusterSet {
    pub fn n_clusters(&self) -> usize {
        self.sizes.len()
    }

    /// Index of the member token closest to each cluster mean
    /// (lowest index on ties). Used as the positional identity of a
    /// pooled cluster token.
    pub fn medoids(&self, tokens: &Tensor) -> Vec<usize> {
        let c = self.n_clusters();
        let mut best = vec![(f64::INFINITY, usize::MAX); c];
        for (i, &a) in self.assign.iter().enumerate() {
            let d = sq_dist(tokens, i, &self.means, a);
            if d < best[a].0 {
                best[a] = (d, i);
            }
        }
        best.into_iter().map(|(_, i)| i).collect()
    }

    /// Pool an arbitrary N x D matrix with this assignment: row c of the
    /// result is the mean of the rows assigned to cluster c.
    pub fn pool(&self, tokens: &Tensor) -> Result<Tensor> {
        if tokens.rows() != self.assign.len() {
            return Err(Error::ShapeMismatch {
                op: "cluster pool",
                left: tokens.shape.clone(),
                right: vec![self.assign.len(), tokens.cols()],
            });
        }
        Ok(means_of(tokens, &self.assign, self.n_clusters()).0)
    }
}

fn sq_dist(a: &Tensor, i: usize, b: &Tensor, j: usize) -> f64 {
    a.row(i)
        .iter()
        .zip(b.row(j))
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

fn means_of(tokens: &Tensor, assign: &[usize], c: usize) -> (Tensor, Vec<usize>) {
    let d = tokens.cols();
    let mut means = Tensor::zeros(&[c, d]);
    let mut sizes = vec![0usize; c];
    for (i, &a) in assign.iter().enumerate() {
        sizes[a] += 1;
        for j in 0..d {
            let v = means.at(a, j) + tokens.at(i, j);
            means.set(a, j, v);
        }
    }
    for a in 0..c {
        if sizes[a] > 0 {
            for j in 0..d {
                let v = means.at(a, j) / sizes[a] as f64;
                means.set(a, j, v);
            }
        }
    }
    (means, sizes)
}

/// Agglomerative average-linkage clustering of the token rows down to C
/// clusters. Cluster labels are ordered by their lowest member index, so
/// the result is deterministic.
pub fn agglomerative_cluster(tokens: &Tensor, c: usize) -> Result<ClusterSet> {
    let n = tokens.rows();
    if c < 1 || c > n {
        return Err(Error::Config(format!(
            "cannot form {c} clusters from {n} tokens"
        )));
    }
    // average-linkage distances maintained with the Lance-Williams update
    let mut active: Vec<usize> = (0..n).collect();
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut dist = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = sq_dist(tokens, i, tokens, j).sqrt();
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    while active.len() > c {
        let mut best = (f64::INFINITY, 0usize, 0usize);
        for (ai, &i) in active.iter().enumerate() {
            for &j in &active[ai + 1..] {
                if dist[i][j] < best.0 {
                    best = (dist[i][j], i, j);
                }
            }
        }
        let (_, i, j) = best;
        let (ni, nj) = (members[i].len() as f64, members[j].len() as f64);
        for &k in &active {
            if k == i || k == j {
                continue;
            }
            let d = (ni * dist[i][k] + nj * dist[j][k]) / (ni + nj);
            dist[i][k] = d;
            dist[k][i] = d;
        }
        let moved = std::mem::take(&mut members[j]);
        members[i].extend(moved);
        active.retain(|&k| k != j);
    }
    let mut assign = vec![0usize; n];
    for (label, &i) in active.iter().enumerate() {
        for &m in &members[i] {
            assign[m] = label;
        }
    }
    let (means, sizes) = means_of(tokens, &assign, c);
    Ok(ClusterSet { assign, means, sizes })
}

/// K-means on the token rows, initialized from anchor centroids so the
/// cluster identities stay aligned with the anchors. Empty clusters steal
/// the point farthest from its current centroid. At most 20 iterations.
pub fn kmeans_anchored(tokens: &Tensor, anchors: &Tensor) -> Result<ClusterSet> {
    let n = tokens.rows();
    let c = anchors.rows();
    if c < 1 || c > n {
        return Err(Error::Config(format!(
            "cannot form {c} clusters from {n} tokens"
        )));
    }
    if anchors.cols() != tokens.cols() {
        return Err(Error::ShapeMismatch {
            op: "kmeans_anchored",
            left: tokens.shape.clone(),
            right: anchors.shape.clone(),
        });
    }
    let mut centroids = anchors.clone();
    let mut assign = vec![0usize; n];
    for _ in 0..20 {
        let mut changed = false;
        for i in 0..n {
            let mut best = (f64::INFINITY, 0usize);
            for a in 0..c {
                let d = sq_dist(tokens, i, &centroids, a);
                if d < best.0 {
                    best = (d, a);
                }
            }
            if assign[i] != best.1 {
                assign[i] = best.1;
                changed = true;
            }
        }
        let (mut means, mut sizes) = means_of(tokens, &assign, c);
        for a in 0..c {
            if sizes[a] > 0 {
                continue;
            }
            // farthest point from its own centroid, among clusters that
            // can spare one
            let mut far = (f64::NEG_INFINITY, usize::MAX);
            for i in 0..n {
                if sizes[assign[i]] <= 1 {
                    continue;
                }
                let d = sq_dist(tokens, i, &means, assign[i]);
                if d > far.0 {
                    far = (d, i);
                }
            }
            if far.1 == usize::MAX {
                return Err(Error::DegenerateInput(
                    "cannot repopulate empty cluster".into(),
                ));
            }
            sizes[assign[far.1]] -= 1;
            assign[far.1] = a;
            sizes[a] = 1;
            changed = true;
            (means, sizes) = means_of(tokens, &assign, c);
        }
        centroids = means;
        if !changed {
            break;
        }
    }
    let (means, sizes) = means_of(tokens, &assign, c);
    Ok(ClusterSet { assign, means, sizes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_blobs() -> Tensor {
        // 6 points, two tight blobs around (0,0) and (10,10)
        Tensor::from_rows(&[
            vec![0.0, 0.1],
            vec![0.1, 0.0],
            vec![-0.1, -0.1],
            vec![10.0, 10.1],
            vec![10.1, 9.9],
            vec![9.9, 10.0],
        ])
    }

    fn sse(tokens: &Tensor, cs: &ClusterSet) -> f64 {
        cs.assign
            .iter()
            .enumerate()
            .map(|(i, &a)| sq_dist(tokens, i, &cs.means, a))
            .sum()
    }

    #[test]
    fn agglomerative_separates_two_blobs() {
        let t = two_blobs();
        let cs = agglomerative_cluster(&t, 2).unwrap();
        assert_eq!(cs.assign[0], cs.assign[1]);
        assert_eq!(cs.assign[1], cs.assign[2]);
        assert_eq!(cs.assign[3], cs.assign[4]);
        assert_eq!(cs.assign[4], cs.assign[5]);
        assert_ne!(cs.assign[0], cs.assign[3]);
        assert_eq!(cs.sizes, vec![3, 3]);
        // SSE oracle: per-blob scatter around the blob mean
        let oracle: f64 = {
            let mut total = 0.0;
            for blob in [[0, 1, 2], [3, 4, 5]] {
                let d = t.cols();
                let mut mean = vec![0.0; d];
                for &i in &blob {
                    for j in 0..d {
                        mean[j] += t.at(i, j) / 3.0;
                    }
                }
                for &i in &blob {
                    for j in 0..d {
                        total += (t.at(i, j) - mean[j]).powi(2);
                    }
                }
            }
            total
        };
        assert!((sse(&t, &cs) - oracle).abs() < 1e-12);
    }

    #[test]
    fn c_equals_n_is_singletons() {
        let t = two_blobs();
        let cs = agglomerative_cluster(&t, 6).unwrap();
        assert_eq!(cs.sizes, vec![1; 6]);
        assert!(sse(&t, &cs) < 1e-12);
    }

    #[test]
    fn c_one_is_global_mean() {
        let t = two_blobs();
        let cs = agglomerative_cluster(&t, 1).unwrap();
        assert_eq!(cs.sizes, vec![6]);
        for j in 0..2 {
            let mean: f64 = (0..6).map(|i| t.at(i, j)).sum::<f64>() / 6.0;
            assert!((cs.means.at(0, j) - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_cluster_counts_error() {
        let t = two_blobs();
        assert!(agglomerative_cluster(&t, 0).is_err());
        assert!(agglomerative_cluster(&t, 7).is_err());
    }

    #[test]
    fn kmeans_anchors_fix_cluster_identity() {
        let t = two_blobs();
        // anchor 0 near the far blob, anchor 1 near the origin blob
        let anchors = Tensor::from_rows(&[vec![9.0, 9.0], vec![1.0, 1.0]]);
        let cs = kmeans_anchored(&t, &anchors).unwrap();
        assert_eq!(&cs.assign[..3], &[1, 1, 1]);
        assert_eq!(&cs.assign[3..], &[0, 0, 0]);
    }

    #[test]
    fn kmeans_repopulates_empty_cluster() {
        let t = two_blobs();
        // both anchors near one blob: the initial assignment leaves one
        // cluster empty only if every point prefers a single anchor
        let anchors = Tensor::from_rows(&[vec![100.0, 100.0], vec![0.0, 0.0]]);
        let cs = kmeans_anchored(&t, &anchors).unwrap();
        assert!(cs.sizes.iter().all(|&s| s > 0));
    }

    #[test]
    fn pooling_conserves_weighted_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = Tensor::randn(&mut rng, &[8, 3], 1.0);
        let cs = agglomerative_cluster(&t, 3).unwrap();
        let pooled = cs.pool(&t).unwrap();
        for j in 0..3 {
            let total: f64 = (0..8).map(|i| t.at(i, j)).sum();
            let weighted: f64 = (0..3)
                .map(|a| pooled.at(a, j) * cs.sizes[a] as f64)
                .sum();
            assert!((total - weighted).abs() < 1e-10);
        }
    }

    #[test]
    fn medoids_are_members_of_their_cluster() {
        let t = two_blobs();
        let cs = agglomerative_cluster(&t, 2).unwrap();
        let med = cs.medoids(&t);
        for (a, &m) in med.iter().enumerate() {
            assert_eq!(cs.assign[m], a);
        }
    }
}
