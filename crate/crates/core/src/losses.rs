//! K-means chromaticity centroids, centroid matching and the two training losses.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AidError, Result};
use crate::imaging::{ChromaticityRB, IlluminationMap};
use crate::model::Decomposition;
use crate::synth::{read_json, write_json, Scene};
use crate::tensor::{Graph, NodeId, Tensor};

/// Pre-computed illuminant centroids; slot `i` is supervised towards illuminants nearest centroid `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct CentroidSet {
    pub centroids: Vec<ChromaticityRB>,
    pub seed: u64,
    pub dataset_hash: String,
}

#[derive(Serialize, Deserialize)]
struct CentroidFile {
    k: usize,
    seed: u64,
    centroids: Vec<[f64; 2]>,
    dataset_hash: String,
}

impl CentroidSet {
    pub fn new(centroids: Vec<ChromaticityRB>, seed: u64, dataset_hash: impl Into<String>) -> Result<Self> {
        if centroids.is_empty() {
            return Err(AidError::Config("centroid set is empty".into()));
        }
        for (i, a) in centroids.iter().enumerate() {
            if centroids[i + 1..].contains(a) {
                return Err(AidError::Config(format!("centroid {i} is duplicated")));
            }
        }
        Ok(CentroidSet {
            centroids,
            seed,
            dataset_hash: dataset_hash.into(),
        })
    }

    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(
            path,
            &CentroidFile {
                k: self.k(),
                seed: self.seed,
                centroids: self.centroids.iter().map(|c| [c.r, c.b]).collect(),
                dataset_hash: self.dataset_hash.clone(),
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f: CentroidFile = read_json(path)?;
        if f.k != f.centroids.len() {
            return Err(AidError::format(path, format!("k = {} but {} centroids", f.k, f.centroids.len())));
        }
        let cs = f
            .centroids
            .iter()
            .map(|&[r, b]| ChromaticityRB::new(r, b))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| AidError::format(path, e.to_string()))?;
        CentroidSet::new(cs, f.seed, f.dataset_hash).map_err(|e| AidError::format(path, e.to_string()))
    }
}

/// Hex SHA-256 of the little-endian bytes of every `(r, b)` pair, in order.
pub fn chroma_hash(points: &[ChromaticityRB]) -> String {
    let mut h = Sha256::new();
    for p in points {
        h.update(p.r.to_le_bytes());
        h.update(p.b.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn sq_dist(a: &ChromaticityRB, b: &ChromaticityRB) -> f64 {
    let dr = a.r - b.r;
    let db = a.b - b.b;
    dr * dr + db * db
}

/// Index of the nearest centroid (lowest index on ties) and its squared distance.
fn nearest(p: &ChromaticityRB, centroids: &[ChromaticityRB]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Sum of squared distances from each point to its nearest centroid.
pub fn kmeans_objective(points: &[ChromaticityRB], centroids: &[ChromaticityRB]) -> f64 {
    points.iter().map(|p| nearest(p, centroids).1).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansFit {
    pub centroids: Vec<ChromaticityRB>,
    pub assignment: Vec<usize>,
    /// Objective after every assignment step.
    pub objectives: Vec<f64>,
    pub iterations: usize,
}

/// Lloyd's algorithm with k-means++ seeding in the `(r, b)` plane.
pub fn kmeans(points: &[ChromaticityRB], k: usize, seed: u64, max_iters: usize, tol: f64) -> Result<KMeansFit> {
    let mut distinct: Vec<ChromaticityRB> = Vec::new();
    for p in points {
        if !distinct.contains(p) {
            distinct.push(*p);
            if distinct.len() >= k {
                break;
            }
        }
    }
    if k == 0 || distinct.len() < k {
        return Err(AidError::Config(format!(
            "k-means needs at least k = {k} distinct points, found {}",
            distinct.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![points[rng.random_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let mut target = rng.random::<f64>() * total;
        let mut pick = None;
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 {
                pick = Some(i);
                if target < d {
                    break;
                }
                target -= d;
            }
        }
        let c = points[pick.expect("a point at positive distance exists")];
        centroids.push(c);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
    }

    let mut assignment = vec![0; points.len()];
    let mut objectives = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iters {
        iterations += 1;
        let mut objective = 0.0;
        let mut dists = vec![0.0; points.len()];
        for (i, p) in points.iter().enumerate() {
            let (j, d) = nearest(p, &centroids);
            assignment[i] = j;
            dists[i] = d;
            objective += d;
        }
        objectives.push(objective);

        let mut sums = vec![(0.0, 0.0, 0usize); k];
        for (p, &j) in points.iter().zip(&assignment) {
            sums[j].0 += p.r;
            sums[j].1 += p.b;
            sums[j].2 += 1;
        }
        let mut shift: f64 = 0.0;
        for j in 0..k {
            let next = if sums[j].2 > 0 {
                let n = sums[j].2 as f64;
                ChromaticityRB {
                    r: sums[j].0 / n,
                    b: sums[j].1 / n,
                }
            } else {
                let far = (0..points.len())
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .expect("points are non-empty");
                dists[far] = 0.0;
                points[far]
            };
            shift = shift.max(sq_dist(&next, &centroids[j]).sqrt());
            centroids[j] = next;
        }
        if shift < tol {
            break;
        }
    }
    for (i, p) in points.iter().enumerate() {
        assignment[i] = nearest(p, &centroids).0;
    }
    Ok(KMeansFit {
        centroids,
        assignment,
        objectives,
        iterations,
    })
}

pub const KMEANS_MAX_ITERS: usize = 300;
pub const KMEANS_TOL: f64 = 1e-10;

/// Centroids of a chromaticity distribution, tagged with the input hash.
pub fn kmeans_centroids(points: &[ChromaticityRB], k: usize, seed: u64, max_iters: usize, tol: f64) -> Result<CentroidSet> {
    let fit = kmeans(points, k, seed, max_iters, tol)?;
    CentroidSet::new(fit.centroids, seed, chroma_hash(points))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    /// Slot index assigned to each ground-truth illuminant, in input order.
    pub indices: Vec<usize>,
    pub cost: f64,
}

/// Exhaustive minimum-L1 assignment of illuminants to distinct centroids.
///
/// Candidates are visited in lexicographic order and only a strictly smaller
/// cost replaces the incumbent, so ties resolve to the smallest index tuple.
pub fn match_centroids(gt: &[ChromaticityRB], centroids: &CentroidSet) -> Result<MatchResult> {
    let k = centroids.k();
    let n = gt.len();
    if n == 0 || n > k {
        return Err(AidError::Config(format!("cannot match {n} illuminants to {k} centroids")));
    }
    let cost: Vec<Vec<f64>> = gt
        .iter()
        .map(|g| centroids.centroids.iter().map(|c| g.l1(c)).collect())
        .collect();
    let mut best = MatchResult {
        indices: Vec::new(),
        cost: f64::INFINITY,
    };
    let mut current = Vec::with_capacity(n);
    let mut used = vec![false; k];
    search(&cost, &mut current, &mut used, &mut best);
    Ok(best)
}

fn search(cost: &[Vec<f64>], current: &mut Vec<usize>, used: &mut [bool], best: &mut MatchResult) {
    if current.len() == cost.len() {
        let total = current.iter().enumerate().fold(0.0, |acc, (i, &j)| acc + cost[i][j]);
        if total < best.cost {
            best.cost = total;
            best.indices = current.clone();
        }
        return;
    }
    for j in 0..used.len() {
        if !used[j] {
            used[j] = true;
            current.push(j);
            search(cost, current, used, best);
            current.pop();
            used[j] = false;
        }
    }
}

/// Graph nodes of one forward pass that the losses read.
#[derive(Clone, Copy, Debug)]
pub struct LossInputs {
    /// `[HW, K]` per-pixel slot weights.
    pub attn: NodeId,
    /// `[K, 2]` slot chromaticities.
    pub chroma: NodeId,
    /// `[HW, 2]` mixed illumination.
    pub fused: NodeId,
}

#[derive(Clone, Copy, Debug)]
pub struct LossNodes {
    pub mixed: NodeId,
    pub centroid: NodeId,
    pub total: NodeId,
}

/// Mean absolute difference over every pixel and both chromaticity planes.
pub fn mixed_loss_node(g: &mut Graph, fused: NodeId, gt: &IlluminationMap) -> Result<NodeId> {
    let target = g.constant(gt.to_rows());
    let diff = g.sub(fused, target)?;
    let a = g.abs(diff);
    Ok(g.mean(a))
}

/// `Σ_i |ℓ_i − ℓ̂_σ(i)|₁ + mean_x |α_i(x) − α̂_σ(i)(x)|` over matched slots only.
pub fn centroid_loss_node(
    g: &mut Graph,
    attn: NodeId,
    chroma: NodeId,
    scene: &Scene,
    m: &MatchResult,
) -> Result<NodeId> {
    if m.indices.len() != scene.n_illuminants() {
        return Err(AidError::Argument(format!(
            "match covers {} illuminants, scene has {}",
            m.indices.len(),
            scene.n_illuminants()
        )));
    }
    let mut total: Option<NodeId> = None;
    for (i, &slot) in m.indices.iter().enumerate() {
        let gt_c = scene.gt_chromas[i];
        let c = g.select(chroma, 0, slot)?;
        let t = g.constant(Tensor::new(&[2], vec![gt_c.r, gt_c.b])?);
        let d = g.sub(c, t)?;
        let d = g.abs(d);
        let chroma_term = g.sum(d);

        let a = g.select(attn, 1, slot)?;
        let plane = scene.gt_weights.plane(i).to_vec();
        let t = g.constant(Tensor::new(&[plane.len()], plane)?);
        let d = g.sub(a, t)?;
        let d = g.abs(d);
        let weight_term = g.mean(d);

        let term = g.add(chroma_term, weight_term)?;
        total = Some(match total {
            Some(acc) => g.add(acc, term)?,
            None => term,
        });
    }
    total.ok_or_else(|| AidError::Argument("scene has no illuminants".into()))
}

/// `L_mixed + λ · L_centroid`; with `λ = 0` the centroid term is still computed for logging.
pub fn total_loss_node(
    g: &mut Graph,
    inputs: LossInputs,
    scene: &Scene,
    centroids: &CentroidSet,
    lambda: f64,
) -> Result<LossNodes> {
    let m = match_centroids(&scene.gt_chromas, centroids)?;
    let mixed = mixed_loss_node(g, inputs.fused, &scene.gt_map()?)?;
    let centroid = centroid_loss_node(g, inputs.attn, inputs.chroma, scene, &m)?;
    let total = if lambda == 0.0 {
        mixed
    } else {
        let weighted = if lambda == 1.0 { centroid } else { g.scale(centroid, lambda) };
        g.add(mixed, weighted)?
    };
    Ok(LossNodes { mixed, centroid, total })
}

fn decomposition_inputs(g: &mut Graph, decomp: &Decomposition) -> Result<LossInputs> {
    let attn = g.constant(decomp.weights.to_rows()?);
    let chroma = g.constant(Tensor::new(
        &[decomp.chromas.len(), 2],
        decomp.chromas.iter().flat_map(|c| [c.r, c.b]).collect(),
    )?);
    let fused = g.constant(decomp.fused.to_rows());
    Ok(LossInputs { attn, chroma, fused })
}

pub fn mixed_loss(pred: &IlluminationMap, gt: &IlluminationMap) -> Result<f64> {
    if pred.height() != gt.height() || pred.width() != gt.width() {
        return Err(AidError::dim(
            "mixed_loss",
            &[pred.height(), pred.width()],
            &[gt.height(), gt.width()],
        ));
    }
    let mut g = Graph::new();
    let p = g.constant(pred.to_rows());
    let l = mixed_loss_node(&mut g, p, gt)?;
    Ok(g.value(l).item())
}

pub fn centroid_loss(decomp: &Decomposition, scene: &Scene, m: &MatchResult) -> Result<f64> {
    let mut g = Graph::new();
    let inputs = decomposition_inputs(&mut g, decomp)?;
    let l = centroid_loss_node(&mut g, inputs.attn, inputs.chroma, scene, m)?;
    Ok(g.value(l).item())
}

pub fn total_loss(decomp: &Decomposition, scene: &Scene, centroids: &CentroidSet) -> Result<f64> {
    let mut g = Graph::new();
    let inputs = decomposition_inputs(&mut g, decomp)?;
    let nodes = total_loss_node(&mut g, inputs, scene, centroids, 1.0)?;
    Ok(g.value(nodes.total).item())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(r: f64, b: f64) -> ChromaticityRB {
        ChromaticityRB::new(r, b).unwrap()
    }

    fn set(cs: &[(f64, f64)]) -> CentroidSet {
        CentroidSet::new(cs.iter().map(|&(r, b)| c(r, b)).collect(), 0, "test").unwrap()
    }

    #[test]
    fn nearest_centroid_single() {
        let m = match_centroids(&[c(0.5, 0.5)], &set(&[(0.4, 0.4), (1.0, 1.0)])).unwrap();
        assert_eq!(m.indices, vec![0]);
        assert!((m.cost - 0.2).abs() < 1e-12);
    }

    #[test]
    fn greedy_infeasible_pair() {
        let m = match_centroids(&[c(0.5, 0.5), c(0.6, 0.6)], &set(&[(0.55, 0.55), (1.0, 1.0)])).unwrap();
        assert_eq!(m.indices, vec![0, 1]);
        assert!((m.cost - 0.9).abs() < 1e-12);
    }

    #[test]
    fn too_many_illuminants() {
        assert!(matches!(
            match_centroids(&[c(0.5, 0.5), c(0.6, 0.6)], &set(&[(0.5, 0.5)])),
            Err(AidError::Config(_))
        ));
    }

    #[test]
    fn ties_pick_smallest_tuple() {
        let m = match_centroids(&[c(0.5, 0.5)], &set(&[(0.4, 0.5), (0.6, 0.5)])).unwrap();
        assert_eq!(m.indices, vec![0]);
    }

    #[test]
    fn kmeans_recovers_points_and_blobs() {
        let pts = [c(0.4, 0.9), c(0.7, 0.6), c(1.0, 0.4)];
        let fit = kmeans(&pts, 3, 1, 100, 1e-12).unwrap();
        let mut got = fit.centroids.clone();
        got.sort_by(|a, b| a.r.total_cmp(&b.r));
        assert_eq!(got, pts.to_vec());
        assert_eq!(kmeans_objective(&pts, &fit.centroids), 0.0);

        let blob_a = [c(0.40, 0.90), c(0.42, 0.88), c(0.41, 0.92)];
        let blob_b = [c(0.95, 0.40), c(0.97, 0.38), c(0.96, 0.36)];
        let pts: Vec<_> = blob_a.iter().chain(&blob_b).copied().collect();
        let fit = kmeans(&pts, 2, 5, 100, 1e-12).unwrap();
        let mean = |bl: &[ChromaticityRB]| {
            (bl.iter().map(|p| p.r).sum::<f64>() / 3.0, bl.iter().map(|p| p.b).sum::<f64>() / 3.0)
        };
        for (r, b) in [mean(&blob_a), mean(&blob_b)] {
            assert!(fit
                .centroids
                .iter()
                .any(|q| (q.r - r).abs() < 1e-12 && (q.b - b).abs() < 1e-12));
        }
    }

    #[test]
    fn kmeans_rejects_too_few_distinct() {
        let pts = [c(0.5, 0.5), c(0.5, 0.5), c(0.6, 0.6)];
        assert!(matches!(kmeans(&pts, 3, 0, 10, 1e-9), Err(AidError::Config(_))));
    }
}
