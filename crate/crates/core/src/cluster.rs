//! Per-document descriptors from per-question traces, two-cluster KMeans and
//! the member/non-member decision.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::attack::OptimizationTrace;
use crate::data::DocId;
use crate::error::{Error, Result};
use crate::rng::{Seed, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Feature {
    /// Parameter (or input) distance travelled.
    Delta,
    /// Optimization steps taken.
    Steps,
    /// Mean utility over the optimization.
    Utility,
    /// Answer loss under the target.
    Loss,
    /// Gradient norm under the target.
    GradNorm,
    /// Utility of the target's own answer.
    Score,
}

impl Feature {
    pub const ALL: [Feature; 6] =
        [Feature::Delta, Feature::Steps, Feature::Utility, Feature::Loss, Feature::GradNorm, Feature::Score];

    pub fn of(self, t: &OptimizationTrace) -> f64 {
        match self {
            Feature::Delta => t.delta,
            Feature::Steps => t.steps as f64,
            Feature::Utility => t.utility(),
            Feature::Loss => t.initial_loss,
            Feature::GradNorm => t.initial_grad_norm,
            Feature::Score => t.initial_utility(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Feature::Delta => "delta",
            Feature::Steps => "steps",
            Feature::Utility => "utility",
            Feature::Loss => "loss",
            Feature::GradNorm => "grad-norm",
            Feature::Score => "score",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Feature::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::invalid(alloc::format!("unknown feature `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    Avg,
    Min,
    Max,
    Med,
}

impl Aggregator {
    pub const ALL: [Aggregator; 4] = [Aggregator::Avg, Aggregator::Min, Aggregator::Max, Aggregator::Med];

    pub fn name(self) -> &'static str {
        match self {
            Aggregator::Avg => "avg",
            Aggregator::Min => "min",
            Aggregator::Max => "max",
            Aggregator::Med => "med",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Aggregator::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::invalid(alloc::format!("unknown aggregator `{s}`")))
    }

    fn apply(self, sorted: &[f64]) -> f64 {
        let n = sorted.len();
        match self {
            Aggregator::Avg => sorted.iter().sum::<f64>() / n as f64,
            Aggregator::Min => sorted[0],
            Aggregator::Max => sorted[n - 1],
            Aggregator::Med if n % 2 == 1 => sorted[n / 2],
            Aggregator::Med => 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]),
        }
    }
}

/// Aggregates `values` with each of `aggs`, in order.
pub fn aggregate(values: &[f64], aggs: &[Aggregator]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::Empty("values to aggregate"));
    }
    if aggs.is_empty() {
        return Err(Error::Empty("aggregator set"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(aggs.iter().map(|a| a.apply(&sorted)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    #[default]
    ZScore,
    MinMax,
}

/// Which per-question features enter the descriptor and how they are
/// aggregated. Columns are feature-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureSelection {
    pub features: Vec<Feature>,
    pub aggregators: Vec<Aggregator>,
    pub normalization: Normalization,
}

impl Default for FeatureSelection {
    fn default() -> Self {
        FeatureSelection {
            features: vec![Feature::Delta, Feature::Steps, Feature::Utility],
            aggregators: Aggregator::ALL.to_vec(),
            normalization: Normalization::ZScore,
        }
    }
}

impl FeatureSelection {
    pub fn new(features: &[Feature], aggregators: &[Aggregator]) -> Self {
        FeatureSelection { features: features.to_vec(), aggregators: aggregators.to_vec(), ..Self::default() }
    }

    /// Parses `agg:feature[,agg:feature..]`, e.g. `avg:delta,max:steps`.
    /// Every named aggregator is applied to every named feature.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut sel = FeatureSelection { features: Vec::new(), aggregators: Vec::new(), ..Self::default() };
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (a, f) = part
                .split_once(':')
                .ok_or_else(|| Error::invalid(alloc::format!("expected agg:feature, got `{part}`")))?;
            let aggs: Vec<Aggregator> =
                if a == "all" { Aggregator::ALL.to_vec() } else { vec![Aggregator::parse(a)?] };
            let f = Feature::parse(f)?;
            if !sel.features.contains(&f) {
                sel.features.push(f);
            }
            for a in aggs {
                if !sel.aggregators.contains(&a) {
                    sel.aggregators.push(a);
                }
            }
        }
        sel.validate()?;
        Ok(sel)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() || self.aggregators.is_empty() {
            return Err(Error::Empty("feature selection"));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.features.len() * self.aggregators.len()
    }

    pub fn column(&self, feature: Feature, agg: Aggregator) -> Option<usize> {
        let f = self.features.iter().position(|&x| x == feature)?;
        let a = self.aggregators.iter().position(|&x| x == agg)?;
        Some(f * self.aggregators.len() + a)
    }

    pub fn column_names(&self) -> Vec<String> {
        self.features
            .iter()
            .flat_map(|f| self.aggregators.iter().map(move |a| alloc::format!("{}({})", a.name(), f.name())))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDescriptor {
    pub doc_id: DocId,
    /// Aggregated features before normalization.
    pub raw: Vec<f64>,
    pub vector: Vec<f64>,
    /// Traces dropped because their optimization failed.
    pub failed_traces: usize,
}

/// Aggregates each document's successful traces and normalizes every column
/// over the given documents.
pub fn build_descriptors(
    docs: &[(DocId, Vec<OptimizationTrace>)],
    selection: &FeatureSelection,
) -> Result<Vec<FeatureDescriptor>> {
    selection.validate()?;
    let mut out = Vec::with_capacity(docs.len());
    for (id, traces) in docs {
        let ok: Vec<&OptimizationTrace> = traces.iter().filter(|t| !t.failed).collect();
        if ok.is_empty() {
            return Err(Error::DegenerateInput(alloc::format!("document {} has no successful trace", id.0)));
        }
        let failed = traces.len() - ok.len();
        if failed > 0 {
            log::warn!("document {}: {failed} failed trace(s) excluded", id.0);
        }
        let mut raw = Vec::with_capacity(selection.width());
        for &f in &selection.features {
            let vals: Vec<f64> = ok.iter().map(|t| f.of(t)).collect();
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericFailure(alloc::format!("feature {} of document {}", f.name(), id.0)));
            }
            raw.extend(aggregate(&vals, &selection.aggregators)?);
        }
        out.push(FeatureDescriptor { doc_id: *id, vector: raw.clone(), raw, failed_traces: failed });
    }
    normalize(&mut out, selection.normalization);
    Ok(out)
}

fn normalize(ds: &mut [FeatureDescriptor], how: Normalization) {
    let Some(width) = ds.first().map(|d| d.raw.len()) else { return };
    let n = ds.len() as f64;
    for c in 0..width {
        let col = || ds.iter().map(|d| d.raw[c]);
        let (shift, scale) = match how {
            Normalization::ZScore => {
                let mean = col().sum::<f64>() / n;
                let var = col().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                (mean, libm::sqrt(var))
            }
            Normalization::MinMax => {
                let lo = col().fold(f64::INFINITY, f64::min);
                let hi = col().fold(f64::NEG_INFINITY, f64::max);
                (lo, hi - lo)
            }
        };
        for d in ds.iter_mut() {
            d.vector[c] = if scale > 0.0 { (d.raw[c] - shift) / scale } else { 0.0 };
        }
    }
}

/// One KMeans restart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Restart {
    pub assignments: Vec<usize>,
    pub centroids: [Vec<f64>; 2],
    /// Within-cluster sum of squares after each Lloyd iteration.
    pub inertia_history: Vec<f64>,
}

impl Restart {
    pub fn inertia(&self) -> f64 {
        *self.inertia_history.last().expect("at least one iteration")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    /// Cluster of each point in the lowest-inertia restart.
    pub assignments: Vec<usize>,
    pub centroids: [Vec<f64>; 2],
    pub inertia: f64,
    pub restarts: Vec<Restart>,
}

pub const KMEANS_RESTARTS: u64 = 5;
const MAX_ITERATIONS: usize = 300;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>; 2]) -> (usize, f64) {
    let d0 = sq_dist(p, &centroids[0]);
    let d1 = sq_dist(p, &centroids[1]);
    if d1 < d0 {
        (1, d1)
    } else {
        (0, d0)
    }
}

fn lloyd(points: &[Vec<f64>], stream: &mut Stream) -> Restart {
    let n = points.len();
    let first = stream.index(n);
    let d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[first])).collect();
    let total: f64 = d2.iter().sum();
    let mut u = stream.uniform() * total;
    let mut second = n - 1;
    for (i, &d) in d2.iter().enumerate() {
        if d > 0.0 && u < d {
            second = i;
            break;
        }
        u -= d;
    }
    if d2[second] == 0.0 {
        second = d2.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).expect("non-empty");
    }
    let mut centroids = [points[first].clone(), points[second].clone()];
    let mut assignments = vec![usize::MAX; n];
    let mut history = Vec::new();
    for _ in 0..MAX_ITERATIONS {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let (c, _) = nearest(p, &centroids);
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
        }
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points.iter().zip(&assignments).filter(|(_, &a)| a == c).map(|(p, _)| p).collect();
            if members.is_empty() {
                continue;
            }
            for (k, v) in centroid.iter_mut().enumerate() {
                *v = members.iter().map(|p| p[k]).sum::<f64>() / members.len() as f64;
            }
        }
        history.push(points.iter().zip(&assignments).map(|(p, &a)| sq_dist(p, &centroids[a])).sum());
        if !changed {
            break;
        }
    }
    if hartigan(points, &mut assignments, &mut centroids) {
        history.push(points.iter().zip(&assignments).map(|(p, &a)| sq_dist(p, &centroids[a])).sum());
    }
    Restart { assignments, centroids, inertia_history: history }
}

/// Single-point transfers that lower the inertia, applied until none is
/// left. Lloyd fixed points can still admit such moves.
fn hartigan(points: &[Vec<f64>], assignments: &mut [usize], centroids: &mut [Vec<f64>; 2]) -> bool {
    let mut sizes = [0usize; 2];
    for &a in assignments.iter() {
        sizes[a] += 1;
    }
    let mut moved_any = false;
    for _ in 0..MAX_ITERATIONS {
        let mut moved = false;
        for (i, p) in points.iter().enumerate() {
            let from = assignments[i];
            let to = 1 - from;
            if sizes[from] < 2 {
                continue;
            }
            let (nf, nt) = (sizes[from] as f64, sizes[to] as f64);
            let gain = nf / (nf - 1.0) * sq_dist(p, &centroids[from]) - nt / (nt + 1.0) * sq_dist(p, &centroids[to]);
            if gain <= 1e-12 * (1.0 + sq_dist(&centroids[0], &centroids[1])) {
                continue;
            }
            for (k, &x) in p.iter().enumerate() {
                centroids[from][k] = (centroids[from][k] * nf - x) / (nf - 1.0);
                centroids[to][k] = (centroids[to][k] * nt + x) / (nt + 1.0);
            }
            sizes[from] -= 1;
            sizes[to] += 1;
            assignments[i] = to;
            moved = true;
        }
        if !moved {
            break;
        }
        moved_any = true;
    }
    if moved_any {
        // Recompute exactly to shed drift from the incremental updates.
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points.iter().zip(assignments.iter()).filter(|(_, &a)| a == c).map(|(p, _)| p).collect();
            for (k, v) in centroid.iter_mut().enumerate() {
                *v = members.iter().map(|p| p[k]).sum::<f64>() / members.len() as f64;
            }
        }
    }
    moved_any
}

/// Two-cluster KMeans: k-means++ seeding, Lloyd iterations until the
/// assignment is stable, best of [`KMEANS_RESTARTS`] seeded restarts.
pub fn kmeans2(points: &[Vec<f64>], seed: Seed) -> Result<ClusterResult> {
    if points.len() < 2 {
        return Err(Error::DegenerateInput("KMeans needs at least two points".into()));
    }
    let dim = points[0].len();
    if dim == 0 || points.iter().any(|p| p.len() != dim) {
        return Err(Error::shape("kmeans2", "points must share one non-zero dimension"));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NumericFailure("non-finite descriptor".into()));
    }
    if points.iter().all(|p| p == &points[0]) {
        return Err(Error::DegenerateInput("all descriptors are identical".into()));
    }
    let restarts: Vec<Restart> =
        (0..KMEANS_RESTARTS).map(|r| lloyd(points, &mut Stream::fork(seed, "kmeans", r))).collect();
    let best = restarts
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.inertia().total_cmp(&b.1.inertia()).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .expect("restarts");
    let b = &restarts[best];
    let mut result = ClusterResult {
        assignments: b.assignments.clone(),
        centroids: b.centroids.clone(),
        inertia: b.inertia(),
        restarts,
    };
    if dim == 1 {
        let (assignments, centroids, inertia) = best_split_1d(points);
        if inertia < result.inertia {
            // Keep the cluster labels of the best restart where possible.
            let flip = sq_dist(&centroids[0], &result.centroids[1]) < sq_dist(&centroids[0], &result.centroids[0]);
            let (assignments, centroids) = if flip {
                (assignments.into_iter().map(|a| 1 - a).collect(), [centroids[1].clone(), centroids[0].clone()])
            } else {
                (assignments, centroids)
            };
            result.assignments = assignments;
            result.centroids = centroids;
            result.inertia = inertia;
        }
    }
    Ok(result)
}

/// The optimal two-cluster partition of scalars is a split of the sorted
/// values; this tries every one.
fn best_split_1d(points: &[Vec<f64>]) -> (Vec<usize>, [Vec<f64>; 2], f64) {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a][0].total_cmp(&points[b][0]).then(a.cmp(&b)));
    let xs: Vec<f64> = order.iter().map(|&i| points[i][0]).collect();
    let sse = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (m, v.iter().map(|x| (x - m) * (x - m)).sum::<f64>())
    };
    let mut best = (1, f64::INFINITY, 0.0, 0.0);
    for cut in 1..xs.len() {
        if xs[cut - 1] == xs[cut] {
            continue;
        }
        let ((ml, sl), (mr, sr)) = (sse(&xs[..cut]), sse(&xs[cut..]));
        if sl + sr < best.1 {
            best = (cut, sl + sr, ml, mr);
        }
    }
    let mut assignments = vec![0; points.len()];
    for &i in &order[best.0..] {
        assignments[i] = 1;
    }
    (assignments, [vec![best.2], vec![best.3]], best.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    LowerIsMember,
    HigherIsMember,
}

/// The descriptor column that tells the member cluster apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectionFeature {
    pub feature: Feature,
    pub aggregator: Aggregator,
    pub direction: Direction,
}

impl DirectionFeature {
    pub const DELTA: DirectionFeature =
        DirectionFeature { feature: Feature::Delta, aggregator: Aggregator::Avg, direction: Direction::LowerIsMember };

    pub fn natural(feature: Feature) -> Self {
        let direction = match feature {
            Feature::Utility | Feature::Score => Direction::HigherIsMember,
            _ => Direction::LowerIsMember,
        };
        DirectionFeature { feature, aggregator: Aggregator::Avg, direction }
    }

    /// The natural direction of the first selected feature, preferring Δ.
    pub fn for_selection(sel: &FeatureSelection) -> Self {
        let f = if sel.features.contains(&Feature::Delta) { Feature::Delta } else { sel.features[0] };
        let agg = if sel.aggregators.contains(&Aggregator::Avg) { Aggregator::Avg } else { sel.aggregators[0] };
        DirectionFeature { aggregator: agg, ..Self::natural(f) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Membership {
    pub member_cluster: usize,
    pub is_member: Vec<bool>,
    /// Negative distance to the member centroid; higher is more member-like.
    pub scores: Vec<f64>,
}

/// Labels the cluster whose mean direction column indicates membership as
/// the member cluster.
pub fn decide_membership(
    assignments: &[usize],
    centroids: &[Vec<f64>; 2],
    descriptors: &[FeatureDescriptor],
    selection: &FeatureSelection,
    direction: DirectionFeature,
) -> Result<Membership> {
    if assignments.len() != descriptors.len() {
        return Err(Error::shape("decide_membership", "one assignment per descriptor"));
    }
    let col = selection.column(direction.feature, direction.aggregator).ok_or_else(|| {
        Error::invalid(alloc::format!(
            "direction column {}({}) not in descriptor",
            direction.aggregator.name(),
            direction.feature.name()
        ))
    })?;
    let mut sum = [0.0; 2];
    let mut cnt = [0usize; 2];
    for (d, &a) in descriptors.iter().zip(assignments) {
        sum[a] += d.vector[col];
        cnt[a] += 1;
    }
    let mean = |c: usize| if cnt[c] == 0 { f64::NAN } else { sum[c] / cnt[c] as f64 };
    let (m0, m1) = (mean(0), mean(1));
    let member_cluster = if m0 == m1 || m0.is_nan() && m1.is_nan() {
        log::warn!("direction feature ties across clusters; cluster 0 taken as member");
        0
    } else if m1.is_nan() {
        0
    } else if m0.is_nan() {
        1
    } else {
        match direction.direction {
            Direction::LowerIsMember => usize::from(m1 < m0),
            Direction::HigherIsMember => usize::from(m1 > m0),
        }
    };
    let centre = &centroids[member_cluster];
    Ok(Membership {
        member_cluster,
        is_member: assignments.iter().map(|&a| a == member_cluster).collect(),
        scores: descriptors.iter().map(|d| -libm::sqrt(sq_dist(&d.vector, centre))).collect(),
    })
}

/// Clusters the descriptors and labels them.
pub fn cluster_and_decide(
    descriptors: &[FeatureDescriptor],
    selection: &FeatureSelection,
    direction: DirectionFeature,
    seed: Seed,
) -> Result<(ClusterResult, Membership)> {
    let points: Vec<Vec<f64>> = descriptors.iter().map(|d| d.vector.clone()).collect();
    let cr = kmeans2(&points, seed)?;
    let m = decide_membership(&cr.assignments, &cr.centroids, descriptors, selection, direction)?;
    Ok((cr, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn trace(delta: f64, steps: usize, u: f64) -> OptimizationTrace {
        OptimizationTrace {
            delta,
            steps,
            utilities: vec![u],
            initial_loss: 1.0,
            final_loss: 0.5,
            initial_grad_norm: 1.0,
            failed: false,
        }
    }

    #[test]
    fn aggregate_examples() {
        let all = Aggregator::ALL;
        assert_eq!(aggregate(&[1.0, 2.0, 3.0], &all).unwrap(), vec![2.0, 1.0, 3.0, 2.0]);
        assert_eq!(aggregate(&[4.0, 1.0, 3.0, 2.0], &[Aggregator::Med]).unwrap(), vec![2.5]);
        assert_eq!(aggregate(&[7.0], &all).unwrap(), vec![7.0; 4]);
        assert!(aggregate(&[], &all).is_err());
    }

    #[test]
    fn descriptor_width_and_normalization() {
        let docs: Vec<(DocId, Vec<OptimizationTrace>)> = (0..6)
            .map(|i| (DocId(i), (0..=i as usize).map(|k| trace(i as f64 + k as f64 * 0.1, 3, 0.5)).collect()))
            .collect();
        let sel = FeatureSelection::default();
        let ds = build_descriptors(&docs, &sel).unwrap();
        assert_eq!(ds[0].vector.len(), 12);
        for c in 0..12 {
            let col: Vec<f64> = ds.iter().map(|d| d.vector[c]).collect();
            let mean = col.iter().sum::<f64>() / 6.0;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 6.0;
            assert!(mean.abs() < 1e-9);
            // steps and utility are constant
            if c < 4 {
                assert!((var.sqrt() - 1.0).abs() < 1e-9);
            } else {
                assert!(col.iter().all(|&v| v == 0.0));
            }
        }
        let one = build_descriptors(&docs, &FeatureSelection::parse("avg:delta").unwrap()).unwrap();
        assert_eq!(one[0].vector.len(), 1);
    }

    #[test]
    fn failed_traces_are_dropped_but_all_failed_is_an_error() {
        let mut bad = trace(f64::NAN, 1, 0.0);
        bad.failed = true;
        let docs = vec![(DocId(0), vec![trace(1.0, 1, 1.0), bad.clone()]), (DocId(1), vec![trace(2.0, 1, 1.0)])];
        let ds = build_descriptors(&docs, &FeatureSelection::default()).unwrap();
        assert_eq!(ds[0].failed_traces, 1);
        let docs = vec![(DocId(0), vec![bad]), (DocId(1), vec![trace(2.0, 1, 1.0)])];
        assert!(build_descriptors(&docs, &FeatureSelection::default()).is_err());
    }

    #[test]
    fn selection_parsing() {
        let s = FeatureSelection::parse("avg:delta, max:steps").unwrap();
        assert_eq!(s.features, vec![Feature::Delta, Feature::Steps]);
        assert_eq!(s.aggregators, vec![Aggregator::Avg, Aggregator::Max]);
        assert_eq!(FeatureSelection::parse("all:delta").unwrap().width(), 4);
        assert!(FeatureSelection::parse("avg:nothing").is_err());
        assert!(FeatureSelection::parse("").is_err());
    }

    fn pts(xs: &[f64]) -> Vec<Vec<f64>> {
        xs.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn kmeans_small_example_and_permutation() {
        let r = kmeans2(&pts(&[0.0, 0.1, 5.0, 5.1]), Seed(0)).unwrap();
        assert_eq!(r.assignments[0], r.assignments[1]);
        assert_eq!(r.assignments[2], r.assignments[3]);
        assert_ne!(r.assignments[0], r.assignments[2]);
        let p = kmeans2(&pts(&[5.1, 0.1, 5.0, 0.0]), Seed(0)).unwrap();
        assert_eq!(p.assignments[0], p.assignments[2]);
        assert_eq!(p.assignments[1], p.assignments[3]);
        assert_ne!(p.assignments[0], p.assignments[1]);
        for rs in &r.restarts {
            assert!(rs.inertia() <= rs.inertia_history[0]);
        }
    }

    #[test]
    fn kmeans_degenerate_inputs() {
        assert!(matches!(kmeans2(&pts(&[1.0, 1.0, 1.0]), Seed(0)), Err(Error::DegenerateInput(_))));
        assert!(kmeans2(&pts(&[1.0]), Seed(0)).is_err());
    }

    #[test]
    fn low_delta_cluster_is_member_and_labels_ignore_ids() {
        let docs: Vec<(DocId, Vec<OptimizationTrace>)> =
            [0.1, 0.2, 0.15, 3.0, 3.2, 2.9].iter().enumerate().map(|(i, &d)| (DocId(i as u32), vec![trace(d, 1, 0.0)])).collect();
        let sel = FeatureSelection::parse("avg:delta").unwrap();
        let ds = build_descriptors(&docs, &sel).unwrap();
        let (cr, m) = cluster_and_decide(&ds, &sel, DirectionFeature::DELTA, Seed(3)).unwrap();
        assert_eq!(m.is_member, vec![true, true, true, false, false, false]);
        let swapped: Vec<usize> = cr.assignments.iter().map(|a| 1 - a).collect();
        let cs = [cr.centroids[1].clone(), cr.centroids[0].clone()];
        let m2 = decide_membership(&swapped, &cs, &ds, &sel, DirectionFeature::DELTA).unwrap();
        assert_eq!(m.is_member, m2.is_member);
        assert_eq!(m.scores, m2.scores);

        let at_centre = FeatureDescriptor {
            doc_id: DocId(9),
            raw: vec![0.0],
            vector: cr.centroids[m.member_cluster].clone(),
            failed_traces: 0,
        };
        let m3 = decide_membership(&[m.member_cluster], &cr.centroids, &[at_centre], &sel, DirectionFeature::DELTA).unwrap();
        assert_eq!(m3.scores[0], 0.0);
    }

    proptest! {
        #[test]
        fn lloyd_inertia_never_increases(xs in proptest::collection::vec(-10.0f64..10.0, 3..30), seed in 0u64..1000) {
            prop_assume!(xs.iter().any(|&x| x != xs[0]));
            let r = kmeans2(&pts(&xs), Seed(seed)).unwrap();
            for rs in &r.restarts {
                for w in rs.inertia_history.windows(2) {
                    prop_assert!(w[1] <= w[0] + 1e-9);
                }
            }
        }
    }
}
