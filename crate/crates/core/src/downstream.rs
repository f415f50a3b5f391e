//! Cluster-level aggregation, boosted regression trees and fit metrics.
//!
//! The regressor is trained on full-acquisition cluster counts of the
//! training clusters and evaluated on counts gathered under a selection
//! rule on the test clusters.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::SelectionMask;
use crate::counts::ClassCounts;
use crate::detector::{gated_counts, DetectionTable, DetectorConfig, TileRef};
use crate::error::{Error, Result};
use crate::world::{Cluster, Split};

pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// Summed detections of a cluster under a mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterFeatures {
    pub m: ClassCounts,
}

fn check_mask(cluster: &Cluster, mask: &SelectionMask) -> Result<()> {
    let subtiles = cluster.tiles.first().map_or(0, |t| t.subtiles.len());
    if mask.tiles() != cluster.tiles.len() || mask.subtiles() != subtiles {
        return Err(Error::Shape {
            what: "selection mask",
            expected: cluster.tiles.len() * subtiles,
            got: mask.tiles() * mask.subtiles(),
        });
    }
    Ok(())
}

pub fn aggregate_cluster(
    cluster: &Cluster,
    mask: &SelectionMask,
    detector: &DetectorConfig,
) -> Result<ClusterFeatures> {
    check_mask(cluster, mask)?;
    let classes = cluster.tiles[0].subtiles[0].truth.len();
    let mut m = ClassCounts::zeros(classes);
    for (index, tile) in cluster.tiles.iter().enumerate() {
        let tr = TileRef {
            cluster_id: cluster.id,
            index,
            tile,
        };
        m += &gated_counts(tr, &mask.tile_actions(index), detector)?;
    }
    Ok(ClusterFeatures { m })
}

/// [`aggregate_cluster`] over precomputed detections.
pub fn aggregate_with_table(
    table: &DetectionTable,
    cluster: &Cluster,
    mask: &SelectionMask,
) -> Result<ClusterFeatures> {
    check_mask(cluster, mask)?;
    let mut m = ClassCounts::zeros(table.classes());
    for t in 0..cluster.tiles.len() {
        m += &table.gated(cluster.id, t, &mask.tile_actions(t))?;
    }
    Ok(ClusterFeatures { m })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbdtParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub shrinkage: f64,
    pub min_leaf: usize,
}

impl Default for GbdtParams {
    fn default() -> Self {
        GbdtParams {
            n_trees: 100,
            max_depth: 3,
            shrinkage: 0.1,
            min_leaf: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Nodes in preorder; the root is node 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedEnsemble {
    pub schema_version: u32,
    pub n_features: usize,
    pub init: f64,
    pub shrinkage: f64,
    pub params: GbdtParams,
    pub trees: Vec<RegressionTree>,
}

impl BoostedEnsemble {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Schema(format!("model: {e}")))?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: BoostedEnsemble =
            serde_json::from_str(text).map_err(|e| Error::Schema(format!("model: {e}")))?;
        if m.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "model schema version {}, this build reads {MODEL_SCHEMA_VERSION}",
                m.schema_version
            )));
        }
        Ok(m)
    }

    /// Training-set style predictions after each stage: entry `i` holds the
    /// predictions of the first `i` trees (entry 0 is the constant init).
    pub fn staged_predict(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut current = vec![self.init; rows.len()];
        let mut out = vec![current.clone()];
        for tree in &self.trees {
            for (p, x) in current.iter_mut().zip(rows) {
                *p += self.shrinkage * tree.predict(x);
            }
            out.push(current.clone());
        }
        out
    }
}

/// Mean that is exact for constant input.
fn stable_mean(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let mut it = values.clone();
    let Some(first) = it.next() else { return 0.0 };
    let (n, dev) = values.fold((0usize, 0.0), |(n, s), v| (n + 1, s + (v - first)));
    first + dev / n as f64
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    residual: &'a [f64],
    params: &'a GbdtParams,
    nodes: Vec<Node>,
}

impl TreeBuilder<'_> {
    fn leaf(&mut self, idx: &[usize]) -> usize {
        let value = stable_mean(idx.iter().map(|&i| self.residual[i]));
        self.nodes.push(Node::Leaf { value });
        self.nodes.len() - 1
    }

    /// Best `(gain, feature, threshold)`; ties keep the lowest feature, then
    /// the lowest threshold.
    fn best_split(&self, idx: &[usize]) -> Option<(f64, usize, f64)> {
        let n = idx.len();
        let min_leaf = self.params.min_leaf.max(1);
        if n < 2 * min_leaf {
            return None;
        }
        let total: f64 = idx.iter().map(|&i| self.residual[i]).sum();
        let sse: f64 = idx.iter().map(|&i| self.residual[i].powi(2)).sum();
        let parent = total * total / n as f64;
        let min_gain = 1e-12 * (1.0 + sse);
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order = idx.to_vec();
        for f in 0..self.x[idx[0]].len() {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let mut left_sum = 0.0;
            for pos in 0..n - 1 {
                left_sum += self.residual[order[pos]];
                let here = self.x[order[pos]][f];
                let next = self.x[order[pos + 1]][f];
                if here == next {
                    continue;
                }
                let n_left = pos + 1;
                let n_right = n - n_left;
                if n_left < min_leaf || n_right < min_leaf {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / n_left as f64
                    + right_sum * right_sum / n_right as f64
                    - parent;
                if gain > min_gain && best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, f, here));
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: &[usize], depth: usize) -> usize {
        if depth >= self.params.max_depth {
            return self.leaf(idx);
        }
        let Some((_, feature, threshold)) = self.best_split(idx) else {
            return self.leaf(idx);
        };
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| self.x[i][feature] <= threshold);
        let me = self.nodes.len();
        self.nodes.push(Node::Leaf { value: 0.0 });
        let left = self.grow(&left_idx, depth + 1);
        let right = self.grow(&right_idx, depth + 1);
        self.nodes[me] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        me
    }
}

/// Least-squares gradient boosting with depth-bounded trees.
pub fn fit_gbdt(x: &[Vec<f64>], y: &[f64], params: &GbdtParams) -> Result<BoostedEnsemble> {
    if x.len() != y.len() {
        return Err(Error::Shape {
            what: "gbdt targets",
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::Validation("gbdt needs at least 2 rows".into()));
    }
    let n_features = x[0].len();
    if n_features == 0 || x.iter().any(|r| r.len() != n_features) {
        return Err(Error::Validation("gbdt rows must share a non-zero width".into()));
    }
    if y.iter().any(|v| !v.is_finite()) || x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gbdt training data".into()));
    }
    if !(params.shrinkage > 0.0 && params.shrinkage.is_finite()) {
        return Err(Error::Config("gbdt shrinkage must be > 0".into()));
    }
    let init = stable_mean(y.iter().copied());
    let mut pred = vec![init; y.len()];
    let all: Vec<usize> = (0..y.len()).collect();
    let mut trees = Vec::with_capacity(params.n_trees);
    for _ in 0..params.n_trees {
        let residual: Vec<f64> = y.iter().zip(&pred).map(|(t, p)| t - p).collect();
        let mut b = TreeBuilder {
            x,
            residual: &residual,
            params,
            nodes: Vec::new(),
        };
        b.grow(&all, 0);
        let tree = RegressionTree { nodes: b.nodes };
        for (p, row) in pred.iter_mut().zip(x) {
            *p += params.shrinkage * tree.predict(row);
        }
        trees.push(tree);
    }
    Ok(BoostedEnsemble {
        schema_version: MODEL_SCHEMA_VERSION,
        n_features,
        init,
        shrinkage: params.shrinkage,
        params: *params,
        trees,
    })
}

pub fn predict_gbdt(model: &BoostedEnsemble, x: &[f64]) -> Result<f64> {
    if x.len() != model.n_features {
        return Err(Error::Shape {
            what: "gbdt input",
            expected: model.n_features,
            got: x.len(),
        });
    }
    Ok(model
        .trees
        .iter()
        .fold(model.init, |acc, t| acc + model.shrinkage * t.predict(x)))
}

fn check_pair(y: &[f64], y_hat: &[f64]) -> Result<()> {
    if y.len() != y_hat.len() {
        return Err(Error::Shape {
            what: "prediction vector",
            expected: y.len(),
            got: y_hat.len(),
        });
    }
    if y.len() < 2 {
        return Err(Error::UndefinedMetric("need at least 2 observations".into()));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    stable_mean(v.iter().copied())
}

fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
}

/// Squared Pearson correlation.
pub fn pearson_r2(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_pair(y, y_hat)?;
    let (my, mp) = (mean(y), mean(y_hat));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in y.iter().zip(y_hat) {
        let (da, db) = (a - my, b - mp);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 {
        return Err(Error::UndefinedMetric("targets have zero variance".into()));
    }
    if syy == 0.0 {
        return Err(Error::UndefinedMetric("predictions have zero variance".into()));
    }
    Ok(((sxy * sxy) / (sxx * syy)).min(1.0))
}

pub fn mse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_pair(y, y_hat)?;
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64)
}

/// `1 - Var(y - y_hat) / Var(y)`.
pub fn explained_variance(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_pair(y, y_hat)?;
    let var_y = variance(y);
    if var_y == 0.0 {
        return Err(Error::UndefinedMetric("targets have zero variance".into()));
    }
    let resid: Vec<f64> = y.iter().zip(y_hat).map(|(a, b)| a - b).collect();
    Ok(1.0 - variance(&resid) / var_y)
}

/// Per class, the mean over clusters of `max(0, m - m_hat)`.
pub fn missed_per_class(reference: &[Vec<f64>], approx: &[Vec<f64>]) -> Result<Vec<f64>> {
    if reference.len() != approx.len() || reference.is_empty() {
        return Err(Error::Shape {
            what: "cluster count vectors",
            expected: reference.len(),
            got: approx.len(),
        });
    }
    let l = reference[0].len();
    let mut out = vec![0.0; l];
    for (m, m_hat) in reference.iter().zip(approx) {
        if m.len() != l || m_hat.len() != l {
            return Err(Error::Shape {
                what: "class counts",
                expected: l,
                got: m_hat.len(),
            });
        }
        for c in 0..l {
            out[c] += (m[c] - m_hat[c]).max(0.0);
        }
    }
    let n = reference.len() as f64;
    Ok(out.into_iter().map(|v| v / n).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Zero when the predictions are constant; see `r2_defined`.
    pub r2: f64,
    pub r2_defined: bool,
    pub mse: f64,
    pub explained_variance: f64,
    pub acquisition_fraction: f64,
    pub missed_per_class: Vec<f64>,
    /// Mean over test clusters of `||m - m_hat||_1`.
    pub mean_l1_gap: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineOptions {
    pub gbdt: GbdtParams,
    /// Train the regressor on masked rather than full-acquisition features.
    pub train_on_masked: bool,
}

/// Fits on the training clusters, applies `source` to the test clusters and
/// scores the predictions.
pub fn evaluate_pipeline<F>(
    clusters: &[Cluster],
    detections: &DetectionTable,
    split: &Split,
    opts: &PipelineOptions,
    mut source: F,
) -> Result<MetricsReport>
where
    F: FnMut(&Cluster) -> Result<SelectionMask>,
{
    if split.train.len() < 2 || split.test.len() < 2 {
        return Err(Error::Validation(
            "pipeline needs at least 2 training and 2 test clusters".into(),
        ));
    }
    let get = |id: u32| {
        clusters
            .get(id as usize)
            .ok_or_else(|| Error::Validation(format!("unknown cluster id {id}")))
    };
    let mut x_train = Vec::with_capacity(split.train.len());
    let mut y_train = Vec::with_capacity(split.train.len());
    for &id in &split.train {
        let c = get(id)?;
        let mask = if opts.train_on_masked {
            source(c)?
        } else {
            crate::baselines::no_dropping(c)
        };
        x_train.push(aggregate_with_table(detections, c, &mask)?.m.to_f64());
        y_train.push(c.y);
    }
    let model = fit_gbdt(&x_train, &y_train, &opts.gbdt)?;

    let (mut y, mut y_hat, mut full, mut approx) = (vec![], vec![], vec![], vec![]);
    let (mut acquired, mut total) = (0usize, 0usize);
    for &id in &split.test {
        let c = get(id)?;
        let mask = source(c)?;
        acquired += mask.acquired();
        total += mask.tiles() * mask.subtiles();
        let m_hat = aggregate_with_table(detections, c, &mask)?.m.to_f64();
        let m = aggregate_with_table(detections, c, &crate::baselines::no_dropping(c))?
            .m
            .to_f64();
        y_hat.push(predict_gbdt(&model, &m_hat)?);
        y.push(c.y);
        full.push(m);
        approx.push(m_hat);
    }
    let (r2, r2_defined) = match pearson_r2(&y, &y_hat) {
        Ok(v) => (v, true),
        Err(Error::UndefinedMetric(msg)) if msg.contains("predictions") => (0.0, false),
        Err(e) => return Err(e),
    };
    let mean_l1_gap = full
        .iter()
        .zip(&approx)
        .map(|(m, h)| m.iter().zip(h).map(|(a, b)| (a - b).abs()).sum::<f64>())
        .sum::<f64>()
        / full.len() as f64;
    Ok(MetricsReport {
        r2,
        r2_defined,
        mse: mse(&y, &y_hat)?,
        explained_variance: explained_variance(&y, &y_hat)?,
        acquisition_fraction: acquired as f64 / total as f64,
        missed_per_class: missed_per_class(&full, &approx)?,
        mean_l1_gap,
    })
}
