//! Non-learned selection rules and the learned policy's inference mask.
//!
//! Baselines choose whole tiles (every subtile of a chosen tile). Budgets are
//! given either as a fraction of tiles, rounded up, or as a tile count `K`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::detector::DetectionTable;
use crate::error::{Error, Result};
use crate::policy::{forward, greedy_actions, ActionVector, PolicyParams};
use crate::world::{Cluster, World};

/// Acquisition decisions for every subtile of one cluster, tile-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionMask {
    subtiles: usize,
    bits: Vec<bool>,
}

impl SelectionMask {
    pub fn empty(tiles: usize, subtiles: usize) -> Self {
        SelectionMask {
            subtiles,
            bits: vec![false; tiles * subtiles],
        }
    }

    pub fn full(tiles: usize, subtiles: usize) -> Self {
        SelectionMask {
            subtiles,
            bits: vec![true; tiles * subtiles],
        }
    }

    pub fn from_actions(actions: Vec<ActionVector>) -> Self {
        let subtiles = actions.first().map_or(0, ActionVector::len);
        SelectionMask {
            subtiles,
            bits: actions.iter().flat_map(|a| a.as_slice().to_vec()).collect(),
        }
    }

    /// Selects all subtiles of the listed tiles.
    pub fn from_tiles(tiles: usize, subtiles: usize, chosen: impl IntoIterator<Item = usize>) -> Self {
        let mut m = Self::empty(tiles, subtiles);
        for t in chosen {
            m.bits[t * subtiles..(t + 1) * subtiles].fill(true);
        }
        m
    }

    pub fn tiles(&self) -> usize {
        self.bits.len().checked_div(self.subtiles).unwrap_or(0)
    }

    pub fn subtiles(&self) -> usize {
        self.subtiles
    }

    pub fn tile_actions(&self, tile: usize) -> ActionVector {
        ActionVector::from_bools(self.bits[tile * self.subtiles..(tile + 1) * self.subtiles].to_vec())
    }

    pub fn acquired(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Tiles with at least one acquired subtile.
    pub fn tiles_touched(&self) -> usize {
        self.bits
            .chunks(self.subtiles.max(1))
            .filter(|c| c.iter().any(|&b| b))
            .count()
    }

    pub fn fraction(&self) -> f64 {
        if self.bits.is_empty() {
            0.0
        } else {
            self.acquired() as f64 / self.bits.len() as f64
        }
    }

    pub fn is_selected(&self, tile: usize, k: usize) -> bool {
        self.bits[tile * self.subtiles + k]
    }
}

fn shape_of(cluster: &Cluster) -> (usize, usize) {
    (
        cluster.tiles.len(),
        cluster.tiles.first().map_or(0, |t| t.subtiles.len()),
    )
}

fn grid_of(cluster: &Cluster) -> usize {
    (cluster.tiles.len() as f64).sqrt().round() as usize
}

/// Tiles needed to cover `fraction` of the grid, rounded up.
pub fn tiles_for_fraction(fraction: f64, tiles: usize) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    Ok((((fraction * tiles as f64) - 1e-9).ceil() as usize).min(tiles))
}

fn check_k(k: usize, tiles: usize) -> Result<()> {
    if k > tiles {
        Err(Error::Config(format!("K={k} exceeds the {tiles} tiles of a cluster")))
    } else {
        Ok(())
    }
}

/// Indices of the `k` largest keys; ties go to the lower index.
fn top_k(keys: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_by(|&a, &b| keys[b].total_cmp(&keys[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Indices of the `k` smallest keys; ties go to the lower index.
fn bottom_k(keys: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

pub fn no_dropping(cluster: &Cluster) -> SelectionMask {
    let (t, s) = shape_of(cluster);
    SelectionMask::full(t, s)
}

pub fn no_acquisition(cluster: &Cluster) -> SelectionMask {
    let (t, s) = shape_of(cluster);
    SelectionMask::empty(t, s)
}

/// Tiles closest to the grid centre in Chebyshev distance.
pub fn fixed_policy(cluster: &Cluster, fraction: f64) -> Result<SelectionMask> {
    let (t, s) = shape_of(cluster);
    let k = tiles_for_fraction(fraction, t)?;
    let g = grid_of(cluster);
    let centre = (g as f64 - 1.0) / 2.0;
    let dist: Vec<f64> = (0..t)
        .map(|i| {
            let (r, c) = ((i / g) as f64, (i % g) as f64);
            (r - centre).abs().max((c - centre).abs())
        })
        .collect();
    Ok(SelectionMask::from_tiles(t, s, bottom_k(&dist, k)))
}

/// Uniform sample of tiles without replacement.
pub fn random_policy<R: Rng + ?Sized>(cluster: &Cluster, fraction: f64, rng: &mut R) -> Result<SelectionMask> {
    let (t, s) = shape_of(cluster);
    let k = tiles_for_fraction(fraction, t)?;
    Ok(SelectionMask::from_tiles(t, s, index::sample(rng, t, k)))
}

/// Weighted sample without replacement, weight `exp(-d / sigma)` with `d` the
/// Euclidean distance to the grid centre and `sigma = G / 4`.
pub fn stochastic_policy<R: Rng + ?Sized>(
    cluster: &Cluster,
    fraction: f64,
    rng: &mut R,
) -> Result<SelectionMask> {
    let (t, s) = shape_of(cluster);
    let k = tiles_for_fraction(fraction, t)?;
    let weights = stochastic_weights(grid_of(cluster));
    let chosen = index::sample_weighted(rng, t, |i| weights[i], k)
        .map_err(|e| Error::Validation(format!("weighted sampling: {e}")))?;
    Ok(SelectionMask::from_tiles(t, s, chosen))
}

/// Row-major tile weights used by [`stochastic_policy`].
pub fn stochastic_weights(grid: usize) -> Vec<f64> {
    let centre = (grid as f64 - 1.0) / 2.0;
    let sigma = grid as f64 / 4.0;
    (0..grid * grid)
        .map(|i| {
            let (r, c) = ((i / grid) as f64, (i % grid) as f64);
            let d = ((r - centre).powi(2) + (c - centre).powi(2)).sqrt();
            (-d / sigma).exp()
        })
        .collect()
}

/// The `k` tiles with the lowest greenness channel.
pub fn green_policy(cluster: &Cluster, k: usize) -> Result<SelectionMask> {
    let (t, s) = shape_of(cluster);
    check_k(k, t)?;
    let green: Vec<f64> = cluster
        .tiles
        .iter()
        .map(|tile| *tile.lr_features.last().expect("F >= 2"))
        .collect();
    Ok(SelectionMask::from_tiles(t, s, bottom_k(&green, k)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProxyMode {
    Nightlights,
    Settlement,
}

/// Nightlights: every tile with a positive proxy value (`k` ignored).
/// Settlement: the `k` tiles with the largest proxy value.
pub fn proxy_layer_policy(cluster: &Cluster, mode: ProxyMode, k: usize) -> Result<SelectionMask> {
    let (t, s) = shape_of(cluster);
    match mode {
        ProxyMode::Nightlights => Ok(SelectionMask::from_tiles(
            t,
            s,
            (0..t).filter(|&i| cluster.proxy_layer[i] > 0.0),
        )),
        ProxyMode::Settlement => {
            check_k(k, t)?;
            Ok(SelectionMask::from_tiles(t, s, top_k(&cluster.proxy_layer, k)))
        }
    }
}

/// Ridge regression from tile features to total detected objects.
#[derive(Debug, Clone, PartialEq)]
pub struct CountsPredictor {
    /// Feature weights followed by the (unpenalised) intercept.
    pub coef: Vec<f64>,
}

pub const RIDGE_PENALTY: f64 = 1e-3;

impl CountsPredictor {
    pub fn fit(world: &World, detections: &DetectionTable, train_ids: &[u32]) -> Result<Self> {
        if train_ids.is_empty() {
            return Err(Error::Config("counts predictor needs training clusters".into()));
        }
        let f = world.dims.features;
        let mut rows = Vec::new();
        let mut targets = Vec::new();
        for &id in train_ids {
            let cluster = world.cluster(id)?;
            for (t, tile) in cluster.tiles.iter().enumerate() {
                rows.extend_from_slice(&tile.lr_features);
                rows.push(1.0);
                targets.push(detections.reference(id, t).total() as f64);
            }
        }
        let n = targets.len();
        let x = DMatrix::from_row_slice(n, f + 1, &rows);
        let y = DVector::from_vec(targets);
        let mut gram = x.transpose() * &x;
        for i in 0..f {
            gram[(i, i)] += RIDGE_PENALTY;
        }
        let rhs = x.transpose() * y;
        let coef = match gram.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => gram
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::Validation("singular ridge system".into()))?,
        };
        Ok(CountsPredictor {
            coef: coef.iter().copied().collect(),
        })
    }

    pub fn predict(&self, features: &[f64]) -> f64 {
        let (w, b) = self.coef.split_at(self.coef.len() - 1);
        w.iter().zip(features).map(|(a, x)| a * x).sum::<f64>() + b[0]
    }
}

/// The `k` tiles with the most predicted objects.
pub fn counts_pred_policy(predictor: &CountsPredictor, cluster: &Cluster, k: usize) -> Result<SelectionMask> {
    let (t, s) = shape_of(cluster);
    check_k(k, t)?;
    let pred: Vec<f64> = cluster
        .tiles
        .iter()
        .map(|tile| predictor.predict(&tile.lr_features))
        .collect();
    Ok(SelectionMask::from_tiles(t, s, top_k(&pred, k)))
}

/// Greedy (untempered) decisions of a trained policy on every tile.
pub fn policy_mask(cluster: &Cluster, params: &PolicyParams) -> Result<SelectionMask> {
    let actions = cluster
        .tiles
        .iter()
        .map(|tile| forward(params, &tile.lr_features).map(|s| greedy_actions(&s)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SelectionMask::from_actions(actions))
}

/// Every selection method the harness knows about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Ours,
    NoDropping,
    NoAcquisition,
    Fixed,
    Random,
    Stochastic,
    Green,
    CountsPred,
    Nightlights,
    Settlement,
}

impl Method {
    pub const ALL: [Method; 10] = [
        Method::Ours,
        Method::NoDropping,
        Method::NoAcquisition,
        Method::Fixed,
        Method::Random,
        Method::Stochastic,
        Method::Green,
        Method::CountsPred,
        Method::Nightlights,
        Method::Settlement,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ours => "ours",
            Method::NoDropping => "no-dropping",
            Method::NoAcquisition => "no-acquisition",
            Method::Fixed => "fixed",
            Method::Random => "random",
            Method::Stochastic => "stochastic",
            Method::Green => "green",
            Method::CountsPred => "counts-pred",
            Method::Nightlights => "nightlights",
            Method::Settlement => "settlement",
        }
    }

    /// Whether the method's budget is a tile count rather than a fraction.
    pub fn uses_k(self) -> bool {
        matches!(self, Method::Green | Method::CountsPred | Method::Settlement)
    }

    /// Whether the method takes a budget at all.
    pub fn has_budget(self) -> bool {
        !matches!(
            self,
            Method::Ours | Method::NoDropping | Method::NoAcquisition | Method::Nightlights
        )
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// A baseline budget for one cluster.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Budget {
    Fraction(f64),
    Tiles(usize),
}

impl Budget {
    pub fn tiles(self, total: usize) -> Result<usize> {
        match self {
            Budget::Fraction(f) => tiles_for_fraction(f, total),
            Budget::Tiles(k) => {
                check_k(k, total)?;
                Ok(k)
            }
        }
    }

    pub fn fraction(self, total: usize) -> f64 {
        match self {
            Budget::Fraction(f) => f,
            Budget::Tiles(k) => k as f64 / total as f64,
        }
    }
}

/// Models a baseline may need beyond the cluster itself.
pub struct BaselineContext<'a> {
    pub predictor: Option<&'a CountsPredictor>,
    pub policy: Option<&'a PolicyParams>,
}

/// Dispatches a method on one cluster. `rng` drives the random methods.
pub fn select<R: Rng + ?Sized>(
    method: Method,
    cluster: &Cluster,
    budget: Option<Budget>,
    ctx: &BaselineContext<'_>,
    rng: &mut R,
) -> Result<SelectionMask> {
    let tiles = cluster.tiles.len();
    let need = || budget.ok_or_else(|| Error::Config(format!("method {method} needs a budget")));
    match method {
        Method::Ours => {
            let params = ctx
                .policy
                .ok_or_else(|| Error::Config("method ours needs a trained policy".into()))?;
            policy_mask(cluster, params)
        }
        Method::NoDropping => Ok(no_dropping(cluster)),
        Method::NoAcquisition => Ok(no_acquisition(cluster)),
        Method::Nightlights => proxy_layer_policy(cluster, ProxyMode::Nightlights, 0),
        Method::Fixed | Method::Random | Method::Stochastic => {
            let k = need()?.tiles(tiles)?;
            if k == 0 {
                return Ok(no_acquisition(cluster));
            }
            let f = k as f64 / tiles as f64;
            match method {
                Method::Fixed => fixed_policy(cluster, f),
                Method::Random => random_policy(cluster, f, rng),
                _ => stochastic_policy(cluster, f, rng),
            }
        }
        Method::Green => green_policy(cluster, need()?.tiles(tiles)?),
        Method::Settlement => proxy_layer_policy(cluster, ProxyMode::Settlement, need()?.tiles(tiles)?),
        Method::CountsPred => {
            let predictor = ctx
                .predictor
                .ok_or_else(|| Error::Config("method counts-pred needs a fitted predictor".into()))?;
            counts_pred_policy(predictor, cluster, need()?.tiles(tiles)?)
        }
    }
}
