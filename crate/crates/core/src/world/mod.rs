//! Synthetic clusters of tiles with hidden per-subtile counts.
//!
//! A [`World`] is immutable once built. Each [`Cluster`] is a `G x G` grid of
//! [`Tile`]s, each tile holds `S` [`SubTile`]s with ground-truth
//! [`ClassCounts`] and a length-`F` vector of cheap low-resolution features.

mod gen;
mod io;
mod split;

pub use gen::{generate_world, mixing_map, GenConfig, DEFAULT_W_STAR};
pub use io::{load_world, save_world, world_from_str, world_to_string, WORLD_SCHEMA_VERSION};
pub use split::{split_ids, split_train_test, Split};

use serde::{Deserialize, Serialize};

use crate::counts::ClassCounts;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubTile {
    pub truth: ClassCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tile {
    pub row: u32,
    pub col: u32,
    pub subtiles: Vec<SubTile>,
    pub lr_features: Vec<f64>,
}

impl Tile {
    pub fn truth_total(&self, classes: usize) -> ClassCounts {
        let mut total = ClassCounts::zeros(classes);
        for sub in &self.subtiles {
            total += &sub.truth;
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: u32,
    /// (lat, lon) in degrees. Labels only.
    pub center: (f64, f64),
    pub jitter_km: f64,
    /// Row-major `G x G`.
    pub tiles: Vec<Tile>,
    pub y: f64,
    /// Row-major `G x G`, non-negative.
    pub proxy_layer: Vec<f64>,
}

impl Cluster {
    pub fn truth_total(&self, classes: usize) -> ClassCounts {
        let mut total = ClassCounts::zeros(classes);
        for tile in &self.tiles {
            total += &tile.truth_total(classes);
        }
        total
    }
}

/// Dimensions shared by every cluster of a world.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// Object classes (L).
    pub classes: usize,
    /// Subtiles per tile (S).
    pub subtiles: usize,
    /// Low-resolution feature channels (F).
    pub features: usize,
    /// Grid side (G); a cluster has `G * G` tiles.
    pub grid: usize,
}

impl Dims {
    pub fn tiles_per_cluster(&self) -> usize {
        self.grid * self.grid
    }

    pub fn subtiles_per_cluster(&self) -> usize {
        self.tiles_per_cluster() * self.subtiles
    }

    /// Index of the channel that carries vegetation ("greenness").
    pub fn green_channel(&self) -> usize {
        self.features - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub dims: Dims,
    pub config: GenConfig,
    pub seed: u64,
    pub w_star: Vec<f64>,
    pub clusters: Vec<Cluster>,
}

impl World {
    pub fn cluster(&self, id: u32) -> Result<&Cluster> {
        self.clusters
            .get(id as usize)
            .ok_or_else(|| Error::Validation(format!("unknown cluster id {id}")))
    }

    /// Checks every structural invariant. Called after load and generation.
    pub fn validate(&self) -> Result<()> {
        let d = self.dims;
        if self.clusters.len() < 2 {
            return Err(Error::Validation(format!(
                "world needs at least 2 clusters, has {}",
                self.clusters.len()
            )));
        }
        if self.w_star.len() != d.classes {
            return Err(Error::Validation(format!(
                "w* has length {}, expected L={}",
                self.w_star.len(),
                d.classes
            )));
        }
        for (i, c) in self.clusters.iter().enumerate() {
            if c.id as usize != i {
                return Err(Error::Validation(format!(
                    "cluster at position {i} has id {}",
                    c.id
                )));
            }
            if !c.y.is_finite() {
                return Err(Error::Validation(format!("cluster {i} has non-finite y")));
            }
            if c.tiles.len() != d.tiles_per_cluster() {
                return Err(Error::Validation(format!(
                    "cluster {i} has {} tiles, expected {}",
                    c.tiles.len(),
                    d.tiles_per_cluster()
                )));
            }
            if c.proxy_layer.len() != d.tiles_per_cluster()
                || c.proxy_layer.iter().any(|p| !p.is_finite() || *p < 0.0)
            {
                return Err(Error::Validation(format!("cluster {i} has a bad proxy layer")));
            }
            for (t, tile) in c.tiles.iter().enumerate() {
                let (row, col) = (tile.row as usize, tile.col as usize);
                if row >= d.grid || col >= d.grid || row * d.grid + col != t {
                    return Err(Error::Validation(format!(
                        "cluster {i} tile {t} has grid index ({row}, {col})"
                    )));
                }
                if tile.lr_features.len() != d.features
                    || tile.lr_features.iter().any(|v| !v.is_finite())
                {
                    return Err(Error::Validation(format!(
                        "cluster {i} tile {t}: features must be {} finite values",
                        d.features
                    )));
                }
                if tile.subtiles.len() != d.subtiles {
                    return Err(Error::Validation(format!(
                        "cluster {i} tile {t} has {} subtiles, expected S={}",
                        tile.subtiles.len(),
                        d.subtiles
                    )));
                }
                if let Some(bad) = tile.subtiles.iter().find(|s| s.truth.len() != d.classes) {
                    return Err(Error::Validation(format!(
                        "cluster {i} tile {t}: counts of length {}, expected L={}",
                        bad.truth.len(),
                        d.classes
                    )));
                }
            }
        }
        Ok(())
    }
}
