//! Simulated object detector.
//!
//! Each true object is found with probability `recall[c]` and each subtile
//! gets `Poisson(fp_rate[c])` false positives. Draws are keyed by
//! `(seed, cluster, tile, subtile, class)` so a subtile always produces the
//! same detections no matter when or how often it is queried.

use rand_distr::{Binomial, Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counts::ClassCounts;
use crate::error::{Error, Result};
use crate::policy::ActionVector;
use crate::rng::{keyed_rng, stream};
use crate::world::{Tile, World};

/// A per-class parameter given either once for all classes or per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerClass {
    Uniform(f64),
    Each(Vec<f64>),
}

impl PerClass {
    pub fn get(&self, class: usize) -> f64 {
        match self {
            PerClass::Uniform(v) => *v,
            PerClass::Each(v) => v[class],
        }
    }

    fn values(&self) -> Vec<f64> {
        match self {
            PerClass::Uniform(v) => vec![*v],
            PerClass::Each(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub recall: PerClass,
    pub fp_rate: PerClass,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            recall: PerClass::Uniform(0.9),
            fp_rate: PerClass::Uniform(0.01),
            seed: 0,
        }
    }
}

impl DetectorConfig {
    /// Detects everything, invents nothing.
    pub fn perfect() -> Self {
        DetectorConfig {
            recall: PerClass::Uniform(1.0),
            fp_rate: PerClass::Uniform(0.0),
            seed: 0,
        }
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        for (name, p) in [("recall", &self.recall), ("fp_rate", &self.fp_rate)] {
            if let PerClass::Each(v) = p {
                if v.len() != classes {
                    return Err(Error::Config(format!(
                        "detector {name} has {} entries, expected L={classes}",
                        v.len()
                    )));
                }
            }
        }
        if self
            .recall
            .values()
            .iter()
            .any(|&r| !(r > 0.0 && r <= 1.0))
        {
            return Err(Error::Config("detector recall must lie in (0, 1]".into()));
        }
        if self
            .fp_rate
            .values()
            .iter()
            .any(|&f| !f.is_finite() || f < 0.0)
        {
            return Err(Error::Config("detector fp_rate must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// A tile together with its position in the world, which keys detections.
#[derive(Debug, Clone, Copy)]
pub struct TileRef<'a> {
    pub cluster_id: u32,
    pub index: usize,
    pub tile: &'a Tile,
}

impl<'a> TileRef<'a> {
    pub fn new(world: &'a World, cluster_id: u32, index: usize) -> Result<Self> {
        let tile = world
            .cluster(cluster_id)?
            .tiles
            .get(index)
            .ok_or_else(|| Error::Validation(format!("cluster {cluster_id} has no tile {index}")))?;
        Ok(TileRef {
            cluster_id,
            index,
            tile,
        })
    }
}

/// Noisy counts for subtile `k` of `tile`.
pub fn detect(tile: TileRef<'_>, k: usize, cfg: &DetectorConfig) -> ClassCounts {
    let truth = &tile.tile.subtiles[k].truth;
    let counts = truth
        .as_slice()
        .iter()
        .enumerate()
        .map(|(class, &n)| {
            let mut rng = keyed_rng(&[
                cfg.seed,
                stream::DETECTOR,
                u64::from(tile.cluster_id),
                tile.index as u64,
                k as u64,
                class as u64,
            ]);
            let recall = cfg.recall.get(class);
            let found = if n == 0 {
                0
            } else if recall >= 1.0 {
                u64::from(n)
            } else {
                Binomial::new(u64::from(n), recall)
                    .expect("validated recall")
                    .sample(&mut rng)
            };
            let fp_rate = cfg.fp_rate.get(class);
            let false_pos = if fp_rate > 0.0 {
                Poisson::new(fp_rate).expect("validated fp rate").sample(&mut rng) as u64
            } else {
                0
            };
            u32::try_from(found + false_pos).unwrap_or(u32::MAX)
        })
        .collect();
    ClassCounts::from_vec(counts)
}

/// Sum of detections over acquired subtiles; dropped subtiles contribute zero.
pub fn gated_counts(
    tile: TileRef<'_>,
    actions: &ActionVector,
    cfg: &DetectorConfig,
) -> Result<ClassCounts> {
    let s = tile.tile.subtiles.len();
    if actions.len() != s {
        return Err(Error::Shape {
            what: "action vector",
            expected: s,
            got: actions.len(),
        });
    }
    let classes = tile.tile.subtiles.first().map_or(0, |st| st.truth.len());
    let mut total = ClassCounts::zeros(classes);
    for k in (0..s).filter(|&k| actions.get(k)) {
        total += &detect(tile, k, cfg);
    }
    Ok(total)
}

/// Detections over every subtile; the reward target.
pub fn reference_counts(tile: TileRef<'_>, cfg: &DetectorConfig) -> ClassCounts {
    let all = ActionVector::ones(tile.tile.subtiles.len());
    gated_counts(tile, &all, cfg).expect("all-ones has the right length")
}

/// Detections for every subtile of a world, computed once.
///
/// Equivalent to calling [`detect`] on demand; used on hot paths.
#[derive(Debug, Clone)]
pub struct DetectionTable {
    subtiles: usize,
    tiles_per_cluster: usize,
    classes: usize,
    detections: Vec<ClassCounts>,
    references: Vec<ClassCounts>,
}

impl DetectionTable {
    pub fn build(world: &World, cfg: &DetectorConfig) -> Result<Self> {
        cfg.validate(world.dims.classes)?;
        let d = world.dims;
        let per_cluster: Vec<(Vec<ClassCounts>, Vec<ClassCounts>)> = world
            .clusters
            .par_iter()
            .map(|cluster| {
                let mut dets = Vec::with_capacity(d.subtiles_per_cluster());
                let mut refs = Vec::with_capacity(d.tiles_per_cluster());
                for (index, tile) in cluster.tiles.iter().enumerate() {
                    let tr = TileRef {
                        cluster_id: cluster.id,
                        index,
                        tile,
                    };
                    let mut reference = ClassCounts::zeros(d.classes);
                    for k in 0..d.subtiles {
                        let det = detect(tr, k, cfg);
                        reference += &det;
                        dets.push(det);
                    }
                    refs.push(reference);
                }
                (dets, refs)
            })
            .collect();
        let (mut detections, mut references) = (Vec::new(), Vec::new());
        for (dets, refs) in per_cluster {
            detections.extend(dets);
            references.extend(refs);
        }
        Ok(DetectionTable {
            subtiles: d.subtiles,
            tiles_per_cluster: d.tiles_per_cluster(),
            classes: d.classes,
            detections,
            references,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn subtile(&self, cluster: u32, tile: usize, k: usize) -> &ClassCounts {
        &self.detections[(cluster as usize * self.tiles_per_cluster + tile) * self.subtiles + k]
    }

    pub fn reference(&self, cluster: u32, tile: usize) -> &ClassCounts {
        &self.references[cluster as usize * self.tiles_per_cluster + tile]
    }

    pub fn gated(&self, cluster: u32, tile: usize, actions: &ActionVector) -> Result<ClassCounts> {
        if actions.len() != self.subtiles {
            return Err(Error::Shape {
                what: "action vector",
                expected: self.subtiles,
                got: actions.len(),
            });
        }
        let mut total = ClassCounts::zeros(self.classes);
        for k in (0..self.subtiles).filter(|&k| actions.get(k)) {
            total += self.subtile(cluster, tile, k);
        }
        Ok(total)
    }
}
