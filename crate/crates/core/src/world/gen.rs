use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Cluster, Dims, SubTile, Tile, World};
use crate::counts::ClassCounts;
use crate::error::{Error, Result};
use crate::rng::{keyed_rng, stream, StreamRng};

/// Cluster index weights used unless a config overrides them.
pub const DEFAULT_W_STAR: [f64; 10] = [
    0.010, -0.004, 0.012, 0.006, -0.008, 0.015, 0.005, -0.010, 0.020, 0.030,
];

/// Fixed seed of the feature mixing map; independent of the world seed.
const MIXING_SEED: u64 = 0x5E_ED0F_F1A7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub classes: usize,
    pub subtiles: usize,
    pub features: usize,
    pub grid: usize,
    pub clusters: usize,
    /// Expected objects per subtile, per class, before the cluster-level
    /// development multiplier (which has mean one).
    pub intensity_means: Vec<f64>,
    /// Gaussian settlement bumps per cluster (K).
    pub settlements: usize,
    /// Bump widths are drawn uniformly from this range, in tile units.
    pub settlement_width: (f64, f64),
    /// Flat intensity floor relative to a bump peak.
    pub background: f64,
    /// Log-scale spread of the per-cluster development multiplier.
    pub development_spread: f64,
    pub lr_noise: f64,
    pub proxy_noise: f64,
    /// Subtracted from the proxy layer before clamping at zero.
    pub proxy_floor: f64,
    pub y_noise: f64,
    pub w_star: Vec<f64>,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            classes: 10,
            subtiles: 4,
            features: 8,
            grid: 8,
            clusters: 320,
            intensity_means: vec![1.2, 0.8, 0.6, 0.4, 0.3, 0.25, 0.2, 0.15, 0.1, 0.05],
            settlements: 2,
            settlement_width: (0.4, 0.9),
            background: 0.001,
            development_spread: 0.5,
            lr_noise: 0.1,
            proxy_noise: 0.3,
            proxy_floor: 0.5,
            y_noise: 0.05,
            w_star: DEFAULT_W_STAR.to_vec(),
        }
    }
}

impl GenConfig {
    /// The 64-cluster world used by the test fixtures and desk experiments.
    pub fn desk() -> Self {
        GenConfig {
            clusters: 64,
            ..Default::default()
        }
    }

    pub fn dims(&self) -> Dims {
        Dims {
            classes: self.classes,
            subtiles: self.subtiles,
            features: self.features,
            grid: self.grid,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.classes < 1 {
            return bad("classes (L) must be >= 1".into());
        }
        if self.subtiles < 1 {
            return bad("subtiles (S) must be >= 1".into());
        }
        if self.features < 2 {
            return bad("features (F) must be >= 2 (one channel is greenness)".into());
        }
        if self.grid < 1 {
            return bad("grid (G) must be >= 1".into());
        }
        if self.clusters < 2 {
            return bad("clusters (N) must be >= 2".into());
        }
        if self.intensity_means.len() != self.classes {
            return bad(format!(
                "intensity_means has {} entries, expected L={}",
                self.intensity_means.len(),
                self.classes
            ));
        }
        if self.w_star.len() != self.classes {
            return bad(format!(
                "w_star has {} entries, expected L={}",
                self.w_star.len(),
                self.classes
            ));
        }
        if self.intensity_means.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return bad("intensity_means must be finite and >= 0".into());
        }
        if self.w_star.iter().any(|w| !w.is_finite()) {
            return bad("w_star must be finite".into());
        }
        let (lo, hi) = self.settlement_width;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return bad("settlement_width must satisfy 0 < min <= max".into());
        }
        let scales = [
            ("background", self.background),
            ("development_spread", self.development_spread),
            ("lr_noise", self.lr_noise),
            ("proxy_noise", self.proxy_noise),
            ("proxy_floor", self.proxy_floor),
            ("y_noise", self.y_noise),
        ];
        for (name, v) in scales {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{name} must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

/// The fixed `F-1 x L` map from log-counts to the non-green channels.
/// Row 0 is strictly positive so channel 0 tracks overall density.
pub fn mixing_map(features: usize, classes: usize) -> Vec<Vec<f64>> {
    (0..features - 1)
        .map(|f| {
            (0..classes)
                .map(|c| {
                    let u: f64 = keyed_rng(&[MIXING_SEED, stream::MIXING, f as u64, c as u64])
                        .random();
                    if f == 0 {
                        0.5 + 0.5 * u
                    } else {
                        2.0 * u - 1.0
                    }
                })
                .collect()
        })
        .collect()
}

pub fn generate_world(config: &GenConfig, seed: u64) -> Result<World> {
    config.validate()?;
    let mixing = mixing_map(config.features, config.classes);
    let clusters = (0..config.clusters)
        .into_par_iter()
        .map(|id| generate_cluster(config, &mixing, seed, id as u32))
        .collect::<Result<Vec<_>>>()?;
    let world = World {
        dims: config.dims(),
        config: config.clone(),
        seed,
        w_star: config.w_star.clone(),
        clusters,
    };
    world
        .validate()
        .map_err(|e| Error::Generation(e.to_string()))?;
    Ok(world)
}

struct Bump {
    row: f64,
    col: f64,
    width: f64,
    class_weights: Vec<f64>,
}

/// Position of subtile `k` inside its tile, in tile units from the corner.
fn subtile_offset(k: usize, subtiles: usize) -> (f64, f64) {
    let side = (subtiles as f64).sqrt().ceil() as usize;
    let (r, c) = (k / side, k % side);
    ((r as f64 + 0.5) / side as f64, (c as f64 + 0.5) / side as f64)
}

fn normal(rng: &mut StreamRng, sd: f64) -> f64 {
    if sd == 0.0 {
        0.0
    } else {
        Normal::new(0.0, sd).expect("finite sd").sample(rng)
    }
}

fn poisson(rng: &mut StreamRng, mean: f64) -> Result<u32> {
    if mean <= 0.0 {
        return Ok(0);
    }
    let draw = Poisson::new(mean)
        .map_err(|e| Error::Generation(format!("poisson mean {mean}: {e}")))?
        .sample(rng);
    if !draw.is_finite() || draw > f64::from(u32::MAX) {
        return Err(Error::Generation(format!("poisson draw {draw} out of range")));
    }
    Ok(draw as u32)
}

/// Center-weighted 3x3 smoothing over a row-major grid of vectors.
fn smooth(grid: usize, values: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let width = values.first().map_or(0, Vec::len);
    let mut out = Vec::with_capacity(values.len());
    for r in 0..grid {
        for c in 0..grid {
            let mut acc = vec![0.0; width];
            let mut n = 0usize;
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                    if rr < 0 || cc < 0 || rr >= grid as i64 || cc >= grid as i64 {
                        continue;
                    }
                    let v = &values[rr as usize * grid + cc as usize];
                    for (a, x) in acc.iter_mut().zip(v) {
                        *a += x;
                    }
                    n += 1;
                }
            }
            let own = &values[r * grid + c];
            let smoothed = own
                .iter()
                .zip(&acc)
                .map(|(o, a)| if n == 0 { *o } else { 0.5 * o + 0.5 * a / n as f64 })
                .collect();
            out.push(smoothed);
        }
    }
    out
}

fn generate_cluster(
    cfg: &GenConfig,
    mixing: &[Vec<f64>],
    seed: u64,
    id: u32,
) -> Result<Cluster> {
    let mut rng = keyed_rng(&[seed, stream::CLUSTER, u64::from(id)]);
    let (g, s, l, f) = (cfg.grid, cfg.subtiles, cfg.classes, cfg.features);

    let center = (rng.random_range(-1.4..4.2), rng.random_range(29.6..35.0));
    let jitter_km = rng.random_range(0.0..=5.0);
    let development =
        (cfg.development_spread * normal(&mut rng, 1.0) - 0.5 * cfg.development_spread.powi(2))
            .exp();

    let (wlo, whi) = cfg.settlement_width;
    let bumps: Vec<Bump> = (0..cfg.settlements)
        .map(|_| Bump {
            row: rng.random_range(0.0..g as f64),
            col: rng.random_range(0.0..g as f64),
            width: if whi > wlo { rng.random_range(wlo..whi) } else { wlo },
            class_weights: (0..l).map(|_| rng.random_range(0.1..1.0)).collect(),
        })
        .collect();

    // Raw per-class field at every subtile centre, then normalised to mean one.
    let n_sub = g * g * s;
    let mut field = vec![vec![0.0; l]; n_sub];
    for t in 0..g * g {
        let (row, col) = ((t / g) as f64, (t % g) as f64);
        for k in 0..s {
            let (dr, dc) = subtile_offset(k, s);
            let (pr, pc) = (row + dr, col + dc);
            let cell = &mut field[t * s + k];
            for (class, v) in cell.iter_mut().enumerate() {
                *v = cfg.background
                    + bumps
                        .iter()
                        .map(|b| {
                            let d2 = (pr - b.row).powi(2) + (pc - b.col).powi(2);
                            b.class_weights[class] * (-d2 / (2.0 * b.width * b.width)).exp()
                        })
                        .sum::<f64>();
            }
        }
    }
    for class in 0..l {
        let mean = field.iter().map(|v| v[class]).sum::<f64>() / n_sub as f64;
        let scale = if mean > 0.0 {
            cfg.intensity_means[class] * development / mean
        } else {
            0.0
        };
        for v in field.iter_mut() {
            v[class] *= scale;
        }
    }

    let mut tiles = Vec::with_capacity(g * g);
    let mut tile_totals = Vec::with_capacity(g * g);
    let mut tile_built = Vec::with_capacity(g * g);
    for t in 0..g * g {
        let mut subtiles = Vec::with_capacity(s);
        let mut total = vec![0.0; l];
        let mut built = 0.0;
        for k in 0..s {
            let intensity = &field[t * s + k];
            built += intensity[0];
            let counts = intensity
                .iter()
                .map(|&m| poisson(&mut rng, m))
                .collect::<Result<Vec<_>>>()?;
            for (acc, &c) in total.iter_mut().zip(&counts) {
                *acc += f64::from(c);
            }
            subtiles.push(SubTile {
                truth: ClassCounts::from_vec(counts),
            });
        }
        tile_totals.push(total);
        tile_built.push(vec![built]);
        tiles.push(Tile {
            row: (t / g) as u32,
            col: (t % g) as u32,
            subtiles,
            lr_features: Vec::new(),
        });
    }

    let smoothed = smooth(g, &tile_totals);
    let norm = (l as f64).sqrt();
    for (tile, sm) in tiles.iter_mut().zip(&smoothed) {
        let logs: Vec<f64> = sm.iter().map(|x| x.ln_1p()).collect();
        let mut feats = Vec::with_capacity(f);
        for row in mixing {
            let proj = row.iter().zip(&logs).map(|(m, u)| m * u).sum::<f64>() / norm;
            feats.push(proj + normal(&mut rng, cfg.lr_noise));
        }
        let green = 1.0 - (0.5 * logs[0]).tanh();
        feats.push(green + normal(&mut rng, cfg.lr_noise));
        tile.lr_features = feats;
    }

    let proxy_layer = smooth(g, &tile_built)
        .into_iter()
        .map(|v| (v[0] + normal(&mut rng, cfg.proxy_noise) - cfg.proxy_floor).max(0.0))
        .collect::<Vec<_>>();

    let totals = tile_totals
        .iter()
        .fold(vec![0.0; l], |mut acc, t| {
            acc.iter_mut().zip(t).for_each(|(a, x)| *a += x);
            acc
        });
    let y = cfg
        .w_star
        .iter()
        .zip(&totals)
        .map(|(w, t)| w * t)
        .sum::<f64>()
        + normal(&mut rng, cfg.y_noise);

    let cluster = Cluster {
        id,
        center,
        jitter_km,
        tiles,
        y,
        proxy_layer,
    };
    let finite = cluster.y.is_finite()
        && cluster.proxy_layer.iter().all(|v| v.is_finite())
        && cluster
            .tiles
            .iter()
            .all(|t| t.lr_features.iter().all(|v| v.is_finite()));
    if !finite {
        return Err(Error::Generation(format!(
            "cluster {id} produced a non-finite value"
        )));
    }
    Ok(cluster)
}
