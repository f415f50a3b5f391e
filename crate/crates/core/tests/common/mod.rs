#![allow(dead_code)]

use tilesel::world::{generate_world, Cluster, Dims, GenConfig, SubTile, Tile, World};
use tilesel::ClassCounts;

/// Desk-scale world with `clusters` clusters.
pub fn desk_world(clusters: usize, seed: u64) -> World {
    let cfg = GenConfig {
        clusters,
        ..GenConfig::desk()
    };
    generate_world(&cfg, seed).expect("desk world")
}

/// A `g x g` cluster whose subtile truths and features come from closures.
pub fn cluster_with(
    id: u32,
    g: usize,
    s: usize,
    truth: impl Fn(usize, usize) -> Vec<u32>,
    features: impl Fn(usize) -> Vec<f64>,
) -> Cluster {
    Cluster {
        id,
        center: (0.0, 30.0),
        jitter_km: 0.0,
        tiles: (0..g * g)
            .map(|t| Tile {
                row: (t / g) as u32,
                col: (t % g) as u32,
                subtiles: (0..s)
                    .map(|k| SubTile {
                        truth: ClassCounts::from_vec(truth(t, k)),
                    })
                    .collect(),
                lr_features: features(t),
            })
            .collect(),
        y: id as f64,
        proxy_layer: vec![0.0; g * g],
    }
}

/// Wraps hand-built clusters into a world with matching dimensions.
pub fn world_of(clusters: Vec<Cluster>) -> World {
    let first = &clusters[0];
    let g = (first.tiles.len() as f64).sqrt().round() as usize;
    let dims = Dims {
        classes: first.tiles[0].subtiles[0].truth.len(),
        subtiles: first.tiles[0].subtiles.len(),
        features: first.tiles[0].lr_features.len(),
        grid: g,
    };
    let config = GenConfig {
        classes: dims.classes,
        subtiles: dims.subtiles,
        features: dims.features,
        grid: g,
        clusters: clusters.len(),
        intensity_means: vec![1.0; dims.classes],
        w_star: vec![0.0; dims.classes],
        ..GenConfig::default()
    };
    let world = World {
        dims,
        config,
        seed: 0,
        w_star: vec![0.0; dims.classes],
        clusters,
    };
    world.validate().expect("hand-built world");
    world
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

pub fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den
}
