mod common;

use rand::Rng;
use tilesel::baselines::{
    counts_pred_policy, fixed_policy, green_policy, no_dropping, proxy_layer_policy,
    random_policy, select, stochastic_policy, stochastic_weights, BaselineContext, Budget,
    CountsPredictor, Method, ProxyMode, SelectionMask,
};
use tilesel::detector::{DetectionTable, DetectorConfig};
use tilesel::rng::keyed_rng;
use tilesel::world::Cluster;

fn plain_cluster(g: usize) -> Cluster {
    common::cluster_with(0, g, 4, |_, _| vec![0, 0], |t| vec![t as f64, 1.0])
}

fn selected_tiles(m: &SelectionMask) -> Vec<usize> {
    (0..m.tiles()).filter(|&t| m.is_selected(t, 0)).collect()
}

#[test]
fn fixed_eighteen_percent_on_eight_by_eight() {
    let m = fixed_policy(&plain_cluster(8), 0.18).unwrap();
    let rc = |r: usize, c: usize| r * 8 + c;
    let mut want = vec![
        rc(3, 3),
        rc(3, 4),
        rc(4, 3),
        rc(4, 4),
        rc(2, 2),
        rc(2, 3),
        rc(2, 4),
        rc(2, 5),
        rc(3, 2),
        rc(3, 5),
        rc(4, 2),
        rc(4, 5),
    ];
    want.sort_unstable();
    assert_eq!(selected_tiles(&m), want);
    assert_eq!(m.acquired(), 12 * 4);
    // whole tiles only
    for t in want {
        assert_eq!(m.tile_actions(t).acquired(), 4);
    }
}

#[test]
fn random_inclusion_is_uniform() {
    let c = plain_cluster(8);
    let seeds = 10_000u64;
    let mut hits = [0u32; 64];
    for seed in 0..seeds {
        let m = random_policy(&c, 0.25, &mut keyed_rng(&[seed, 31])).unwrap();
        assert_eq!(m.tiles_touched(), 16);
        for t in selected_tiles(&m) {
            hits[t] += 1;
        }
    }
    for h in hits {
        let p = f64::from(h) / seeds as f64;
        assert!((p - 0.25).abs() < 0.02, "inclusion {p}");
    }
    let a = random_policy(&c, 0.25, &mut keyed_rng(&[1])).unwrap();
    let b = random_policy(&c, 0.25, &mut keyed_rng(&[1])).unwrap();
    assert_eq!(a, b);
}

/// Successive draws proportional to the remaining weights.
fn roulette<R: Rng>(weights: &[f64], k: usize, rng: &mut R) -> Vec<usize> {
    let mut left: Vec<usize> = (0..weights.len()).collect();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let total: f64 = left.iter().map(|&i| weights[i]).sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = left.len() - 1;
        for (j, &i) in left.iter().enumerate() {
            if u < weights[i] {
                pick = j;
                break;
            }
            u -= weights[i];
        }
        out.push(left.remove(pick));
    }
    out
}

#[test]
fn stochastic_inclusion_matches_roulette() {
    let g = 8;
    let c = plain_cluster(g);
    let w = stochastic_weights(g);
    let trials = 20_000u64;
    let (mut ours, mut oracle) = (vec![0u32; g * g], vec![0u32; g * g]);
    let mut oracle_rng = keyed_rng(&[4242]);
    for seed in 0..trials {
        let m = stochastic_policy(&c, 0.2, &mut keyed_rng(&[seed, 32])).unwrap();
        assert_eq!(m.tiles_touched(), 13);
        for t in selected_tiles(&m) {
            ours[t] += 1;
        }
        for t in roulette(&w, 13, &mut oracle_rng) {
            oracle[t] += 1;
        }
    }
    let p = |h: u32| f64::from(h) / trials as f64;
    for t in 0..g * g {
        assert!((p(ours[t]) - p(oracle[t])).abs() < 0.03, "tile {t}");
    }
    let centre = [27, 28, 35, 36];
    let best = centre.iter().map(|&t| ours[t]).min().unwrap();
    let rim_max = (0..64).filter(|t| !centre.contains(t)).map(|t| ours[t]).max().unwrap();
    assert!(best > rim_max);
}

#[test]
fn green_matches_sort_oracle() {
    let world = common::desk_world(3, 4);
    for c in &world.clusters {
        for k in [1, 5, 17, 64] {
            let m = green_policy(c, k).unwrap();
            let mut idx: Vec<usize> = (0..64).collect();
            idx.sort_by(|&a, &b| {
                let ga = c.tiles[a].lr_features[7];
                let gb = c.tiles[b].lr_features[7];
                ga.partial_cmp(&gb).unwrap().then(a.cmp(&b))
            });
            let mut want = idx[..k].to_vec();
            want.sort_unstable();
            assert_eq!(selected_tiles(&m), want);
        }
    }
}

#[test]
fn settlement_and_nightlight_sets() {
    let mut c = plain_cluster(3);
    c.proxy_layer = vec![0.0, 2.0, 0.5, 0.0, 2.0, 0.0, 3.0, 0.0, 0.1];
    let night = proxy_layer_policy(&c, ProxyMode::Nightlights, 0).unwrap();
    assert_eq!(selected_tiles(&night), vec![1, 2, 4, 6, 8]);
    let top = proxy_layer_policy(&c, ProxyMode::Settlement, 3).unwrap();
    assert_eq!(selected_tiles(&top), vec![1, 4, 6]);
    let two = proxy_layer_policy(&c, ProxyMode::Settlement, 2).unwrap();
    // 2.0 ties between tiles 1 and 4 go to the earlier tile
    assert_eq!(selected_tiles(&two), vec![1, 6]);
}

#[test]
fn counts_predictor_recovers_linear_ranking() {
    let g = 4;
    // tile t holds t + 1 objects, feature 0 equals t
    let make = |id| {
        common::cluster_with(
            id,
            g,
            2,
            |t, k| if k == 0 { vec![t as u32 + 1, 0] } else { vec![0, 0] },
            |t| vec![t as f64, 0.5 * (t % 3) as f64],
        )
    };
    let world = common::world_of(vec![make(0), make(1), make(2)]);
    let det = DetectionTable::build(&world, &DetectorConfig::perfect()).unwrap();
    let pred = CountsPredictor::fit(&world, &det, &[0, 1]).unwrap();
    assert!((pred.coef[0] - 1.0).abs() < 1e-4);
    let m = counts_pred_policy(&pred, &world.clusters[2], 5).unwrap();
    assert_eq!(selected_tiles(&m), vec![11, 12, 13, 14, 15]);
    assert_eq!(CountsPredictor::fit(&world, &det, &[0, 1]).unwrap(), pred);
}

#[test]
fn dispatch_respects_budgets() {
    let world = common::desk_world(2, 9);
    let c = &world.clusters[0];
    let ctx = BaselineContext {
        predictor: None,
        policy: None,
    };
    let mut rng = keyed_rng(&[0]);
    for method in [Method::Fixed, Method::Random, Method::Stochastic, Method::Green, Method::Settlement] {
        let m = select(method, c, Some(Budget::Tiles(10)), &ctx, &mut rng).unwrap();
        assert_eq!(m.tiles_touched(), 10, "{method}");
        assert_eq!(m.acquired(), 40);
        let f = select(method, c, Some(Budget::Fraction(0.25)), &ctx, &mut rng).unwrap();
        assert_eq!(f.fraction(), 0.25, "{method}");
        assert!(select(method, c, None, &ctx, &mut rng).unwrap_err().is_config());
    }
    assert_eq!(select(Method::NoDropping, c, None, &ctx, &mut rng).unwrap(), no_dropping(c));
    assert!(select(Method::Ours, c, None, &ctx, &mut rng).is_err());
    assert!(select(Method::CountsPred, c, Some(Budget::Tiles(3)), &ctx, &mut rng).is_err());
    assert!(select(Method::Green, c, Some(Budget::Tiles(65)), &ctx, &mut rng).is_err());
}
