//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;
use tilesel::baselines::{no_dropping, Method};
use tilesel::detector::{DetectionTable, DetectorConfig};
use tilesel::downstream::{
    evaluate_pipeline, explained_variance, fit_gbdt, mse, pearson_r2, GbdtParams, PipelineOptions,
};
use tilesel::harness::{
    cost_report, run_experiment, sweep_lambda, BudgetSpec, ExperimentConfig, ExperimentReport,
    MethodSpec,
};
use tilesel::policy::{
    forward, grad_log_likelihood, greedy_actions, init_params, log_likelihood, temperature_scale,
    ActionProbs, ActionVector, PolicyParams, PolicyShape,
};
use tilesel::reward::reward;
use tilesel::rng::keyed_rng;
use tilesel::trainer::{
    batch_gradient, batch_gradient_with_stats, exact_policy_gradient,
    exact_policy_gradient_with_baseline, Env, Estimator, TileId, TrainConfig,
};
use tilesel::world::{generate_world, split_train_test, GenConfig, World};
use tilesel::ClassCounts;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

fn desk_world(clusters: usize, seed: u64) -> World {
    let cfg = GenConfig {
        clusters,
        ..GenConfig::desk()
    };
    generate_world(&cfg, seed).unwrap()
}

fn busiest_tile(env: &Env<'_>) -> TileId {
    let per = env.world.dims.tiles_per_cluster();
    let tile = (0..per)
        .max_by_key(|&t| (env.detections.reference(0, t).total(), std::cmp::Reverse(t)))
        .unwrap();
    TileId { cluster: 0, tile }
}

// ---- 1 ----

fn random_params(f: usize, h: usize, s: usize, seed: u64) -> PolicyParams {
    let mut rng = keyed_rng(&[seed, 900]);
    let shape = PolicyShape {
        features: f,
        hidden: h,
        subtiles: s,
    };
    let theta = (0..shape.param_len()).map(|_| 0.7 * rng.random_range(-1.0..1.0)).collect();
    PolicyParams::from_theta(shape, theta).unwrap()
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let (f, h, s, step) = (6, 5, 4, 1e-5);
    let loglik = |p: &PolicyParams, x: &[f64], a: &ActionVector, alpha: f64| {
        let q = temperature_scale(&forward(p, x).unwrap(), alpha).unwrap();
        log_likelihood(&q, a).unwrap()
    };
    let mut worst: f64 = 0.0;
    for fixture in 0..10u64 {
        let params = random_params(f, h, s, fixture);
        let mut rng = keyed_rng(&[fixture, 901]);
        let x: Vec<f64> = (0..f).map(|_| rng.random_range(-2.0..2.0)).collect();
        let a = ActionVector::from_bools((0..s).map(|_| rng.random()).collect());
        let alpha = 0.6 + 0.04 * fixture as f64;
        let analytic = grad_log_likelihood(&params, &x, &a, alpha).unwrap();
        let numeric: Vec<f64> = (0..params.theta().len())
            .map(|i| {
                let mut up = params.theta().to_vec();
                let mut down = up.clone();
                up[i] += step;
                down[i] -= step;
                let up = PolicyParams::from_theta(params.shape(), up).unwrap();
                let down = PolicyParams::from_theta(params.shape(), down).unwrap();
                (loglik(&up, &x, &a, alpha) - loglik(&down, &x, &a, alpha)) / (2.0 * step)
            })
            .collect();
        worst = worst.max(rel_l2(&analytic, &numeric));
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(worst < 1e-4, "max relative error {worst:.3e}");
    ensure!(secs < 1.0, "took {secs:.2} s");
    Ok(format!("10 fixtures, max rel err {worst:.2e}, {secs:.3} s"))
}

// ---- 2 ----

fn estimator_exactness() -> Outcome {
    let start = Instant::now();
    let world = desk_world(4, 1);
    let env = Env::new(&world, &DetectorConfig::default()).unwrap();
    let tile = busiest_tile(&env);
    let params = init_params(8, 16, 4, 2).unwrap();
    let exact = exact_policy_gradient(&env, tile, &params, 0.7, 1.0).unwrap();
    let batch = vec![tile; 200_000];
    let mc = batch_gradient(&env, &batch, &params, 0.7, 1.0, &mut keyed_rng(&[5])).unwrap();
    let err = rel_l2(&mc, &exact);
    let mut identity: f64 = 0.0;
    for b in [-37.5, -3.0, 0.25, 12.0] {
        let with = exact_policy_gradient_with_baseline(&env, tile, &params, 0.7, 1.0, b).unwrap();
        for (x, y) in with.iter().zip(&exact) {
            identity = identity.max((x - y).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(err < 0.02, "MC relative L2 error {err:.4}");
    ensure!(identity < 1e-8, "baseline changed the enumeration by {identity:.3e}");
    ensure!(secs < 30.0, "took {secs:.1} s");
    Ok(format!("MC rel L2 {err:.4}, baseline diff {identity:.1e}, {secs:.2} s"))
}

// ---- 3 ----

fn variance_reduction() -> Outcome {
    let world = desk_world(4, 1);
    let env = Env::new(&world, &DetectorConfig::default()).unwrap();
    let tiles = env.tiles_of(&[0, 1]);
    let params = init_params(8, 16, 4, 4).unwrap();
    let variances = |est: Estimator| -> Vec<f64> {
        let gs: Vec<Vec<f64>> = (0..50u64)
            .map(|b| {
                let mut rng = keyed_rng(&[77, b]);
                batch_gradient_with_stats(&env, &tiles, &params, 0.7, 1.0, est, &mut rng)
                    .unwrap()
                    .0
            })
            .collect();
        let n = gs.len() as f64;
        (0..gs[0].len())
            .map(|i| {
                let m = gs.iter().map(|g| g[i]).sum::<f64>() / n;
                gs.iter().map(|g| (g[i] - m).powi(2)).sum::<f64>() / (n - 1.0)
            })
            .collect()
    };
    let sc = variances(Estimator::SelfCritical);
    let plain = variances(Estimator::Plain);
    let diff = median(sc.iter().zip(&plain).map(|(a, b)| a - b).collect());
    let ratio = median(sc.iter().zip(&plain).map(|(a, b)| a / b).collect());
    ensure!(diff <= 0.0, "median variance difference {diff:.3e} > 0");
    Ok(format!("median var(self-critical)/var(plain) {ratio:.3}"))
}

// ---- 4 ----

fn reward_algebra() -> Outcome {
    let c = |v: &[u32]| ClassCounts::from_vec(v.to_vec());
    let z = c(&[0, 0, 0]);
    let r = reward(&z, &z, &ActionVector::zeros(4), 1.0).unwrap();
    ensure!(r.total == 1.0, "empty tile total {}", r.total);
    let v = c(&[4, 1, 7]);
    let r = reward(&v, &v, &ActionVector::ones(4), 1.0).unwrap();
    ensure!(r.total == 0.0, "perfect counts total {}", r.total);
    let one = ActionVector::from_bools(vec![true, false, false, false]);
    let r = reward(&c(&[2, 0, 1]), &c(&[4, 1, 1]), &one, 1.0).unwrap();
    ensure!(r.total == -2.25, "gap-3 total {}", r.total);

    let (s, lambda) = (4usize, 1.3);
    let xs: Vec<f64> = (0..=s).map(|n| n as f64).collect();
    let ys: Vec<f64> = (0..=s)
        .map(|n| {
            let a = ActionVector::from_bools((0..s).map(|k| k < n).collect());
            reward(&v, &v, &a, lambda).unwrap().r_cost
        })
        .collect();
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    let resid = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (my + slope * (x - mx) - y).abs())
        .fold(0.0, f64::max);
    ensure!((slope + lambda / s as f64).abs() < 1e-12, "slope {slope}");
    ensure!(resid < 1e-12, "residual {resid:.3e}");
    Ok(format!("unit examples exact, slope {slope:.6} (want {:.6})", -lambda / s as f64))
}

// ---- 5 ----

fn temperature_scaling() -> Outcome {
    let mut rng = keyed_rng(&[55]);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let s = ActionProbs::new((0..4).map(|_| rng.random_range(1e-6..1.0 - 1e-6)).collect()).unwrap();
        let id = temperature_scale(&s, 1.0).unwrap();
        let coin = temperature_scale(&s, 0.5).unwrap();
        for (a, b) in id.as_slice().iter().zip(s.as_slice()) {
            worst = worst.max((a - b).abs());
        }
        for a in coin.as_slice() {
            worst = worst.max((a - 0.5).abs());
        }
        for alpha in [0.5 + 1e-9, 0.6, 0.75, 0.9, 1.0] {
            let q = temperature_scale(&s, alpha).unwrap();
            ensure!(greedy_actions(&q) == greedy_actions(&s), "greedy changed at alpha {alpha}");
        }
    }
    ensure!(worst <= 1e-12, "deviation {worst:.3e}");
    Ok(format!("200 draws, max deviation {worst:.1e}"))
}

// ---- 6 and 8 share one experiment ----

struct Desk {
    report: ExperimentReport,
    secs: f64,
}

fn desk_experiment() -> &'static Desk {
    static CELL: OnceLock<Desk> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            methods: vec![
                MethodSpec::new(Method::Ours, None),
                MethodSpec::new(Method::Random, Some(BudgetSpec::Matched)),
                MethodSpec::new(Method::NoAcquisition, None),
            ],
            out_dir: dir.path().to_path_buf(),
            ..ExperimentConfig::default()
        };
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let start = Instant::now();
        let report = pool.install(|| run_experiment(&cfg)).unwrap();
        Desk {
            report,
            secs: start.elapsed().as_secs_f64(),
        }
    })
}

fn learning_signal() -> Outcome {
    let desk = desk_experiment();
    let r = &desk.report;
    let ratios: Vec<f64> = r
        .histories
        .iter()
        .map(|(_, h)| h.records.last().unwrap().mean_l1_gap / h.records[0].mean_l1_gap)
        .collect();
    let seeds: Vec<u64> = r.histories.iter().map(|(s, _)| *s).collect();
    let vs_random: Vec<f64> = seeds
        .iter()
        .map(|&s| {
            let ours = r.run_for(Method::Ours, "", s).unwrap().report.mean_l1_gap;
            let rand = r.run_for(Method::Random, "matched", s).unwrap().report.mean_l1_gap;
            ours / rand
        })
        .collect();
    let (gap, rel) = (median(ratios.clone()), median(vs_random.clone()));
    ensure!(seeds.len() == 3, "expected 3 seeds, got {}", seeds.len());
    ensure!(gap <= 0.6, "final/first training gap ratio {gap:.3} (per seed {ratios:.3?})");
    ensure!(rel <= 0.8, "ours/random test gap ratio {rel:.3} (per seed {vs_random:.3?})");
    ensure!(desk.secs < 300.0, "single-threaded run took {:.0} s", desk.secs);
    Ok(format!(
        "training gap ratio {gap:.3}, ours/random gap {rel:.3}, {:.1} s single-threaded",
        desk.secs
    ))
}

fn downstream_ordering() -> Outcome {
    let r = &desk_experiment().report;
    let r2 = |m: Method, b: &str| r.summary_for(m, b).unwrap().r2.mean;
    let (ours, random, zero) = (
        r2(Method::Ours, ""),
        r2(Method::Random, "matched"),
        r2(Method::NoAcquisition, ""),
    );
    ensure!(ours >= random && random >= zero, "r2 ours {ours:.4}, random {random:.4}, zero-mask {zero:.4}");
    Ok(format!("r2 ours {ours:.4} >= random {random:.4} >= zero-mask {zero:.4}"))
}

// ---- 7 ----

fn lambda_tradeoff() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        out_dir: dir.path().to_path_buf(),
        ..ExperimentConfig::default()
    };
    let table = sweep_lambda(&cfg, &[0.5, 1.0, 2.0]).unwrap();
    let points = table.summary();
    let fracs: Vec<f64> = points.iter().map(|p| p.1).collect();
    ensure!(points.iter().all(|p| p.3 == 3), "expected 3 seeds per lambda");
    ensure!(
        fracs.windows(2).all(|w| w[1] <= w[0]),
        "median fractions {fracs:.3?} rise with lambda"
    );
    let shown: Vec<String> = points.iter().map(|p| format!("{}: {:.3}", p.0, p.1)).collect();
    Ok(format!("median fraction by lambda {}", shown.join(", ")))
}

// ---- 9 ----

enum OTree {
    Leaf(f64),
    Split(usize, f64, Box<OTree>, Box<OTree>),
}

impl OTree {
    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            OTree::Leaf(v) => *v,
            OTree::Split(f, t, l, r) => {
                if x[*f] <= *t {
                    l.eval(x)
                } else {
                    r.eval(x)
                }
            }
        }
    }
}

fn sse(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m).powi(2)).sum()
}

fn oracle_tree(x: &[Vec<f64>], r: &[f64], idx: Vec<usize>, depth: usize, p: &GbdtParams) -> OTree {
    let vals: Vec<f64> = idx.iter().map(|&i| r[i]).collect();
    let leaf = || OTree::Leaf(vals.iter().sum::<f64>() / vals.len() as f64);
    if depth >= p.max_depth || idx.len() < 2 * p.min_leaf {
        return leaf();
    }
    let parent = sse(&vals);
    let floor = 1e-12 * (1.0 + vals.iter().map(|v| v * v).sum::<f64>());
    let mut best: Option<(f64, usize, f64)> = None;
    for f in 0..x[0].len() {
        let mut uniq: Vec<f64> = idx.iter().map(|&i| x[i][f]).collect();
        uniq.sort_by(f64::total_cmp);
        uniq.dedup();
        for &t in &uniq[..uniq.len() - 1] {
            let (l, rr): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| x[i][f] <= t);
            if l.len() < p.min_leaf || rr.len() < p.min_leaf {
                continue;
            }
            let part = |ids: &[usize]| sse(&ids.iter().map(|&i| r[i]).collect::<Vec<_>>());
            let gain = parent - part(&l) - part(&rr);
            let better = best.is_none_or(|(g, _, _)| gain > g + 1e-12 * (1.0 + g.abs()));
            if gain > floor && better {
                best = Some((gain, f, t));
            }
        }
    }
    match best {
        None => leaf(),
        Some((_, f, t)) => {
            let (l, rr): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| x[i][f] <= t);
            OTree::Split(
                f,
                t,
                Box::new(oracle_tree(x, r, l, depth + 1, p)),
                Box::new(oracle_tree(x, r, rr, depth + 1, p)),
            )
        }
    }
}

fn gbdt_correctness() -> Outcome {
    let mut rng = keyed_rng(&[2020]);
    let x: Vec<Vec<f64>> = (0..20)
        .map(|_| {
            vec![
                rng.random_range(0..6) as f64,
                rng.random_range(-3.0..3.0),
                rng.random_range(0..3) as f64,
            ]
        })
        .collect();
    let y: Vec<f64> = x
        .iter()
        .map(|r| 0.8 * r[0] - r[1] * r[1] + 2.0 * r[2] + rng.random_range(-0.5..0.5))
        .collect();
    let p = GbdtParams {
        n_trees: 40,
        ..GbdtParams::default()
    };
    let staged = fit_gbdt(&x, &y, &p).unwrap().staged_predict(&x);

    let mut pred = vec![y.iter().sum::<f64>() / y.len() as f64; y.len()];
    let mut worst: f64 = 0.0;
    let mut last_mse = f64::INFINITY;
    for (stage, ours) in staged.iter().enumerate() {
        if stage > 0 {
            let r: Vec<f64> = y.iter().zip(&pred).map(|(a, b)| a - b).collect();
            let tree = oracle_tree(&x, &r, (0..y.len()).collect(), 0, &p);
            for (pi, row) in pred.iter_mut().zip(&x) {
                *pi += p.shrinkage * tree.eval(row);
            }
        }
        for (a, b) in ours.iter().zip(&pred) {
            worst = worst.max((a - b).abs());
        }
        let m = mse(&y, ours).unwrap();
        ensure!(m <= last_mse, "training MSE rose at stage {stage}");
        last_mse = m;
    }
    ensure!(worst < 1e-10, "oracle deviation {worst:.3e}");

    let gen = GenConfig {
        y_noise: 0.0,
        ..GenConfig::default()
    };
    let world = generate_world(&gen, 7).unwrap();
    let table = DetectionTable::build(&world, &DetectorConfig::perfect()).unwrap();
    let split = split_train_test(&world, 0.2, 0).unwrap();
    let full = evaluate_pipeline(&world.clusters, &table, &split, &PipelineOptions::default(), |c| {
        Ok(no_dropping(c))
    })
    .unwrap();
    ensure!(full.r2 >= 0.95, "noiseless full-acquisition r2 {:.4}", full.r2);
    Ok(format!(
        "{} stages, oracle deviation {worst:.1e}, noiseless r2 {:.4}",
        staged.len(),
        full.r2
    ))
}

// ---- 10 ----

fn metric_identities() -> Outcome {
    let mut rng = keyed_rng(&[10]);
    let y: Vec<f64> = (0..40).map(|_| rng.random_range(-10.0..10.0)).collect();
    let h: Vec<f64> = y.iter().map(|v| 0.5 * v + rng.random_range(-4.0..4.0)).collect();
    let base = pearson_r2(&y, &h).unwrap();
    let mut worst: f64 = 0.0;
    for (a, b) in [(3.0, -7.0), (-2.5, 4.0), (0.01, 100.0), (-40.0, 0.0)] {
        let moved: Vec<f64> = h.iter().map(|v| a * v + b).collect();
        worst = worst.max((pearson_r2(&y, &moved).unwrap() - base).abs());
    }
    ensure!(worst < 1e-12, "pearson r2 moved by {worst:.3e}");
    let y4 = [1.0, 2.0, 3.0, 6.0];
    let off: Vec<f64> = y4.iter().map(|v| v + 5.0).collect();
    let (ev, m) = (explained_variance(&y4, &off).unwrap(), mse(&y4, &off).unwrap());
    ensure!(ev == 1.0 && m == 25.0, "offset gave EV {ev}, MSE {m}");
    Ok(format!("affine deviation {worst:.1e}, offset EV {ev}, MSE {m}"))
}

// ---- 11 ----

fn cost_arithmetic() -> Outcome {
    let c = cost_report(240_000.0, 15.0, 0.19).unwrap();
    ensure!(c.savings == 2_916_000.0, "savings {}", c.savings);
    Ok(format!("savings {}", c.savings))
}

// ---- 12 ----

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn run_cli(bin: &str, args: &[String]) -> Result<(), String> {
    let out = Command::new(bin).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "{} {} failed: {}",
            bin,
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn cli_determinism() -> Outcome {
    let tilesel = env!("CARGO_BIN_EXE_tilesel");
    let worldgen = env!("CARGO_BIN_EXE_worldgen");
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let gen = GenConfig {
        clusters: 30,
        ..GenConfig::desk()
    };
    let gen_path = root.join("gen.json");
    fs::write(&gen_path, serde_json::to_string(&gen).unwrap()).unwrap();
    let mut exp = ExperimentConfig::default();
    exp.world.generate = gen;
    exp.train = TrainConfig {
        epochs: 6,
        checkpoint_every: 3,
        ..TrainConfig::desk()
    };
    exp.seeds = vec![0, 1];
    let exp_path = root.join("exp.json");
    fs::write(&exp_path, serde_json::to_string(&exp).unwrap()).unwrap();

    let out = root.join("out");
    let p = |rel: &str| out.join(rel).display().to_string();
    let s = |v: &str| v.to_string();
    let (gen_s, exp_s) = (gen_path.display().to_string(), exp_path.display().to_string());
    let tilesel_runs: Vec<Vec<String>> = vec![
        vec![s("--config"), gen_s.clone(), s("--seed"), s("3"), s("generate-world"), s("--out"), p("world.json")],
        vec![s("--config"), exp_s.clone(), s("--out-dir"), p("train"), s("train-policy"), s("--world"), p("world.json")],
        vec![s("--config"), exp_s.clone(), s("--out-dir"), p("eval"), s("eval")],
        vec![
            s("--config"), exp_s.clone(), s("--out-dir"), p("eval_ck"), s("eval"),
            s("--world"), p("world.json"), s("--checkpoint"), p("train/checkpoints/seed_0/final.json"),
        ],
        vec![s("--config"), exp_s.clone(), s("run-baseline"), s("--method"), s("random"), s("--fraction"), s("0.25"), s("--out"), p("random")],
        vec![s("--config"), exp_s.clone(), s("run-baseline"), s("--method"), s("stochastic"), s("--matched"), s("--out"), p("stochastic")],
        vec![s("--config"), exp_s.clone(), s("--out-dir"), p("sweep"), s("sweep-lambda"), s("--lambdas"), s("0.5,2")],
        vec![s("cost-report"), s("--area"), s("240000"), s("--price"), s("15"), s("--fraction"), s("0.19"), s("--out"), p("cost.csv")],
    ];
    let worldgen_run = vec![s("generate"), s("--config"), gen_s, s("--seed"), s("3"), s("--out"), p("world_wg.json")];
    fs::create_dir_all(&out).unwrap();

    let mut snapshots = Vec::new();
    for threads in ["1", "3"] {
        for args in &tilesel_runs {
            let mut a = vec![s("--threads"), s(threads)];
            a.extend(args.iter().cloned());
            run_cli(tilesel, &a)?;
        }
        run_cli(worldgen, &worldgen_run)?;
        snapshots.push(snapshot(&out));
    }
    let (first, second) = (&snapshots[0], &snapshots[1]);
    let differing: Vec<String> = first
        .iter()
        .filter(|(k, v)| second.get(*k) != Some(v))
        .map(|(k, _)| k.display().to_string())
        .collect();
    ensure!(first.len() == second.len(), "file sets differ");
    ensure!(differing.is_empty(), "changed on re-run: {differing:?}");
    ensure!(first[Path::new("world.json")] == first[Path::new("world_wg.json")], "worldgen and generate-world disagree");
    let csvs = first.keys().filter(|k| k.extension().is_some_and(|e| e == "csv")).count();
    let jsons = first.keys().filter(|k| k.extension().is_some_and(|e| e == "json")).count();
    Ok(format!("{} commands, {csvs} CSV and {jsons} JSON files identical across re-runs", tilesel_runs.len() + 1))
}

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 12] = [
        ("gradient correctness", gradient_correctness),
        ("estimator exactness", estimator_exactness),
        ("variance reduction", variance_reduction),
        ("reward algebra", reward_algebra),
        ("temperature scaling", temperature_scaling),
        ("learning signal", learning_signal),
        ("lambda trade-off direction", lambda_tradeoff),
        ("downstream ordering", downstream_ordering),
        ("gbdt correctness", gbdt_correctness),
        ("metric identities", metric_identities),
        ("cost arithmetic", cost_arithmetic),
        ("determinism", cli_determinism),
    ];
    // keep panic messages out of the report lines
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS [{}] {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{}] {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
