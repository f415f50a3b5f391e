//! Self-critical policy-gradient training.
//!
//! For every tile the policy samples an action vector from the
//! temperature-scaled probabilities and also takes the greedy one. The
//! advantage is the difference of their rewards; the gradient estimate is
//! `mean(advantage * grad log pi(sampled))` over a batch of tiles, followed by
//! a gradient-ascent step.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counts::ClassCounts;
use crate::detector::{DetectionTable, DetectorConfig};
use crate::error::{Error, Result};
use crate::policy::{
    forward, grad_log_likelihood, greedy_actions, init_params, log_likelihood, sample_actions,
    temperature_scale, ActionProbs, ActionVector, PolicyParams,
};
use crate::reward::{reward, RewardBreakdown};
use crate::rng::{keyed_rng, stream};
use crate::world::World;

/// A world with its detections precomputed.
#[derive(Debug, Clone)]
pub struct Env<'w> {
    pub world: &'w World,
    pub detections: DetectionTable,
}

impl<'w> Env<'w> {
    pub fn new(world: &'w World, detector: &DetectorConfig) -> Result<Self> {
        Ok(Env {
            world,
            detections: DetectionTable::build(world, detector)?,
        })
    }

    fn features(&self, tile: TileId) -> &[f64] {
        &self.world.clusters[tile.cluster as usize].tiles[tile.tile].lr_features
    }

    /// Every tile of the given clusters, in cluster then row-major order.
    pub fn tiles_of(&self, clusters: &[u32]) -> Vec<TileId> {
        let per = self.world.dims.tiles_per_cluster();
        clusters
            .iter()
            .flat_map(|&cluster| (0..per).map(move |tile| TileId { cluster, tile }))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TileId {
    pub cluster: u32,
    pub tile: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub tile: TileId,
    pub s_scaled: ActionProbs,
    pub a: ActionVector,
    pub v_hat: ClassCounts,
    pub reward: RewardBreakdown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    AdaptiveMoments,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub alpha_start: f64,
    pub alpha_end: f64,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub hidden: usize,
    pub seed: u64,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: 289,
            learning_rate: 1e-4,
            lambda: 1.0,
            alpha_start: 0.6,
            alpha_end: 0.95,
            optimizer: OptimizerKind::AdaptiveMoments,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            hidden: 16,
            seed: 0,
            checkpoint_every: 50,
        }
    }
}

impl TrainConfig {
    /// Settings for 64-cluster worlds: fewer epochs, a larger step.
    pub fn desk() -> Self {
        TrainConfig {
            epochs: 150,
            learning_rate: 5e-3,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.5 <= self.alpha_start && self.alpha_start <= self.alpha_end && self.alpha_end <= 1.0)
        {
            return bad("need 0.5 <= alpha_start <= alpha_end <= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and > 0");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and >= 0");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be > 0");
        }
        if self.hidden == 0 {
            return bad("hidden width must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_reward: f64,
    pub mean_abs_advantage: f64,
    pub acq_fraction: f64,
    pub mean_l1_gap: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        self.write_rows(out, None)
    }

    /// Same as [`TrainHistory::write_csv`] with a leading `config_hash` column.
    pub fn write_csv_tagged<W: Write>(&self, out: W, config_hash: &str) -> Result<()> {
        self.write_rows(out, Some(config_hash))
    }

    fn write_rows<W: Write>(&self, out: W, tag: Option<&str>) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let header = [
            "epoch",
            "mean_reward",
            "acq_fraction",
            "mean_l1_gap",
            "alpha",
            "mean_abs_advantage",
        ];
        let lead: Vec<String> = tag.iter().map(|t| t.to_string()).collect();
        let lead_header: &[&str] = if tag.is_some() { &["config_hash"] } else { &[] };
        w.write_record(lead_header.iter().chain(header.iter()))?;
        for r in &self.records {
            let row = [
                r.epoch.to_string(),
                r.mean_reward.to_string(),
                r.acq_fraction.to_string(),
                r.mean_l1_gap.to_string(),
                r.alpha.to_string(),
                r.mean_abs_advantage.to_string(),
            ];
            w.write_record(lead.iter().chain(row.iter()))?;
        }
        w.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }
}

/// Linear in epoch; a single-epoch run uses `alpha_end`.
pub fn alpha_schedule(epoch: usize, total_epochs: usize, alpha_start: f64, alpha_end: f64) -> f64 {
    if total_epochs <= 1 {
        return alpha_end;
    }
    alpha_start + (alpha_end - alpha_start) * epoch as f64 / (total_epochs - 1) as f64
}

fn episode(env: &Env<'_>, tile: TileId, s: ActionProbs, a: ActionVector, lambda: f64) -> Result<Episode> {
    let v_hat = env.detections.gated(tile.cluster, tile.tile, &a)?;
    let v_ref = env.detections.reference(tile.cluster, tile.tile);
    let reward = reward(&v_hat, v_ref, &a, lambda)?;
    Ok(Episode {
        tile,
        s_scaled: s,
        a,
        v_hat,
        reward,
    })
}

/// One sampled and one greedy episode on the same scaled probabilities.
pub fn rollout<R: Rng + ?Sized>(
    env: &Env<'_>,
    tile: TileId,
    params: &PolicyParams,
    alpha: f64,
    lambda: f64,
    rng: &mut R,
) -> Result<(Episode, Episode)> {
    let s = temperature_scale(&forward(params, env.features(tile))?, alpha)?;
    let sampled_a = sample_actions(&s, rng);
    let greedy_a = greedy_actions(&s);
    let sampled = episode(env, tile, s.clone(), sampled_a, lambda)?;
    let greedy = episode(env, tile, s, greedy_a, lambda)?;
    Ok((sampled, greedy))
}

pub fn advantage(sampled: &Episode, greedy: &Episode) -> f64 {
    sampled.reward.total - greedy.reward.total
}

/// What multiplies the score function in the gradient estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    /// `R(a) - R(a')` with `a'` the greedy action.
    SelfCritical,
    /// Raw `R(a)`.
    Plain,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BatchStats {
    pub episodes: usize,
    pub reward_sum: f64,
    pub abs_advantage_sum: f64,
    pub acquired: usize,
    pub subtiles: usize,
    pub l1_gap_sum: f64,
}

impl BatchStats {
    fn merge(mut self, o: BatchStats) -> BatchStats {
        self.episodes += o.episodes;
        self.reward_sum += o.reward_sum;
        self.abs_advantage_sum += o.abs_advantage_sum;
        self.acquired += o.acquired;
        self.subtiles += o.subtiles;
        self.l1_gap_sum += o.l1_gap_sum;
        self
    }
}

/// Rollouts per work unit. Fixed so the reduction tree never depends on the
/// thread count.
const CHUNK: usize = 64;

fn add_into(acc: &mut [f64], g: &[f64]) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}

fn pairwise_sum(mut parts: Vec<(Vec<f64>, BatchStats)>) -> (Vec<f64>, BatchStats) {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some((mut g, s)) = it.next() {
            if let Some((g2, s2)) = it.next() {
                add_into(&mut g, &g2);
                next.push((g, s.merge(s2)));
            } else {
                next.push((g, s));
            }
        }
        parts = next;
    }
    parts.pop().expect("non-empty batch")
}

/// Gradient estimate and rollout statistics for one batch.
///
/// Tile `i` of the batch draws from its own stream keyed by a batch key taken
/// from `rng` and `i`, so the result is identical for any thread count.
pub fn batch_gradient_with_stats<R: Rng + ?Sized>(
    env: &Env<'_>,
    tiles: &[TileId],
    params: &PolicyParams,
    alpha: f64,
    lambda: f64,
    estimator: Estimator,
    rng: &mut R,
) -> Result<(Vec<f64>, BatchStats)> {
    if tiles.is_empty() {
        return Err(Error::Validation("empty batch".into()));
    }
    let batch_key: u64 = rng.random();
    let n_params = params.shape().param_len();
    let parts = tiles
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut grad = vec![0.0; n_params];
            let mut stats = BatchStats::default();
            for (j, &tile) in chunk.iter().enumerate() {
                let i = (c * CHUNK + j) as u64;
                let mut tile_rng = keyed_rng(&[batch_key, stream::ROLLOUT, i]);
                let (sampled, greedy) = rollout(env, tile, params, alpha, lambda, &mut tile_rng)?;
                let adv = advantage(&sampled, &greedy);
                let weight = match estimator {
                    Estimator::SelfCritical => adv,
                    Estimator::Plain => sampled.reward.total,
                };
                if weight != 0.0 {
                    let g = grad_log_likelihood(params, env.features(tile), &sampled.a, alpha)?;
                    for (acc, gi) in grad.iter_mut().zip(&g) {
                        *acc += weight * gi;
                    }
                }
                let v_ref = env.detections.reference(tile.cluster, tile.tile);
                stats = stats.merge(BatchStats {
                    episodes: 1,
                    reward_sum: sampled.reward.total,
                    abs_advantage_sum: adv.abs(),
                    acquired: sampled.a.acquired(),
                    subtiles: sampled.a.len(),
                    l1_gap_sum: v_ref.l1_distance(&sampled.v_hat) as f64,
                });
            }
            Ok((grad, stats))
        })
        .collect::<Result<Vec<_>>>()?;
    let (mut grad, stats) = pairwise_sum(parts);
    let n = tiles.len() as f64;
    for g in &mut grad {
        *g /= n;
    }
    Ok((grad, stats))
}

/// Self-critical gradient estimate averaged over `tiles`.
pub fn batch_gradient<R: Rng + ?Sized>(
    env: &Env<'_>,
    tiles: &[TileId],
    params: &PolicyParams,
    alpha: f64,
    lambda: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    batch_gradient_with_stats(env, tiles, params, alpha, lambda, Estimator::SelfCritical, rng)
        .map(|(g, _)| g)
}

/// Largest subtile count for which exact enumeration is allowed.
pub const MAX_ENUMERATION_SUBTILES: usize = 12;

/// `sum_a pi(a) * (R(a) - baseline) * grad log pi(a)` over all `2^S` actions.
pub fn exact_policy_gradient_with_baseline(
    env: &Env<'_>,
    tile: TileId,
    params: &PolicyParams,
    alpha: f64,
    lambda: f64,
    baseline: f64,
) -> Result<Vec<f64>> {
    let s_len = params.shape().subtiles;
    if s_len > MAX_ENUMERATION_SUBTILES {
        return Err(Error::Config(format!(
            "exact gradient enumerates 2^S actions; S={s_len} exceeds {MAX_ENUMERATION_SUBTILES}"
        )));
    }
    let x = env.features(tile);
    let s = temperature_scale(&forward(params, x)?, alpha)?;
    let mut grad = vec![0.0; params.shape().param_len()];
    for k in 0..(1u64 << s_len) {
        let a = ActionVector::from_index(k, s_len);
        let prob = log_likelihood(&s, &a)?.exp();
        let r = episode(env, tile, s.clone(), a.clone(), lambda)?.reward.total;
        let g = grad_log_likelihood(params, x, &a, alpha)?;
        let w = prob * (r - baseline);
        for (acc, gi) in grad.iter_mut().zip(&g) {
            *acc += w * gi;
        }
    }
    Ok(grad)
}

/// The true policy gradient for one tile, by enumeration.
pub fn exact_policy_gradient(
    env: &Env<'_>,
    tile: TileId,
    params: &PolicyParams,
    alpha: f64,
    lambda: f64,
) -> Result<Vec<f64>> {
    exact_policy_gradient_with_baseline(env, tile, params, alpha, lambda, 0.0)
}

/// Optimizer bookkeeping carried across update steps.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl OptimizerState {
    pub fn sgd(n_params: usize) -> Self {
        OptimizerState {
            kind: OptimizerKind::Sgd,
            beta1: 0.0,
            beta2: 0.0,
            eps: 0.0,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn from_config(cfg: &TrainConfig, n_params: usize) -> Self {
        OptimizerState {
            kind: cfg.optimizer,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            ..Self::sgd(n_params)
        }
    }
}

/// Gradient ascent: `theta += lr * direction(gradient)`.
pub fn update_step(
    params: &mut PolicyParams,
    gradient: &[f64],
    state: &mut OptimizerState,
    learning_rate: f64,
) -> Result<()> {
    let n = params.shape().param_len();
    if gradient.len() != n || state.m.len() != n {
        return Err(Error::Shape {
            what: "gradient",
            expected: n,
            got: gradient.len(),
        });
    }
    if let Some(i) = gradient.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient component {i}")));
    }
    let mut next = params.theta().to_vec();
    match state.kind {
        OptimizerKind::Sgd => {
            for (t, g) in next.iter_mut().zip(gradient) {
                *t += learning_rate * g;
            }
        }
        OptimizerKind::AdaptiveMoments => {
            state.step += 1;
            let (b1, b2) = (state.beta1, state.beta2);
            let c1 = 1.0 - b1.powf(state.step as f64);
            let c2 = 1.0 - b2.powf(state.step as f64);
            for i in 0..n {
                let g = gradient[i];
                state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
                state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
                let m_hat = state.m[i] / c1;
                let v_hat = state.v[i] / c2;
                next[i] += learning_rate * m_hat / (v_hat.sqrt() + state.eps);
            }
        }
    }
    if let Some(i) = next.iter().position(|t| !t.is_finite()) {
        return Err(Error::NonFinite(format!("parameter {i} after update")));
    }
    params.theta_mut().copy_from_slice(&next);
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub history: TrainHistory,
    /// `(epochs completed, alpha of the last epoch, params)` every
    /// `checkpoint_every` epochs.
    pub checkpoints: Vec<(usize, f64, PolicyParams)>,
}

pub fn train(env: &Env<'_>, train_ids: &[u32], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_ids.is_empty() {
        return Err(Error::Config("no training clusters".into()));
    }
    for &id in train_ids {
        env.world.cluster(id)?;
    }
    let d = env.world.dims;
    let mut params = init_params(d.features, cfg.hidden, d.subtiles, cfg.seed)?;
    let mut opt = OptimizerState::from_config(cfg, params.shape().param_len());
    let mut history = TrainHistory::default();
    let mut checkpoints = Vec::new();
    let mut tiles = env.tiles_of(train_ids);

    for epoch in 0..cfg.epochs {
        let alpha = alpha_schedule(epoch, cfg.epochs, cfg.alpha_start, cfg.alpha_end);
        tiles.shuffle(&mut keyed_rng(&[cfg.seed, stream::SHUFFLE, epoch as u64]));
        let mut epoch_stats = BatchStats::default();
        for (b, batch) in tiles.chunks(cfg.batch_size).enumerate() {
            let mut rng = keyed_rng(&[cfg.seed, stream::ROLLOUT, epoch as u64, b as u64]);
            let (grad, stats) = batch_gradient_with_stats(
                env,
                batch,
                &params,
                alpha,
                cfg.lambda,
                Estimator::SelfCritical,
                &mut rng,
            )
            .map_err(|e| Error::TrainingAborted {
                epoch,
                reason: format!("batch {b}: {e}"),
            })?;
            update_step(&mut params, &grad, &mut opt, cfg.learning_rate).map_err(|e| {
                Error::TrainingAborted {
                    epoch,
                    reason: format!("batch {b}: {e}"),
                }
            })?;
            epoch_stats = epoch_stats.merge(stats);
        }
        let n = epoch_stats.episodes as f64;
        let record = EpochRecord {
            epoch,
            mean_reward: epoch_stats.reward_sum / n,
            mean_abs_advantage: epoch_stats.abs_advantage_sum / n,
            acq_fraction: epoch_stats.acquired as f64 / epoch_stats.subtiles as f64,
            mean_l1_gap: epoch_stats.l1_gap_sum / n,
            alpha,
        };
        log::debug!(
            "epoch {epoch}: reward {:.4} acq {:.3} gap {:.3} alpha {alpha:.3}",
            record.mean_reward,
            record.acq_fraction,
            record.mean_l1_gap
        );
        history.records.push(record);
        if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
            checkpoints.push((epoch + 1, alpha, params.clone()));
        }
    }
    Ok(TrainOutcome {
        params,
        history,
        checkpoints,
    })
}
