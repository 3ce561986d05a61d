//! Desk-scale trainer for the loss functions.
//!
//! A two-branch linear embedding (one map for ground features, one for
//! satellite features, each followed by L2 normalization) is trained with
//! plain SGD on a synthetic dataset. Ground views taken off-center carry a
//! large nuisance component in feature dimensions that centered views barely
//! excite; the semi-positive term is the only one that pushes the ground map
//! to suppress it.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{binomial_loss, loss_gradient, trinomial_loss, LossParams, PairBatch};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyDatasetParams {
    pub num_tiles: usize,
    /// Dimensions carrying tile identity.
    pub signal_dim: usize,
    /// Dimensions excited by off-center viewpoints.
    pub nuisance_dim: usize,
    pub train_views_per_tile: usize,
    pub eval_views_per_tile: usize,
    pub satellite_noise: f64,
    pub ground_noise: f64,
    /// Scale of the nuisance component in semi-positive ground views.
    pub nuisance_scale: f64,
}

impl Default for ToyDatasetParams {
    fn default() -> Self {
        ToyDatasetParams {
            num_tiles: 64,
            signal_dim: 16,
            nuisance_dim: 16,
            train_views_per_tile: 4,
            eval_views_per_tile: 4,
            satellite_noise: 0.2,
            ground_noise: 0.6,
            nuisance_scale: 1.5,
        }
    }
}

/// Raw features for one satellite view per tile plus positive and
/// semi-positive ground views, each labelled with its tile.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    pub params: ToyDatasetParams,
    pub seed: u64,
    pub satellite: Vec<Vec<f64>>,
    pub train_pos: Vec<Vec<Vec<f64>>>,
    pub train_semi: Vec<Vec<Vec<f64>>>,
    pub eval_pos: Vec<Vec<Vec<f64>>>,
    pub eval_semi: Vec<Vec<Vec<f64>>>,
}

impl ToyDataset {
    pub fn generate(params: ToyDatasetParams, seed: u64) -> Result<Self> {
        if params.num_tiles < 2 || params.signal_dim == 0 || params.train_views_per_tile == 0 {
            return Err(Error::config(
                "toy dataset needs at least 2 tiles, one signal dimension and one training view",
            ));
        }
        let feature_dim = params.signal_dim + params.nuisance_dim;
        let mut rng = stream_rng(seed, "toy-latent", 0);
        let latent: Vec<Vec<f64>> = (0..params.num_tiles)
            .map(|_| normals(&mut rng, params.signal_dim, 1.0))
            .collect();

        let view = |rng: &mut StreamRng, tile: usize, noise: f64, nuisance: f64| {
            let mut x = Vec::with_capacity(feature_dim);
            x.extend(latent[tile].iter().map(|c| c + noise * std_normal(rng)));
            x.extend((0..params.nuisance_dim).map(|_| {
                let scale = if nuisance > 0.0 { nuisance } else { noise };
                scale * std_normal(rng)
            }));
            x
        };

        let mut rng = stream_rng(seed, "toy-satellite", 0);
        let satellite = (0..params.num_tiles)
            .map(|t| view(&mut rng, t, params.satellite_noise, 0.0))
            .collect();
        let split = |label: &str, views: usize, nuisance: f64| -> Vec<Vec<Vec<f64>>> {
            let mut rng = stream_rng(seed, label, 0);
            (0..params.num_tiles)
                .map(|t| {
                    (0..views)
                        .map(|_| view(&mut rng, t, params.ground_noise, nuisance))
                        .collect()
                })
                .collect()
        };
        let train_pos = split("toy-train-pos", params.train_views_per_tile, 0.0);
        let train_semi = split("toy-train-semi", params.train_views_per_tile, params.nuisance_scale);
        let eval_pos = split("toy-eval-pos", params.eval_views_per_tile, 0.0);
        let eval_semi = split("toy-eval-semi", params.eval_views_per_tile, params.nuisance_scale);
        Ok(ToyDataset {
            params,
            seed,
            satellite,
            train_pos,
            train_semi,
            eval_pos,
            eval_semi,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.params.signal_dim + self.params.nuisance_dim
    }

    pub fn num_tiles(&self) -> usize {
        self.satellite.len()
    }
}

fn std_normal(rng: &mut StreamRng) -> f64 {
    StandardNormal.sample(rng)
}

fn normals(rng: &mut StreamRng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * std_normal(rng)).collect()
}

/// Dense `out_dim x in_dim` matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap {
    pub out_dim: usize,
    pub in_dim: usize,
    pub weights: Vec<f64>,
}

impl LinearMap {
    fn random(rng: &mut StreamRng, out_dim: usize, in_dim: usize) -> Self {
        let scale = 1.0 / (in_dim as f64).sqrt();
        LinearMap {
            out_dim,
            in_dim,
            weights: normals(rng, out_dim * in_dim, scale),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.in_dim)
            .map(|row| row.iter().zip(x).map(|(w, v)| w * v).sum())
            .collect()
    }

    /// Normalized output and the pre-normalization norm.
    fn embed(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let u = self.apply(x);
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return (vec![f64::NAN; u.len()], norm);
        }
        let norm = norm.max(1e-12);
        (u.into_iter().map(|v| v / norm).collect(), norm)
    }

    fn add_outer(&mut self, scale: f64, left: &[f64], right: &[f64]) {
        for (row, l) in self.weights.chunks_exact_mut(self.in_dim).zip(left) {
            let f = scale * l;
            for (w, r) in row.iter_mut().zip(right) {
                *w += f * r;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Binomial,
    Trinomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub epochs: usize,
    pub lr: f64,
    /// Binomial epochs run before `epochs` with `loss`.
    pub warmup_binomial_epochs: usize,
    pub embedding_dim: usize,
    pub anchors_per_batch: usize,
    pub negatives_per_anchor: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::Trinomial,
            epochs: 15,
            lr: 0.5,
            warmup_binomial_epochs: 30,
            embedding_dim: 16,
            anchors_per_batch: 8,
            negatives_per_anchor: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub recall_pos_at1: f64,
    pub recall_semi_at1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub loss: LossKind,
    pub params: LossParams,
    pub config: TrainConfig,
    /// Mean batch loss per epoch, warm-up epochs first.
    pub loss_curve: Vec<f64>,
    pub initial: RecallReport,
    pub recall_pos_at1: f64,
    pub recall_semi_at1: f64,
}

struct Model {
    ground: LinearMap,
    satellite: LinearMap,
}

/// Fraction of held-out ground views whose own tile ranks first among all
/// satellite embeddings.
pub fn recall_at_1(ground: &LinearMap, satellite: &LinearMap, data: &ToyDataset) -> RecallReport {
    let sats: Vec<Vec<f64>> = data.satellite.iter().map(|x| satellite.embed(x).0).collect();
    let recall = |views: &[Vec<Vec<f64>>]| {
        let mut hits = 0usize;
        let mut total = 0usize;
        for (tile, tile_views) in views.iter().enumerate() {
            for x in tile_views {
                let g = ground.embed(x).0;
                let best = sats
                    .iter()
                    .map(|s| dot(&g, s))
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |b, (i, v)| if v > b.1 { (i, v) } else { b })
                    .0;
                hits += usize::from(best == tile);
                total += 1;
            }
        }
        if total == 0 {
            0.0
        } else {
            hits as f64 / total as f64
        }
    };
    RecallReport {
        recall_pos_at1: recall(&data.eval_pos),
        recall_semi_at1: recall(&data.eval_semi),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Pair<'a> {
    ground: &'a [f64],
    tile: usize,
}

/// Trains the two-branch linear embedding; the trainer is single-threaded so
/// updates happen in a fixed order and the result depends only on `seed`.
pub fn train_toy_embedding(
    data: &ToyDataset,
    params: &LossParams,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainReport> {
    params.validate()?;
    if cfg.epochs == 0 {
        return Err(Error::config("training needs at least one epoch"));
    }
    if cfg.embedding_dim == 0 || cfg.anchors_per_batch == 0 {
        return Err(Error::config("embedding_dim and anchors_per_batch must be positive"));
    }
    if !(cfg.lr.is_finite() && cfg.lr >= 0.0) {
        return Err(Error::config(format!("learning rate must be >= 0, got {}", cfg.lr)));
    }

    let mut init_rng = stream_rng(seed, "toy-init", 0);
    let mut model = Model {
        ground: LinearMap::random(&mut init_rng, cfg.embedding_dim, data.feature_dim()),
        satellite: LinearMap::random(&mut init_rng, cfg.embedding_dim, data.feature_dim()),
    };
    let initial = recall_at_1(&model.ground, &model.satellite, data);

    let mut rng = stream_rng(seed, "toy-batches", 0);
    let schedule = std::iter::repeat_n(LossKind::Binomial, cfg.warmup_binomial_epochs)
        .chain(std::iter::repeat_n(cfg.loss, cfg.epochs));
    let mut loss_curve = Vec::new();
    for (epoch, kind) in schedule.enumerate() {
        let mean = run_epoch(&mut model, data, params, cfg, kind, &mut rng);
        if !mean.is_finite() {
            return Err(Error::Divergence { epoch, loss: mean });
        }
        loss_curve.push(mean);
    }

    let fin = recall_at_1(&model.ground, &model.satellite, data);
    Ok(TrainReport {
        seed,
        loss: cfg.loss,
        params: *params,
        config: *cfg,
        loss_curve,
        initial,
        recall_pos_at1: fin.recall_pos_at1,
        recall_semi_at1: fin.recall_semi_at1,
    })
}

fn run_epoch(
    model: &mut Model,
    data: &ToyDataset,
    params: &LossParams,
    cfg: &TrainConfig,
    kind: LossKind,
    rng: &mut StreamRng,
) -> f64 {
    let n_tiles = data.num_tiles();
    let mut anchors: Vec<usize> = (0..n_tiles).collect();
    anchors.shuffle(rng);
    let mut total = 0.0;
    let mut batches = 0usize;
    for chunk in anchors.chunks(cfg.anchors_per_batch) {
        let mut pos = Vec::new();
        let mut semi = Vec::new();
        let mut neg = Vec::new();
        for &t in chunk {
            let views = data.params.train_views_per_tile;
            let g = &data.train_pos[t][rng.random_range(0..views)];
            pos.push(Pair { ground: g, tile: t });
            semi.push(Pair {
                ground: &data.train_semi[t][rng.random_range(0..views)],
                tile: t,
            });
            for _ in 0..cfg.negatives_per_anchor {
                let mut other = rng.random_range(0..n_tiles - 1);
                if other >= t {
                    other += 1;
                }
                neg.push(Pair { ground: g, tile: other });
            }
        }
        if kind == LossKind::Binomial {
            semi.clear();
        }
        total += sgd_step(model, data, params, cfg.lr, kind, &pos, &semi, &neg);
        batches += 1;
    }
    total / batches as f64
}

/// One forward/backward pass; returns the batch loss before the update.
#[allow(clippy::too_many_arguments)]
fn sgd_step(
    model: &mut Model,
    data: &ToyDataset,
    params: &LossParams,
    lr: f64,
    kind: LossKind,
    pos: &[Pair],
    semi: &[Pair],
    neg: &[Pair],
) -> f64 {
    struct Fwd {
        g: Vec<f64>,
        g_norm: f64,
        s: Vec<f64>,
        s_norm: f64,
        sim: f64,
    }
    let forward = |p: &Pair| {
        let (g, g_norm) = model.ground.embed(p.ground);
        let (s, s_norm) = model.satellite.embed(&data.satellite[p.tile]);
        let sim = dot(&g, &s);
        Fwd { g, g_norm, s, s_norm, sim }
    };
    let f_pos: Vec<Fwd> = pos.iter().map(forward).collect();
    let f_semi: Vec<Fwd> = semi.iter().map(forward).collect();
    let f_neg: Vec<Fwd> = neg.iter().map(forward).collect();
    let batch = PairBatch {
        s_pos: f_pos.iter().map(|f| f.sim).collect(),
        s_semi: f_semi.iter().map(|f| f.sim).collect(),
        s_neg: f_neg.iter().map(|f| f.sim).collect(),
    };
    let loss = match kind {
        LossKind::Binomial => binomial_loss(&batch.s_pos, &batch.s_neg, params),
        LossKind::Trinomial => trinomial_loss(&batch, params),
    };
    if lr == 0.0 || !loss.is_finite() {
        return loss;
    }
    let grad = loss_gradient(&batch, params);

    let mut d_ground = LinearMap { weights: vec![0.0; model.ground.weights.len()], ..model.ground };
    let mut d_sat = LinearMap { weights: vec![0.0; model.satellite.weights.len()], ..model.satellite };
    let groups = [(pos, &f_pos, &grad.pos), (semi, &f_semi, &grad.semi), (neg, &f_neg, &grad.neg)];
    for (pairs, fwd, dl) in groups {
        for ((p, f), &dl_ds) in pairs.iter().zip(fwd.iter()).zip(dl.iter()) {
            // d<g, s>/du_g = (s - sim g) / |u_g|, and symmetrically for the satellite side.
            let dg: Vec<f64> = f.s.iter().zip(&f.g).map(|(s, g)| (s - f.sim * g) / f.g_norm).collect();
            let ds: Vec<f64> = f.g.iter().zip(&f.s).map(|(g, s)| (g - f.sim * s) / f.s_norm).collect();
            d_ground.add_outer(dl_ds, &dg, p.ground);
            d_sat.add_outer(dl_ds, &ds, &data.satellite[p.tile]);
        }
    }
    for (w, d) in model.ground.weights.iter_mut().zip(&d_ground.weights) {
        *w -= lr * d;
    }
    for (w, d) in model.satellite.weights.iter_mut().zip(&d_sat.weights) {
        *w -= lr * d;
    }
    loss
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ToyDataset {
        ToyDataset::generate(
            ToyDatasetParams { num_tiles: 16, ..Default::default() },
            3,
        )
        .unwrap()
    }

    fn quick(loss: LossKind, lr: f64) -> TrainConfig {
        TrainConfig { loss, lr, epochs: 3, warmup_binomial_epochs: 2, ..Default::default() }
    }

    #[test]
    fn dataset_is_deterministic_and_shaped() {
        let a = small();
        assert_eq!(a, small());
        assert_eq!(a.satellite.len(), 16);
        assert_eq!(a.train_semi[5].len(), 4);
        assert_eq!(a.eval_pos[0][0].len(), a.feature_dim());
        assert!(ToyDataset::generate(ToyDatasetParams { num_tiles: 1, ..Default::default() }, 0).is_err());
    }

    #[test]
    fn zero_learning_rate_keeps_untrained_recall() {
        let data = small();
        let report = train_toy_embedding(&data, &LossParams::default(), &quick(LossKind::Trinomial, 0.0), 5).unwrap();
        assert_eq!(report.initial.recall_pos_at1, report.recall_pos_at1);
        assert_eq!(report.initial.recall_semi_at1, report.recall_semi_at1);
        assert_eq!(report.loss_curve.len(), 5);
    }

    #[test]
    fn training_is_deterministic() {
        let data = small();
        let cfg = quick(LossKind::Trinomial, 0.5);
        let a = train_toy_embedding(&data, &LossParams::default(), &cfg, 8).unwrap();
        let b = train_toy_embedding(&data, &LossParams::default(), &cfg, 8).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn training_reduces_loss() {
        let data = small();
        let cfg = TrainConfig { epochs: 20, warmup_binomial_epochs: 0, ..Default::default() };
        let r = train_toy_embedding(&data, &LossParams::default(), &cfg, 1).unwrap();
        assert!(r.loss_curve.last().unwrap() < r.loss_curve.first().unwrap());
        assert!(r.recall_pos_at1 > r.initial.recall_pos_at1);
    }

    #[test]
    fn divergence_is_reported() {
        let data = small();
        let cfg = TrainConfig { lr: f64::MAX, ..quick(LossKind::Binomial, 0.0) };
        let err = train_toy_embedding(&data, &LossParams::default(), &cfg, 1).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err}");
    }

    #[test]
    fn backprop_matches_finite_differences() {
        // Perturb one ground weight and compare the loss change to the SGD step.
        let data = small();
        let params = LossParams::default();
        let mut rng = stream_rng(2, "fd", 0);
        let model = Model {
            ground: LinearMap::random(&mut rng, 4, data.feature_dim()),
            satellite: LinearMap::random(&mut rng, 4, data.feature_dim()),
        };
        let pos = [Pair { ground: &data.train_pos[0][0], tile: 0 }];
        let semi = [Pair { ground: &data.train_semi[1][0], tile: 1 }];
        let neg = [Pair { ground: &data.train_pos[0][0], tile: 2 }];
        let eval = |m: &Model| {
            let mut m2 = Model { ground: m.ground.clone(), satellite: m.satellite.clone() };
            sgd_step(&mut m2, &data, &params, 0.0, LossKind::Trinomial, &pos, &semi, &neg)
        };
        // A unit learning rate leaves `w - dL/dw` in the weights.
        let mut stepped = Model { ground: model.ground.clone(), satellite: model.satellite.clone() };
        sgd_step(&mut stepped, &data, &params, 1.0, LossKind::Trinomial, &pos, &semi, &neg);
        for idx in [0usize, 7, 40, 100] {
            let analytic = model.ground.weights[idx] - stepped.ground.weights[idx];
            let h = 1e-6;
            let mut plus = Model { ground: model.ground.clone(), satellite: model.satellite.clone() };
            plus.ground.weights[idx] += h;
            let mut minus = Model { ground: model.ground.clone(), satellite: model.satellite.clone() };
            minus.ground.weights[idx] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            assert!((analytic - numeric).abs() < 1e-6 * analytic.abs().max(1e-3), "{analytic} vs {numeric}");
        }
    }
}
