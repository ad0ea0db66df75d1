use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::config::{Reduction, Stage, TrainConfig};
use super::data::{FaceSample, TripletData};
use super::model::{batch_of, GleeModel};
use crate::embed::{triplet_loss_grad, EMBED_DIM};
use crate::error::{Error, Result};
use crate::tensor::{Graph, SgdMomentum, Tensor};

/// Offset separating the shuffling stream from weight initialization.
const SHUFFLE_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

/// Called after every optimizer step with the epoch, batch and model.
pub type StepHook<'a> = dyn FnMut(usize, usize, &GleeModel) -> Result<()> + 'a;

/// Triplet pretraining of the global and local branches.
pub fn pretrain(data: &TripletData, config: &TrainConfig) -> Result<Checkpoint> {
    pretrain_with(data, config, &mut |_, _, _| Ok(()))
}

pub fn pretrain_with(data: &TripletData, config: &TrainConfig, hook: &mut StepHook) -> Result<Checkpoint> {
    if config.stage != Stage::Pretrain {
        return Err(Error::Config(format!(
            "pretraining needs stage `pretrain`, got `{}`",
            config.stage
        )));
    }
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput("triplet manifest is empty".into()));
    }
    let mut model = GleeModel::new(&config.embedding, &config.classifier, config.seed)?;
    let mut opt = SgdMomentum::new(config.optimizer.learning_rate as f32, config.optimizer.momentum as f32);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ SHUFFLE_STREAM);
    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let triplets: Vec<[usize; 3]> = chunk.iter().map(|&i| data.triplets[i]).collect();
            let weight = match config.optimizer.reduction {
                Reduction::Sum => 1.0,
                Reduction::Mean => 1.0 / triplets.len() as f64,
            };
            total += triplet_step(
                &mut model,
                &mut opt,
                &data.faces,
                &triplets,
                config.embedding.margin,
                weight,
            )
            .map_err(|e| match e {
                Error::Numerical(msg) => Error::Numerical(format!("epoch {epoch}, batch {b}: {msg}")),
                other => other,
            })?;
            hook(epoch, b, &model)?;
        }
        history.push(total / data.len() as f64);
    }
    Ok(Checkpoint::new(model, config, history, Vec::new()))
}

/// One SGD step on `weight` times the summed triplet loss of a batch;
/// returns the unweighted sum.
fn triplet_step(
    model: &mut GleeModel,
    opt: &mut SgdMomentum,
    faces: &[FaceSample],
    triplets: &[[usize; 3]],
    margin: f64,
    weight: f64,
) -> Result<f64> {
    // Each distinct face is embedded once per batch.
    let mut slot: BTreeMap<usize, usize> = BTreeMap::new();
    for &i in triplets.iter().flatten() {
        let next = slot.len();
        slot.entry(i).or_insert(next);
    }
    let mut unique = vec![0; slot.len()];
    for (&face, &s) in &slot {
        unique[s] = face;
    }
    let samples: Vec<&FaceSample> = unique.iter().map(|&i| &faces[i]).collect();
    let batch = batch_of(&samples)?;
    let grads = {
        let mut g = Graph::new(&model.store);
        let vars = batch.forward(&mut g, &model.embedding)?;
        let emb = g.value(vars.embedding);
        let row = |i: usize| -> Vec<f64> { emb.row(slot[&i]).iter().map(|&v| f64::from(v)).collect() };
        let mut seed = vec![0.0f64; unique.len() * EMBED_DIM];
        let mut loss = 0.0;
        for &[a, p, n] in triplets {
            let t = triplet_loss_grad(&row(a), &row(p), &row(n), margin)?;
            loss += t.loss;
            for (face, grad) in [(a, &t.anchor), (p, &t.positive), (n, &t.negative)] {
                let base = slot[&face] * EMBED_DIM;
                for (s, gv) in seed[base..base + EMBED_DIM].iter_mut().zip(grad) {
                    *s += gv * weight;
                }
            }
        }
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("triplet loss is {loss}")));
        }
        let seed = Tensor::new(&[unique.len(), EMBED_DIM], seed.iter().map(|&v| v as f32).collect())?;
        (g.backward(&[(vars.embedding, seed)])?, loss)
    };
    opt.step(&mut model.store, &grads.0)?;
    Ok(grads.1)
}

/// Fraction of triplets whose anchor is closer to the positive than to the
/// negative after unit normalization.
pub fn ranking_accuracy(model: &GleeModel, data: &TripletData) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidInput("no triplets to rank".into()));
    }
    let mut unit = Vec::with_capacity(data.faces.len());
    for chunk in data.faces.chunks(32) {
        let refs: Vec<&FaceSample> = chunk.iter().collect();
        for e in model.embed(&refs)? {
            let v: Vec<f64> = e.embedding.iter().map(|&x| f64::from(x)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::ZeroNorm);
            }
            unit.push(v.into_iter().map(|x| x / norm).collect::<Vec<_>>());
        }
    }
    let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let correct = data
        .triplets
        .iter()
        .filter(|&&[a, p, n]| d(&unit[a], &unit[p]) < d(&unit[a], &unit[n]))
        .count();
    Ok(correct as f64 / data.len() as f64)
}
