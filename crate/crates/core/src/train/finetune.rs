use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{transfer_embedding, Checkpoint};
use super::config::{Reduction, Stage, TrainConfig};
use super::data::{AuData, AuFrame, FaceSample};
use super::model::{coefficient_tensor, GleeModel};
use super::pretrain::StepHook;
use crate::au::{total_loss_logits, DatasetStats};
use crate::embed::{GLOBAL_PREFIX, LOCAL_PREFIX};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::tensor::{Graph, SgdMomentum, Tensor, Var};

const SHUFFLE_STREAM: u64 = 0x2545_f491_4f6c_dd1d;

/// End-to-end AU finetuning with the weighted CE on initial and final
/// predictions. `init` supplies pretrained branches unless `fresh_start` is set.
pub fn finetune(
    data: &AuData,
    init: Option<&Checkpoint>,
    stats: &DatasetStats,
    config: &TrainConfig,
) -> Result<Checkpoint> {
    finetune_with(data, init, stats, config, &mut |_, _, _| Ok(()))
}

pub fn finetune_with(
    data: &AuData,
    init: Option<&Checkpoint>,
    stats: &DatasetStats,
    config: &TrainConfig,
    hook: &mut StepHook,
) -> Result<Checkpoint> {
    if config.stage != Stage::Finetune {
        return Err(Error::Config(format!(
            "finetuning needs stage `finetune`, got `{}`",
            config.stage
        )));
    }
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput("AU manifest is empty".into()));
    }
    let na = data.num_aus();
    if stats.num_aus() != na {
        return Err(Error::InvalidInput(format!(
            "statistics cover {} AUs but the manifest has {na}",
            stats.num_aus()
        )));
    }
    let mut config = config.clone();
    config.classifier.num_aus = na;
    let mut model = match (init, config.fresh_start) {
        (_, true) => GleeModel::new(&config.embedding, &config.classifier, config.seed)?,
        (None, false) => {
            return Err(Error::Config(
                "finetuning needs a pretrained checkpoint unless fresh_start is set".into(),
            ))
        }
        (Some(ckpt), false) => {
            config.embedding = ckpt.meta.config.embedding.clone();
            match ckpt.meta.stage {
                Stage::Pretrain => {
                    let mut m = GleeModel::new(&config.embedding, &config.classifier, config.seed)?;
                    transfer_embedding(&ckpt.model, &mut m)?;
                    m
                }
                Stage::Finetune => {
                    if ckpt.meta.num_aus != na {
                        return Err(Error::InvalidInput(format!(
                            "checkpoint predicts {} AUs but the manifest has {na}",
                            ckpt.meta.num_aus
                        )));
                    }
                    config.classifier = ckpt.model.classifier.config().clone();
                    ckpt.model.clone()
                }
            }
        }
    };
    if config.fixed_branches {
        model.store.set_trainable_prefix(GLOBAL_PREFIX, false);
        model.store.set_trainable_prefix(LOCAL_PREFIX, false);
    }
    // Fixed branches give fixed embeddings, so they are computed once.
    let cached: Option<Vec<Vec<f32>>> = if config.fixed_branches {
        let mut rows = Vec::with_capacity(data.len());
        for chunk in data.frames.chunks(32) {
            let samples: Vec<&FaceSample> = chunk.iter().map(|f| &f.sample).collect();
            rows.extend(model.embed(&samples)?.into_iter().map(|e| e.embedding));
        }
        Some(rows)
    } else {
        None
    };
    let mut opt = SgdMomentum::new(config.optimizer.learning_rate as f32, config.optimizer.momentum as f32);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut losses = Vec::with_capacity(config.epochs);
    let mut f1s = Vec::new();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let frames: Vec<&AuFrame> = chunk.iter().map(|&i| &data.frames[i]).collect();
            let embedded: Option<Vec<&[f32]>> = cached
                .as_ref()
                .map(|rows| chunk.iter().map(|&i| rows[i].as_slice()).collect());
            let weight = match config.optimizer.reduction {
                Reduction::Sum => 1.0,
                Reduction::Mean => 1.0 / frames.len() as f64,
            };
            let loss =
                au_step(&mut model, &mut opt, &frames, embedded.as_deref(), stats, weight).map_err(|e| match e {
                    Error::Numerical(msg) => Error::Numerical(format!("epoch {epoch}, batch {b}: {msg}")),
                    other => other,
                })?;
            total += loss;
            hook(epoch, b, &model)?;
        }
        losses.push(total / data.len() as f64);
        if config.stop_when_perfect {
            let f1 = evaluate(&model, data)?.report.average_f1;
            f1s.push(f1);
            if f1 == 1.0 {
                break;
            }
        }
    }
    Ok(Checkpoint::new(model, &config, losses, f1s))
}

/// One SGD step on `weight` times the summed total loss of a batch; returns
/// the unweighted sum.
fn au_step(
    model: &mut GleeModel,
    opt: &mut SgdMomentum,
    frames: &[&AuFrame],
    embedded: Option<&[&[f32]]>,
    stats: &DatasetStats,
    weight: f64,
) -> Result<f64> {
    let coeffs: Vec<&[f64]> = frames.iter().map(|f| f.f_exp.as_slice()).collect();
    let (grads, loss) = {
        let mut g = Graph::new(&model.store);
        let (initial, fused) = match embedded {
            Some(rows) => {
                let emb = Tensor::new(
                    &[rows.len(), rows[0].len()],
                    rows.iter().flat_map(|r| r.iter().copied()).collect(),
                )?;
                let emb = g.input(emb);
                let coeffs = g.input(coefficient_tensor(&coeffs)?);
                let features = g.concat_last(&[emb, coeffs])?;
                let vars = model.classifier.forward(&mut g, features)?;
                (vars.initial_logits, vars.final_logits)
            }
            None => {
                let samples: Vec<&FaceSample> = frames.iter().map(|f| &f.sample).collect();
                let vars = model.forward(&mut g, &samples, &coeffs)?;
                (vars.classifier.initial_logits, vars.classifier.final_logits)
            }
        };
        let (loss, seeds) = loss_seeds(&g, initial, fused, frames, stats, weight)?;
        (g.backward(&seeds)?, loss)
    };
    opt.step(&mut model.store, &grads)?;
    Ok(loss)
}

fn loss_seeds(
    g: &Graph,
    initial: Var,
    fused: Var,
    frames: &[&AuFrame],
    stats: &DatasetStats,
    scale: f64,
) -> Result<(f64, Vec<(Var, Tensor)>)> {
    let (iv, fv) = (g.value(initial), g.value(fused));
    let mut gi = Vec::with_capacity(iv.numel());
    let mut gf = Vec::with_capacity(fv.numel());
    let mut loss = 0.0;
    for (r, frame) in frames.iter().enumerate() {
        let zi: Vec<f64> = iv.row(r).iter().map(|&v| f64::from(v)).collect();
        let zf: Vec<f64> = fv.row(r).iter().map(|&v| f64::from(v)).collect();
        let (l, a, b) = total_loss_logits(&zi, &zf, &frame.labels, stats)?;
        loss += l;
        gi.extend(a.iter().map(|v| (v * scale) as f32));
        gf.extend(b.iter().map(|v| (v * scale) as f32));
    }
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("AU loss is {loss}")));
    }
    Ok((
        loss,
        vec![
            (initial, Tensor::new(iv.shape(), gi)?),
            (fused, Tensor::new(fv.shape(), gf)?),
        ],
    ))
}
