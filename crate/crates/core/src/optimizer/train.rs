use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::cg::cg_minimize;
use crate::data::{select, Dataset};
use crate::error::{NpgaError, Result};
use crate::objective::{
    pack, unpack, Batch, ModelConfig, ModelParams, Objective, ParamLayout, ParamVector, TargetEncoder,
};

/// One CG iteration on one minibatch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub epoch: usize,
    pub minibatch: usize,
    pub iteration: usize,
    pub cost: f64,
}

/// Summary of one minibatch visit, costs measured on its frozen noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchRecord {
    pub epoch: usize,
    pub minibatch: usize,
    pub size: usize,
    pub start_cost: f64,
    pub end_cost: f64,
    pub degraded: bool,
}

/// Everything needed to encode new data with a trained model.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub layout: ParamLayout,
    pub params: ParamVector,
    pub targets: TargetEncoder,
}

impl TrainedModel {
    pub fn unpack(&self) -> Result<ModelParams> {
        unpack(&self.params, &self.layout)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub trace: Vec<TraceRow>,
    pub batches: Vec<BatchRecord>,
}

impl TrainOutcome {
    pub fn degraded_batches(&self) -> usize {
        self.batches.iter().filter(|b| b.degraded).count()
    }
}

/// Independent random streams derived from one seed: autoencoder
/// initialisation, guidance-parameter initialisation, and training noise
/// (shuffling, corruption, rectifier noise), in that order.
pub fn rng_streams(seed: u64) -> (ChaCha8Rng, ChaCha8Rng, ChaCha8Rng) {
    let stream = |s: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        r.set_stream(s);
        r
    };
    (stream(0), stream(1), stream(2))
}

pub fn init_params(layout: &ParamLayout, seed: u64) -> Result<ParamVector> {
    let (mut ae, mut guide, _) = rng_streams(seed);
    pack(&ModelParams::init(layout, &mut ae, &mut guide), layout)
}

/// Minibatch training.
///
/// Every epoch shuffles the examples, cuts them into minibatches of
/// `minibatch_size` (one full batch when that exceeds N), draws corruption
/// and rectifier noise once per minibatch and runs `cg_iters_per_batch`
/// conjugate-gradient iterations on the blended objective under that noise.
pub fn train(dataset: &Dataset, config: &ModelConfig, initial: Option<ParamVector>) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(NpgaError::InvalidInput("cannot train on an empty dataset".into()));
    }
    let layout = config.layout_for(dataset)?;
    let encoder = TargetEncoder::fit(dataset, config)?;
    let targets = encoder.encode(dataset)?;
    let mut params = match initial {
        Some(p) => {
            unpack(&p, &layout)?;
            p
        }
        None => init_params(&layout, config.seed)?,
    };
    let (_, _, mut rng) = rng_streams(config.seed);
    let objective = Objective::new(config, &layout);
    let cg_opts = config.cg.clone().with_max_iters(config.cg_iters_per_batch);

    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::new();
    let mut batches = Vec::new();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for (mb, rows) in order.chunks(config.minibatch_size).enumerate() {
            let batch = Batch {
                clean: select(&dataset.features, rows),
                targets: targets.select_rows(rows),
            };
            let noise = objective.draw_noise(&batch.clean, &params, &mut rng)?;
            let outcome = cg_minimize(
                |x| {
                    let p = ParamVector { values: x.clone() };
                    let (cost, grad) = objective.evaluate(&batch, &p, &noise)?;
                    Ok((cost.total, grad.values))
                },
                params.values.clone(),
                &cg_opts,
            )?;
            for (it, cost) in outcome.trace.iter().enumerate() {
                trace.push(TraceRow {
                    epoch,
                    minibatch: mb,
                    iteration: it,
                    cost: *cost,
                });
            }
            batches.push(BatchRecord {
                epoch,
                minibatch: mb,
                size: rows.len(),
                start_cost: outcome.initial_cost,
                end_cost: outcome.final_cost(),
                degraded: outcome.degraded,
            });
            params = ParamVector { values: outcome.x };
        }
    }
    Ok(TrainOutcome {
        model: TrainedModel {
            config: config.clone(),
            layout,
            params,
            targets: encoder,
        },
        trace,
        batches,
    })
}
