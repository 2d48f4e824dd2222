//! Joint training of the vision and audio networks, validation-based model
//! selection and evaluation against baselines.

pub mod config;
pub mod eval;
pub mod loss;
pub mod model;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adam::{adam_step, AdamState};
use crate::error::{Error, Result};
use crate::layers::{apply_stat_updates, BnMode, Ctx};
use crate::scene::dataset::Split;
use crate::scene::{generate_example, AssetBank, SceneConfig, TrainingExample};
use crate::seed::stream_seed;
use crate::tape::{Tape, Var};
use crate::tensor::Scalar;

pub use config::{Preset, TrainConfig};
pub use eval::{evaluate, mono_mono, rotated_scene, EvalReport};
pub use loss::{difference, loss_diff, loss_full, recover_channels, LossMode};
pub use model::{config_path, Model, ModelConfig};

/// Seed stream from which per-iteration batch seeds are drawn.
const BATCH_STREAM: u64 = 10;

/// Where training examples come from.
#[derive(Clone, Copy)]
pub enum TrainData<'a> {
    /// Fresh examples every iteration, drawn from the training seed stream.
    Generator(&'a AssetBank),
    /// A fixed set, sampled uniformly with replacement.
    Examples(&'a [TrainingExample]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iter: usize,
    pub train_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub val_loss: Option<f64>,
    pub wall_ms: u64,
}

pub struct TrainOutcome<T> {
    /// Parameters with the lowest validation loss.
    pub model: Model<T>,
    /// Optimizer state at the selected iteration.
    pub adam: AdamState<T>,
    pub best_iter: usize,
    pub best_val_loss: f64,
    pub log: Vec<LogRecord>,
}

/// Seed identifying the batch of iteration `iter`.
pub fn batch_seed(master: u64, iter: usize) -> u64 {
    stream_seed(master, BATCH_STREAM, iter as u64)
}

/// `count` unaugmented scenes from the validation stream.
pub fn validation_set(config: &TrainConfig, bank: &AssetBank) -> Result<Vec<TrainingExample>> {
    let scene = SceneConfig {
        augment: false,
        ..config.scene.clone()
    };
    (0..config.val_count as u64)
        .into_par_iter()
        .map(|i| generate_example(Split::Val.example_seed(config.seed, i), bank, &scene))
        .collect()
}

fn batch(config: &TrainConfig, data: TrainData<'_>, seed: u64) -> Result<Vec<TrainingExample>> {
    match data {
        TrainData::Generator(bank) => (0..config.batch_size as u64)
            .into_par_iter()
            .map(|i| generate_example(stream_seed(seed, Split::Train.stream(), i), bank, &config.scene))
            .collect(),
        TrainData::Examples(set) => {
            if set.is_empty() {
                return Err(Error::Empty("training set has no examples".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok((0..config.batch_size)
                .map(|_| set[rng.random_range(0..set.len())].clone())
                .collect())
        }
    }
}

/// Records the training objective on `ctx.tape`: the mean over `examples`
/// of the per-example L1 loss for the model's loss mode.
pub fn batch_loss<T: Scalar>(
    model: &Model<T>,
    ctx: &mut Ctx<'_, T>,
    examples: &[&TrainingExample],
) -> Result<Var> {
    let scenes: Vec<_> = examples.iter().map(|e| &e.scene).collect();
    let monos: Vec<_> = examples.iter().map(|e| e.mono.channel(0)).collect();
    let preds = model.forward(ctx, &scenes, &monos)?;
    let losses = preds
        .into_iter()
        .zip(examples)
        .map(|(p, e)| ctx.tape.l1_loss(p, model.config.loss_mode.target(&e.binaural)?))
        .collect::<Result<Vec<_>>>()?;
    let total = ctx.tape.sum(&losses)?;
    Ok(ctx.tape.scale(total, T::cast(1.0 / examples.len() as f64)))
}

/// Mean per-example loss with running batch-norm statistics.
pub fn validation_loss<T: Scalar>(model: &Model<T>, examples: &[TrainingExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Empty("validation set has no examples".into()));
    }
    let losses = examples
        .par_iter()
        .map(|e| {
            let mut tape = Tape::new();
            let bound = model.params.bind(&mut tape);
            let mut ctx = Ctx::new(&mut tape, &bound, &model.params, BnMode::Eval);
            let l = batch_loss(model, &mut ctx, &[e])?;
            Ok(tape.value(l).data()[0].as_f64())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// One optimizer step on `examples`; returns the batch loss before the step.
pub fn train_step<T: Scalar>(model: &mut Model<T>, adam: &mut AdamState<T>, examples: &[&TrainingExample]) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let mut ctx = Ctx::new(&mut tape, &bound, &model.params, BnMode::Train);
    let loss = batch_loss(model, &mut ctx, examples)?;
    let updates = std::mem::take(&mut ctx.updates);
    let value = tape.value(loss).data()[0].as_f64();
    if !value.is_finite() {
        return Ok(value);
    }
    let mut grads = tape.backward(loss)?;
    let g = model.params.collect_grads(&bound, &mut grads);
    adam_step(&mut model.params.trainable_mut(), &g, adam)?;
    apply_stat_updates(&mut model.params, &updates);
    Ok(value)
}

/// Trains a freshly initialized model. See [`train_from`].
pub fn train<T: Scalar>(
    config: &TrainConfig,
    data: TrainData<'_>,
    val: &[TrainingExample],
    on_log: &mut (dyn FnMut(&LogRecord) -> Result<()> + Send),
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    let model = Model::new(&config.model_config(), config.seed)?;
    train_from(config, model, data, val, on_log)
}

/// Runs `config.iterations` Adam steps starting from `model`, validating
/// every `config.eval_every` iterations and after the last, and returns
/// the parameters with the lowest validation loss. Every iteration is
/// reported to `on_log`.
pub fn train_from<T: Scalar>(
    config: &TrainConfig,
    model: Model<T>,
    data: TrainData<'_>,
    val: &[TrainingExample],
    on_log: &mut (dyn FnMut(&LogRecord) -> Result<()> + Send),
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if model.config != config.model_config() {
        return Err(Error::InvalidArgument(
            "initial model does not match the training configuration".into(),
        ));
    }
    if config.deterministic {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        return pool.install(|| run(config, model, data, val, on_log));
    }
    run(config, model, data, val, on_log)
}

fn run<T: Scalar>(
    config: &TrainConfig,
    mut model: Model<T>,
    data: TrainData<'_>,
    val: &[TrainingExample],
    on_log: &mut (dyn FnMut(&LogRecord) -> Result<()> + Send),
) -> Result<TrainOutcome<T>> {
    let start = Instant::now();
    let mut adam = AdamState::new(
        model.params.entries().iter().filter(|e| e.trainable).map(|e| e.value.shape()),
        config.lr,
    );
    let mut best: Option<(f64, usize, Model<T>, AdamState<T>)> = None;
    let mut log = Vec::with_capacity(config.iterations);
    for iter in 0..config.iterations {
        let seed = batch_seed(config.seed, iter);
        let examples = batch(config, data, seed)?;
        let refs: Vec<&TrainingExample> = examples.iter().collect();
        let train_loss = train_step(&mut model, &mut adam, &refs)?;
        if !train_loss.is_finite() || !model.params.all_finite() {
            return Err(Error::NonFiniteLoss {
                iteration: iter,
                lr: config.lr,
                batch_seed: seed,
            });
        }
        let done = iter + 1;
        let val_loss = if done % config.eval_every == 0 || done == config.iterations {
            let v = validation_loss(&model, val)?;
            if best.as_ref().is_none_or(|b| v < b.0) {
                best = Some((v, done, model.clone(), adam.clone()));
            }
            Some(v)
        } else {
            None
        };
        let rec = LogRecord {
            iter: done,
            train_loss,
            val_loss,
            wall_ms: start.elapsed().as_millis() as u64,
        };
        on_log(&rec)?;
        log.push(rec);
    }
    let (best_val_loss, best_iter, model, adam) = best.expect("the last iteration always validates");
    Ok(TrainOutcome {
        model,
        adam,
        best_iter,
        best_val_loss,
        log,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::instrument::Instrument;

    pub(crate) fn tiny_config() -> TrainConfig {
        let mut c = TrainConfig::desk().with_classes(&[Instrument::Guitar, Instrument::Violin]);
        c.vision.stage_channels = [4, 4, 4, 4];
        c.vision.head_channels = 4;
        c.vision.voxel_size = 0.1;
        c.audio.depth = 2;
        c.audio.initial_channels = 2;
        c.scene.clip_secs = 0.05;
        c.batch_size = 2;
        c.iterations = 4;
        c.eval_every = 2;
        c.val_count = 2;
        c.lr = 1e-3;
        c.seed = 3;
        c
    }

    fn quiet(_: &LogRecord) -> Result<()> {
        Ok(())
    }

    #[test]
    fn overfits_one_example() {
        let mut c = tiny_config();
        c.iterations = 50;
        c.batch_size = 1;
        c.eval_every = 50;
        let bank = AssetBank::procedural(&c.scene).unwrap();
        let mut scene = c.scene.clone();
        scene.augment = false;
        let ex = (0..)
            .map(|i| generate_example(i, &bank, &scene).unwrap())
            .find(|e| e.spec.sources.len() == 1)
            .unwrap();
        let set = vec![ex];
        let out = train::<f64>(&c, TrainData::Examples(&set), &set, &mut quiet).unwrap();
        let first = out.log[0].train_loss;
        let last = out.log.last().unwrap().train_loss;
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn seed_identical_runs_match_and_best_is_minimal() {
        let c = TrainConfig {
            deterministic: true,
            ..tiny_config()
        };
        let bank = AssetBank::procedural(&c.scene).unwrap();
        let val = validation_set(&c, &bank).unwrap();
        let a = train::<f32>(&c, TrainData::Generator(&bank), &val, &mut quiet).unwrap();
        let b = train::<f32>(&c, TrainData::Generator(&bank), &val, &mut quiet).unwrap();
        let bytes = |o: &TrainOutcome<f32>| o.model.checkpoint(Some(&o.adam)).to_bytes().unwrap();
        assert_eq!(bytes(&a), bytes(&b));
        let logged: Vec<f64> = a.log.iter().filter_map(|r| r.val_loss).collect();
        assert_eq!(logged.len(), 2);
        assert!(logged.iter().all(|&v| a.best_val_loss <= v));
        assert_eq!(validation_loss(&a.model, &val).unwrap(), a.best_val_loss);
    }

    #[test]
    fn diff_mode_has_one_output_channel() {
        let mut c = tiny_config();
        c.loss_mode = LossMode::Diff;
        c.iterations = 1;
        let bank = AssetBank::procedural(&c.scene).unwrap();
        let val = validation_set(&c, &bank).unwrap();
        let out = train::<f32>(&c, TrainData::Generator(&bank), &val, &mut quiet).unwrap();
        assert_eq!(out.model.config.audio.output_channels, 1);
        let ck = out.model.checkpoint(None);
        let last_dec = ck.get("audio.dec1.w2").unwrap();
        assert_eq!(last_dec.dim(1), 1);
        let p = out.model.predict(&val[0].scene, &val[0].mono).unwrap();
        assert_eq!(p.num_channels(), 2);
        assert_eq!(p.len(), val[0].mono.len());
    }

    #[test]
    fn non_finite_loss_aborts_with_diagnostic() {
        let c = tiny_config();
        let bank = AssetBank::procedural(&c.scene).unwrap();
        let mut model = Model::<f32>::new(&c.model_config(), 0).unwrap();
        let id = model.params.id("audio.dec1.b2").unwrap();
        model.params.get_mut(id).data_mut()[0] = f32::NAN;
        match train_from(&c, model, TrainData::Generator(&bank), &[], &mut quiet) {
            Err(Error::NonFiniteLoss { iteration, lr, batch_seed: s }) => {
                assert_eq!(iteration, 0);
                assert_eq!(lr, c.lr);
                assert_eq!(s, batch_seed(c.seed, 0));
            }
            other => panic!("expected a non-finite loss error, got {:?}", other.err()),
        }
    }

    #[test]
    fn mismatched_initial_model_is_rejected() {
        let c = tiny_config();
        let mut other = c.clone();
        other.loss_mode = LossMode::Diff;
        let m = Model::<f32>::new(&other.model_config(), 0).unwrap();
        let bank = AssetBank::procedural(&c.scene).unwrap();
        assert!(train_from(&c, m, TrainData::Generator(&bank), &[], &mut quiet).is_err());
    }
}
