//! Subcommand implementations.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use p2s_core::audio::{AudioClip, WavEncoding};
use p2s_core::cloud::PointCloud;
use p2s_core::instrument::Instrument;
use p2s_core::scene::dataset::{generate_dataset, load_dataset, DatasetInfo, Split, DATASET_FILE};
use p2s_core::scene::{AssetBank, SceneConfig, TrainingExample};
use p2s_core::train::{self, rotated_scene, validation_set, LogRecord, Model, TrainConfig, TrainData};
use p2s_core::Error;
use serde::Serialize;

use crate::config::{layered, log_resolved, require_dir, require_file, usage, CliError};
use crate::{BinauralizeArgs, EvaluateArgs, GenDataArgs, TrainArgs};

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_pretty<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::Runtime(Error::Io {
        path: path.to_path_buf(),
        source: e,
    }))
}

fn load_split(dir: &Path, what: &str) -> Result<(DatasetInfo, Vec<TrainingExample>), CliError> {
    require_dir(dir, what)?;
    require_file(&dir.join(DATASET_FILE), &format!("{what} index"))?;
    Ok(load_dataset(dir)?)
}

pub fn gen_data(a: &GenDataArgs) -> Result<(), CliError> {
    let mut defaults = DatasetInfo {
        split: Split::Train,
        count: 0,
        seed: 0,
        scene: SceneConfig::desk_train(),
    };
    // test splits default to the longer evaluation clips
    let split = match a.split {
        Some(s) => s,
        None => layered(&defaults, a.config.as_deref())?.split,
    };
    if split == Split::Test {
        defaults.scene = SceneConfig::desk_eval();
    }
    let mut info = layered(&defaults, a.config.as_deref())?;
    if let Some(n) = a.count {
        info.count = n;
    }
    if let Some(s) = a.seed {
        info.seed = s;
    }
    if let Some(s) = a.split {
        info.split = s;
    }
    if let Some(c) = a.clip_secs {
        info.scene.clip_secs = c;
    }
    if let Some(r) = a.sample_rate {
        info.scene.sample_rate = r;
    }
    if let Some(names) = &a.classes {
        info.scene.classes = names
            .iter()
            .map(|n| n.parse::<Instrument>())
            .collect::<Result<_, _>>()
            .map_err(usage)?;
    }
    info.scene.augment = info.split.augments();
    if info.count == 0 {
        return Err(CliError::Usage("--count must be >= 1".into()));
    }
    info.scene.validate().map_err(usage)?;
    log_resolved("gen-data", &info);
    let start = Instant::now();
    let info = generate_dataset(&a.out, &info)?;
    eprintln!(
        "wrote {} {} examples to {} in {} ms",
        info.count,
        info.split,
        a.out.display(),
        start.elapsed().as_millis()
    );
    Ok(())
}

pub fn train(a: &TrainArgs, threads: usize) -> Result<(), CliError> {
    let preset = a.preset.unwrap_or(train::Preset::Desk);
    let mut cfg = layered(&TrainConfig::preset(preset), a.config.as_deref())?;
    if let Some(v) = a.loss {
        cfg.loss_mode = v;
    }
    if let Some(v) = a.features {
        cfg.feature_mode = v;
    }
    if let Some(v) = a.iterations {
        cfg.iterations = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.eval_every {
        cfg.eval_every = v;
    }
    if let Some(v) = a.voxel_size {
        cfg.vision.voxel_size = v;
    }
    if threads == 1 {
        cfg.deterministic = true;
    }
    let train_set = match &a.data {
        Some(dir) => {
            let (info, examples) = load_split(dir, "dataset")?;
            cfg.scene = info.scene;
            Some(examples)
        }
        None => None,
    };
    let val_set = match &a.val_data {
        Some(dir) => Some(load_split(dir, "validation dataset")?.1),
        None => None,
    };
    if let Some(init) = &a.init {
        require_file(init, "initial checkpoint")?;
    }
    cfg.resolve();
    cfg.validate().map_err(usage)?;
    log_resolved("train", &cfg);

    let bank = if train_set.is_none() || val_set.is_none() {
        Some(AssetBank::procedural(&cfg.scene)?)
    } else {
        None
    };
    let val = match val_set {
        Some(v) => v,
        None => validation_set(&cfg, bank.as_ref().expect("bank built without a validation set"))?,
    };
    let data = match &train_set {
        Some(set) => TrainData::Examples(set),
        None => TrainData::Generator(bank.as_ref().expect("bank built without a training set")),
    };
    let model = match &a.init {
        Some(p) => Model::<f32>::load(p)?,
        None => Model::new(&cfg.model_config(), cfg.seed)?,
    };

    let log_path = a.log.clone().unwrap_or_else(|| with_suffix(&a.out, ".log.jsonl"));
    let file = File::create(&log_path).map_err(|e| Error::Io {
        path: log_path.clone(),
        source: e,
    })?;
    let mut log = BufWriter::new(file);
    let mut on_log = |r: &LogRecord| -> p2s_core::Result<()> {
        let line = serde_json::to_string(r).map_err(|source| Error::Json {
            path: log_path.clone(),
            source,
        })?;
        writeln!(log, "{line}").map_err(|e| Error::Io {
            path: log_path.clone(),
            source: e,
        })?;
        if r.val_loss.is_some() {
            eprintln!("{line}");
        }
        Ok(())
    };
    let outcome = train::train_from(&cfg, model, data, &val, &mut on_log)?;
    log.flush().map_err(|e| Error::Io {
        path: log_path.clone(),
        source: e,
    })?;
    outcome.model.save(&a.out, Some(&outcome.adam))?;
    write_pretty(&with_suffix(&a.out, ".train.json"), &cfg)?;
    eprintln!(
        "best validation loss {:.6} at iteration {}; checkpoint {}",
        outcome.best_val_loss,
        outcome.best_iter,
        a.out.display()
    );
    Ok(())
}

pub fn binauralize(a: &BinauralizeArgs) -> Result<(), CliError> {
    require_file(&a.ckpt, "checkpoint")?;
    require_file(&a.scene, "scene")?;
    require_file(&a.mono, "mono input")?;
    let model = Model::<f32>::load(&a.ckpt)?;
    let mut scene = PointCloud::load(&a.scene)?;
    if a.rotate {
        scene = rotated_scene(&scene);
    }
    let mono = AudioClip::read_wav(&a.mono)?;
    let start = Instant::now();
    let out = model.predict(&scene, &mono)?;
    eprintln!(
        "rendered {:.3} s of audio in {} ms",
        mono.len() as f64 / mono.sample_rate() as f64,
        start.elapsed().as_millis()
    );
    out.write_wav(&a.out, WavEncoding::Float32)?;
    Ok(())
}

pub fn evaluate(a: &EvaluateArgs) -> Result<(), CliError> {
    require_file(&a.ckpt, "checkpoint")?;
    let (info, examples) = load_split(&a.data, "dataset")?;
    if info.split != Split::Test {
        return Err(CliError::Usage(format!(
            "{} holds a {} split; evaluation needs a test split",
            a.data.display(),
            info.split
        )));
    }
    let model = Model::<f32>::load(&a.ckpt)?;
    let report = train::evaluate(&model, &examples)?;
    write_pretty(&a.out, &report)?;
    for (name, m) in [
        ("model", &report.model),
        ("mono-mono", &report.mono_mono),
        ("rotated-visual", &report.rotated_visual),
    ] {
        eprintln!(
            "{name:>15}: env {:.4}  stft {:.4}",
            m.env.avg.unwrap_or(f64::NAN),
            m.stft.avg.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
