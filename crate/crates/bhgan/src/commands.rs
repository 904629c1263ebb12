//! The work behind each subcommand, callable without the argument parser.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use bhgan_core::dataset::{split_dataset, synthesize_mask, Corpus, Sample, SplitSpec};
use bhgan_core::eval::{self, linear_interp_fill, EvalReport};
use bhgan_core::net;
use bhgan_core::seed;
use bhgan_core::texture::{layered_texture, TextureConfig};
use bhgan_core::train::{self, LogRecord, ModelParams, TrainHooks, TrainLog};
use bhgan_core::{dataset::make_sample, ImageGray};
use log::{info, warn};
use serde::Serialize;

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::grid::{panel_grid, render_comparison};
use crate::image_io::{self, load_corpus, load_image, load_mask, save_image, save_mask, write_atomic, write_gray};

/// Epoch index used to draw masks for held-out images, so evaluation masks
/// never coincide with a training epoch's masks.
pub const EVAL_EPOCH: u64 = u64::MAX;

/// Header of the training log.
pub const LOG_HEADER: &str = "iteration,g_loss,c_global_loss,c_local_loss,recon_mse,wall_s";

/// Images shown in each training snapshot.
const SNAPSHOT_ROWS: usize = 4;

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json(value: &impl Serialize, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Write `<stem>.mask.pgm` for every image in the data directory, into
/// `out` when given and next to the images otherwise.
pub fn make_masks(run: &RunConfig, out: Option<&Path>) -> Result<Vec<PathBuf>> {
    let data = run.data_dir()?;
    if let Some(dir) = out {
        create_dir(dir)?;
    }
    let mut written = Vec::new();
    for (index, path) in image_io::list_images(data)?.iter().enumerate() {
        if let Err(e) = load_image(path) {
            warn!("skipping {e}");
            continue;
        }
        let mask = synthesize_mask(seed::mask_seed(run.train.seed, index, 0), &run.mask)?;
        let target = image_io::mask_path_for(path, out);
        save_mask(&mask, &target)?;
        info!("{}: coverage {:.3}", target.display(), mask.coverage());
        written.push(target);
    }
    if written.is_empty() {
        return Err(Error::format(data, "no valid images to mask"));
    }
    Ok(written)
}

/// Write a synthetic layered-texture corpus of `count` images.
pub fn synth(out: &Path, count: usize, seed_value: u64) -> Result<Vec<PathBuf>> {
    create_dir(out)?;
    let cfg = TextureConfig::default();
    (0..count)
        .map(|i| {
            let path = out.join(format!("tex_{i:03}.pgm"));
            let img = layered_texture(seed::derive(seed_value, &[seed::purpose::TEXTURE, i as u64]), &cfg);
            save_image(&img, &path)?;
            Ok(path)
        })
        .collect()
}

/// Train/test partition of a corpus under a run seed.
pub struct Partition {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn partition(corpus: &Corpus, seed_value: u64) -> Result<Partition> {
    let (train, test) = split_dataset(corpus.len(), &SplitSpec::new(seed_value))?;
    Ok(Partition { train, test })
}

#[derive(Serialize)]
struct SplitFile<'a> {
    seed: u64,
    train: Vec<&'a str>,
    test: Vec<&'a str>,
}

struct FileHooks<'a> {
    run: &'a RunConfig,
    out: PathBuf,
    log: fs::File,
    start: Instant,
    preview: Vec<Sample>,
}

impl FileHooks<'_> {
    fn snapshot(&self, state: &ModelParams) -> Result<()> {
        let filled = self
            .preview
            .iter()
            .map(|s| net::inpaint(&state.nets.generator, &state.net, &s.gapped, &s.mask))
            .collect::<bhgan_core::Result<Vec<_>>>()?;
        let rows: Vec<Vec<&ImageGray>> =
            self.preview.iter().zip(&filled).map(|(s, f)| vec![&s.gapped, f, &s.truth]).collect();
        let tag = format!("iter_{:06}", state.iteration);
        write_gray(&panel_grid(&rows), &self.out.join("snapshots").join(format!("{tag}.pgm")))?;
        save_checkpoint(state, self.run, &self.out.join("checkpoints").join(format!("{tag}.bhgan")))?;
        info!("snapshot {tag}");
        Ok(())
    }
}

impl TrainHooks for FileHooks<'_> {
    type Error = Error;

    fn now_s(&mut self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    fn on_record(&mut self, r: &LogRecord) -> Result<()> {
        writeln!(
            self.log,
            "{},{},{},{},{},{}",
            r.iteration, r.g_loss, r.c_global_loss, r.c_local_loss, r.recon_mse, r.wall_s
        )
        .map_err(|e| Error::io(self.out.join("train_log.csv"), e))?;
        if r.iteration % 50 == 0 || r.iteration == 1 {
            info!("{r}");
        }
        Ok(())
    }

    fn on_snapshot(&mut self, state: &ModelParams) -> Result<()> {
        self.snapshot(state)
    }
}

/// Keep the header and the rows up to `iteration` of an existing log.
fn truncate_log(path: &Path, iteration: u64) -> Result<()> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut kept = String::from(LOG_HEADER);
    kept.push('\n');
    for line in text.lines().skip(1) {
        let it: Option<u64> = line.split(',').next().and_then(|v| v.parse().ok());
        if it.is_some_and(|it| it <= iteration) {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    write_atomic(path, kept.as_bytes())
}

pub struct TrainOutcome {
    pub state: ModelParams,
    pub log: TrainLog,
    pub model_path: PathBuf,
}

/// Split the corpus, train on the training part and write the log,
/// snapshots, checkpoints and the final model under the output directory.
/// With `resume`, training continues from that checkpoint.
pub fn train(run: &RunConfig, resume: Option<ModelParams>) -> Result<TrainOutcome> {
    let out = run.out_dir()?.to_path_buf();
    let corpus = load_corpus(run.data_dir()?, run.mask)?;
    let part = partition(&corpus, run.train.seed)?;
    let train_set = corpus.select(&part.train);
    for dir in [out.clone(), out.join("snapshots"), out.join("checkpoints")] {
        create_dir(&dir)?;
    }
    let names = |idx: &[usize]| idx.iter().map(|&i| corpus.items[i].name.as_str()).collect();
    write_json(
        &SplitFile { seed: run.train.seed, train: names(&part.train), test: names(&part.test) },
        &out.join("split.json"),
    )?;
    write_json(run, &out.join("config.json"))?;

    let mut state = match resume {
        Some(mut s) => {
            if s.net != run.net {
                return Err(Error::Usage("network configuration differs from the checkpoint being resumed".into()));
            }
            s.set_train_config(run.train);
            s
        }
        None => ModelParams::new(run.net, run.train)?,
    };
    let log_path = out.join("train_log.csv");
    if state.iteration > 0 && log_path.exists() {
        truncate_log(&log_path, state.iteration)?;
    } else {
        write_atomic(&log_path, format!("{LOG_HEADER}\n").as_bytes())?;
    }
    let log = fs::OpenOptions::new().append(true).open(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let preview = (0..train_set.len().min(SNAPSHOT_ROWS))
        .map(|i| train_set.sample(i, 0, run.train.seed))
        .collect::<bhgan_core::Result<Vec<_>>>()?;
    info!(
        "training on {} images ({} held out), {} iterations from {}",
        part.train.len(),
        part.test.len(),
        run.train.iterations,
        state.iteration
    );
    let mut hooks = FileHooks { run, out: out.clone(), log, start: Instant::now(), preview };
    let log = train::train_with(&mut state, &train_set, &mut hooks)?;
    let model_path = out.join("model.bhgan");
    save_checkpoint(&state, run, &model_path)?;
    Ok(TrainOutcome { state, log, model_path })
}

/// Inpaint one image with a trained model.
pub fn inpaint(state: &ModelParams, image: &Path, mask: &Path, output: &Path) -> Result<ImageGray> {
    let truth = load_image(image)?;
    let mask = load_mask(mask)?;
    // the file may hold a complete image; treat the masked pixels as unknown
    let sample = make_sample(truth, mask);
    let filled = net::inpaint(&state.nets.generator, &state.net, &sample.gapped, &sample.mask)?;
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    save_image(&filled, output)?;
    Ok(filled)
}

#[derive(Serialize)]
pub struct CorpusInfo {
    pub data_dir: PathBuf,
    pub n_images: usize,
    pub n_evaluated: usize,
    /// `"test"` for the held-out split, `"all"` for the whole corpus.
    pub subset: &'static str,
    pub split_seed: u64,
}

#[derive(Serialize)]
pub struct ReportFile {
    #[serde(flatten)]
    pub report: EvalReport,
    pub config: RunConfig,
    pub corpus: CorpusInfo,
}

/// Named evaluation samples: the held-out split (or every image), with
/// stored masks or masks drawn for [`EVAL_EPOCH`].
pub fn eval_samples(corpus: &Corpus, seed_value: u64, all: bool) -> Result<Vec<(String, Sample)>> {
    let indices = if all { (0..corpus.len()).collect() } else { partition(corpus, seed_value)?.test };
    indices.into_iter().map(|i| Ok((corpus.items[i].name.clone(), corpus.sample(i, EVAL_EPOCH, seed_value)?))).collect()
}

/// Compare the model with linear interpolation and write `report.json`
/// (plus one comparison grid per image with `render`).
pub fn evaluate(state: &ModelParams, run: &RunConfig, all: bool, render: bool) -> Result<ReportFile> {
    let data = run.data_dir()?;
    let out = run.out_dir()?.to_path_buf();
    let corpus = load_corpus(data, run.mask)?;
    let samples = eval_samples(&corpus, run.train.seed, all)?;
    let start = Instant::now();
    let report = eval::evaluate(state, &samples, &mut || start.elapsed().as_secs_f64())?;
    create_dir(&out)?;
    if render {
        let dir = out.join("comparisons");
        create_dir(&dir)?;
        for (name, s) in &samples {
            let model = net::inpaint(&state.nets.generator, &state.net, &s.gapped, &s.mask)?;
            let base = linear_interp_fill(&s.gapped, &s.mask);
            render_comparison(&s.gapped, &base, &model, &s.truth, &dir.join(format!("{name}.pgm")))?;
        }
    }
    let file = ReportFile {
        corpus: CorpusInfo {
            data_dir: data.to_path_buf(),
            n_images: corpus.len(),
            n_evaluated: samples.len(),
            subset: if all { "all" } else { "test" },
            split_seed: run.train.seed,
        },
        report,
        config: run.clone(),
    };
    write_json(&file, &out.join("report.json"))?;
    info!(
        "model MSE {:.5}, baseline MSE {:.5}, speedup {:.2}",
        file.report.mean_mse_model, file.report.mean_mse_baseline, file.report.speedup
    );
    Ok(file)
}

/// Load a checkpoint and its config echo.
pub fn open_model(path: &Path) -> Result<(ModelParams, RunConfig)> {
    load_checkpoint(path)
}
