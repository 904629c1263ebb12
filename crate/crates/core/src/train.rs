//! Wasserstein losses, the alternating critic/generator update, and the
//! training loop.
//!
//! One *iteration* is one generator update preceded by `n_critic` updates of
//! both critics on the same minibatch. Critic weights are clipped to
//! `[-clip_c, clip_c]` after every critic update.

use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::dataset::{Corpus, Sample};
use crate::error::{Error, Result};
use crate::net::{self, NetConfig, NetParams};
use crate::optim::{clip_weights, rmsprop_step, OptimizerState};
use crate::seed;
use crate::tensor::{Element, Tensor};
use rand::seq::SliceRandom;

/// Checkpoint format version understood by this build.
pub const FORMAT_VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TrainConfig {
    pub iterations: u64,
    pub learning_rate: f64,
    pub n_critic: usize,
    pub clip_c: f64,
    pub batch_size: usize,
    pub lambda_rec: f64,
    pub lambda_adv: f64,
    pub snapshot_every: u64,
    pub seed: u64,
    /// RMSProp decay of the squared-gradient average.
    pub rms_decay: f64,
    pub rms_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 2000,
            learning_rate: 0.01,
            n_critic: 5,
            clip_c: 0.01,
            batch_size: 8,
            lambda_rec: 100.0,
            lambda_adv: 1.0,
            snapshot_every: 500,
            seed: 0,
            rms_decay: 0.9,
            rms_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        if self.iterations < 1 {
            return fail("iterations must be at least 1");
        }
        if self.n_critic < 1 {
            return fail("n_critic must be at least 1");
        }
        if !(self.clip_c > 0.0) {
            return fail("clip_c must be positive");
        }
        if self.batch_size < 1 {
            return fail("batch_size must be at least 1");
        }
        if !(self.lambda_rec >= 0.0 && self.lambda_adv >= 0.0) {
            return fail("loss weights must be non-negative");
        }
        if self.snapshot_every < 1 {
            return fail("snapshot_every must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.rms_decay) || !(self.rms_eps > 0.0) {
            return fail("rms_decay must be in [0, 1) and rms_eps positive");
        }
        Ok(())
    }

    fn optimizer<E: Element>(&self, params: &crate::optim::ParamTable<E>) -> OptimizerState<E> {
        OptimizerState::for_params(
            params,
            E::from_f64(self.learning_rate),
            E::from_f64(self.rms_decay),
            E::from_f64(self.rms_eps),
        )
    }
}

/// Everything needed to resume training or run inference.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub net: NetConfig,
    pub train: TrainConfig,
    pub nets: NetParams<f32>,
    pub generator_opt: OptimizerState<f32>,
    pub global_opt: OptimizerState<f32>,
    pub local_opt: OptimizerState<f32>,
    /// Completed generator updates.
    pub iteration: u64,
}

impl ModelParams {
    /// Fresh networks initialized from `train.seed`, zeroed optimizer state.
    pub fn new(net: NetConfig, train: TrainConfig) -> Result<Self> {
        train.validate()?;
        let nets = net::init_params::<f32>(train.seed, &net)?;
        Ok(Self::from_nets(net, train, nets))
    }

    pub fn from_nets(net: NetConfig, train: TrainConfig, nets: NetParams<f32>) -> Self {
        ModelParams {
            generator_opt: train.optimizer(&nets.generator),
            global_opt: train.optimizer(&nets.global_critic),
            local_opt: train.optimizer(&nets.local_critic),
            net,
            train,
            nets,
            iteration: 0,
        }
    }

    /// Point the optimizers at a (possibly changed) learning schedule.
    pub fn set_train_config(&mut self, train: TrainConfig) {
        for opt in [&mut self.generator_opt, &mut self.global_opt, &mut self.local_opt] {
            opt.learning_rate = train.learning_rate as f32;
            opt.decay = train.rms_decay as f32;
            opt.eps = train.rms_eps as f32;
        }
        self.train = train;
    }
}

/// Losses and timing of one iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRecord {
    pub iteration: u64,
    pub g_loss: f64,
    /// Global critic loss of the last critic update in the iteration.
    pub c_global_loss: f64,
    pub c_local_loss: f64,
    /// Whole-image MSE of the composited batch (the reconstruction term).
    pub recon_mse: f64,
    /// MSE restricted to the missing pixels of the batch.
    pub masked_mse: f64,
    pub wall_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

fn mean(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::EmptyTensor);
    }
    Ok(xs.iter().sum::<f64>() / xs.len() as f64)
}

/// `mean(fake) - mean(real)`, the quantity a critic minimizes.
pub fn critic_loss(real_scores: &[f64], fake_scores: &[f64]) -> Result<f64> {
    Ok(mean(fake_scores)? - mean(real_scores)?)
}

pub fn critic_loss_graph<E: Element>(tape: &mut Tape<E>, real_scores: Var, fake_scores: Var) -> Result<Var> {
    let f = tape.mean(fake_scores)?;
    let r = tape.mean(real_scores)?;
    tape.sub(f, r)
}

/// `lambda_rec * MSE(inpainted, truth) + lambda_adv * (-g_score - l_score)`.
pub fn generator_loss(
    inpainted: &crate::ImageGray,
    truth: &crate::ImageGray,
    g_score: f64,
    l_score: f64,
    cfg: &TrainConfig,
) -> f64 {
    cfg.lambda_rec * crate::eval::mse(inpainted, truth) + cfg.lambda_adv * (-g_score - l_score)
}

/// Graph form of [`generator_loss`]; `g_score` and `l_score` are one-element
/// tensors (batch means of the critic scores).
pub fn generator_loss_graph<E: Element>(
    tape: &mut Tape<E>,
    inpainted: Var,
    truth: Var,
    g_score: Var,
    l_score: Var,
    lambda_rec: f64,
    lambda_adv: f64,
) -> Result<Var> {
    let rec = reconstruction_graph(tape, inpainted, truth)?;
    let rec = tape.scale(rec, E::from_f64(lambda_rec));
    let adv = tape.add(g_score, l_score)?;
    let adv = tape.scale(adv, E::from_f64(-lambda_adv));
    tape.add(rec, adv)
}

fn reconstruction_graph<E: Element>(tape: &mut Tape<E>, a: Var, b: Var) -> Result<Var> {
    let d = tape.sub(a, b)?;
    let sq = tape.mul(d, d)?;
    tape.mean(sq)
}

fn scalar_of<E: Element>(tape: &Tape<E>, v: Var) -> f64 {
    tape.value(v).data()[0].to_f64()
}

/// Constant tensors describing one minibatch.
struct BatchTensors {
    gen_input: Tensor<f32>,
    truth: Tensor<f32>,
    mask: Tensor<f32>,
    known: Tensor<f32>,
    boxes: Vec<net::CropBox>,
}

impl BatchTensors {
    fn new(batch: &[Sample]) -> Result<Self> {
        let boxes = batch.iter().map(|s| net::mask_bbox(&s.mask)).collect::<Result<Vec<_>>>()?;
        let pairs: Vec<_> = batch.iter().map(|s| (&s.gapped, &s.mask)).collect();
        let truths: Vec<_> = batch.iter().map(|s| &s.truth).collect();
        let masks: Vec<_> = batch.iter().map(|s| &s.mask).collect();
        let known: Vec<f32> = batch
            .iter()
            .flat_map(|s| s.gapped.pixels().iter().zip(s.mask.cells()).map(|(&g, &m)| if m { 0.0 } else { g }))
            .collect();
        let mask = net::mask_batch(&masks);
        Ok(BatchTensors {
            gen_input: net::generator_input(&pairs),
            truth: net::image_batch(&truths),
            known: Tensor::new(mask.shape(), known)?,
            mask,
            boxes,
        })
    }
}

fn masked_mse_of(fake: &Tensor<f32>, truth: &Tensor<f32>, mask: &Tensor<f32>) -> f64 {
    let (mut sum, mut count) = (0.0f64, 0usize);
    for ((&f, &t), &m) in fake.data().iter().zip(truth.data()).zip(mask.data()) {
        if m > 0.5 {
            let d = f as f64 - t as f64;
            sum += d * d;
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// One adversarial iteration on `batch`: `n_critic` critic updates (each
/// followed by weight clipping), then one generator update.
pub fn train_step(state: &mut ModelParams, batch: &[Sample], cfg: &TrainConfig) -> Result<LogRecord> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty training batch".into()));
    }
    let iteration = state.iteration + 1;
    let diverged = Error::Diverged { iteration };
    let netcfg = state.net;
    let local = netcfg.local_size;
    let bt = BatchTensors::new(batch)?;

    // Generator pass, kept on its tape for the generator update below. The
    // critics never change generator weights, so the composited fakes stay
    // valid for all critic updates.
    let mut gtape = Tape::<f32>::new();
    let gbind = state.nets.generator.bind(&mut gtape, true);
    let input = gtape.constant(bt.gen_input.clone());
    let raw = net::generator_graph(&mut gtape, &gbind, input, &netcfg)?;
    let mask_v = gtape.constant(bt.mask.clone());
    let known_v = gtape.constant(bt.known.clone());
    let fake = net::composite_graph(&mut gtape, raw, mask_v, known_v)?;
    let fake_t = gtape.value(fake).clone();
    if !fake_t.all_finite() {
        return Err(diverged);
    }

    // Local-critic inputs are constants during the critic updates.
    let (real_patch, fake_patch) = {
        let mut t = Tape::<f32>::new();
        let m = t.constant(bt.mask.clone());
        let r = t.constant(bt.truth.clone());
        let f = t.constant(fake_t.clone());
        let rp = net::local_patch_graph(&mut t, r, m, &bt.boxes, local)?;
        let fp = net::local_patch_graph(&mut t, f, m, &bt.boxes, local)?;
        (t.value(rp).clone(), t.value(fp).clone())
    };

    let clip = cfg.clip_c as f32;
    let (mut c_global, mut c_local) = (0.0, 0.0);
    for _ in 0..cfg.n_critic {
        let mut ct = Tape::<f32>::new();
        let gb = state.nets.global_critic.bind(&mut ct, true);
        let lb = state.nets.local_critic.bind(&mut ct, true);
        let real = ct.constant(bt.truth.clone());
        let fake = ct.constant(fake_t.clone());
        let rp = ct.constant(real_patch.clone());
        let fp = ct.constant(fake_patch.clone());
        let g_real = net::critic_graph(&mut ct, &gb, real, &netcfg)?;
        let g_fake = net::critic_graph(&mut ct, &gb, fake, &netcfg)?;
        let l_real = net::critic_graph(&mut ct, &lb, rp, &netcfg)?;
        let l_fake = net::critic_graph(&mut ct, &lb, fp, &netcfg)?;
        let lg = critic_loss_graph(&mut ct, g_real, g_fake)?;
        let ll = critic_loss_graph(&mut ct, l_real, l_fake)?;
        // the two critics share no parameters, so one sweep over the sum
        // yields each critic's own gradient
        let total = ct.add(lg, ll)?;
        c_global = scalar_of(&ct, lg);
        c_local = scalar_of(&ct, ll);
        if !(c_global.is_finite() && c_local.is_finite()) {
            return Err(diverged);
        }
        let grads = ct.backward(total)?;
        rmsprop_step(&mut state.nets.global_critic, &gb.gradients(&grads), &mut state.global_opt)?;
        clip_weights(&mut state.nets.global_critic, clip)?;
        rmsprop_step(&mut state.nets.local_critic, &lb.gradients(&grads), &mut state.local_opt)?;
        clip_weights(&mut state.nets.local_critic, clip)?;
    }

    // Generator update against the freshly updated (frozen) critics.
    let truth_v = gtape.constant(bt.truth.clone());
    let loss = if cfg.lambda_adv == 0.0 {
        let rec = reconstruction_graph(&mut gtape, fake, truth_v)?;
        gtape.scale(rec, cfg.lambda_rec as f32)
    } else {
        let gb = state.nets.global_critic.bind(&mut gtape, false);
        let lb = state.nets.local_critic.bind(&mut gtape, false);
        let g_scores = net::critic_graph(&mut gtape, &gb, fake, &netcfg)?;
        let g_mean = gtape.mean(g_scores)?;
        let patch = net::local_patch_graph(&mut gtape, fake, mask_v, &bt.boxes, local)?;
        let l_scores = net::critic_graph(&mut gtape, &lb, patch, &netcfg)?;
        let l_mean = gtape.mean(l_scores)?;
        generator_loss_graph(&mut gtape, fake, truth_v, g_mean, l_mean, cfg.lambda_rec, cfg.lambda_adv)?
    };
    let g_loss = scalar_of(&gtape, loss);
    if !g_loss.is_finite() {
        return Err(diverged);
    }
    let recon_mse = {
        let (mut s, n) = (0.0f64, fake_t.len());
        for (&f, &t) in fake_t.data().iter().zip(bt.truth.data()) {
            let d = f as f64 - t as f64;
            s += d * d;
        }
        s / n as f64
    };
    let grads = gtape.backward(loss)?;
    rmsprop_step(&mut state.nets.generator, &gbind.gradients(&grads), &mut state.generator_opt)?;
    if !state.nets.generator.all_finite() {
        return Err(diverged);
    }

    state.iteration = iteration;
    Ok(LogRecord {
        iteration,
        g_loss,
        c_global_loss: c_global,
        c_local_loss: c_local,
        recon_mse,
        masked_mse: masked_mse_of(&fake_t, &bt.truth, &bt.mask),
        wall_s: 0.0,
    })
}

/// `(corpus index, epoch)` of every sample in the minibatch of step
/// `iteration` (0-based). Epoch `e` visits the corpus in a permutation drawn
/// from `(seed, e)`, and minibatches tile the concatenated epochs, so any
/// step's batch can be reconstructed without replaying earlier ones.
pub fn batch_plan(n: usize, batch_size: usize, seed_value: u64, iteration: u64) -> Vec<(usize, u64)> {
    let start = iteration * batch_size as u64;
    let mut cached: Option<(u64, Vec<usize>)> = None;
    (start..start + batch_size as u64)
        .map(|pos| {
            let epoch = pos / n as u64;
            let offset = (pos % n as u64) as usize;
            if cached.as_ref().map(|c| c.0) != Some(epoch) {
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(&mut seed::rng(seed::derive(seed_value, &[seed::purpose::SHUFFLE, epoch])));
                cached = Some((epoch, perm));
            }
            (cached.as_ref().expect("filled above").1[offset], epoch)
        })
        .collect()
}

/// Minibatch of step `iteration`.
pub fn batch_for(corpus: &Corpus, cfg: &TrainConfig, iteration: u64) -> Result<Vec<Sample>> {
    batch_plan(corpus.len(), cfg.batch_size, cfg.seed, iteration)
        .into_iter()
        .map(|(i, epoch)| corpus.sample(i, epoch, cfg.seed))
        .collect()
}

/// Side effects of the training loop: a clock, per-iteration logging and
/// periodic snapshots.
pub trait TrainHooks {
    type Error: From<Error>;

    /// Seconds on a monotonic clock; used only for `wall_s`.
    fn now_s(&mut self) -> f64 {
        0.0
    }

    fn on_record(&mut self, _record: &LogRecord) -> core::result::Result<(), Self::Error> {
        Ok(())
    }

    /// Called after every `snapshot_every`-th iteration.
    fn on_snapshot(&mut self, _state: &ModelParams) -> core::result::Result<(), Self::Error> {
        Ok(())
    }
}

/// No clock, no output.
pub struct Silent;

impl TrainHooks for Silent {
    type Error = Error;
}

/// Run train steps until `state.iteration` reaches `state.train.iterations`.
pub fn train_with<H: TrainHooks>(
    state: &mut ModelParams,
    corpus: &Corpus,
    hooks: &mut H,
) -> core::result::Result<TrainLog, H::Error> {
    let cfg = state.train;
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("training corpus is empty".into()).into());
    }
    let mut log = TrainLog::default();
    while state.iteration < cfg.iterations {
        let t0 = hooks.now_s();
        let batch = batch_for(corpus, &cfg, state.iteration)?;
        let mut record = train_step(state, &batch, &cfg)?;
        record.wall_s = hooks.now_s() - t0;
        hooks.on_record(&record)?;
        log.records.push(record);
        if state.iteration % cfg.snapshot_every == 0 {
            hooks.on_snapshot(state)?;
        }
    }
    Ok(log)
}

/// Train fresh networks on `corpus` with no side effects.
pub fn train(corpus: &Corpus, cfg: &TrainConfig, net: &NetConfig) -> Result<(ModelParams, TrainLog)> {
    let mut state = ModelParams::new(*net, *cfg)?;
    let log = train_with(&mut state, corpus, &mut Silent)?;
    Ok((state, log))
}

/// Iteration numbers at which [`train_with`] calls `on_snapshot`.
pub fn snapshot_schedule(cfg: &TrainConfig) -> Vec<u64> {
    (1..=cfg.iterations / cfg.snapshot_every).map(|k| k * cfg.snapshot_every).collect()
}

impl core::fmt::Display for LogRecord {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(
            f,
            "iter {:>5}  g {:>10.5}  cg {:>10.6}  cl {:>10.6}  mse {:.5}  masked {:.5}  {:.2}s",
            self.iteration,
            self.g_loss,
            self.c_global_loss,
            self.c_local_loss,
            self.recon_mse,
            self.masked_mse,
            self.wall_s
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{make_sample, CorpusItem, ImageGray, Mask, MaskConfig};

    #[test]
    fn critic_loss_cases() {
        assert_eq!(critic_loss(&[1.0], &[1.0]).unwrap(), 0.0);
        assert_eq!(critic_loss(&[2.0], &[0.0]).unwrap(), -2.0);
        assert_eq!(critic_loss(&[1.0, 3.0], &[0.5, 1.5]).unwrap(), -1.0);
        assert!(critic_loss(&[], &[1.0]).is_err());
    }

    #[test]
    fn generator_loss_cases() {
        let cfg = TrainConfig::default();
        let a = ImageGray::from_fn(|r, c| ((r + c) % 5) as f32 / 10.0).unwrap();
        assert_eq!(generator_loss(&a, &a, 0.0, 0.0, &cfg), 0.0);
        let b = ImageGray::from_fn(|r, c| a.get(r, c) + 0.1).unwrap();
        let v = generator_loss(&a, &b, 0.5, 0.3, &cfg);
        assert!((v - 0.2).abs() < 1e-5, "{v}");
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { iterations: 0, ..Default::default() },
            TrainConfig { n_critic: 0, ..Default::default() },
            TrainConfig { clip_c: 0.0, ..Default::default() },
            TrainConfig { lambda_rec: -1.0, ..Default::default() },
            TrainConfig { snapshot_every: 0, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn default_snapshot_schedule() {
        assert_eq!(snapshot_schedule(&TrainConfig::default()), [500, 1000, 1500, 2000]);
    }

    #[test]
    fn batch_plan_covers_epochs() {
        let plan: Vec<_> = (0..3).flat_map(|t| batch_plan(6, 4, 9, t)).collect();
        let mut first: Vec<usize> = plan[..6].iter().map(|p| p.0).collect();
        first.sort_unstable();
        assert_eq!(first, [0, 1, 2, 3, 4, 5]);
        assert!(plan[..6].iter().all(|p| p.1 == 0) && plan[6..].iter().all(|p| p.1 == 1));
        assert_eq!(batch_plan(6, 4, 9, 2), batch_plan(6, 4, 9, 2));
    }

    fn toy() -> (ModelParams, Vec<Sample>) {
        let net = NetConfig { gen_width: 2, critic_width: 2, local_size: 16, ..NetConfig::default() };
        let cfg = TrainConfig { n_critic: 2, batch_size: 2, ..TrainConfig::default() };
        let state = ModelParams::new(net, cfg).unwrap();
        let img = ImageGray::from_fn(|r, c| (((r / 8) + c / 16) % 2) as f32 - 0.5).unwrap();
        let batch = vec![
            make_sample(img.clone(), Mask::from_columns(&[10..30])),
            make_sample(img, Mask::from_columns(&[60..70, 90..100])),
        ];
        (state, batch)
    }

    #[test]
    fn step_scopes_and_clips() {
        let (mut state, batch) = toy();
        let before = state.clone();
        let cfg = state.train;
        let rec = train_step(&mut state, &batch, &cfg).unwrap();
        assert_eq!(rec.iteration, 1);
        assert_eq!(state.iteration, 1);
        for table in [&state.nets.global_critic, &state.nets.local_critic] {
            assert!(table.iter().all(|(_, t)| t.max_abs() <= 0.01));
        }
        assert_ne!(state.nets.generator, before.nets.generator);
        assert!(state.nets.generator.iter().any(|(_, t)| t.max_abs() > 0.01));
        let mut again = before.clone();
        assert_eq!(train_step(&mut again, &batch, &cfg).unwrap(), rec);
        assert_eq!(again, state);
    }

    #[test]
    fn empty_mask_rejected() {
        let (mut state, _) = toy();
        let cfg = state.train;
        let s = make_sample(ImageGray::constant(0.0).unwrap(), Mask::empty());
        assert_eq!(train_step(&mut state, &[s], &cfg).unwrap_err(), Error::EmptyMask);
        assert!(train_step(&mut state, &[], &cfg).is_err());
    }

    #[test]
    fn reconstruction_only_loss() {
        let (mut state, batch) = toy();
        let cfg = TrainConfig { lambda_adv: 0.0, ..state.train };
        let rec = train_step(&mut state, &batch, &cfg).unwrap();
        assert!((rec.g_loss - cfg.lambda_rec * rec.recon_mse).abs() <= 1e-6 * rec.g_loss.abs());
    }

    #[test]
    fn train_loop_runs_to_iterations() {
        let (state, _) = toy();
        let img = ImageGray::from_fn(|r, _| r as f32 / 128.0).unwrap();
        let corpus = Corpus::new(vec![CorpusItem { name: "a".into(), image: img, mask: None }], MaskConfig::default());
        let cfg = TrainConfig { iterations: 3, snapshot_every: 2, ..state.train };
        let (out, log) = train(&corpus, &cfg, &state.net).unwrap();
        assert_eq!(out.iteration, 3);
        assert_eq!(log.records.len(), 3);
        assert!(train(&Corpus::default(), &cfg, &state.net).is_err());
    }
}
