//! The score-mismatching training loop.
//!
//! One training step draws all random variables independently, then applies
//! three separate optimizer updates: the score net on the match loss (real
//! data), the score net on the mismatch loss (fake data regressed onto an
//! independent noise draw), and the generator against the frozen score net.
//! Each loss updates only its named network; gradient blocking is explicit.

use std::io::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use crate::data::{hflip, load_dataset, Dataset, DatasetKind, DatasetSpec};
use crate::error::{Result, SmmError};
use crate::metrics::{mmd_rbf, sliced_wasserstein, Bandwidth};
use crate::nets::{
    default_image_gen_arch, default_image_score_arch, default_vector_gen_arch,
    default_vector_score_arch, GeneratorNet, ScoreNet,
};
use crate::optim::{adam_step, AdamState};
use crate::rng::{stream_seed, RngStreams, Stream};
use crate::schedule::{
    build_schedule, corrupt_per_sample, data_scales, noise_term_per_sample, CorruptionKind,
    NoiseSchedule,
};
use crate::tape::{Tape, VarId};
use crate::tensor::Tensor;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VariantKind {
    Original,
    /// Variant 2: the score net consumes (sample, noise term) and predicts
    /// the noisy sample.
    NoisyTarget,
    /// Variant 3: the score net consumes (clean sample, noisy sample) and
    /// predicts the noise.
    PairedInput,
}

impl VariantKind {
    pub fn paired(self) -> bool {
        !matches!(self, VariantKind::Original)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub variant: VariantKind,
    pub corruption: CorruptionKind,
    pub t_steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub duplicate_fake: bool,
    pub hflip: bool,
    pub iterations: u64,
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub checkpoint_path: Option<PathBuf>,
    pub metrics_path: Option<PathBuf>,
    /// Merge the two score-net updates into one summed-loss update.
    pub sum_score_losses: bool,
    /// Test-only ablation: regress fake samples onto the corruption noise
    /// itself instead of the independent draw.
    pub mismatch_reuses_eps2: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            variant: VariantKind::Original,
            corruption: CorruptionKind::ZeroMean,
            t_steps: 10,
            beta_min: 1e-4,
            beta_max: 0.02,
            learning_rate: 0.0025,
            batch_size: 32,
            duplicate_fake: false,
            hflip: false,
            iterations: 1000,
            seed: 0,
            dataset: DatasetSpec {
                kind: DatasetKind::Gauss8 {
                    radius: 0.7,
                    std: 0.05,
                },
                normalize: true,
            },
            checkpoint_path: None,
            metrics_path: None,
            sum_score_losses: false,
            mismatch_reuses_eps2: false,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_steps == 0 || self.batch_size == 0 || self.learning_rate <= 0.0 {
            return Err(SmmError::Config(
                "t_steps, batch_size, learning_rate must be positive".into(),
            ));
        }
        if self.hflip && !self.dataset.is_image() {
            return Err(SmmError::Config(
                "hflip applies to image datasets only".into(),
            ));
        }
        self.corruption.validate()?;
        self.dataset.validate()?;
        build_schedule(self.t_steps, self.beta_min, self.beta_max).map(|_| ())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub iteration: u64,
    pub loss_match: f64,
    pub loss_mismatch: f64,
    pub loss_generator: f64,
    pub wall_time_s: f64,
}

/// One metrics-log row; the external CSV schema.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub iteration: u64,
    pub loss_match: f64,
    pub loss_mismatch: f64,
    pub loss_generator: f64,
    pub mmd: f64,
    pub sliced_wasserstein: f64,
    pub wall_time_s: f64,
    pub seed: u64,
}

pub const METRICS_HEADER: &str =
    "iteration,loss_match,loss_mismatch,loss_generator,mmd,sliced_wasserstein,wall_time_s,seed";

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.3},{}",
            self.iteration,
            self.loss_match,
            self.loss_mismatch,
            self.loss_generator,
            self.mmd,
            self.sliced_wasserstein,
            self.wall_time_s,
            self.seed
        )
    }
}

/// Anything that can play the score network's role inside a loss: the real
/// net, or an analytic stand-in in tests and oracles.
pub trait ScoreFn {
    fn apply(&self, tape: &mut Tape, x: VarId, ts: &[usize]) -> Result<VarId>;
}

impl<F> ScoreFn for F
where
    F: Fn(&mut Tape, VarId, &[usize]) -> Result<VarId>,
{
    fn apply(&self, tape: &mut Tape, x: VarId, ts: &[usize]) -> Result<VarId> {
        self(tape, x, ts)
    }
}

/// A score net bound onto a tape (trainable or frozen).
pub struct BoundScore<'a> {
    pub net: &'a ScoreNet,
    pub pids: Vec<VarId>,
}

impl ScoreFn for BoundScore<'_> {
    fn apply(&self, tape: &mut Tape, x: VarId, ts: &[usize]) -> Result<VarId> {
        self.net.forward_steps(tape, &self.pids, x, ts)
    }
}

/// Paired analogue, for the variant losses.
pub trait PairedScoreFn {
    fn apply(&self, tape: &mut Tape, a: VarId, b: VarId, ts: &[usize]) -> Result<VarId>;
}

impl<F> PairedScoreFn for F
where
    F: Fn(&mut Tape, VarId, VarId, &[usize]) -> Result<VarId>,
{
    fn apply(&self, tape: &mut Tape, a: VarId, b: VarId, ts: &[usize]) -> Result<VarId> {
        self(tape, a, b, ts)
    }
}

impl PairedScoreFn for BoundScore<'_> {
    fn apply(&self, tape: &mut Tape, a: VarId, b: VarId, ts: &[usize]) -> Result<VarId> {
        self.net.forward_paired_steps(tape, &self.pids, a, b, ts)
    }
}

fn per_batch_mean_sq(tape: &mut Tape, pred: VarId, target: VarId) -> Result<VarId> {
    let batch = tape.value(pred).batch() as f64;
    let diff = tape.sub(pred, target)?;
    let sq = tape.sq_norm(diff)?;
    tape.scale(sq, 1.0 / batch)
}

/// Match loss on real data: `mean_b || S(corrupt(x), t) - eps1 ||^2`. Each
/// sample carries its own diffusion step `ts[i]`.
pub fn loss_match_true(
    tape: &mut Tape,
    score: &impl ScoreFn,
    x: &Tensor,
    eps1: &Tensor,
    ts: &[usize],
    schedule: &NoiseSchedule,
    kind: &CorruptionKind,
) -> Result<VarId> {
    let x_tilde = tape.constant(corrupt_per_sample(x, eps1, ts, schedule, kind)?)?;
    let pred = score.apply(tape, x_tilde, ts)?;
    let target = tape.constant(eps1.clone())?;
    per_batch_mean_sq(tape, pred, target)
}

/// Mismatch loss on fake data: the corrupted generator output is regressed
/// onto the independent draw `eps3`. `fake` is already detached from the
/// generator.
pub fn loss_mismatch_fake(
    tape: &mut Tape,
    score: &impl ScoreFn,
    fake: &Tensor,
    eps2: &Tensor,
    eps3: &Tensor,
    ts: &[usize],
    schedule: &NoiseSchedule,
    kind: &CorruptionKind,
) -> Result<VarId> {
    let x_tilde = tape.constant(corrupt_per_sample(fake, eps2, ts, schedule, kind)?)?;
    let pred = score.apply(tape, x_tilde, ts)?;
    let target = tape.constant(eps3.clone())?;
    per_batch_mean_sq(tape, pred, target)
}

/// Generator loss: `mean_b || S(G(z2) + noise, t) - eps4 ||^2`, plus the
/// duplicated `eps5` term when requested. The score function's parameters
/// must already be frozen; the gradient reaches the generator through the
/// score input.
#[allow(clippy::too_many_arguments)]
pub fn loss_generator(
    tape: &mut Tape,
    score: &impl ScoreFn,
    gen_out: VarId,
    eps4: &Tensor,
    eps5: Option<&Tensor>,
    ts: &[usize],
    schedule: &NoiseSchedule,
    kind: &CorruptionKind,
) -> Result<VarId> {
    let scales = data_scales(ts, schedule, kind)?;
    let shape = tape.value(gen_out).shape.clone();
    let term = |tape: &mut Tape, eps: &Tensor| -> Result<VarId> {
        let scaled = tape.scale_rows(gen_out, &scales)?;
        let noise = tape.constant(noise_term_per_sample(&shape, eps, ts, schedule, kind)?)?;
        let x_tilde = tape.add(scaled, noise)?;
        let pred = score.apply(tape, x_tilde, ts)?;
        let target = tape.constant(eps.clone())?;
        per_batch_mean_sq(tape, pred, target)
    };
    let first = term(tape, eps4)?;
    match eps5 {
        Some(eps5) => {
            let second = term(tape, eps5)?;
            tape.add(first, second)
        }
        None => Ok(first),
    }
}

/// Variant-2 score loss: S predicts the noisy sample from (sample, noise term).
#[allow(clippy::too_many_arguments)]
pub fn variant2_score_loss(
    tape: &mut Tape,
    score: &impl PairedScoreFn,
    x: &Tensor,
    fake: &Tensor,
    eps: [&Tensor; 3],
    ts: &[usize],
    schedule: &NoiseSchedule,
    kind: &CorruptionKind,
) -> Result<(VarId, VarId)> {
    let [eps1, eps2, eps3] = eps;
    // real term: S(x, eps1 sigma) vs x + eps1 sigma
    let xv = tape.constant(x.clone())?;
    let n1 = tape.constant(noise_term_per_sample(&x.shape, eps1, ts, schedule, kind)?)?;
    let pred_r = score.apply(tape, xv, n1, ts)?;
    let target_r = tape.constant(corrupt_per_sample(x, eps1, ts, schedule, kind)?)?;
    let real = per_batch_mean_sq(tape, pred_r, target_r)?;
    // fake term: S(G(z1), eps2 sigma) vs G(z1) + eps3 sigma
    let fv = tape.constant(fake.clone())?;
    let n2 = tape.constant(noise_term_per_sample(&fake.shape, eps2, ts, schedule, kind)?)?;
    let pred_f = score.apply(tape, fv, n2, ts)?;
    let target_f = tape.constant(corrupt_per_sample(fake, eps3, ts, schedule, kind)?)?;
    let fake_l = per_batch_mean_sq(tape, pred_f, target_f)?;
    Ok((real, fake_l))
}

/// Variant-2 generator loss: S(G(z2), eps4 sigma) vs G(z2) + eps4 sigma,
/// gradient flowing through both generator occurrences.
pub fn variant2_gen_loss(
    tape: &mut Tape,
    score: &impl PairedScoreFn,
    gen_out: VarId,
    eps4: &Tensor,
    ts: &[usize],
    schedule: &NoiseSchedule,
    kind: &CorruptionKind,
) -> Result<VarId> {
    let shape = tape.value(gen_out).shape.clone();
    let noise = tape.constant(noise_term_per_sample(&shape, eps4, ts, schedule, kind)?)?;
    let scales = data_scales(ts, schedule, kind)?;
    let scaled = tape.scale_rows(gen_out, &scales)?;
    let noisy = tape.add(scaled, noise)?;
    let pred = score.apply(tape, gen_out, noise, ts)?;
    per_batch_mean_sq(tape, pred, noisy)
}

/// Variant-3 score loss: S(clean, noisy) predicts the noise.
#[allow(clippy::too_many_arguments)]
pub fn variant3_score_loss(
    tape: &mut Tape,
    score: &impl PairedScoreFn,
    x: &Tensor,
    fake: &Tensor,
    eps: [&Tensor; 3],
    ts: &[usize],
    schedule: &NoiseSchedule,
    kind: &CorruptionKind,
) -> Result<(VarId, VarId)> {
    let [eps1, eps2, eps3] = eps;
    let xv = tape.constant(x.clone())?;
    let x_noisy = tape.constant(corrupt_per_sample(x, eps1, ts, schedule, kind)?)?;
    let pred_r = score.apply(tape, xv, x_noisy, ts)?;
    let target_r = tape.constant(eps1.clone())?;
    let real = per_batch_mean_sq(tape, pred_r, target_r)?;

    let fv = tape.constant(fake.clone())?;
    let f_noisy = tape.constant(corrupt_per_sample(fake, eps2, ts, schedule, kind)?)?;
    let pred_f = score.apply(tape, fv, f_noisy, ts)?;
    let target_f = tape.constant(eps3.clone())?;
    let fake_l = per_batch_mean_sq(tape, pred_f, target_f)?;
    Ok((real, fake_l))
}

/// Variant-3 generator loss: S(G(z2), G(z2) + eps4 sigma) vs eps4.
pub fn variant3_gen_loss(
    tape: &mut Tape,
    score: &impl PairedScoreFn,
    gen_out: VarId,
    eps4: &Tensor,
    ts: &[usize],
    schedule: &NoiseSchedule,
    kind: &CorruptionKind,
) -> Result<VarId> {
    let shape = tape.value(gen_out).shape.clone();
    let noise = tape.constant(noise_term_per_sample(&shape, eps4, ts, schedule, kind)?)?;
    let scales = data_scales(ts, schedule, kind)?;
    let scaled = tape.scale_rows(gen_out, &scales)?;
    let noisy = tape.add(scaled, noise)?;
    let pred = score.apply(tape, gen_out, noisy, ts)?;
    let target = tape.constant(eps4.clone())?;
    per_batch_mean_sq(tape, pred, target)
}

/// Full trainer state for one run.
#[derive(Debug)]
pub struct TrainerState {
    pub config: TrainingConfig,
    pub schedule: NoiseSchedule,
    pub score: ScoreNet,
    pub gen: GeneratorNet,
    pub adam_score: AdamState,
    pub adam_gen: AdamState,
    pub rng: RngStreams,
    pub iteration: u64,
}

impl TrainerState {
    pub fn init(config: TrainingConfig) -> Result<Self> {
        config.validate()?;
        let schedule = build_schedule(config.t_steps, config.beta_min, config.beta_max)?;
        let paired = config.variant.paired();
        let (score, gen) = if config.dataset.is_image() {
            (
                ScoreNet::init(default_image_score_arch(paired), config.seed)?,
                GeneratorNet::init(default_image_gen_arch(), config.seed)?,
            )
        } else {
            (
                ScoreNet::init(default_vector_score_arch(paired), config.seed)?,
                GeneratorNet::init(default_vector_gen_arch(), config.seed)?,
            )
        };
        let adam_score = AdamState::new(config.learning_rate, &score.param_sizes());
        let adam_gen = AdamState::new(config.learning_rate, &gen.param_sizes());
        let rng = RngStreams::new(config.seed);
        Ok(TrainerState {
            config,
            schedule,
            score,
            gen,
            adam_score,
            adam_gen,
            rng,
            iteration: 0,
        })
    }

    /// Generator output for a batch of latents, untracked, detached.
    pub fn generate(&self, z: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let pids = self.gen.bind(&mut tape, false)?;
        let zid = tape.constant(z.clone())?;
        let out = self.gen.forward(&mut tape, &pids, zid)?;
        Ok(tape.value(out).clone())
    }
}

/// Draw `n` samples with a single generator forward pass.
pub fn sample_one_step(state: &TrainerState, n: usize, seed: u64) -> Result<Tensor> {
    if n == 0 {
        return Err(SmmError::InvalidArgument("sample count must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::from_seed(stream_seed(seed, "sample"));
    let latent = state.gen.arch.latent_dim();
    let data = (0..n * latent)
        .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect();
    let z = Tensor {
        shape: vec![n, latent],
        data,
    };
    state.generate(&z)
}

struct StepDraws {
    z1: Tensor,
    z2: Tensor,
    eps: [Tensor; 5],
    ts: Vec<usize>,
}

fn draw_step_randoms(state: &mut TrainerState) -> StepDraws {
    let b = state.config.batch_size;
    let latent = state.gen.arch.latent_dim();
    let mut sample_shape = vec![b];
    sample_shape.extend_from_slice(&state.score.arch.sample_shape());
    // Algorithm order: all randoms first, from independent streams.
    let z1 = state.rng.normal_tensor(Stream::Z1, vec![b, latent]);
    let z2 = state.rng.normal_tensor(Stream::Z2, vec![b, latent]);
    let eps = [
        state.rng.normal_tensor(Stream::Eps1, sample_shape.clone()),
        state.rng.normal_tensor(Stream::Eps2, sample_shape.clone()),
        state.rng.normal_tensor(Stream::Eps3, sample_shape.clone()),
        state.rng.normal_tensor(Stream::Eps4, sample_shape.clone()),
        state.rng.normal_tensor(Stream::Eps5, sample_shape),
    ];
    // One diffusion step per training step, shared by all three loss lines.
    let t = state.rng.draw_step(state.config.t_steps);
    let ts = vec![t; b];
    StepDraws { z1, z2, eps, ts }
}

fn nan_guard<T>(r: Result<T>, iteration: u64, loss_name: &'static str) -> Result<T> {
    r.map_err(|e| match e {
        SmmError::NonFinite { .. } => SmmError::NanLoss {
            iteration,
            loss_name,
        },
        other => other,
    })
}

/// One full training step on a real batch: Algorithm-1 line order.
pub fn train_step(state: &mut TrainerState, batch: &Tensor) -> Result<LossRecord> {
    let iter = state.iteration;
    let batch = if state.config.hflip {
        let mask: Vec<bool> = {
            let b = batch.batch();
            (0..b)
                .map(|_| state.rng.batch_indices(2, 1)[0] == 1)
                .collect()
        };
        hflip(batch, &mask)?
    } else {
        batch.clone()
    };
    let draws = draw_step_randoms(state);
    let fake1 = state.generate(&draws.z1)?; // detached G(z1)
    let schedule = state.schedule.clone();
    let kind = state.config.corruption.clone();
    let ts: &[usize] = &draws.ts;

    let (loss_match, loss_mismatch) = match state.config.variant {
        VariantKind::Original => {
            let mismatch_target = if state.config.mismatch_reuses_eps2 {
                &draws.eps[1]
            } else {
                &draws.eps[2]
            };
            if state.config.sum_score_losses {
                let mut tape = Tape::new();
                let pids = state.score.bind(&mut tape, true)?;
                let bound = BoundScore {
                    net: &state.score,
                    pids,
                };
                let lm = nan_guard(
                    loss_match_true(&mut tape, &bound, &batch, &draws.eps[0], ts, &schedule, &kind),
                    iter,
                    "match",
                )?;
                let lf = nan_guard(
                    loss_mismatch_fake(
                        &mut tape,
                        &bound,
                        &fake1,
                        &draws.eps[1],
                        mismatch_target,
                        ts,
                        &schedule,
                        &kind,
                    ),
                    iter,
                    "mismatch",
                )?;
                let (vm, vf) = (tape.value(lm).item(), tape.value(lf).item());
                let total = tape.add(lm, lf)?;
                tape.backward(total)?;
                apply_score_grads(state, &tape, &bound_ids(&bound))?;
                (vm, vf)
            } else {
                let vm = score_update(state, |tape, bound| {
                    loss_match_true(tape, bound, &batch, &draws.eps[0], ts, &schedule, &kind)
                }, iter, "match")?;
                let vf = score_update(state, |tape, bound| {
                    loss_mismatch_fake(
                        tape,
                        bound,
                        &fake1,
                        &draws.eps[1],
                        mismatch_target,
                        ts,
                        &schedule,
                        &kind,
                    )
                }, iter, "mismatch")?;
                (vm, vf)
            }
        }
        VariantKind::NoisyTarget => {
            let mut tape = Tape::new();
            let pids = state.score.bind(&mut tape, true)?;
            let bound = BoundScore {
                net: &state.score,
                pids,
            };
            let eps = [&draws.eps[0], &draws.eps[1], &draws.eps[2]];
            let (real, fake) = nan_guard(
                variant2_score_loss(&mut tape, &bound, &batch, &fake1, eps, ts, &schedule, &kind),
                iter,
                "variant2-score",
            )?;
            let (vm, vf) = (tape.value(real).item(), tape.value(fake).item());
            let total = tape.add(real, fake)?;
            tape.backward(total)?;
            apply_score_grads(state, &tape, &bound_ids(&bound))?;
            (vm, vf)
        }
        VariantKind::PairedInput => {
            let mut tape = Tape::new();
            let pids = state.score.bind(&mut tape, true)?;
            let bound = BoundScore {
                net: &state.score,
                pids,
            };
            let eps = [&draws.eps[0], &draws.eps[1], &draws.eps[2]];
            let (real, fake) = nan_guard(
                variant3_score_loss(&mut tape, &bound, &batch, &fake1, eps, ts, &schedule, &kind),
                iter,
                "variant3-score",
            )?;
            let (vm, vf) = (tape.value(real).item(), tape.value(fake).item());
            let total = tape.add(real, fake)?;
            tape.backward(total)?;
            apply_score_grads(state, &tape, &bound_ids(&bound))?;
            (vm, vf)
        }
    };

    // Generator update: score params frozen, gradient through the score input.
    let loss_generator = {
        let mut tape = Tape::new();
        let spids = state.score.bind(&mut tape, false)?;
        let bound = BoundScore {
            net: &state.score,
            pids: spids,
        };
        let gpids = state.gen.bind(&mut tape, true)?;
        let z2 = tape.constant(draws.z2.clone())?;
        let gen_out = state.gen.forward(&mut tape, &gpids, z2)?;
        let loss = match state.config.variant {
            VariantKind::Original => {
                let eps5 = state.config.duplicate_fake.then_some(&draws.eps[4]);
                nan_guard(
                    loss_generator(
                        &mut tape,
                        &bound,
                        gen_out,
                        &draws.eps[3],
                        eps5,
                        ts,
                        &schedule,
                        &kind,
                    ),
                    iter,
                    "generator",
                )?
            }
            VariantKind::NoisyTarget => nan_guard(
                variant2_gen_loss(&mut tape, &bound, gen_out, &draws.eps[3], ts, &schedule, &kind),
                iter,
                "variant2-generator",
            )?,
            VariantKind::PairedInput => nan_guard(
                variant3_gen_loss(&mut tape, &bound, gen_out, &draws.eps[3], ts, &schedule, &kind),
                iter,
                "variant3-generator",
            )?,
        };
        let v = tape.value(loss).item();
        tape.backward(loss)?;
        let grads: Vec<Option<Vec<f64>>> = gpids
            .iter()
            .map(|&pid| tape.grad(pid).map(<[f64]>::to_vec))
            .collect();
        adam_step(&mut state.gen.params, &grads, &mut state.adam_gen)?;
        v
    };

    state.iteration += 1;
    Ok(LossRecord {
        iteration: state.iteration,
        loss_match,
        loss_mismatch,
        loss_generator,
        wall_time_s: 0.0,
    })
}

fn bound_ids(bound: &BoundScore<'_>) -> Vec<VarId> {
    bound.pids.clone()
}

fn apply_score_grads(state: &mut TrainerState, tape: &Tape, pids: &[VarId]) -> Result<()> {
    let grads: Vec<Option<Vec<f64>>> = pids
        .iter()
        .map(|&pid| tape.grad(pid).map(<[f64]>::to_vec))
        .collect();
    adam_step(&mut state.score.params, &grads, &mut state.adam_score)
}

fn score_update<F>(
    state: &mut TrainerState,
    build: F,
    iteration: u64,
    name: &'static str,
) -> Result<f64>
where
    F: FnOnce(&mut Tape, &BoundScore<'_>) -> Result<VarId>,
{
    let mut tape = Tape::new();
    let pids = state.score.bind(&mut tape, true)?;
    let bound = BoundScore {
        net: &state.score,
        pids,
    };
    let loss = nan_guard(build(&mut tape, &bound), iteration, name)?;
    let v = tape.value(loss).item();
    tape.backward(loss)?;
    let ids = bound_ids(&bound);
    apply_score_grads(state, &tape, &ids)?;
    Ok(v)
}

pub struct TrainOutcome {
    pub state: TrainerState,
    pub records: Vec<LossRecord>,
    pub metrics_rows: Vec<MetricsRow>,
}

/// Size of the i.i.d. pool generated for synthetic datasets.
pub const SYNTHETIC_POOL: usize = 1 << 15;

/// Samples used per side for the periodic metric evaluation.
const EVAL_SAMPLES: usize = 256;

pub fn train_loop(config: &TrainingConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let dataset = load_dataset(&config.dataset, SYNTHETIC_POOL, config.seed ^ 0x5eed_da7a)?;
    let mut state = TrainerState::init(config.clone())?;
    run_loop(&mut state, &dataset)
}

/// Run (or resume) the loop until the configured iteration count. Metric
/// rows and checkpoints are emitted periodically when paths are configured.
pub fn run_loop(state: &mut TrainerState, dataset: &Dataset) -> Result<TrainOutcome> {
    let start = Instant::now();
    let iterations = state.config.iterations;
    let log_every = (iterations / 50).max(1);
    let checkpoint_every = (iterations / 5).max(1);
    let mut records = Vec::new();
    let mut metrics_rows = Vec::new();

    let mut metrics_file = match (&state.config.metrics_path, state.iteration) {
        (Some(path), 0) => {
            let mut f = std::fs::File::create(path)?;
            writeln!(f, "{METRICS_HEADER}")?;
            Some(f)
        }
        (Some(path), _) => Some(std::fs::OpenOptions::new().append(true).open(path)?),
        (None, _) => None,
    };

    if state.iteration == 0 {
        write_checkpoint_if_configured(state)?;
    }

    while state.iteration < iterations {
        let indices = state
            .rng
            .batch_indices(dataset.len(), state.config.batch_size);
        let batch = dataset.gather(&indices);
        let mut record = train_step(state, &batch)?;
        record.wall_time_s = start.elapsed().as_secs_f64();
        let iter = state.iteration;
        if iter % log_every == 0 || iter == iterations {
            let row = eval_metrics(state, dataset, &record)?;
            if let Some(f) = metrics_file.as_mut() {
                writeln!(f, "{}", row.to_csv())?;
            }
            metrics_rows.push(row);
        }
        if iter % checkpoint_every == 0 || iter == iterations {
            write_checkpoint_if_configured(state)?;
        }
        records.push(record);
    }

    Ok(TrainOutcome {
        state: TrainerState {
            config: state.config.clone(),
            schedule: state.schedule.clone(),
            score: state.score.clone(),
            gen: state.gen.clone(),
            adam_score: state.adam_score.clone(),
            adam_gen: state.adam_gen.clone(),
            rng: state.rng.clone(),
            iteration: state.iteration,
        },
        records,
        metrics_rows,
    })
}

fn write_checkpoint_if_configured(state: &TrainerState) -> Result<()> {
    if let Some(path) = &state.config.checkpoint_path {
        crate::checkpoint::save(state, path)?;
    }
    Ok(())
}

fn eval_metrics(state: &TrainerState, dataset: &Dataset, record: &LossRecord) -> Result<MetricsRow> {
    let eval_seed = state.config.seed ^ state.iteration.rotate_left(17);
    let n = EVAL_SAMPLES.min(dataset.len());
    let mut rng = ChaCha8Rng::from_seed(stream_seed(eval_seed, "eval-real"));
    let indices: Vec<usize> = (0..n).map(|_| rng.gen_range(0..dataset.len())).collect();
    let real = flatten_rows(&dataset.gather(&indices));
    let generated = flatten_rows(&sample_one_step(state, n, eval_seed)?);
    let (mmd, _) = mmd_rbf(&real, &generated, Bandwidth::Median)?;
    let sw = sliced_wasserstein(&real, &generated, 32, eval_seed)?;
    Ok(MetricsRow {
        iteration: record.iteration,
        loss_match: record.loss_match,
        loss_mismatch: record.loss_mismatch,
        loss_generator: record.loss_generator,
        mmd,
        sliced_wasserstein: sw,
        wall_time_s: record.wall_time_s,
        seed: state.config.seed,
    })
}

/// View an `[N, ...]` batch as `[N, d]` rows for the metric functions.
pub fn flatten_rows(t: &Tensor) -> Tensor {
    let n = t.shape[0];
    let d = t.numel() / n;
    Tensor {
        shape: vec![n, d],
        data: t.data.clone(),
    }
}
