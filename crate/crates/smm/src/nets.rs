//! Score network and one-step generator at desk scale.
//!
//! Vector configurations are plain MLPs for 2D data; image configurations
//! are small conv stacks for 28x28 grayscale. The score net is conditioned
//! on the diffusion step through a sinusoidal embedding mapped into each
//! hidden layer. Paired configurations take two sample-shaped inputs,
//! concatenated on the feature/channel axis (SMM variants 2 and 3).

use std::cell::Cell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SmmError};
use crate::rng::stream_seed;
use crate::tape::{Padding, Tape, VarId};
use crate::tensor::Tensor;

pub const TIME_EMBED_DIM: usize = 16;

/// Sinusoidal features of the diffusion step, shape `[1, TIME_EMBED_DIM]`.
pub fn time_embedding(t: usize) -> Tensor {
    let half = TIME_EMBED_DIM / 2;
    let mut data = Vec::with_capacity(TIME_EMBED_DIM);
    for k in 0..half {
        let freq = 1.0 / 10_000f64.powf(k as f64 / half as f64);
        let arg = t as f64 * freq;
        data.push(arg.sin());
        data.push(arg.cos());
    }
    Tensor {
        shape: vec![1, TIME_EMBED_DIM],
        data,
    }
}

/// Stacked sinusoidal embeddings, one row per sample's diffusion step.
pub fn time_embedding_batch(ts: &[usize]) -> Tensor {
    let mut data = Vec::with_capacity(ts.len() * TIME_EMBED_DIM);
    for &t in ts {
        data.extend_from_slice(&time_embedding(t).data);
    }
    Tensor {
        shape: vec![ts.len(), TIME_EMBED_DIM],
        data,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ScoreArch {
    VectorMlp {
        input_dim: usize,
        hidden: Vec<usize>,
        /// Two sample-shaped inputs, feature-concatenated before layer one.
        paired: bool,
    },
    ImageConv {
        in_channels: usize,
        height: usize,
        width: usize,
        channels: Vec<usize>,
        paired: bool,
    },
}

impl ScoreArch {
    pub fn sample_shape(&self) -> Vec<usize> {
        match self {
            ScoreArch::VectorMlp { input_dim, .. } => vec![*input_dim],
            ScoreArch::ImageConv {
                in_channels,
                height,
                width,
                ..
            } => vec![*in_channels, *height, *width],
        }
    }

    pub fn is_paired(&self) -> bool {
        match self {
            ScoreArch::VectorMlp { paired, .. } => *paired,
            ScoreArch::ImageConv { paired, .. } => *paired,
        }
    }

    fn validate(&self) -> Result<()> {
        let widths: &[usize] = match self {
            ScoreArch::VectorMlp {
                input_dim, hidden, ..
            } => {
                if *input_dim == 0 {
                    return Err(SmmError::InvalidArgument("zero input dim".into()));
                }
                hidden
            }
            ScoreArch::ImageConv {
                in_channels,
                height,
                width,
                channels,
                ..
            } => {
                if *in_channels == 0 || *height == 0 || *width == 0 {
                    return Err(SmmError::InvalidArgument("zero image extent".into()));
                }
                channels
            }
        };
        if widths.is_empty() || widths.contains(&0) {
            return Err(SmmError::InvalidArgument(
                "network needs nonzero layer widths".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GenArch {
    VectorMlp {
        latent_dim: usize,
        hidden: Vec<usize>,
        output_dim: usize,
    },
    /// Linear projection to `channels[0] x (H/4) x (W/4)`, then two rounds of
    /// nearest-2x upsample + conv, a final conv to `out_channels`, and tanh.
    ImageUpconv {
        latent_dim: usize,
        channels: Vec<usize>,
        out_channels: usize,
        height: usize,
        width: usize,
    },
}

impl GenArch {
    pub fn latent_dim(&self) -> usize {
        match self {
            GenArch::VectorMlp { latent_dim, .. } => *latent_dim,
            GenArch::ImageUpconv { latent_dim, .. } => *latent_dim,
        }
    }

    pub fn sample_shape(&self) -> Vec<usize> {
        match self {
            GenArch::VectorMlp { output_dim, .. } => vec![*output_dim],
            GenArch::ImageUpconv {
                out_channels,
                height,
                width,
                ..
            } => vec![*out_channels, *height, *width],
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            GenArch::VectorMlp {
                latent_dim,
                hidden,
                output_dim,
            } => {
                if *latent_dim == 0 || *output_dim == 0 || hidden.is_empty() || hidden.contains(&0)
                {
                    return Err(SmmError::InvalidArgument(
                        "generator needs nonzero layer widths".into(),
                    ));
                }
            }
            GenArch::ImageUpconv {
                latent_dim,
                channels,
                out_channels,
                height,
                width,
            } => {
                if *latent_dim == 0
                    || *out_channels == 0
                    || channels.len() != 3
                    || channels.contains(&0)
                {
                    return Err(SmmError::InvalidArgument(
                        "image generator needs latent dim and 3 nonzero channel widths".into(),
                    ));
                }
                if height % 4 != 0 || width % 4 != 0 || *height == 0 || *width == 0 {
                    return Err(SmmError::InvalidArgument(
                        "image generator extents must be multiples of 4".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// He-style uniform init: keeps activation scale roughly constant through
/// ReLU-family layers, so a fresh generator's tanh output spans (-1, 1)
/// instead of collapsing toward zero.
fn uniform_fan_in(rng: &mut ChaCha8Rng, fan_in: usize, shape: Vec<usize>) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor { shape, data }
}

/// Score network S: predicts an epsilon-shaped quantity from a (possibly
/// paired) corrupted sample and the diffusion step.
#[derive(Clone, Debug)]
pub struct ScoreNet {
    pub arch: ScoreArch,
    pub params: Vec<Tensor>,
    forward_count: Cell<u64>,
}

/// One-step generator G: latent vector to a complete sample in (-1, 1).
#[derive(Clone, Debug)]
pub struct GeneratorNet {
    pub arch: GenArch,
    pub params: Vec<Tensor>,
    forward_count: Cell<u64>,
}

impl ScoreNet {
    pub fn init(arch: ScoreArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::from_seed(stream_seed(seed, "score-init"));
        let mut params = Vec::new();
        match &arch {
            ScoreArch::VectorMlp {
                input_dim,
                hidden,
                paired,
            } => {
                let in0 = if *paired { 2 * input_dim } else { *input_dim };
                let mut prev = in0;
                for &hdim in hidden {
                    params.push(uniform_fan_in(&mut rng, prev, vec![prev, hdim]));
                    params.push(Tensor::zeros(vec![hdim]));
                    params.push(uniform_fan_in(
                        &mut rng,
                        TIME_EMBED_DIM,
                        vec![TIME_EMBED_DIM, hdim],
                    ));
                    prev = hdim;
                }
                params.push(uniform_fan_in(&mut rng, prev, vec![prev, *input_dim]));
                params.push(Tensor::zeros(vec![*input_dim]));
            }
            ScoreArch::ImageConv {
                in_channels,
                channels,
                paired,
                ..
            } => {
                let in0 = if *paired { 2 * in_channels } else { *in_channels };
                let mut prev = in0;
                for &c in channels {
                    params.push(uniform_fan_in(&mut rng, prev * 9, vec![c, prev, 3, 3]));
                    params.push(Tensor::zeros(vec![c]));
                    params.push(uniform_fan_in(
                        &mut rng,
                        TIME_EMBED_DIM,
                        vec![TIME_EMBED_DIM, c],
                    ));
                    prev = c;
                }
                params.push(uniform_fan_in(&mut rng, prev * 9, vec![*in_channels, prev, 3, 3]));
                params.push(Tensor::zeros(vec![*in_channels]));
            }
        }
        // Shrink the output layer so a fresh score net predicts near zero.
        // Until the match loss has shaped the score field, the generator's
        // gradient through a random score net is pure noise; starting the
        // field near zero keeps that early gradient incoherent (so Adam's
        // moment statistics suppress it) instead of letting the generator
        // race against an arbitrary random field and saturate its tanh.
        let out_weight = params.len() - 2;
        for v in &mut params[out_weight].data {
            *v *= 1e-2;
        }
        Ok(ScoreNet {
            arch,
            params,
            forward_count: Cell::new(0),
        })
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.params.iter().map(Tensor::numel).collect()
    }

    pub fn forward_count(&self) -> u64 {
        self.forward_count.get()
    }

    pub fn reset_forward_count(&self) {
        self.forward_count.set(0);
    }

    /// Put the parameters on a tape; trainable params become gradient leaves.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<Vec<VarId>> {
        self.params
            .iter()
            .map(|p| tape.leaf(p.clone(), trainable))
            .collect()
    }

    pub fn forward(&self, tape: &mut Tape, pids: &[VarId], x: VarId, t: usize) -> Result<VarId> {
        let batch = tape.value(x).batch();
        self.forward_steps(tape, pids, x, &vec![t; batch])
    }

    /// Forward with an independent diffusion step per sample.
    pub fn forward_steps(
        &self,
        tape: &mut Tape,
        pids: &[VarId],
        x: VarId,
        ts: &[usize],
    ) -> Result<VarId> {
        if self.arch.is_paired() {
            return Err(SmmError::InvalidArgument(
                "paired score net needs forward_paired".into(),
            ));
        }
        self.forward_inner(tape, pids, x, ts)
    }

    /// Paired forward: `a` and `b` are feature/channel-concatenated before
    /// the first layer; the prediction is shaped like `a`.
    pub fn forward_paired(
        &self,
        tape: &mut Tape,
        pids: &[VarId],
        a: VarId,
        b: VarId,
        t: usize,
    ) -> Result<VarId> {
        let batch = tape.value(a).batch();
        self.forward_paired_steps(tape, pids, a, b, &vec![t; batch])
    }

    /// Paired forward with an independent diffusion step per sample.
    pub fn forward_paired_steps(
        &self,
        tape: &mut Tape,
        pids: &[VarId],
        a: VarId,
        b: VarId,
        ts: &[usize],
    ) -> Result<VarId> {
        if !self.arch.is_paired() {
            return Err(SmmError::InvalidArgument(
                "score net was not built for paired input".into(),
            ));
        }
        if tape.value(a).shape != tape.value(b).shape {
            return Err(SmmError::ShapeMismatch {
                op: "forward_paired",
                lhs: tape.value(a).shape.clone(),
                rhs: tape.value(b).shape.clone(),
            });
        }
        let joined = tape.concat(&[a, b])?;
        self.forward_inner(tape, pids, joined, ts)
    }

    fn forward_inner(
        &self,
        tape: &mut Tape,
        pids: &[VarId],
        x: VarId,
        ts: &[usize],
    ) -> Result<VarId> {
        self.check_input(tape, x)?;
        if ts.len() != tape.value(x).batch() {
            return Err(SmmError::InvalidArgument(format!(
                "score forward got {} diffusion steps for a batch of {}",
                ts.len(),
                tape.value(x).batch()
            )));
        }
        self.forward_count.set(self.forward_count.get() + 1);
        let emb = tape.constant(time_embedding_batch(ts))?;
        match &self.arch {
            ScoreArch::VectorMlp { hidden, .. } => {
                let mut h = x;
                let mut k = 0;
                for _ in hidden {
                    let lin = tape.matmul(h, pids[k])?;
                    let biased = tape.add_bias(lin, pids[k + 1])?;
                    let tmap = tape.matmul(emb, pids[k + 2])?;
                    let conditioned = tape.add(biased, tmap)?;
                    h = tape.leaky_relu(conditioned, 0.2)?;
                    k += 3;
                }
                let out = tape.matmul(h, pids[k])?;
                tape.add_bias(out, pids[k + 1])
            }
            ScoreArch::ImageConv { channels, .. } => {
                let mut h = x;
                let mut k = 0;
                for _ in channels {
                    let conv = tape.conv2d(h, pids[k], 1, Padding::Same)?;
                    let biased = tape.add_chan_bias(conv, pids[k + 1])?;
                    let tmap = tape.matmul(emb, pids[k + 2])?;
                    let conditioned = tape.add_sample_chan(biased, tmap)?;
                    h = tape.leaky_relu(conditioned, 0.2)?;
                    k += 3;
                }
                let out = tape.conv2d(h, pids[k], 1, Padding::Same)?;
                tape.add_chan_bias(out, pids[k + 1])
            }
        }
    }

    fn check_input(&self, tape: &Tape, x: VarId) -> Result<()> {
        let shape = &tape.value(x).shape;
        let mut want = self.arch.sample_shape();
        if self.arch.is_paired() {
            want[0] *= 2;
        }
        if shape.len() != want.len() + 1 || shape[1..] != want[..] {
            return Err(SmmError::ShapeMismatch {
                op: "score_forward",
                lhs: shape.clone(),
                rhs: want,
            });
        }
        Ok(())
    }
}

impl GeneratorNet {
    pub fn init(arch: GenArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::from_seed(stream_seed(seed, "gen-init"));
        let mut params = Vec::new();
        match &arch {
            GenArch::VectorMlp {
                latent_dim,
                hidden,
                output_dim,
            } => {
                let mut prev = *latent_dim;
                for &hdim in hidden {
                    params.push(uniform_fan_in(&mut rng, prev, vec![prev, hdim]));
                    params.push(Tensor::zeros(vec![hdim]));
                    prev = hdim;
                }
                params.push(uniform_fan_in(&mut rng, prev, vec![prev, *output_dim]));
                params.push(Tensor::zeros(vec![*output_dim]));
            }
            GenArch::ImageUpconv {
                latent_dim,
                channels,
                out_channels,
                height,
                width,
            } => {
                let (h0, w0) = (height / 4, width / 4);
                let proj = channels[0] * h0 * w0;
                params.push(uniform_fan_in(&mut rng, *latent_dim, vec![*latent_dim, proj]));
                params.push(Tensor::zeros(vec![proj]));
                params.push(uniform_fan_in(
                    &mut rng,
                    channels[0] * 9,
                    vec![channels[1], channels[0], 3, 3],
                ));
                params.push(Tensor::zeros(vec![channels[1]]));
                params.push(uniform_fan_in(
                    &mut rng,
                    channels[1] * 9,
                    vec![channels[2], channels[1], 3, 3],
                ));
                params.push(Tensor::zeros(vec![channels[2]]));
                params.push(uniform_fan_in(
                    &mut rng,
                    channels[2] * 9,
                    vec![*out_channels, channels[2], 3, 3],
                ));
                params.push(Tensor::zeros(vec![*out_channels]));
            }
        }
        Ok(GeneratorNet {
            arch,
            params,
            forward_count: Cell::new(0),
        })
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.params.iter().map(Tensor::numel).collect()
    }

    pub fn forward_count(&self) -> u64 {
        self.forward_count.get()
    }

    pub fn reset_forward_count(&self) {
        self.forward_count.set(0);
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<Vec<VarId>> {
        self.params
            .iter()
            .map(|p| tape.leaf(p.clone(), trainable))
            .collect()
    }

    pub fn forward(&self, tape: &mut Tape, pids: &[VarId], z: VarId) -> Result<VarId> {
        let zshape = &tape.value(z).shape;
        if zshape.len() != 2 || zshape[1] != self.arch.latent_dim() {
            return Err(SmmError::ShapeMismatch {
                op: "generator_forward",
                lhs: zshape.clone(),
                rhs: vec![self.arch.latent_dim()],
            });
        }
        self.forward_count.set(self.forward_count.get() + 1);
        let batch = tape.value(z).batch();
        match &self.arch {
            GenArch::VectorMlp { hidden, .. } => {
                let mut h = z;
                let mut k = 0;
                for _ in hidden {
                    let lin = tape.matmul(h, pids[k])?;
                    let biased = tape.add_bias(lin, pids[k + 1])?;
                    // Tanh rather than ReLU: zero-mean hidden activations keep
                    // the fresh generator's output cloud centered. ReLU units
                    // all have positive mean, and through a fixed random
                    // output layer that mean becomes a large per-seed offset
                    // that saturates the output tanh toward one corner before
                    // training even starts.
                    h = tape.tanh(biased)?;
                    k += 2;
                }
                let out = tape.matmul(h, pids[k])?;
                let biased = tape.add_bias(out, pids[k + 1])?;
                tape.tanh(biased)
            }
            GenArch::ImageUpconv {
                channels,
                height,
                width,
                ..
            } => {
                let (h0, w0) = (height / 4, width / 4);
                let lin = tape.matmul(z, pids[0])?;
                let biased = tape.add_bias(lin, pids[1])?;
                // Tanh hiddens for the same reason as the vector generator:
                // ReLU's positive activation mean turns into a constant output
                // offset that parks the output tanh near saturation, and the
                // mismatch update then flattens the score field around that
                // constant image before any structure can form.
                let act = tape.tanh(biased)?;
                let grid = tape.reshape(act, vec![batch, channels[0], h0, w0])?;
                let up1 = tape.upsample2x(grid)?;
                let c1 = tape.conv2d(up1, pids[2], 1, Padding::Same)?;
                let c1b = tape.add_chan_bias(c1, pids[3])?;
                let a1 = tape.tanh(c1b)?;
                let up2 = tape.upsample2x(a1)?;
                let c2 = tape.conv2d(up2, pids[4], 1, Padding::Same)?;
                let c2b = tape.add_chan_bias(c2, pids[5])?;
                let a2 = tape.tanh(c2b)?;
                let c3 = tape.conv2d(a2, pids[6], 1, Padding::Same)?;
                let c3b = tape.add_chan_bias(c3, pids[7])?;
                tape.tanh(c3b)
            }
        }
    }
}

/// Default 2D-task score net: MLP 2 -> 128 -> 128 -> 2.
pub fn default_vector_score_arch(paired: bool) -> ScoreArch {
    ScoreArch::VectorMlp {
        input_dim: 2,
        hidden: vec![128, 128],
        paired,
    }
}

/// Default 2D-task generator: MLP 64 -> 128 -> 128 -> 2.
pub fn default_vector_gen_arch() -> GenArch {
    GenArch::VectorMlp {
        latent_dim: 64,
        hidden: vec![128, 128],
        output_dim: 2,
    }
}

/// Default image score net: 3 conv layers, channels 16/32/32.
pub fn default_image_score_arch(paired: bool) -> ScoreArch {
    ScoreArch::ImageConv {
        in_channels: 1,
        height: 28,
        width: 28,
        channels: vec![16, 32, 32],
        paired,
    }
}

/// Default image generator: latent 128, upsampling stack to 28x28.
pub fn default_image_gen_arch() -> GenArch {
    GenArch::ImageUpconv {
        latent_dim: 128,
        channels: vec![32, 32, 16],
        out_channels: 1,
        height: 28,
        width: 28,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_score() -> ScoreNet {
        ScoreNet::init(default_vector_score_arch(false), 11).unwrap()
    }

    #[test]
    fn score_output_shape_matches_input() {
        let net = vec_score();
        let mut tape = Tape::new();
        let pids = net.bind(&mut tape, false).unwrap();
        let x = tape
            .constant(Tensor::new(vec![3, 2], vec![0.1; 6]).unwrap())
            .unwrap();
        let out = net.forward(&mut tape, &pids, x, 1).unwrap();
        assert_eq!(tape.value(out).shape, vec![3, 2]);
    }

    #[test]
    fn score_is_time_conditioned() {
        let net = vec_score();
        let run = |t: usize| {
            let mut tape = Tape::new();
            let pids = net.bind(&mut tape, false).unwrap();
            let x = tape
                .constant(Tensor::new(vec![1, 2], vec![0.3, -0.4]).unwrap())
                .unwrap();
            let out = net.forward(&mut tape, &pids, x, t).unwrap();
            tape.value(out).data.clone()
        };
        assert_ne!(run(1), run(10));
    }

    #[test]
    fn score_forward_deterministic() {
        let a = vec_score();
        let b = vec_score();
        assert_eq!(a.params, b.params);
        let run = |net: &ScoreNet| {
            let mut tape = Tape::new();
            let pids = net.bind(&mut tape, false).unwrap();
            let x = tape
                .constant(Tensor::new(vec![1, 2], vec![0.3, -0.4]).unwrap())
                .unwrap();
            let out = net.forward(&mut tape, &pids, x, 3).unwrap();
            tape.value(out).data.clone()
        };
        assert_eq!(run(&a), run(&b));
    }

    #[test]
    fn different_seeds_differ() {
        let a = ScoreNet::init(default_vector_score_arch(false), 1).unwrap();
        let b = ScoreNet::init(default_vector_score_arch(false), 2).unwrap();
        assert_ne!(a.params[0].data, b.params[0].data);
    }

    #[test]
    fn zero_width_layer_rejected() {
        let arch = ScoreArch::VectorMlp {
            input_dim: 2,
            hidden: vec![128, 0],
            paired: false,
        };
        assert!(ScoreNet::init(arch, 0).is_err());
    }

    #[test]
    fn paired_forward_contract() {
        let net = ScoreNet::init(default_vector_score_arch(true), 5).unwrap();
        let mut tape = Tape::new();
        let pids = net.bind(&mut tape, false).unwrap();
        let a = tape
            .constant(Tensor::new(vec![2, 2], vec![0.5, -0.2, 0.1, 0.9]).unwrap())
            .unwrap();
        let b = tape
            .constant(Tensor::new(vec![2, 2], vec![-0.3, 0.8, 0.0, 0.4]).unwrap())
            .unwrap();
        let out = net.forward_paired(&mut tape, &pids, a, b, 2).unwrap();
        assert_eq!(tape.value(out).shape, vec![2, 2]);
        // order matters for a random net
        let swapped = net.forward_paired(&mut tape, &pids, b, a, 2).unwrap();
        assert_ne!(tape.value(out).data, tape.value(swapped).data);
        // zero inputs stay finite
        let z = tape.constant(Tensor::zeros(vec![2, 2])).unwrap();
        let zout = net.forward_paired(&mut tape, &pids, z, z, 2).unwrap();
        assert!(tape.value(zout).is_finite());
    }

    #[test]
    fn generator_range_and_batching() {
        let net = GeneratorNet::init(default_vector_gen_arch(), 7).unwrap();
        let mut tape = Tape::new();
        let pids = net.bind(&mut tape, false).unwrap();
        let z = tape
            .constant(Tensor::new(vec![4, 64], vec![0.37; 4 * 64]).unwrap())
            .unwrap();
        let out = net.forward(&mut tape, &pids, z).unwrap();
        assert_eq!(tape.value(out).shape, vec![4, 2]);
        for &v in &tape.value(out).data {
            assert!(v > -1.0 && v < 1.0);
        }
    }

    #[test]
    fn generator_rejects_wrong_latent() {
        let net = GeneratorNet::init(default_vector_gen_arch(), 7).unwrap();
        let mut tape = Tape::new();
        let pids = net.bind(&mut tape, false).unwrap();
        let z = tape.constant(Tensor::zeros(vec![1, 32])).unwrap();
        assert!(net.forward(&mut tape, &pids, z).is_err());
    }

    #[test]
    fn image_nets_shapes() {
        let snet = ScoreNet::init(
            ScoreArch::ImageConv {
                in_channels: 1,
                height: 8,
                width: 8,
                channels: vec![4, 4, 4],
                paired: false,
            },
            3,
        )
        .unwrap();
        let gnet = GeneratorNet::init(
            GenArch::ImageUpconv {
                latent_dim: 16,
                channels: vec![8, 8, 4],
                out_channels: 1,
                height: 8,
                width: 8,
            },
            4,
        )
        .unwrap();
        let mut tape = Tape::new();
        let spids = snet.bind(&mut tape, false).unwrap();
        let gpids = gnet.bind(&mut tape, false).unwrap();
        let z = tape.constant(Tensor::zeros(vec![2, 16])).unwrap();
        let img = gnet.forward(&mut tape, &gpids, z).unwrap();
        assert_eq!(tape.value(img).shape, vec![2, 1, 8, 8]);
        let pred = snet.forward(&mut tape, &spids, img, 5).unwrap();
        assert_eq!(tape.value(pred).shape, vec![2, 1, 8, 8]);
    }

    #[test]
    fn forward_counter_counts() {
        let net = GeneratorNet::init(default_vector_gen_arch(), 7).unwrap();
        assert_eq!(net.forward_count(), 0);
        let mut tape = Tape::new();
        let pids = net.bind(&mut tape, false).unwrap();
        let z = tape.constant(Tensor::zeros(vec![1, 64])).unwrap();
        net.forward(&mut tape, &pids, z).unwrap();
        assert_eq!(net.forward_count(), 1);
    }
}
