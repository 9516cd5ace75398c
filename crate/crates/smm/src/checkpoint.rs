//! Binary run checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "SMMCKPT\0" | version u32 | section count u32
//! per section: id u32 | payload length u64 | payload
//! trailing CRC-32 (IEEE) over everything before it
//! ```
//!
//! Sections: config snapshot (config-file text), the two architecture
//! descriptors, both parameter sets, both optimizer states, RNG stream
//! positions, and the iteration counter. The config snapshot stores the
//! file-format keys only; output paths and test-only flags are not
//! persisted and reset on load.

use std::path::Path;

use crate::config::{parse_config, render_config};
use crate::error::{Result, SmmError};
use crate::nets::{GenArch, GeneratorNet, ScoreArch, ScoreNet};
use crate::optim::AdamState;
use crate::rng::RngStreams;
use crate::schedule::build_schedule;
use crate::tensor::Tensor;
use crate::trainer::TrainerState;

pub const MAGIC: [u8; 8] = *b"SMMCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

const SEC_CONFIG: u32 = 1;
const SEC_SCORE_ARCH: u32 = 2;
const SEC_GEN_ARCH: u32 = 3;
const SEC_SCORE_PARAMS: u32 = 4;
const SEC_GEN_PARAMS: u32 = 5;
const SEC_ADAM_SCORE: u32 = 6;
const SEC_ADAM_GEN: u32 = 7;
const SEC_RNG: u32 = 8;
const SEC_ITERATION: u32 = 9;

/// CRC-32 (IEEE 802.3, reflected, polynomial 0xEDB88320).
pub fn crc32(bytes: &[u8]) -> u32 {
    let mut table = [0u32; 256];
    for (i, entry) in table.iter_mut().enumerate() {
        let mut c = i as u32;
        for _ in 0..8 {
            c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
        }
        *entry = c;
    }
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc = table[((crc ^ b as u32) & 0xFF) as usize] ^ (crc >> 8);
    }
    crc ^ 0xFFFF_FFFF
}

fn put_usize(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u64).to_le_bytes());
}

fn encode_tensors(params: &[Tensor]) -> Vec<u8> {
    let mut out = Vec::new();
    put_usize(&mut out, params.len());
    for p in params {
        put_usize(&mut out, p.shape.len());
        for &d in &p.shape {
            put_usize(&mut out, d);
        }
        for &x in &p.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

fn encode_adam(state: &AdamState) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&state.step.to_le_bytes());
    for v in [state.learning_rate, state.beta1, state.beta2, state.eps] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for moments in [&state.m, &state.v] {
        put_usize(&mut out, moments.len());
        for m in moments {
            put_usize(&mut out, m.len());
            for &x in m {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    out
}

fn encode_score_arch(arch: &ScoreArch) -> String {
    match arch {
        ScoreArch::VectorMlp {
            input_dim,
            hidden,
            paired,
        } => format!(
            "vector_mlp input_dim={input_dim} hidden={} paired={paired}",
            join(hidden)
        ),
        ScoreArch::ImageConv {
            in_channels,
            height,
            width,
            channels,
            paired,
        } => format!(
            "image_conv in_channels={in_channels} height={height} width={width} channels={} paired={paired}",
            join(channels)
        ),
    }
}

fn encode_gen_arch(arch: &GenArch) -> String {
    match arch {
        GenArch::VectorMlp {
            latent_dim,
            hidden,
            output_dim,
        } => format!(
            "vector_mlp latent_dim={latent_dim} hidden={} output_dim={output_dim}",
            join(hidden)
        ),
        GenArch::ImageUpconv {
            latent_dim,
            channels,
            out_channels,
            height,
            width,
        } => format!(
            "image_upconv latent_dim={latent_dim} channels={} out_channels={out_channels} height={height} width={width}",
            join(channels)
        ),
    }
}

fn join(v: &[usize]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

/// Serialize the full trainer state to bytes.
pub fn encode(state: &TrainerState) -> Vec<u8> {
    let mut rng_bytes = Vec::new();
    rng_bytes.extend_from_slice(&state.rng.master_seed.to_le_bytes());
    let positions = state.rng.positions();
    put_usize(&mut rng_bytes, positions.len());
    for p in positions {
        rng_bytes.extend_from_slice(&p.to_le_bytes());
    }

    let sections: Vec<(u32, Vec<u8>)> = vec![
        (SEC_CONFIG, render_config(&state.config).into_bytes()),
        (SEC_SCORE_ARCH, encode_score_arch(&state.score.arch).into_bytes()),
        (SEC_GEN_ARCH, encode_gen_arch(&state.gen.arch).into_bytes()),
        (SEC_SCORE_PARAMS, encode_tensors(&state.score.params)),
        (SEC_GEN_PARAMS, encode_tensors(&state.gen.params)),
        (SEC_ADAM_SCORE, encode_adam(&state.adam_score)),
        (SEC_ADAM_GEN, encode_adam(&state.adam_gen)),
        (SEC_RNG, rng_bytes),
        (SEC_ITERATION, state.iteration.to_le_bytes().to_vec()),
    ];

    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
    for (id, payload) in &sections {
        out.extend_from_slice(&id.to_le_bytes());
        put_usize(&mut out, payload.len());
        out.extend_from_slice(payload);
    }
    let crc = crc32(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn save(state: &TrainerState, path: &Path) -> Result<()> {
    std::fs::write(path, encode(state))?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(SmmError::Checkpoint(format!(
                "truncated: needed {n} bytes at offset {}, have {}",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| SmmError::Checkpoint(format!("length {v} out of range")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn decode_tensors(payload: &[u8]) -> Result<Vec<Tensor>> {
    let mut r = Reader {
        bytes: payload,
        pos: 0,
    };
    let count = r.usize()?;
    if count > 1 << 20 {
        return Err(SmmError::Checkpoint(format!("implausible tensor count {count}")));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let ndim = r.usize()?;
        if ndim > 8 {
            return Err(SmmError::Checkpoint(format!("implausible rank {ndim}")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.usize()?);
        }
        let numel: usize = shape.iter().try_fold(1usize, |a, &b| a.checked_mul(b)).ok_or_else(
            || SmmError::Checkpoint("tensor shape overflows".into()),
        )?;
        if numel.checked_mul(8).map_or(true, |n| n > payload.len()) {
            return Err(SmmError::Checkpoint("tensor payload larger than section".into()));
        }
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(r.f64()?);
        }
        out.push(Tensor::new(shape, data)?);
    }
    if !r.done() {
        return Err(SmmError::Checkpoint("trailing bytes after tensors".into()));
    }
    Ok(out)
}

fn decode_adam(payload: &[u8]) -> Result<AdamState> {
    let mut r = Reader {
        bytes: payload,
        pos: 0,
    };
    let step = r.u64()?;
    let learning_rate = r.f64()?;
    let beta1 = r.f64()?;
    let beta2 = r.f64()?;
    let eps = r.f64()?;
    let mut moments = [Vec::new(), Vec::new()];
    for slot in &mut moments {
        let count = r.usize()?;
        if count > 1 << 20 {
            return Err(SmmError::Checkpoint(format!("implausible moment count {count}")));
        }
        for _ in 0..count {
            let len = r.usize()?;
            if len.checked_mul(8).map_or(true, |n| n > payload.len()) {
                return Err(SmmError::Checkpoint("moment vector larger than section".into()));
            }
            let mut m = Vec::with_capacity(len);
            for _ in 0..len {
                m.push(r.f64()?);
            }
            slot.push(m);
        }
    }
    if !r.done() {
        return Err(SmmError::Checkpoint("trailing bytes after optimizer state".into()));
    }
    let [m, v] = moments;
    Ok(AdamState {
        step,
        learning_rate,
        beta1,
        beta2,
        eps,
        m,
        v,
    })
}

fn arch_fields<'a>(text: &'a str, kind: &str) -> Result<(String, Vec<(&'a str, &'a str)>)> {
    let mut parts = text.split_whitespace();
    let tag = parts
        .next()
        .ok_or_else(|| SmmError::Checkpoint(format!("empty {kind} descriptor")))?;
    let mut fields = Vec::new();
    for p in parts {
        let (k, v) = p
            .split_once('=')
            .ok_or_else(|| SmmError::Checkpoint(format!("bad {kind} field `{p}`")))?;
        fields.push((k, v));
    }
    Ok((tag.to_string(), fields))
}

fn field<'a>(fields: &[(&'a str, &'a str)], key: &str, kind: &str) -> Result<&'a str> {
    fields
        .iter()
        .find(|(k, _)| *k == key)
        .map(|(_, v)| *v)
        .ok_or_else(|| SmmError::Checkpoint(format!("{kind} descriptor missing `{key}`")))
}

fn parse_num(v: &str, kind: &str) -> Result<usize> {
    v.parse()
        .map_err(|_| SmmError::Checkpoint(format!("bad number `{v}` in {kind} descriptor")))
}

fn parse_list(v: &str, kind: &str) -> Result<Vec<usize>> {
    v.split(',').map(|s| parse_num(s, kind)).collect()
}

fn parse_flag(v: &str, kind: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(SmmError::Checkpoint(format!("bad flag `{v}` in {kind} descriptor"))),
    }
}

fn decode_score_arch(text: &str) -> Result<ScoreArch> {
    let (tag, f) = arch_fields(text, "score arch")?;
    match tag.as_str() {
        "vector_mlp" => Ok(ScoreArch::VectorMlp {
            input_dim: parse_num(field(&f, "input_dim", "score arch")?, "score arch")?,
            hidden: parse_list(field(&f, "hidden", "score arch")?, "score arch")?,
            paired: parse_flag(field(&f, "paired", "score arch")?, "score arch")?,
        }),
        "image_conv" => Ok(ScoreArch::ImageConv {
            in_channels: parse_num(field(&f, "in_channels", "score arch")?, "score arch")?,
            height: parse_num(field(&f, "height", "score arch")?, "score arch")?,
            width: parse_num(field(&f, "width", "score arch")?, "score arch")?,
            channels: parse_list(field(&f, "channels", "score arch")?, "score arch")?,
            paired: parse_flag(field(&f, "paired", "score arch")?, "score arch")?,
        }),
        other => Err(SmmError::Checkpoint(format!("unknown score arch `{other}`"))),
    }
}

fn decode_gen_arch(text: &str) -> Result<GenArch> {
    let (tag, f) = arch_fields(text, "gen arch")?;
    match tag.as_str() {
        "vector_mlp" => Ok(GenArch::VectorMlp {
            latent_dim: parse_num(field(&f, "latent_dim", "gen arch")?, "gen arch")?,
            hidden: parse_list(field(&f, "hidden", "gen arch")?, "gen arch")?,
            output_dim: parse_num(field(&f, "output_dim", "gen arch")?, "gen arch")?,
        }),
        "image_upconv" => Ok(GenArch::ImageUpconv {
            latent_dim: parse_num(field(&f, "latent_dim", "gen arch")?, "gen arch")?,
            channels: parse_list(field(&f, "channels", "gen arch")?, "gen arch")?,
            out_channels: parse_num(field(&f, "out_channels", "gen arch")?, "gen arch")?,
            height: parse_num(field(&f, "height", "gen arch")?, "gen arch")?,
            width: parse_num(field(&f, "width", "gen arch")?, "gen arch")?,
        }),
        other => Err(SmmError::Checkpoint(format!("unknown gen arch `{other}`"))),
    }
}

/// Decode a checkpoint back into a runnable trainer state.
pub fn decode(bytes: &[u8]) -> Result<TrainerState> {
    if bytes.len() < MAGIC.len() + 8 + 4 {
        return Err(SmmError::Checkpoint("file too short".into()));
    }
    if bytes[..MAGIC.len()] != MAGIC {
        return Err(SmmError::Checkpoint("bad magic bytes".into()));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    let actual = crc32(body);
    if stored != actual {
        return Err(SmmError::Checkpoint(format!(
            "checksum mismatch: stored {stored:#010x}, computed {actual:#010x}"
        )));
    }
    let mut r = Reader {
        bytes: body,
        pos: MAGIC.len(),
    };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(SmmError::Checkpoint(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let count = r.u32()?;
    let mut config = None;
    let mut score_arch = None;
    let mut gen_arch = None;
    let mut score_params = None;
    let mut gen_params = None;
    let mut adam_score = None;
    let mut adam_gen = None;
    let mut rng = None;
    let mut iteration = None;
    for _ in 0..count {
        let id = r.u32()?;
        let len = r.usize()?;
        let payload = r.take(len)?;
        match id {
            SEC_CONFIG => {
                let text = std::str::from_utf8(payload)
                    .map_err(|_| SmmError::Checkpoint("config section not UTF-8".into()))?;
                config = Some(parse_config(text).map_err(|e| {
                    SmmError::Checkpoint(format!("embedded config invalid: {e}"))
                })?);
            }
            SEC_SCORE_ARCH => {
                let text = std::str::from_utf8(payload)
                    .map_err(|_| SmmError::Checkpoint("arch section not UTF-8".into()))?;
                score_arch = Some(decode_score_arch(text)?);
            }
            SEC_GEN_ARCH => {
                let text = std::str::from_utf8(payload)
                    .map_err(|_| SmmError::Checkpoint("arch section not UTF-8".into()))?;
                gen_arch = Some(decode_gen_arch(text)?);
            }
            SEC_SCORE_PARAMS => score_params = Some(decode_tensors(payload)?),
            SEC_GEN_PARAMS => gen_params = Some(decode_tensors(payload)?),
            SEC_ADAM_SCORE => adam_score = Some(decode_adam(payload)?),
            SEC_ADAM_GEN => adam_gen = Some(decode_adam(payload)?),
            SEC_RNG => {
                let mut rr = Reader {
                    bytes: payload,
                    pos: 0,
                };
                let master = rr.u64()?;
                let n = rr.usize()?;
                if n > 64 {
                    return Err(SmmError::Checkpoint(format!("implausible stream count {n}")));
                }
                let mut positions = Vec::with_capacity(n);
                for _ in 0..n {
                    positions.push(rr.u128()?);
                }
                rng = Some(RngStreams::restore(master, &positions));
            }
            SEC_ITERATION => {
                let mut rr = Reader {
                    bytes: payload,
                    pos: 0,
                };
                iteration = Some(rr.u64()?);
            }
            other => {
                return Err(SmmError::Checkpoint(format!("unknown section id {other}")));
            }
        }
    }
    if !r.done() {
        return Err(SmmError::Checkpoint("trailing bytes after sections".into()));
    }

    let missing = |name: &str| SmmError::Checkpoint(format!("missing section: {name}"));
    let config = config.ok_or_else(|| missing("config"))?;
    let score_arch = score_arch.ok_or_else(|| missing("score arch"))?;
    let gen_arch = gen_arch.ok_or_else(|| missing("gen arch"))?;
    let score_params = score_params.ok_or_else(|| missing("score params"))?;
    let gen_params = gen_params.ok_or_else(|| missing("gen params"))?;
    let adam_score = adam_score.ok_or_else(|| missing("score optimizer"))?;
    let adam_gen = adam_gen.ok_or_else(|| missing("gen optimizer"))?;
    let rng = rng.ok_or_else(|| missing("rng"))?;
    let iteration = iteration.ok_or_else(|| missing("iteration"))?;

    let mut score = ScoreNet::init(score_arch, config.seed)?;
    if score.param_sizes() != score_params.iter().map(Tensor::numel).collect::<Vec<_>>() {
        return Err(SmmError::Checkpoint(
            "score parameters do not match architecture".into(),
        ));
    }
    score.params = score_params;
    let mut gen = GeneratorNet::init(gen_arch, config.seed)?;
    if gen.param_sizes() != gen_params.iter().map(Tensor::numel).collect::<Vec<_>>() {
        return Err(SmmError::Checkpoint(
            "generator parameters do not match architecture".into(),
        ));
    }
    gen.params = gen_params;

    let schedule = build_schedule(config.t_steps, config.beta_min, config.beta_max)?;
    Ok(TrainerState {
        config,
        schedule,
        score,
        gen,
        adam_score,
        adam_gen,
        rng,
        iteration,
    })
}

pub fn load(path: &Path) -> Result<TrainerState> {
    let bytes = std::fs::read(path)?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::{train_step, TrainerState, TrainingConfig};

    fn trained_state() -> TrainerState {
        let mut state = TrainerState::init(TrainingConfig {
            batch_size: 4,
            seed: 11,
            ..TrainingConfig::default()
        })
        .unwrap();
        let batch = state.rng.normal_tensor(crate::rng::Stream::DataShuffle, vec![4, 2]);
        for _ in 0..3 {
            train_step(&mut state, &batch).unwrap();
        }
        state
    }

    #[test]
    fn roundtrip_is_bitwise_identical() {
        let state = trained_state();
        let bytes = encode(&state);
        let restored = decode(&bytes).unwrap();
        assert_eq!(restored.iteration, state.iteration);
        assert_eq!(restored.config, state.config);
        for (a, b) in restored.score.params.iter().zip(&state.score.params) {
            assert_eq!(a.data, b.data);
        }
        for (a, b) in restored.gen.params.iter().zip(&state.gen.params) {
            assert_eq!(a.data, b.data);
        }
        assert_eq!(restored.adam_score.m, state.adam_score.m);
        assert_eq!(restored.adam_gen.v, state.adam_gen.v);
        assert_eq!(restored.rng.positions(), state.rng.positions());
        // re-encoding reproduces the same bytes
        assert_eq!(encode(&restored), bytes);
    }

    #[test]
    fn corrupted_byte_fails_checksum() {
        let mut bytes = encode(&trained_state());
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        let err = decode(&bytes).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = encode(&trained_state());
        bytes[0] = b'X';
        let err = decode(&bytes).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }

    #[test]
    fn wrong_version_rejected() {
        let mut bytes = encode(&trained_state());
        // bump the version field and fix up the checksum so only the version
        // check can fire
        bytes[8] = 99;
        let n = bytes.len();
        let crc = crc32(&bytes[..n - 4]);
        bytes[n - 4..].copy_from_slice(&crc.to_le_bytes());
        let err = decode(&bytes).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }

    #[test]
    fn truncated_file_rejected() {
        let bytes = encode(&trained_state());
        for cut in [3, bytes.len() / 3, bytes.len() - 1] {
            assert!(decode(&bytes[..cut]).is_err(), "cut at {cut} accepted");
        }
    }

    #[test]
    fn crc32_known_vector() {
        // standard check value for the ASCII string "123456789"
        assert_eq!(crc32(b"123456789"), 0xCBF4_3926);
    }

    #[test]
    fn restored_state_trains_identically() {
        let state = trained_state();
        let bytes = encode(&state);
        let mut a = decode(&bytes).unwrap();
        let mut b = decode(&bytes).unwrap();
        let batch =
            Tensor::new(vec![4, 2], vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6, 0.0, -0.1]).unwrap();
        let ra = train_step(&mut a, &batch).unwrap();
        let rb = train_step(&mut b, &batch).unwrap();
        assert_eq!(ra.loss_match.to_bits(), rb.loss_match.to_bits());
        assert_eq!(ra.loss_generator.to_bits(), rb.loss_generator.to_bits());
    }
}
