//! Diffusion noise schedule and the three corruption kinds.
//!
//! The schedule is the DDPM-style linear beta ladder: `alpha_bar_t` is the
//! running product of `1 - beta_i` and `sigma_t = sqrt(1 - alpha_bar_t)` is
//! the corruption noise scale at step `t` (1-based).

use crate::error::{Result, SmmError};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
    pub sigmas: Vec<f64>,
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// `sigma_t` for a 1-based step index.
    pub fn sigma(&self, t: usize) -> Result<f64> {
        self.check_step(t)?;
        Ok(self.sigmas[t - 1])
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.check_step(t)?;
        Ok(self.alpha_bars[t - 1])
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(SmmError::InvalidArgument(format!(
                "diffusion step {t} out of range 1..={}",
                self.steps()
            )));
        }
        Ok(())
    }
}

/// Linear beta schedule from `beta_min` to `beta_max` over `t_steps` steps.
pub fn build_schedule(t_steps: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    if t_steps == 0 {
        return Err(SmmError::InvalidArgument("schedule needs T >= 1".into()));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(SmmError::InvalidArgument(format!(
            "betas must satisfy 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}"
        )));
    }
    let betas: Vec<f64> = if t_steps == 1 {
        vec![beta_min]
    } else {
        (0..t_steps)
            .map(|i| beta_min + (beta_max - beta_min) * i as f64 / (t_steps - 1) as f64)
            .collect()
    };
    let mut alpha_bars = Vec::with_capacity(t_steps);
    let mut prod = 1.0;
    for &b in &betas {
        prod *= 1.0 - b;
        alpha_bars.push(prod);
    }
    let sigmas = alpha_bars.iter().map(|&ab| (1.0 - ab).sqrt()).collect();
    Ok(NoiseSchedule {
        betas,
        alpha_bars,
        sigmas,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum CorruptionKind {
    ZeroMean,
    NonZeroMean,
    SpatialDiffusion {
        ratio: f64,
        /// Field update count per diffusion step; the field for step `t` is
        /// evolved `t * steps_per_t` times from the center seed.
        steps_per_t: usize,
    },
}

impl CorruptionKind {
    pub fn validate(&self) -> Result<()> {
        if let CorruptionKind::SpatialDiffusion { ratio, steps_per_t } = self {
            if !(*ratio > 0.0 && *ratio <= 0.25) {
                return Err(SmmError::InvalidArgument(format!(
                    "spatial diffusion ratio must be in (0, 0.25], got {ratio}"
                )));
            }
            if *steps_per_t == 0 {
                return Err(SmmError::InvalidArgument(
                    "spatial diffusion steps_per_t must be >= 1".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Per-pixel corruption degree in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct CorruptionField {
    pub height: usize,
    pub width: usize,
    pub grid: Vec<f64>,
}

/// All zeros except the center pixel at 1.
pub fn init_center_field(height: usize, width: usize) -> Result<CorruptionField> {
    if height == 0 || width == 0 {
        return Err(SmmError::InvalidArgument("field extents must be >= 1".into()));
    }
    let mut grid = vec![0.0; height * width];
    grid[(height / 2) * width + width / 2] = 1.0;
    Ok(CorruptionField {
        height,
        width,
        grid,
    })
}

/// One synchronous explicit-diffusion update of the field: each pixel gains
/// `ratio * (neighbour - self)` flux from its 4-neighbourhood. Missing
/// neighbours at the boundary contribute zero flux, which conserves mass.
pub fn spatial_field_step(field: &CorruptionField, ratio: f64) -> Result<CorruptionField> {
    if !(ratio > 0.0 && ratio <= 0.25) {
        return Err(SmmError::InvalidArgument(format!(
            "field update ratio must be in (0, 0.25], got {ratio}"
        )));
    }
    let (h, w) = (field.height, field.width);
    let src = &field.grid;
    let mut grid = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let c = src[y * w + x];
            let mut delta = 0.0;
            if y > 0 {
                delta += src[(y - 1) * w + x] - c;
            }
            if y + 1 < h {
                delta += src[(y + 1) * w + x] - c;
            }
            if x > 0 {
                delta += src[y * w + x - 1] - c;
            }
            if x + 1 < w {
                delta += src[y * w + x + 1] - c;
            }
            grid[y * w + x] = c + delta * ratio;
        }
    }
    Ok(CorruptionField {
        height: h,
        width: w,
        grid,
    })
}

/// The corruption field used at diffusion step `t` (evolved from the center
/// seed), so corruption spreads progressively with `t`.
pub fn field_at_step(
    height: usize,
    width: usize,
    t: usize,
    ratio: f64,
    steps_per_t: usize,
) -> Result<CorruptionField> {
    let mut field = init_center_field(height, width)?;
    for _ in 0..t * steps_per_t {
        field = spatial_field_step(&field, ratio)?;
    }
    Ok(field)
}

/// Corrupt a data batch with noise at diffusion step `t`.
///
/// `ZeroMean`: `x + eps * sigma_t`.
/// `NonZeroMean`: `sqrt(alpha_bar_t) * x + eps * sigma_t`.
/// `SpatialDiffusion`: `x + eps * sigma_t * c` with the evolved field `c`
/// broadcast over batch and channels; `x` must be image-shaped `[B, C, H, W]`.
pub fn corrupt(
    x: &Tensor,
    eps: &Tensor,
    t: usize,
    schedule: &NoiseSchedule,
    kind: &CorruptionKind,
) -> Result<Tensor> {
    if x.shape != eps.shape {
        return Err(SmmError::ShapeMismatch {
            op: "corrupt",
            lhs: x.shape.clone(),
            rhs: eps.shape.clone(),
        });
    }
    let term = noise_term(&x.shape, eps, t, schedule, kind)?;
    let scale_x = data_scale(t, schedule, kind)?;
    let data = x
        .data
        .iter()
        .zip(&term.data)
        .map(|(&xv, &n)| scale_x * xv + n)
        .collect();
    Ok(Tensor {
        shape: x.shape.clone(),
        data,
    })
}

/// Multiplier applied to the clean data under `kind` at step `t`.
pub fn data_scale(t: usize, schedule: &NoiseSchedule, kind: &CorruptionKind) -> Result<f64> {
    match kind {
        CorruptionKind::NonZeroMean => Ok(schedule.alpha_bar(t)?.sqrt()),
        _ => {
            schedule.sigma(t)?; // range check
            Ok(1.0)
        }
    }
}

/// The additive noise tensor for `kind` at step `t` (everything except the
/// scaled data term). Shared by `corrupt` and the taped fake-sample path.
pub fn noise_term(
    shape: &[usize],
    eps: &Tensor,
    t: usize,
    schedule: &NoiseSchedule,
    kind: &CorruptionKind,
) -> Result<Tensor> {
    kind.validate()?;
    let sigma = schedule.sigma(t)?;
    match kind {
        CorruptionKind::ZeroMean | CorruptionKind::NonZeroMean => Ok(Tensor {
            shape: shape.to_vec(),
            data: eps.data.iter().map(|&e| e * sigma).collect(),
        }),
        CorruptionKind::SpatialDiffusion { ratio, steps_per_t } => {
            if shape.len() != 4 {
                return Err(SmmError::InvalidArgument(format!(
                    "spatial diffusion needs image-shaped input, got {shape:?}"
                )));
            }
            let (h, w) = (shape[2], shape[3]);
            let field = field_at_step(h, w, t, *ratio, *steps_per_t)?;
            let hw = h * w;
            let data = eps
                .data
                .iter()
                .enumerate()
                .map(|(i, &e)| e * sigma * field.grid[i % hw])
                .collect();
            Ok(Tensor {
                shape: shape.to_vec(),
                data,
            })
        }
    }
}

fn check_per_sample(shape: &[usize], ts: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape[0] != ts.len() {
        return Err(SmmError::InvalidArgument(format!(
            "need one diffusion step per sample: {} steps for batch shape {shape:?}",
            ts.len()
        )));
    }
    Ok(shape.iter().skip(1).product())
}

/// Row-wise `corrupt` with an independent diffusion step per sample.
pub fn corrupt_per_sample(
    x: &Tensor,
    eps: &Tensor,
    ts: &[usize],
    schedule: &NoiseSchedule,
    kind: &CorruptionKind,
) -> Result<Tensor> {
    if x.shape != eps.shape {
        return Err(SmmError::ShapeMismatch {
            op: "corrupt_per_sample",
            lhs: x.shape.clone(),
            rhs: eps.shape.clone(),
        });
    }
    let term = noise_term_per_sample(&x.shape, eps, ts, schedule, kind)?;
    let scales = data_scales(ts, schedule, kind)?;
    let row = check_per_sample(&x.shape, ts)?;
    let mut data = Vec::with_capacity(x.numel());
    for (i, (&xv, &n)) in x.data.iter().zip(&term.data).enumerate() {
        data.push(scales[i / row] * xv + n);
    }
    Ok(Tensor {
        shape: x.shape.clone(),
        data,
    })
}

/// Per-sample data multipliers, one entry per row of the batch.
pub fn data_scales(
    ts: &[usize],
    schedule: &NoiseSchedule,
    kind: &CorruptionKind,
) -> Result<Vec<f64>> {
    ts.iter().map(|&t| data_scale(t, schedule, kind)).collect()
}

/// Row-wise `noise_term` with an independent diffusion step per sample.
pub fn noise_term_per_sample(
    shape: &[usize],
    eps: &Tensor,
    ts: &[usize],
    schedule: &NoiseSchedule,
    kind: &CorruptionKind,
) -> Result<Tensor> {
    let row = check_per_sample(shape, ts)?;
    let mut row_shape = shape.to_vec();
    row_shape[0] = 1;
    let mut data = Vec::with_capacity(eps.numel());
    for (i, &t) in ts.iter().enumerate() {
        let row_eps = Tensor {
            shape: row_shape.clone(),
            data: eps.data[i * row..(i + 1) * row].to_vec(),
        };
        let term = noise_term(&row_shape, &row_eps, t, schedule, kind)?;
        data.extend_from_slice(&term.data);
    }
    Ok(Tensor {
        shape: shape.to_vec(),
        data,
    })
}
