//! Two-sample distribution metrics: RBF-kernel MMD and sliced Wasserstein.
//!
//! These are the desk-scale stand-ins for classifier-based image metrics.
//! Sample sets are `[N, d]` tensors (images get flattened by the caller).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SmmError};
use crate::rng::stream_seed;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bandwidth {
    Fixed(f64),
    /// Median pairwise distance over the pooled samples.
    Median,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRecord {
    pub name: String,
    pub value: f64,
    pub n_a: usize,
    pub n_b: usize,
    pub bandwidth: Option<f64>,
    pub seed: u64,
}

fn rows(t: &Tensor) -> Vec<&[f64]> {
    let n = t.shape[0];
    let d = t.numel() / n;
    (0..n).map(|i| &t.data[i * d..(i + 1) * d]).collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_pair(a: &Tensor, b: &Tensor, min: usize) -> Result<usize> {
    if a.shape.len() < 2 || b.shape.len() < 2 || a.numel() / a.shape[0] != b.numel() / b.shape[0] {
        return Err(SmmError::ShapeMismatch {
            op: "two_sample_metric",
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    if a.shape[0] < min || b.shape[0] < min {
        return Err(SmmError::InvalidArgument(format!(
            "metric needs at least {min} samples per side"
        )));
    }
    Ok(a.numel() / a.shape[0])
}

/// Median pairwise Euclidean distance over the pooled sample set.
pub fn median_pairwise_distance(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_pair(a, b, 1)?;
    let pooled: Vec<&[f64]> = rows(a).into_iter().chain(rows(b)).collect();
    let n = pooled.len();
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            dists.push(sq_dist(pooled[i], pooled[j]).sqrt());
        }
    }
    if dists.is_empty() {
        return Err(SmmError::InvalidArgument(
            "median bandwidth needs at least 2 pooled samples".into(),
        ));
    }
    let mid = dists.len() / 2;
    dists.select_nth_unstable_by(mid, |x, y| x.total_cmp(y));
    Ok(dists[mid])
}

fn resolve_bandwidth(a: &Tensor, b: &Tensor, bandwidth: Bandwidth) -> Result<f64> {
    let bw = match bandwidth {
        Bandwidth::Fixed(v) => v,
        Bandwidth::Median => median_pairwise_distance(a, b)?,
    };
    if !(bw > 0.0) || !bw.is_finite() {
        return Err(SmmError::InvalidArgument(format!(
            "degenerate kernel bandwidth {bw}"
        )));
    }
    Ok(bw)
}

/// Unbiased MMD^2 estimate with the RBF kernel
/// `k(x, y) = exp(-||x - y||^2 / (2 h^2))`. May be slightly negative.
pub fn mmd_rbf(a: &Tensor, b: &Tensor, bandwidth: Bandwidth) -> Result<(f64, f64)> {
    let _ = check_pair(a, b, 2)?;
    let h = resolve_bandwidth(a, b, bandwidth)?;
    let (ra, rb) = (rows(a), rows(b));
    let (m, n) = (ra.len(), rb.len());
    let gamma = 1.0 / (2.0 * h * h);
    let kernel = |x: &[f64], y: &[f64]| (-gamma * sq_dist(x, y)).exp();

    let mut kaa = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                kaa += kernel(ra[i], ra[j]);
            }
        }
    }
    let mut kbb = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                kbb += kernel(rb[i], rb[j]);
            }
        }
    }
    let mut kab = 0.0;
    for x in &ra {
        for y in &rb {
            kab += kernel(x, y);
        }
    }
    let value = kaa / (m * (m - 1)) as f64 + kbb / (n * (n - 1)) as f64
        - 2.0 * kab / (m * n) as f64;
    Ok((value, h))
}

///// Biased (V-statistic) MMD^2: always >= 0, exactly 0 for identical multisets.
pub fn mmd_rbf_biased(a: &Tensor, b: &Tensor, bandwidth: Bandwidth) -> Result<(f64, f64)> {
    let _ = check_pair(a, b, 2)?;
    let h = resolve_bandwidth(a, b, bandwidth)?;
    let (ra, rb) = (rows(a), rows(b));
    let (m, n) = (ra.len(), rb.len());
    let gamma = 1.0 / (2.0 * h * h);
    let kernel = |x: &[f64], y: &[f64]| (-gamma * sq_dist(x, y)).exp();
    let mut kaa = 0.0;
    for x in &ra {
        for y in &ra {
            kaa += kernel(x, y);
        }
    }
    let mut kbb = 0.0;
    for x in &rb {
        for y in &rb {
            kbb += kernel(x, y);
        }
    }
    let mut kab = 0.0;
    for x in &ra {
        for y in &rb {
            kab += kernel(x, y);
        }
    }
    let value = kaa / (m * m) as f64 + kbb / (n * n) as f64 - 2.0 * kab / (m * n) as f64;
    Ok((value, h))
}

/// Average 1D 2-Wasserstein distance over random unit projection directions.
pub fn sliced_wasserstein(a: &Tensor, b: &Tensor, n_projections: usize, seed: u64) -> Result<f64> {
    let d = check_pair(a, b, 1)?;
    if n_projections == 0 {
        return Err(SmmError::InvalidArgument(
            "need at least one projection".into(),
        ));
    }
    let (ra, rb) = (rows(a), rows(b));
    let mut rng = ChaCha8Rng::from_seed(stream_seed(seed, "sliced-wasserstein"));
    let mut total = 0.0;
    for _ in 0..n_projections {
        let mut dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm: f64 = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            dir[0] = 1.0;
        } else {
            dir.iter_mut().for_each(|v| *v /= norm);
        }
        let project = |rows: &[&[f64]]| -> Vec<f64> {
            let mut p: Vec<f64> = rows
                .iter()
                .map(|r| r.iter().zip(&dir).map(|(x, w)| x * w).sum())
                .collect();
            p.sort_by(f64::total_cmp);
            p
        };
        let pa = project(&ra);
        let pb = project(&rb);
        total += wasserstein_1d_sorted(&pa, &pb);
    }
    Ok(total / n_projections as f64)
}

/// 2-Wasserstein between two sorted 1D samples via quantile coupling.
fn wasserstein_1d_sorted(a: &[f64], b: &[f64]) -> f64 {
    let m = a.len().max(b.len());
    let mut acc = 0.0;
    for i in 0..m {
        let qa = a[i * a.len() / m];
        let qb = b[i * b.len() / m];
        acc += (qa - qb) * (qa - qb);
    }
    (acc / m as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian_samples(n: usize, mean: f64, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::from_seed(stream_seed(seed, "test-gauss"));
        let data = (0..n)
            .map(|_| mean + rng.sample::<f64, _>(StandardNormal))
            .collect();
        Tensor {
            shape: vec![n, 1],
            data,
        }
    }

    #[test]
    fn identical_multisets() {
        let a = gaussian_samples(100, 0.0, 1);
        let (biased, _) = mmd_rbf_biased(&a, &a.clone(), Bandwidth::Fixed(1.0)).unwrap();
        assert!(biased.abs() < 1e-12);
        let (unbiased, _) = mmd_rbf(&a, &a.clone(), Bandwidth::Fixed(1.0)).unwrap();
        assert!(unbiased <= 1e-12, "unbiased on identical sets: {unbiased}");
    }

    #[test]
    fn same_distribution_is_small() {
        for seed in 0..5 {
            let a = gaussian_samples(1000, 0.0, seed * 2 + 10);
            let b = gaussian_samples(1000, 0.0, seed * 2 + 11);
            let (v, _) = mmd_rbf(&a, &b, Bandwidth::Fixed(1.0)).unwrap();
            assert!(v.abs() < 0.01, "seed {seed}: {v}");
        }
    }

    #[test]
    fn far_separation_matches_closed_form() {
        // For N(0,1) vs N(mu,1) with RBF bandwidth h:
        // E k(x,x') = h / sqrt(h^2 + 2) * exp(-dmu^2 / (2(h^2 + 2)))
        let a = gaussian_samples(2000, 0.0, 20);
        let b = gaussian_samples(2000, 10.0, 21);
        let h = 1.0f64;
        let (v, _) = mmd_rbf(&a, &b, Bandwidth::Fixed(h)).unwrap();
        let ek_same = h / (h * h + 2.0).sqrt();
        let ek_cross = ek_same * (-100.0 / (2.0 * (h * h + 2.0))).exp();
        let expected = 2.0 * ek_same - 2.0 * ek_cross;
        // Monte-Carlo error for 2000 samples per side dominates
        assert!((v - expected).abs() < 0.02, "got {v}, expected {expected}");
    }

    #[test]
    fn mmd_symmetric() {
        let a = gaussian_samples(200, 0.0, 30);
        let b = gaussian_samples(200, 0.5, 31);
        let (ab, _) = mmd_rbf(&a, &b, Bandwidth::Fixed(0.7)).unwrap();
        let (ba, _) = mmd_rbf(&b, &a, Bandwidth::Fixed(0.7)).unwrap();
        // summation order differs between the two calls; only float
        // round-off may separate them
        assert!((ab - ba).abs() < 1e-12, "{ab} vs {ba}");
    }

    #[test]
    fn zero_bandwidth_rejected() {
        let a = gaussian_samples(10, 0.0, 1);
        assert!(mmd_rbf(&a, &a.clone(), Bandwidth::Fixed(0.0)).is_err());
    }

    #[test]
    fn median_bandwidth_reported() {
        let a = gaussian_samples(50, 0.0, 40);
        let b = gaussian_samples(50, 0.0, 41);
        let (_, h) = mmd_rbf(&a, &b, Bandwidth::Median).unwrap();
        assert!(h > 0.1 && h < 10.0, "median bandwidth {h}");
    }

    #[test]
    fn sliced_identical_is_zero() {
        let a = gaussian_samples(100, 0.0, 50);
        let v = sliced_wasserstein(&a, &a.clone(), 8, 0).unwrap();
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn sliced_1d_shift_is_exact() {
        let a = gaussian_samples(500, 0.0, 60);
        let b = Tensor {
            shape: a.shape.clone(),
            data: a.data.iter().map(|v| v + 3.0).collect(),
        };
        // in 1D every unit projection is +/-x, so the distance is exactly 3
        let v = sliced_wasserstein(&a, &b, 1, 7).unwrap();
        assert!((v - 3.0).abs() < 1e-12, "got {v}");
    }

    #[test]
    fn sliced_2d_mean_shift_reference() {
        // 2D standard normals differing in mean by (1, 0); reference value
        // from a high-projection-count run, frozen.
        let mut rng = ChaCha8Rng::from_seed(stream_seed(70, "test-gauss-2d"));
        let mut draw = |mean_x: f64, n: usize| {
            let mut data = Vec::with_capacity(2 * n);
            for _ in 0..n {
                data.push(mean_x + rng.sample::<f64, _>(StandardNormal));
                data.push(rng.sample::<f64, _>(StandardNormal));
            }
            Tensor {
                shape: vec![n, 2],
                data,
            }
        };
        let a = draw(0.0, 2000);
        let b = draw(1.0, 2000);
        let reference = sliced_wasserstein(&a, &b, 512, 1).unwrap();
        let v = sliced_wasserstein(&a, &b, 64, 2).unwrap();
        assert!((v - reference).abs() < 0.1, "got {v}, reference {reference}");
        // mean shift (1,0): average |cos(theta)| * 1 ~ 2/pi lower bound scale
        assert!(reference > 0.3 && reference < 1.1, "reference {reference}");
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let a = gaussian_samples(10, 0.0, 80);
        let b = Tensor::zeros(vec![10, 2]);
        assert!(mmd_rbf(&a, &b, Bandwidth::Fixed(1.0)).is_err());
        assert!(sliced_wasserstein(&a, &b, 4, 0).is_err());
    }
}
