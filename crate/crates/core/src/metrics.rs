//! Sample-quality metrics and small statistical oracles.

use crate::gmm::GaussianMixture;
use crate::linalg::dist;
use crate::rng::Rng;

/// Energy distance `2 E||X-Y|| - E||X-X'|| - E||Y-Y'||` (V-statistic).
///
/// In 1D the pairwise sums are computed exactly in `O(n log n)` via sorting
/// and prefix sums; in higher dimensions the quadratic sum is evaluated
/// directly, deterministically subsampling to at most 4096 points per side
/// when the full pair count would be excessive.
pub fn energy_distance(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> f64 {
    assert!(!xs.is_empty() && !ys.is_empty());
    if xs[0].len() == 1 {
        let mut a: Vec<f64> = xs.iter().map(|p| p[0]).collect();
        let mut b: Vec<f64> = ys.iter().map(|p| p[0]).collect();
        a.sort_unstable_by(|p, q| p.partial_cmp(q).unwrap());
        b.sort_unstable_by(|p, q| p.partial_cmp(q).unwrap());
        return 2.0 * mean_abs_diff_sorted(&a, &b)
            - mean_abs_diff_sorted(&a, &a)
            - mean_abs_diff_sorted(&b, &b);
    }
    let a = subsample(xs, 4096);
    let b = subsample(ys, 4096);
    2.0 * mean_pair_dist(&a, &b) - mean_pair_dist(&a, &a) - mean_pair_dist(&b, &b)
}

fn subsample(xs: &[Vec<f64>], cap: usize) -> Vec<&Vec<f64>> {
    if xs.len() <= cap {
        xs.iter().collect()
    } else {
        let stride = xs.len() as f64 / cap as f64;
        (0..cap).map(|i| &xs[(i as f64 * stride) as usize]).collect()
    }
}

fn mean_pair_dist(a: &[&Vec<f64>], b: &[&Vec<f64>]) -> f64 {
    let mut sum = 0.0;
    for x in a {
        for y in b {
            sum += dist(x, y);
        }
    }
    sum / (a.len() as f64 * b.len() as f64)
}

/// Mean |a_i - b_j| over all pairs of two sorted slices.
fn mean_abs_diff_sorted(a: &[f64], b: &[f64]) -> f64 {
    // For each b_j: sum_i |a_i - b_j| = b_j * (2k - n) - prefix_k + (total - prefix_k)
    // with k = #{a_i <= b_j}. A merge sweep keeps the whole pass linear.
    let n = a.len();
    let prefix: Vec<f64> = std::iter::once(0.0)
        .chain(a.iter().scan(0.0, |acc, &v| {
            *acc += v;
            Some(*acc)
        }))
        .collect();
    let total = prefix[n];
    let mut sum = 0.0;
    let mut k = 0;
    for &bj in b {
        while k < n && a[k] <= bj {
            k += 1;
        }
        sum += bj * (2.0 * k as f64 - n as f64) - prefix[k] + (total - prefix[k]);
    }
    sum / (n as f64 * b.len() as f64)
}

/// Energy distance between two fresh sample sets of the target mixture: the
/// noise floor an exact sampler should approach.
pub fn self_distance_baseline(m: &GaussianMixture, n: usize, rng: &mut Rng) -> f64 {
    let mut r1 = rng.split(1);
    let mut r2 = rng.split(2);
    energy_distance(&m.sample(&mut r1, n), &m.sample(&mut r2, n))
}

/// Sliced 2-Wasserstein distance: W2 of sorted 1D projections along random
/// unit directions, root-mean-squared over projections. Requires equal
/// sample counts.
pub fn sliced_w2(xs: &[Vec<f64>], ys: &[Vec<f64>], n_proj: usize, rng: &mut Rng) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let d = xs[0].len();
    let mut total = 0.0;
    for _ in 0..n_proj.max(1) {
        let mut dir = rng.normal_vec(d);
        let norm = crate::linalg::norm(&dir);
        for c in &mut dir {
            *c /= norm;
        }
        let mut px: Vec<f64> = xs.iter().map(|x| crate::linalg::dot(x, &dir)).collect();
        let mut py: Vec<f64> = ys.iter().map(|y| crate::linalg::dot(y, &dir)).collect();
        px.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        py.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        let w2_sq: f64 = px
            .iter()
            .zip(&py)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / px.len() as f64;
        total += w2_sq;
    }
    (total / n_proj.max(1) as f64).sqrt()
}

/// Kolmogorov-Smirnov distance of a 1D sample to Uniform[lo, hi].
/// Sorts in place.
pub fn ks_distance_to_uniform(xs: &mut [f64], lo: f64, hi: f64) -> f64 {
    xs.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    let mut sup = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        let cdf = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
        let lo_emp = i as f64 / n;
        let hi_emp = (i + 1) as f64 / n;
        sup = sup.max((cdf - lo_emp).abs()).max((cdf - hi_emp).abs());
    }
    sup
}

/// Total-variation distance between equal-width histograms of two 1D
/// samples over `[lo, hi]`; out-of-range values clip into the edge bins.
pub fn histogram_tv(xs: &[f64], ys: &[f64], bins: usize, lo: f64, hi: f64) -> f64 {
    let hist = |data: &[f64]| -> Vec<f64> {
        let mut h = vec![0.0; bins];
        for &x in data {
            let idx = (((x - lo) / (hi - lo) * bins as f64) as isize).clamp(0, bins as isize - 1);
            h[idx as usize] += 1.0 / data.len() as f64;
        }
        h
    };
    let (hx, hy) = (hist(xs), hist(ys));
    0.5 * hx.iter().zip(&hy).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Per-dimension mean and variance of a sample.
pub fn moments(xs: &[Vec<f64>]) -> Vec<(f64, f64)> {
    let d = xs[0].len();
    let n = xs.len() as f64;
    (0..d)
        .map(|j| {
            let mean = xs.iter().map(|x| x[j]).sum::<f64>() / n;
            let var = xs.iter().map(|x| (x[j] - mean) * (x[j] - mean)).sum::<f64>() / n;
            (mean, var)
        })
        .collect()
}

/// One bin of a conditional-mean regression.
#[derive(Debug, Clone)]
pub struct ConditionalBin {
    pub center: f64,
    pub mean: f64,
    pub std_error: f64,
    pub count: usize,
}

/// Binned Monte-Carlo estimate of `E[v | x in bin]` from 1D pairs, using
/// equal-mass bins. Serves as the model-free oracle for conditional
/// velocities; it never touches the closed-form conditioning it is used to
/// check.
pub fn binned_conditional_mean(pairs: &[(f64, f64)], n_bins: usize) -> Vec<ConditionalBin> {
    let mut sorted: Vec<(f64, f64)> = pairs.to_vec();
    sorted.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let chunk = (sorted.len() / n_bins).max(1);
    sorted
        .chunks(chunk)
        .filter(|c| c.len() >= 2)
        .map(|c| {
            let n = c.len() as f64;
            let center = c.iter().map(|p| p.0).sum::<f64>() / n;
            let mean = c.iter().map(|p| p.1).sum::<f64>() / n;
            let var = c.iter().map(|p| (p.1 - mean) * (p.1 - mean)).sum::<f64>() / (n - 1.0);
            ConditionalBin { center, mean, std_error: (var / n).sqrt(), count: c.len() }
        })
        .collect()
}

/// Pearson correlation coefficient.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    cov / (va.sqrt() * vb.sqrt())
}

/// Running mean/standard-error accumulator.
#[derive(Debug, Clone, Default)]
pub struct MeanAccumulator {
    n: usize,
    sum: f64,
    sum_sq: f64,
}

impl MeanAccumulator {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.n as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        (self.sum_sq / self.n as f64 - m * m).max(0.0)
    }

    pub fn std_error(&self) -> f64 {
        (self.variance() / self.n as f64).sqrt()
    }

    pub fn count(&self) -> usize {
        self.n
    }
}
