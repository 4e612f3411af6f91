use crate::error::{FusionError, Result};
use crate::exec::Execution;

/// Length scale of the Gaussian kernel `exp(-|x - y|^2 / (2 l^2))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    /// Median pairwise distance over the pooled samples of both sets.
    Median,
    Fixed(f64),
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median of pairwise Euclidean distances; 1.0 when undefined or zero.
pub fn median_distance<S: AsRef<[f64]>>(points: &[S]) -> f64 {
    let mut d: Vec<f64> = Vec::with_capacity(points.len() * points.len().saturating_sub(1) / 2);
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            d.push(sq_dist(a.as_ref(), b.as_ref()).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    if *m > 0.0 {
        *m
    } else {
        1.0
    }
}

fn fingerprint<S: AsRef<[f64]>>(set: &[S]) -> (usize, u64) {
    let bytes: Vec<u8> = set
        .iter()
        .flat_map(|p| p.as_ref().iter().flat_map(|v| v.to_bits().to_le_bytes()))
        .collect();
    (set.len(), super::backend::fnv1a(&bytes))
}

/// Mean kernel value over distinct pairs within one set (1.0 for a singleton).
fn within<S: AsRef<[f64]> + Sync>(set: &[S], gamma: f64, exec: Execution) -> f64 {
    let n = set.len();
    if n < 2 {
        return 1.0;
    }
    let sum = exec.sum_range(n, |i| {
        let a = set[i].as_ref();
        set[i + 1..]
            .iter()
            .map(|b| (-gamma * sq_dist(a, b.as_ref())).exp())
            .sum::<f64>()
    });
    2.0 * sum / (n * (n - 1)) as f64
}

fn across<A, B>(a: &[A], b: &[B], gamma: f64, exec: Execution) -> f64
where
    A: AsRef<[f64]> + Sync,
    B: AsRef<[f64]> + Sync,
{
    let sum = exec.sum_range(a.len(), |i| {
        let x = a[i].as_ref();
        b.iter()
            .map(|y| (-gamma * sq_dist(x, y.as_ref())).exp())
            .sum::<f64>()
    });
    sum / (a.len() * b.len()) as f64
}

/// Unbiased squared MMD with a Gaussian kernel of length scale `length`.
pub fn mmd_squared<A, B>(a: &[A], b: &[B], length: f64, exec: Execution) -> Result<f64>
where
    A: AsRef<[f64]> + Sync,
    B: AsRef<[f64]> + Sync,
{
    if a.is_empty() || b.is_empty() {
        return Err(FusionError::EmptySet);
    }
    if !(length.is_finite() && length > 0.0) {
        return Err(FusionError::InvalidConfig(format!(
            "kernel bandwidth {length} must be positive"
        )));
    }
    let gamma = 1.0 / (2.0 * length * length);
    let (wa, wb) = (within(a, gamma, exec), within(b, gamma, exec));
    // canonical argument order makes the estimate bit-for-bit symmetric
    let cross = if fingerprint(a) <= fingerprint(b) {
        across(a, b, gamma, exec)
    } else {
        across(b, a, gamma, exec)
    };
    Ok(wa + wb - 2.0 * cross)
}

/// `exp(-MMD^2)`, clamped to `(0, 1]`.
pub fn mmd_similarity<A, B>(a: &[A], b: &[B], bandwidth: Bandwidth) -> Result<f64>
where
    A: AsRef<[f64]> + Sync,
    B: AsRef<[f64]> + Sync,
{
    mmd_similarity_with(a, b, bandwidth, Execution::default())
}

pub(crate) fn mmd_similarity_with<A, B>(
    a: &[A],
    b: &[B],
    bandwidth: Bandwidth,
    exec: Execution,
) -> Result<f64>
where
    A: AsRef<[f64]> + Sync,
    B: AsRef<[f64]> + Sync,
{
    if a.is_empty() || b.is_empty() {
        return Err(FusionError::EmptySet);
    }
    let length = match bandwidth {
        Bandwidth::Fixed(l) => l,
        Bandwidth::Median => {
            let pooled: Vec<&[f64]> = a
                .iter()
                .map(AsRef::as_ref)
                .chain(b.iter().map(AsRef::as_ref))
                .collect();
            median_distance(&pooled)
        }
    };
    let m2 = mmd_squared(a, b, length, exec)?;
    Ok((-m2.max(0.0)).exp())
}
