//! Small CART regression forest used only for impurity importance.

use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestConfig {
    pub trees: usize,
    pub max_depth: usize,
    /// Features tried per split; `None` means `round(sqrt(d))`.
    pub features_per_split: Option<usize>,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self { trees: 64, max_depth: 6, features_per_split: None }
    }
}

/// Total weighted variance reduction credited to each column, summed over
/// a bootstrap forest. `x` is row-major, one inner vector per sample.
pub fn impurity_importance<R: Rng + ?Sized>(x: &[Vec<f64>], y: &[f64], cfg: &ForestConfig, rng: &mut R) -> Vec<f64> {
    let d = x.first().map_or(0, Vec::len);
    let mut imp = vec![0.0; d];
    if x.len() < 2 || d == 0 {
        return imp;
    }
    let mtry = cfg.features_per_split.unwrap_or(((d as f64).sqrt().round() as usize).max(1)).clamp(1, d);
    for _ in 0..cfg.trees {
        let sample: Vec<usize> = (0..x.len()).map(|_| rng.random_range(0..x.len())).collect();
        grow(x, y, sample, 0, cfg.max_depth, mtry, &mut imp, rng);
    }
    for v in imp.iter_mut() {
        *v /= cfg.trees as f64;
    }
    imp
}

fn sse(y: &[f64], idx: &[usize]) -> f64 {
    let n = idx.len() as f64;
    let mean = idx.iter().map(|&i| y[i]).sum::<f64>() / n;
    idx.iter().map(|&i| (y[i] - mean).powi(2)).sum()
}

#[allow(clippy::too_many_arguments)]
fn grow<R: Rng + ?Sized>(
    x: &[Vec<f64>],
    y: &[f64],
    idx: Vec<usize>,
    depth: usize,
    max_depth: usize,
    mtry: usize,
    imp: &mut [f64],
    rng: &mut R,
) {
    if depth >= max_depth || idx.len() < 2 {
        return;
    }
    let parent = sse(y, &idx);
    if parent <= 1e-15 {
        return;
    }
    let d = imp.len();
    let candidates = rand::seq::index::sample(rng, d, mtry);
    // (gain, feature, threshold)
    let mut best: Option<(f64, usize, f64)> = None;
    for f in candidates.iter() {
        let mut order = idx.clone();
        order.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]));
        // prefix sums give O(n) split evaluation after sorting
        let total: f64 = order.iter().map(|&i| y[i]).sum();
        let total_sq: f64 = order.iter().map(|&i| y[i] * y[i]).sum();
        let (mut s, mut sq) = (0.0, 0.0);
        for k in 0..order.len() - 1 {
            s += y[order[k]];
            sq += y[order[k]] * y[order[k]];
            let (a, b) = (x[order[k]][f], x[order[k + 1]][f]);
            if a == b {
                continue;
            }
            let nl = (k + 1) as f64;
            let nr = (order.len() - k - 1) as f64;
            let left = sq - s * s / nl;
            let right = (total_sq - sq) - (total - s).powi(2) / nr;
            let gain = parent - left - right;
            if best.is_none_or(|(g, _, _)| gain > g + 1e-12) {
                best = Some((gain, f, (a + b) / 2.0));
            }
        }
    }
    let Some((gain, f, t)) = best else {
        return;
    };
    if gain <= 0.0 {
        return;
    }
    imp[f] += gain;
    let (l, r): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| x[i][f] <= t);
    grow(x, y, l, depth + 1, max_depth, mtry, imp, rng);
    grow(x, y, r, depth + 1, max_depth, mtry, imp, rng);
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn informative_column_dominates() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<Vec<f64>> = (0..60).map(|i| vec![rng.random::<f64>(), i as f64 / 60.0, rng.random::<f64>()]).collect();
        let y: Vec<f64> = x.iter().map(|r| (r[1] * 6.0).floor()).collect();
        let imp = impurity_importance(&x, &y, &ForestConfig::default(), &mut rng);
        assert!(imp[1] > imp[0] * 5.0 && imp[1] > imp[2] * 5.0, "{imp:?}");
    }

    #[test]
    fn constant_target_gives_zero_importance() {
        let x = vec![vec![1.0], vec![2.0], vec![3.0]];
        let imp = impurity_importance(&x, &[1.0; 3], &ForestConfig::default(), &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(imp, vec![0.0]);
    }
}
