//! Stratified splits.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{validation, Result};

fn by_class(indices: &[usize], labels: &[usize], rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let classes = indices.iter().map(|&i| labels[i] + 1).max().unwrap_or(0);
    let mut groups = vec![Vec::new(); classes];
    for &i in indices {
        groups[labels[i]].push(i);
    }
    for g in &mut groups {
        g.shuffle(rng);
    }
    groups
}

/// Splits `indices` into parts whose sizes follow `fractions` within every
/// class (per-class counts are rounded; the last part takes the remainder).
/// Each returned part is sorted.
pub fn stratified_partition(indices: &[usize], labels: &[usize], fractions: &[f64], seed: u64) -> Result<Vec<Vec<usize>>> {
    if fractions.is_empty() || fractions.iter().any(|&f| !(f >= 0.0)) {
        return Err(validation("fractions must be nonnegative"));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(validation(format!("fractions sum to {total}, expected 1")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts = vec![Vec::new(); fractions.len()];
    for group in by_class(indices, labels, &mut rng) {
        let n = group.len();
        let mut start = 0;
        let mut acc = 0.0;
        for (p, &f) in fractions.iter().enumerate() {
            acc += f;
            let end = if p + 1 == fractions.len() {
                n
            } else {
                ((acc * n as f64).round() as usize).clamp(start, n)
            };
            parts[p].extend_from_slice(&group[start..end]);
            start = end;
        }
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok(parts)
}

/// `(rest, holdout)` with `fraction` of every class held out.
pub fn stratified_holdout(labels: &[usize], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(validation(format!("holdout fraction must lie in (0, 1), got {fraction}")));
    }
    let all: Vec<usize> = (0..labels.len()).collect();
    let mut parts = stratified_partition(&all, labels, &[1.0 - fraction, fraction], seed)?;
    let holdout = parts.pop().unwrap_or_default();
    Ok((parts.pop().unwrap_or_default(), holdout))
}

/// Deals the shuffled members of every class round-robin over `k` folds,
/// continuing across classes so fold sizes differ by at most one.
pub fn stratified_folds(indices: &[usize], labels: &[usize], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(validation("at least two folds are required"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = by_class(indices, labels, &mut rng);
    if let Some((c, g)) = groups.iter().enumerate().find(|(_, g)| !g.is_empty() && g.len() < k) {
        return Err(validation(format!(
            "class {c} has {} samples, fewer than the {k} folds",
            g.len()
        )));
    }
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for g in groups {
        for i in g {
            folds[next].push(i);
            next = (next + 1) % k;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_partition_and_stratify() {
        let labels: Vec<usize> = (0..103).map(|i| usize::from(i % 3 == 0)).collect();
        let (rest, hold) = stratified_holdout(&labels, 0.1, 4).unwrap();
        assert!(rest.iter().all(|i| !hold.contains(i)));
        assert_eq!(rest.len() + hold.len(), 103);
        let folds = stratified_folds(&rest, &labels, 10, 4).unwrap();
        let mut seen: Vec<usize> = folds.concat();
        seen.sort_unstable();
        assert_eq!(seen, rest);
        let ones = rest.iter().filter(|&&i| labels[i] == 1).count() as f64;
        for f in &folds {
            let expected = ones * f.len() as f64 / rest.len() as f64;
            let got = f.iter().filter(|&&i| labels[i] == 1).count() as f64;
            assert!((got - expected).abs() <= 1.0 + 1e-9, "{got} vs {expected}");
        }
    }

    #[test]
    fn small_classes_are_rejected() {
        let labels = vec![0, 0, 0, 1, 1];
        assert!(stratified_folds(&[0, 1, 2, 3, 4], &labels, 3, 0).is_err());
    }
}
