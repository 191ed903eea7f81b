//! Client partitioning, seed-set sampling and replication.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMode {
    Iid,
    Dirichlet,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionConfig {
    pub mode: PartitionMode,
    /// Dirichlet concentration; ignored in IID mode.
    pub alpha: f64,
    pub clients: usize,
    pub seed: u64,
}

/// Splits sample indices `0..labels.len()` into `cfg.clients` disjoint,
/// covering parts. Each part is sorted ascending.
///
/// IID: shuffle, then split evenly with the remainder going to the
/// lowest-index clients.
///
/// Dirichlet: for every class, shuffle that class's samples, draw
/// `p ~ Dir(alpha * 1_n)` and give client `j` the samples between the rounded
/// cumulative thresholds `round(count * (p_0 + .. + p_{j-1}))` and
/// `round(count * (p_0 + .. + p_j))`. Afterwards every empty client receives
/// one sample (the last) from the currently largest client, lowest index
/// first on ties.
pub fn partition_indices(labels: &[usize], class_count: usize, cfg: &PartitionConfig) -> Result<Vec<Vec<usize>>> {
    let n = cfg.clients;
    if n == 0 {
        return Err(Error::Config("partition needs at least one client".into()));
    }
    if labels.is_empty() {
        return Err(Error::Data("cannot partition an empty dataset".into()));
    }
    if n > labels.len() {
        return Err(Error::Infeasible(format!(
            "{n} clients cannot each receive a sample from {} samples",
            labels.len()
        )));
    }
    let mut rng = rng_from_seed(cfg.seed);
    let mut parts: Vec<Vec<usize>> = vec![Vec::new(); n];
    match cfg.mode {
        PartitionMode::Iid => {
            let mut order: Vec<usize> = (0..labels.len()).collect();
            order.shuffle(&mut rng);
            let (base, extra) = (labels.len() / n, labels.len() % n);
            let mut it = order.into_iter();
            for (j, part) in parts.iter_mut().enumerate() {
                let size = base + usize::from(j < extra);
                part.extend(it.by_ref().take(size));
            }
        }
        PartitionMode::Dirichlet => {
            if !(cfg.alpha > 0.0 && cfg.alpha.is_finite()) {
                return Err(Error::Config(format!(
                    "Dirichlet alpha must be positive and finite, got {}",
                    cfg.alpha
                )));
            }
            let gamma = Gamma::new(cfg.alpha, 1.0).map_err(|e| Error::Config(e.to_string()))?;
            let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); class_count];
            for (i, &l) in labels.iter().enumerate() {
                by_class[l].push(i);
            }
            for members in &mut by_class {
                members.shuffle(&mut rng);
                let draws: Vec<f64> = (0..n).map(|_| gamma.sample(&mut rng)).collect();
                let total: f64 = draws.iter().sum();
                let count = members.len();
                let mut start = 0;
                let mut cum = 0.0;
                for (j, part) in parts.iter_mut().enumerate() {
                    let end = if j + 1 == n {
                        count
                    } else if total > 0.0 && total.is_finite() {
                        cum += draws[j] / total;
                        ((cum * count as f64).round() as usize).clamp(start, count)
                    } else {
                        // every draw underflowed: the whole class goes to client 0
                        count
                    };
                    part.extend_from_slice(&members[start..end]);
                    start = end;
                }
            }
            repair_empty(&mut parts);
        }
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok(parts)
}

fn repair_empty(parts: &mut [Vec<usize>]) {
    while let Some(empty) = parts.iter().position(Vec::is_empty) {
        let donor = (0..parts.len())
            .max_by(|&a, &b| parts[a].len().cmp(&parts[b].len()).then(b.cmp(&a)))
            .unwrap();
        let moved = parts[donor].pop().expect("donor has at least two samples");
        parts[empty].push(moved);
    }
}

/// Materializes [`partition_indices`].
pub fn partition(ds: &LabeledDataset, cfg: &PartitionConfig) -> Result<Vec<LabeledDataset>> {
    let parts = partition_indices(ds.labels(), ds.class_count(), cfg)?;
    Ok(parts.iter().map(|p| ds.subset(p)).collect())
}

/// Indices of a stratified sample of size
/// `min(N, max(L, round(fraction * N)))`.
///
/// Per-class quotas follow the largest-remainder method on
/// `size * count_c / N`; any class that is present in the source but got a
/// zero quota takes one slot from the class with the largest quota. Within a
/// class the members are a uniform random choice; the result is shuffled.
pub fn sample_seed_indices(labels: &[usize], class_count: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "seed fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let total = labels.len();
    if total == 0 {
        return Err(Error::Data("cannot sample from an empty dataset".into()));
    }
    let size = ((fraction * total as f64).round() as usize)
        .max(class_count)
        .min(total);

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); class_count];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let exact: Vec<f64> = by_class
        .iter()
        .map(|m| size as f64 * m.len() as f64 / total as f64)
        .collect();
    let mut quota: Vec<usize> = exact.iter().map(|q| q.floor() as usize).collect();
    let mut short = size - quota.iter().sum::<usize>();
    let mut by_remainder: Vec<usize> = (0..class_count).collect();
    by_remainder.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &c in &by_remainder {
        if short == 0 {
            break;
        }
        if quota[c] < by_class[c].len() {
            quota[c] += 1;
            short -= 1;
        }
    }
    for c in 0..class_count {
        if quota[c] == 0 && !by_class[c].is_empty() {
            let donor = (0..class_count)
                .max_by(|&a, &b| quota[a].cmp(&quota[b]).then(b.cmp(&a)))
                .unwrap();
            if quota[donor] > 1 {
                quota[donor] -= 1;
                quota[c] = 1;
            }
        }
    }

    let mut rng = rng_from_seed(seed);
    let mut picked = Vec::with_capacity(size);
    for (members, &q) in by_class.iter_mut().zip(&quota) {
        members.shuffle(&mut rng);
        picked.extend_from_slice(&members[..q]);
    }
    picked.shuffle(&mut rng);
    Ok(picked)
}

/// Stratified seed-set sample; see [`sample_seed_indices`].
pub fn sample_seed(ds: &LabeledDataset, fraction: f64, seed: u64) -> Result<LabeledDataset> {
    let idx = sample_seed_indices(ds.labels(), ds.class_count(), fraction, seed)?;
    Ok(ds.subset(&idx))
}

/// `d` back-to-back copies of `ds`.
pub fn replicate(ds: &LabeledDataset, d: usize) -> Result<LabeledDataset> {
    if d == 0 {
        return Err(Error::Config("replication count must be at least 1".into()));
    }
    let (shape, images, labels, classes) = ds.clone().into_parts();
    LabeledDataset::new(shape, images.repeat(d), labels.repeat(d), classes)
}
