//! Baseline aggregation rules: FedAvg, coordinate-wise median, Krum
//! selection, Bulyan, loss-based rejection (LFR) and FLTrust.
//!
//! Every rule is permutation invariant for inputs without ties: per-coordinate
//! sums are taken over values sorted by `total_cmp`, so the summation order
//! does not depend on client order. NaN values (bit-flip can create them) are
//! ordered as `+inf` in every median/trim/distance comparison.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{Network, ParamVector};

/// Output of a rule that selects or weights a subset of the clients.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub model: ParamVector,
    /// Indices of the updates that influenced the model, ascending.
    pub selected: Vec<usize>,
}

fn nan_as_inf(v: f64) -> f64 {
    if v.is_nan() { f64::INFINITY } else { v }
}

fn cmp_nan_high(a: f64, b: f64) -> Ordering {
    nan_as_inf(a).total_cmp(&nan_as_inf(b))
}

fn check_updates(updates: &[ParamVector]) -> Result<()> {
    let first = updates
        .first()
        .ok_or_else(|| Error::Data("no updates to aggregate".into()))?;
    for (i, u) in updates.iter().enumerate() {
        if u.len() != first.len() || u.arch_id() != first.arch_id() {
            return Err(Error::Dimension(format!(
                "update {i} has length {} / {:?}, expected {} / {:?}",
                u.len(),
                u.arch_id(),
                first.len(),
                first.arch_id()
            )));
        }
    }
    Ok(())
}

/// Order-independent sum: values are sorted before accumulation.
fn stable_sum(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(|a, b| a.total_cmp(b));
    values.iter().sum()
}

/// Applies `f` to the column of values at every coordinate.
fn per_coordinate(updates: &[&ParamVector], mut f: impl FnMut(&mut Vec<f64>) -> f64) -> ParamVector {
    let dim = updates[0].len();
    let mut column = Vec::with_capacity(updates.len());
    let values = (0..dim)
        .map(|j| {
            column.clear();
            column.extend(updates.iter().map(|u| f64::from(u.values()[j])));
            f(&mut column) as f32
        })
        .collect();
    updates[0].with_values(values)
}

fn mean_of(updates: &[&ParamVector]) -> ParamVector {
    let n = updates.len() as f64;
    per_coordinate(updates, |col| stable_sum(col) / n)
}

/// Coordinate-wise arithmetic mean with uniform weights.
pub fn fedavg(updates: &[ParamVector]) -> Result<ParamVector> {
    check_updates(updates)?;
    Ok(mean_of(&updates.iter().collect::<Vec<_>>()))
}

fn median_in_place(col: &mut [f64]) -> f64 {
    col.sort_unstable_by(|a, b| cmp_nan_high(*a, *b));
    let n = col.len();
    let (a, b) = (nan_as_inf(col[(n - 1) / 2]), nan_as_inf(col[n / 2]));
    if n % 2 == 1 { a } else { (a + b) / 2.0 }
}

/// Coordinate-wise median; for an even count, the mean of the two central
/// order statistics.
pub fn coordinate_median(updates: &[ParamVector]) -> Result<ParamVector> {
    check_updates(updates)?;
    let refs: Vec<&ParamVector> = updates.iter().collect();
    Ok(per_coordinate(&refs, |col| median_in_place(col)))
}

fn squared_distance(a: &ParamVector, b: &ParamVector) -> f64 {
    let d: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| {
            let diff = f64::from(x) - f64::from(y);
            diff * diff
        })
        .sum();
    nan_as_inf(d)
}

/// Iterative Krum selection of `m` updates.
///
/// With `r` updates remaining, the score of update `i` is the sum of squared
/// Euclidean distances to its `clamp(r - f - 2, 1, r - 1)` nearest remaining
/// neighbours. The lowest score (lowest index on ties) is selected and
/// removed, then scores are recomputed. Indices are returned in selection
/// order.
pub fn krum_select(updates: &[ParamVector], f: usize, m: usize) -> Result<Vec<usize>> {
    check_updates(updates)?;
    let n = updates.len();
    if n < f + 3 {
        return Err(Error::Infeasible(format!(
            "Krum needs n - f - 2 >= 1, got n = {n}, f = {f}"
        )));
    }
    if m == 0 || m > n {
        return Err(Error::Infeasible(format!("cannot select {m} of {n} updates")));
    }
    let mut dist = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = squared_distance(&updates[i], &updates[j]);
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut selected = Vec::with_capacity(m);
    let mut neighbours = Vec::with_capacity(n);
    while selected.len() < m {
        let r = remaining.len();
        if r == 1 {
            selected.push(remaining.pop().unwrap());
            break;
        }
        let k = r.saturating_sub(f + 2).clamp(1, r - 1);
        let mut best: Option<(f64, usize)> = None;
        for (pos, &i) in remaining.iter().enumerate() {
            neighbours.clear();
            neighbours.extend(remaining.iter().filter(|&&j| j != i).map(|&j| dist[i][j]));
            neighbours.sort_unstable_by(|a, b| a.total_cmp(b));
            let score: f64 = neighbours[..k].iter().sum();
            let better = match best {
                None => true,
                Some((s, bpos)) => match score.total_cmp(&s) {
                    Ordering::Less => true,
                    Ordering::Equal => i < remaining[bpos],
                    Ordering::Greater => false,
                },
            };
            if better {
                best = Some((score, pos));
            }
        }
        let (_, pos) = best.unwrap();
        selected.push(remaining.remove(pos));
    }
    Ok(selected)
}

/// Bulyan: Krum-select `s = n - 2f` updates (`n - f` when `2f >= n`, at least
/// one), then at every coordinate average the `β = max(1, s - 2f)` selected
/// values closest to the selected set's median.
///
/// Krum itself needs `n - f - 2 >= 1`; when the estimate `f` is larger than
/// that allows, selection runs with `f' = n - 3`.
pub fn bulyan(updates: &[ParamVector], f: usize) -> Result<Aggregate> {
    check_updates(updates)?;
    let n = updates.len();
    if n < 3 {
        return Err(Error::Infeasible(format!("Bulyan needs at least 3 updates, got {n}")));
    }
    let s = if 2 * f < n { n - 2 * f } else { n.saturating_sub(f) }.max(1);
    let krum_f = f.min(n - 3);
    let mut selected = krum_select(updates, krum_f, s)?;
    let beta = s.saturating_sub(2 * f).clamp(1, s);

    let chosen: Vec<&ParamVector> = selected.iter().map(|&i| &updates[i]).collect();
    let mut closest = Vec::with_capacity(s);
    let model = per_coordinate(&chosen, |col| {
        let med = median_in_place(col);
        closest.clear();
        closest.extend(col.iter().map(|&v| (nan_as_inf((v - med).abs()), v)));
        closest.sort_unstable_by(|a, b| cmp_nan_high(a.0, b.0).then(cmp_nan_high(a.1, b.1)));
        let mut picked: Vec<f64> = closest[..beta].iter().map(|&(_, v)| v).collect();
        stable_sum(&mut picked) / beta as f64
    });
    selected.sort_unstable();
    Ok(Aggregate { model, selected })
}

/// Loss-function-based rejection: keep the `max(1, n - f)` updates with the
/// lowest cross-entropy on `val_set` (lowest index on ties) and average them.
///
/// Ranking by raw loss is the same as ranking by loss reduction against
/// `global`; both are reported in [`LfrScores`].
pub fn lfr(
    net: &Network,
    updates: &[ParamVector],
    global: &ParamVector,
    val_set: &LabeledDataset,
    f: usize,
) -> Result<(Aggregate, LfrScores)> {
    check_updates(updates)?;
    if val_set.is_empty() {
        return Err(Error::Data("LFR needs a non-empty validation set".into()));
    }
    let baseline = net.mean_loss(global, val_set)?;
    let losses = updates
        .par_iter()
        .map(|u| net.mean_loss(u, val_set).map(nan_as_inf))
        .collect::<Result<Vec<f64>>>()?;
    let keep = updates.len().saturating_sub(f).max(1);
    let mut order: Vec<usize> = (0..updates.len()).collect();
    order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]).then(a.cmp(&b)));
    let mut selected = order[..keep].to_vec();
    selected.sort_unstable();
    let refs: Vec<&ParamVector> = selected.iter().map(|&i| &updates[i]).collect();
    let model = mean_of(&refs);
    let reductions = losses.iter().map(|l| baseline - l).collect();
    Ok((
        Aggregate { model, selected },
        LfrScores {
            baseline,
            losses,
            reductions,
        },
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LfrScores {
    pub baseline: f64,
    pub losses: Vec<f64>,
    /// `baseline - loss` per update.
    pub reductions: Vec<f64>,
}

/// FLTrust trust scores and combined model.
#[derive(Debug, Clone, PartialEq)]
pub struct FlTrustScores {
    /// `max(0, cos(delta_i, delta_s))`, zero for non-finite or zero deltas.
    pub trust: Vec<f64>,
}

/// FLTrust: each client delta `u_i - global` gets trust
/// `max(0, cos(delta_i, delta_s))` against the server delta, is rescaled to
/// the server delta's norm, and the trust-weighted mean is added to `global`.
/// If the server delta has zero norm or all trust scores are zero, `global`
/// is returned unchanged.
pub fn fltrust(
    updates: &[ParamVector],
    server_update: &ParamVector,
    global: &ParamVector,
) -> Result<(Aggregate, FlTrustScores)> {
    check_updates(updates)?;
    check_updates(&[global.clone(), server_update.clone(), updates[0].clone()])?;
    let g: Vec<f64> = global.values().iter().map(|&v| f64::from(v)).collect();
    let delta = |u: &ParamVector| -> Vec<f64> {
        u.values().iter().zip(&g).map(|(&v, &gv)| f64::from(v) - gv).collect()
    };
    let norm = |d: &[f64]| d.iter().map(|x| x * x).sum::<f64>().sqrt();

    let ds = delta(server_update);
    let norm_s = norm(&ds);
    let unchanged = |trust: Vec<f64>| {
        (
            Aggregate {
                model: global.clone(),
                selected: Vec::new(),
            },
            FlTrustScores { trust },
        )
    };
    if !(norm_s > 0.0 && norm_s.is_finite()) {
        log::warn!("FLTrust server update has norm {norm_s}; keeping the global model");
        return Ok(unchanged(vec![0.0; updates.len()]));
    }

    let deltas: Vec<Vec<f64>> = updates.iter().map(delta).collect();
    let mut trust = Vec::with_capacity(updates.len());
    let mut scale = Vec::with_capacity(updates.len());
    for d in &deltas {
        let n = norm(d);
        let dot: f64 = d.iter().zip(&ds).map(|(a, b)| a * b).sum();
        let cos = dot / (n * norm_s);
        let t = if n > 0.0 && cos.is_finite() { cos.max(0.0) } else { 0.0 };
        trust.push(t);
        scale.push(if t > 0.0 { norm_s / n } else { 0.0 });
    }
    let total = stable_sum(&mut trust.clone());
    if total <= 0.0 {
        return Ok(unchanged(trust));
    }
    let mut column = Vec::with_capacity(updates.len());
    let values = (0..g.len())
        .map(|j| {
            column.clear();
            column.extend(
                deltas
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| trust[i] > 0.0)
                    .map(|(i, d)| trust[i] * scale[i] * d[j]),
            );
            (g[j] + stable_sum(&mut column) / total) as f32
        })
        .collect();
    let selected = (0..updates.len()).filter(|&i| trust[i] > 0.0).collect();
    Ok((
        Aggregate {
            model: global.with_values(values),
            selected,
        },
        FlTrustScores { trust },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ArchId;

    fn pv(v: &[f32]) -> ParamVector {
        ParamVector::new(v.to_vec(), ArchId(7))
    }

    fn pvs(rows: &[&[f32]]) -> Vec<ParamVector> {
        rows.iter().map(|r| pv(r)).collect()
    }

    #[test]
    fn fedavg_examples() {
        assert_eq!(fedavg(&pvs(&[&[1.5, -2.0]])).unwrap().values(), &[1.5, -2.0]);
        assert_eq!(fedavg(&pvs(&[&[0.0, 2.0], &[2.0, 0.0]])).unwrap().values(), &[1.0, 1.0]);
        let v: &[f32] = &[0.1, 0.7, -3.3];
        assert_eq!(fedavg(&pvs(&[v, v, v])).unwrap().values(), v);
        assert!(fedavg(&[]).is_err());
        assert!(matches!(
            fedavg(&pvs(&[&[1.0], &[1.0, 2.0]])),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn median_examples() {
        assert_eq!(coordinate_median(&pvs(&[&[1.0], &[2.0], &[100.0]])).unwrap().values(), &[2.0]);
        assert_eq!(coordinate_median(&pvs(&[&[1.0], &[3.0]])).unwrap().values(), &[2.0]);
        let a = coordinate_median(&pvs(&[&[5.0, 1.0], &[-1.0, 9.0], &[2.0, 4.0]])).unwrap();
        let b = coordinate_median(&pvs(&[&[2.0, 4.0], &[5.0, 1.0], &[-1.0, 9.0]])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn median_treats_nan_as_large() {
        let out = coordinate_median(&pvs(&[&[f32::NAN], &[1.0], &[2.0]])).unwrap();
        assert_eq!(out.values(), &[2.0]);
    }

    #[test]
    fn krum_picks_clustered_update() {
        let ups = pvs(&[&[0.0, 0.0], &[0.1, 0.0], &[0.0, 0.1], &[50.0, 50.0]]);
        let sel = krum_select(&ups, 1, 1).unwrap();
        assert!(sel[0] < 3);
        let all_same = pvs(&[&[1.0], &[1.0], &[1.0], &[1.0]]);
        assert_eq!(krum_select(&all_same, 1, 1).unwrap(), vec![0]);
        assert!(matches!(krum_select(&ups, 2, 1), Err(Error::Infeasible(_))));
    }

    #[test]
    fn bulyan_without_byzantine_estimate_is_the_mean() {
        let ups = pvs(&[&[1.0, 2.0], &[3.0, -4.0], &[0.5, 6.0], &[2.5, 0.0]]);
        let b = bulyan(&ups, 0).unwrap();
        let avg = fedavg(&ups).unwrap();
        assert_eq!(b.model, avg);
        assert_eq!(b.selected, vec![0, 1, 2, 3]);
    }

    #[test]
    fn bulyan_fixed_point_and_large_f() {
        let row: &[f32] = &[0.3, -1.0];
        let ups = pvs(&[row; 5]);
        assert_eq!(bulyan(&ups, 1).unwrap().model.values(), &[0.3, -1.0]);
        // f larger than n/2 still produces a model
        let ups = pvs(&[&[0.0], &[0.1], &[0.2], &[9.0], &[-9.0]]);
        let out = bulyan(&ups, 4).unwrap();
        assert_eq!(out.selected.len(), 1);
    }

    #[test]
    fn fltrust_examples() {
        let global = pv(&[1.0, 1.0]);
        let server = pv(&[2.0, 3.0]);
        let (agg, scores) = fltrust(std::slice::from_ref(&server), &server, &global).unwrap();
        for (a, b) in agg.model.values().iter().zip(server.values()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!((scores.trust[0] - 1.0).abs() < 1e-12);

        // opposite direction → zero trust → global model unchanged
        let opposite = pv(&[0.0, -1.0]);
        let (agg, scores) = fltrust(&[opposite], &server, &global).unwrap();
        assert_eq!(scores.trust, vec![0.0]);
        assert_eq!(agg.model, global);
        assert!(agg.selected.is_empty());

        // zero-norm server delta
        let (agg, _) = fltrust(std::slice::from_ref(&server), &global, &global).unwrap();
        assert_eq!(agg.model, global);
    }

    #[test]
    fn fltrust_orthogonal_client_is_ignored() {
        let global = pv(&[0.0, 0.0]);
        let server = pv(&[1.0, 0.0]);
        // parallel with twice the norm, orthogonal with any norm
        let ups = pvs(&[&[2.0, 0.0], &[0.0, 5.0]]);
        let (agg, scores) = fltrust(&ups, &server, &global).unwrap();
        assert_eq!(scores.trust, vec![1.0, 0.0]);
        assert_eq!(agg.selected, vec![0]);
        // rescaled to the server norm
        assert_eq!(agg.model.values(), &[1.0, 0.0]);
    }
}
