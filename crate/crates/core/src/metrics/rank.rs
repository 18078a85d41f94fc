//! Kendall's tau-b and Spearman's rho with tie handling.
//!
//! Tau-b uses Knight's O(n log n) scheme: sort by the first variable, then
//! count strict inversions of the second with a merge sort.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
pub enum RankError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 observations, got {0}")]
    TooShort(usize),
    #[error("ranking has zero variance (all values tied)")]
    ZeroVariance,
    #[error("non-finite value in ranking")]
    NonFinite,
}

fn check(a: &[f64], b: &[f64]) -> Result<(), RankError> {
    if a.len() != b.len() {
        return Err(RankError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(RankError::TooShort(a.len()));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(RankError::NonFinite);
    }
    Ok(())
}

fn tied_pairs(sorted: &[f64]) -> u64 {
    let mut total = 0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as u64;
        total += t * (t - 1) / 2;
        i = j;
    }
    total
}

/// Sorts `v` ascending and returns the number of strict inversions.
fn sort_counting_inversions(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut inv = sort_counting_inversions(&mut v[..mid], buf);
    inv += sort_counting_inversions(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            inv += (mid - i) as u64;
            buf.push(v[j]);
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    inv
}

/// Kendall's tau-b. Reduces to `(concordant - discordant) / C(n, 2)` without ties.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<f64, RankError> {
    check(a, b)?;
    let n = a.len() as u64;
    let mut pairs: Vec<(f64, f64)> = a.iter().copied().zip(b.iter().copied()).collect();
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.total_cmp(&q.1)));

    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let ties_a = tied_pairs(&xs);
    let mut ties_joint = 0;
    let mut i = 0;
    while i < pairs.len() {
        let mut j = i + 1;
        while j < pairs.len() && pairs[j] == pairs[i] {
            j += 1;
        }
        let t = (j - i) as u64;
        ties_joint += t * (t - 1) / 2;
        i = j;
    }

    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let discordant = sort_counting_inversions(&mut ys, &mut Vec::with_capacity(pairs.len()));
    let ties_b = tied_pairs(&ys);

    let n0 = n * (n - 1) / 2;
    let untied = (n0 + ties_joint - ties_a - ties_b) as i64;
    let score = untied - 2 * discordant as i64;
    let denom = ((n0 - ties_a) * (n0 - ties_b)) as f64;
    if denom == 0.0 {
        return Err(RankError::ZeroVariance);
    }
    Ok((score as f64 / denom.sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of the positions they occupy.
pub fn midranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && v[idx[j]] == v[idx[i]] {
            j += 1;
        }
        // positions i+1 ..= j
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Spearman's rho: Pearson correlation of the midrank vectors.
pub fn spearman_rho(a: &[f64], b: &[f64]) -> Result<f64, RankError> {
    check(a, b)?;
    let ra = midranks(a);
    let rb = midranks(b);
    let n = ra.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(RankError::ZeroVariance);
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}
