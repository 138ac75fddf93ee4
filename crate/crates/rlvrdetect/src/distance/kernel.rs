//! Edit-distance kernels over interned unit ids.
//!
//! Units are compared as `u32` ids (char scalar values or token-intern ids),
//! so the kernels are agnostic to the segmentation that produced them. All
//! distances are unit-cost Levenshtein (insert, delete, substitute).

/// Large-but-safe sentinel: never overflows when incremented per DP step.
const INF: usize = usize::MAX / 4;

/// Strips the common prefix and suffix, which never participate in an
/// optimal edit script under unit costs.
fn trim_common<'a>(mut a: &'a [u32], mut b: &'a [u32]) -> (&'a [u32], &'a [u32]) {
    let prefix = a.iter().zip(b.iter()).take_while(|(x, y)| x == y).count();
    a = &a[prefix..];
    b = &b[prefix..];
    let suffix = a
        .iter()
        .rev()
        .zip(b.iter().rev())
        .take_while(|(x, y)| x == y)
        .count();
    (&a[..a.len() - suffix], &b[..b.len() - suffix])
}

/// Exact Levenshtein distance, two-row DP, O(|a|·|b|) time, O(min) memory.
pub(crate) fn edit_distance(a: &[u32], b: &[u32]) -> usize {
    let (a, b) = trim_common(a, b);
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    if short.is_empty() {
        return long.len();
    }
    let mut prev: Vec<usize> = (0..=short.len()).collect();
    let mut cur = vec![0usize; short.len() + 1];
    for (i, &lu) in long.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &su) in short.iter().enumerate() {
            let sub = prev[j] + usize::from(lu != su);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[short.len()]
}

/// Banded Levenshtein: returns `Some(d)` iff the exact distance `d` is at
/// most `limit`, `None` otherwise. Exactness inside the limit holds because
/// any alignment path with cost `<= limit` stays within `|i - j| <= limit`
/// of the diagonal. Falls back to the full DP when the band would cover the
/// whole table anyway.
pub(crate) fn edit_distance_bounded(a: &[u32], b: &[u32], limit: usize) -> Option<usize> {
    let (a, b) = trim_common(a, b);
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let (ns, nl) = (short.len(), long.len());
    if nl - ns > limit {
        return None;
    }
    if 2 * limit + 1 >= ns || ns <= 1 {
        let d = edit_distance(short, long);
        return (d <= limit).then_some(d);
    }

    // Rows follow `long` (index i), columns follow `short` (index j); only
    // cells with |i - j| <= limit are live. The rows are full-width vectors,
    // so cells just outside each row's band are set to INF sentinels to keep
    // stale values from previous rows out of the min.
    let mut prev = vec![INF; ns + 1];
    let mut cur = vec![INF; ns + 1];
    for (j, cell) in prev.iter_mut().enumerate().take(ns.min(limit) + 1) {
        *cell = j;
    }
    for i in 1..=nl {
        let lo = i.saturating_sub(limit).max(1);
        let hi = (i + limit).min(ns);
        if lo == 1 {
            cur[0] = i;
        } else {
            cur[lo - 1] = INF;
        }
        let lu = long[i - 1];
        for j in lo..=hi {
            let sub = prev[j - 1] + usize::from(lu != short[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        if hi < ns {
            cur[hi + 1] = INF;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let d = prev[ns];
    (d <= limit).then_some(d)
}
