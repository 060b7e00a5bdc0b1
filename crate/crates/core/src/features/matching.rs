use super::sift::Descriptor;

fn nearest_two(query: &Descriptor, pool: &[Descriptor]) -> Option<(usize, f64, f64)> {
    let mut best = (usize::MAX, f64::INFINITY);
    let mut second = f64::INFINITY;
    for (j, d) in pool.iter().enumerate() {
        let dist = query.distance_sq(d);
        if dist < best.1 {
            second = best.1;
            best = (j, dist);
        } else if dist < second {
            second = dist;
        }
    }
    (best.0 != usize::MAX).then(|| (best.0, best.1.sqrt(), second.sqrt()))
}

/// Ratio-test matching with mutual-best filtering. Returns `(i, j)` pairs
/// sorted by `i`. With a single candidate in `b` the second-neighbour distance
/// is infinite, so the ratio test passes.
pub fn match_descriptors(a: &[Descriptor], b: &[Descriptor], ratio: f64) -> Vec<(usize, usize)> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let back: Vec<usize> = b
        .iter()
        .map(|d| nearest_two(d, a).map_or(usize::MAX, |(i, _, _)| i))
        .collect();
    a.iter()
        .enumerate()
        .filter_map(|(i, d)| {
            let (j, d1, d2) = nearest_two(d, b)?;
            (d1 < ratio * d2 && back[j] == i).then_some((i, j))
        })
        .collect()
}
