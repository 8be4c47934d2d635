use nalgebra::DMatrix;

/// Singular values in non-increasing order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// `max { k : s_k / s_1 > eps }`, with 0 for the zero matrix.
pub fn numerical_rank(m: &DMatrix<f64>, eps: f64) -> usize {
    rank_from_singular_values(&singular_values(m), eps)
}

pub fn rank_from_singular_values(sv: &[f64], eps: f64) -> usize {
    match sv.first() {
        Some(&s1) if s1 > 0.0 => sv.iter().take_while(|&&s| s / s1 > eps).count(),
        _ => 0,
    }
}

/// Number of leading singular values with `s_i / s_1 >= threshold`, i.e. the
/// index at which the normalised spectrum first drops below `threshold`.
pub fn decay_index(sv: &[f64], threshold: f64) -> usize {
    match sv.first() {
        Some(&s1) if s1 > 0.0 => sv.iter().position(|&s| s / s1 < threshold).unwrap_or(sv.len()),
        _ => 0,
    }
}
