//! Variance-stabilizing moving averages over token-level value series.

/// Offline smoothing: mean of the 7-token window centered at `center`,
/// truncated at the sequence boundaries (so constants smooth to themselves).
pub fn smooth_offline(series: &[f64], center: usize) -> f64 {
    assert!(center < series.len(), "center out of range");
    let lo = center.saturating_sub(3);
    let hi = (center + 3).min(series.len() - 1);
    let window = &series[lo..=hi];
    window.iter().sum::<f64>() / window.len() as f64
}

/// Online smoothing: mean of the 4 most recent values ending at `t`,
/// truncated near the start. Uses nothing past `t`, so it is safe to
/// evaluate live.
pub fn smooth_online(series: &[f64], t: usize) -> f64 {
    assert!(t < series.len(), "index out of range");
    let lo = t.saturating_sub(3);
    let window = &series[lo..=t];
    window.iter().sum::<f64>() / window.len() as f64
}
