/// Euclidean projection onto `{w >= 0, sum w = 1}` by sorting and
/// thresholding: find the largest `k` with `u_k - (sum_{j<=k} u_j - 1) / k > 0`
/// over the descending sort `u`, then shift by that threshold and clip.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    if v.is_empty() {
        return Vec::new();
    }
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, uk) in u.iter().enumerate() {
        cumsum += uk;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if uk - t > 0.0 {
            theta = t;
        }
    }
    let mut w: Vec<f64> = v.iter().map(|x| (x - theta).max(0.0)).collect();
    // Remove the rounding residue so the sum is 1 to machine precision.
    let s: f64 = w.iter().sum();
    if s > 0.0 {
        w.iter_mut().for_each(|x| *x /= s);
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn spec_points() {
        assert!(close(&project_simplex(&[0.2, 0.3, 0.5]), &[0.2, 0.3, 0.5]));
        assert!(close(&project_simplex(&[2.0, 0.0]), &[1.0, 0.0]));
        let third = 1.0 / 3.0;
        assert!(close(&project_simplex(&[0.5, 0.5, 0.5]), &[third; 3]));
        assert!(close(&project_simplex(&[-1.0, -1.0]), &[0.5, 0.5]));
    }
}
