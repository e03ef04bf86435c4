//! Central finite differences for verifying analytic gradients.

/// `(f(x + h e_k) - f(x - h e_k)) / 2h` for every coordinate `k`.
pub fn central_difference<F>(mut f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            probe[k] = x[k] + h;
            let up = f(&probe);
            probe[k] = x[k] - h;
            let down = f(&probe);
            probe[k] = x[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||)`, 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "gradient lengths differ");
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let g = central_difference(|v| v[0] * v[0] + 3.0 * v[0] * v[1], &[1.0, 2.0], 1e-6);
        assert!(relative_error(&g, &[8.0, 3.0]) < 1e-9);
    }

    #[test]
    fn zero_vectors() {
        assert_eq!(relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert_eq!(relative_error(&[1.0], &[0.0]), 1.0);
    }
}
