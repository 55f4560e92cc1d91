use super::rng::SeededRng;

/// Parameter count above which only a seeded subsample is checked.
pub const FULL_CHECK_LIMIT: usize = 10_000;
const SUBSAMPLE: usize = 2_000;

/// Largest relative error between `analytic` and central differences of
/// `loss` around `params`.
///
/// The relative error of an entry is `|a - n| / max(|a|, |n|, 1e-6)`; the
/// floor keeps entries whose true gradient is zero from dominating. Above
/// [`FULL_CHECK_LIMIT`] parameters a subsample chosen by `seed` is checked.
pub fn grad_check<F>(loss: F, analytic: &[f64], params: &[f64], h: f64, seed: u64) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    assert!(h > 0.0, "step must be positive");
    assert_eq!(analytic.len(), params.len());
    let indices: Vec<usize> = if params.len() > FULL_CHECK_LIMIT {
        let mut perm = SeededRng::new(seed).permutation(params.len());
        perm.truncate(SUBSAMPLE);
        perm.sort_unstable();
        perm
    } else {
        (0..params.len()).collect()
    };
    let mut p = params.to_vec();
    let mut worst = 0.0f64;
    for i in indices {
        let orig = p[i];
        p[i] = orig + h;
        let up = loss(&p);
        p[i] = orig - h;
        let down = loss(&p);
        p[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(1e-6);
        let rel = (a - numeric).abs() / denom;
        if !rel.is_finite() {
            return f64::INFINITY;
        }
        worst = worst.max(rel);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(p: &[f64]) -> f64 {
        p.iter().enumerate().map(|(i, x)| (i as f64 + 1.0) * x * x).sum()
    }

    fn quadratic_grad(p: &[f64]) -> Vec<f64> {
        p.iter().enumerate().map(|(i, x)| 2.0 * (i as f64 + 1.0) * x).collect()
    }

    #[test]
    fn exact_on_quadratic() {
        let p = vec![0.3, -1.1, 2.0, 0.7];
        let err = grad_check(quadratic, &quadratic_grad(&p), &p, 1e-4, 0);
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn detects_corrupted_entry() {
        let p = vec![0.3, -1.1, 2.0, 0.7];
        let mut g = quadratic_grad(&p);
        g[2] *= 2.0;
        assert!(grad_check(quadratic, &g, &p, 1e-4, 0) > 0.1);
    }

    #[test]
    fn subsamples_large_parameter_vectors() {
        let p: Vec<f64> = (0..12_000).map(|i| (i % 7) as f64 * 0.1).collect();
        let err = grad_check(
            |q| q.iter().map(|x| x * x).sum(),
            &p.iter().map(|x| 2.0 * x).collect::<Vec<_>>(),
            &p,
            1e-3,
            4,
        );
        assert!(err < 1e-6);
    }
}
