use nalgebra::{DMatrix, SymmetricEigen};

use super::AnalysisError;

/// Two-component PCA of a point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    pub points: Vec<[f64; 2]>,
    pub components: [Vec<f64>; 2],
    pub variance_ratio: [f64; 2],
    /// `max - min` of each projected axis.
    pub ranges: [f64; 2],
    pub mean: Vec<f64>,
}

impl PcaProjection {
    /// Maps projected points back into the input space.
    pub fn reconstruct(&self) -> Vec<Vec<f64>> {
        self.points
            .iter()
            .map(|p| {
                self.mean
                    .iter()
                    .enumerate()
                    .map(|(j, m)| m + p[0] * self.components[0][j] + p[1] * self.components[1][j])
                    .collect()
            })
            .collect()
    }

    pub fn mean_range(&self) -> f64 {
        (self.ranges[0] + self.ranges[1]) / 2.0
    }
}

/// Flips `v` so that its first largest-magnitude entry is positive.
fn orient(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() + 1e-12 {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// PCA over rows of equal width; `name` identifies the data in errors.
pub fn pca2<R: AsRef<[f64]>>(rows: &[R], name: &str) -> Result<PcaProjection, AnalysisError> {
    let n = rows.len();
    let d = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
    if n < 3 || d < 2 {
        return Err(AnalysisError::Input(format!("{name}: PCA needs at least 3 points of dimension 2, got {n} x {d}")));
    }
    if rows.iter().any(|r| r.as_ref().len() != d) {
        return Err(AnalysisError::Input(format!("{name}: rows of unequal width")));
    }
    if rows.iter().any(|r| r.as_ref().iter().any(|v| !v.is_finite())) {
        return Err(AnalysisError::Input(format!("{name}: non-finite entries")));
    }
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r.as_ref()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| rows[i].as_ref()[j] - mean[j]);
    let cov = centered.transpose() * &centered;
    let total = cov.trace();
    let scale = cov.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if total <= 1e-12 * scale.max(1.0) || total == 0.0 {
        return Err(AnalysisError::Degenerate(format!("{name}: all points identical (rank 0)")));
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut comps: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut ratio = [0.0; 2];
    for k in 0..2 {
        let mut v: Vec<f64> = eig.eigenvectors.column(order[k]).iter().copied().collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        orient(&mut v);
        comps[k] = v;
        ratio[k] = (eig.eigenvalues[order[k]] / total).clamp(0.0, 1.0);
    }
    let points: Vec<[f64; 2]> = (0..n)
        .map(|i| {
            let row = centered.row(i);
            let p = |c: &[f64]| row.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
            [p(&comps[0]), p(&comps[1])]
        })
        .collect();
    let range = |k: usize| {
        let (lo, hi) =
            points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[k]), hi.max(p[k])));
        hi - lo
    };
    Ok(PcaProjection { ranges: [range(0), range(1)], points, components: comps, variance_ratio: ratio, mean })
}

/// Mean axis range of A's projection over B's.
pub fn manifold_ratio<R: AsRef<[f64]>>(a: &[R], b: &[R]) -> Result<f64, AnalysisError> {
    let pa = pca2(a, "A")?;
    let pb = pca2(b, "B")?;
    let rb = pb.mean_range();
    if rb <= 0.0 {
        return Err(AnalysisError::Degenerate("B has zero extent".into()));
    }
    Ok(pa.mean_range() / rb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn collinear_points() {
        let p = pca2(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]], "line").unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((p.components[0][0] - h).abs() < 1e-12 && (p.components[0][1] - h).abs() < 1e-12);
        assert!((p.variance_ratio[0] - 1.0).abs() < 1e-12 && p.variance_ratio[1].abs() < 1e-12);
    }

    #[test]
    fn diagonal_covariance_ratios() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows: Vec<Vec<f64>> = (0..10_000)
            .map(|_| {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                vec![3.0 * a, b, 0.0, 0.0]
            })
            .collect();
        let p = pca2(&rows, "diag").unwrap();
        assert!((p.variance_ratio[0] - 0.9).abs() <= 0.02 && (p.variance_ratio[1] - 0.1).abs() <= 0.02);
        assert!(p.variance_ratio[0] >= p.variance_ratio[1]);
        let dot: f64 = p.components[0].iter().zip(&p.components[1]).map(|(a, b)| a * b).sum();
        assert!(dot.abs() < 1e-6);
    }

    #[test]
    fn identical_points_are_rank_zero() {
        let err = pca2(&[[1.0, 2.0]; 5], "cache-x").unwrap_err();
        assert!(matches!(&err, AnalysisError::Degenerate(m) if m.contains("cache-x")));
    }

    #[test]
    fn reprojection_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rows: Vec<[f64; 2]> = (0..50).map(|_| [rng.gen::<f64>() * 4.0, rng.gen::<f64>()]).collect();
        let p = pca2(&rows, "a").unwrap();
        let q = pca2(&p.points, "b").unwrap();
        for (a, b) in p.points.iter().zip(&q.points) {
            assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn scaled_copy_ratio() {
        let b: Vec<[f64; 2]> = (0..20).map(|i| [i as f64, ((i * 7) % 5) as f64]).collect();
        let a: Vec<[f64; 2]> = b.iter().map(|p| [10.0 * p[0], 10.0 * p[1]]).collect();
        assert!((manifold_ratio(&a, &b).unwrap() - 10.0).abs() < 1e-6);
        assert!((manifold_ratio(&b, &b).unwrap() - 1.0).abs() < 1e-12);
    }
}
