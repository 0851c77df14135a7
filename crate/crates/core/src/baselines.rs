//! Comparison statistics: MMD^2 (U-statistic), energy distance and GMMD.

use crate::data::{DataMatrix, GroupedSamples};
use crate::error::{KbqdError, Result};
use crate::kernel::{squared_distance, Bandwidth, GaussianKernel};

fn check_dims(x: &DataMatrix, y: &DataMatrix) -> Result<()> {
    if x.ncols() != y.ncols() {
        return Err(KbqdError::DimensionMismatch { expected: x.ncols(), got: y.ncols() });
    }
    Ok(())
}

/// Unbiased MMD^2 with the uncentered Gaussian kernel.
pub fn mmd2_u(x: &DataMatrix, y: &DataMatrix, h: Bandwidth) -> Result<f64> {
    check_dims(x, y)?;
    for (what, n) in [("x", x.nrows()), ("y", y.nrows())] {
        if n < 2 {
            return Err(KbqdError::TooFewObservations { what: format!("mmd sample {what}"), min: 2, got: n });
        }
    }
    let kern = GaussianKernel::new(x.ncols(), h);
    let within = |m: &DataMatrix| {
        let n = m.nrows();
        let mut s = 0.0;
        for a in 0..n {
            for b in (a + 1)..n {
                s += kern.eval(m.row(a), m.row(b));
            }
        }
        2.0 * s / (n as f64 * (n as f64 - 1.0))
    };
    let mut cross = 0.0;
    for xa in x.rows() {
        for yb in y.rows() {
            cross += kern.eval(xa, yb);
        }
    }
    let cross = cross / (x.nrows() as f64 * y.nrows() as f64);
    Ok(within(x) - 2.0 * cross + within(y))
}

fn mean_pairwise_distance(a: &DataMatrix, b: &DataMatrix) -> f64 {
    let mut s = 0.0;
    for ra in a.rows() {
        for rb in b.rows() {
            s += squared_distance(ra, rb).sqrt();
        }
    }
    s / (a.nrows() as f64 * b.nrows() as f64)
}

/// Energy distance with V-form within-sample averages:
/// `2/(nm) sum |x-y| - 1/n^2 sum |x-x'| - 1/m^2 sum |y-y'|`.
pub fn energy_two_sample(x: &DataMatrix, y: &DataMatrix) -> Result<f64> {
    check_dims(x, y)?;
    if x.nrows() == 0 || y.nrows() == 0 {
        return Err(KbqdError::TooFewObservations { what: "energy sample".into(), min: 1, got: 0 });
    }
    Ok(2.0 * mean_pairwise_distance(x, y) - mean_pairwise_distance(x, x) - mean_pairwise_distance(y, y))
}

/// `sum_{i<j} n_i n_j / (n_i + n_j) * energy(sample_i, sample_j)`.
pub fn energy_k_sample(groups: &GroupedSamples) -> Result<f64> {
    let samples = groups.samples();
    let mut total = 0.0;
    for i in 0..samples.len() {
        for j in (i + 1)..samples.len() {
            let (ni, nj) = (samples[i].nrows() as f64, samples[j].nrows() as f64);
            total += ni * nj / (ni + nj) * energy_two_sample(&samples[i], &samples[j])?;
        }
    }
    Ok(total)
}

/// Generalized MMD: `sum_i sum_{j != i} pi_j MMD^2(F_i, F_j)`.
///
/// Every unordered pair appears twice in the double sum, so unit weights
/// give exactly `2 T_n` for the uncentered kernel.
pub fn gmmd(groups: &GroupedSamples, pi: &[f64], h: Bandwidth) -> Result<f64> {
    if pi.len() != groups.k() {
        return Err(KbqdError::DimensionMismatch { expected: groups.k(), got: pi.len() });
    }
    if pi.iter().any(|&p| !(p >= 0.0)) {
        return Err(KbqdError::InvalidParameter("gmmd weights must be nonnegative".into()));
    }
    let samples = groups.samples();
    let k = samples.len();
    let mut total = 0.0;
    for i in 0..k {
        for j in (i + 1)..k {
            let m = mmd2_u(&samples[i], &samples[j], h)?;
            total += (pi[i] + pi[j]) * m;
        }
    }
    Ok(total)
}

/// Euclidean distance matrix over pooled rows, for indexed energy evaluation.
pub(crate) fn distance_matrix(z: &DataMatrix) -> Vec<f64> {
    let n = z.nrows();
    let mut out = vec![0.0; n * n];
    for a in 0..n {
        for b in 0..n {
            out[a * n + b] = squared_distance(z.row(a), z.row(b)).sqrt();
        }
    }
    out
}

/// k-sample energy over pooled positions `idx`, grouped by `sizes`.
pub(crate) fn energy_from_indices(dist: &[f64], n: usize, idx: &[usize], sizes: &[usize]) -> f64 {
    let starts = crate::data::offsets_of(sizes);
    let block = |gi: usize, gj: usize| {
        let mut s = 0.0;
        for a in starts[gi]..starts[gi] + sizes[gi] {
            let row = &dist[idx[a] * n..(idx[a] + 1) * n];
            for b in starts[gj]..starts[gj] + sizes[gj] {
                s += row[idx[b]];
            }
        }
        s / (sizes[gi] as f64 * sizes[gj] as f64)
    };
    let within: Vec<f64> = (0..sizes.len()).map(|g| block(g, g)).collect();
    let mut total = 0.0;
    for i in 0..sizes.len() {
        for j in (i + 1)..sizes.len() {
            let (ni, nj) = (sizes[i] as f64, sizes[j] as f64);
            total += ni * nj / (ni + nj) * (2.0 * block(i, j) - within[i] - within[j]);
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::gaussian_kernel;
    use crate::stats::{ksample_test_statistics, StatisticPair};
    use crate::kernel::Centering;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DataMatrix {
        let v: Vec<f64> = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
        DataMatrix::from_row_major(n, d, v).unwrap()
    }

    fn bw(h: f64) -> Bandwidth {
        Bandwidth::new(h).unwrap()
    }

    #[test]
    fn mmd_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (x, y) = (random(&mut rng, 3, 2), random(&mut rng, 3, 2));
        let h = bw(0.7);
        let k = |a: &[f64], b: &[f64]| gaussian_kernel(a, b, h).unwrap();
        let mut xx = 0.0;
        let mut yy = 0.0;
        let mut xy = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    xx += k(x.row(i), x.row(j));
                    yy += k(y.row(i), y.row(j));
                }
                xy += k(x.row(i), y.row(j));
            }
        }
        let want = xx / 6.0 - 2.0 * xy / 9.0 + yy / 6.0;
        assert!((mmd2_u(&x, &y, h).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn mmd_degenerate_and_errors() {
        let x = DataMatrix::from_rows(&[[1.0], [1.0], [1.0]]).unwrap();
        assert!(mmd2_u(&x, &x, bw(1.0)).unwrap().abs() < 1e-15);
        let one = DataMatrix::from_rows(&[[1.0]]).unwrap();
        assert!(mmd2_u(&x, &one, bw(1.0)).is_err());
    }

    #[test]
    fn mmd_equals_two_sample_tn_without_centering() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (x, y) = (random(&mut rng, 8, 3), random(&mut rng, 11, 3));
        let groups = GroupedSamples::new(vec![x.clone(), y.clone()]).unwrap();
        let StatisticPair { tn, .. } = ksample_test_statistics(&groups, bw(1.4), Centering::None).unwrap();
        assert!((tn - mmd2_u(&x, &y, bw(1.4)).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn energy_closed_forms() {
        let x = DataMatrix::from_rows(&[[0.0]]).unwrap();
        let y = DataMatrix::from_rows(&[[1.0]]).unwrap();
        assert_eq!(energy_two_sample(&x, &y).unwrap(), 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&mut rng, 5, 2);
        assert_eq!(energy_two_sample(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn energy_matches_brute_force_and_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (x, y) = (random(&mut rng, 4, 2), random(&mut rng, 4, 2));
        let dist = |a: &[f64], b: &[f64]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
        for i in 0..4 {
            for j in 0..4 {
                xy += dist(x.row(i), y.row(j));
                xx += dist(x.row(i), x.row(j));
                yy += dist(y.row(i), y.row(j));
            }
        }
        let want = 2.0 * xy / 16.0 - xx / 16.0 - yy / 16.0;
        let got = energy_two_sample(&x, &y).unwrap();
        assert!((got - want).abs() < 1e-12);
        assert!((got - energy_two_sample(&y, &x).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn energy_k_sample_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (a, b, c) = (random(&mut rng, 3, 1), random(&mut rng, 4, 1), random(&mut rng, 2, 1));
        let two = GroupedSamples::new(vec![a.clone(), b.clone()]).unwrap();
        let want2 = 12.0 / 7.0 * energy_two_sample(&a, &b).unwrap();
        assert!((energy_k_sample(&two).unwrap() - want2).abs() < 1e-12);
        let three = GroupedSamples::new(vec![a.clone(), b.clone(), c.clone()]).unwrap();
        let want3 = want2
            + 6.0 / 5.0 * energy_two_sample(&a, &c).unwrap()
            + 8.0 / 6.0 * energy_two_sample(&b, &c).unwrap();
        assert!((energy_k_sample(&three).unwrap() - want3).abs() < 1e-12);
        let same = GroupedSamples::new(vec![a.clone(), a.clone(), a]).unwrap();
        assert_eq!(energy_k_sample(&same).unwrap(), 0.0);
    }

    #[test]
    fn indexed_energy_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let groups =
            GroupedSamples::new(vec![random(&mut rng, 4, 2), random(&mut rng, 5, 2), random(&mut rng, 3, 2)])
                .unwrap();
        let dist = distance_matrix(groups.pooled());
        let idx: Vec<usize> = (0..12).collect();
        let fast = energy_from_indices(&dist, 12, &idx, groups.sizes());
        assert!((fast - energy_k_sample(&groups).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn gmmd_with_unit_weights_is_twice_tn() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let groups =
            GroupedSamples::new(vec![random(&mut rng, 5, 2), random(&mut rng, 4, 2), random(&mut rng, 6, 2)])
                .unwrap();
        let h = bw(0.9);
        let tn = ksample_test_statistics(&groups, h, Centering::None).unwrap().tn;
        let g = gmmd(&groups, &[1.0, 1.0, 1.0], h).unwrap();
        assert!((g / 2.0 - tn).abs() <= 1e-10 * tn.abs());
        // direct sum oracle
        let s = groups.samples();
        let mut want = 0.0;
        let pi = [0.2, 0.5, 0.3];
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    want += pi[j] * mmd2_u(&s[i], &s[j], h).unwrap();
                }
            }
        }
        assert!((gmmd(&groups, &pi, h).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn gmmd_with_size_weights_differs_from_tn() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let groups =
            GroupedSamples::new(vec![random(&mut rng, 5, 2), random(&mut rng, 12, 2), random(&mut rng, 7, 2)])
                .unwrap();
        let h = bw(1.0);
        let n = groups.total() as f64;
        let pi: Vec<f64> = groups.sizes().iter().map(|&m| m as f64 / n).collect();
        let tn = ksample_test_statistics(&groups, h, Centering::None).unwrap().tn;
        assert!((gmmd(&groups, &pi, h).unwrap() - tn).abs() > 1e-8);
    }
}
