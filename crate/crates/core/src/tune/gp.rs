//! Exact Gaussian-process regression with a squared-exponential kernel,
//! plus the expected-improvement acquisition for minimization.
//!
//! The GP is fit on points encoded into the unit cube and on standardized
//! scores; with those conventions the fixed kernel defaults (lengthscale
//! 0.2, signal variance 1, noise 1e-6) are sensible without marginal
//! likelihood tuning.

use super::TuneError;

/// Diagonal jitter added on top of the noise variance to keep the Cholesky
/// factorization well posed.
pub const KERNEL_JITTER: f64 = 1e-8;

/// Posterior handle over a fixed training set.
#[derive(Debug, Clone)]
pub struct GpPosterior {
    points: Vec<Vec<f64>>,
    lengthscale: f64,
    signal_variance: f64,
    chol: Vec<Vec<f64>>,
    alpha: Vec<f64>,
}

fn kernel(a: &[f64], b: &[f64], lengthscale: f64, signal_variance: f64) -> f64 {
    let dist2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    signal_variance * (-dist2 / (2.0 * lengthscale * lengthscale)).exp()
}

// In-place lower Cholesky; fails when a pivot is non-positive.
fn cholesky(mut m: Vec<Vec<f64>>) -> Result<Vec<Vec<f64>>, TuneError> {
    let n = m.len();
    for j in 0..n {
        for k in 0..j {
            let l_jk = m[j][k];
            for i in j..n {
                m[i][j] -= m[i][k] * l_jk;
            }
        }
        let pivot = m[j][j];
        if pivot <= 0.0 || !pivot.is_finite() {
            return Err(TuneError::SingularKernel);
        }
        let root = pivot.sqrt();
        for i in j..n {
            m[i][j] /= root;
        }
    }
    // zero the upper triangle for cleanliness
    for i in 0..n {
        for j in i + 1..n {
            m[i][j] = 0.0;
        }
    }
    Ok(m)
}

fn solve_lower(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut x = vec![0.0; n];
    for i in 0..n {
        let mut sum = b[i];
        for j in 0..i {
            sum -= l[i][j] * x[j];
        }
        x[i] = sum / l[i][i];
    }
    x
}

fn solve_upper_transposed(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut sum = b[i];
        for j in i + 1..n {
            sum -= l[j][i] * x[j];
        }
        x[i] = sum / l[i][i];
    }
    x
}

/// Fit an exact GP posterior. `scores` should be standardized by the caller
/// so the default signal variance of 1 is meaningful.
pub fn gp_fit(
    points: &[Vec<f64>],
    scores: &[f64],
    lengthscale: f64,
    signal_variance: f64,
    noise_variance: f64,
) -> Result<GpPosterior, TuneError> {
    if points.is_empty() || points.len() != scores.len() {
        return Err(TuneError::InsufficientData(format!(
            "gp needs matching non-empty points/scores, got {}/{}",
            points.len(),
            scores.len()
        )));
    }
    let n = points.len();
    let mut k = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            k[i][j] = kernel(&points[i], &points[j], lengthscale, signal_variance);
        }
        k[i][i] += noise_variance + KERNEL_JITTER;
    }
    let chol = cholesky(k)?;
    let tmp = solve_lower(&chol, scores);
    let alpha = solve_upper_transposed(&chol, &tmp);
    Ok(GpPosterior {
        points: points.to_vec(),
        lengthscale,
        signal_variance,
        chol,
        alpha,
    })
}

impl GpPosterior {
    /// Posterior mean and variance of the latent function at `query`.
    pub fn predict(&self, query: &[f64]) -> (f64, f64) {
        let k_star: Vec<f64> = self
            .points
            .iter()
            .map(|p| kernel(p, query, self.lengthscale, self.signal_variance))
            .collect();
        let mean: f64 = k_star.iter().zip(&self.alpha).map(|(k, a)| k * a).sum();
        let v = solve_lower(&self.chol, &k_star);
        let var = self.signal_variance - v.iter().map(|x| x * x).sum::<f64>();
        debug_assert!(var > -1e-12, "posterior variance {var} below clamp tolerance");
        (mean, var.max(0.0))
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Expected improvement below `best` (minimization) at `query`.
///
/// `EI = (best - mu) * Phi(z) + sigma * phi(z)` with `z = (best - mu) / sigma`;
/// at zero variance this degenerates to `max(best - mu, 0)`.
pub fn expected_improvement(posterior: &GpPosterior, query: &[f64], best: f64) -> f64 {
    let (mu, var) = posterior.predict(query);
    ei_value(mu, var.sqrt(), best)
}

fn ei_value(mu: f64, sigma: f64, best: f64) -> f64 {
    if sigma < 1e-12 {
        return (best - mu).max(0.0);
    }
    let z = (best - mu) / sigma;
    ((best - mu) * normal_cdf(z) + sigma * normal_pdf(z)).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use rand::Rng;

    #[test]
    fn interpolates_single_observation() {
        let points = vec![vec![0.4]];
        let gp = gp_fit(&points, &[2.5], 0.2, 1.0, 1e-10).unwrap();
        let (mean, var) = gp.predict(&[0.4]);
        assert!((mean - 2.5).abs() < 1e-6, "mean {mean}");
        assert!(var < 1e-6, "var {var}");
    }

    #[test]
    fn far_query_reverts_to_prior() {
        let points = vec![vec![0.1], vec![0.2], vec![0.3]];
        let gp = gp_fit(&points, &[1.0, -0.5, 0.7], 0.2, 1.0, 1e-6).unwrap();
        let (_, var) = gp.predict(&[5.0]); // > 10 lengthscales away
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    // Dense oracle: explicit kernel matrix inversion by Gauss-Jordan.
    fn dense_oracle(
        points: &[Vec<f64>],
        scores: &[f64],
        query: &[f64],
        ell: f64,
        sig: f64,
        noise: f64,
    ) -> (f64, f64) {
        let n = points.len();
        let mut k = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                k[i][j] = kernel(&points[i], &points[j], ell, sig);
            }
            k[i][i] += noise + KERNEL_JITTER;
        }
        let inv = invert(&k);
        let k_star: Vec<f64> = points.iter().map(|p| kernel(p, query, ell, sig)).collect();
        let mut mean = 0.0;
        let mut quad = 0.0;
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                row += inv[i][j] * scores[j];
                quad += k_star[i] * inv[i][j] * k_star[j];
            }
            mean += k_star[i] * row;
        }
        (mean, sig - quad)
    }

    fn invert(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = m.len();
        let mut a: Vec<Vec<f64>> = m
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let mut aug = row.clone();
                aug.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
                aug
            })
            .collect();
        for col in 0..n {
            let pivot_row = (col..n)
                .max_by(|&x, &y| a[x][col].abs().partial_cmp(&a[y][col].abs()).unwrap())
                .unwrap();
            a.swap(col, pivot_row);
            let pivot = a[col][col];
            for v in a[col].iter_mut() {
                *v /= pivot;
            }
            for row in 0..n {
                if row != col {
                    let factor = a[row][col];
                    for j in 0..2 * n {
                        a[row][j] -= factor * a[col][j];
                    }
                }
            }
        }
        a.into_iter().map(|row| row[n..].to_vec()).collect()
    }

    #[test]
    fn matches_dense_linear_algebra_oracle() {
        let points = vec![vec![0.1, 0.9], vec![0.5, 0.5], vec![0.8, 0.2]];
        let scores = [0.3, -1.1, 0.6];
        let gp = gp_fit(&points, &scores, 0.2, 1.0, 1e-6).unwrap();
        let mut rng = seeded_rng(3);
        for _ in 0..5 {
            let q = vec![rng.gen::<f64>(), rng.gen::<f64>()];
            let (mean, var) = gp.predict(&q);
            let (mean_o, var_o) = dense_oracle(&points, &scores, &q, 0.2, 1.0, 1e-6);
            assert!((mean - mean_o).abs() < 1e-8, "mean {mean} vs {mean_o}");
            assert!((var - var_o).abs() < 1e-8, "var {var} vs {var_o}");
        }
    }

    #[test]
    fn posterior_variance_non_negative_everywhere() {
        let mut rng = seeded_rng(4);
        let points: Vec<Vec<f64>> = (0..12).map(|_| vec![rng.gen::<f64>()]).collect();
        let scores: Vec<f64> = (0..12).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let gp = gp_fit(&points, &scores, 0.2, 1.0, 1e-6).unwrap();
        for i in 0..200 {
            let (_, var) = gp.predict(&[i as f64 / 199.0]);
            assert!(var >= 0.0);
        }
    }

    #[test]
    fn ei_zero_at_certainty_without_improvement() {
        assert_eq!(ei_value(1.0, 0.0, 1.0), 0.0); // sigma = 0, mu = best
        assert_eq!(ei_value(2.0, 0.0, 1.0), 0.0); // sigma = 0, mu > best
        assert_eq!(ei_value(0.5, 0.0, 1.0), 0.5); // certain improvement
        // through a GP, the diagonal jitter leaves sigma ~ 1e-4 at the datum
        let gp = gp_fit(&[vec![0.5]], &[1.0], 0.2, 1.0, 1e-12).unwrap();
        let ei = expected_improvement(&gp, &[0.5], 1.0);
        assert!(ei.abs() < 1e-4, "ei {ei}");
    }

    #[test]
    fn ei_matches_normal_table_at_z_one() {
        // mu = best - sigma gives z = 1: EI = sigma * (Phi(1) + phi(1))
        let sigma = 0.37;
        let best = 0.0;
        let mu = best - sigma;
        let ei = ei_value(mu, sigma, best);
        let expected = sigma * (normal_cdf(1.0) + normal_pdf(1.0));
        assert!((ei - expected).abs() < 1e-12);
        assert!((ei / sigma - 1.0833).abs() < 1e-3, "ei/sigma {}", ei / sigma);
        // same figure through a real posterior: far from data, mu ~ 0, var ~ 1
        let gp = gp_fit(&[vec![0.0]], &[0.0], 0.2, 1.0, 1e-6).unwrap();
        let (mu, var) = gp.predict(&[3.0]);
        let sigma = var.sqrt();
        let ei = expected_improvement(&gp, &[3.0], mu + sigma);
        assert!((ei / sigma - 1.0833).abs() < 1e-3);
    }

    #[test]
    fn ei_non_negative_for_random_draws() {
        let mut rng = seeded_rng(11);
        let points: Vec<Vec<f64>> = (0..8).map(|_| vec![rng.gen::<f64>()]).collect();
        let scores: Vec<f64> = (0..8).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let gp = gp_fit(&points, &scores, 0.2, 1.0, 1e-6).unwrap();
        for _ in 0..1000 {
            let q = vec![rng.gen_range(-1.0..2.0)];
            let best = rng.gen_range(-3.0..3.0);
            assert!(expected_improvement(&gp, &q, best) >= 0.0);
        }
    }

    #[test]
    fn duplicate_points_survive_via_jitter() {
        let points = vec![vec![0.5], vec![0.5], vec![0.5]];
        let gp = gp_fit(&points, &[1.0, 1.0, 1.0], 0.2, 1.0, 1e-6);
        assert!(gp.is_ok());
    }
}
