//! Regularized Kaczmarz reconstruction with SNR-based row selection.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::smsim::SystemMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowWeighting {
    None,
    RowNormL2,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReconConfig {
    /// SNR threshold Θ; rows with SNR >= Θ are kept.
    pub snr_threshold: f64,
    /// Tikhonov weight λ (applied relative to the mean row energy).
    pub lambda: f64,
    pub iterations: usize,
    pub relaxation: f64,
    pub weighting: RowWeighting,
    /// Project the real part onto [0, ∞) and zero the imaginary part
    /// after each sweep.
    pub nonnegative: bool,
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig {
            snr_threshold: 1.5,
            lambda: 0.3,
            iterations: 1000,
            relaxation: 1.0,
            weighting: RowWeighting::RowNormL2,
            nonnegative: true,
        }
    }
}

/// Per-row SNR estimate: RMS of the row divided by the noise level sigma.
/// Sigma is on the same scale as the matrix entries.
pub fn estimate_row_snr(sm: &SystemMatrix, sigma: f64) -> Result<Vec<f64>> {
    if sigma <= 0.0 {
        return Err(Error::Config("snr estimation requires sigma > 0".into()));
    }
    let n = sm.grid.len() as f64;
    let mut out = Vec::with_capacity(sm.n_components());
    for l in 0..sm.n_channels {
        for k in 0..sm.n_freq {
            let rms = (sm
                .component(l, k)
                .iter()
                .map(|c| (c.re as f64).powi(2) + (c.im as f64).powi(2))
                .sum::<f64>()
                / n)
                .sqrt();
            out.push(rms / sigma);
        }
    }
    Ok(out)
}

/// Selects component indices (l-major) whose SNR meets the threshold.
/// The k = 0 bin of every channel is always excluded.
pub fn select_frequencies(snr: &[f64], n_freq: usize, threshold: f64) -> Vec<usize> {
    snr.iter()
        .enumerate()
        .filter(|(i, &s)| i % n_freq != 0 && s >= threshold)
        .map(|(i, _)| i)
        .collect()
}

/// Regularized Kaczmarz for min ‖Ac − u‖² + λ‖c‖² via the augmented system
/// [A √λ·I]·[c; v] = u. Rows are swept in order; each update also carries
/// the auxiliary residual variable v_j for its row.
pub fn kaczmarz_solve(
    rows: &[Vec<Complex64>],
    u: &[Complex64],
    weights: &[f64],
    lambda: f64,
    iterations: usize,
    relaxation: f64,
    nonnegative: bool,
) -> Result<Vec<Complex64>> {
    let m = rows.len();
    if m == 0 {
        return Err(Error::Config("no rows selected for reconstruction".into()));
    }
    if u.len() != m || weights.len() != m {
        return Err(Error::Data("rhs/weight length does not match row count".into()));
    }
    let n = rows[0].len();
    if lambda < 0.0 || relaxation <= 0.0 || iterations == 0 {
        return Err(Error::Config("invalid kaczmarz parameters".into()));
    }
    let sqrt_lambda = lambda.sqrt();

    // weighted row norms and rhs, precomputed once
    let mut wrows: Vec<Vec<Complex64>> = Vec::with_capacity(m);
    let mut wu = Vec::with_capacity(m);
    let mut energy = Vec::with_capacity(m);
    for j in 0..m {
        if rows[j].len() != n {
            return Err(Error::Data("ragged system matrix rows".into()));
        }
        let w = weights[j];
        if !(w.is_finite() && w > 0.0) {
            return Err(Error::Numeric("nonpositive row weight".into()));
        }
        let row: Vec<Complex64> = rows[j].iter().map(|c| c * w).collect();
        let e: f64 = row.iter().map(|c| c.norm_sqr()).sum();
        energy.push(e + lambda);
        wrows.push(row);
        wu.push(u[j] * w);
    }

    let mut c = vec![Complex64::new(0.0, 0.0); n];
    let mut v = vec![Complex64::new(0.0, 0.0); m];
    for _ in 0..iterations {
        for j in 0..m {
            let row = &wrows[j];
            let dot: Complex64 = row.iter().zip(&c).map(|(a, b)| a * b).sum();
            let alpha = relaxation * (wu[j] - dot - sqrt_lambda * v[j]) / energy[j];
            for (ci, a) in c.iter_mut().zip(row) {
                *ci += alpha * a.conj();
            }
            v[j] += alpha * sqrt_lambda;
        }
        if nonnegative {
            for ci in &mut c {
                *ci = Complex64::new(ci.re.max(0.0), 0.0);
            }
        }
    }
    Ok(c)
}

/// Reconstructs a particle concentration image from a measurement spectrum
/// using the rows of `sm` selected by SNR.
pub fn reconstruct(
    sm: &SystemMatrix,
    measurement: &[Complex64],
    sigma: f64,
    cfg: &ReconConfig,
) -> Result<Vec<f64>> {
    let n_comp = sm.n_components();
    if measurement.len() != n_comp {
        return Err(Error::Data(format!(
            "measurement has {} entries, system matrix has {n_comp} components",
            measurement.len()
        )));
    }
    let snr = estimate_row_snr(sm, sigma)?;
    let selected = select_frequencies(&snr, sm.n_freq, cfg.snr_threshold);
    if selected.is_empty() {
        return Err(Error::Config(format!(
            "no rows passed the SNR threshold {}",
            cfg.snr_threshold
        )));
    }

    let mut rows = Vec::with_capacity(selected.len());
    let mut u = Vec::with_capacity(selected.len());
    let mut weights = Vec::with_capacity(selected.len());
    for &idx in &selected {
        let (l, k) = (idx / sm.n_freq, idx % sm.n_freq);
        let row = sm.component_f64(l, k);
        let norm = row.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        let w = match cfg.weighting {
            RowWeighting::None => 1.0,
            RowWeighting::RowNormL2 => {
                if norm == 0.0 {
                    continue;
                }
                1.0 / norm
            }
        };
        rows.push(row);
        u.push(measurement[idx]);
        weights.push(w);
    }
    if rows.is_empty() {
        return Err(Error::Numeric("all selected rows have zero norm".into()));
    }

    // λ is specified relative to the mean weighted row energy so the same
    // value behaves consistently across matrix scales
    let mean_energy: f64 = rows
        .iter()
        .zip(&weights)
        .map(|(r, w)| r.iter().map(|c| c.norm_sqr()).sum::<f64>() * w * w)
        .sum::<f64>()
        / rows.len() as f64;
    let lambda = cfg.lambda * mean_energy;

    let c = kaczmarz_solve(
        &rows,
        &u,
        &weights,
        lambda,
        cfg.iterations,
        cfg.relaxation,
        cfg.nonnegative,
    )?;
    Ok(c.iter().map(|x| x.re).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paramspace::entry_rng;
    use rand::Rng;

    fn randc(rng: &mut impl Rng) -> Complex64 {
        Complex64::new(
            rng.sample(rand_distr::StandardNormal),
            rng.sample(rand_distr::StandardNormal),
        )
    }

    /// Dense solve of (A^H A + λI) c = A^H u by Gaussian elimination.
    fn ridge_dense(rows: &[Vec<Complex64>], u: &[Complex64], lambda: f64) -> Vec<Complex64> {
        let n = rows[0].len();
        let m = rows.len();
        let mut a = vec![vec![Complex64::new(0.0, 0.0); n + 1]; n];
        for i in 0..n {
            for j in 0..n {
                let mut s = Complex64::new(0.0, 0.0);
                for r in 0..m {
                    s += rows[r][i].conj() * rows[r][j];
                }
                if i == j {
                    s += lambda;
                }
                a[i][j] = s;
            }
            let mut s = Complex64::new(0.0, 0.0);
            for r in 0..m {
                s += rows[r][i].conj() * u[r];
            }
            a[i][n] = s;
        }
        // partial-pivot elimination
        for col in 0..n {
            let piv = (col..n).max_by(|&p, &q| a[p][col].norm().total_cmp(&a[q][col].norm())).unwrap();
            a.swap(col, piv);
            let d = a[col][col];
            for j in col..=n {
                a[col][j] /= d;
            }
            for r in 0..n {
                if r != col {
                    let f = a[r][col];
                    for j in col..=n {
                        let v = a[col][j];
                        a[r][j] -= f * v;
                    }
                }
            }
        }
        (0..n).map(|i| a[i][n]).collect()
    }

    #[test]
    fn kaczmarz_matches_ridge_closed_form_diagonal() {
        // single row (1, 0): minimizer of (c - u)^2 + λc^2 is u / (1 + λ)
        let rows = vec![vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]];
        let u = vec![Complex64::new(2.0, 0.0)];
        let c = kaczmarz_solve(&rows, &u, &[1.0], 0.5, 2000, 1.0, false).unwrap();
        assert!((c[0].re - 2.0 / 1.5).abs() < 1e-10, "{}", c[0]);
        assert!(c[0].im.abs() < 1e-12);
        assert!(c[1].norm() < 1e-12);
    }

    #[test]
    fn kaczmarz_matches_dense_ridge_solution() {
        let mut rng = entry_rng(20, 0);
        let (m, n) = (8, 6);
        let rows: Vec<Vec<Complex64>> =
            (0..m).map(|_| (0..n).map(|_| randc(&mut rng)).collect()).collect();
        let u: Vec<Complex64> = (0..m).map(|_| randc(&mut rng)).collect();
        let lambda = 0.3;
        let want = ridge_dense(&rows, &u, lambda);
        let got = kaczmarz_solve(&rows, &u, &vec![1.0; m], lambda, 20000, 1.0, false).unwrap();
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).norm() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn kaczmarz_exact_on_consistent_square_system() {
        let mut rng = entry_rng(21, 0);
        let n = 5;
        let rows: Vec<Vec<Complex64>> =
            (0..n).map(|_| (0..n).map(|_| randc(&mut rng)).collect()).collect();
        let truth: Vec<Complex64> = (0..n).map(|_| randc(&mut rng)).collect();
        let u: Vec<Complex64> = rows
            .iter()
            .map(|r| r.iter().zip(&truth).map(|(a, b)| a * b).sum())
            .collect();
        let got = kaczmarz_solve(&rows, &u, &vec![1.0; n], 0.0, 30000, 1.0, false).unwrap();
        for (a, b) in got.iter().zip(&truth) {
            assert!((a - b).norm() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn row_weighting_changes_nothing_for_consistent_systems() {
        let mut rng = entry_rng(22, 0);
        let n = 4;
        let rows: Vec<Vec<Complex64>> = (0..n)
            .map(|i| (0..n).map(|_| randc(&mut rng) * (i as f64 + 1.0)).collect())
            .collect();
        let truth: Vec<Complex64> = (0..n).map(|_| randc(&mut rng)).collect();
        let u: Vec<Complex64> = rows
            .iter()
            .map(|r| r.iter().zip(&truth).map(|(a, b)| a * b).sum())
            .collect();
        let w: Vec<f64> = rows
            .iter()
            .map(|r| 1.0 / r.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt())
            .collect();
        let got = kaczmarz_solve(&rows, &u, &w, 0.0, 30000, 1.0, false).unwrap();
        for (a, b) in got.iter().zip(&truth) {
            assert!((a - b).norm() < 1e-6);
        }
    }

    #[test]
    fn nonnegativity_projection_clamps() {
        // system whose least-squares solution is negative; projection
        // forces zero
        let rows = vec![vec![Complex64::new(1.0, 0.0)]];
        let u = vec![Complex64::new(-3.0, 0.0)];
        let c = kaczmarz_solve(&rows, &u, &[1.0], 0.0, 50, 1.0, true).unwrap();
        assert_eq!(c[0], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn snr_selection_drops_dc_and_weak_rows() {
        let n_freq = 4;
        // channels = 2; snr values l-major
        let snr = vec![9.0, 0.5, 2.0, 1.5, 9.0, 1.49, 0.0, 3.0];
        let sel = select_frequencies(&snr, n_freq, 1.5);
        assert_eq!(sel, vec![2, 3, 7]);
    }

    #[test]
    fn snr_is_rms_over_sigma() {
        use crate::smsim::SystemMatrix;
        let grid = crate::shape::Shape3::new(1, 1, 4);
        let mut sm = SystemMatrix::zeros_for_test(1, 2, grid);
        // uniform magnitude 3 in component (0, 1)
        for c in sm.component_mut(0, 1) {
            *c = num_complex::Complex32::new(3.0, 0.0);
        }
        let snr = estimate_row_snr(&sm, 0.5).unwrap();
        assert!((snr[0] - 0.0).abs() < 1e-12);
        assert!((snr[1] - 6.0).abs() < 1e-9);
    }
}
