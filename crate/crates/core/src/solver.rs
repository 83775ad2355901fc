//! Folding of per-grid samples, the 0/1 congruence system and its weighted
//! pseudo-inverse, reconstruction kernels and the sensitivity profile.
//!
//! Each grid k contributes Q_k rows (k, r), r = 0..Q_k−1. Column p has a one
//! in row (k, p mod Q_k) for every k. The pseudo-inverse is taken after
//! scaling row (k, r) by √Q_k, so that the solution coincides with the
//! unweighted least-squares fit of the trigonometric polynomial to all
//! ΣQ_k grid samples.

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::smrs_design::SmrsScheme;

const SVD_CUTOFF: f64 = 1e-10;

/// e^{−j2πm/Q} for m = 0..Q−1.
pub(crate) fn twiddles(q: u32) -> Vec<Complex64> {
    (0..q).map(|m| Complex64::from_polar(1.0, -2.0 * PI * m as f64 / q as f64)).collect()
}

/// e^{j2π·p·u/T} with the fractional turn count reduced first to keep
/// accuracy for large |p|.
pub(crate) fn phase(p: i64, u_over_t: f64) -> Complex64 {
    let turns = (p as f64 * u_over_t).rem_euclid(1.0);
    Complex64::from_polar(1.0, 2.0 * PI * turns)
}

/// Scaled per-grid DFTs Λ_{k,r}, stored row-major in (k, r) order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldedData {
    pub lambda_kr: Vec<Complex64>,
}

/// Coefficients before (`delta`) and after (`beta`) removing the t0 rotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientVector {
    pub cols: Vec<i64>,
    pub delta: Vec<Complex64>,
    pub beta: Vec<Complex64>,
}

impl CoefficientVector {
    /// Evaluates Σ_{p∈subset} β_p e^{j2πp·u/T}; `None` uses every column.
    pub fn evaluate(&self, subset: Option<&[i64]>, u: f64, period: f64) -> Complex64 {
        let x = u / period;
        match subset {
            None => self.cols.iter().zip(&self.beta).map(|(&p, b)| b * phase(p, x)).sum(),
            Some(s) => self
                .cols
                .iter()
                .zip(&self.beta)
                .filter(|(p, _)| s.binary_search(p).is_ok())
                .map(|(&p, b)| b * phase(p, x))
                .sum(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SolveMethod {
    #[default]
    Dense,
    Lsqr,
}

/// Folds the samples of each grid by a direct DFT.
///
/// `samples` holds one value per physical instant of the scheme.
pub fn fold_samples(scheme: &SmrsScheme, samples: &[Complex64]) -> Result<FoldedData> {
    if samples.len() != scheme.instants().len() {
        return Err(Error::SampleCount { expected: scheme.instants().len(), got: samples.len() });
    }
    let grid: Vec<Complex64> = scheme
        .grid_map()
        .iter()
        .flat_map(|row| row.iter().map(|&i| samples[i]))
        .collect();
    fold_grid(scheme, &grid)
}

/// Folds samples given per grid point (k, q) in flat order.
pub fn fold_grid(scheme: &SmrsScheme, grid: &[Complex64]) -> Result<FoldedData> {
    if grid.len() != scheme.grid_len() {
        return Err(Error::SampleCount { expected: scheme.grid_len(), got: grid.len() });
    }
    let mut lambda_kr = Vec::with_capacity(grid.len());
    let mut offset = 0;
    for &q in scheme.moduli() {
        let tw = twiddles(q);
        let qs = q as usize;
        let block = &grid[offset..offset + qs];
        let scale = 1.0 / q as f64;
        for r in 0..qs {
            let mut acc = Complex64::new(0.0, 0.0);
            for (m, a) in block.iter().enumerate() {
                acc += a * tw[(r * m) % qs];
            }
            lambda_kr.push(acc * scale);
        }
        offset += qs;
    }
    Ok(FoldedData { lambda_kr })
}

/// The folded congruence system for a column set J.
#[derive(Debug)]
pub struct FoldedSystem {
    moduli: Vec<u32>,
    row_offsets: Vec<usize>,
    cols: Vec<i64>,
    incidence: Vec<Vec<usize>>,
    rank: usize,
    pinv: Option<DMatrix<f64>>,
    noise_gram: Option<DMatrix<f64>>,
    kernel: OnceLock<Vec<Complex64>>,
}

impl FoldedSystem {
    /// Builds the incidence lists and, when the system has full column rank,
    /// the weighted pseudo-inverse λ and the noise Gram matrix λ·W·λᵀ with
    /// W = diag(1/Q_k).
    pub fn build(scheme: &SmrsScheme, cols: &[i64]) -> Result<Self> {
        if cols.is_empty() {
            return Err(Error::invalid("index set J is empty"));
        }
        if cols.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("index set J must be strictly increasing"));
        }
        let moduli = scheme.moduli().to_vec();
        let mut row_offsets = Vec::with_capacity(moduli.len() + 1);
        let mut total = 0usize;
        for &q in &moduli {
            row_offsets.push(total);
            total += q as usize;
        }
        row_offsets.push(total);

        let mut incidence = vec![Vec::new(); total];
        for (k, &q) in moduli.iter().enumerate() {
            for (j, &p) in cols.iter().enumerate() {
                let r = p.rem_euclid(q as i64) as usize;
                incidence[row_offsets[k] + r].push(j);
            }
        }

        let weights = row_weights(&moduli, total);
        let mut a = DMatrix::<f64>::zeros(total, cols.len());
        for (row, list) in incidence.iter().enumerate() {
            for &j in list {
                a[(row, j)] = weights[row].sqrt();
            }
        }
        let svd = a.svd(true, true);
        let sigma_max = svd.singular_values.max();
        let cutoff = SVD_CUTOFF * sigma_max;
        let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();

        let (pinv, noise_gram) = if rank == cols.len() {
            let mut pinv = svd.pseudo_inverse(cutoff).map_err(|e| Error::invalid(e.to_string()))?;
            for (row, w) in weights.iter().enumerate() {
                let s = w.sqrt();
                pinv.column_mut(row).scale_mut(s);
            }
            let mut scaled = pinv.clone();
            for (row, w) in weights.iter().enumerate() {
                scaled.column_mut(row).scale_mut(1.0 / w);
            }
            let gram = &scaled * pinv.transpose();
            (Some(pinv), Some(gram))
        } else {
            (None, None)
        };

        Ok(FoldedSystem {
            moduli,
            row_offsets,
            cols: cols.to_vec(),
            incidence,
            rank,
            pinv,
            noise_gram,
            kernel: OnceLock::new(),
        })
    }

    pub fn moduli(&self) -> &[u32] {
        &self.moduli
    }

    pub fn cols(&self) -> &[i64] {
        &self.cols
    }

    pub fn rows(&self) -> usize {
        *self.row_offsets.last().expect("offsets end with the total")
    }

    /// Row index of (k, r).
    pub fn row_of(&self, k: usize, r: usize) -> usize {
        self.row_offsets[k] + r
    }

    pub fn incidence(&self) -> &[Vec<usize>] {
        &self.incidence
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn is_full_rank(&self) -> bool {
        self.rank == self.cols.len()
    }

    /// Fraction of ones in the rows × cols incidence matrix.
    pub fn density(&self) -> f64 {
        let ones: usize = self.incidence.iter().map(Vec::len).sum();
        ones as f64 / (self.rows() as f64 * self.cols.len() as f64)
    }

    pub fn dense_matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows(), self.cols.len());
        for (row, list) in self.incidence.iter().enumerate() {
            for &j in list {
                m[(row, j)] = 1.0;
            }
        }
        m
    }

    /// λ with shape |J| × rows.
    pub fn pinv(&self) -> Result<&DMatrix<f64>> {
        self.pinv.as_ref().ok_or(Error::RankDeficient { rank: self.rank, cols: self.cols.len() })
    }

    /// λ·diag(1/Q_k)·λᵀ, the covariance of the coefficients per unit of
    /// white sample noise on every grid point.
    pub fn noise_gram(&self) -> Result<&DMatrix<f64>> {
        self.noise_gram.as_ref().ok_or(Error::RankDeficient { rank: self.rank, cols: self.cols.len() })
    }

    pub fn position(&self, p: i64) -> Option<usize> {
        self.cols.binary_search(&p).ok()
    }

    fn positions(&self, subset: &[i64]) -> Result<Vec<usize>> {
        subset.iter().map(|&p| self.position(p).ok_or(Error::NotSubset(p))).collect()
    }

    /// Solves for δ_p = Σ λ_{p,k,r} Λ_{k,r} and derotates to β_p.
    pub fn solve(&self, data: &FoldedData, t0: f64, period: f64, method: SolveMethod) -> Result<CoefficientVector> {
        if data.lambda_kr.len() != self.rows() {
            return Err(Error::SampleCount { expected: self.rows(), got: data.lambda_kr.len() });
        }
        let delta = match method {
            SolveMethod::Dense => {
                let pinv = self.pinv()?;
                (0..self.cols.len())
                    .map(|j| pinv.row(j).iter().zip(&data.lambda_kr).map(|(l, x)| x * *l).sum())
                    .collect()
            }
            SolveMethod::Lsqr => {
                if !self.is_full_rank() {
                    return Err(Error::RankDeficient { rank: self.rank, cols: self.cols.len() });
                }
                self.lsqr(&data.lambda_kr, 1e-14, 20 * self.cols.len())
            }
        };
        let beta = self
            .cols
            .iter()
            .zip(&delta)
            .map(|(&p, d)| d * phase(p, -t0 / period))
            .collect();
        Ok(CoefficientVector { cols: self.cols.clone(), delta, beta })
    }

    /// G[p, (k,q)] = (1/Q_k) Σ_r λ_{p,k,r} e^{−j2πrq/Q_k}, row-major over p.
    fn kernel_matrix(&self) -> Result<&[Complex64]> {
        let pinv = self.pinv()?;
        Ok(self.kernel.get_or_init(|| {
            let n = self.rows();
            let mut g = vec![Complex64::new(0.0, 0.0); self.cols.len() * n];
            for (k, &q) in self.moduli.iter().enumerate() {
                let qs = q as usize;
                let tw = twiddles(q);
                let base = self.row_offsets[k];
                for j in 0..self.cols.len() {
                    let lam: Vec<f64> = (0..qs).map(|r| pinv[(j, base + r)]).collect();
                    for qq in 0..qs {
                        let mut acc = Complex64::new(0.0, 0.0);
                        for (r, l) in lam.iter().enumerate() {
                            acc += tw[(r * qq) % qs] * *l;
                        }
                        g[j * n + base + qq] = acc / q as f64;
                    }
                }
            }
            g
        }))
    }

    /// Reconstruction kernels θ_{k,q}(t; J_sub, t0) for all grid points, in
    /// flat (k, q) order.
    pub fn kernel_eval(&self, subset: &[i64], t: f64, t0: f64, period: f64) -> Result<Vec<Complex64>> {
        let positions = self.positions(subset)?;
        let g = self.kernel_matrix()?;
        let n = self.rows();
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        let x = (t - t0) / period;
        for j in positions {
            let e = phase(self.cols[j], x);
            for (o, gv) in out.iter_mut().zip(&g[j * n..(j + 1) * n]) {
                *o += gv * e;
            }
        }
        Ok(out)
    }

    /// Sensitivity profile for a column subset.
    pub fn gamma_profile(&self, subset: &[i64]) -> Result<GammaProfile> {
        let positions = self.positions(subset)?;
        let h = self.noise_gram()?;
        let mut terms = std::collections::BTreeMap::<i64, f64>::new();
        for &a in &positions {
            for &b in &positions {
                *terms.entry(self.cols[a] - self.cols[b]).or_insert(0.0) += h[(a, b)];
            }
        }
        Ok(GammaProfile { terms: terms.into_iter().collect() })
    }

    /// LSQR on the √Q_k-weighted system, applied to complex data.
    fn lsqr(&self, lambda: &[Complex64], tol: f64, max_iter: usize) -> Vec<Complex64> {
        let weights: Vec<f64> = row_weights(&self.moduli, self.rows()).iter().map(|w| w.sqrt()).collect();
        let apply = |x: &[Complex64]| -> Vec<Complex64> {
            self.incidence
                .iter()
                .zip(&weights)
                .map(|(list, w)| list.iter().map(|&j| x[j]).sum::<Complex64>() * *w)
                .collect()
        };
        let apply_t = |y: &[Complex64]| -> Vec<Complex64> {
            let mut out = vec![Complex64::new(0.0, 0.0); self.cols.len()];
            for ((list, w), v) in self.incidence.iter().zip(&weights).zip(y) {
                for &j in list {
                    out[j] += v * *w;
                }
            }
            out
        };
        let norm = |v: &[Complex64]| v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();

        let anorm = self
            .incidence
            .iter()
            .zip(&weights)
            .map(|(list, w)| w * w * list.len() as f64)
            .sum::<f64>()
            .sqrt();
        let b: Vec<Complex64> = lambda.iter().zip(&weights).map(|(l, w)| l * *w).collect();
        let mut x = vec![Complex64::new(0.0, 0.0); self.cols.len()];
        let mut beta = norm(&b);
        let bnorm = beta;
        if beta == 0.0 {
            return x;
        }
        let mut u: Vec<Complex64> = b.iter().map(|z| z / beta).collect();
        let mut v = apply_t(&u);
        let mut alpha = norm(&v);
        if alpha == 0.0 {
            return x;
        }
        v.iter_mut().for_each(|z| *z /= alpha);
        let mut w = v.clone();
        let mut phi_bar = beta;
        let mut rho_bar = alpha;
        for _ in 0..max_iter {
            let av = apply(&v);
            u.iter_mut().zip(&av).for_each(|(ui, a)| *ui = a - *ui * alpha);
            beta = norm(&u);
            if beta > 0.0 {
                u.iter_mut().for_each(|z| *z /= beta);
            }
            let atu = apply_t(&u);
            v.iter_mut().zip(&atu).for_each(|(vi, a)| *vi = a - *vi * beta);
            alpha = norm(&v);
            if alpha > 0.0 {
                v.iter_mut().for_each(|z| *z /= alpha);
            }
            let rho = rho_bar.hypot(beta);
            let c = rho_bar / rho;
            let s = beta / rho;
            let theta = s * alpha;
            rho_bar = -c * alpha;
            let phi = c * phi_bar;
            phi_bar *= s;
            for ((xi, wi), vi) in x.iter_mut().zip(w.iter_mut()).zip(&v) {
                *xi += *wi * (phi / rho);
                *wi = vi - *wi * (theta / rho);
            }
            // phi_bar is the residual norm and phi_bar·alpha·|c| the norm of Aᵀr.
            if phi_bar <= tol * bnorm || phi_bar * alpha * c.abs() <= tol * anorm * phi_bar || alpha == 0.0 {
                break;
            }
        }
        x
    }
}

fn row_weights(moduli: &[u32], total: usize) -> Vec<f64> {
    let mut w = Vec::with_capacity(total);
    for &q in moduli {
        w.extend(std::iter::repeat_n(q as f64, q as usize));
    }
    w
}

/// Γ(t)² = Σ_d h_d e^{j2πd(t−t0)/T}, stored as sparse (d, h_d) terms.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaProfile {
    terms: Vec<(i64, f64)>,
}

impl GammaProfile {
    /// Γ at offset u = t − t0.
    pub fn eval(&self, u: f64, period: f64) -> f64 {
        let x = u / period;
        let sq: f64 = self.terms.iter().map(|&(d, h)| h * phase(d, x).re).sum();
        sq.max(0.0).sqrt()
    }

    /// Γ on the uniform grid u_i = −T/2 + iT/n, i = 0..n−1, via one FFT.
    pub fn curve(&self, n: usize) -> Vec<f64> {
        let mut bins = vec![Complex64::new(0.0, 0.0); n];
        for &(d, h) in &self.terms {
            let sign = if d.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            bins[d.rem_euclid(n as i64) as usize] += h * sign;
        }
        FftPlanner::<f64>::new().plan_fft_inverse(n).process(&mut bins);
        bins.iter().map(|z| z.re.max(0.0).sqrt()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smrs_design::build_scheme;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_coeffs(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
        (0..n).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
    }

    fn eval_poly(cols: &[i64], beta: &[Complex64], t: f64, period: f64) -> Complex64 {
        cols.iter().zip(beta).map(|(&p, b)| b * phase(p, t / period)).sum()
    }

    fn random_cols(rng: &mut ChaCha8Rng, len: usize, span: i64) -> Vec<i64> {
        let mut cols: Vec<i64> = Vec::new();
        while cols.len() < len {
            let p = rng.random_range(-span..span);
            if !cols.contains(&p) {
                cols.push(p);
            }
        }
        cols.sort_unstable();
        cols
    }

    fn sample(scheme: &SmrsScheme, cols: &[i64], beta: &[Complex64]) -> Vec<Complex64> {
        (0..scheme.instants().len())
            .map(|i| eval_poly(cols, beta, scheme.instant_time(i), scheme.period()))
            .collect()
    }

    /// Unweighted least squares over the raw grid samples, solved with a
    /// complex SVD of the Vandermonde matrix.
    fn vandermonde_ls(scheme: &SmrsScheme, cols: &[i64], grid: &[Complex64]) -> Vec<Complex64> {
        let rows: Vec<f64> = scheme.grid_points().map(|(k, q)| q as f64 / scheme.moduli()[k] as f64).collect();
        let v = DMatrix::from_fn(rows.len(), cols.len(), |i, j| phase(cols[j], rows[i]));
        let b = DVector::from_column_slice(grid);
        let x = v.svd(true, true).solve(&b, 1e-12).unwrap();
        x.iter().copied().collect()
    }

    #[test]
    fn fold_constant_and_single_modulus() {
        let scheme = build_scheme(&[5], 0.0, 1.0).unwrap();
        let data = fold_samples(&scheme, &[Complex64::new(2.0, -1.0); 5]).unwrap();
        assert!((data.lambda_kr[0] - Complex64::new(2.0, -1.0)).norm() < 1e-15);
        assert!(data.lambda_kr[1..].iter().all(|z| z.norm() < 1e-15));
        let one = build_scheme(&[1], 0.0, 1.0).unwrap();
        let z = Complex64::new(0.3, 0.7);
        assert_eq!(fold_samples(&one, &[z]).unwrap().lambda_kr, vec![z]);
        assert!(fold_samples(&one, &[z, z]).is_err());
    }

    #[test]
    fn fold_matches_congruence_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let scheme = build_scheme(&[7, 9, 11], 0.13, 1.0).unwrap();
        let cols = random_cols(&mut rng, 20, 60);
        let beta = random_coeffs(&mut rng, cols.len());
        let data = fold_samples(&scheme, &sample(&scheme, &cols, &beta)).unwrap();
        let delta: Vec<Complex64> = cols.iter().zip(&beta).map(|(&p, b)| b * phase(p, 0.13)).collect();
        let mut row = 0;
        for &q in scheme.moduli() {
            for r in 0..q as i64 {
                let expected: Complex64 = cols
                    .iter()
                    .zip(&delta)
                    .filter(|(p, _)| p.rem_euclid(q as i64) == r)
                    .map(|(_, d)| *d)
                    .sum();
                assert!((data.lambda_kr[row] - expected).norm() < 1e-10);
                row += 1;
            }
        }
    }

    #[test]
    fn fold_energy_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let scheme = build_scheme(&[6, 13], 0.0, 1.0).unwrap();
        let grid = random_coeffs(&mut rng, scheme.grid_len());
        let data = fold_grid(&scheme, &grid).unwrap();
        let mut off = 0;
        for &q in scheme.moduli() {
            let qs = q as usize;
            let lhs: f64 = data.lambda_kr[off..off + qs].iter().map(|z| z.norm_sqr()).sum();
            let rhs: f64 = grid[off..off + qs].iter().map(|z| z.norm_sqr()).sum::<f64>() / q as f64;
            assert!((lhs - rhs).abs() < 1e-12 * rhs);
            off += qs;
        }
    }

    #[test]
    fn complete_single_modulus_system() {
        let scheme = build_scheme(&[6], 0.0, 1.0).unwrap();
        let cols: Vec<i64> = (0..6).collect();
        let sys = FoldedSystem::build(&scheme, &cols).unwrap();
        assert!(sys.is_full_rank());
        assert!(sys.incidence().iter().all(|l| l.len() == 1));
        let pinv = sys.pinv().unwrap();
        assert!((pinv - sys.dense_matrix().transpose()).norm() < 1e-12);
        for q in 0..6 {
            let theta = sys.kernel_eval(&cols, q as f64 / 6.0, 0.0, 1.0).unwrap();
            for (i, th) in theta.iter().enumerate() {
                let want = if i == q { 1.0 } else { 0.0 };
                assert!((th - want).norm() < 1e-12, "q={q} i={i}");
            }
        }
        let profile = sys.gamma_profile(&cols).unwrap();
        assert!(profile.curve(64).iter().all(|g| (g - 1.0).abs() < 1e-12));
    }

    #[test]
    fn aliased_columns_are_rank_deficient() {
        let scheme = build_scheme(&[5], 0.0, 1.0).unwrap();
        let sys = FoldedSystem::build(&scheme, &[0, 5]).unwrap();
        assert_eq!(sys.rank(), 1);
        assert!(matches!(sys.pinv(), Err(Error::RankDeficient { .. })));
        let data = FoldedData { lambda_kr: vec![Complex64::new(0.0, 0.0); 5] };
        assert!(sys.solve(&data, 0.0, 1.0, SolveMethod::Dense).is_err());
        assert!(sys.solve(&data, 0.0, 1.0, SolveMethod::Lsqr).is_err());
    }

    #[test]
    fn pinv_is_left_inverse_and_matches_vandermonde_ls() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut tested = 0;
        while tested < 20 {
            let k = rng.random_range(1..4);
            let mut moduli: Vec<u32> = Vec::new();
            while moduli.len() < k {
                let q = rng.random_range(2..=20);
                if !moduli.contains(&q) {
                    moduli.push(q);
                }
            }
            let scheme = build_scheme(&moduli, rng.random_range(-0.5..0.5), 1.0).unwrap();
            let len = rng.random_range(1..=40);
            let cols = random_cols(&mut rng, len, 50);
            let sys = FoldedSystem::build(&scheme, &cols).unwrap();
            if !sys.is_full_rank() {
                continue;
            }
            tested += 1;
            let ident = sys.pinv().unwrap() * sys.dense_matrix();
            assert!((ident - DMatrix::identity(cols.len(), cols.len())).amax() < 1e-9);

            let grid = random_coeffs(&mut rng, scheme.grid_len());
            let data = fold_grid(&scheme, &grid).unwrap();
            let coef = sys.solve(&data, scheme.t0(), 1.0, SolveMethod::Dense).unwrap();
            let shifted: Vec<Complex64> = vandermonde_ls(&scheme, &cols, &grid);
            for (d, o) in coef.delta.iter().zip(&shifted) {
                assert!((d - o).norm() < 1e-9, "moduli={moduli:?}");
            }
            let iterative = sys.solve(&data, scheme.t0(), 1.0, SolveMethod::Lsqr).unwrap();
            for (a, b) in coef.delta.iter().zip(&iterative.delta) {
                assert!((a - b).norm() < 1e-8, "moduli={moduli:?}");
            }
        }
    }

    #[test]
    fn exact_recovery_and_kernel_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let scheme = build_scheme(&[11, 13, 17], -0.21, 2.0).unwrap();
        let cols = random_cols(&mut rng, 30, 80);
        let sys = FoldedSystem::build(&scheme, &cols).unwrap();
        assert!(sys.is_full_rank());
        let beta = random_coeffs(&mut rng, cols.len());
        let samples = sample(&scheme, &cols, &beta);
        let coef = sys.solve(&fold_samples(&scheme, &samples).unwrap(), -0.21, 2.0, SolveMethod::Dense).unwrap();
        for (a, b) in coef.beta.iter().zip(&beta) {
            assert!((a - b).norm() < 1e-10);
        }
        let grid: Vec<Complex64> = scheme.grid_map().iter().flat_map(|row| row.iter().map(|&i| samples[i])).collect();
        let sub: Vec<i64> = cols.iter().copied().filter(|p| p % 2 == 0).collect();
        let sub_beta: Vec<Complex64> = cols.iter().zip(&beta).filter(|(p, _)| *p % 2 == 0).map(|(_, b)| *b).collect();
        let profile = sys.gamma_profile(&sub).unwrap();
        for i in 0..25 {
            let t = -1.0 + 0.083 * i as f64;
            let full = sys.kernel_eval(&cols, t, -0.21, 2.0).unwrap();
            let rec: Complex64 = full.iter().zip(&grid).map(|(th, a)| th * a).sum();
            assert!((rec - eval_poly(&cols, &beta, t, 2.0)).norm() < 1e-9);
            let part = sys.kernel_eval(&sub, t, -0.21, 2.0).unwrap();
            let rec: Complex64 = part.iter().zip(&grid).map(|(th, a)| th * a).sum();
            assert!((rec - eval_poly(&sub, &sub_beta, t, 2.0)).norm() < 1e-9);
            let gamma = part.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            assert!((gamma - profile.eval(t + 0.21, 2.0)).abs() < 1e-12 * gamma.max(1.0));
        }
        assert!(matches!(sys.kernel_eval(&[1000], 0.0, 0.0, 2.0), Err(Error::NotSubset(1000))));
    }

    #[test]
    fn gamma_curve_matches_direct_evaluation() {
        let scheme = build_scheme(&[9, 10, 11], 0.0, 1.0).unwrap();
        let cols: Vec<i64> = (-12..12).collect();
        let sys = FoldedSystem::build(&scheme, &cols).unwrap();
        let profile = sys.gamma_profile(&cols).unwrap();
        let curve = profile.curve(16);
        for (i, g) in curve.iter().enumerate() {
            let u = -0.5 + i as f64 / 16.0;
            assert!((g - profile.eval(u, 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn monte_carlo_noise_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let scheme = build_scheme(&[7, 8, 9], 0.0, 1.0).unwrap();
        let cols: Vec<i64> = (0..18).map(|p| p * 2 - 9).collect();
        let sys = FoldedSystem::build(&scheme, &cols).unwrap();
        let gram = sys.noise_gram().unwrap();
        let sigma = 0.1;
        let normal = rand_distr::Normal::new(0.0, sigma / 2f64.sqrt()).unwrap();
        let trials = 1000;
        let mut acc = vec![0.0; cols.len()];
        for _ in 0..trials {
            let grid: Vec<Complex64> =
                (0..scheme.grid_len()).map(|_| Complex64::new(rng.sample(normal), rng.sample(normal))).collect();
            let coef = sys.solve(&fold_grid(&scheme, &grid).unwrap(), 0.0, 1.0, SolveMethod::Dense).unwrap();
            for (a, d) in acc.iter_mut().zip(&coef.delta) {
                *a += d.norm_sqr();
            }
        }
        for (j, a) in acc.iter().enumerate() {
            let measured = a / trials as f64;
            let predicted = sigma * sigma * gram[(j, j)];
            assert!((measured / predicted - 1.0).abs() < 0.1, "p={} ratio={}", cols[j], measured / predicted);
        }
    }

    #[test]
    fn zero_data_gives_zero() {
        let scheme = build_scheme(&[4, 5], 0.0, 1.0).unwrap();
        let sys = FoldedSystem::build(&scheme, &[0, 1, 2, 3]).unwrap();
        let data = FoldedData { lambda_kr: vec![Complex64::new(0.0, 0.0); 9] };
        for m in [SolveMethod::Dense, SolveMethod::Lsqr] {
            assert!(sys.solve(&data, 0.0, 1.0, m).unwrap().delta.iter().all(|z| z.norm() == 0.0));
        }
    }

    #[test]
    fn rejects_bad_columns() {
        let scheme = build_scheme(&[4], 0.0, 1.0).unwrap();
        assert!(FoldedSystem::build(&scheme, &[]).is_err());
        assert!(FoldedSystem::build(&scheme, &[2, 1]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]
            #[test]
            fn folding_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let scheme = build_scheme(&[3, 7, 10], 0.0, 1.0).unwrap();
                let x = random_coeffs(&mut rng, scheme.instants().len());
                let y = random_coeffs(&mut rng, scheme.instants().len());
                let mix: Vec<Complex64> = x.iter().zip(&y).map(|(u, v)| u * a + v * b).collect();
                let fx = fold_samples(&scheme, &x).unwrap();
                let fy = fold_samples(&scheme, &y).unwrap();
                let fm = fold_samples(&scheme, &mix).unwrap();
                for ((m, u), v) in fm.lambda_kr.iter().zip(&fx.lambda_kr).zip(&fy.lambda_kr) {
                    prop_assert!((m - (u * a + v * b)).norm() < 1e-12);
                }
            }

            #[test]
            fn round_trip_is_exact(seed in any::<u64>(), t0 in -0.5f64..0.5) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let scheme = build_scheme(&[13, 14, 15], t0, 1.0).unwrap();
                let cols = random_cols(&mut rng, 30, 100);
                let sys = FoldedSystem::build(&scheme, &cols).unwrap();
                prop_assume!(sys.is_full_rank());
                let beta = random_coeffs(&mut rng, cols.len());
                let data = fold_samples(&scheme, &sample(&scheme, &cols, &beta)).unwrap();
                let coef = sys.solve(&data, t0, 1.0, SolveMethod::Dense).unwrap();
                let scale = beta.iter().map(|z| z.norm()).fold(0.0, f64::max);
                for (a, b) in coef.beta.iter().zip(&beta) {
                    prop_assert!((a - b).norm() < 1e-9 * scale);
                }
            }

            #[test]
            fn incidence_one_per_grid(seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let scheme = build_scheme(&[5, 8, 12], 0.0, 1.0).unwrap();
                let cols = random_cols(&mut rng, 25, 200);
                let sys = FoldedSystem::build(&scheme, &cols).unwrap();
                for j in 0..cols.len() {
                    for k in 0..3 {
                        let q = scheme.moduli()[k] as usize;
                        let hits = (0..q).filter(|&r| sys.incidence()[sys.row_of(k, r)].contains(&j)).count();
                        prop_assert_eq!(hits, 1);
                    }
                }
                let brute = cols.len() * 3;
                let ones: usize = sys.incidence().iter().map(Vec::len).sum();
                prop_assert_eq!(ones, brute);
                prop_assert!((sys.density() - brute as f64 / (25.0 * 25.0)).abs() < 1e-15);
            }
        }
    }
}
