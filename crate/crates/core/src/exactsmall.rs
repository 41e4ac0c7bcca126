//! Exact linear algebra for small hypercubes: the generator of `X`, its
//! spectrum, heat kernels, resolvent Green functions, separation distance and
//! the strong stationary time built from exact block transition matrices.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnergyField, Vertex};
use crate::walk::step_x;

pub const MAX_DENSE_N: u32 = 10;
pub const MAX_SPECTRAL_N: u32 = 12;
pub const MAX_SST_N: u32 = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExactError {
    #[error("N = {n} exceeds the limit {max} for this computation")]
    TooLarge { n: u32, max: u32 },
    #[error("N = {0} is too small (needs N >= 2)")]
    TooSmall(u32),
    #[error("eigen-solver failed: {0}")]
    Eigen(String),
    #[error("resolvent system is not positive definite")]
    Singular,
    #[error("time must be nonnegative, got {0}")]
    NegativeTime(f64),
    #[error("separation at block length {block} is {sep:.4} > 1/e; increase the block")]
    BlockTooShort { block: f64, sep: f64 },
}

fn check_n(n: u32, max: u32) -> Result<(), ExactError> {
    if n > max {
        return Err(ExactError::TooLarge { n, max });
    }
    Ok(())
}

/// `exp(a E_x)` for every vertex.
pub fn site_weights(field: &mut EnergyField) -> Vec<f64> {
    (0..1u64 << field.n()).map(|x| field.weight(Vertex(x))).collect()
}

/// Dense generator `L` of `X`: `L[x,y] = exp(a(E_x + E_y))` for neighbours,
/// rows summing to zero.
pub fn generator(field: &mut EnergyField) -> Result<DMatrix<f64>, ExactError> {
    let n = field.n();
    check_n(n, MAX_DENSE_N)?;
    let w = site_weights(field);
    let size = w.len();
    let mut l = DMatrix::zeros(size, size);
    for x in 0..size {
        let mut diag = 0.0;
        for b in 0..n {
            let y = x ^ (1 << b);
            let r = w[x] * w[y];
            l[(x, y)] = r;
            diag += r;
        }
        l[(x, x)] = -diag;
    }
    Ok(l)
}

/// Generator of the unit-rate walk (all rates one).
pub fn unit_generator(n: u32) -> Result<DMatrix<f64>, ExactError> {
    check_n(n, MAX_DENSE_N)?;
    let size = 1usize << n;
    let mut l = DMatrix::zeros(size, size);
    for x in 0..size {
        for b in 0..n {
            l[(x, x ^ (1 << b))] = 1.0;
        }
        l[(x, x)] = -(n as f64);
    }
    Ok(l)
}

/// Largest asymmetry and largest absolute row sum of a generator.
pub fn generator_defects(l: &DMatrix<f64>) -> (f64, f64) {
    let mut asym = 0.0f64;
    let mut rows = 0.0f64;
    for i in 0..l.nrows() {
        let mut s = 0.0;
        for j in 0..l.ncols() {
            asym = asym.max((l[(i, j)] - l[(j, i)]).abs());
            s += l[(i, j)];
        }
        rows = rows.max(s.abs() / (-l[(i, i)]).max(1.0));
    }
    (asym, rows)
}

/// Eigendecomposition of the symmetric generator, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl Spectrum {
    pub fn new(l: &DMatrix<f64>) -> Result<Spectrum, ExactError> {
        let eig = SymmetricEigen::try_new(l.clone(), 1e-14, 0)
            .ok_or_else(|| ExactError::Eigen("symmetric QR did not converge".into()))?;
        let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = DVector::from_iterator(idx.len(), idx.iter().map(|&i| eig.eigenvalues[i]));
        let vectors = DMatrix::from_fn(l.nrows(), idx.len(), |r, c| eig.eigenvectors[(r, idx[c])]);
        Ok(Spectrum { values, vectors })
    }

    pub fn size(&self) -> usize {
        self.values.len()
    }

    /// `SG = -lambda_2`, the smallest nonzero eigenvalue of `-L`.
    pub fn gap(&self) -> f64 {
        -self.values[self.size() - 2]
    }

    /// `exp(t L)`.
    pub fn heat_kernel(&self, t: f64) -> Result<DMatrix<f64>, ExactError> {
        if t < 0.0 {
            return Err(ExactError::NegativeTime(t));
        }
        let d = self.values.map(|v| (v * t).exp());
        let scaled = DMatrix::from_fn(self.size(), self.size(), |r, c| self.vectors[(r, c)] * d[c]);
        Ok(scaled * self.vectors.transpose())
    }

    /// `P_x[X_t = y]`.
    pub fn heat_kernel_entry(&self, x: usize, y: usize, t: f64) -> Result<f64, ExactError> {
        if t < 0.0 {
            return Err(ExactError::NegativeTime(t));
        }
        Ok((0..self.size()).map(|k| self.vectors[(x, k)] * self.vectors[(y, k)] * (self.values[k] * t).exp()).sum())
    }

    /// `max_{x,y} (1 - P_x[X_t = y] / u(y))`.
    pub fn separation(&self, t: f64) -> Result<f64, ExactError> {
        let p = self.heat_kernel(t)?;
        let u = 1.0 / self.size() as f64;
        Ok(p.iter().map(|v| 1.0 - v / u).fold(f64::NEG_INFINITY, f64::max))
    }

    /// `max_{x,y} ||P_x(t) - P_y(t)||_TV`.
    pub fn d_bar(&self, t: f64) -> Result<f64, ExactError> {
        let p = self.heat_kernel(t)?;
        let s = self.size();
        let mut m = 0.0f64;
        for x in 0..s {
            for y in x + 1..s {
                let tv: f64 = 0.5 * (0..s).map(|z| (p[(x, z)] - p[(y, z)]).abs()).sum::<f64>();
                m = m.max(tv);
            }
        }
        Ok(m)
    }
}

/// Spectral gap of `-L` (dense for `N <= 10`, Lanczos for `N` up to 12).
pub fn spectral_gap(field: &mut EnergyField) -> Result<f64, ExactError> {
    let n = field.n();
    check_n(n, MAX_SPECTRAL_N)?;
    if n <= MAX_DENSE_N {
        Spectrum::new(&generator(field)?).map(|s| s.gap())
    } else {
        lanczos_gap(field, 400)
    }
}

/// Smallest eigenvalue of `-L` on mean-zero functions by Lanczos with full
/// reorthogonalisation.
pub fn lanczos_gap(field: &mut EnergyField, max_iter: usize) -> Result<f64, ExactError> {
    let n = field.n();
    check_n(n, MAX_SPECTRAL_N)?;
    let w = site_weights(field);
    let size = w.len();
    let apply = |v: &[f64], out: &mut [f64]| {
        for x in 0..size {
            let mut s = 0.0;
            for b in 0..n {
                let y = x ^ (1 << b);
                s += w[x] * w[y] * (v[x] - v[y]);
            }
            out[x] = s;
        }
    };
    let center = |v: &mut [f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter_mut().for_each(|x| *x -= m);
    };
    // Deterministic start vector with components in every eigendirection.
    let mut q: Vec<f64> = (0..size).map(|i| crate::env::hashed_uniform(0x5eed, i as u64) - 0.5).collect();
    center(&mut q);
    let nq = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    q.iter_mut().for_each(|x| *x /= nq);
    let mut basis: Vec<Vec<f64>> = vec![q];
    let (mut alphas, mut betas) = (Vec::new(), Vec::new());
    let mut prev = f64::INFINITY;
    let mut r = vec![0.0; size];
    for k in 0..max_iter.min(size - 1) {
        apply(&basis[k], &mut r);
        center(&mut r);
        let a: f64 = r.iter().zip(&basis[k]).map(|(x, y)| x * y).sum();
        alphas.push(a);
        for _ in 0..2 {
            for b in &basis {
                let c: f64 = r.iter().zip(b).map(|(x, y)| x * y).sum();
                r.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
            // Rounding leaks the constant mode back in; remove it each pass.
            center(&mut r);
        }
        let beta = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        let m = alphas.len();
        let t = DMatrix::from_fn(m, m, |i, j| {
            if i == j {
                alphas[i]
            } else if i + 1 == j || j + 1 == i {
                betas[i.min(j)]
            } else {
                0.0
            }
        });
        let ev = SymmetricEigen::try_new(t, 1e-14, 0).ok_or_else(|| ExactError::Eigen("tridiagonal".into()))?;
        let low = ev.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        if (prev - low).abs() < 1e-12 * low.abs().max(1.0) || beta < 1e-12 {
            return Ok(low);
        }
        prev = low;
        betas.push(beta);
        basis.push(r.iter().map(|x| x / beta).collect());
    }
    Err(ExactError::Eigen(format!("Lanczos did not converge in {max_iter} steps")))
}

/// `G^t = (I/t - L)^{-1}` by Cholesky.
pub fn green_exact(l: &DMatrix<f64>, t_scale: f64) -> Result<DMatrix<f64>, ExactError> {
    let a = DMatrix::identity(l.nrows(), l.ncols()) / t_scale - l;
    let chol = a.cholesky().ok_or(ExactError::Singular)?;
    Ok(chol.inverse())
}

/// The two sides of the range identity:
/// `2^{-N} sum_{x,y} G(x,y)/G(y,y)` and `2^{-N} sum_y t / G(y,y)`.
pub fn range_identity(g: &DMatrix<f64>, t_scale: f64) -> (f64, f64) {
    let size = g.nrows() as f64;
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for y in 0..g.ncols() {
        let d = g[(y, y)];
        rhs += t_scale / d;
        lhs += g.column(y).sum() / d;
    }
    (lhs / size, rhs / size)
}

/// Exponential rate of the time spent at `x` before the walk first reaches
/// distance 2 from `x`.
pub fn exit_rate_h2(field: &mut EnergyField, x: Vertex) -> Result<f64, ExactError> {
    let n = field.n();
    if n < 2 {
        return Err(ExactError::TooSmall(n));
    }
    let wx = field.weight(x);
    let (mut sum_w, mut num, mut den) = (0.0, 0.0, 0.0);
    for y in x.neighbors(n) {
        let wy = field.weight(y);
        let s_y: f64 = (0..n).map(|b| y.flip(b)).filter(|&z| z != x).map(|z| field.weight(z)).sum();
        sum_w += wy;
        num += wy * s_y;
        den += wy * (wx + s_y);
    }
    Ok(wx * sum_w * num / den)
}

/// Exact rate of the same exponential law by first-step analysis:
/// `e^{aE_x} sum_y e^{aE_y} S_y / (e^{aE_x} + S_y)` with
/// `S_y = sum_{z ~ y, z != x} e^{aE_z}`. Coincides with [`exit_rate_h2`] when
/// all `S_y` are equal (for instance without disorder).
pub fn exit_rate_h2_first_step(field: &mut EnergyField, x: Vertex) -> Result<f64, ExactError> {
    let n = field.n();
    if n < 2 {
        return Err(ExactError::TooSmall(n));
    }
    let wx = field.weight(x);
    let mut rate = 0.0;
    for y in x.neighbors(n) {
        let wy = field.weight(y);
        let s_y: f64 = (0..n).map(|b| y.flip(b)).filter(|&z| z != x).map(|z| field.weight(z)).sum();
        rate += wy * s_y / (wx + s_y);
    }
    Ok(wx * rate)
}

/// Simulated time spent at `x` before the first visit to distance 2.
pub fn time_at_start_before_h2<R: Rng + ?Sized>(field: &mut EnergyField, x: Vertex, rng: &mut R) -> f64 {
    let mut site = x;
    let mut occ = 0.0;
    loop {
        let (hold, next) = step_x(field, site, rng);
        if site == x {
            occ += hold;
        }
        if next.distance(x) >= 2 {
            return occ;
        }
        site = next;
    }
}

/// `E(f, f) = sum over edges of (f(x) - f(y))^2 rate(x, y)`.
pub fn dirichlet_form(l: &DMatrix<f64>, f: &[f64]) -> f64 {
    let mut s = 0.0;
    for x in 0..l.nrows() {
        for y in x + 1..l.ncols() {
            let r = l[(x, y)];
            if r != 0.0 {
                s += (f[x] - f[y]).powi(2) * r;
            }
        }
    }
    s
}

/// Block transition matrix and length for the strong stationary time.
#[derive(Debug, Clone)]
pub struct SstPlan {
    pub block: f64,
    pub separation: f64,
    pub kernel: DMatrix<f64>,
}

/// Accept probability scale `1 - e^{-1}`.
pub const SST_ACCEPT: f64 = 1.0 - 0.367_879_441_171_442_33;

impl SstPlan {
    /// Plan with a given block length; fails if the separation exceeds `1/e`.
    pub fn with_block(spec: &Spectrum, block: f64) -> Result<SstPlan, ExactError> {
        let sep = spec.separation(block)?;
        if sep > (-1.0f64).exp() {
            return Err(ExactError::BlockTooShort { block, sep });
        }
        Ok(SstPlan { block, separation: sep, kernel: spec.heat_kernel(block)? })
    }

    /// Smallest multiple of `N` whose separation is at most `1/e`.
    pub fn search(spec: &Spectrum, n: u32) -> Result<SstPlan, ExactError> {
        check_n(n, MAX_SST_N)?;
        let mut last = None;
        for m in 1..=64 {
            match SstPlan::with_block(spec, (m * n) as f64) {
                Ok(p) => return Ok(p),
                Err(e) => last = Some(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }
}

/// Samples `(T, X_T)` from `start`: at the end of each block the chain moves
/// to `y ~ P_z[X_block = .]`, and stops there with probability
/// `(1 - 1/e) u(y) / P_z[X_block = y]`.
pub fn strong_stationary_time<R: Rng + ?Sized>(plan: &SstPlan, start: Vertex, rng: &mut R) -> (f64, Vertex) {
    let size = plan.kernel.nrows();
    let u = 1.0 / size as f64;
    let mut z = start.index();
    let mut k = 1u64;
    loop {
        let row = plan.kernel.row(z);
        let mut r = rng.random::<f64>();
        let mut y = size - 1;
        for (j, &p) in row.iter().enumerate() {
            if r < p {
                y = j;
                break;
            }
            r -= p;
        }
        if rng.random::<f64>() < SST_ACCEPT * u / row[y] {
            return (k as f64 * plan.block, Vertex(y as u64));
        }
        z = y;
        k += 1;
    }
}

/// Checks of the exact identities for one environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityDefects {
    pub generator_asymmetry: f64,
    pub generator_row_sum: f64,
    pub green_asymmetry: f64,
    pub green_row_sum: f64,
    pub range_identity: f64,
}

impl IdentityDefects {
    pub fn max(&self) -> f64 {
        [self.generator_asymmetry, self.generator_row_sum, self.green_asymmetry, self.green_row_sum, self.range_identity]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

/// All exact identities for `field`, as relative defects.
pub fn identity_defects(field: &mut EnergyField, t_scale: f64) -> Result<IdentityDefects, ExactError> {
    let l = generator(field)?;
    let (generator_asymmetry, generator_row_sum) = generator_defects(&l);
    let scale = l.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let g = green_exact(&l, t_scale)?;
    let mut green_asymmetry = 0.0f64;
    let mut green_row_sum = 0.0f64;
    for x in 0..g.nrows() {
        green_row_sum = green_row_sum.max((g.row(x).sum() - t_scale).abs() / t_scale);
        for y in x + 1..g.ncols() {
            let d = (g[(x, y)] - g[(y, x)]).abs() / g[(x, y)].abs().max(g[(y, x)].abs());
            green_asymmetry = green_asymmetry.max(d);
        }
    }
    let (lhs, rhs) = range_identity(&g, t_scale);
    Ok(IdentityDefects {
        generator_asymmetry: generator_asymmetry / scale,
        generator_row_sum,
        green_asymmetry,
        green_row_sum,
        range_identity: (lhs - rhs).abs() / rhs,
    })
}
