use super::matrix::{dot, Matrix};
use crate::error::{Error, Result};

/// Matrices up to this order go through cyclic Jacobi; larger ones through
/// Householder tridiagonalisation and implicit QL.
const JACOBI_MAX_DIM: usize = 100;
const SYMMETRY_TOL: f64 = 1e-12;
const MAX_JACOBI_SWEEPS: usize = 60;
const MAX_QL_ITERATIONS: usize = 60;

#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Column `i` is the unit eigenvector for `eigenvalues[i]`.
    pub eigenvectors: Matrix,
}

impl EigenDecomposition {
    /// Q·diag(Λ)·Qᵀ.
    pub fn reconstruct(&self) -> Matrix {
        let n = self.eigenvalues.len();
        let q = &self.eigenvectors;
        let mut scaled = q.clone();
        for i in 0..n {
            for j in 0..n {
                scaled[(i, j)] *= self.eigenvalues[j];
            }
        }
        scaled.matmul(&q.transpose())
    }
}

/// Eigenvalues of a symmetric matrix together with the coordinates of one
/// vector in its eigenbasis.
#[derive(Debug, Clone)]
pub struct SpectralProjection {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// `coefficients[i] = qᵢ · v`.
    pub coefficients: Vec<f64>,
}

fn check_symmetric(a: &Matrix) -> Result<()> {
    if !a.is_square() {
        return Err(Error::domain(format!("matrix is {}x{}, expected square", a.rows(), a.cols())));
    }
    if a.as_slice().iter().any(|x| !x.is_finite()) {
        return Err(Error::domain("matrix has non-finite entries"));
    }
    let asym = a.asymmetry();
    if asym > SYMMETRY_TOL {
        return Err(Error::domain(format!("matrix is not symmetric (max |A_ij - A_ji| = {asym:e})")));
    }
    Ok(())
}

/// Symmetric eigendecomposition with ascending eigenvalues.
pub fn sym_eigen(a: &Matrix) -> Result<EigenDecomposition> {
    if a.rows() <= JACOBI_MAX_DIM {
        jacobi_eigen(a)
    } else {
        tridiagonal_eigen(a)
    }
}

/// Cyclic Jacobi rotations, sweeping every off-diagonal pair until the
/// off-diagonal mass is at rounding level.
pub fn jacobi_eigen(a: &Matrix) -> Result<EigenDecomposition> {
    check_symmetric(a)?;
    let n = a.rows();
    let mut m = a.clone();
    // symmetrise exactly so row and column updates stay consistent
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
    let mut v = Matrix::identity(n);
    let frob2: f64 = m.as_slice().iter().map(|x| x * x).sum();
    // rounding leaves O(ε·‖A‖) noise in each entry after a rotation
    let target = (n as f64) * (f64::EPSILON * f64::EPSILON) * frob2;
    let negligible = 1e-2 * f64::EPSILON * frob2.sqrt();

    let off = |m: &Matrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += m[(i, j)] * m[(i, j)];
            }
        }
        s
    };

    let mut converged = n < 2 || off(&m) <= target;
    let mut sweeps = 0;
    while !converged && sweeps < MAX_JACOBI_SWEEPS {
        sweeps += 1;
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                if apq.abs() <= negligible {
                    m[(p, q)] = 0.0;
                    m[(q, p)] = 0.0;
                    continue;
                }
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // A ← Jᵀ A J
                for k in 0..n {
                    let akp = m[(k, p)];
                    let akq = m[(k, q)];
                    m[(k, p)] = c * akp - s * akq;
                    m[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[(p, k)];
                    let aqk = m[(q, k)];
                    m[(p, k)] = c * apk - s * aqk;
                    m[(q, k)] = s * apk + c * aqk;
                }
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
        converged = off(&m) <= target;
    }
    if !converged {
        let remaining = off(&m).sqrt();
        if remaining > 1e-12 * frob2.sqrt() {
            return Err(Error::Numeric(format!(
                "Jacobi iteration did not converge after {MAX_JACOBI_SWEEPS} sweeps (off-diagonal norm {remaining:e})"
            )));
        }
    }
    let values: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let eigenvalues = order.iter().map(|&i| values[i]).collect();
    let mut eigenvectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            eigenvectors[(k, dst)] = v[(k, src)];
        }
    }
    Ok(EigenDecomposition { eigenvalues, eigenvectors })
}

/// Householder tridiagonalisation followed by implicit QL with Wilkinson-style
/// shifts. Suited to the larger matrices.
pub fn tridiagonal_eigen(a: &Matrix) -> Result<EigenDecomposition> {
    check_symmetric(a)?;
    let n = a.rows();
    let tri = tridiagonalize(a);
    // rows of Qᵀ = columns of Q; vecs[i*n + k] is component k of column i
    let mut qt = Matrix::identity(n);
    for reflector in &tri.reflectors {
        reflector.apply_left(&mut qt);
    }
    let mut d = tri.diagonal;
    let mut e = tri.off_diagonal;
    let mut vecs = qt.as_slice().to_vec();
    implicit_ql(&mut d, &mut e, &mut vecs, n)?;
    let mut eigenvectors = Matrix::zeros(n, n);
    for i in 0..n {
        for k in 0..n {
            eigenvectors[(k, i)] = vecs[i * n + k];
        }
    }
    Ok(EigenDecomposition { eigenvalues: d, eigenvectors })
}

/// Eigenvalues of `a` and the coordinates of `v` in its eigenbasis, without
/// forming eigenvectors. Same cost as the reduction to tridiagonal form.
pub fn spectral_projection(a: &Matrix, v: &[f64]) -> Result<SpectralProjection> {
    check_symmetric(a)?;
    if v.len() != a.rows() {
        return Err(Error::domain(format!("vector length {} does not match matrix order {}", v.len(), a.rows())));
    }
    let tri = tridiagonalize(a);
    let mut w = v.to_vec();
    for reflector in &tri.reflectors {
        reflector.apply_vec(&mut w);
    }
    let mut d = tri.diagonal;
    let mut e = tri.off_diagonal;
    implicit_ql(&mut d, &mut e, &mut w, 1)?;
    Ok(SpectralProjection { eigenvalues: d, coefficients: w })
}

struct Reflector {
    // acts on indices start..n
    start: usize,
    v: Vec<f64>,
    beta: f64,
}

impl Reflector {
    fn apply_vec(&self, x: &mut [f64]) {
        let tail = &mut x[self.start..];
        let s = self.beta * dot(&self.v, tail);
        for (xi, vi) in tail.iter_mut().zip(&self.v) {
            *xi -= s * vi;
        }
    }

    fn apply_left(&self, m: &mut Matrix) {
        let cols = m.cols();
        let mut u = vec![0.0; cols];
        for (r, vr) in self.v.iter().enumerate() {
            for (uj, mj) in u.iter_mut().zip(m.row(self.start + r)) {
                *uj += vr * mj;
            }
        }
        let data = m.as_mut_slice();
        for (r, vr) in self.v.iter().enumerate() {
            let row = &mut data[(self.start + r) * cols..(self.start + r + 1) * cols];
            let f = self.beta * vr;
            for (x, uj) in row.iter_mut().zip(&u) {
                *x -= f * uj;
            }
        }
    }
}

struct Tridiagonal {
    diagonal: Vec<f64>,
    // off_diagonal[i] couples i and i+1; last entry is zero
    off_diagonal: Vec<f64>,
    reflectors: Vec<Reflector>,
}

fn tridiagonalize(a: &Matrix) -> Tridiagonal {
    let n = a.rows();
    let mut m = a.as_slice().to_vec();
    let mut diagonal = vec![0.0; n];
    let mut off_diagonal = vec![0.0; n];
    let mut reflectors = Vec::with_capacity(n.saturating_sub(2));
    let mut p = vec![0.0; n];

    for k in 0..n {
        diagonal[k] = m[k * n + k];
        if k + 1 >= n {
            break;
        }
        let start = k + 1;
        let len = n - start;
        if len == 1 {
            off_diagonal[k] = m[k * n + start];
            continue;
        }
        // row k right of the diagonal equals column k below it
        let x = &m[k * n + start..k * n + n];
        let norm = dot(x, x).sqrt();
        if norm == 0.0 {
            off_diagonal[k] = 0.0;
            continue;
        }
        let alpha = if x[0] > 0.0 { -norm } else { norm };
        let mut v = x.to_vec();
        v[0] -= alpha;
        let vtv = dot(&v, &v);
        off_diagonal[k] = alpha;
        if vtv == 0.0 {
            continue;
        }
        let beta = 2.0 / vtv;

        // p = β B v over the trailing block
        let p = &mut p[..len];
        for (i, pi) in p.iter_mut().enumerate() {
            let row = &m[(start + i) * n + start..(start + i) * n + n];
            *pi = beta * dot(row, &v);
        }
        let kappa = 0.5 * beta * dot(p, &v);
        for (pi, vi) in p.iter_mut().zip(&v) {
            *pi -= kappa * vi;
        }
        // B ← B − v wᵀ − w vᵀ
        for i in 0..len {
            let vi = v[i];
            let wi = p[i];
            let row = &mut m[(start + i) * n + start..(start + i) * n + n];
            for ((b, vj), wj) in row.iter_mut().zip(&v).zip(p.iter()) {
                *b -= vi * wj + wi * vj;
            }
        }
        reflectors.push(Reflector { start, v, beta });
    }
    Tridiagonal { diagonal, off_diagonal, reflectors }
}

/// Implicit QL on a symmetric tridiagonal matrix (EISPACK tql2 ordering).
/// `vecs` holds `n` vectors of `comps` components each; every plane rotation
/// is applied to them, and they are permuted with the final ascending sort.
fn implicit_ql(d: &mut [f64], e: &mut [f64], vecs: &mut [f64], comps: usize) -> Result<()> {
    let n = d.len();
    if n == 0 {
        return Ok(());
    }
    e[n - 1] = 0.0;
    let eps = f64::EPSILON;
    let mut f = 0.0;
    let mut tst1 = 0.0_f64;

    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 && e[m].abs() > eps * tst1 {
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > MAX_QL_ITERATIONS {
                    return Err(Error::Numeric(format!("QL iteration did not converge for eigenvalue {l}")));
                }
                let g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);

                    let (head, tail) = vecs.split_at_mut((i + 1) * comps);
                    let vi = &mut head[i * comps..];
                    let vi1 = &mut tail[..comps];
                    for (a, b) in vi.iter_mut().zip(vi1.iter_mut()) {
                        let hb = *b;
                        *b = s * *a + c * hb;
                        *a = c * *a - s * hb;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }

    // selection sort keeps the vector swaps cheap and deterministic
    for i in 0..n.saturating_sub(1) {
        let mut k = i;
        for j in (i + 1)..n {
            if d[j] < d[k] {
                k = j;
            }
        }
        if k != i {
            d.swap(i, k);
            for c in 0..comps {
                vecs.swap(i * comps + c, k * comps + c);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(n: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let x: f64 = rng.random_range(-1.0..1.0);
                m[(i, j)] = x;
                m[(j, i)] = x;
            }
        }
        m
    }

    fn wishart(n: usize, samples: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n * samples).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        let x = Matrix::from_row_major(samples, n, x);
        let mut s = x.transpose().matmul(&x);
        for v in s.as_mut_slice() {
            *v /= samples as f64;
        }
        s
    }

    fn check_decomposition(a: &Matrix, dec: &EigenDecomposition) {
        let n = a.rows();
        for w in dec.eigenvalues.windows(2) {
            assert!(w[0] <= w[1]);
        }
        let scale = a.max_abs();
        let rec = dec.reconstruct();
        for i in 0..n {
            for j in 0..n {
                assert!((rec[(i, j)] - a[(i, j)]).abs() <= 1e-10 * scale, "reconstruction ({i},{j})");
            }
        }
        let qtq = dec.eigenvectors.transpose().matmul(&dec.eigenvectors);
        for i in 0..n {
            for j in 0..n {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((qtq[(i, j)] - expect).abs() <= 1e-10, "orthonormality ({i},{j})");
            }
        }
        let tr: f64 = dec.eigenvalues.iter().sum();
        assert!((tr - a.trace()).abs() <= 1e-9 * a.trace().abs().max(1.0));
    }

    #[test]
    fn identity_and_two_by_two() {
        let dec = sym_eigen(&Matrix::identity(3)).unwrap();
        assert_eq!(dec.eigenvalues, vec![1.0, 1.0, 1.0]);
        let a = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        for dec in [jacobi_eigen(&a).unwrap(), tridiagonal_eigen(&a).unwrap()] {
            assert!((dec.eigenvalues[0] - 1.0).abs() < 1e-14);
            assert!((dec.eigenvalues[1] - 3.0).abs() < 1e-14);
            check_decomposition(&a, &dec);
        }
    }

    #[test]
    fn wishart_100_reconstructs() {
        let a = wishart(100, 80, 7);
        let dec = sym_eigen(&a).unwrap();
        check_decomposition(&a, &dec);
        // rank ≤ 80, so at least 20 eigenvalues vanish
        assert!(dec.eigenvalues[..20].iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn solvers_agree() {
        for (n, seed) in [(1, 1), (5, 2), (17, 3), (60, 4)] {
            let a = random_symmetric(n, seed);
            let j = jacobi_eigen(&a).unwrap();
            let t = tridiagonal_eigen(&a).unwrap();
            check_decomposition(&a, &j);
            check_decomposition(&a, &t);
            for (x, y) in j.eigenvalues.iter().zip(&t.eigenvalues) {
                assert!((x - y).abs() < 1e-12, "n = {n}");
            }
        }
    }

    #[test]
    fn large_matrix_uses_ql_path() {
        let a = wishart(180, 150, 11);
        let dec = sym_eigen(&a).unwrap();
        check_decomposition(&a, &dec);
    }

    #[test]
    fn projection_matches_full_decomposition() {
        let a = wishart(70, 50, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v: Vec<f64> = (0..70).map(|_| rng.random_range(-1.0..1.0)).collect();
        let full = jacobi_eigen(&a).unwrap();
        let proj = spectral_projection(&a, &v).unwrap();
        for i in 0..70 {
            assert!((full.eigenvalues[i] - proj.eigenvalues[i]).abs() < 1e-12);
        }
        // coefficients are defined up to eigenvector sign, and degenerate
        // (null-space) eigenvalues only fix the projected mass
        let null_full: f64 = (0..70).filter(|&i| full.eigenvalues[i].abs() < 1e-10).map(|i| dot(&full.eigenvectors.column(i), &v).powi(2)).sum();
        let null_proj: f64 = (0..70).filter(|&i| proj.eigenvalues[i].abs() < 1e-10).map(|i| proj.coefficients[i].powi(2)).sum();
        assert!((null_full - null_proj).abs() < 1e-10);
        for i in 0..70 {
            if full.eigenvalues[i].abs() >= 1e-10 {
                let c = dot(&full.eigenvectors.column(i), &v);
                assert!((c.abs() - proj.coefficients[i].abs()).abs() < 1e-9, "i = {i}");
            }
        }
        let norm2: f64 = proj.coefficients.iter().map(|c| c * c).sum();
        assert!((norm2 - dot(&v, &v)).abs() < 1e-10);
    }

    #[test]
    fn rejects_asymmetric_and_non_square() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]);
        assert!(matches!(sym_eigen(&a), Err(Error::Domain(_))));
        assert!(sym_eigen(&Matrix::zeros(2, 3)).is_err());
    }
}
