//! Forest-weighted local polynomial fits and the derivative estimates they
//! carry.
//!
//! At each sample `X_i` a polynomial of degree q+1 in the projected offset
//! `(X_l - X_i)^T v` is fitted to the pilot values, weighted by the forest
//! locality weights of row i. The degree-k coefficient times k! estimates
//! the k-th directional derivative at `X_i`. An optional quadratic penalty
//! couples the per-point fits and pulls each point's derivative
//! coefficients toward their weight-averaged neighborhood values.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::data::SampleSet;
use crate::error::{Error, Result};
use crate::forest::{extract_weights, fit_poly_forest, ForestParams, WeightMatrix};

/// Relative ridge jitter applied to normal-equation diagonals.
const RIDGE_REL: f64 = 1e-10;
/// Relative residual tolerance of the joint penalized solve.
const CG_TOL: f64 = 1e-8;

/// Per-point polynomial coefficients; entry (i, j) is the degree-j
/// coefficient of the fit centered at sample i, j = 0..=q+1.
#[derive(Debug, Clone)]
pub struct LocPolCoefficients {
    beta: Array2<f64>,
}

impl LocPolCoefficients {
    pub fn beta(&self) -> &Array2<f64> {
        &self.beta
    }

    /// Polynomial order q of the underlying fit (q + 2 stored columns).
    pub fn order(&self) -> usize {
        self.beta.ncols() - 2
    }

    /// Estimated k-th directional derivative at every sample: k! * beta_k.
    pub fn derivative(&self, k: usize) -> Result<Array1<f64>> {
        if k < 1 || k > self.order() {
            return Err(Error::InvalidParameter(format!(
                "derivative order {} outside 1..={}",
                k,
                self.order()
            )));
        }
        let mut fact = 1.0;
        for j in 2..=k {
            fact *= j as f64;
        }
        Ok(self.beta.column(k).mapv(|b| fact * b))
    }
}

/// Shared per-point geometry: conditioning scales and the per-point
/// normal-equation blocks of the data term.
struct PointBlocks {
    /// Conditioning scale per point: largest |t_l - t_i| over positive-weight l.
    scale: Vec<f64>,
    /// (q+2)x(q+2) Gram block per point (scaled design).
    gram: Vec<DMatrix<f64>>,
    /// Right-hand side per point (scaled design).
    rhs: Vec<DVector<f64>>,
}

fn validate_locpol_inputs(
    samples: &SampleSet,
    weights: &WeightMatrix,
    v: &[f64],
    q: usize,
) -> Result<()> {
    if q < 1 {
        return Err(Error::InvalidParameter("order q must be >= 1".into()));
    }
    if v.len() != samples.dim() {
        return Err(Error::DimensionMismatch(format!(
            "direction has {} coordinates, samples have dimension {}",
            v.len(),
            samples.dim()
        )));
    }
    let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !norm.is_finite() || norm == 0.0 {
        return Err(Error::InvalidParameter("direction must be nonzero".into()));
    }
    if weights.n() != samples.n() {
        return Err(Error::DimensionMismatch(format!(
            "weight matrix is {0}x{0}, samples have n = {1}",
            weights.n(),
            samples.n()
        )));
    }
    if weights.entries().iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFinite("weight matrix".into()));
    }
    Ok(())
}

fn build_blocks(
    samples: &SampleSet,
    weights: &WeightMatrix,
    v: &[f64],
    q: usize,
) -> Result<PointBlocks> {
    let n = samples.n();
    let d = samples.dim();
    let dim = q + 2;
    let xs = samples.covariates();
    let pilot = samples.pilot();
    let w = weights.entries();

    let proj: Vec<f64> = (0..n)
        .map(|i| (0..d).map(|j| xs[[i, j]] * v[j]).sum())
        .collect();

    let rows: Vec<(f64, DMatrix<f64>, DVector<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut h = 0.0f64;
            for l in 0..n {
                if w[[i, l]] > 0.0 {
                    h = h.max((proj[l] - proj[i]).abs());
                }
            }
            let scale = if h > 0.0 { h } else { 1.0 };
            let mut powers = vec![0.0; 2 * dim - 1];
            let mut cross = vec![0.0; dim];
            for l in 0..n {
                let wl = w[[i, l]];
                if wl == 0.0 {
                    continue;
                }
                let z = (proj[l] - proj[i]) / scale;
                let mut p = wl;
                for a in 0..2 * dim - 1 {
                    powers[a] += p;
                    if a < dim {
                        cross[a] += p * pilot[l];
                    }
                    p *= z;
                }
            }
            let mut gram = DMatrix::zeros(dim, dim);
            for a in 0..dim {
                for b in 0..dim {
                    gram[(a, b)] = powers[a + b];
                }
            }
            let rhs = DVector::from_iterator(dim, cross.iter().cloned());
            (scale, gram, rhs)
        })
        .collect();

    let mut scale = Vec::with_capacity(n);
    let mut gram = Vec::with_capacity(n);
    let mut rhs = Vec::with_capacity(n);
    for (s, g, r) in rows {
        scale.push(s);
        gram.push(g);
        rhs.push(r);
    }
    Ok(PointBlocks { scale, gram, rhs })
}

/// Solves each point's weighted least squares problem independently
/// (the unpenalized fit).
pub fn weighted_locpol(
    samples: &SampleSet,
    weights: &WeightMatrix,
    v: &[f64],
    q: usize,
) -> Result<LocPolCoefficients> {
    validate_locpol_inputs(samples, weights, v, q)?;
    let n = samples.n();
    let w = weights.entries();
    if let Some(i) = (0..n).find(|&i| (0..n).all(|l| w[[i, l]] == 0.0)) {
        return Err(Error::ZeroWeightRow { row: i });
    }
    let blocks = build_blocks(samples, weights, v, q)?;
    let dim = q + 2;

    let solutions: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let sol = solve_block(&blocks.gram[i], &blocks.rhs[i]);
            // Unscale: beta_j = b_j / h^j.
            let mut out = vec![0.0; dim];
            let mut hp = 1.0;
            for j in 0..dim {
                out[j] = sol[j] / hp;
                hp *= blocks.scale[i];
            }
            out
        })
        .collect();

    let mut beta = Array2::zeros((n, dim));
    for (i, row) in solutions.iter().enumerate() {
        for (j, &b) in row.iter().enumerate() {
            beta[[i, j]] = b;
        }
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::NonFinite("local polynomial coefficients".into()));
    }
    Ok(LocPolCoefficients { beta })
}

/// Jointly fits all points with the smoothness penalty
/// `lambda * sum_i sum_j (sum_l (j! b_ij - j! b_lj) W_il)^2` added to the
/// weighted squared loss, solved by preconditioned conjugate gradients on
/// the normal equations with the unpenalized solution as warm start.
pub fn penalized_locpol(
    samples: &SampleSet,
    weights: &WeightMatrix,
    v: &[f64],
    q: usize,
    lambda: f64,
) -> Result<LocPolCoefficients> {
    if lambda.is_nan() || lambda < 0.0 || lambda.is_infinite() {
        return Err(Error::InvalidParameter(format!(
            "penalty must be finite and non-negative, got {lambda}"
        )));
    }
    validate_locpol_inputs(samples, weights, v, q)?;
    let n = samples.n();
    let dim = q + 2;
    let blocks = build_blocks(samples, weights, v, q)?;
    let w = weights.entries();

    // Warm start from the per-point solves where they exist; zero rows are
    // left to the penalty and ridge.
    let zero_rows: Vec<bool> = (0..n)
        .map(|i| (0..n).all(|l| w[[i, l]] == 0.0))
        .collect();
    let mut start = vec![0.0; n * dim];
    if !zero_rows.iter().any(|&z| z) {
        let pp = weighted_locpol(samples, weights, v, q)?;
        for i in 0..n {
            let mut hp = 1.0;
            for j in 0..dim {
                start[i * dim + j] = pp.beta()[[i, j]] * hp;
                hp *= blocks.scale[i];
            }
        }
    }

    // Row sums of W (the penalty Laplacian is diag(rowsum) - W).
    let row_sums: Vec<f64> = (0..n).map(|i| w.row(i).sum()).collect();
    // Squared column norms of L, used for the preconditioner diagonal.
    let mut l_colsq = vec![0.0; n];
    for k in 0..n {
        for i in 0..n {
            let lki = if k == i { row_sums[k] - w[[k, i]] } else { -w[[k, i]] };
            l_colsq[i] += lki * lki;
        }
    }
    // Factorials (j!)^2 for j = 1..=q+1 and the per-point 1/h^j factors.
    let mut factsq = vec![0.0; dim];
    let mut f = 1.0;
    for (j, fsq) in factsq.iter_mut().enumerate().skip(1) {
        f *= j as f64;
        *fsq = f * f;
    }
    let inv_scale_pow = |i: usize, j: usize| -> f64 {
        let mut hp = 1.0;
        for _ in 0..j {
            hp *= blocks.scale[i];
        }
        1.0 / hp
    };

    // Ridge relative to the largest diagonal entry of the full system.
    let mut max_diag = 0.0f64;
    for (i, &colsq) in l_colsq.iter().enumerate() {
        for (j, &fsq) in factsq.iter().enumerate() {
            let mut dg = blocks.gram[i][(j, j)];
            if j >= 1 {
                let s = inv_scale_pow(i, j);
                dg += lambda * fsq * s * s * colsq;
            }
            max_diag = max_diag.max(dg);
        }
    }
    let ridge = RIDGE_REL * max_diag.max(1.0);

    // Block-Jacobi preconditioner: per-point data block plus the diagonal
    // of the penalty block plus the ridge.
    let precond: Vec<Cholesky<f64, Dyn>> = (0..n)
        .map(|i| {
            let mut p = blocks.gram[i].clone();
            for j in 0..dim {
                p[(j, j)] += ridge;
                if j >= 1 {
                    let s = inv_scale_pow(i, j);
                    p[(j, j)] += lambda * factsq[j] * s * s * l_colsq[i];
                }
            }
            Cholesky::new(p).expect("ridge keeps preconditioner positive definite")
        })
        .collect();

    // Applies the normal-equation operator H = blockdiag(G_i) + ridge I
    // + lambda * sum_j M_j^T M_j with M_j = j! L diag(1/h^j).
    let apply = |x: &[f64],
                 out: &mut Vec<f64>,
                 buf_t: &mut Vec<f64>,
                 buf_lt: &mut Vec<f64>,
                 ridge: f64| {
        out.clear();
        out.resize(n * dim, 0.0);
        for i in 0..n {
            let xi = &x[i * dim..(i + 1) * dim];
            let oi = &mut out[i * dim..(i + 1) * dim];
            for (a, o) in oi.iter_mut().enumerate() {
                let mut acc = ridge * xi[a];
                for (b, xv) in xi.iter().enumerate() {
                    acc += blocks.gram[i][(a, b)] * xv;
                }
                *o = acc;
            }
        }
        if lambda > 0.0 {
            for j in 1..dim {
                for i in 0..n {
                    buf_t[i] = x[i * dim + j] * inv_scale_pow(i, j);
                }
                // L t = rowsum .* t - W t
                buf_lt
                    .par_iter_mut()
                    .enumerate()
                    .for_each(|(i, out_i)| {
                        let mut dot = 0.0;
                        let row = w.row(i);
                        for l in 0..n {
                            dot += row[l] * buf_t[l];
                        }
                        *out_i = row_sums[i] * buf_t[i] - dot;
                    });
                // L^T u = rowsum .* u - W^T u; accumulate into out.
                let wt_dot: Vec<f64> = (0..n)
                    .into_par_iter()
                    .map(|i| {
                        let mut dot = 0.0;
                        for k in 0..n {
                            dot += w[[k, i]] * buf_lt[k];
                        }
                        row_sums[i] * buf_lt[i] - dot
                    })
                    .collect();
                for i in 0..n {
                    out[i * dim + j] +=
                        lambda * factsq[j] * inv_scale_pow(i, j) * wt_dot[i];
                }
            }
        }
    };

    let apply_precond = |r: &[f64], out: &mut Vec<f64>| {
        out.clear();
        for i in 0..n {
            let ri = DVector::from_iterator(dim, r[i * dim..(i + 1) * dim].iter().cloned());
            let zi = precond[i].solve(&ri);
            out.extend(zi.iter());
        }
    };

    // Right-hand side of the normal equations (penalty has zero target).
    let mut g = vec![0.0; n * dim];
    for i in 0..n {
        for a in 0..dim {
            g[i * dim + a] = blocks.rhs[i][a];
        }
    }

    let mut buf_t = vec![0.0; n];
    let mut buf_lt = vec![0.0; n];
    let cap = 10 * n * dim;
    let mut used = 0usize;

    // Preconditioned CG on the ridged operator, reusing the shared buffers.
    let mut run_cg = |rhs: &[f64], warm: Vec<f64>, used: &mut usize| -> Result<Vec<f64>> {
        let rhs_norm = norm(rhs).max(f64::MIN_POSITIVE);
        let target = CG_TOL * rhs_norm;
        let mut x = warm;
        let mut hx = Vec::new();
        apply(&x, &mut hx, &mut buf_t, &mut buf_lt, ridge);
        let mut r: Vec<f64> = rhs.iter().zip(&hx).map(|(gi, hi)| gi - hi).collect();
        let mut z = Vec::new();
        apply_precond(&r, &mut z);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        while norm(&r) > target {
            if *used >= cap {
                return Err(Error::SolverDiverged {
                    residual: norm(&r) / rhs_norm,
                    tolerance: CG_TOL,
                    iterations: *used,
                });
            }
            apply(&p, &mut hx, &mut buf_t, &mut buf_lt, ridge);
            let php = dot(&p, &hx);
            if php <= 0.0 {
                break; // numerically flat direction; current iterate is the answer
            }
            let alpha = rz / php;
            for i in 0..x.len() {
                x[i] += alpha * p[i];
                r[i] -= alpha * hx[i];
            }
            apply_precond(&r, &mut z);
            let rz_next = dot(&r, &z);
            let beta = rz_next / rz;
            rz = rz_next;
            for i in 0..p.len() {
                p[i] = z[i] + beta * p[i];
            }
            *used += 1;
        }
        Ok(x)
    };

    let mut x = run_cg(&g, start, &mut used)?;
    // Refinement against the unridged operator so the jitter only damps
    // rank-deficient directions.
    for _ in 0..2 {
        let mut h0x = Vec::new();
        let mut t1 = vec![0.0; n];
        let mut t2 = vec![0.0; n];
        apply(&x, &mut h0x, &mut t1, &mut t2, 0.0);
        let residual: Vec<f64> = g.iter().zip(&h0x).map(|(gi, hi)| gi - hi).collect();
        let correction = run_cg(&residual, vec![0.0; n * dim], &mut used)?;
        for i in 0..x.len() {
            x[i] += correction[i];
        }
    }

    let mut beta = Array2::zeros((n, dim));
    for i in 0..n {
        let mut hp = 1.0;
        for j in 0..dim {
            beta[[i, j]] = x[i * dim + j] / hp;
            hp *= blocks.scale[i];
        }
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::NonFinite("penalized coefficients".into()));
    }
    Ok(LocPolCoefficients { beta })
}

/// Solves `gram * x = rhs` through the ridged Cholesky factor, then runs
/// two iterative-refinement sweeps against the unridged matrix so the
/// ridge only acts on rank-deficient directions instead of biasing
/// well-posed coefficients.
fn solve_block(gram: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    let dim = gram.nrows();
    let mut ridged = gram.clone();
    let ridge = RIDGE_REL * ridged.diagonal().amax().max(f64::MIN_POSITIVE);
    for j in 0..dim {
        ridged[(j, j)] += ridge;
    }
    let factor = match Cholesky::new(ridged) {
        Some(f) => f,
        None => return DVector::zeros(dim),
    };
    let mut x = factor.solve(rhs);
    for _ in 0..2 {
        let residual = rhs - gram * &x;
        x += factor.solve(&residual);
    }
    x
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Full pipeline coefficients: fits the polynomial-split forest in
/// direction `v`, extracts its weights and runs the local polynomial fit
/// (penalized when `lambda > 0`, per-point otherwise).
pub fn rf_loc_pol_coefficients(
    samples: &SampleSet,
    v: &[f64],
    q: usize,
    lambda: f64,
    params: &ForestParams,
) -> Result<LocPolCoefficients> {
    let forest = fit_poly_forest(samples, v, q, params)?;
    let weights = extract_weights(&forest, samples)?;
    if lambda > 0.0 {
        penalized_locpol(samples, &weights, v, q, lambda)
    } else {
        weighted_locpol(samples, &weights, v, q)
    }
}

/// Directional derivative estimates of order `k` at every sample.
pub fn rf_loc_pol(
    samples: &SampleSet,
    k: usize,
    v: &[f64],
    q: usize,
    lambda: f64,
    params: &ForestParams,
) -> Result<Array1<f64>> {
    if k < 1 || k > q {
        return Err(Error::InvalidParameter(format!(
            "derivative order {k} outside 1..={q}"
        )));
    }
    rf_loc_pol_coefficients(samples, v, q, lambda, params)?.derivative(k)
}

/// Per-tree seed stream offset for the direction-j forest, so coordinate
/// directions do not share trees.
fn direction_seed(seed: u64, j: usize) -> u64 {
    let mut z = seed ^ (j as u64).wrapping_mul(0xA076_1D64_78BD_642F);
    z = (z ^ (z >> 33)).wrapping_mul(0xE703_7ED1_A0B4_28DB);
    z ^ (z >> 29)
}

/// Gradient field for order-one bounds: one pipeline run per coordinate
/// direction, collected into an n x d matrix.
pub fn order_one_derivative_field(
    samples: &SampleSet,
    lambda: f64,
    params: &ForestParams,
) -> Result<crate::data::DerivativeField> {
    let n = samples.n();
    let d = samples.dim();
    let mut gradients = Array2::zeros((n, d));
    for j in 0..d {
        let mut v = vec![0.0; d];
        v[j] = 1.0;
        let mut p = params.clone();
        p.seed = direction_seed(params.seed, j);
        let column = rf_loc_pol(samples, 1, &v, 1, lambda, &p)?;
        gradients.column_mut(j).assign(&column);
    }
    crate::data::DerivativeField::order_one(gradients)
}

/// Derivative field of orders 1..=q for the one-dimensional pipeline; a
/// single forest and local polynomial fit provide all orders at once.
pub fn one_dim_derivative_field(
    samples: &SampleSet,
    q: usize,
    lambda: f64,
    params: &ForestParams,
) -> Result<crate::data::DerivativeField> {
    if samples.dim() != 1 {
        return Err(Error::InvalidParameter(format!(
            "one-dimensional pipeline requires d = 1, got d = {}",
            samples.dim()
        )));
    }
    let coef = rf_loc_pol_coefficients(samples, &[1.0], q, lambda, params)?;
    let n = samples.n();
    let mut table = Array2::zeros((n, q));
    for k in 1..=q {
        table.column_mut(k - 1).assign(&coef.derivative(k)?);
    }
    crate::data::DerivativeField::one_dimensional(table)
}
