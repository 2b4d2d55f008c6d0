//! Running sufficient statistics for least-squares polynomial fits.
//!
//! Split search slides a threshold through a node; the residual sum of
//! squares of a degree-p fit on each side only needs power sums of the
//! projection and its products with the response, so both children can be
//! scored in O(1) per candidate after a single pass.

/// Highest polynomial degree the fixed-size accumulators support.
pub const MAX_FIT_DEGREE: usize = 8;

const TP_LEN: usize = 2 * MAX_FIT_DEGREE + 1;
const TY_LEN: usize = MAX_FIT_DEGREE + 1;
const MAT_LEN: usize = TY_LEN * TY_LEN;

/// Power sums of (t, y) pairs sufficient for polynomial RSS up to `degree`.
#[derive(Debug, Clone, Copy)]
pub struct PowerSums {
    degree: usize,
    count: usize,
    y_sq: f64,
    /// ty[a] = sum of y * t^a for a = 0..=degree.
    ty: [f64; TY_LEN],
    /// tp[a] = sum of t^a for a = 0..=2*degree.
    tp: [f64; TP_LEN],
}

impl PowerSums {
    pub fn new(degree: usize) -> Self {
        assert!(degree <= MAX_FIT_DEGREE, "fit degree {degree} exceeds cap");
        Self {
            degree,
            count: 0,
            y_sq: 0.0,
            ty: [0.0; TY_LEN],
            tp: [0.0; TP_LEN],
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn add(&mut self, t: f64, y: f64) {
        self.count += 1;
        self.y_sq += y * y;
        let mut p = 1.0;
        for a in 0..=self.degree {
            self.ty[a] += y * p;
            p *= t;
        }
        let mut p = 1.0;
        for a in 0..=2 * self.degree {
            self.tp[a] += p;
            p *= t;
        }
    }

    /// Writes `self - other` into `out` (the complementary child).
    pub fn complement_into(&self, other: &Self, out: &mut Self) {
        out.degree = self.degree;
        out.count = self.count - other.count;
        out.y_sq = self.y_sq - other.y_sq;
        for a in 0..=self.degree {
            out.ty[a] = self.ty[a] - other.ty[a];
        }
        for a in 0..=2 * self.degree {
            out.tp[a] = self.tp[a] - other.tp[a];
        }
    }

    /// Residual sum of squares of the best least-squares polynomial fit.
    ///
    /// The fit degree starts at `min(degree, count - 1)` and drops whenever
    /// the normal equations are numerically rank deficient, down to the
    /// mean fit at degree zero.
    pub fn rss(&self) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        let start = self.degree.min(self.count - 1);
        for deg in (1..=start).rev() {
            if let Some(rss) = self.try_rss_at(deg) {
                return rss;
            }
        }
        // Mean fit.
        let mean_term = self.ty[0] * self.ty[0] / self.count as f64;
        (self.y_sq - mean_term).max(0.0)
    }

    fn try_rss_at(&self, deg: usize) -> Option<f64> {
        let dim = deg + 1;
        let mut mat = [0.0; MAT_LEN];
        for a in 0..dim {
            for b in 0..dim {
                mat[a * dim + b] = self.tp[a + b];
            }
        }
        let mut rhs = [0.0; TY_LEN];
        rhs[..dim].copy_from_slice(&self.ty[..dim]);
        if !cholesky_solve(&mut mat, &mut rhs, dim) {
            return None;
        }
        let mut explained = 0.0;
        for (coef, moment) in rhs[..dim].iter().zip(&self.ty[..dim]) {
            explained += coef * moment;
        }
        Some((self.y_sq - explained).max(0.0))
    }
}

/// In-place Cholesky solve of a symmetric system; returns false when a
/// pivot falls below the relative tolerance (rank deficiency).
fn cholesky_solve(mat: &mut [f64], rhs: &mut [f64], dim: usize) -> bool {
    let mut max_diag = 0.0f64;
    for j in 0..dim {
        max_diag = max_diag.max(mat[j * dim + j].abs());
    }
    let tol = max_diag * 1e-10;
    for j in 0..dim {
        let mut pivot = mat[j * dim + j];
        for k in 0..j {
            pivot -= mat[j * dim + k] * mat[j * dim + k];
        }
        if pivot <= tol {
            return false;
        }
        let pivot = pivot.sqrt();
        mat[j * dim + j] = pivot;
        for i in (j + 1)..dim {
            let mut v = mat[i * dim + j];
            for k in 0..j {
                v -= mat[i * dim + k] * mat[j * dim + k];
            }
            mat[i * dim + j] = v / pivot;
        }
    }
    // Forward substitution L z = rhs.
    for i in 0..dim {
        let mut v = rhs[i];
        for k in 0..i {
            v -= mat[i * dim + k] * rhs[k];
        }
        rhs[i] = v / mat[i * dim + i];
    }
    // Back substitution L^T x = z.
    for i in (0..dim).rev() {
        let mut v = rhs[i];
        for k in (i + 1)..dim {
            v -= mat[k * dim + i] * rhs[k];
        }
        rhs[i] = v / mat[i * dim + i];
    }
    true
}
