//! Direct solve for second moments when every variance function is linear
//! in the mean (`a = 0`).
//!
//! Over one cycle `M_t = Phi_t M_t Phi_t^T + Xi_t`. With column-stacking
//! `vec`, `vec(A B A^T) = (A kron A) vec(B)`, and since `M[0][0] = 1` is
//! known, the first unknown is dropped:
//!
//! ```text
//! vec(M)_{-1} = (I - (Phi kron Phi)_{-1,-1})^{-1} ((Phi kron Phi)_{-1,1} + vec(Xi)_{-1})
//! ```

use nalgebra::{DMatrix, DVector};

use super::companion::cycle_product;
use super::recursion::{symmetrize, Prepared};
use super::StackedMoments;
use crate::error::MomentsError;
use crate::model::MparSpec;

/// Number of unknowns `(1 + QG)^2 - 1` of the linear system for a spec.
pub fn linear_system_size(spec: &MparSpec) -> usize {
    let q = spec.obs_lags.max(1);
    let n = 1 + q * spec.units;
    n * n - 1
}

pub fn solve_linear_moments(spec: &MparSpec) -> Result<Vec<StackedMoments>, MomentsError> {
    let prep = Prepared::new(spec)?;
    Ok(solve_prepared(&prep)?.0)
}

/// 1-norm condition numbers of the per-phase linear systems (of the
/// augmented model when `R > 0`).
pub fn linear_condition_numbers(spec: &MparSpec) -> Result<Vec<f64>, MomentsError> {
    let prep = Prepared::new(&super::augment::engine_form(spec)?)?;
    Ok(solve_prepared(&prep)?.1)
}

pub(crate) fn solve_prepared(
    prep: &Prepared,
) -> Result<(Vec<StackedMoments>, Vec<f64>), MomentsError> {
    if !prep.linear_variance() {
        return Err(MomentsError::Precondition(
            "a linear mean-variance relationship (a = 0 for all units and phases)".into(),
        ));
    }
    let means = prep.means()?;
    let l = prep.period();
    let n = prep.dim();
    let mut out = Vec::with_capacity(l);
    let mut conditions = Vec::with_capacity(l);
    for t in 0..l {
        let xi = innovation_sum(prep, &means, t);
        let big = cycle_product(&prep.companions, t);
        let kron = big.kronecker(&big);
        let size = n * n - 1;
        let lhs = DMatrix::identity(size, size) - kron.view((1, 1), (size, size));
        let xi_vec = DVector::from_column_slice(xi.as_slice());
        let rhs = kron.view((1, 0), (size, 1)).column(0) + xi_vec.rows(1, size);
        let lu = lhs.clone().lu();
        let sol = lu
            .solve(&rhs)
            .ok_or_else(|| MomentsError::Singular(format!("second-moment system at phase {t}")))?;
        conditions.push(condition_1norm(&lhs, &lu));

        let mut vec_m = DVector::zeros(n * n);
        vec_m[0] = 1.0;
        vec_m.rows_mut(1, size).copy_from(&sol);
        let m = DMatrix::from_column_slice(n, n, vec_m.as_slice());
        out.push(StackedMoments { phase: t, m: symmetrize(m) });
    }
    Ok((out, conditions))
}

/// `Xi_t = D_t + sum_{i=1}^{L-1} phi_t..phi_{t-i+1} D_{t-i} phi_{t-i+1}^T..phi_t^T`
/// with `D_s = diag(b~_s * mu~_s + c~_s)`, accumulated by Horner's scheme.
fn innovation_sum(prep: &Prepared, means: &[DVector<f64>], t: usize) -> DMatrix<f64> {
    let l = prep.period();
    let n = prep.dim();
    let start = prep.last_block();
    let diag = |s: usize| -> DMatrix<f64> {
        let mut d = DMatrix::zeros(n, n);
        for (g, v) in prep.dispersion[s].iter().enumerate() {
            let i = start + g;
            d[(i, i)] = v.b * means[s][i] + v.c;
        }
        d
    };
    let first = (t + 1) % l; // phase t - L + 1
    let mut acc = diag(first);
    for i in 1..l {
        let s = (first + i) % l;
        let phi = &prep.companions[s].data;
        acc = phi * acc * phi.transpose() + diag(s);
    }
    acc
}

fn condition_1norm(a: &DMatrix<f64>, lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>) -> f64 {
    let norm1 = |m: &DMatrix<f64>| {
        m.column_iter()
            .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    };
    match lu.try_inverse() {
        Some(inv) => norm1(a) * norm1(&inv),
        None => f64::INFINITY,
    }
}
