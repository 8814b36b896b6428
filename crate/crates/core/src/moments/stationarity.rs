use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::augment::engine_form;
use super::recursion::Prepared;
use crate::error::MomentsError;
use crate::model::MparSpec;

/// Largest second-moment state dimension `(QG)^2` for which the one-cycle
/// map is materialized and its eigenvalues computed exactly. Larger models
/// use power iteration on the positive-semidefinite cone.
const DENSE_SECOND_ORDER_LIMIT: usize = 900;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    pub mean: bool,
    pub second_order: bool,
    pub spectral_radius_mean: f64,
    pub spectral_radius_second: f64,
}

/// Spectral radii of the one-cycle mean map and of the linear part of the
/// one-cycle second-moment map. Specs with `R > 0` are augmented first.
///
/// The second-moment map acts on the centred-free block `S` (rows and
/// columns 1..) of `M~` as `S -> B S B^T` followed by inflating the last
/// `G` diagonal entries by `1 + a`; its affine terms (intercepts, the
/// `b` and `c` dispersion terms) do not affect stability.
pub fn check_stationarity(spec: &MparSpec) -> Result<StationarityReport, MomentsError> {
    let prep = Prepared::new(&engine_form(spec)?)?;
    let spectral_radius_mean = prep.mean_radius();
    let spectral_radius_second = second_order_radius(&prep);
    let mean = spectral_radius_mean < 1.0;
    Ok(StationarityReport {
        mean,
        second_order: mean && spectral_radius_second < 1.0,
        spectral_radius_mean,
        spectral_radius_second,
    })
}

fn apply_cycle(prep: &Prepared, blocks: &[(DMatrix<f64>, Vec<f64>)], s: &DMatrix<f64>) -> DMatrix<f64> {
    let start = prep.last_block() - 1;
    let mut cur = s.clone();
    for (b, inflate) in blocks {
        cur = b * &cur * b.transpose();
        for (g, f) in inflate.iter().enumerate() {
            cur[(start + g, start + g)] *= f;
        }
    }
    cur
}

fn second_order_radius(prep: &Prepared) -> f64 {
    let n = prep.dim() - 1;
    let blocks: Vec<(DMatrix<f64>, Vec<f64>)> = (0..prep.period())
        .map(|t| {
            let b = prep.companions[t].data.view((1, 1), (n, n)).into_owned();
            let inflate = prep.dispersion[t].iter().map(|v| 1.0 + v.a).collect();
            (b, inflate)
        })
        .collect();

    if n * n <= DENSE_SECOND_ORDER_LIMIT {
        let size = n * n;
        let mut op = DMatrix::zeros(size, size);
        for col in 0..size {
            let mut e = DMatrix::zeros(n, n);
            e[(col % n, col / n)] = 1.0;
            let img = apply_cycle(prep, &blocks, &e);
            op.column_mut(col).copy_from_slice(img.as_slice());
        }
        return super::companion::spectral_radius(&op);
    }

    // The map preserves the PSD cone, so its spectral radius is attained
    // by a PSD eigenvector and the growth rate from the identity converges.
    let mut s = DMatrix::<f64>::identity(n, n);
    let mut rate = 0.0;
    for _ in 0..2000 {
        let next = apply_cycle(prep, &blocks, &s);
        let norm = next.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let new_rate = norm / s.norm();
        s = next / norm;
        if (new_rate - rate).abs() <= 1e-13 * new_rate.max(1e-300) {
            return new_rate;
        }
        rate = new_rate;
    }
    rate
}
