//! Globally adaptive Gauss-Kronrod (7, 15) quadrature of vector-valued integrands.

use nalgebra::DVector;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
/// Gauss weights for the nodes `XGK[1], XGK[3], XGK[5], XGK[7]`.
const WG: [f64; 4] = [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

const MAX_INTERVALS: usize = 4000;

struct Piece {
    a: f64,
    b: f64,
    value: DVector<f64>,
    error: f64,
}

fn gk15<F>(f: &mut F, a: f64, b: f64) -> Result<Piece>
where
    F: FnMut(f64) -> Result<DVector<f64>>,
{
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c)?;
    let mut kronrod = &fc * WGK[7];
    let mut gauss = &fc * WG[3];
    for (k, &x) in XGK.iter().take(7).enumerate() {
        let pair = f(c - h * x)? + f(c + h * x)?;
        kronrod += &pair * WGK[k];
        if k % 2 == 1 {
            gauss += &pair * WG[k / 2];
        }
    }
    let error = ((&kronrod - &gauss) * h).amax();
    Ok(Piece { a, b, value: kronrod * h, error })
}

/// Integral of `f` over `[a, b]` to absolute tolerance `abs_tol` (max norm).
///
/// Errors of `f` abort the integration and are returned unchanged.
pub fn integrate_vector<F>(mut f: F, a: f64, b: f64, abs_tol: f64) -> Result<DVector<f64>>
where
    F: FnMut(f64) -> Result<DVector<f64>>,
{
    let mut pieces = vec![gk15(&mut f, a, b)?];
    loop {
        let total_err: f64 = pieces.iter().map(|p| p.error).sum();
        if total_err <= abs_tol {
            break;
        }
        if pieces.len() >= MAX_INTERVALS {
            return Err(Error::Degenerate(format!("quadrature did not converge (error estimate {total_err:e})")));
        }
        let worst = pieces
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .map(|(i, _)| i)
            .expect("at least one interval");
        let p = pieces.swap_remove(worst);
        let mid = 0.5 * (p.a + p.b);
        pieces.push(gk15(&mut f, p.a, mid)?);
        pieces.push(gk15(&mut f, mid, p.b)?);
    }
    let mut sum = DVector::zeros(pieces[0].value.len());
    for p in &pieces {
        sum += &p.value;
    }
    Ok(sum)
}

/// Scalar convenience wrapper around [`integrate_vector`].
pub fn integrate_scalar<F>(mut f: F, a: f64, b: f64, abs_tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    integrate_vector(|x| Ok(DVector::from_element(1, f(x)?)), a, b, abs_tol).map(|v| v[0])
}
