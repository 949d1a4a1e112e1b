//! Real spherical harmonics of a unit direction, bands `0..degree`.

use super::Real;

/// Number of coefficients for `degree` bands.
pub const fn sh_len(degree: usize) -> usize {
    degree * degree
}

/// Writes `degree²` coefficients into `out`. Supports degree 1 to 4.
pub fn sh_encode<T: Real>(degree: usize, d: [T; 3], out: &mut [T]) {
    assert!((1..=4).contains(&degree), "sh degree {degree} unsupported");
    let c = |v: f64| T::from_f64(v).unwrap();
    let [x, y, z] = d;
    out[0] = c(0.28209479177387814);
    if degree == 1 {
        return;
    }
    out[1] = c(-0.48860251190291987) * y;
    out[2] = c(0.48860251190291987) * z;
    out[3] = c(-0.48860251190291987) * x;
    if degree == 2 {
        return;
    }
    let (x2, y2, z2) = (x * x, y * y, z * z);
    out[4] = c(1.0925484305920792) * x * y;
    out[5] = c(-1.0925484305920792) * y * z;
    out[6] = c(0.94617469575755997) * z2 - c(0.31539156525251999);
    out[7] = c(-1.0925484305920792) * x * z;
    out[8] = c(0.54627421529603959) * (x2 - y2);
    if degree == 3 {
        return;
    }
    out[9] = c(0.59004358992664352) * y * (y2 - c(3.0) * x2);
    out[10] = c(2.8906114426405538) * x * y * z;
    out[11] = c(0.45704579946446572) * y * (T::one() - c(5.0) * z2);
    out[12] = c(0.3731763325901154) * z * (c(5.0) * z2 - c(3.0));
    out[13] = c(0.45704579946446572) * x * (T::one() - c(5.0) * z2);
    out[14] = c(1.4453057213202769) * z * (x2 - y2);
    out[15] = c(0.59004358992664352) * x * (c(3.0) * y2 - x2);
}
