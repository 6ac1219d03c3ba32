//! Small dense linear-algebra helpers that the rest of the crate (and its
//! test oracles) build on: a scaling-and-squaring matrix exponential and a
//! few norm utilities.

use ndarray::{Array2, ArrayView2};
use ndarray_linalg::{c64, Solve};

use crate::error::{Error, Result};

/// Maximum column-sum norm ‖A‖₁.
pub fn norm_1(a: &ArrayView2<c64>) -> f64 {
    let mut best = 0.0;
    for col in a.columns() {
        let s: f64 = col.iter().map(|z| z.norm()).sum();
        if s > best {
            best = s;
        }
    }
    best
}

/// Frobenius norm of the difference A − B.
pub fn diff_fro(a: &ArrayView2<c64>, b: &ArrayView2<c64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

// Padé approximant coefficients for e^A (Higham 2005), degrees 3..13.
const B3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const B5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const B7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const B9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const B13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

// ‖A‖₁ thresholds below which the Padé degree is accurate to double precision.
const THETA3: f64 = 1.495585217958292e-2;
const THETA5: f64 = 2.539398330063230e-1;
const THETA7: f64 = 9.504178996162932e-1;
const THETA9: f64 = 2.097847961257068;
const THETA13: f64 = 5.371920351148152;

fn eye(n: usize) -> Array2<c64> {
    Array2::eye(n)
}

/// Evaluate the [m/m] Padé approximant r(A) = q(A)⁻¹ p(A) given the even
/// powers of A and the coefficient table. U collects odd terms, V even ones:
/// p = V + U, q = V − U.
fn pade_low(a: &Array2<c64>, powers: &[&Array2<c64>], b: &[f64]) -> Result<Array2<c64>> {
    let n = a.nrows();
    // powers = [A², A⁴, ...] as needed by the degree
    let mut u = eye(n) * c64::new(b[1], 0.0);
    let mut v = eye(n) * c64::new(b[0], 0.0);
    for (k, p) in powers.iter().enumerate() {
        let odd = b[2 * k + 3];
        let even = b[2 * k + 2];
        u = u + p.mapv(|z| z * odd);
        v = v + p.mapv(|z| z * even);
    }
    let u = a.dot(&u);
    solve_pade(u, v)
}

fn solve_pade(u: Array2<c64>, v: Array2<c64>) -> Result<Array2<c64>> {
    use ndarray_linalg::Factorize;
    let q = &v - &u;
    let p = &v + &u;
    let n = p.nrows();
    let mut x = Array2::<c64>::zeros((n, n));
    // factor q once, then solve q·x = p column by column
    let lu = q
        .factorize()
        .map_err(|e| Error::Numerical(format!("Padé denominator is singular: {e}")))?;
    for (j, col) in p.columns().into_iter().enumerate() {
        let sol = lu
            .solve(&col.to_owned())
            .map_err(|e| Error::Numerical(format!("Padé solve failed: {e}")))?;
        x.column_mut(j).assign(&sol);
    }
    Ok(x)
}

/// Matrix exponential e^A by Padé approximation with scaling and squaring.
///
/// Standard Higham (2005) algorithm: pick the lowest Padé degree whose
/// accuracy bound covers ‖A‖₁, scaling A by 2⁻ˢ first if ‖A‖₁ exceeds the
/// degree-13 bound and squaring the result s times.
pub fn expm(a: &ArrayView2<c64>) -> Result<Array2<c64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: a.ncols(),
        });
    }
    if n == 0 {
        return Ok(Array2::zeros((0, 0)));
    }
    let a = a.to_owned();
    let nrm = norm_1(&a.view());

    if nrm <= THETA9 {
        let a2 = a.dot(&a);
        if nrm <= THETA3 {
            return pade_low(&a, &[&a2], &B3);
        }
        let a4 = a2.dot(&a2);
        if nrm <= THETA5 {
            return pade_low(&a, &[&a2, &a4], &B5);
        }
        let a6 = a4.dot(&a2);
        if nrm <= THETA7 {
            return pade_low(&a, &[&a2, &a4, &a6], &B7);
        }
        let a8 = a6.dot(&a2);
        return pade_low(&a, &[&a2, &a4, &a6, &a8], &B9);
    }

    // scale down, degree-13 Padé, square back up
    let s = ((nrm / THETA13).log2().ceil()).max(0.0) as i32;
    let scale = c64::new((0.5f64).powi(s), 0.0);
    let a = a.mapv(|z| z * scale);
    let a2 = a.dot(&a);
    let a4 = a2.dot(&a2);
    let a6 = a4.dot(&a2);

    let b = &B13;
    let u_inner = a6.mapv(|z| z * b[13]) + a4.mapv(|z| z * b[11]) + a2.mapv(|z| z * b[9]);
    let u_poly = a6.dot(&u_inner)
        + a6.mapv(|z| z * b[7])
        + a4.mapv(|z| z * b[5])
        + a2.mapv(|z| z * b[3])
        + eye(n) * c64::new(b[1], 0.0);
    let u = a.dot(&u_poly);
    let v_inner = a6.mapv(|z| z * b[12]) + a4.mapv(|z| z * b[10]) + a2.mapv(|z| z * b[8]);
    let v = a6.dot(&v_inner)
        + a6.mapv(|z| z * b[6])
        + a4.mapv(|z| z * b[4])
        + a2.mapv(|z| z * b[2])
        + eye(n) * c64::new(b[0], 0.0);

    let mut x = solve_pade(u, v)?;
    for _ in 0..s {
        x = x.dot(&x);
    }
    Ok(x)
}
