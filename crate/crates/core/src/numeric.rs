//! Small floating-point helpers shared by the probability code.

/// Neumaier-compensated sum. Summation order is the iteration order, so the
/// result is reproducible bit-for-bit for a fixed input sequence.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0_f64;
    let mut carry = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

/// `x * ln(x / y)` with the `0 * ln 0 = 0` convention.
pub fn xlogy_ratio(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * (x / y).ln()
    }
}
