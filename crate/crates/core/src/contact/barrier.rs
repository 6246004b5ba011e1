use crate::error::{Error, Result};

/// Clamped log barrier `b(d) = −(d − d̂)² ln(d / d̂)` for `0 < d < d̂`, zero
/// otherwise. Returns `(b, b′, b″)`.
pub fn barrier_1d(d: f64, dhat: f64) -> Result<(f64, f64, f64)> {
    if !(dhat > 0.0) {
        return Err(Error::InvalidArgument(format!("barrier threshold {dhat} must be positive")));
    }
    if !(d > 0.0) {
        return Err(Error::Penetration(format!("barrier evaluated at distance {d:e}")));
    }
    if d >= dhat {
        return Ok((0.0, 0.0, 0.0));
    }
    let r = d - dhat;
    let l = (d / dhat).ln();
    let b = -r * r * l;
    let db = -2.0 * r * l - r * r / d;
    let ddb = -2.0 * l - 4.0 * r / d + r * r / (d * d);
    Ok((b, db, ddb))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamped_outside_threshold() {
        assert_eq!(barrier_1d(1.0, 1.0).unwrap(), (0.0, 0.0, 0.0));
        assert_eq!(barrier_1d(2.0, 1.0).unwrap(), (0.0, 0.0, 0.0));
        assert!(barrier_1d(0.0, 1.0).is_err());
        assert!(barrier_1d(-1.0, 1.0).is_err());
    }

    #[test]
    fn half_threshold_value_and_derivatives() {
        let dhat = 0.02;
        let (b, db, ddb) = barrier_1d(dhat / 2.0, dhat).unwrap();
        let expect = 2f64.ln() / 4.0 * dhat * dhat;
        assert!((b - expect).abs() < 1e-15 * expect.max(1.0));
        assert!((b - expect).abs() / expect < 1e-12);
        let eps = 1e-7 * dhat;
        let d = dhat / 2.0;
        let fd1 = (barrier_1d(d + eps, dhat).unwrap().0 - barrier_1d(d - eps, dhat).unwrap().0) / (2.0 * eps);
        let fd2 = (barrier_1d(d + eps, dhat).unwrap().1 - barrier_1d(d - eps, dhat).unwrap().1) / (2.0 * eps);
        assert!((fd1 - db).abs() < 1e-6 * db.abs());
        assert!((fd2 - ddb).abs() < 1e-6 * ddb.abs());
    }

    #[test]
    fn smooth_clamp_near_threshold() {
        let dhat = 1.0;
        let (b, db, ddb) = barrier_1d(dhat * (1.0 - 1e-6), dhat).unwrap();
        assert!(b.abs() < 1e-17 && db.abs() < 1e-11 && ddb.abs() < 1e-5);
    }

    #[test]
    fn barrier_is_convex_and_decreasing() {
        for i in 1..100 {
            let (_, db, ddb) = barrier_1d(i as f64 * 0.01, 1.0).unwrap();
            assert!(db < 0.0 && ddb > 0.0);
        }
    }
}
