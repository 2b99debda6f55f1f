use crate::error::{Error, Result};

fn log2_bucket(value: f64, buckets: usize, what: &str) -> Result<u32> {
    if !(value >= 0.0) || !value.is_finite() {
        return Err(Error::Validation(format!(
            "{what} must be a finite non-negative number, got {value}"
        )));
    }
    if buckets < 3 {
        return Err(Error::Validation(format!(
            "bucket count must be >= 3, got {buckets}"
        )));
    }
    let level = (1.0 + value).log2().floor() as usize;
    Ok(1 + level.min(buckets - 2) as u32)
}

/// Maps a payment amount to `1 + min(floor(log2(1 + amount)), B - 2)`.
///
/// Monotone non-decreasing in `amount` and never returns PAD.
pub fn bucketize_amount(amount: f64, buckets: usize) -> Result<u32> {
    log2_bucket(amount, buckets, "amount")
}

/// The same base-2 bucketing applied to the gap (in minutes) between
/// consecutive events.
pub fn bucketize_gap(minutes: f64, buckets: usize) -> Result<u32> {
    log2_bucket(minutes, buckets, "time gap")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_amounts() {
        assert_eq!(bucketize_amount(0.0, 16).unwrap(), 1);
        assert_eq!(bucketize_amount(1.0, 16).unwrap(), 2);
        assert_eq!(bucketize_amount(1e9, 16).unwrap(), 15);
    }

    #[test]
    fn rejects_invalid_input() {
        assert!(bucketize_amount(-0.01, 16).is_err());
        assert!(bucketize_amount(f64::NAN, 16).is_err());
        assert!(bucketize_amount(1.0, 2).is_err());
    }

    proptest! {
        #[test]
        fn monotone_and_in_range(a in 0.0f64..1e12, b in 0.0f64..1e12, buckets in 3usize..40) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let tl = bucketize_amount(lo, buckets).unwrap();
            let th = bucketize_amount(hi, buckets).unwrap();
            prop_assert!(tl <= th);
            prop_assert!(tl >= 1 && (th as usize) < buckets);
        }
    }
}
