//! Exact decimal helpers. Money and prices carry six fractional digits and
//! round half-to-even at operation boundaries.

use rust_decimal::{Decimal, RoundingStrategy};

pub const MONEY_SCALE: u32 = 6;

/// Round to six fractional digits (half-even) and pin the scale, so that
/// `100` and `100.000000` serialize identically.
pub fn round6(value: Decimal) -> Decimal {
    let mut v = value.round_dp_with_strategy(MONEY_SCALE, RoundingStrategy::MidpointNearestEven);
    v.rescale(MONEY_SCALE);
    v
}

/// True when `value` needs no more than six fractional digits.
pub fn fits_scale(value: Decimal) -> bool {
    value.normalize().scale() <= MONEY_SCALE
}

#[cfg(test)]
mod tests {
    use super::*;
    use rust_decimal_macros::dec;

    #[test]
    fn half_even_rounding() {
        assert_eq!(round6(dec!(0.0000005)).to_string(), "0.000000");
        assert_eq!(round6(dec!(0.0000015)).to_string(), "0.000002");
        assert_eq!(round6(dec!(100)).to_string(), "100.000000");
    }

    #[test]
    fn scale_check() {
        assert!(fits_scale(dec!(1.123456)));
        assert!(fits_scale(dec!(1.1234560)));
        assert!(!fits_scale(dec!(1.1234567)));
    }
}
