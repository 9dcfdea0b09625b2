//! IEEE 754 binary16 conversions (round-to-nearest-even, subnormals kept,
//! overflow to ±Inf).

#[inline]
pub fn f32_to_f16(x: f32) -> u16 {
    half::f16::from_f32(x).to_bits()
}

#[inline]
pub fn f16_to_f32(bits: u16) -> f32 {
    half::f16::from_bits(bits).to_f32()
}

/// Value after one trip through half precision.
#[inline]
pub fn round_trip(x: f32) -> f32 {
    f16_to_f32(f32_to_f16(x))
}
