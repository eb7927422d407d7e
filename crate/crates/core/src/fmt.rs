/// Formats a float with 17 significant digits so that parsing it back yields
/// the same bits.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn parse_f64(s: &str) -> Option<f64> {
    s.trim().parse().ok()
}

/// Lowercase hex, zero-padded to cover `bits` bits.
pub(crate) fn hex_bits(value: u64, bits: u32) -> String {
    let width = bits.div_ceil(4).max(1) as usize;
    format!("{value:0width$x}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_awkward_values() {
        for x in [0.0, -0.0, 0.1, 1.0 / 3.0, 1e-300, 6.02214076e23, f64::MAX] {
            let back = parse_f64(&format_f64(x)).unwrap();
            assert_eq!(back.to_bits(), x.to_bits());
        }
    }

    #[test]
    fn hex_width() {
        assert_eq!(hex_bits(0x3, 2), "3");
        assert_eq!(hex_bits(0x3, 16), "0003");
        assert_eq!(hex_bits(0xabc, 32), "00000abc");
    }
}
