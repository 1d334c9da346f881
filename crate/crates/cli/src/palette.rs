//! Fixed color table for label maps.
//!
//! Entry `i` spreads the bits of `i` over the three channels, most
//! significant bit first: bit 0 feeds red, bit 1 green, bit 2 blue, then the
//! next three bits the next lower bit of each channel, and so on. Class 0 is
//! black, 1 is (128,0,0), 2 is (0,128,0), 3 is (128,128,0), 4 is (0,0,128).
//! The ignore label 255 is (224,224,192).

pub fn color(index: u8) -> [u8; 3] {
    let mut rgb = [0u8; 3];
    let mut c = index;
    for j in 0..8 {
        for (ch, v) in rgb.iter_mut().enumerate() {
            *v |= ((c >> ch) & 1) << (7 - j);
        }
        c >>= 3;
    }
    rgb
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_entries() {
        assert_eq!(color(0), [0, 0, 0]);
        assert_eq!(color(1), [128, 0, 0]);
        assert_eq!(color(2), [0, 128, 0]);
        assert_eq!(color(3), [128, 128, 0]);
        assert_eq!(color(4), [0, 0, 128]);
        assert_eq!(color(255), [224, 224, 192]);
    }

    #[test]
    fn distinct() {
        let all: std::collections::BTreeSet<[u8; 3]> = (0..=255).map(color).collect();
        assert_eq!(all.len(), 256);
    }
}
