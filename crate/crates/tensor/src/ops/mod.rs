//! Differentiable operations. Each submodule adds inherent methods to
//! [`crate::Tensor`].

pub mod conv;
mod elementwise;
pub mod norm;
mod reduce;
mod shape;
pub mod stft;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PadMode {
    #[default]
    Zeros,
    Reflect,
}

/// Maps a possibly out-of-range index onto `0..n` by mirror reflection
/// without repeating the edge sample (`-1 -> 1`, `n -> n - 2`). Pads longer
/// than the signal keep reflecting back and forth.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

#[cfg(test)]
mod tests {
    use super::reflect_index;

    #[test]
    fn reflection_matches_mirror_padding() {
        // [a b c d] reflect-padded by 3: d c b | a b c d | c b a
        let got: Vec<usize> = (-3..7).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(reflect_index(-5, 1), 0);
        // Longer than the signal: keeps bouncing.
        assert_eq!(reflect_index(-4, 3), 0);
        assert_eq!(reflect_index(6, 3), 2);
    }
}
