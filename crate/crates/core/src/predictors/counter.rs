/// An unsigned saturating counter of 1 to 7 bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SaturatingCounter {
    value: u8,
    width: u8,
}

impl SaturatingCounter {
    pub fn new(width: u8, value: u8) -> Self {
        assert!((1..=7).contains(&width), "counter width {width} out of range");
        let max = (1u8 << width) - 1;
        SaturatingCounter { value: value.min(max), width }
    }

    /// Weakest not-taken state, one below the midpoint.
    pub fn weak_not_taken(width: u8) -> Self {
        SaturatingCounter::new(width, (1 << (width - 1)) - 1)
    }

    pub fn weak_taken(width: u8) -> Self {
        SaturatingCounter::new(width, 1 << (width - 1))
    }

    pub fn weak(width: u8, taken: bool) -> Self {
        if taken {
            Self::weak_taken(width)
        } else {
            Self::weak_not_taken(width)
        }
    }

    pub fn value(self) -> u8 {
        self.value
    }

    pub fn width(self) -> u8 {
        self.width
    }

    pub fn max(self) -> u8 {
        (1 << self.width) - 1
    }

    pub fn taken(self) -> bool {
        self.value >= 1 << (self.width - 1)
    }

    pub fn is_weak(self) -> bool {
        let mid = 1 << (self.width - 1);
        self.value == mid || self.value + 1 == mid
    }

    pub fn is_saturated(self) -> bool {
        self.value == 0 || self.value == self.max()
    }

    /// Distance from the decision boundary, scaled to `0..=3`.
    pub fn confidence(self) -> u8 {
        let mid = 1i16 << (self.width - 1);
        let v = i16::from(self.value);
        let dist = if v >= mid { v - mid } else { mid - 1 - v };
        let span = mid - 1;
        if span == 0 {
            return 3;
        }
        ((dist * 3 + span / 2) / span) as u8
    }

    pub fn increment(&mut self) {
        if self.value < self.max() {
            self.value += 1;
        }
    }

    pub fn decrement(&mut self) {
        self.value = self.value.saturating_sub(1);
    }

    pub fn train(&mut self, taken: bool) {
        if taken {
            self.increment()
        } else {
            self.decrement()
        }
    }

    pub fn in_bounds(self) -> bool {
        self.value <= self.max()
    }
}

/// Adds `delta` to a signed weight of `bits` bits, clamping to its range.
pub(crate) fn clamp_add(w: i16, delta: i16, bits: u8) -> i16 {
    let hi = (1i16 << (bits - 1)) - 1;
    let lo = -(1i16 << (bits - 1));
    (w + delta).clamp(lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_bit_weak_not_taken_to_taken() {
        let mut c = SaturatingCounter::weak_not_taken(2);
        assert_eq!(c.value(), 1);
        assert!(!c.taken());
        c.train(true);
        assert_eq!(c.value(), 2);
        assert!(c.taken());
    }

    #[test]
    fn saturates_both_ends() {
        let mut c = SaturatingCounter::new(3, 7);
        c.increment();
        assert_eq!(c.value(), 7);
        let mut c = SaturatingCounter::new(3, 0);
        c.decrement();
        assert_eq!(c.value(), 0);
    }

    #[test]
    fn confidence_scale() {
        let conf: Vec<u8> = (0..8).map(|v| SaturatingCounter::new(3, v).confidence()).collect();
        assert_eq!(conf, vec![3, 2, 1, 0, 0, 1, 2, 3]);
        let conf: Vec<u8> = (0..4).map(|v| SaturatingCounter::new(2, v).confidence()).collect();
        assert_eq!(conf, vec![3, 0, 0, 3]);
        assert!(SaturatingCounter::new(3, 3).is_weak());
        assert!(SaturatingCounter::new(3, 4).is_weak());
        assert!(!SaturatingCounter::new(3, 5).is_weak());
    }

    #[test]
    fn clamp_add_bounds() {
        assert_eq!(clamp_add(127, 1, 8), 127);
        assert_eq!(clamp_add(-128, -1, 8), -128);
        assert_eq!(clamp_add(31, 1, 6), 31);
    }
}
