use std::collections::VecDeque;

/// Default number of path-history entries.
pub const PATH_ENTRIES: usize = 32;

/// Global direction history plus path history.
///
/// Direction bits are stored most recent first. The 64 most recent bits are
/// also mirrored in a `u64` (bit 0 = most recent) for cheap short windows.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GlobalHistory {
    bits: VecDeque<bool>,
    capacity: usize,
    recent: u64,
    path: VecDeque<u16>,
    path_capacity: usize,
    path_bits: u32,
}

impl GlobalHistory {
    pub fn new(capacity: usize) -> Self {
        Self::with_path(capacity, PATH_ENTRIES)
    }

    pub fn with_path(capacity: usize, path_capacity: usize) -> Self {
        GlobalHistory {
            bits: VecDeque::with_capacity(capacity + 1),
            capacity,
            recent: 0,
            path: VecDeque::with_capacity(path_capacity + 1),
            path_capacity,
            path_bits: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Bit at age `j` (0 = most recent). Bits not yet recorded read as
    /// not-taken.
    pub fn get(&self, j: usize) -> bool {
        self.bits.get(j).copied().unwrap_or(false)
    }

    /// The 64 most recent direction bits, bit 0 most recent.
    pub fn recent(&self) -> u64 {
        self.recent
    }

    pub fn push_direction(&mut self, taken: bool) {
        self.recent = (self.recent << 1) | u64::from(taken);
        if self.capacity == 0 {
            return;
        }
        self.bits.push_front(taken);
        if self.bits.len() > self.capacity {
            self.bits.pop_back();
        }
    }

    pub fn push_path(&mut self, ip: u64) {
        self.path_bits = (self.path_bits << 1) | ((ip >> 2) & 1) as u32;
        if self.path_capacity == 0 {
            return;
        }
        self.path.push_front(ip as u16);
        if self.path.len() > self.path_capacity {
            self.path.pop_back();
        }
    }

    /// Recent ip low bits, most recent first.
    pub fn path(&self) -> impl Iterator<Item = u16> + '_ {
        self.path.iter().copied()
    }

    /// One bit per retired branch (ip bit 2), bit 0 most recent.
    pub fn path_bits(&self) -> u32 {
        self.path_bits
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        self.bits.iter().copied()
    }
}

/// Folds the first `len` history bits into a `width`-bit value.
///
/// The bits are cut into consecutive chunks of `width` (the first bit of each
/// chunk lands in the most significant position, the last chunk is
/// zero-padded) and the chunks are XORed together.
pub fn fold_history<I: IntoIterator<Item = bool>>(bits: I, len: usize, width: u32) -> u64 {
    assert!((1..=64).contains(&width));
    let w = width as usize;
    let mut out = 0u64;
    for (j, b) in bits.into_iter().take(len).enumerate() {
        if b {
            out ^= 1 << (w - 1 - j % w);
        }
    }
    out
}

/// Incrementally maintained [`fold_history`] of a fixed `(len, width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FoldedHistory {
    value: u32,
    len: usize,
    width: u32,
    out_pos: u32,
}

impl FoldedHistory {
    pub fn new(len: usize, width: u32) -> Self {
        assert!((1..=31).contains(&width));
        FoldedHistory { value: 0, len, width, out_pos: width - 1 - (len % width as usize) as u32 }
    }

    pub fn value(&self) -> u32 {
        self.value
    }

    /// Shifts in `new_bit`; `outgoing` is the bit that was at age `len - 1`
    /// before the shift.
    pub fn push(&mut self, new_bit: bool, outgoing: bool) {
        if self.len == 0 {
            return;
        }
        let w = self.width;
        let mask = (1u32 << w) - 1;
        let v = self.value;
        let mut v = ((v >> 1) | ((v & 1) << (w - 1))) & mask;
        v ^= u32::from(new_bit) << (w - 1);
        v ^= u32::from(outgoing) << self.out_pos;
        self.value = v;
    }
}
