/// Validity bitmap: one bit per row, LSB-first within each byte. A set bit
/// means the value is present.
#[derive(Clone, PartialEq, Eq, Default)]
pub struct Bitmap {
    bytes: Vec<u8>,
    len: usize,
}

impl Bitmap {
    pub fn new_valid(len: usize) -> Self {
        let mut bytes = vec![0xFF; len.div_ceil(8)];
        if !len.is_multiple_of(8) {
            if let Some(last) = bytes.last_mut() {
                *last = (1u8 << (len % 8)) - 1;
            }
        }
        Self { bytes, len }
    }

    pub fn new_null(len: usize) -> Self {
        Self {
            bytes: vec![0; len.div_ceil(8)],
            len,
        }
    }

    pub fn with_capacity(cap: usize) -> Self {
        Self {
            bytes: Vec::with_capacity(cap.div_ceil(8)),
            len: 0,
        }
    }

    /// Takes raw LSB-first bytes; bits past `len` are cleared.
    pub fn from_bytes(mut bytes: Vec<u8>, len: usize) -> Self {
        bytes.resize(len.div_ceil(8), 0);
        if !len.is_multiple_of(8) {
            if let Some(last) = bytes.last_mut() {
                *last &= (1u8 << (len % 8)) - 1;
            }
        }
        Self { bytes, len }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        self.bytes[i >> 3] & (1 << (i & 7)) != 0
    }

    #[inline]
    pub fn set(&mut self, i: usize, valid: bool) {
        let mask = 1 << (i & 7);
        if valid {
            self.bytes[i >> 3] |= mask;
        } else {
            self.bytes[i >> 3] &= !mask;
        }
    }

    #[inline]
    pub fn push(&mut self, valid: bool) {
        if self.len.is_multiple_of(8) {
            self.bytes.push(0);
        }
        if valid {
            self.bytes[self.len >> 3] |= 1 << (self.len & 7);
        }
        self.len += 1;
    }

    pub fn count_valid(&self) -> usize {
        self.bytes.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn count_null(&self) -> usize {
        self.len - self.count_valid()
    }

    pub fn all_valid(&self) -> bool {
        self.count_valid() == self.len
    }

    pub fn extend_from(&mut self, other: &Bitmap) {
        if self.len.is_multiple_of(8) {
            self.bytes.extend_from_slice(&other.bytes);
            self.len += other.len;
        } else {
            for i in 0..other.len {
                self.push(other.get(i));
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }
}

impl std::fmt::Debug for Bitmap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Bitmap[")?;
        for v in self.iter() {
            f.write_str(if v { "1" } else { "0" })?;
        }
        write!(f, "]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lsb_first_layout() {
        let mut b = Bitmap::default();
        for v in [true, false, true, true, false, false, false, false, true] {
            b.push(v);
        }
        assert_eq!(b.as_bytes(), &[0b0000_1101, 0b0000_0001]);
        assert_eq!(b.count_valid(), 4);
        assert_eq!(b.count_null(), 5);
    }

    #[test]
    fn valid_constructor_clears_tail() {
        let b = Bitmap::new_valid(10);
        assert_eq!(b.as_bytes(), &[0xFF, 0b11]);
        assert!(b.all_valid());
        assert!(Bitmap::new_valid(0).all_valid());
    }

    #[test]
    fn extend_unaligned() {
        let mut a = Bitmap::default();
        a.push(true);
        a.push(false);
        a.push(true);
        let mut c = a.clone();
        c.extend_from(&Bitmap::new_null(9));
        c.extend_from(&Bitmap::new_valid(2));
        let bits: Vec<bool> = c.iter().collect();
        let mut expect = vec![true, false, true];
        expect.extend([false; 9]);
        expect.extend([true; 2]);
        assert_eq!(bits, expect);
    }
}
