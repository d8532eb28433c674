/// Binary selection over the hidden channels of a Gated-MLP.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    bits: Vec<bool>,
    popcount: usize,
}

impl Mask {
    pub fn from_fn(len: usize, mut f: impl FnMut(usize) -> bool) -> Self {
        let bits: Vec<bool> = (0..len).map(&mut f).collect();
        let popcount = bits.iter().filter(|&&b| b).count();
        Self { bits, popcount }
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        let popcount = bits.iter().filter(|&&b| b).count();
        Self { bits, popcount }
    }

    pub fn full(len: usize) -> Self {
        Self::from_bits(vec![true; len])
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn popcount(&self) -> usize {
        self.popcount
    }

    /// Fraction of channels switched off. An empty mask has sparsity 0.
    pub fn sparsity(&self) -> f64 {
        if self.bits.is_empty() {
            0.0
        } else {
            1.0 - self.popcount as f64 / self.bits.len() as f64
        }
    }

    #[inline]
    pub fn is_set(&self, j: usize) -> bool {
        self.bits[j]
    }

    pub fn as_bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn to_bits(&self) -> Vec<bool> {
        self.bits.clone()
    }

    /// Ascending indices of set channels.
    pub fn indices(&self) -> Vec<usize> {
        let mut idx = Vec::with_capacity(self.popcount);
        idx.extend(self.bits.iter().enumerate().filter_map(|(j, &b)| b.then_some(j)));
        idx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn popcount_and_sparsity() {
        let m = Mask::from_bits(vec![true, false, false, true]);
        assert_eq!(m.popcount(), 2);
        assert_eq!(m.sparsity(), 0.5);
        assert_eq!(m.indices(), vec![0, 3]);
        assert_eq!(Mask::full(3).sparsity(), 0.0);
        assert_eq!(Mask::from_bits(vec![]).sparsity(), 0.0);
    }
}
