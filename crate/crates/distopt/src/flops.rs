//! Deterministic floating-point operation counting.
//!
//! Every objective evaluation and algorithm update adds a flop estimate to a
//! [`Flops`] meter using the standard dense-kernel formulas below. The counts
//! depend only on problem sizes and the iteration trajectory, never on the
//! hardware or wall clock, so they serve as the reproducible compute proxy
//! `t_cp` next to the measured processor time.

/// Flop accumulator. A multiply-add counts as two flops.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct Flops {
    count: u64,
}

impl Flops {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    #[inline]
    pub fn add(&mut self, n: u64) {
        self.count += n;
    }

    /// y += a*x on vectors of length `n`.
    #[inline]
    pub fn axpy(&mut self, n: usize) {
        self.count += 2 * n as u64;
    }

    #[inline]
    pub fn dot(&mut self, n: usize) {
        self.count += 2 * n as u64;
    }

    #[inline]
    pub fn scale(&mut self, n: usize) {
        self.count += n as u64;
    }

    /// Dense matrix-vector product, `m x n`.
    #[inline]
    pub fn matvec(&mut self, m: usize, n: usize) {
        self.count += 2 * (m as u64) * (n as u64);
    }

    /// Dense matrix-matrix product, `(m x k) * (k x n)`.
    #[inline]
    pub fn matmul(&mut self, m: usize, k: usize, n: usize) {
        self.count += 2 * (m as u64) * (k as u64) * (n as u64);
    }

    /// Cholesky factorization of an `n x n` SPD matrix: n^3/3.
    #[inline]
    pub fn cholesky(&mut self, n: usize) {
        self.count += (n as u64).pow(3) / 3;
    }

    /// LU factorization of an `n x n` matrix: 2n^3/3.
    #[inline]
    pub fn lu(&mut self, n: usize) {
        self.count += 2 * (n as u64).pow(3) / 3;
    }

    /// One triangular solve with an `n x n` factor.
    #[inline]
    pub fn trisolve(&mut self, n: usize) {
        self.count += (n as u64).pow(2);
    }

    /// Forward + backward substitution through a factored `n x n` system.
    #[inline]
    pub fn factored_solve(&mut self, n: usize) {
        self.count += 2 * (n as u64).pow(2);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_accumulate() {
        let mut f = Flops::new();
        f.matvec(4, 8);
        f.axpy(8);
        f.cholesky(6);
        assert_eq!(f.count(), 64 + 16 + 72);
    }
}
