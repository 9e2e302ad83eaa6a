//! Contiguous chunk plans: how a buffer of `c_buf` elements is divided
//! among `n` communicator members.
//!
//! The remainder is distributed one element each to the lowest member
//! indexes, so chunk counts differ by at most 1 and are nonincreasing.

/// Per-member chunk counts and displacements over a contiguous buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkPlan {
    counts: Vec<usize>,
    displs: Vec<usize>,
    base_chunk: usize,
}

impl ChunkPlan {
    /// Divide `c_buf` elements among `n` members, remainder-first.
    ///
    /// `n` must be at least 1. A zero `c_buf` yields an all-zero plan;
    /// when `c_buf < n` the trailing chunks are zero-length.
    pub fn new(c_buf: usize, n: usize) -> Self {
        assert!(n >= 1, "chunk plan needs at least one member");
        let base_chunk = c_buf / n;
        let remainder = c_buf % n;
        let mut counts = vec![base_chunk; n];
        for c in counts.iter_mut().take(remainder) {
            *c += 1;
        }
        let mut displs = Vec::with_capacity(n);
        let mut at = 0;
        for &c in &counts {
            displs.push(at);
            at += c;
        }
        Self { counts, displs, base_chunk }
    }

    pub fn members(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn displs(&self) -> &[usize] {
        &self.displs
    }

    pub fn count(&self, member: usize) -> usize {
        self.counts[member]
    }

    pub fn displ(&self, member: usize) -> usize {
        self.displs[member]
    }

    /// `c_buf / n` before remainder distribution.
    pub fn base_chunk(&self) -> usize {
        self.base_chunk
    }

    /// Total elements covered by the plan.
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}
