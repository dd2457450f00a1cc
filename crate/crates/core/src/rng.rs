//! Counter-based random streams.
//!
//! Every draw comes from a stream addressed by `(seed, stream id, word
//! position)`. Independent consumers use distinct stream ids, and the word
//! position is the cursor saved in checkpoints.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

/// Well-known stream ids.
pub mod ids {
    pub const DATA: u64 = 1;
    pub const PRIOR: u64 = 2;
    pub const POSTERIOR_NOISE: u64 = 3;
    pub const LIKELIHOOD_NOISE: u64 = 4;
    pub const SPLIT: u64 = 8;
    pub const PRIOR_BANK: u64 = 9;
    pub const EVAL_PRIOR: u64 = 10;
    pub const SYNTHETIC: u64 = 11;
    /// Parameter initialization uses `INIT + k` for the k-th network.
    pub const INIT: u64 = 32;
}

#[derive(Clone, Debug)]
pub struct Stream {
    seed: u64,
    id: u64,
    rng: ChaCha8Rng,
}

/// Serializable position of a [`Stream`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamCursor {
    pub seed: u64,
    pub stream: u64,
    /// ChaCha word position, as a decimal string (u128 does not survive JSON numbers).
    pub word_pos: String,
}

impl Stream {
    pub fn new(seed: u64, id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id);
        Self { seed, id, rng }
    }

    pub fn cursor(&self) -> StreamCursor {
        StreamCursor {
            seed: self.seed,
            stream: self.id,
            word_pos: self.rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(cursor: &StreamCursor) -> Result<Self, std::num::ParseIntError> {
        let pos: u128 = cursor.word_pos.parse()?;
        let mut s = Self::new(cursor.seed, cursor.stream);
        s.rng.set_word_pos(pos);
        Ok(s)
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform on the open interval (0, 1).
    pub fn uniform_open(&mut self) -> f64 {
        loop {
            let u: f64 = self.rng.random();
            if u > 0.0 {
                return u;
            }
        }
    }

    /// Uniform integer in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn normal_tensor(&mut self, rows: usize, cols: usize) -> Tensor {
        let data = (0..rows * cols).map(|_| self.standard_normal()).collect();
        Tensor::matrix(rows, cols, data).expect("rows * cols")
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Fisher-Yates shuffle of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.index(i + 1);
            idx.swap(i, j);
        }
        idx
    }
}
