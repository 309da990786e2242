use ndarray::Array2;
use rand::seq::SliceRandom;

use crate::error::{MegError, Result};
use crate::nn::SampleBatch;
use crate::rng;

/// Per-epoch shuffle stream id space, keyed off the run seed.
const SHUFFLE_STREAM_BASE: u64 = 1 << 33;

/// Deterministic minibatch stream over a fixed dataset.
///
/// Each epoch visits every row once in an order derived from `(seed, epoch)`
/// alone, so a stream restored from `(epoch, cursor)` continues bitwise
/// identically regardless of how it got there.
#[derive(Debug, Clone)]
pub struct DataStream {
    data: Array2<f32>,
    seed: u64,
    order: Vec<u32>,
    cursor: usize,
    epoch: u64,
}

/// Resumable position of a [`DataStream`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamState {
    pub epoch: u64,
    pub cursor: u64,
}

fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<u32> {
    let mut order: Vec<u32> = (0..n as u32).collect();
    let mut rng = rng::stream(seed, SHUFFLE_STREAM_BASE + epoch);
    order.shuffle(&mut rng);
    order
}

impl DataStream {
    pub fn new(data: Array2<f32>, seed: u64) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(MegError::config("data stream needs at least one row"));
        }
        let order = epoch_order(data.nrows(), seed, 0);
        Ok(DataStream { data, seed, order, cursor: 0, epoch: 0 })
    }

    pub fn restore(data: Array2<f32>, seed: u64, state: StreamState) -> Result<Self> {
        if state.cursor as usize > data.nrows() {
            return Err(MegError::config(format!(
                "stream cursor {} out of range for {} rows",
                state.cursor,
                data.nrows()
            )));
        }
        let order = epoch_order(data.nrows(), seed, state.epoch);
        Ok(DataStream {
            data,
            seed,
            order,
            cursor: state.cursor as usize,
            epoch: state.epoch,
        })
    }

    pub fn data(&self) -> &Array2<f32> {
        &self.data
    }

    pub fn state(&self) -> StreamState {
        StreamState { epoch: self.epoch, cursor: self.cursor as u64 }
    }

    pub fn epochs_completed(&self) -> u64 {
        self.epoch
    }

    /// Next `m` rows, wrapping across epoch boundaries with a fresh shuffle.
    pub fn next_batch(&mut self, m: usize) -> Result<SampleBatch<f32>> {
        if m == 0 {
            return Err(MegError::config("batch size must be >= 1"));
        }
        let d = self.data.ncols();
        let mut batch = Array2::<f32>::zeros((m, d));
        for i in 0..m {
            if self.cursor == self.order.len() {
                self.epoch += 1;
                self.order = epoch_order(self.data.nrows(), self.seed, self.epoch);
                self.cursor = 0;
            }
            let src = self.order[self.cursor] as usize;
            batch.row_mut(i).assign(&self.data.row(src));
            self.cursor += 1;
        }
        SampleBatch::new(batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_data(n: usize) -> Array2<f32> {
        Array2::from_shape_fn((n, 2), |(i, j)| (i * 2 + j) as f32)
    }

    #[test]
    fn epoch_visits_every_row_once() {
        let mut s = DataStream::new(toy_data(10), 3).unwrap();
        let batch = s.next_batch(10).unwrap();
        let mut firsts: Vec<f32> = batch.values().column(0).to_vec();
        firsts.sort_by(f32::total_cmp);
        let expected: Vec<f32> = (0..10).map(|i| (i * 2) as f32).collect();
        assert_eq!(firsts, expected);
        assert_eq!(s.epochs_completed(), 0);
        // Next draw crosses the boundary.
        s.next_batch(1).unwrap();
        assert_eq!(s.epochs_completed(), 1);
    }

    #[test]
    fn restore_continues_identically() {
        let mut a = DataStream::new(toy_data(7), 9).unwrap();
        a.next_batch(5).unwrap();
        let state = a.state();
        let tail_a = a.next_batch(6).unwrap();

        let mut b = DataStream::restore(toy_data(7), 9, state).unwrap();
        let tail_b = b.next_batch(6).unwrap();
        assert_eq!(tail_a.values(), tail_b.values());
        assert_eq!(a.state(), b.state());
    }

    #[test]
    fn wraps_small_datasets() {
        let mut s = DataStream::new(toy_data(3), 1).unwrap();
        let batch = s.next_batch(8).unwrap();
        assert_eq!(batch.len(), 8);
        assert_eq!(s.epochs_completed(), 2);
    }
}
