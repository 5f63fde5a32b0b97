//! Two-partition replay: a fixed offline set and an online ring buffer.

use crate::sim::Transition;
use rand::Rng;

pub const DEFAULT_ONLINE_CAPACITY: usize = 50_000;

#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    offline: Vec<Transition>,
    online: Vec<Transition>,
    capacity: usize,
    head: usize,
}

impl Default for ReplayBuffer {
    fn default() -> Self {
        Self::new(Vec::new(), DEFAULT_ONLINE_CAPACITY)
    }
}

impl ReplayBuffer {
    pub fn new(offline: Vec<Transition>, capacity: usize) -> Self {
        Self {
            offline,
            online: Vec::new(),
            capacity: capacity.max(1),
            head: 0,
        }
    }

    pub fn offline(&self) -> &[Transition] {
        &self.offline
    }

    pub fn online(&self) -> &[Transition] {
        &self.online
    }

    pub fn online_len(&self) -> usize {
        self.online.len()
    }

    pub fn len(&self) -> usize {
        self.offline.len() + self.online.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.online.len() < self.capacity {
            self.online.push(t);
        } else {
            self.online[self.head] = t;
        }
        self.head = (self.head + 1) % self.capacity;
    }

    /// Uniform draws with replacement; half the batch from each partition
    /// when both hold data, otherwise all from the non-empty one.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<&Transition> {
        let mut out = Vec::with_capacity(batch);
        let (n_off, n_on) = match (self.offline.is_empty(), self.online.is_empty()) {
            (true, true) => return out,
            (false, true) => (batch, 0),
            (true, false) => (0, batch),
            (false, false) => (batch / 2, batch - batch / 2),
        };
        for _ in 0..n_off {
            out.push(&self.offline[rng.random_range(0..self.offline.len())]);
        }
        for _ in 0..n_on {
            out.push(&self.online[rng.random_range(0..self.online.len())]);
        }
        out
    }

    /// Draws only from the offline partition.
    pub fn sample_offline<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<&Transition> {
        if self.offline.is_empty() {
            return Vec::new();
        }
        (0..batch)
            .map(|_| &self.offline[rng.random_range(0..self.offline.len())])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_offline_dataset, DatasetConfig, EnvOptions, Scenario};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn data(n: usize) -> Vec<Transition> {
        let a = Scenario::open_line(10.0).build().unwrap();
        let cfg = DatasetConfig { n_steps: n, ..Default::default() };
        generate_offline_dataset(&a, &cfg, EnvOptions::default(), 0)
    }

    #[test]
    fn mixed_batches_split_evenly() {
        let d = data(60);
        let mut buf = ReplayBuffer::new(d[..40].to_vec(), 100);
        for t in &d[40..] {
            let mut t = t.clone();
            t.r = 1234.0;
            buf.push(t);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = buf.sample(76, &mut rng);
        assert_eq!(b.len(), 76);
        assert_eq!(b.iter().filter(|t| t.r == 1234.0).count(), 38);
    }

    #[test]
    fn ring_overwrites_oldest() {
        let d = data(10);
        let mut buf = ReplayBuffer::new(vec![], 4);
        for t in &d {
            buf.push(t.clone());
        }
        assert_eq!(buf.online_len(), 4);
        assert_eq!(buf.online()[0], d[8]);
        assert_eq!(buf.online()[1], d[9]);
        assert_eq!(buf.online()[2], d[6]);
    }

    #[test]
    fn single_partition_fills_batch() {
        let d = data(20);
        let buf = ReplayBuffer::new(d, 10);
        assert_eq!(buf.sample(76, &mut ChaCha8Rng::seed_from_u64(0)).len(), 76);
        assert!(ReplayBuffer::default().sample(8, &mut ChaCha8Rng::seed_from_u64(0)).is_empty());
    }
}
