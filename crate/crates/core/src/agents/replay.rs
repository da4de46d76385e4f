use rand::Rng;

use super::Transition;
use crate::error::AgentError;

/// Ring buffer of transitions with optional proportional prioritization.
///
/// With `alpha = 0` every stored transition has sampling weight exactly one,
/// so the prioritized sampler coincides with uniform replay.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    slots: Vec<Transition>,
    priorities: Vec<f64>,
    next: usize,
    max_priority: f64,
    pub alpha: f64,
    /// Floor added to |δ| when priorities are updated.
    pub priority_eps: f64,
}

/// Indices into the buffer with their normalized importance weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
}

/// Consecutive transitions of one episode, oldest first, with one weight per sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    pub sequences: Vec<Vec<usize>>,
    pub weights: Vec<f64>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, alpha: f64, priority_eps: f64) -> Result<Self, AgentError> {
        if capacity == 0 {
            return Err(AgentError::InvalidConfig("replay capacity must be positive".into()));
        }
        if !(0.0..=1.0).contains(&alpha) || !(priority_eps > 0.0) {
            return Err(AgentError::InvalidConfig(format!("need alpha in [0, 1] and a positive priority floor, got {alpha}, {priority_eps}")));
        }
        Ok(Self { capacity, slots: Vec::with_capacity(capacity), priorities: Vec::with_capacity(capacity), next: 0, max_priority: 1.0, alpha, priority_eps })
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn max_priority(&self) -> f64 {
        self.max_priority
    }

    pub fn priorities(&self) -> &[f64] {
        &self.priorities
    }

    pub fn get(&self, index: usize) -> Result<&Transition, AgentError> {
        self.slots.get(index).ok_or(AgentError::IndexOutOfRange { index, len: self.len() })
    }

    /// Stores a transition at the current maximum priority, overwriting the oldest when full.
    pub fn push(&mut self, t: Transition) {
        if self.slots.len() < self.capacity {
            self.slots.push(t);
            self.priorities.push(self.max_priority);
        } else {
            self.slots[self.next] = t;
            self.priorities[self.next] = self.max_priority;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Slot indices from oldest to newest.
    fn age_order(&self) -> impl Iterator<Item = usize> + '_ {
        let start = if self.slots.len() < self.capacity { 0 } else { self.next };
        (0..self.slots.len()).map(move |i| (start + i) % self.capacity)
    }

    /// `P(i) = p_i^α / Σ_k p_k^α`.
    pub fn probabilities(&self) -> Vec<f64> {
        let scaled: Vec<f64> = self.priorities.iter().map(|p| self.scaled(*p)).collect();
        let total: f64 = scaled.iter().sum();
        scaled.iter().map(|p| p / total).collect()
    }

    fn scaled(&self, p: f64) -> f64 {
        if self.alpha == 0.0 {
            1.0
        } else {
            p.powf(self.alpha)
        }
    }

    /// Draws `n` indices with replacement from `P(i)`; weights are
    /// `(N·P(i))^{-β}` divided by the batch maximum.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, beta: f64, rng: &mut R) -> Result<Sample, AgentError> {
        if self.is_empty() {
            return Err(AgentError::EmptyBuffer);
        }
        let scaled: Vec<f64> = self.priorities.iter().map(|p| self.scaled(*p)).collect();
        let (indices, probs) = draw(&scaled, n, rng);
        let weights = is_weights(&probs, self.len(), beta);
        Ok(Sample { indices, weights })
    }

    /// Splits the buffer into runs of at most `len` consecutive steps of one
    /// episode, aligned to multiples of `len` within the episode.
    pub fn chunks(&self, len: usize) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = Vec::new();
        let mut prev: Option<&Transition> = None;
        for i in self.age_order() {
            let t = &self.slots[i];
            let continues = prev.is_some_and(|p| p.episode == t.episode && p.step + 1 == t.step && t.step % len != 0 && !p.done);
            match out.last_mut() {
                Some(c) if continues => c.push(i),
                _ => out.push(vec![i]),
            }
            prev = Some(t);
        }
        out
    }

    /// Samples `n` aligned chunks; a chunk's priority is the maximum of its members.
    pub fn sample_sequences<R: Rng + ?Sized>(&self, n: usize, len: usize, beta: f64, rng: &mut R) -> Result<SequenceSample, AgentError> {
        if self.is_empty() {
            return Err(AgentError::EmptyBuffer);
        }
        let chunks = self.chunks(len);
        let scaled: Vec<f64> =
            chunks.iter().map(|c| self.scaled(c.iter().map(|i| self.priorities[*i]).fold(0.0, f64::max))).collect();
        let (picked, probs) = draw(&scaled, n, rng);
        let weights = is_weights(&probs, chunks.len(), beta);
        Ok(SequenceSample { sequences: picked.into_iter().map(|c| chunks[c].clone()).collect(), weights })
    }

    /// `p_i ← |δ_i| + ε_p`.
    pub fn update_priorities(&mut self, indices: &[usize], td_errors: &[f64]) -> Result<(), AgentError> {
        if let Some(&index) = indices.iter().find(|i| **i >= self.len()) {
            return Err(AgentError::IndexOutOfRange { index, len: self.len() });
        }
        for (&i, d) in indices.iter().zip(td_errors) {
            let p = d.abs() + self.priority_eps;
            let p = if p.is_finite() { p } else { self.max_priority };
            self.priorities[i] = p;
            self.max_priority = self.max_priority.max(p);
        }
        Ok(())
    }
}

/// Proportional draws via a binary search on the cumulative sums.
fn draw<R: Rng + ?Sized>(weights: &[f64], n: usize, rng: &mut R) -> (Vec<usize>, Vec<f64>) {
    let mut cum = Vec::with_capacity(weights.len());
    let mut total = 0.0;
    for w in weights {
        total += w;
        cum.push(total);
    }
    let mut indices = Vec::with_capacity(n);
    let mut probs = Vec::with_capacity(n);
    for _ in 0..n {
        let u = rng.gen::<f64>() * total;
        let i = cum.partition_point(|c| *c <= u).min(weights.len() - 1);
        indices.push(i);
        probs.push(weights[i] / total);
    }
    (indices, probs)
}

fn is_weights(probs: &[f64], n: usize, beta: f64) -> Vec<f64> {
    let raw: Vec<f64> = probs.iter().map(|p| (n as f64 * p).powf(-beta)).collect();
    let max = raw.iter().copied().fold(0.0, f64::max);
    raw.iter().map(|w| w / max).collect()
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    use super::*;

    fn tr(episode: u64, step: usize, done: bool) -> Transition {
        Transition { obs: vec![step as f64], action: 0, reward: 0.0, next_obs: vec![step as f64 + 1.0], done, episode, step }
    }

    fn filled(n: usize, alpha: f64) -> ReplayBuffer {
        let mut b = ReplayBuffer::new(n, alpha, 1e-3).unwrap();
        for i in 0..n {
            b.push(tr(0, i, false));
        }
        b
    }

    #[test]
    fn ring_overwrites_oldest() {
        let mut b = ReplayBuffer::new(3, 0.6, 1e-3).unwrap();
        for i in 0..5 {
            b.push(tr(0, i, false));
        }
        assert_eq!(b.len(), 3);
        let steps: Vec<usize> = b.age_order().map(|i| b.slots[i].step).collect();
        assert_eq!(steps, vec![2, 3, 4]);
    }

    #[test]
    fn empty_buffer_errors() {
        let b = ReplayBuffer::new(4, 0.6, 1e-3).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(b.sample(2, 0.4, &mut r), Err(AgentError::EmptyBuffer));
        assert!(ReplayBuffer::new(0, 0.6, 1e-3).is_err());
    }

    #[test]
    fn two_priorities_normalize() {
        let mut b = filled(2, 1.0);
        b.update_priorities(&[0, 1], &[1.0 - 1e-3, 3.0 - 1e-3]).unwrap();
        let p = b.probabilities();
        assert!((p[0] - 0.25).abs() < 1e-12 && (p[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn alpha_zero_is_exactly_uniform() {
        let mut b = filled(7, 0.0);
        b.update_priorities(&[0, 3, 5], &[10.0, 0.0, 2.5]).unwrap();
        assert!(b.probabilities().iter().all(|p| *p == 1.0 / 7.0));
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let s = b.sample(64, 1.0, &mut r).unwrap();
        assert!(s.weights.iter().all(|w| *w == 1.0));
    }

    #[test]
    fn priority_floor_and_monotonicity() {
        let mut b = filled(3, 0.6);
        b.update_priorities(&[0, 1, 2], &[0.0, 0.5, -2.0]).unwrap();
        assert_eq!(b.priorities()[0], 1e-3);
        assert!(b.priorities()[2] > b.priorities()[1] && b.priorities()[1] > b.priorities()[0]);
        assert_eq!(b.max_priority(), 2.0 + 1e-3);
        b.push(tr(0, 9, false));
        assert_eq!(b.priorities()[0], 2.0 + 1e-3, "new entries at max priority");
        assert_eq!(b.update_priorities(&[5], &[1.0]), Err(AgentError::IndexOutOfRange { index: 5, len: 3 }));
    }

    #[test]
    fn sampling_frequencies_pass_chi_square() {
        let mut r = ChaCha8Rng::seed_from_u64(42);
        let mut b = filled(100, 0.6);
        let idx: Vec<usize> = (0..100).collect();
        let td: Vec<f64> = (0..100).map(|_| r.gen_range(0.0..5.0)).collect();
        b.update_priorities(&idx, &td).unwrap();
        let n = 100_000;
        let s = b.sample(n, 0.4, &mut r).unwrap();
        let mut counts = vec![0usize; 100];
        s.indices.iter().for_each(|i| counts[*i] += 1);
        let stat: f64 = b.probabilities().iter().zip(&counts).map(|(p, c)| (*c as f64 - p * n as f64).powi(2) / (p * n as f64)).sum();
        let critical = ChiSquared::new(99.0).unwrap().inverse_cdf(0.99);
        assert!(stat < critical, "chi2 {stat} >= {critical}");
    }

    #[test]
    fn chunks_follow_episode_alignment() {
        let mut b = ReplayBuffer::new(30, 0.6, 1e-3).unwrap();
        for s in 0..11 {
            b.push(tr(0, s, s == 10));
        }
        for s in 0..5 {
            b.push(tr(1, s, false));
        }
        let lens: Vec<usize> = b.chunks(4).iter().map(|c| c.len()).collect();
        assert_eq!(lens, vec![4, 4, 3, 4, 1]);
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let s = b.sample_sequences(8, 4, 0.4, &mut r).unwrap();
        for seq in &s.sequences {
            assert!(seq.windows(2).all(|w| b.slots[w[1]].step == b.slots[w[0]].step + 1));
        }
    }

    #[test]
    fn chunk_priority_is_member_maximum() {
        let mut b = ReplayBuffer::new(8, 1.0, 1e-3).unwrap();
        for s in 0..8 {
            b.push(tr(0, s, false));
        }
        let td = [0.0, 0.0, 0.0, 3.0 - 1e-3, 0.0, 0.0, 0.0, 1.0 - 1e-3];
        b.update_priorities(&(0..8).collect::<Vec<_>>(), &td).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let s = b.sample_sequences(40_000, 4, 1.0, &mut r).unwrap();
        let first = s.sequences.iter().filter(|c| c[0] == 0).count() as f64 / 40_000.0;
        assert!((first - 0.75).abs() < 0.01, "{first}");
    }

    proptest::proptest! {
        #[test]
        fn priorities_stay_positive(
            capacity in 1usize..40,
            pushes in 1usize..80,
            updates in proptest::collection::vec((0usize..40, -1e6f64..1e6), 0..60),
        ) {
            let mut b = ReplayBuffer::new(capacity, 0.6, 1e-3).unwrap();
            for (k, (i, d)) in updates.iter().enumerate() {
                if k < pushes {
                    b.push(tr(0, k, false));
                }
                let _ = b.update_priorities(&[*i], &[*d]);
                proptest::prop_assert!(b.len() <= capacity);
                proptest::prop_assert!(b.priorities().iter().all(|p| *p > 0.0 && p.is_finite()));
                proptest::prop_assert!(b.priorities().iter().all(|p| *p <= b.max_priority()));
            }
        }

        #[test]
        fn alpha_zero_probabilities_are_uniform(td in proptest::collection::vec(0.0f64..100.0, 1..50)) {
            let mut b = filled(td.len(), 0.0);
            b.update_priorities(&(0..td.len()).collect::<Vec<_>>(), &td).unwrap();
            let u = 1.0 / td.len() as f64;
            proptest::prop_assert!(b.probabilities().iter().all(|p| *p == u));
        }
    }
}
