//! Online and preference replay buffers.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intervention::{make_preference_tuple, PreferenceTuple};

pub const DEFAULT_CAPACITY: usize = 100_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub d: bool,
    pub s_next: Vec<f64>,
}

impl Transition {
    pub fn validate(&self) -> Result<()> {
        if self.r != 0.0 && self.r != 1.0 {
            return Err(Error::Validation(format!("reward {} is not 0 or 1", self.r)));
        }
        if self.a.iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::Validation("action outside [-1, 1]".into()));
        }
        if self.s.len() != self.s_next.len() {
            return Err(Error::Validation("observation widths differ".into()));
        }
        Ok(())
    }
}

impl From<&PreferenceTuple> for Transition {
    /// The executed half of a preference: the weak action is dropped.
    fn from(t: &PreferenceTuple) -> Self {
        Transition {
            s: t.s.clone(),
            a: t.a_p.clone(),
            r: t.r,
            d: t.d,
            s_next: t.s_next.clone(),
        }
    }
}

/// Fixed-capacity FIFO with uniform random access.
#[derive(Clone, Debug)]
pub struct RingBuffer<T> {
    items: Vec<T>,
    capacity: usize,
    /// Slot the next insertion overwrites once full.
    head: usize,
    inserted: u64,
}

impl<T: Clone> RingBuffer<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("buffer capacity must be positive".into()));
        }
        Ok(Self {
            items: Vec::new(),
            capacity,
            head: 0,
            inserted: 0,
        })
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.head] = item;
            self.head = (self.head + 1) % self.capacity;
        }
        self.inserted += 1;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total insertions ever, including evicted items.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    /// `i`-th oldest item still held.
    pub fn get(&self, i: usize) -> Option<&T> {
        if i >= self.items.len() {
            return None;
        }
        let start = if self.items.len() < self.capacity { 0 } else { self.head };
        Some(&self.items[(start + i) % self.items.len()])
    }

    /// Oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &T> + '_ {
        (0..self.len()).map(move |i| self.get(i).expect("index below len"))
    }

    /// `n` uniform draws with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R, name: &str) -> Result<Vec<T>> {
        if self.items.is_empty() {
            return Err(Error::Sampling(format!("{name} buffer empty")));
        }
        let len = self.items.len();
        Ok((0..n).map(|_| self.items[rng.gen_range(0..len)].clone()).collect())
    }
}

#[derive(Clone, Debug)]
pub struct BufferPair {
    pub online: RingBuffer<Transition>,
    pub pref: RingBuffer<PreferenceTuple>,
}

impl BufferPair {
    pub fn new(online_capacity: usize, pref_capacity: usize) -> Result<Self> {
        Ok(Self {
            online: RingBuffer::new(online_capacity)?,
            pref: RingBuffer::new(pref_capacity)?,
        })
    }

    pub fn sample_online<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Transition>> {
        self.online.sample(n, rng, "online")
    }

    pub fn sample_pref<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<PreferenceTuple>> {
        self.pref.sample(n, rng, "preference")
    }

    /// `n` online transitions and `n` preference tuples, drawn in that order
    /// from one stream.
    pub fn sample_symmetric<R: Rng + ?Sized>(
        &self,
        n: usize,
        rng: &mut R,
    ) -> Result<(Vec<Transition>, Vec<PreferenceTuple>)> {
        if self.pref.is_empty() {
            return Err(Error::Sampling("preference buffer empty".into()));
        }
        let online = self.sample_online(n, rng)?;
        let pref = self.sample_pref(n, rng)?;
        Ok((online, pref))
    }

    pub fn write_jsonl(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_jsonl(&dir.join("online.jsonl"), self.online.iter())?;
        write_jsonl(&dir.join("pref.jsonl"), self.pref.iter())
    }
}

/// Online items first, then the executed halves of the preference tuples.
pub fn build_base_batch(online: &[Transition], pref: &[PreferenceTuple]) -> Vec<Transition> {
    online
        .iter()
        .cloned()
        .chain(pref.iter().map(Transition::from))
        .collect()
}

/// Splits a flat step list into episodes at each successful terminal step.
/// Trailing steps that never reach success are rejected.
pub fn split_demo_episodes(steps: Vec<Transition>) -> Result<Vec<Vec<Transition>>> {
    let mut episodes = Vec::new();
    let mut current = Vec::new();
    for t in steps {
        t.validate()?;
        let end = t.d;
        if end && t.r != 1.0 {
            return Err(Error::Validation("demo step is terminal without success".into()));
        }
        current.push(t);
        if end {
            episodes.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        return Err(Error::Validation(
            "demo episode without terminal success".into(),
        ));
    }
    Ok(episodes)
}

/// Rollout steps go to the online buffer; every demo step becomes a
/// preference tuple with a uniformly drawn weak action.
pub fn prefill<R: Rng + ?Sized>(
    demos: &[Vec<Transition>],
    rollouts: &[Vec<Transition>],
    online_capacity: usize,
    pref_capacity: usize,
    rng: &mut R,
) -> Result<BufferPair> {
    let mut pair = BufferPair::new(online_capacity, pref_capacity)?;
    for ep in demos {
        match ep.last() {
            Some(last) if last.d && last.r == 1.0 => {}
            _ => {
                return Err(Error::Validation(
                    "demo episode without terminal success".into(),
                ))
            }
        }
        for t in ep {
            t.validate()?;
            pair.pref
                .push(make_preference_tuple(&t.s, &t.a, None, t.r, t.d, &t.s_next, rng));
        }
    }
    for ep in rollouts {
        for t in ep {
            t.validate()?;
            pair.online.push(t.clone());
        }
    }
    Ok(pair)
}

pub fn write_jsonl<'a, T, I>(path: &Path, items: I) -> Result<()>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| {
            Error::Schema(format!("{}:{}: {e}", path.display(), i + 1))
        })?;
        out.push(item);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn tr(k: f64) -> Transition {
        Transition {
            s: vec![k],
            a: vec![0.0, 0.0],
            r: 0.0,
            d: false,
            s_next: vec![k + 1.0],
        }
    }

    fn success(k: f64) -> Transition {
        Transition { r: 1.0, d: true, ..tr(k) }
    }

    fn pt(k: f64) -> PreferenceTuple {
        PreferenceTuple {
            s: vec![k],
            a_p: vec![0.5, -0.5],
            a_w: vec![-0.25, 0.75],
            r: 0.0,
            d: false,
            s_next: vec![k + 1.0],
        }
    }

    #[test]
    fn prefill_counts_steps() {
        let demos: Vec<_> = (0..20)
            .map(|e| {
                let mut ep: Vec<_> = (0..e % 3).map(|k| tr(k as f64)).collect();
                ep.push(success(9.0));
                ep
            })
            .collect();
        let rollouts: Vec<_> = (0..10).map(|e| (0..e + 1).map(|k| tr(k as f64)).collect()).collect::<Vec<Vec<_>>>();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pair = prefill(&demos, &rollouts, 1000, 1000, &mut rng).unwrap();
        let demo_steps: usize = demos.iter().map(Vec::len).sum();
        let rollout_steps: usize = rollouts.iter().map(Vec::len).sum();
        assert_eq!(pair.pref.len(), demo_steps);
        assert_eq!(pair.online.len(), rollout_steps);
        for t in pair.pref.iter() {
            assert_eq!(t.a_w.len(), 2);
            assert!(t.a_w.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn prefill_is_seed_deterministic() {
        let demos = vec![vec![tr(0.0), success(1.0)]];
        let a = prefill(&demos, &[], 10, 10, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = prefill(&demos, &[], 10, 10, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a.pref.iter().collect::<Vec<_>>(), b.pref.iter().collect::<Vec<_>>());
    }

    #[test]
    fn failed_demo_is_rejected() {
        let demos = vec![vec![tr(0.0), tr(1.0)]];
        let err = prefill(&demos, &[], 10, 10, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(split_demo_episodes(vec![tr(0.0), success(1.0), tr(2.0)]).is_err());
        let eps = split_demo_episodes(vec![tr(0.0), success(1.0), success(2.0)]).unwrap();
        assert_eq!(eps.iter().map(Vec::len).collect::<Vec<_>>(), vec![2, 1]);
    }

    #[test]
    fn symmetric_sample_sizes_and_empty_errors() {
        let mut pair = BufferPair::new(10, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        pair.online.push(tr(0.0));
        match pair.sample_symmetric(4, &mut rng) {
            Err(Error::Sampling(msg)) => assert_eq!(msg, "preference buffer empty"),
            other => panic!("unexpected {other:?}"),
        }
        pair.pref.push(pt(7.0));
        let (on, p) = pair.sample_symmetric(4, &mut rng).unwrap();
        assert_eq!((on.len(), p.len()), (4, 4));
        assert!(p.iter().all(|t| t.s == vec![7.0]));
        for _ in 0..20 {
            pair.online.push(tr(1.0));
            pair.pref.push(pt(2.0));
        }
        let (on, p) = pair.sample_symmetric(128, &mut rng).unwrap();
        assert_eq!((on.len(), p.len()), (128, 128));
    }

    #[test]
    fn base_batch_keeps_only_executed_actions() {
        let online = vec![tr(0.0)];
        let pref = vec![pt(1.0)];
        let base = build_base_batch(&online, &pref);
        assert_eq!(base.len(), 2);
        assert_eq!(base[0], online[0]);
        assert_eq!(base[1].a, pref[0].a_p);

        let mut same = pt(2.0);
        same.a_w = same.a_p.clone();
        let base = build_base_batch(&[], &[same.clone()]);
        assert_eq!(base[0].a, same.a_p);
    }

    #[test]
    fn sampling_is_uniform() {
        // chi-squared goodness of fit, 9 degrees of freedom, p = 0.01 critical value
        const CRITICAL: f64 = 21.666;
        let mut buf = RingBuffer::new(10).unwrap();
        for k in 0..10 {
            buf.push(k);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let draws = buf.sample(100_000, &mut rng, "test").unwrap();
        let mut counts = [0usize; 10];
        for d in draws {
            counts[d] += 1;
        }
        let expected = 10_000.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < CRITICAL, "chi2 = {chi2}, counts {counts:?}");
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let items = vec![tr(0.5), success(0.25)];
        write_jsonl(&path, &items).unwrap();
        let back: Vec<Transition> = read_jsonl(&path).unwrap();
        assert_eq!(back, items);
        std::fs::write(&path, "{\"s\": 1}\n").unwrap();
        assert!(matches!(read_jsonl::<Transition>(&path), Err(Error::Schema(_))));
    }

    proptest! {
        #[test]
        fn ring_buffer_keeps_most_recent(cap in 1usize..20, extra in 0usize..50) {
            let mut buf = RingBuffer::new(cap).unwrap();
            let total = cap + extra;
            for k in 0..total {
                buf.push(k);
            }
            prop_assert_eq!(buf.len(), cap);
            prop_assert_eq!(buf.inserted(), total as u64);
            let held: Vec<usize> = buf.iter().copied().collect();
            let expected: Vec<usize> = (total - cap..total).collect();
            prop_assert_eq!(held, expected);
        }

        #[test]
        fn base_batch_never_carries_weak_actions(n in 1usize..10, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pref: Vec<PreferenceTuple> = (0..n)
                .map(|k| {
                    let mut t = pt(k as f64);
                    t.a_w = vec![rng.gen_range(-1.0..-0.9), rng.gen_range(0.9..1.0)];
                    t
                })
                .collect();
            let base = build_base_batch(&[tr(0.0)], &pref);
            prop_assert_eq!(base.len(), n + 1);
            for (b, t) in base[1..].iter().zip(&pref) {
                prop_assert_eq!(&b.a, &t.a_p);
                prop_assert!(b.a != t.a_w);
            }
        }
    }
}
