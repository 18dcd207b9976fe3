//! Discrete-event simulation of the non-preemptive M/G/1 queue under
//! accumulating priorities.
//!
//! A customer who arrived at `t0` with bid `b` has priority `b·(t - t0)` at
//! time `t`. Whenever the server frees up it takes the waiting customer with
//! the largest priority; ties go to the earlier arrival, then to the lower
//! class index. Two customers' priority lines cross at most once and
//! customers with the same bid never reorder, so waiting customers are kept
//! in one FIFO lane per bid level and only lane heads are compared.

use std::collections::VecDeque;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, Gamma};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{ApqError, Result};
use crate::model::{BidProfile, MixedBidProfile, Model, ServiceSpec};

pub const BATCHES: usize = 32;
pub const CONFIDENCE: f64 = 0.99;
pub const DEFAULT_WARMUP: u64 = 100_000;
/// Upper bound on the probe rate as a fraction of the total arrival rate.
pub const MAX_PROBE_FRACTION: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub enum SimBids {
    Pure(BidProfile),
    Mixed(MixedBidProfile),
}

impl From<BidProfile> for SimBids {
    fn from(b: BidProfile) -> Self {
        SimBids::Pure(b)
    }
}

impl From<MixedBidProfile> for SimBids {
    fn from(m: MixedBidProfile) -> Self {
        SimBids::Mixed(m)
    }
}

/// Sparse stream of zero-work customers bidding `bid`, used to estimate the
/// wait of a single deviating customer without disturbing the system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TaggedProbe {
    pub bid: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub model: Model,
    pub bids: SimBids,
    /// Regular customers served after warm-up.
    pub customers: u64,
    pub warmup: u64,
    pub seed: u64,
    pub tagged: Option<TaggedProbe>,
}

impl SimConfig {
    pub fn new(model: Model, bids: impl Into<SimBids>, customers: u64) -> SimConfig {
        SimConfig {
            model,
            bids: bids.into(),
            customers,
            warmup: DEFAULT_WARMUP,
            seed: 0,
            tagged: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> SimConfig {
        self.seed = seed;
        self
    }

    pub fn with_warmup(mut self, warmup: u64) -> SimConfig {
        self.warmup = warmup;
        self
    }

    pub fn with_probe(mut self, bid: f64, rate: f64) -> SimConfig {
        self.tagged = Some(TaggedProbe { bid, rate });
        self
    }

    fn validate(&self) -> Result<()> {
        let bad = |s: String| Err(ApqError::InvalidConfig(s));
        if self.customers == 0 {
            return bad("customers must be >= 1".into());
        }
        let n = match &self.bids {
            SimBids::Pure(b) => b.len(),
            SimBids::Mixed(m) => m.len(),
        };
        self.model.check_profile_len(n)?;
        if let Some(p) = self.tagged {
            if !(p.bid.is_finite() && p.bid > 0.0) {
                return bad(format!("probe bid must be positive, got {}", p.bid));
            }
            let max = MAX_PROBE_FRACTION * self.model.arrival_rate();
            if !(p.rate > 0.0 && p.rate <= max) {
                return bad(format!("probe rate must lie in (0, {max}], got {}", p.rate));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassStats {
    pub mean: f64,
    /// Sample variance of individual waits.
    pub variance: f64,
    pub count: u64,
    /// Half-width of the 99% batch-means confidence interval.
    pub half_width: f64,
    pub batch_means: Vec<f64>,
}

impl ClassStats {
    pub fn contains(&self, value: f64) -> bool {
        (self.mean - value).abs() <= self.half_width
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimStats {
    pub classes: Vec<ClassStats>,
    pub tagged: Option<ClassStats>,
    pub served: u64,
    pub end_time: f64,
}

impl SimStats {
    /// Statistics of `Σ w_i · W_i`, with the interval built from the same
    /// linear combination of batch means.
    pub fn combine(&self, weights: &[f64]) -> ClassStats {
        let mean = self
            .classes
            .iter()
            .zip(weights)
            .map(|(c, w)| w * c.mean)
            .sum();
        let batches: Vec<f64> = (0..BATCHES)
            .map(|k| {
                self.classes
                    .iter()
                    .zip(weights)
                    .map(|(c, w)| w * c.batch_means.get(k).copied().unwrap_or(f64::NAN))
                    .sum()
            })
            .filter(|x: &f64| x.is_finite())
            .collect();
        ClassStats {
            mean,
            variance: f64::NAN,
            count: self.classes.iter().map(|c| c.count).sum(),
            half_width: half_width(&batches),
            batch_means: batches,
        }
    }
}

fn half_width(batch_means: &[f64]) -> f64 {
    let k = batch_means.len();
    if k < 2 {
        return f64::INFINITY;
    }
    let kf = k as f64;
    let m = batch_means.iter().sum::<f64>() / kf;
    let var = batch_means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (kf - 1.0);
    let t = StudentsT::new(0.0, 1.0, kf - 1.0)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.5 + CONFIDENCE / 2.0);
    t * (var / kf).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Customer {
    pub arrival: f64,
    pub bid: f64,
    pub class: usize,
    pub service: f64,
}

impl Customer {
    pub fn new(arrival: f64, bid: f64, class: usize) -> Customer {
        Customer {
            arrival,
            bid,
            class,
            service: 0.0,
        }
    }

    pub fn priority_at(&self, now: f64) -> f64 {
        self.bid * (now - self.arrival)
    }

    /// Whether `self` should be served before `other` at time `now`.
    fn precedes(&self, other: &Customer, now: f64) -> bool {
        let (p, q) = (self.priority_at(now), other.priority_at(now));
        if p != q {
            return p > q;
        }
        if self.arrival != other.arrival {
            return self.arrival < other.arrival;
        }
        self.class < other.class
    }
}

#[derive(Debug, Clone)]
struct Lane {
    bid: f64,
    queue: VecDeque<Customer>,
}

/// Customers waiting for service, grouped into FIFO lanes by bid.
#[derive(Debug, Clone, Default)]
pub struct WaitingSet {
    lanes: Vec<Lane>,
    len: usize,
}

impl WaitingSet {
    pub fn new() -> WaitingSet {
        WaitingSet::default()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Customers must be pushed in order of arrival.
    pub fn push(&mut self, c: Customer) {
        let lane = match self.lanes.iter().position(|l| l.bid == c.bid) {
            Some(i) => i,
            None => {
                self.lanes.push(Lane {
                    bid: c.bid,
                    queue: VecDeque::new(),
                });
                self.lanes.len() - 1
            }
        };
        self.lanes[lane].queue.push_back(c);
        self.len += 1;
    }

    /// Remove and return the customer to serve at time `now`.
    pub fn next_in_queue(&mut self, now: f64) -> Result<Customer> {
        let mut best: Option<(usize, &Customer)> = None;
        for (i, lane) in self.lanes.iter().enumerate() {
            if let Some(head) = lane.queue.front() {
                if best.is_none_or(|(_, b)| head.precedes(b, now)) {
                    best = Some((i, head));
                }
            }
        }
        let lane = best.ok_or(ApqError::EmptyQueue)?.0;
        self.len -= 1;
        Ok(self.lanes[lane]
            .queue
            .pop_front()
            .expect("lane head exists"))
    }
}

/// Priorities of `customers` at each of `times`, and which of them would be
/// served first at that instant.
pub fn priority_trace(customers: &[Customer], times: &[f64]) -> Vec<(f64, Vec<f64>, usize)> {
    times
        .iter()
        .map(|&t| {
            let leader = (0..customers.len())
                .filter(|&i| customers[i].arrival <= t)
                .reduce(|a, b| {
                    if customers[b].precedes(&customers[a], t) {
                        b
                    } else {
                        a
                    }
                })
                .unwrap_or(0);
            let prio = customers
                .iter()
                .map(|c| c.priority_at(t).max(0.0))
                .collect();
            (t, prio, leader)
        })
        .collect()
}

enum Sampler {
    Fixed(f64),
    Exp(Exp<f64>),
    Gamma(Gamma<f64>),
    HyperExp { p: f64, a: Exp<f64>, b: Exp<f64> },
}

impl Sampler {
    fn new(spec: &ServiceSpec) -> Sampler {
        let gamma = |shape: f64, scale: f64| {
            Sampler::Gamma(Gamma::new(shape, scale).expect("validated gamma parameters"))
        };
        let exp = |mean: f64| Exp::new(1.0 / mean).expect("validated mean");
        match *spec {
            ServiceSpec::Deterministic { value } => Sampler::Fixed(value),
            ServiceSpec::Exponential { mean } => Sampler::Exp(exp(mean)),
            ServiceSpec::Erlang { shape, mean } => {
                let k = f64::from(shape);
                gamma(k, mean / k)
            }
            ServiceSpec::Gamma { mean, scv } => gamma(1.0 / scv, mean * scv),
            ServiceSpec::HyperExp2Balanced { mean, scv } => {
                let p = 0.5 * (1.0 + ((scv - 1.0) / (scv + 1.0)).sqrt());
                if p >= 1.0 - 1e-15 {
                    return Sampler::Exp(exp(mean));
                }
                Sampler::HyperExp {
                    p,
                    a: exp(mean / (2.0 * p)),
                    b: exp(mean / (2.0 * (1.0 - p))),
                }
            }
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Sampler::Fixed(v) => *v,
            Sampler::Exp(d) => d.sample(rng),
            Sampler::Gamma(d) => d.sample(rng),
            Sampler::HyperExp { p, a, b } => {
                if rng.random::<f64>() < *p {
                    a.sample(rng)
                } else {
                    b.sample(rng)
                }
            }
        }
    }
}

enum BidSampler {
    Fixed(f64),
    Atoms(Vec<f64>, WeightedIndex<f64>),
}

impl BidSampler {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            BidSampler::Fixed(b) => *b,
            BidSampler::Atoms(bids, w) => bids[w.sample(rng)],
        }
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Debug, Clone, Default)]
struct Accumulator {
    count: u64,
    mean: f64,
    m2: f64,
    batch_sum: Vec<f64>,
    batch_count: Vec<u64>,
}

impl Accumulator {
    fn new() -> Accumulator {
        Accumulator {
            batch_sum: vec![0.0; BATCHES],
            batch_count: vec![0; BATCHES],
            ..Accumulator::default()
        }
    }

    fn record(&mut self, wait: f64, batch: usize) {
        self.count += 1;
        let d = wait - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (wait - self.mean);
        self.batch_sum[batch] += wait;
        self.batch_count[batch] += 1;
    }

    fn finish(&self) -> ClassStats {
        let batch_means: Vec<f64> = self
            .batch_sum
            .iter()
            .zip(&self.batch_count)
            .filter(|(_, &n)| n > 0)
            .map(|(s, &n)| s / n as f64)
            .collect();
        let variance = if self.count > 1 {
            self.m2 / (self.count - 1) as f64
        } else {
            0.0
        };
        ClassStats {
            mean: self.mean,
            variance,
            count: self.count,
            half_width: half_width(&batch_means),
            batch_means,
        }
    }
}

/// Run one replication. The result is a deterministic function of `config`.
pub fn simulate(config: &SimConfig) -> Result<SimStats> {
    config.validate()?;
    let model = &config.model;
    let n = model.len();

    let services: Vec<Sampler> = model
        .classes()
        .iter()
        .map(|c| Sampler::new(&c.service))
        .collect();
    let bid_samplers: Vec<BidSampler> = match &config.bids {
        SimBids::Pure(b) => b.iter().map(|&b| BidSampler::Fixed(b)).collect(),
        SimBids::Mixed(m) => m
            .classes()
            .iter()
            .map(|atoms| {
                let bids = atoms.iter().map(|a| a.bid).collect();
                let w = WeightedIndex::new(atoms.iter().map(|a| a.prob))
                    .expect("validated atom probabilities");
                BidSampler::Atoms(bids, w)
            })
            .collect(),
    };
    let class_pick = WeightedIndex::new(model.classes().iter().map(|c| c.arrival_rate))
        .expect("positive arrival rates");
    let interarrival = Exp::new(model.arrival_rate()).expect("positive arrival rate");

    let mut arrival_rng = stream(config.seed, 0);
    let mut service_rng = stream(config.seed, 1);
    let mut bid_rng = stream(config.seed, 2);
    let mut probe_rng = stream(config.seed, 3);

    let probe = config
        .tagged
        .map(|p| (p, Exp::new(p.rate).expect("validated probe rate")));
    let mut next_probe = match &probe {
        Some((_, d)) => d.sample(&mut probe_rng),
        None => f64::INFINITY,
    };

    let next_regular =
        |rng: &mut ChaCha8Rng, bid_rng: &mut ChaCha8Rng, srng: &mut ChaCha8Rng, t: f64| {
            let arrival = t + interarrival.sample(rng);
            let class = class_pick.sample(rng);
            Customer {
                arrival,
                bid: bid_samplers[class].sample(bid_rng),
                class,
                service: services[class].sample(srng),
            }
        };
    let mut pending = next_regular(&mut arrival_rng, &mut bid_rng, &mut service_rng, 0.0);

    let batch_size = config.customers.div_ceil(BATCHES as u64);
    let target = config.warmup + config.customers;
    let mut classes: Vec<Accumulator> = (0..n).map(|_| Accumulator::new()).collect();
    let mut tagged = Accumulator::new();
    let mut queue = WaitingSet::new();
    let mut now = 0.0;
    let mut served: u64 = 0;

    while served < target {
        // admit everyone who has arrived by the time the server is free
        loop {
            let next = pending.arrival.min(next_probe);
            if next > now && !queue.is_empty() {
                break;
            }
            if next > now {
                now = next;
            }
            if pending.arrival <= next_probe {
                queue.push(pending);
                pending = next_regular(
                    &mut arrival_rng,
                    &mut bid_rng,
                    &mut service_rng,
                    pending.arrival,
                );
            } else {
                let (p, d) = probe.as_ref().expect("finite probe time implies a probe");
                queue.push(Customer::new(next_probe, p.bid, n));
                next_probe += d.sample(&mut probe_rng);
            }
        }

        let c = queue.next_in_queue(now)?;
        let wait = now - c.arrival;
        let counted = served.checked_sub(config.warmup);
        if c.class == n {
            if let Some(k) = counted {
                tagged.record(wait, ((k / batch_size) as usize).min(BATCHES - 1));
            }
            continue;
        }
        if let Some(k) = counted {
            classes[c.class].record(wait, ((k / batch_size) as usize).min(BATCHES - 1));
        }
        served += 1;
        now += c.service;
    }

    Ok(SimStats {
        classes: classes.iter().map(Accumulator::finish).collect(),
        tagged: probe.map(|_| tagged.finish()),
        served: served - config.warmup,
        end_time: now,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::waiting_times;
    use crate::model::{Atom, ClassSpec};

    fn exp1() -> ServiceSpec {
        ServiceSpec::Exponential { mean: 1.0 }
    }

    fn two_class() -> Model {
        Model::new(vec![
            ClassSpec::new(0.25, 1.0, exp1()),
            ClassSpec::new(0.25, 2.0, exp1()),
        ])
        .unwrap()
    }

    #[test]
    fn overtaking_pair() {
        let a = Customer::new(0.0, 0.5, 0);
        let b = Customer::new(1.0, 1.0, 1);
        assert_eq!(a.priority_at(2.0), b.priority_at(2.0));
        assert_eq!(a.priority_at(2.0), 1.0);

        let pick = |now: f64| {
            let mut q = WaitingSet::new();
            q.push(a);
            q.push(b);
            q.next_in_queue(now).unwrap().class
        };
        assert_eq!(pick(1.5), 0);
        assert_eq!(pick(3.0), 1);
        // equal priority at the crossing: earlier arrival wins
        assert_eq!(pick(2.0), 0);
    }

    #[test]
    fn equal_bids_are_fcfs() {
        for now in [1.0, 5.0, 100.0] {
            let mut q = WaitingSet::new();
            q.push(Customer::new(0.0, 1.0, 1));
            q.push(Customer::new(1.0, 1.0, 0));
            assert_eq!(q.next_in_queue(now).unwrap().arrival, 0.0);
        }
    }

    #[test]
    fn same_time_tie_prefers_lower_class() {
        let mut q = WaitingSet::new();
        q.push(Customer::new(0.0, 2.0, 3));
        q.push(Customer::new(0.0, 1.0, 1));
        // at t = 0 both priorities are zero
        assert_eq!(q.next_in_queue(0.0).unwrap().class, 1);
    }

    #[test]
    fn same_bid_never_overtakes_earlier_arrival() {
        let mut q = WaitingSet::new();
        q.push(Customer::new(0.5, 1.0, 9));
        q.push(Customer::new(0.7, 1.0, 0));
        for now in [0.7, 1.0, 50.0] {
            let mut q = q.clone();
            assert_eq!(q.next_in_queue(now).unwrap().class, 9);
        }
    }

    #[test]
    fn empty_queue_errors() {
        assert!(matches!(
            WaitingSet::new().next_in_queue(1.0),
            Err(ApqError::EmptyQueue)
        ));
    }

    #[test]
    fn trace_shows_crossing() {
        let cs = [Customer::new(0.0, 0.5, 0), Customer::new(1.0, 1.0, 1)];
        let tr = priority_trace(&cs, &[0.5, 2.0, 3.0]);
        assert_eq!(tr[0].1, vec![0.25, 0.0]);
        assert_eq!(tr[1].1, vec![1.0, 1.0]);
        assert_eq!((tr[0].2, tr[1].2, tr[2].2), (0, 0, 1));
    }

    #[test]
    fn reproducible() {
        let m = two_class();
        let cfg = SimConfig::new(m, BidProfile::new(vec![1.0, 2.0]).unwrap(), 20_000)
            .with_warmup(1_000)
            .with_seed(7);
        assert_eq!(simulate(&cfg).unwrap(), simulate(&cfg).unwrap());
        let other = simulate(&cfg.clone().with_seed(8)).unwrap();
        assert_ne!(simulate(&cfg).unwrap(), other);
    }

    #[test]
    fn short_run_matches_formula_roughly() {
        let m = two_class();
        let bids = BidProfile::new(vec![1.0, 2.0]).unwrap();
        let exact = waiting_times(&m, &bids).unwrap();
        let s = simulate(
            &SimConfig::new(m, bids, 400_000)
                .with_warmup(10_000)
                .with_seed(1),
        )
        .unwrap();
        for (c, w) in s.classes.iter().zip(exact.iter()) {
            assert!((c.mean - w).abs() < 4.0 * c.half_width, "{} vs {w}", c.mean);
            assert!(c.half_width > 0.0);
        }
        assert_eq!(s.served, 400_000);
    }

    #[test]
    fn mixed_bids_run() {
        let m = two_class();
        let mix = MixedBidProfile::new(vec![
            vec![
                Atom {
                    bid: 1.0,
                    prob: 0.5,
                },
                Atom {
                    bid: 3.0,
                    prob: 0.5,
                },
            ],
            vec![Atom {
                bid: 2.0,
                prob: 1.0,
            }],
        ])
        .unwrap();
        let s = simulate(&SimConfig::new(m, mix, 50_000).with_warmup(1_000)).unwrap();
        assert_eq!(s.classes.len(), 2);
    }

    #[test]
    fn probes_are_separate() {
        let m = two_class();
        let bids = BidProfile::new(vec![1.0, 1.0]).unwrap();
        let base = SimConfig::new(m, bids, 100_000)
            .with_warmup(1_000)
            .with_seed(3);
        let probed = simulate(&base.clone().with_probe(1.0, 5e-4)).unwrap();
        let t = probed.tagged.as_ref().unwrap();
        assert!(t.count > 0);
        assert_eq!(probed.served, 100_000);
        assert_eq!(probed.classes.iter().map(|c| c.count).sum::<u64>(), 100_000);
    }

    #[test]
    fn rejects_bad_configs() {
        let m = two_class();
        let bids = BidProfile::new(vec![1.0, 2.0]).unwrap();
        let zero = SimConfig::new(m.clone(), bids.clone(), 0);
        assert!(matches!(simulate(&zero), Err(ApqError::InvalidConfig(_))));
        let dense = SimConfig::new(m.clone(), bids.clone(), 10).with_probe(1.0, 0.01);
        assert!(matches!(simulate(&dense), Err(ApqError::InvalidConfig(_))));
        let short = SimConfig::new(m, BidProfile::new(vec![1.0]).unwrap(), 10);
        assert!(matches!(
            simulate(&short),
            Err(ApqError::ProfileLength { .. })
        ));
    }

    #[test]
    fn sampler_moments() {
        let specs = [
            ServiceSpec::Erlang {
                shape: 3,
                mean: 2.0,
            },
            ServiceSpec::HyperExp2Balanced {
                mean: 0.35,
                scv: 16.14,
            },
            ServiceSpec::Gamma {
                mean: 4.5,
                scv: 0.0765,
            },
            ServiceSpec::Deterministic { value: 1.5 },
        ];
        let mut rng = stream(11, 0);
        for spec in specs {
            let s = Sampler::new(&spec);
            let n = 400_000;
            let (mut m1, mut m2) = (0.0, 0.0);
            for _ in 0..n {
                let x = s.sample(&mut rng);
                m1 += x;
                m2 += x * x;
            }
            let (e1, e2) = spec.moments();
            assert!((m1 / n as f64 / e1 - 1.0).abs() < 0.02, "{spec:?}");
            assert!((m2 / n as f64 / e2 - 1.0).abs() < 0.08, "{spec:?}");
        }
    }
}
