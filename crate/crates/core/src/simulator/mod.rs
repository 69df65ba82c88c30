//! Monte Carlo engine for Bernoulli customer-randomized experiments.
//!
//! Each replication owns a ChaCha8 stream selected by `(seed, replication)`,
//! so results do not depend on how replications are scheduled across threads.

mod exchangeable;

pub use exchangeable::{exchangeable_oracle, ConditionalMoments, JointOutcomes, OracleReport};

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{check_interior_allocation, invalid_arg, Result};
use crate::model::{steady_state, Arm, Distribution, PlatformModel};
use crate::power::normal_quantile;

/// Law of the state seen by the first customer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum InitialState {
    ControlSteadyState,
    TreatmentSteadyState,
    /// Steady state of the experiment chain itself.
    ExperimentSteadyState,
    Fixed(usize),
    Custom(Distribution),
}

#[derive(Debug, Clone, Serialize)]
pub struct SimConfig {
    pub model: PlatformModel,
    pub a: f64,
    #[serde(rename = "N")]
    pub n: u64,
    #[serde(rename = "R")]
    pub replications: u64,
    pub seed: u64,
    pub initial: InitialState,
    pub alpha: f64,
}

impl SimConfig {
    /// Seed 0, control steady-state start, alpha = 0.05.
    pub fn new(model: PlatformModel, a: f64, n: u64, replications: u64) -> Self {
        SimConfig {
            model,
            a,
            n,
            replications,
            seed: 0,
            initial: InitialState::ControlSteadyState,
            alpha: 0.05,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_initial(mut self, initial: InitialState) -> Self {
        self.initial = initial;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_interior_allocation(self.a)?;
        if self.n < 2 {
            return invalid_arg(format!("N must be at least 2, got {}", self.n));
        }
        if self.n > u32::MAX as u64 {
            return invalid_arg("N exceeds the supported range");
        }
        if self.replications == 0 {
            return invalid_arg("R must be at least 1");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return invalid_arg(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        match &self.initial {
            InitialState::Fixed(k) if *k > self.model.k() => {
                invalid_arg(format!("initial state {k} exceeds K = {}", self.model.k()))
            }
            InitialState::Custom(d) if d.len() != self.model.n_states() => invalid_arg(format!(
                "initial distribution has {} states, model has {}",
                d.len(),
                self.model.n_states()
            )),
            _ => Ok(()),
        }
    }
}

/// Result of one simulated experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryOutcome {
    pub gte_hat: f64,
    pub var_hat: f64,
    pub t_stat: f64,
    pub n1: u32,
    pub n0: u32,
    pub rejected: bool,
    /// `n1 <= 1` or `n0 <= 1`.
    pub degenerate: bool,
}

/// Numbers of customers and bookings per arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ArmCounts {
    pub n1: u32,
    pub s1: u32,
    pub n0: u32,
    pub s0: u32,
}

impl ArmCounts {
    /// DM estimate, naive variance estimate, t-statistic and decision at
    /// critical value `crit`.
    pub fn outcome(&self, crit: f64) -> TrajectoryOutcome {
        let (n1, n0) = (self.n1 as f64, self.n0 as f64);
        let (s1, s0) = (self.s1 as f64, self.s0 as f64);
        let gte_hat = if self.n1 > 0 && self.n0 > 0 {
            s1 / n1 - s0 / n0
        } else {
            f64::NAN
        };
        let degenerate = self.n1 <= 1 || self.n0 <= 1;
        if degenerate {
            return TrajectoryOutcome {
                gte_hat,
                var_hat: f64::NAN,
                t_stat: f64::NAN,
                n1: self.n1,
                n0: self.n0,
                rejected: false,
                degenerate,
            };
        }
        // sum (Y - Ybar)^2 = s (1 - s/n) for 0/1 outcomes
        let var_hat =
            s1 * (1.0 - s1 / n1) / (n1 * (n1 - 1.0)) + s0 * (1.0 - s0 / n0) / (n0 * (n0 - 1.0));
        let t_stat = gte_hat / var_hat.sqrt();
        TrajectoryOutcome {
            gte_hat,
            var_hat,
            t_stat,
            n1: self.n1,
            n0: self.n0,
            rejected: t_stat.abs() > crit,
            degenerate,
        }
    }
}

/// `u < p` with `u` uniform on 53-bit dyadics is `(bits >> 11) < p * 2^53`.
const UNIT_BITS: f64 = (1u64 << 53) as f64;

#[inline]
fn threshold(p: f64) -> u64 {
    (p * UNIT_BITS) as u64
}

#[inline]
fn draw<R: RngCore>(rng: &mut R) -> u64 {
    rng.next_u64() >> 11
}

enum StartLaw {
    Point(usize),
    Cdf(Vec<f64>),
}

/// Model data precompiled into integer thresholds for the inner loop.
struct Engine {
    assign: u64,
    book: [Vec<u64>; 2],
    depart: Vec<u64>,
    start: StartLaw,
    n: u32,
    crit: f64,
}

impl Engine {
    fn new(config: &SimConfig) -> Result<Self> {
        config.validate()?;
        let m = &config.model;
        let lambda = m.lambda();
        let depart = (0..m.n_states())
            .map(|k| {
                let t = m.tau(k);
                threshold(t / (lambda + t))
            })
            .collect();
        let law = match &config.initial {
            InitialState::Fixed(k) => {
                return Ok(Self::assemble(config, depart, StartLaw::Point(*k)))
            }
            InitialState::ControlSteadyState => steady_state(m, Arm::Control)?,
            InitialState::TreatmentSteadyState => steady_state(m, Arm::Treatment)?,
            InitialState::ExperimentSteadyState => steady_state(m, Arm::Experiment(config.a))?,
            InitialState::Custom(d) => d.clone(),
        };
        let mut acc = 0.0;
        let cdf = law
            .probs()
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(Self::assemble(config, depart, StartLaw::Cdf(cdf)))
    }

    fn assemble(config: &SimConfig, depart: Vec<u64>, start: StartLaw) -> Self {
        let m = &config.model;
        Engine {
            assign: threshold(config.a),
            book: [
                m.p0().iter().map(|&p| threshold(p)).collect(),
                m.p1().iter().map(|&p| threshold(p)).collect(),
            ],
            depart,
            start,
            n: config.n as u32,
            crit: normal_quantile(config.alpha / 2.0).expect("alpha validated"),
        }
    }

    fn initial_state<R: RngCore>(&self, rng: &mut R) -> usize {
        match &self.start {
            StartLaw::Point(k) => *k,
            StartLaw::Cdf(cdf) => {
                let u = draw(rng) as f64 / UNIT_BITS;
                cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
            }
        }
    }

    fn counts<R: RngCore>(&self, rng: &mut R) -> ArmCounts {
        let mut k = self.initial_state(rng);
        let mut c = ArmCounts::default();
        let [book0, book1] = &self.book;
        for _ in 0..self.n {
            let treated = draw(rng) < self.assign;
            let thr = if treated { book1[k] } else { book0[k] };
            let booked = (draw(rng) < thr) as u32;
            if treated {
                c.n1 += 1;
                c.s1 += booked;
            } else {
                c.s0 += booked;
            }
            k += booked as usize;
            // Until the next arrival each booked listing may be released;
            // the next event is a release with probability tau(k)/(lambda + tau(k)).
            while k > 0 && draw(rng) < self.depart[k] {
                k -= 1;
            }
        }
        c.n0 = self.n - c.n1;
        c
    }

    fn run<R: RngCore>(&self, rng: &mut R) -> TrajectoryOutcome {
        self.counts(rng).outcome(self.crit)
    }
}

/// Stream for replication `rep` under `seed`.
pub fn replication_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// Simulates one experiment of `config.n` customers on the given stream.
pub fn simulate_trajectory<R: RngCore>(
    config: &SimConfig,
    rng: &mut R,
) -> Result<TrajectoryOutcome> {
    Ok(Engine::new(config)?.run(rng))
}

/// Aggregate of `R` replications.
#[derive(Debug, Clone, Serialize)]
pub struct ReplicationSummary {
    pub replications: u64,
    pub reject_count: u64,
    pub reject_rate: f64,
    pub reject_se: f64,
    /// Mean over replications where both arms are nonempty.
    pub mean_gte_hat: f64,
    pub gte_hat_se: f64,
    /// Sample variance of `gte_hat` over the same replications.
    pub gte_hat_var: f64,
    /// Mean of `var_hat` over nondegenerate replications.
    pub mean_var_hat: f64,
    pub degenerate_count: u64,
    pub config: SimConfig,
}

impl ReplicationSummary {
    fn from_outcomes(config: &SimConfig, outcomes: &[TrajectoryOutcome]) -> Self {
        let r = outcomes.len() as u64;
        let reject_count = outcomes.iter().filter(|o| o.rejected).count() as u64;
        let degenerate_count = outcomes.iter().filter(|o| o.degenerate).count() as u64;
        let reject_rate = reject_count as f64 / r as f64;
        let reject_se = (reject_rate * (1.0 - reject_rate) / r as f64).sqrt();

        let (mean_gte_hat, gte_hat_var, m) =
            mean_and_variance(outcomes.iter().map(|o| o.gte_hat).filter(|g| g.is_finite()));
        let gte_hat_se = if m > 0 {
            (gte_hat_var / m as f64).sqrt()
        } else {
            f64::NAN
        };
        let (mean_var_hat, _, _) =
            mean_and_variance(outcomes.iter().filter(|o| !o.degenerate).map(|o| o.var_hat));
        ReplicationSummary {
            replications: r,
            reject_count,
            reject_rate,
            reject_se,
            mean_gte_hat,
            gte_hat_se,
            gte_hat_var,
            mean_var_hat,
            degenerate_count,
            config: config.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}

/// Welford mean and unbiased variance, in iteration order.
fn mean_and_variance<I: Iterator<Item = f64>>(values: I) -> (f64, f64, u64) {
    let (mut n, mut mean, mut m2) = (0u64, 0.0, 0.0);
    for x in values {
        n += 1;
        let d = x - mean;
        mean += d / n as f64;
        m2 += d * (x - mean);
    }
    let var = if n > 1 { m2 / (n - 1) as f64 } else { f64::NAN };
    (if n > 0 { mean } else { f64::NAN }, var, n)
}

/// Header of the per-replication CSV.
pub const OUTCOME_CSV_HEADER: &str = "rep,gte_hat,var_hat,t_stat,n1,n0,rejected";

pub fn outcomes_to_csv(outcomes: &[TrajectoryOutcome]) -> String {
    let mut s = String::with_capacity(64 * (outcomes.len() + 1));
    s.push_str(OUTCOME_CSV_HEADER);
    s.push('\n');
    for (i, o) in outcomes.iter().enumerate() {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            i, o.gte_hat, o.var_hat, o.t_stat, o.n1, o.n0, o.rejected
        ));
    }
    s
}

/// Runs all replications and keeps every outcome, in replication order.
pub fn run_replications_detailed(
    config: &SimConfig,
) -> Result<(ReplicationSummary, Vec<TrajectoryOutcome>)> {
    let engine = Engine::new(config)?;
    let outcomes: Vec<TrajectoryOutcome> = (0..config.replications)
        .into_par_iter()
        .map(|rep| engine.run(&mut replication_rng(config.seed, rep)))
        .collect();
    Ok((
        ReplicationSummary::from_outcomes(config, &outcomes),
        outcomes,
    ))
}

pub fn run_replications(config: &SimConfig) -> Result<ReplicationSummary> {
    run_replications_detailed(config).map(|(s, _)| s)
}
