//! Synthetic workload: attribute sampling, transaction construction and
//! arrival scheduling.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ledger::{AttributeVector, Ledger, Origin, Transaction, TxId, UserId};

/// Cap on the elapsed-rounds attribute; also used for a user's first transaction.
pub const MAX_ELAPSED_ROUNDS: u32 = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadConfig {
    /// Transactions per simulated minute.
    pub gamma: f64,
    pub n_users: usize,
    pub invalid_fraction: f64,
    /// Length of the arrival window in simulated minutes.
    pub duration: f64,
    /// Number of pre-confirmed genesis entries seeding the witness pool.
    #[serde(default = "default_genesis")]
    pub genesis: usize,
    /// Extra simulated minutes allowed after the last arrival. Unset means
    /// run until the queue is empty.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drain_minutes: Option<f64>,
    #[serde(default)]
    pub a5_source: A5Source,
}

/// Where the sender-reliability attribute of a generated transaction comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum A5Source {
    /// Drawn from the attribute law like the other four attributes.
    #[default]
    Sampled,
    /// Value-weighted reliability of the witness owners.
    Owners,
}

fn default_genesis() -> usize {
    64
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        Self {
            gamma: 600.0,
            n_users: 100,
            invalid_fraction: 0.5,
            duration: 1.0,
            genesis: default_genesis(),
            drain_minutes: None,
            a5_source: A5Source::Sampled,
        }
    }
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::config("workload.gamma must be > 0"));
        }
        if self.n_users < 1 {
            return Err(Error::config("workload.n_users must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.invalid_fraction) {
            return Err(Error::config("workload.invalid_fraction must lie in [0, 1]"));
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(Error::config("workload.duration must be >= 0"));
        }
        if self.genesis < 1 {
            return Err(Error::config("workload.genesis must be >= 1"));
        }
        if let Some(d) = self.drain_minutes {
            if d.is_nan() || d < 0.0 {
                return Err(Error::config("workload.drain_minutes must be >= 0"));
            }
        }
        Ok(())
    }

    pub fn total_transactions(&self) -> usize {
        (self.gamma * self.duration).round() as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: UserId,
    pub reliability: f64,
    pub last_submit_round: Option<u64>,
}

/// Generating law of the attribute vector for one validity class.
#[derive(Clone, Copy, Debug)]
pub struct AttributeLaw {
    pub a1_shape: f64,
    pub a1_scale: f64,
    pub a2_mean: f64,
    pub a2_sd: f64,
    pub a3_mean: f64,
    pub a4_mean: f64,
    pub a5_mean: f64,
    pub a5_sd: f64,
}

pub const VALID_LAW: AttributeLaw = AttributeLaw {
    a1_shape: 3.0,
    a1_scale: 1.0,
    a2_mean: 0.5,
    a2_sd: 0.15,
    a3_mean: 10.0,
    a4_mean: 1.5,
    a5_mean: 0.7,
    a5_sd: 0.1,
};

pub const INVALID_LAW: AttributeLaw = AttributeLaw {
    a1_shape: 17.5,
    a1_scale: 0.5,
    a2_mean: 0.25,
    a2_sd: 0.075,
    a3_mean: 5.0,
    a4_mean: 2.5,
    a5_mean: 0.4,
    a5_sd: 0.1,
};

impl AttributeLaw {
    pub fn for_validity(valid: bool) -> &'static AttributeLaw {
        if valid {
            &VALID_LAW
        } else {
            &INVALID_LAW
        }
    }
}

// Draws until `accept` holds, i.e. samples the distribution truncated to the
// accepted region. Every region used here has substantial mass.
fn truncated<D, R>(dist: &D, rng: &mut R, accept: impl Fn(f64) -> bool) -> f64
where
    D: Distribution<f64>,
    R: Rng + ?Sized,
{
    loop {
        let x = dist.sample(rng);
        if accept(x) {
            return x;
        }
    }
}

/// Draws an attribute vector from the class-conditional generating law,
/// truncated to each attribute's admissible range.
pub fn sample_attributes<R: Rng + ?Sized>(valid: bool, rng: &mut R) -> AttributeVector {
    let law = AttributeLaw::for_validity(valid);
    let a1 = Gamma::new(law.a1_shape, law.a1_scale).expect("gamma parameters");
    let a2 = Normal::new(law.a2_mean, law.a2_sd).expect("normal parameters");
    let a3 = Exp::new(1.0 / law.a3_mean).expect("exp parameters");
    let a4 = Poisson::new(law.a4_mean).expect("poisson parameters");
    let a5 = Normal::new(law.a5_mean, law.a5_sd).expect("normal parameters");

    let inverse_value = truncated(&a1, rng, |x| x > 0.0 && x <= 10.0);
    let fee = truncated(&a2, rng, |x| x > 0.0);
    let elapsed = truncated(&a3, rng, |x| x > 0.0 && x <= f64::from(MAX_ELAPSED_ROUNDS));
    let witnesses = truncated(&a4, rng, |x| x >= 1.0);
    let sender_reliability = truncated(&a5, rng, |x| x > 0.0 && x <= 1.0);

    AttributeVector {
        inverse_value,
        fee,
        elapsed_rounds: elapsed.floor() as u32,
        inverse_witness_size: 1.0 / witnesses,
        sender_reliability,
    }
}

/// Draws a uniformly random non-empty subset of `w` positions.
pub fn sample_conflict_bits<R: Rng + ?Sized>(w: usize, rng: &mut R) -> Vec<bool> {
    assert!(w >= 1);
    loop {
        let bits: Vec<bool> = (0..w).map(|_| rng.random::<bool>()).collect();
        if bits.iter().any(|&b| b) {
            return bits;
        }
    }
}

/// Value-weighted reliability of the owners of `witnesses`.
pub fn owner_weighted_reliability(
    ledger: &Ledger,
    witnesses: &[TxId],
    users: &[UserProfile],
) -> Result<Option<f64>> {
    let mut total = 0.0;
    let mut weighted = 0.0;
    for &j in witnesses {
        let tx = ledger.get(j)?;
        let Some(owner) = users.get(tx.submitter.index()) else {
            continue;
        };
        total += tx.value;
        weighted += tx.value * owner.reliability;
    }
    Ok((total > 0.0).then(|| weighted / total))
}

/// Builds the next transaction for `user`, drawing witnesses from `pool`.
/// With `owners` given, the sender-reliability attribute is recomputed from
/// the witness owners.
pub fn generate_transaction<R: Rng + ?Sized>(
    valid: bool,
    user: &UserProfile,
    pool: &[TxId],
    ledger: &Ledger,
    owners: Option<&[UserProfile]>,
    submit_time: u64,
    rng: &mut R,
) -> Result<Transaction> {
    if pool.is_empty() {
        return Err(Error::config("witness pool is empty"));
    }
    let mut attributes = sample_attributes(valid, rng);
    if user.last_submit_round.is_none() {
        attributes.elapsed_rounds = MAX_ELAPSED_ROUNDS;
    }

    let w = attributes.witness_size().min(pool.len()).max(1);
    attributes.inverse_witness_size = 1.0 / w as f64;

    let mut witness_ids: Vec<TxId> = index::sample(rng, pool.len(), w)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    witness_ids.sort_unstable();

    let conflict_bits = if valid { vec![false; w] } else { sample_conflict_bits(w, rng) };

    if let Some(users) = owners {
        if let Some(a5) = owner_weighted_reliability(ledger, &witness_ids, users)? {
            attributes.sender_reliability = a5.clamp(1e-6, 1.0);
        }
    }

    Ok(Transaction {
        id: ledger.next_id(),
        submitter: user.user_id,
        witness_ids,
        attributes,
        truth_valid: valid,
        conflict_bits,
        value: 1.0 / attributes.inverse_value,
        fee: attributes.fee,
        submit_time,
        origin: Origin::Submitted,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arrival {
    pub time_ms: u64,
    pub valid: bool,
}

/// Evenly spaced arrivals at `gamma` per minute over `duration` minutes.
pub fn arrival_schedule<R: Rng + ?Sized>(config: &WorkloadConfig, rng: &mut R) -> Vec<Arrival> {
    let total = config.total_transactions();
    let spacing = 60_000.0 / config.gamma;
    (0..total)
        .map(|i| Arrival {
            time_ms: (i as f64 * spacing).floor() as u64,
            valid: rng.random::<f64>() >= config.invalid_fraction,
        })
        .collect()
}

/// Users with reliabilities drawn uniformly from `[0.3, 0.8]`.
pub fn init_users<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<UserProfile> {
    (0..n)
        .map(|i| UserProfile {
            user_id: UserId(i as u32),
            reliability: rng.random_range(0.3..=0.8),
            last_submit_round: None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::ValidatorId;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn genesis_ledger(n: usize) -> Ledger {
        let mut ledger = Ledger::new();
        let mut r = rng(1);
        for i in 0..n {
            let a = sample_attributes(true, &mut r);
            ledger.push_genesis(UserId((i % 4) as u32), 1.0 / a.inverse_value, a, vec![ValidatorId(0)]);
        }
        ledger
    }

    #[test]
    fn attributes_stay_in_range() {
        let mut r = rng(7);
        for i in 0..20_000 {
            let a = sample_attributes(i % 2 == 0, &mut r);
            assert!(a.in_range(), "{a:?}");
            assert!(a.elapsed_rounds <= 50);
            assert!(a.witness_size() >= 1);
            assert_eq!(a.inverse_witness_size, 1.0 / a.witness_size() as f64);
        }
    }

    #[test]
    fn valid_a5_follows_its_normal_law() {
        let mut r = rng(3);
        let n = 20_000;
        let xs: Vec<f64> = (0..n).map(|_| sample_attributes(true, &mut r).sender_reliability).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        // truncation at (0, 1] removes < 0.2% of mass, so moments are close to N(0.7, 0.1)
        assert!((mean - 0.7).abs() < 0.005, "mean {mean}");
        assert!((var.sqrt() - 0.1).abs() < 0.005, "sd {}", var.sqrt());
    }

    #[test]
    fn valid_transaction_has_clean_bits() {
        let ledger = genesis_ledger(10);
        let users = init_users(4, &mut rng(2));
        let pool = ledger.confirmed_pool().to_vec();
        let mut r = rng(5);
        for _ in 0..200 {
            let tx = generate_transaction(true, &users[0], &pool, &ledger, Some(&users), 0, &mut r).unwrap();
            assert!(tx.truth_valid);
            assert!(tx.conflict_bits.iter().all(|&b| !b));
            assert_eq!(tx.conflict_bits.len(), tx.witness_ids.len());
            assert_eq!(tx.attributes.witness_size(), tx.witness_ids.len());
            tx.check().unwrap();
        }
    }

    #[test]
    fn single_witness_invalid_is_forced_conflict() {
        assert_eq!(sample_conflict_bits(1, &mut rng(0)), vec![true]);
    }

    #[test]
    fn first_transaction_is_maximally_stale() {
        let ledger = genesis_ledger(5);
        let users = init_users(2, &mut rng(2));
        let pool = ledger.confirmed_pool().to_vec();
        let tx = generate_transaction(false, &users[1], &pool, &ledger, Some(&users), 0, &mut rng(4)).unwrap();
        assert_eq!(tx.attributes.elapsed_rounds, MAX_ELAPSED_ROUNDS);
    }

    #[test]
    fn witness_count_shrinks_to_pool() {
        let ledger = genesis_ledger(1);
        let users = init_users(4, &mut rng(2));
        let pool = ledger.confirmed_pool().to_vec();
        let mut r = rng(9);
        for _ in 0..100 {
            let tx = generate_transaction(false, &users[0], &pool, &ledger, Some(&users), 0, &mut r).unwrap();
            assert_eq!(tx.witness_ids, vec![TxId(0)]);
            assert_eq!(tx.conflict_bits, vec![true]);
            assert_eq!(tx.attributes.inverse_witness_size, 1.0);
        }
        assert!(generate_transaction(true, &users[0], &[], &ledger, Some(&users), 0, &mut r).is_err());
    }

    #[test]
    fn a5_is_value_weighted_owner_reliability() {
        let mut ledger = Ledger::new();
        let a = sample_attributes(true, &mut rng(1));
        ledger.push_genesis(UserId(0), 1.0, a, vec![ValidatorId(0)]);
        ledger.push_genesis(UserId(1), 3.0, a, vec![ValidatorId(0)]);
        let mut users = init_users(2, &mut rng(0));
        users[0].reliability = 0.2;
        users[1].reliability = 0.6;
        let got = owner_weighted_reliability(&ledger, &[TxId(0), TxId(1)], &users).unwrap().unwrap();
        assert!((got - (0.2 * 1.0 + 0.6 * 3.0) / 4.0).abs() < 1e-15);
    }

    #[test]
    fn arrivals_are_evenly_spaced() {
        let cfg = WorkloadConfig { gamma: 600.0, duration: 1.0, ..Default::default() };
        let arrivals = arrival_schedule(&cfg, &mut rng(0));
        assert_eq!(arrivals.len(), 600);
        for (i, a) in arrivals.iter().enumerate() {
            assert_eq!(a.time_ms, 100 * i as u64);
        }
        let cfg = WorkloadConfig { gamma: 6000.0, duration: 5.0, ..Default::default() };
        assert_eq!(arrival_schedule(&cfg, &mut rng(0)).len(), 30_000);
    }

    #[test]
    fn same_seed_same_workload() {
        let cfg = WorkloadConfig::default();
        assert_eq!(arrival_schedule(&cfg, &mut rng(11)), arrival_schedule(&cfg, &mut rng(11)));
        let a: Vec<_> = (0..50).map(|i| sample_attributes(i % 3 == 0, &mut rng(i))).collect();
        let b: Vec<_> = (0..50).map(|i| sample_attributes(i % 3 == 0, &mut rng(i))).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation() {
        assert!(WorkloadConfig::default().validate().is_ok());
        assert!(WorkloadConfig { gamma: 0.0, ..Default::default() }.validate().is_err());
        assert!(WorkloadConfig { n_users: 0, ..Default::default() }.validate().is_err());
        assert!(WorkloadConfig { invalid_fraction: 1.5, ..Default::default() }.validate().is_err());
    }
}
