//! Whole-run driver: bootstrap training, network setup, online workload
//! admission and the epoch loop.

use std::collections::{BTreeSet, VecDeque};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adversary::{replay_inject, Behavior};
use crate::classifier::{accuracy, train, TrainingExample, WeightVector};
use crate::config::{BootstrapConfig, RunConfig};
use crate::consensus::{Network, ValidatorState};
use crate::error::{Error, Result};
use crate::events::Event;
use crate::ledger::{Ledger, Origin, Transaction, TxId, UserId, ValidatorId};
use crate::metrics::{compute_metrics, RunMetrics};
use crate::net::Clock;
use crate::workload::{arrival_schedule, A5Source, generate_transaction, init_users, sample_attributes};

const STREAM_BOOTSTRAP: u64 = 0;
const STREAM_WORKLOAD: u64 = 1;
const STREAM_SETUP: u64 = 2;
const STREAM_HONESTY: u64 = 3;
const STREAM_ATTACK: u64 = 4;
const STREAM_EPOCH_BASE: u64 = 1 << 32;

/// Independent random stream `stream` of `seed`.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Labelled examples: the first half valid, the rest invalid.
pub fn labelled_examples<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<TrainingExample> {
    (0..n)
        .map(|i| {
            let label = i < n.div_ceil(2);
            TrainingExample { attributes: sample_attributes(label, rng), label }
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct Bootstrap {
    pub weights: WeightVector,
    pub heldout_accuracy: f64,
}

/// Fits the shared initial weights and scores them on a fresh heldout set.
pub fn bootstrap(cfg: &BootstrapConfig, opts: &crate::classifier::TrainOptions, seed: u64) -> Result<Bootstrap> {
    if cfg.training_size < 2 || cfg.heldout_size < 1 {
        return Err(Error::config("bootstrap needs training_size >= 2 and heldout_size >= 1"));
    }
    let mut rng = stream(seed, STREAM_BOOTSTRAP);
    let training = labelled_examples(cfg.training_size, &mut rng);
    let heldout = labelled_examples(cfg.heldout_size, &mut rng);
    let weights = train(&training, opts).ok_or_else(|| Error::invariant("bootstrap set holds a single class"))?;
    if !weights.is_finite() {
        return Err(Error::invariant("bootstrap training diverged"));
    }
    Ok(Bootstrap { heldout_accuracy: accuracy(&weights, &heldout), weights })
}

pub fn load_weights(path: &std::path::Path) -> Result<WeightVector> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read weights {}: {e}", path.display())))?;
    let w: WeightVector = serde_json::from_str(&text)?;
    if !w.is_finite() {
        return Err(Error::config(format!("weights in {} are not finite", path.display())));
    }
    Ok(w)
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub events: Vec<Event>,
    pub metrics: RunMetrics,
    pub weights: WeightVector,
    pub heldout_accuracy: Option<f64>,
    /// Every submitted (non-genesis) transaction.
    pub workload: Vec<Transaction>,
    pub network: Network,
}

/// Runs one configuration end to end.
pub fn simulate(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let (weights, heldout) = match &cfg.bootstrap.weights {
        Some(path) => (load_weights(path)?, None),
        None => {
            let b = bootstrap(&cfg.bootstrap, &cfg.protocol.train, cfg.seed)?;
            (b.weights, Some(b.heldout_accuracy))
        }
    };
    simulate_with_weights(cfg, weights, heldout)
}

pub fn simulate_with_weights(cfg: &RunConfig, weights: WeightVector, heldout: Option<f64>) -> Result<RunOutput> {
    cfg.validate()?;
    let params = cfg.protocol.params();
    let m = params.m;
    let community = m / params.lambda();

    let mut setup = stream(cfg.seed, STREAM_SETUP);
    let users = init_users(cfg.workload.n_users, &mut setup);
    let validators: Vec<f64> = (0..m).map(|_| setup.random_range(0.3..=0.8)).collect();
    let mut ledger = Ledger::new();
    for _ in 0..cfg.workload.genesis {
        let owner = UserId(setup.random_range(0..users.len()) as u32);
        let attrs = sample_attributes(true, &mut setup);
        let custodians: Vec<ValidatorId> =
            index::sample(&mut setup, m, community).into_iter().map(|i| ValidatorId(i as u32)).collect();
        ledger.push_genesis(owner, 1.0 / attrs.inverse_value, attrs, custodians);
    }

    let honest = cfg.adversary.assign_honesty(m, &mut stream(cfg.seed, STREAM_HONESTY));
    let validators = validators
        .into_iter()
        .zip(&honest)
        .enumerate()
        .map(|(i, (rho, &h))| ValidatorState::new(ValidatorId(i as u32), h, rho, weights.clone()))
        .collect();

    let mut events = vec![Event::Start {
        seed: cfg.seed,
        validators: m,
        f: params.f,
        lambda: params.lambda(),
        dishonest: honest.iter().filter(|h| !**h).count(),
        round_time_ms: cfg.net.round_time_ms,
        link_latency_ms: cfg.net.link_latency_ms,
        settlement_ms: cfg.net.settlement_ms,
        heldout_accuracy: heldout,
    }];

    let mut workload_rng = stream(cfg.seed, STREAM_WORKLOAD);
    let arrivals = arrival_schedule(&cfg.workload, &mut workload_rng);
    let mut attack_rng = stream(cfg.seed, STREAM_ATTACK);
    let window_ms = (cfg.workload.duration * 60_000.0).round() as u64;
    let replay_times: Vec<u64> = if cfg.adversary.behavior == Behavior::ReplayInjector {
        let k = cfg.adversary.replays as u64;
        (1..=k).map(|i| i * window_ms / (k + 1)).collect()
    } else {
        Vec::new()
    };
    let cutoff = cfg.workload.drain_minutes.map(|d| window_ms + (d * 60_000.0).round() as u64);

    let mut net = Network {
        params,
        net: cfg.net.clone(),
        adversary: cfg.adversary.clone(),
        validators,
        users,
        ledger,
        clock: Clock::at(0),
        epoch: 0,
    };

    let mut queue: VecDeque<TxId> = VecDeque::new();
    let mut workload = Vec::new();
    let mut next_arrival = 0usize;
    let mut next_replay = 0usize;
    let mut replayed: BTreeSet<TxId> = BTreeSet::new();
    let mut decided = 0usize;

    loop {
        let now = net.clock.now();
        while next_arrival < arrivals.len() && arrivals[next_arrival].time_ms <= now {
            let a = arrivals[next_arrival];
            let user = workload_rng.random_range(0..net.users.len());
            let tx = generate_transaction(
                a.valid,
                &net.users[user],
                net.ledger.confirmed_pool(),
                &net.ledger,
                (cfg.workload.a5_source == A5Source::Owners).then_some(net.users.as_slice()),
                a.time_ms,
                &mut workload_rng,
            )?;
            net.users[user].last_submit_round = Some(net.epoch);
            events.push(submit_event(&tx, false));
            workload.push(tx.clone());
            queue.push_back(net.ledger.submit(tx)?);
            next_arrival += 1;
        }
        while next_replay < replay_times.len() && replay_times[next_replay] <= now {
            let candidates: Vec<TxId> = net
                .ledger
                .confirmed_pool()
                .iter()
                .copied()
                .filter(|id| !replayed.contains(id))
                .filter(|&id| net.ledger.get(id).is_ok_and(|t| t.origin == Origin::Submitted))
                .collect();
            if candidates.is_empty() {
                break;
            }
            let target = candidates[attack_rng.random_range(0..candidates.len())];
            let tx = replay_inject(&net.ledger, target, now)?;
            replayed.insert(target);
            events.push(Event::Attack { tx: tx.id, replay_of: target, time_ms: now });
            events.push(submit_event(&tx, true));
            workload.push(tx.clone());
            queue.push_back(net.ledger.submit(tx)?);
            next_replay += 1;
        }

        if cutoff.is_some_and(|c| now >= c) {
            break;
        }
        if queue.is_empty() {
            let upcoming = arrivals.get(next_arrival).map(|a| a.time_ms);
            match upcoming {
                Some(t) => net.clock.advance_to(t),
                None => break,
            }
            continue;
        }

        let mut rng = stream(cfg.seed, STREAM_EPOCH_BASE + net.epoch);
        let report = net.run_epoch(&mut queue, &mut rng)?;
        decided += report.outcomes.len();
        events.extend(report.outcomes.iter().cloned().map(Event::Decision));
        events.push(Event::epoch(&report));
    }

    events.push(Event::End {
        time_ms: net.clock.now(),
        epochs: net.epoch,
        submitted: workload.len(),
        decided,
        backlog: queue.len(),
    });
    let metrics = compute_metrics(&events)?;
    Ok(RunOutput { events, metrics, weights, heldout_accuracy: heldout, workload, network: net })
}

fn submit_event(tx: &Transaction, replay: bool) -> Event {
    Event::Submit {
        tx: tx.id,
        time_ms: tx.submit_time,
        user: tx.submitter,
        valid: tx.truth_valid,
        witness_size: tx.witness_size() as u32,
        replay,
    }
}
