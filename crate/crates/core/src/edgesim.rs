//! Closed-loop edge/cloud simulation with byte accounting.
//!
//! Each round:
//!
//! ```text
//! UE source --collect--> edge (noise filter, score, select)
//!      edge --offload--> channel --> cloud (append, retrain, evaluate)
//!     cloud --model push--> edge
//! ```
//!
//! Time advances in rounds. Items the edge does not select stay buffered in
//! its pool and can be picked in a later round by a better model.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{Offload, Strategy};
use crate::classifier::{predict_fused, train, ClassifierError, ModelSnapshot, TrainConfig};
use crate::datagen::Dataset;
use crate::llselect::{iteration_schedule, SelectError};
use crate::rng::{stream, SimRng};
use crate::types::{LabeledSet, Sample, SampleError, Schema, UnlabeledSet};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum SimError {
    /// Nothing left to collect or select; the run ends normally.
    #[error("unlabeled pool exhausted")]
    PoolExhausted,
    #[error("invalid config: {field}: {message}")]
    ConfigInvalid { field: &'static str, message: String },
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("training failed: {0}")]
    Train(#[from] ClassifierError),
    #[error("selection failed: {0}")]
    Select(#[from] SelectError),
    #[error("training set update failed: {0}")]
    TrainingSet(#[from] SampleError),
    #[error("accounting violated: {0}")]
    Accounting(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    /// Count cloud-to-edge model pushes in `bytes_down`.
    pub count_model_push: bool,
    /// Per-message header added to every non-empty transfer.
    pub header_bytes: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            count_model_push: false,
            header_bytes: 64,
        }
    }
}

/// Batch sizes and arrival rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub k0: usize,
    pub n_iters: usize,
    #[serde(default)]
    pub growth: usize,
    /// Items the UE delivers per round; `None` spreads the pool evenly over
    /// `n_iters` rounds.
    #[serde(default)]
    pub arrivals_per_round: Option<usize>,
}

impl Schedule {
    pub fn ks(&self) -> Vec<usize> {
        iteration_schedule(self.k0, self.n_iters, self.growth)
    }

    pub fn arrivals(&self, pool_size: usize) -> usize {
        self.arrivals_per_round
            .unwrap_or_else(|| pool_size.div_ceil(self.n_iters.max(1)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    /// Label used in reports.
    pub name: String,
    pub strategy: Strategy,
    pub schedule: Schedule,
    pub channel: ChannelConfig,
    /// Probability the edge pre-filter drops a noise item.
    pub noise_detect_rate: f64,
    pub train: TrainConfig,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |field, message: String| Err(SimError::ConfigInvalid { field, message });
        if self.schedule.n_iters == 0 {
            return bad("schedule.n_iters", "must be at least 1".into());
        }
        if self.schedule.arrivals_per_round == Some(0) {
            return bad("schedule.arrivals_per_round", "must be positive".into());
        }
        if self.channel.header_bytes > 1024 {
            return bad(
                "channel.header_bytes",
                format!("must be at most 1024, got {}", self.channel.header_bytes),
            );
        }
        if !(0.0..=1.0).contains(&self.noise_detect_rate) {
            return bad(
                "edge.noise_detect_rate",
                format!("must be in [0, 1], got {}", self.noise_detect_rate),
            );
        }
        if let Strategy::Lltc(p) = &self.strategy {
            p.validate()
                .map_err(|e| SimError::ConfigInvalid {
                    field: "strategy.threshold",
                    message: e.to_string(),
                })?;
        }
        self.train.validate().map_err(|e| SimError::ConfigInvalid {
            field: "train",
            message: e.to_string(),
        })
    }
}

/// Splits `incoming` into (kept, discarded). Each noise item is discarded
/// with probability `detect_rate`; clean items are always kept. One draw is
/// consumed per noise item, in order.
pub fn noise_filter(incoming: Vec<Sample>, detect_rate: f64, rng: &mut SimRng) -> (Vec<Sample>, Vec<Sample>) {
    let mut kept = Vec::with_capacity(incoming.len());
    let mut discarded = Vec::new();
    for s in incoming {
        if s.is_noise() && rng.bernoulli(detect_rate) {
            discarded.push(s);
        } else {
            kept.push(s);
        }
    }
    (kept, discarded)
}

/// Fraction of `test` whose fused prediction matches the label.
pub fn accuracy(model: &ModelSnapshot, test: &LabeledSet) -> Result<f64, SimError> {
    if test.is_empty() {
        return Err(SimError::EmptyTestSet);
    }
    let mut hits = 0usize;
    for (s, y) in test.iter() {
        if predict_fused(model, s.feat_f(), s.feat_s())?.argmax() == y {
            hits += 1;
        }
    }
    Ok(hits as f64 / test.len() as f64)
}

/// Fraction of `samples` whose fused prediction equals the ground truth;
/// items without ground truth count as misses.
pub fn pool_accuracy(model: &ModelSnapshot, samples: &[Sample]) -> Result<f64, SimError> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for s in samples {
        if Some(predict_fused(model, s.feat_f(), s.feat_s())?.argmax()) == s.true_label() {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}

/// One offloaded item: the sample and the label the edge attached, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct OffloadItem {
    pub sample: Sample,
    pub label: Option<usize>,
}

/// Edge-to-cloud message.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OffloadMessage {
    pub items: Vec<OffloadItem>,
}

impl OffloadMessage {
    /// Wire size: header plus item sizes; an empty message is not sent.
    pub fn wire_bytes(&self, header_bytes: u64) -> u64 {
        if self.items.is_empty() {
            0
        } else {
            header_bytes + self.items.iter().map(|i| i.sample.size_bytes()).sum::<u64>()
        }
    }
}

/// Byte-metered link. Sender and receiver keep separate tallies.
#[derive(Debug, Clone, Default)]
pub struct Channel {
    config: ChannelConfig,
    sent_up: u64,
    received_up: u64,
    sent_down: u64,
    received_down: u64,
}

impl Channel {
    pub fn new(config: ChannelConfig) -> Self {
        Self {
            config,
            ..Self::default()
        }
    }

    /// Sends `msg` edge to cloud; returns (bytes charged, delivered message).
    fn send_up(&mut self, msg: OffloadMessage) -> (u64, OffloadMessage) {
        let bytes = msg.wire_bytes(self.config.header_bytes);
        self.sent_up += bytes;
        (bytes, msg)
    }

    fn deliver_up(&mut self, received: u64) {
        self.received_up += received;
    }

    /// Pushes a model cloud to edge; returns bytes charged to the ledger.
    fn push_model(&mut self, model: &ModelSnapshot) -> u64 {
        if !self.config.count_model_push {
            return 0;
        }
        let bytes = model.size_bytes();
        self.sent_down += bytes;
        self.received_down += model.to_bytes().len() as u64;
        bytes
    }

    pub fn sent_up(&self) -> u64 {
        self.sent_up
    }

    pub fn received_up(&self) -> u64 {
        self.received_up
    }

    pub fn sent_down(&self) -> u64 {
        self.sent_down
    }

    pub fn received_down(&self) -> u64 {
        self.received_down
    }
}

/// Per-round traffic counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct LedgerRow {
    pub round: usize,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub items_offloaded: usize,
    pub items_collected: usize,
    pub items_discarded_noise: usize,
}

/// Append-only per-round traffic record.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrafficLedger {
    rows: Vec<LedgerRow>,
}

impl TrafficLedger {
    pub fn record(&mut self, row: LedgerRow) {
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[LedgerRow] {
        &self.rows
    }

    pub fn total(&self) -> LedgerRow {
        self.rows.iter().fold(LedgerRow::default(), |acc, r| LedgerRow {
            round: r.round,
            bytes_up: acc.bytes_up + r.bytes_up,
            bytes_down: acc.bytes_down + r.bytes_down,
            items_offloaded: acc.items_offloaded + r.items_offloaded,
            items_collected: acc.items_collected + r.items_collected,
            items_discarded_noise: acc.items_discarded_noise + r.items_discarded_noise,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundReport {
    pub round: usize,
    pub strategy: String,
    pub seed: u64,
    /// Batch size requested this round.
    pub k: usize,
    pub selected: usize,
    pub shortfall: usize,
    pub training_set_size: usize,
    pub test_accuracy: f64,
    /// Cumulative share of edge-assigned labels that match ground truth;
    /// `None` until the edge has labeled something.
    pub auto_label_accuracy: Option<f64>,
    pub model_version: u64,
    pub ledger: LedgerRow,
    pub cum_bytes_up: u64,
    pub cum_bytes_down: u64,
    pub cum_items_collected: usize,
    pub pool_remaining: usize,
    pub never_collected: usize,
}

/// Whole-run summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub strategy: String,
    pub seed: u64,
    pub rounds: usize,
    pub bootstrap_accuracy: f64,
    pub final_accuracy: f64,
    /// Bootstrap model's fused accuracy over the whole unlabeled pool.
    pub pool_accuracy: f64,
    /// Final model's fused accuracy over the whole unlabeled pool.
    pub final_pool_accuracy: f64,
    pub auto_label_accuracy: Option<f64>,
    pub accepted: usize,
    pub accepted_correct: usize,
    pub total_bytes_up: u64,
    pub total_bytes_down: u64,
    pub items_offloaded: usize,
    pub training_set_size: usize,
    pub shortfall_rounds: usize,
    pub total_shortfall: usize,
    pub cloud_received_bytes: u64,
}

#[derive(Debug, Clone)]
struct EdgeNode {
    schema: Schema,
    pool: BTreeMap<u64, Sample>,
    model: ModelSnapshot,
    noise_rng: SimRng,
}

#[derive(Debug, Clone)]
struct CloudNode {
    training: LabeledSet,
    ids: HashSet<u64>,
    model: ModelSnapshot,
    received_bytes: u64,
    received_items: usize,
}

impl CloudNode {
    /// Measures and ingests a delivered message; returns bytes received.
    fn receive(&mut self, msg: OffloadMessage, header_bytes: u64) -> Result<(u64, usize), SimError> {
        let bytes = msg.wire_bytes(header_bytes);
        self.received_bytes += bytes;
        self.received_items += msg.items.len();
        let mut appended = 0;
        let mut additions = Vec::with_capacity(msg.items.len());
        for item in msg.items {
            // Raw items without ground truth carry nothing to learn from.
            let Some(label) = item.label else { continue };
            if !self.ids.insert(item.sample.id()) {
                return Err(SimError::Accounting(format!(
                    "sample {} offered to the training set twice",
                    item.sample.id()
                )));
            }
            additions.push((item.sample, label));
            appended += 1;
        }
        self.training.extend(additions)?;
        Ok((bytes, appended))
    }
}

/// Mutable state of one simulation run.
#[derive(Debug, Clone)]
pub struct SimState {
    config: SimConfig,
    round: usize,
    source: VecDeque<Sample>,
    arrivals_per_round: usize,
    edge: EdgeNode,
    cloud: CloudNode,
    channel: Channel,
    ledger: TrafficLedger,
    test: LabeledSet,
    unlabeled: Vec<Sample>,
    initial_pool: usize,
    offloaded: usize,
    discarded: usize,
    collected: usize,
    accepted: usize,
    accepted_correct: usize,
    accuracy: f64,
    bootstrap_accuracy: f64,
    pool_accuracy: f64,
    shortfall_rounds: usize,
    total_shortfall: usize,
}

impl SimState {
    /// Trains the bootstrap model on the labeled set and pushes it to the
    /// edge. Returns the state and the round-0 report.
    pub fn bootstrap(config: SimConfig, data: &Dataset) -> Result<(Self, RoundReport), SimError> {
        config.validate()?;
        let model = train(&data.labeled, &config.train)?;
        let mut channel = Channel::new(config.channel);
        let bytes_down = channel.push_model(&model);
        let accuracy = accuracy(&model, &data.test)?;
        let pool_accuracy = pool_accuracy(&model, data.unlabeled.samples())?;
        let source: VecDeque<Sample> = data.unlabeled.samples().iter().cloned().collect();
        let initial_pool = source.len();
        let mut ledger = TrafficLedger::default();
        ledger.record(LedgerRow {
            round: 0,
            bytes_down,
            ..LedgerRow::default()
        });
        let state = Self {
            arrivals_per_round: config.schedule.arrivals(initial_pool).max(1),
            round: 0,
            source,
            edge: EdgeNode {
                schema: data.schema,
                pool: BTreeMap::new(),
                model: model.clone(),
                noise_rng: SimRng::new(config.seed, stream::NOISE_FILTER),
            },
            cloud: CloudNode {
                ids: data.labeled.samples().iter().map(|s| s.id()).collect(),
                training: data.labeled.clone(),
                model,
                received_bytes: 0,
                received_items: 0,
            },
            channel,
            ledger,
            test: data.test.clone(),
            unlabeled: data.unlabeled.samples().to_vec(),
            initial_pool,
            offloaded: 0,
            discarded: 0,
            collected: 0,
            accepted: 0,
            accepted_correct: 0,
            accuracy,
            bootstrap_accuracy: accuracy,
            pool_accuracy,
            shortfall_rounds: 0,
            total_shortfall: 0,
            config,
        };
        let report = state.report(0, 0, 0);
        Ok((state, report))
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn ledger(&self) -> &TrafficLedger {
        &self.ledger
    }

    pub fn channel(&self) -> &Channel {
        &self.channel
    }

    pub fn cloud_received_bytes(&self) -> u64 {
        self.cloud.received_bytes
    }

    pub fn training_set(&self) -> &LabeledSet {
        &self.cloud.training
    }

    pub fn edge_model(&self) -> &ModelSnapshot {
        &self.edge.model
    }

    pub fn pool_len(&self) -> usize {
        self.edge.pool.len()
    }

    pub fn never_collected(&self) -> usize {
        self.source.len()
    }

    pub fn initial_pool(&self) -> usize {
        self.initial_pool
    }

    pub fn items_offloaded(&self) -> usize {
        self.offloaded
    }

    pub fn items_discarded(&self) -> usize {
        self.discarded
    }

    /// `offloaded + discarded + buffered + never collected == initial pool`.
    pub fn check_conservation(&self) -> Result<(), SimError> {
        let total = self.offloaded + self.discarded + self.edge.pool.len() + self.source.len();
        if total != self.initial_pool {
            return Err(SimError::Accounting(format!(
                "item conservation: {} offloaded + {} discarded + {} pooled + {} uncollected != {}",
                self.offloaded,
                self.discarded,
                self.edge.pool.len(),
                self.source.len(),
                self.initial_pool
            )));
        }
        if self.cloud.received_bytes != self.ledger.total().bytes_up
            || self.channel.received_up != self.channel.sent_up
        {
            return Err(SimError::Accounting(format!(
                "byte conservation: cloud received {}, ledger {}",
                self.cloud.received_bytes,
                self.ledger.total().bytes_up
            )));
        }
        Ok(())
    }

    fn report(&self, k: usize, selected: usize, shortfall: usize) -> RoundReport {
        let total = self.ledger.total();
        RoundReport {
            round: self.round,
            strategy: self.config.name.clone(),
            seed: self.config.seed,
            k,
            selected,
            shortfall,
            training_set_size: self.cloud.training.len(),
            test_accuracy: self.accuracy,
            auto_label_accuracy: (self.accepted > 0).then(|| self.accepted_correct as f64 / self.accepted as f64),
            model_version: self.edge.model.version(),
            ledger: *self.ledger.rows().last().expect("bootstrap row exists"),
            cum_bytes_up: total.bytes_up,
            cum_bytes_down: total.bytes_down,
            cum_items_collected: self.collected,
            pool_remaining: self.edge.pool.len(),
            never_collected: self.source.len(),
        }
    }

    /// Runs one collect/filter/select/offload/retrain/push/evaluate cycle.
    pub fn run_round(&mut self, strategy: &Strategy, k: usize) -> Result<RoundReport, SimError> {
        if self.source.is_empty() && self.edge.pool.is_empty() {
            return Err(SimError::PoolExhausted);
        }
        self.round += 1;
        let round = self.round;

        // collect + pre-filter
        let take = self.arrivals_per_round.min(self.source.len());
        let incoming: Vec<Sample> = self.source.drain(..take).collect();
        self.collected += incoming.len();
        let (kept, dropped) = noise_filter(incoming, self.config.noise_detect_rate, &mut self.edge.noise_rng);
        self.discarded += dropped.len();
        for s in kept {
            self.edge.pool.insert(s.id(), s);
        }

        // score + select
        let offload = if k == 0 || self.edge.pool.is_empty() {
            None
        } else {
            let pool = UnlabeledSet::new(self.edge.schema, self.edge.pool.values().cloned().collect())?;
            let select_seed = self.config.seed ^ (round as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            Some(strategy.select(&self.edge.model, &pool, k, select_seed)?)
        };

        let mut message = OffloadMessage::default();
        let mut shortfall = 0;
        match &offload {
            Some(Offload::Labeled(batch)) => {
                shortfall = batch.shortfall().min(k);
                for e in &batch.entries {
                    let sample = self.edge.pool.remove(&e.sample_id).expect("selected from pool");
                    self.accepted += 1;
                    if sample.true_label() == Some(e.label) {
                        self.accepted_correct += 1;
                    }
                    message.items.push(OffloadItem {
                        sample,
                        label: Some(e.label),
                    });
                }
            }
            Some(Offload::Raw(ids)) => {
                for id in ids {
                    let sample = self.edge.pool.remove(id).expect("selected from pool");
                    // the cloud attaches ground truth on arrival
                    let label = sample.true_label();
                    message.items.push(OffloadItem { sample, label });
                }
            }
            None => shortfall = if self.edge.pool.is_empty() { k } else { 0 },
        }
        if shortfall > 0 {
            self.shortfall_rounds += 1;
            self.total_shortfall += shortfall;
        }
        let items_offloaded = message.items.len();
        self.offloaded += items_offloaded;

        // offload over the channel
        let (bytes_up, delivered) = self.channel.send_up(message);
        let (received, appended) = self.cloud.receive(delivered, self.config.channel.header_bytes)?;
        self.channel.deliver_up(received);

        // retrain, push, evaluate
        let mut bytes_down = 0;
        if appended > 0 {
            let version = self.cloud.model.version() + 1;
            self.cloud.model = train(&self.cloud.training, &self.config.train)?.with_version(version);
            bytes_down = self.channel.push_model(&self.cloud.model);
            self.edge.model = self.cloud.model.clone();
            self.accuracy = accuracy(&self.cloud.model, &self.test)?;
        }

        self.ledger.record(LedgerRow {
            round,
            bytes_up,
            bytes_down,
            items_offloaded,
            items_collected: take,
            items_discarded_noise: dropped.len(),
        });
        self.check_conservation()?;
        Ok(self.report(k, items_offloaded, shortfall))
    }

    pub fn summary(&self) -> Result<RunSummary, SimError> {
        let total = self.ledger.total();
        Ok(RunSummary {
            strategy: self.config.name.clone(),
            seed: self.config.seed,
            rounds: self.round,
            bootstrap_accuracy: self.bootstrap_accuracy,
            final_accuracy: self.accuracy,
            pool_accuracy: self.pool_accuracy,
            final_pool_accuracy: pool_accuracy(&self.edge.model, &self.unlabeled)?,
            auto_label_accuracy: (self.accepted > 0).then(|| self.accepted_correct as f64 / self.accepted as f64),
            accepted: self.accepted,
            accepted_correct: self.accepted_correct,
            total_bytes_up: total.bytes_up,
            total_bytes_down: total.bytes_down,
            items_offloaded: self.offloaded,
            training_set_size: self.cloud.training.len(),
            shortfall_rounds: self.shortfall_rounds,
            total_shortfall: self.total_shortfall,
            cloud_received_bytes: self.cloud.received_bytes,
        })
    }
}

/// Reports from one complete run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunOutput {
    /// Round 0 (bootstrap) first.
    pub reports: Vec<RoundReport>,
    pub summary: RunSummary,
}

/// Bootstraps, then runs one round per scheduled `k` until the schedule or
/// the pool runs out.
pub fn run_experiment(config: &SimConfig, data: &Dataset) -> Result<RunOutput, SimError> {
    let (mut state, first) = SimState::bootstrap(config.clone(), data)?;
    let mut reports = vec![first];
    for k in config.schedule.ks() {
        match state.run_round(&config.strategy, k) {
            Ok(r) => reports.push(r),
            Err(SimError::PoolExhausted) => break,
            Err(e) => return Err(e),
        }
    }
    Ok(RunOutput {
        reports,
        summary: state.summary()?,
    })
}

/// Column order of the per-round CSV.
pub const REPORT_COLUMNS: [&str; 20] = [
    "strategy",
    "seed",
    "round",
    "k",
    "selected",
    "shortfall",
    "training_set_size",
    "test_accuracy",
    "auto_label_accuracy",
    "model_version",
    "bytes_up",
    "bytes_down",
    "items_offloaded",
    "items_collected",
    "items_discarded_noise",
    "cum_bytes_up",
    "cum_bytes_down",
    "cum_items_collected",
    "pool_remaining",
    "never_collected",
];

pub fn report_csv_header() -> String {
    REPORT_COLUMNS.join(",")
}

/// One CSV row in [`REPORT_COLUMNS`] order (no trailing newline).
pub fn report_csv_row(r: &RoundReport) -> String {
    let mut row = String::new();
    let auto = r.auto_label_accuracy.map(|a| a.to_string()).unwrap_or_default();
    write!(
        row,
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        r.strategy,
        r.seed,
        r.round,
        r.k,
        r.selected,
        r.shortfall,
        r.training_set_size,
        r.test_accuracy,
        auto,
        r.model_version,
        r.ledger.bytes_up,
        r.ledger.bytes_down,
        r.ledger.items_offloaded,
        r.ledger.items_collected,
        r.ledger.items_discarded_noise,
        r.cum_bytes_up,
        r.cum_bytes_down,
        r.cum_items_collected,
        r.pool_remaining,
        r.never_collected,
    )
    .unwrap();
    row
}

pub fn reports_to_csv(reports: &[RoundReport]) -> String {
    let mut out = report_csv_header();
    out.push('\n');
    for r in reports {
        out.push_str(&report_csv_row(r));
        out.push('\n');
    }
    out
}
