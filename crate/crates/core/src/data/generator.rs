//! Synthetic payment-behavior corpus.
//!
//! Users belong to personas. A persona fixes an amount scale, an activity
//! window, event rate and first-order transition structure for every
//! attribute. Fraud users switch to a class-specific regime at their
//! anomaly onset. Everything is a pure function of the configuration.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tokenize::{bucketize_amount, bucketize_gap};
use super::{BehaviorEvent, BehaviorSequence, VocabSpec};
use crate::error::{Error, Result};
use crate::rng::{indexed_stream, stream};

/// The eight fraud classes; discriminant is the label id.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FraudClass {
    FreeGift = 1,
    AdultContent = 2,
    Undelivered = 3,
    Gaming = 4,
    Other = 5,
    FinancialCredit = 6,
    PartTimeJob = 7,
    Dating = 8,
}

impl FraudClass {
    pub const ALL: [FraudClass; 8] = [
        FraudClass::FreeGift,
        FraudClass::AdultContent,
        FraudClass::Undelivered,
        FraudClass::Gaming,
        FraudClass::Other,
        FraudClass::FinancialCredit,
        FraudClass::PartTimeJob,
        FraudClass::Dating,
    ];

    pub fn label(self) -> u32 {
        self as u32
    }

    pub fn name(self) -> &'static str {
        match self {
            FraudClass::FreeGift => "Free Gift Fraud",
            FraudClass::AdultContent => "Adult Content Fraud",
            FraudClass::Undelivered => "Undelivered Transaction",
            FraudClass::Gaming => "Gaming Fraud",
            FraudClass::Other => "Other Fraud",
            FraudClass::FinancialCredit => "Financial Credit Fraud",
            FraudClass::PartTimeJob => "Part-Time Job Fraud",
            FraudClass::Dating => "Dating Fraud",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub n_users: usize,
    pub n_personas: usize,
    /// Fraction of users carrying a planted fraud regime.
    pub fraud_fraction: f64,
    /// Probability of each fraud class (labels 1..=8) among fraud users.
    pub class_mix: Vec<f64>,
    /// Minimum events per user; users below it are never emitted.
    pub min_len: usize,
    pub max_len: usize,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_users: 1000,
            n_personas: 8,
            fraud_fraction: 0.01,
            class_mix: vec![0.125; 8],
            min_len: 16,
            max_len: 64,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_personas == 0 {
            return Err(Error::Config("n_personas must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.fraud_fraction) {
            return Err(Error::Config(format!(
                "fraud_fraction must be in [0,1], got {}",
                self.fraud_fraction
            )));
        }
        if self.class_mix.len() != FraudClass::ALL.len()
            || self.class_mix.iter().any(|&p| !(p >= 0.0))
        {
            return Err(Error::Config(
                "class_mix needs 8 non-negative probabilities".into(),
            ));
        }
        let total: f64 = self.class_mix.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "class_mix sums to {total}, expected 1"
            )));
        }
        if self.min_len < 2 || self.min_len > self.max_len || self.max_len > super::MAX_SEQUENCE_LEN
        {
            return Err(Error::Config(format!(
                "invalid length range [{}, {}]",
                self.min_len, self.max_len
            )));
        }
        Ok(())
    }

    pub fn vocab(&self) -> VocabSpec {
        VocabSpec::payment_default()
    }

    /// Number of fraud users; the assignment is exact, not Bernoulli.
    pub fn n_fraud(&self) -> usize {
        (self.fraud_fraction * self.n_users as f64).round() as usize
    }
}

// Attribute slots of the default payment schema.
const AMOUNT: usize = 0;
const HOUR: usize = 1;
const DOW: usize = 2;
const CHANNEL: usize = 3;
const MERCHANT: usize = 4;
const DEVICE: usize = 5;
const GAP: usize = 6;
const REGION: usize = 7;
const ACTION: usize = 8;

const AMOUNT_BUCKETS: usize = 16;
const GAP_BUCKETS: usize = 17;
// Merchant categories 25..=32, devices 7..=8 and regions 15..=16 are only
// used by fraud regimes.
const NORMAL_MERCHANTS: u32 = 24;
const NORMAL_DEVICES: u32 = 6;
const NORMAL_REGIONS: u32 = 14;
const ACTIONS: usize = 8;

#[derive(Clone, Debug)]
struct Persona {
    amount_mu: f64,
    amount_sigma: f64,
    mean_gap: f64,
    active_start: u32,
    active_span: u32,
    channels: Vec<(u32, f64)>,
    channel_stay: f64,
    merchants: Vec<(u32, f64)>,
    merchant_repeat: f64,
    devices: Vec<(u32, f64)>,
    /// Row-stochastic transition matrix over actions 1..=8.
    action_next: Vec<Vec<f64>>,
}

fn pick_weighted<R: Rng + ?Sized>(items: &[(u32, f64)], rng: &mut R) -> u32 {
    let total: f64 = items.iter().map(|(_, w)| w).sum();
    let mut u = rng.random::<f64>() * total;
    for &(v, w) in items {
        if u < w {
            return v;
        }
        u -= w;
    }
    items[items.len() - 1].0
}

fn pick_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

fn distinct<R: Rng + ?Sized>(n: usize, max: u32, rng: &mut R) -> Vec<u32> {
    let mut all: Vec<u32> = (1..=max).collect();
    all.shuffle(rng);
    all.truncate(n);
    all
}

fn weighted<R: Rng + ?Sized>(ids: Vec<u32>, rng: &mut R) -> Vec<(u32, f64)> {
    ids.into_iter()
        .map(|v| (v, 0.2 + rng.random::<f64>()))
        .collect()
}

impl Persona {
    fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let channels = weighted(distinct(rng.random_range(2..=3), 6, rng), rng);
        let merchants = weighted(distinct(4, NORMAL_MERCHANTS, rng), rng);
        let devices = weighted(distinct(2, NORMAL_DEVICES, rng), rng);
        let action_next = (0..ACTIONS)
            .map(|_| {
                let mut row = vec![0.0; ACTIONS];
                // Actions 7 and 8 are reserved for fraud regimes.
                for a in distinct(2, 6, rng) {
                    row[a as usize - 1] = 0.3 + rng.random::<f64>();
                }
                row
            })
            .collect();
        Self {
            amount_mu: rng.random_range(1.5..6.5),
            amount_sigma: 0.4,
            mean_gap: (rng.random_range(20f64.ln()..400f64.ln())).exp(),
            active_start: rng.random_range(6..12),
            active_span: rng.random_range(8..14),
            channels,
            channel_stay: 0.85,
            merchants,
            merchant_repeat: 0.4,
            devices,
            action_next,
        }
    }

    fn active(&self, hour: u32) -> bool {
        (hour + 24 - self.active_start) % 24 < self.active_span
    }
}

/// Deterministic generator over user indices.
pub struct Generator {
    cfg: GeneratorConfig,
    personas: Vec<Persona>,
    fraud: Vec<Option<FraudClass>>,
}

impl Generator {
    pub fn new(cfg: GeneratorConfig) -> Result<Self> {
        cfg.validate()?;
        let personas = (0..cfg.n_personas)
            .map(|p| Persona::sample(&mut indexed_stream(cfg.seed, "persona", p as u64)))
            .collect();
        let mut order: Vec<usize> = (0..cfg.n_users).collect();
        order.shuffle(&mut stream(cfg.seed, "fraud-assignment"));
        let mut fraud = vec![None; cfg.n_users];
        let mut class_rng = stream(cfg.seed, "fraud-class");
        let mut chosen: Vec<usize> = order[..cfg.n_fraud().min(cfg.n_users)].to_vec();
        chosen.sort_unstable();
        for u in chosen {
            fraud[u] = Some(FraudClass::ALL[pick_index(&cfg.class_mix, &mut class_rng)]);
        }
        Ok(Self {
            cfg,
            personas,
            fraud,
        })
    }

    pub fn len(&self) -> usize {
        self.cfg.n_users
    }

    pub fn is_empty(&self) -> bool {
        self.cfg.n_users == 0
    }

    pub fn user(&self, index: usize) -> BehaviorSequence {
        let mut rng = indexed_stream(self.cfg.seed, "user", index as u64);
        let persona = &self.personas[rng.random_range(0..self.personas.len())];
        let len = rng.random_range(self.cfg.min_len..=self.cfg.max_len);
        let fraud = self.fraud[index];
        let onset = fraud.map(|_| rng.random_range(len / 4..=(3 * len) / 4));
        UserState::new(persona, &mut rng).run(len, fraud.zip(onset), &mut rng, index)
    }

    pub fn iter(&self) -> impl Iterator<Item = BehaviorSequence> + '_ {
        (0..self.cfg.n_users).map(|i| self.user(i))
    }
}

struct UserState<'p> {
    persona: &'p Persona,
    time: f64,
    channel: u32,
    merchant: u32,
    device: u32,
    home_region: u32,
    action: usize,
}

impl<'p> UserState<'p> {
    fn new<R: Rng + ?Sized>(persona: &'p Persona, rng: &mut R) -> Self {
        let start_hour = persona.active_start + rng.random_range(0..persona.active_span);
        Self {
            persona,
            time: f64::from(rng.random_range(0..7u32) * 24 + start_hour) * 60.0,
            channel: pick_weighted(&persona.channels, rng),
            merchant: pick_weighted(&persona.merchants, rng),
            device: pick_weighted(&persona.devices, rng),
            home_region: rng.random_range(1..=NORMAL_REGIONS),
            action: rng.random_range(0..6),
        }
    }

    fn run<R: Rng + ?Sized>(
        mut self,
        len: usize,
        fraud: Option<(FraudClass, usize)>,
        rng: &mut R,
        index: usize,
    ) -> BehaviorSequence {
        let events = (0..len)
            .map(|t| {
                let regime = fraud
                    .filter(|&(_, onset)| t >= onset)
                    .map(|(c, onset)| (c, t - onset));
                self.step(regime, rng)
            })
            .collect();
        BehaviorSequence {
            user_id: format!("u{index:07}"),
            events,
            label: fraud.map_or(0, |(c, _)| c.label()),
            anomaly_onset: fraud.map(|(_, onset)| onset),
        }
    }

    fn step<R: Rng + ?Sized>(
        &mut self,
        regime: Option<(FraudClass, usize)>,
        rng: &mut R,
    ) -> BehaviorEvent {
        let p = self.persona;
        let mut amount_mu = p.amount_mu;
        let mut amount_sigma = p.amount_sigma;
        let mut mean_gap = p.mean_gap;
        let mut night = false;
        // Per-attribute overrides of the regime, each applied with high
        // probability so planted patterns stay noisy.
        let mut channel = None;
        let mut merchant = None;
        let mut device = None;
        let mut region = None;
        let mut action = None;
        if let Some((class, since)) = regime {
            match class {
                FraudClass::FreeGift => {
                    amount_mu = 0.0;
                    amount_sigma = 0.5;
                    mean_gap = 3.0;
                    merchant = Some(25);
                    action = Some(7);
                }
                FraudClass::AdultContent => {
                    night = true;
                    amount_mu = 3.5;
                    amount_sigma = 0.3;
                    merchant = Some(26);
                    channel = Some(8);
                }
                FraudClass::Undelivered => {
                    amount_mu = 9.0;
                    amount_sigma = 0.5;
                    merchant = Some(27);
                    region = Some(15);
                }
                FraudClass::Gaming => {
                    amount_mu = 4.5;
                    amount_sigma = 0.2;
                    mean_gap = 5.0;
                    merchant = Some(28);
                    channel = Some(7);
                }
                FraudClass::Other => {
                    device = Some(7);
                    region = Some(16);
                    action = Some(8);
                }
                FraudClass::FinancialCredit => {
                    amount_mu = 10.0;
                    amount_sigma = 0.4;
                    merchant = Some(29);
                    channel = Some(7);
                    action = Some(8);
                }
                FraudClass::PartTimeJob => {
                    let big = since % 2 == 1;
                    amount_mu = if big { 8.5 } else { 1.5 };
                    amount_sigma = 0.3;
                    merchant = Some(30);
                    action = Some(if big { 8 } else { 7 });
                }
                FraudClass::Dating => {
                    amount_mu = p.amount_mu + 0.6 * (since as f64 + 1.0);
                    device = Some(8);
                    merchant = Some(31);
                    region = Some(15);
                }
            }
        }
        let hit = |rng: &mut R| rng.random::<f64>() < 0.85;

        let gap = Exp::new(1.0 / mean_gap).expect("positive rate").sample(rng);
        self.time += gap;
        let mut hour = ((self.time / 60.0) as u64 % 24) as u32;
        let in_window = if night && hit(rng) {
            hour < 5
        } else {
            p.active(hour)
        };
        if !in_window {
            let target = if night {
                rng.random_range(0..5)
            } else {
                p.active_start
            };
            let ahead = (target + 24 - hour) % 24;
            self.time = ((self.time / 60.0).floor() + f64::from(ahead)) * 60.0
                + rng.random_range(0.0..30.0);
            hour = ((self.time / 60.0) as u64 % 24) as u32;
        }
        let observed_gap = gap.max(0.0);
        let dow = ((self.time / 1440.0) as u64 % 7) as u32;

        let amount = Normal::new(amount_mu, amount_sigma)
            .expect("finite parameters")
            .sample(rng)
            .exp();

        self.channel = match channel.filter(|_| hit(rng)) {
            Some(c) => c,
            None if rng.random::<f64>() < p.channel_stay && self.channel <= 6 => self.channel,
            None => pick_weighted(&p.channels, rng),
        };
        self.merchant = match merchant.filter(|_| hit(rng)) {
            Some(m) => m,
            None => {
                let u = rng.random::<f64>();
                if u < 0.05 {
                    rng.random_range(1..=NORMAL_MERCHANTS)
                } else if u < 0.05 + p.merchant_repeat && self.merchant <= NORMAL_MERCHANTS {
                    self.merchant
                } else {
                    pick_weighted(&p.merchants, rng)
                }
            }
        };
        let device_id = match device.filter(|_| hit(rng)) {
            Some(d) => d,
            None if rng.random::<f64>() < 0.95 => self.device,
            None => pick_weighted(&p.devices, rng),
        };
        let region_id = match region.filter(|_| hit(rng)) {
            Some(r) => r,
            None if rng.random::<f64>() < 0.97 => self.home_region,
            None => rng.random_range(1..=NORMAL_REGIONS),
        };
        self.action = match action.filter(|_| hit(rng)) {
            Some(a) => a as usize - 1,
            None => pick_index(&p.action_next[self.action], rng),
        };

        let mut attrs = vec![0u32; 9];
        attrs[AMOUNT] = bucketize_amount(amount, AMOUNT_BUCKETS).expect("amount is non-negative");
        attrs[HOUR] = 1 + hour;
        attrs[DOW] = 1 + dow;
        attrs[CHANNEL] = self.channel;
        attrs[MERCHANT] = self.merchant;
        attrs[DEVICE] = device_id;
        attrs[GAP] = bucketize_gap(observed_gap, GAP_BUCKETS).expect("gap is non-negative");
        attrs[REGION] = region_id;
        attrs[ACTION] = 1 + self.action as u32;
        BehaviorEvent::new(attrs)
    }
}

/// Generates the whole corpus. Users are independent, so this runs on the
/// current rayon pool; the output order and content do not depend on the
/// number of threads.
pub fn generate_corpus(cfg: &GeneratorConfig) -> Result<Vec<BehaviorSequence>> {
    let generator = Generator::new(cfg.clone())?;
    Ok((0..generator.len())
        .into_par_iter()
        .map(|i| generator.user(i))
        .collect())
}
