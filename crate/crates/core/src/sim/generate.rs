//! Seeded scenario generator for bulk simulation runs and the shipped corpus.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scenario::{PledgeSpec, Scenario, ScenarioEvent, SimConfig};
use crate::ledger::Cents;
use crate::registry::{AccountRequest, Role, VerificationRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenParams {
    pub nodes: usize,
    pub sponsors: usize,
    pub students: usize,
    /// Share of races, in percent, completed by several fundraisers at once.
    pub concurrent_percent: u32,
    /// Share of races, in percent, completed on both sides of a partition.
    pub partition_percent: u32,
    /// Share of races, in percent, left short of their target.
    pub partial_percent: u32,
    pub tie_break_window: u64,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            nodes: 3,
            sponsors: 20,
            students: 10,
            concurrent_percent: 30,
            partition_percent: 10,
            partial_percent: 10,
            tie_break_window: 3,
        }
    }
}

const INSTITUTES: [&str; 4] = [
    "University of the South Pacific",
    "Fiji National University",
    "University of Fiji",
    "Pacific Theological College",
];

const PROGRAMS: [&str; 5] = [
    "BSc Computing Science",
    "Bachelor of Nursing",
    "BEng Civil",
    "Bachelor of Education",
    "BA Economics",
];

struct Builder {
    rng: ChaCha8Rng,
    events: Vec<ScenarioEvent>,
    // (node, sponsor) -> funds the generator has not yet committed
    balance: BTreeMap<(String, String), Cents>,
    sponsors: Vec<String>,
}

impl Builder {
    fn ensure_funds(&mut self, node: &str, sponsor: &str, amount: Cents) {
        let key = (node.to_string(), sponsor.to_string());
        let have = self.balance.get(&key).copied().unwrap_or(0);
        if have < amount {
            let top_up = amount - have + self.rng.random_range(0..=500_00);
            self.events.push(ScenarioEvent::Deposit {
                sponsor: sponsor.to_string(),
                node: node.to_string(),
                amount: top_up,
            });
            *self.balance.entry(key.clone()).or_insert(0) += top_up;
        }
        *self.balance.get_mut(&key).expect("just funded") -= amount;
    }

    /// Splits `total` into one to three positive parts.
    fn split(&mut self, total: Cents) -> Vec<Cents> {
        let parts = self.rng.random_range(1..=3u64).min(total);
        let mut cuts: Vec<Cents> = (1..parts).map(|_| self.rng.random_range(1..total)).collect();
        cuts.sort_unstable();
        cuts.dedup();
        let mut out = Vec::new();
        let mut last = 0;
        for c in cuts.into_iter().chain(std::iter::once(total)) {
            out.push(c - last);
            last = c;
        }
        out
    }

    fn pledges_for(&mut self, node: &str, amount: Cents) -> Vec<PledgeSpec> {
        self.split(amount)
            .into_iter()
            .map(|part| {
                let sponsor = self.sponsors[self.rng.random_range(0..self.sponsors.len())].clone();
                self.ensure_funds(node, &sponsor, part);
                PledgeSpec {
                    sponsor,
                    fundraiser: node.to_string(),
                    amount: part,
                }
            })
            .collect()
    }

    fn push_pledges(&mut self, student: &str, pledges: Vec<PledgeSpec>) {
        for p in pledges {
            self.events.push(ScenarioEvent::Pledge {
                sponsor: p.sponsor,
                student: student.to_string(),
                fundraiser: p.fundraiser,
                amount: p.amount,
            });
        }
    }
}

/// Builds a scenario whose races exercise plain wins, losing partial races,
/// concurrent claims, partitions and unfinished races.
pub fn generate_scenario(params: GenParams, seed: u64) -> Scenario {
    assert!(params.nodes >= 1 && params.sponsors >= 1);
    let config = SimConfig {
        min_score: 650,
        max_income_cents: 40_000_00,
        benefit_percent_bp: 500,
        benefit_period_months: 60,
        tie_break_window: params.tie_break_window,
    };
    let nodes: Vec<String> = (1..=params.nodes).map(|i| format!("F{i}")).collect();
    let sponsors: Vec<String> = (1..=params.sponsors).map(|i| format!("P{i:02}")).collect();
    let students: Vec<String> = (1..=params.students).map(|i| format!("S{i:02}")).collect();

    let mut accounts = Vec::new();
    for n in &nodes {
        accounts.push(AccountRequest {
            account_id: Some(n.clone()),
            role: Some(Role::Fundraiser),
            name: format!("Fundraiser {n}"),
            email: format!("{}@fund.example.org", n.to_lowercase()),
            business_identification_number: Some(format!("BIN-{n}")),
            ..Default::default()
        });
    }
    for p in &sponsors {
        accounts.push(AccountRequest {
            account_id: Some(p.clone()),
            role: Some(Role::Sponsor),
            name: format!("Sponsor {p}"),
            email: format!("{}@sponsor.example.org", p.to_lowercase()),
            financial_info: Some(format!("ACCT-{p}")),
            ..Default::default()
        });
    }
    for s in &students {
        accounts.push(AccountRequest {
            account_id: Some(s.clone()),
            role: Some(Role::Student),
            name: format!("Student {s}"),
            email: format!("{}@student.example.org", s.to_lowercase()),
            address: Some(format!("{s} Main St, Suva")),
            phone: Some(format!("+679 555 {}", &s[1..])),
            ..Default::default()
        });
    }

    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(seed),
        events: Vec::new(),
        balance: BTreeMap::new(),
        sponsors: sponsors.clone(),
    };

    for n in &nodes {
        for p in &sponsors {
            let amount = b.rng.random_range(100_00..=1_500_00);
            b.events.push(ScenarioEvent::Deposit {
                sponsor: p.clone(),
                node: n.clone(),
                amount,
            });
            b.balance.insert((n.clone(), p.clone()), amount);
        }
    }

    let mut records = Vec::new();
    let mut eligible = Vec::new();
    let mut targets = BTreeMap::new();
    for s in &students {
        let institute = INSTITUTES[b.rng.random_range(0..INSTITUTES.len())];
        let score = b.rng.random_range(600..=1000u32);
        let income: Cents = b.rng.random_range(5_000_00..=45_000_00);
        let target: Cents = b.rng.random_range(20_00..=2_000_00);
        let has_record = b.rng.random_range(0..100) < 90;
        if has_record {
            records.push(VerificationRecord {
                name: format!("Student {s}"),
                institute: institute.to_string(),
                high_school_score: score,
            });
        }
        if has_record && score >= config.min_score && income <= config.max_income_cents {
            eligible.push(s.clone());
        }
        targets.insert(s.clone(), target);
        b.events.push(ScenarioEvent::SubmitApplication {
            student: s.clone(),
            program_name: PROGRAMS[b.rng.random_range(0..PROGRAMS.len())].to_string(),
            institute_name: institute.to_string(),
            high_school_score: score,
            family_income: income,
            target_amount: target,
            program_duration_months: b.rng.random_range(12..=60),
        });
        b.events.push(ScenarioEvent::Verify { student: s.clone() });
    }

    eligible.shuffle(&mut b.rng);
    for s in &eligible {
        let target = targets[s];
        let roll = b.rng.random_range(0..100u32);
        let mut order = nodes.clone();
        order.shuffle(&mut b.rng);
        if roll < params.concurrent_percent && nodes.len() >= 2 {
            let k = b.rng.random_range(2..=nodes.len().min(3));
            let mut pledges = Vec::new();
            for n in &order[..k] {
                pledges.extend(b.pledges_for(n, target));
            }
            pledges.shuffle(&mut b.rng);
            b.events.push(ScenarioEvent::InjectConcurrentClaims {
                student: s.clone(),
                pledges,
            });
        } else if roll < params.concurrent_percent + params.partition_percent && nodes.len() >= 2 {
            let cut = b.rng.random_range(1..nodes.len());
            let (left, right) = order.split_at(cut);
            b.events.push(ScenarioEvent::PartitionHint {
                groups: vec![left.to_vec(), right.to_vec()],
            });
            for n in [left[0].clone(), right[0].clone()] {
                let pledges = b.pledges_for(&n, target);
                b.push_pledges(s, pledges);
            }
            b.events.push(ScenarioEvent::PartitionHint { groups: vec![] });
        } else if roll < params.concurrent_percent + params.partition_percent + params.partial_percent {
            if target > 1 {
                let short = b.rng.random_range(1..target);
                let pledges = b.pledges_for(&order[0], short);
                b.push_pledges(s, pledges);
            }
        } else {
            // A losing fundraiser collects part of the target first.
            if nodes.len() >= 2 && target > 1 && b.rng.random_bool(0.5) {
                let partial = b.rng.random_range(1..target);
                let pledges = b.pledges_for(&order[1], partial);
                b.push_pledges(s, pledges);
            }
            let pledges = b.pledges_for(&order[0], target);
            b.push_pledges(s, pledges);
        }
    }

    Scenario {
        nodes,
        config,
        accounts,
        verification_records: records,
        events: b.events,
    }
}
