//! Deterministic multi-node simulation.
//!
//! All fundraiser nodes run in one thread over an in-memory network. A seeded
//! generator picks which pending message is delivered next, so a run is a
//! pure function of (scenario, seed). Between scenario events the network is
//! drained to quiescence: no deliverable messages and no open tie-break
//! windows.

mod generate;
mod report;
mod scenario;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;
use tracing::debug;

pub use generate::{generate_scenario, GenParams};
pub use report::{CheckResult, NodeReport, RejectedEvent, SimReport};
pub use scenario::{PledgeSpec, Scenario, ScenarioError, ScenarioEvent, SimConfig};

use crate::consensus::{Action, FundraiserNode, Message, MessageBody, NodeSettings, TieBreakWindow};
use crate::document::ContractDocument;
use crate::ledger::{encode_ledger, Cents};
use crate::registry::{ApplicationRequest, ApplicationStatus, Eligibility, EligibilityRules, Registry, Role};
use crate::store::{write_atomic, StoreError};

/// Deliveries allowed per run before it is declared livelocked.
pub const MESSAGE_BUDGET: u64 = 1_000_000;

/// Sender id used for registry broadcasts.
pub const REGISTRY_SENDER: &str = "registry";

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("no quiescence after {0} deliveries")]
    NonQuiescent(u64),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub report: SimReport,
    pub ledgers: BTreeMap<String, Vec<u8>>,
    pub nodes: BTreeMap<String, FundraiserNode>,
    /// Outbox contents per node, by student.
    pub outboxes: BTreeMap<String, BTreeMap<String, ContractDocument>>,
}

impl SimOutcome {
    /// Writes `ledger.<node>.jsonl` for every node and `report.json`.
    pub fn write_to(&self, dir: &Path) -> Result<(), StoreError> {
        std::fs::create_dir_all(dir).map_err(|source| StoreError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        for (node, bytes) in &self.ledgers {
            write_atomic(&dir.join(format!("ledger.{node}.jsonl")), bytes)?;
        }
        write_atomic(&dir.join("report.json"), &self.report.to_bytes())
    }
}

struct Envelope {
    to: String,
    message: Message,
}

struct World {
    nodes: BTreeMap<String, FundraiserNode>,
    registry: Registry,
    pending: Vec<Envelope>,
    // node -> partition group; empty when the network is whole
    groups: BTreeMap<String, usize>,
    rng: ChaCha8Rng,
    clock: u64,
    delivered: u64,
    registry_lamport: u64,
    outboxes: BTreeMap<String, BTreeMap<String, ContractDocument>>,
    rejected: Vec<RejectedEvent>,
}

pub fn run_simulation(scenario: &Scenario, seed: u64) -> Result<SimOutcome, SimError> {
    scenario.validate()?;
    let mut world = World::new(scenario, seed)?;
    for (i, event) in scenario.events.iter().enumerate() {
        world.clock += 1;
        if let Err(reason) = world.apply(event) {
            debug!(event = i, "{reason}");
            world.rejected.push(RejectedEvent { event: i, reason });
        }
        world.drain()?;
    }
    world.groups.clear();
    world.drain()?;
    Ok(world.finish(seed))
}

impl World {
    fn new(scenario: &Scenario, seed: u64) -> Result<World, SimError> {
        let cfg = &scenario.config;
        let mut registry = Registry::new(
            EligibilityRules {
                min_score: cfg.min_score,
                max_income_cents: cfg.max_income_cents,
            },
            scenario.verification_records.clone(),
        );
        for account in &scenario.accounts {
            registry
                .register_account(account.clone())
                .map_err(|e| ScenarioError::Invalid(format!("account {:?}: {e}", account.account_id)))?;
        }
        let sponsors: Vec<String> = registry
            .accounts()
            .filter(|a| a.role() == Role::Sponsor)
            .map(|a| a.account_id.clone())
            .collect();
        let mut nodes = BTreeMap::new();
        for id in &scenario.nodes {
            let mut node = FundraiserNode::new(NodeSettings {
                node_id: id.clone(),
                peers: scenario.nodes.clone(),
                window: TieBreakWindow::Messages(cfg.tie_break_window),
                benefit_percent_bp: cfg.benefit_percent_bp,
                benefit_period_months: cfg.benefit_period_months,
            });
            for account in registry.accounts() {
                node.set_contact(registry.contact_of(&account.account_id).expect("account exists"));
            }
            for s in &sponsors {
                node.open_wallet(s, 0).expect("sponsor ids are nonempty");
            }
            nodes.insert(id.clone(), node);
        }
        Ok(World {
            nodes,
            registry,
            pending: Vec::new(),
            groups: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            clock: 0,
            delivered: 0,
            registry_lamport: 0,
            outboxes: BTreeMap::new(),
            rejected: Vec::new(),
        })
    }

    fn apply(&mut self, event: &ScenarioEvent) -> Result<(), String> {
        let now = self.clock;
        match event {
            ScenarioEvent::Deposit { sponsor, node, amount } => {
                self.node(node).deposit(sponsor, *amount, now).map_err(|e| e.to_string())
            }
            ScenarioEvent::SubmitApplication {
                student,
                program_name,
                institute_name,
                high_school_score,
                family_income,
                target_amount,
                program_duration_months,
            } => self
                .registry
                .submit_application(
                    ApplicationRequest {
                        student_id: student.clone(),
                        program_name: Some(program_name.clone()),
                        institute_name: Some(institute_name.clone()),
                        high_school_score: Some(*high_school_score),
                        family_income: Some(*family_income),
                        target_amount: Some(*target_amount),
                        program_duration_months: Some(*program_duration_months),
                    },
                    now,
                )
                .map(|_| ())
                .map_err(|e| e.to_string()),
            ScenarioEvent::Verify { student } => {
                let application = self
                    .registry
                    .applications()
                    .filter(|a| a.student_id == *student && a.status == ApplicationStatus::Pending)
                    .map(|a| a.application_id.clone())
                    .last()
                    .ok_or_else(|| format!("no pending application for {student}"))?;
                match self.registry.verify_eligibility(&application, now).map_err(|e| e.to_string())? {
                    Eligibility::Eligible(listing) => {
                        self.registry_lamport += 1;
                        let message = Message {
                            sender: REGISTRY_SENDER.into(),
                            lamport: self.registry_lamport,
                            body: MessageBody::StudentActivated(listing),
                        };
                        for to in self.nodes.keys() {
                            self.pending.push(Envelope {
                                to: to.clone(),
                                message: message.clone(),
                            });
                        }
                        Ok(())
                    }
                    Eligibility::Rejected(reason) => Err(format!("{student} not eligible: {reason:?}")),
                }
            }
            ScenarioEvent::Pledge {
                sponsor,
                student,
                fundraiser,
                amount,
            } => self.pledge(sponsor, student, fundraiser, *amount),
            ScenarioEvent::PartitionHint { groups } => {
                self.groups = groups
                    .iter()
                    .enumerate()
                    .flat_map(|(g, members)| members.iter().map(move |n| (n.clone(), g)))
                    .collect();
                // Unlisted nodes are isolated on their own.
                let mut next = groups.len();
                if !self.groups.is_empty() {
                    for id in self.nodes.keys() {
                        if !self.groups.contains_key(id) {
                            self.groups.insert(id.clone(), next);
                            next += 1;
                        }
                    }
                }
                Ok(())
            }
            ScenarioEvent::InjectConcurrentClaims { student, pledges } => {
                let mut failures = Vec::new();
                for p in pledges {
                    if let Err(e) = self.pledge(&p.sponsor, student, &p.fundraiser, p.amount) {
                        failures.push(e);
                    }
                }
                if failures.is_empty() {
                    Ok(())
                } else {
                    Err(failures.join("; "))
                }
            }
        }
    }

    fn node(&mut self, id: &str) -> &mut FundraiserNode {
        self.nodes.get_mut(id).expect("scenario validated node ids")
    }

    fn pledge(&mut self, sponsor: &str, student: &str, fundraiser: &str, amount: Cents) -> Result<(), String> {
        let now = self.clock;
        let (_, actions) = self
            .node(fundraiser)
            .place_pledge(sponsor, student, fundraiser, amount, now)
            .map_err(|e| e.to_string())?;
        self.enqueue(fundraiser, actions);
        Ok(())
    }

    fn enqueue(&mut self, from: &str, actions: Vec<Action>) {
        for action in actions {
            match action {
                Action::Send { to, message } => self.pending.push(Envelope { to, message }),
                Action::Mined { document, .. } | Action::Document { document } => {
                    self.outboxes
                        .entry(from.to_string())
                        .or_default()
                        .insert(document.student_id.clone(), document);
                }
            }
        }
    }

    fn deliverable(&self, e: &Envelope) -> bool {
        if self.groups.is_empty() || e.message.sender == REGISTRY_SENDER {
            return true;
        }
        self.groups.get(&e.message.sender) == self.groups.get(&e.to)
    }

    fn drain(&mut self) -> Result<(), SimError> {
        loop {
            let ready: Vec<usize> = (0..self.pending.len())
                .filter(|&i| self.deliverable(&self.pending[i]))
                .collect();
            if ready.is_empty() {
                // Quiescent network: close every open tie-break window.
                let mut progressed = false;
                let ids: Vec<String> = self.nodes.keys().cloned().collect();
                for id in ids {
                    if self.nodes[&id].has_own_claims() {
                        self.clock += 1;
                        let now = self.clock;
                        let actions = self.node(&id).expire_all(now);
                        self.enqueue(&id, actions);
                        progressed = true;
                    }
                }
                if !progressed {
                    break;
                }
                continue;
            }
            let pick = ready[self.rng.random_range(0..ready.len())];
            let envelope = self.pending.remove(pick);
            self.delivered += 1;
            if self.delivered > MESSAGE_BUDGET {
                return Err(SimError::NonQuiescent(MESSAGE_BUDGET));
            }
            self.clock += 1;
            let now = self.clock;
            let to = envelope.to.clone();
            let node = self.node(&to);
            let mut actions = node.handle(envelope.message, now);
            actions.extend(node.tick(now));
            self.enqueue(&to, actions);
        }
        self.sync_registry();
        Ok(())
    }

    // The registry follows the chains: a student funded on any node leaves
    // the active list, and returns to it if no chain holds the contract.
    fn sync_registry(&mut self) {
        let funded: BTreeSet<String> = self
            .nodes
            .values()
            .flat_map(|n| n.chain().winners().map(|(s, _)| s.to_string()).collect::<Vec<_>>())
            .collect();
        let now = self.clock;
        let won: Vec<String> = self
            .registry
            .applications()
            .filter(|a| a.status == ApplicationStatus::Won)
            .map(|a| a.student_id.clone())
            .collect();
        for s in won {
            if !funded.contains(&s) {
                self.registry.reopen(&s, now);
            }
        }
        for s in &funded {
            self.registry.mark_won(s, now);
        }
    }

    fn finish(self, seed: u64) -> SimOutcome {
        let ledgers: BTreeMap<String, Vec<u8>> = self
            .nodes
            .iter()
            .map(|(id, n)| (id.clone(), encode_ledger(n.chain().blocks())))
            .collect();
        let report = SimReport::build(seed, &self.nodes, &ledgers, &self.registry, &self.outboxes, self.delivered, self.rejected);
        SimOutcome {
            report,
            ledgers,
            nodes: self.nodes,
            outboxes: self.outboxes,
        }
    }
}
