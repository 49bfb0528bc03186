//! Post-run checks and the `report.json` summary.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::audit::audit_engine;
use crate::canonical;
use crate::consensus::{winners_of, FundraiserNode};
use crate::document::ContractDocument;
use crate::funding::{FundingEngine, StudentState};
use crate::hash::{sha256, Hash256};
use crate::registry::Registry;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckResult {
    pub passed: bool,
    pub failures: Vec<String>,
}

impl CheckResult {
    fn from_failures(failures: Vec<String>) -> Self {
        CheckResult {
            passed: failures.is_empty(),
            failures,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeReport {
    pub ledger_sha256: Hash256,
    pub blocks: usize,
    pub contracts: usize,
    pub rejected_messages: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedEvent {
    pub event: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimReport {
    pub seed: u64,
    pub nodes: BTreeMap<String, NodeReport>,
    /// All ledger files are byte-identical.
    pub converged: bool,
    pub funded_students: Vec<String>,
    /// Every funded student has exactly one contract block on every node.
    pub safety: CheckResult,
    /// Wallet invariants hold and agree with the audit of each pledge log.
    pub conservation: CheckResult,
    /// Share sums equal targets and outbox documents match block hashes.
    pub contract_exactness: CheckResult,
    /// Each node's funding state equals a replay of its log against its chain.
    pub replay_equivalence: CheckResult,
    pub messages_delivered: u64,
    pub rejected_events: Vec<RejectedEvent>,
}

impl SimReport {
    #[allow(clippy::too_many_arguments)]
    pub(super) fn build(
        seed: u64,
        nodes: &BTreeMap<String, FundraiserNode>,
        ledgers: &BTreeMap<String, Vec<u8>>,
        registry: &Registry,
        outboxes: &BTreeMap<String, BTreeMap<String, ContractDocument>>,
        messages_delivered: u64,
        rejected_events: Vec<RejectedEvent>,
    ) -> SimReport {
        let node_reports = nodes
            .iter()
            .map(|(id, n)| {
                (
                    id.clone(),
                    NodeReport {
                        ledger_sha256: sha256(&ledgers[id]),
                        blocks: n.chain().len(),
                        contracts: n.chain().winners().count(),
                        rejected_messages: n.rejected_count(),
                    },
                )
            })
            .collect();
        let converged = ledgers.values().collect::<BTreeSet<_>>().len() <= 1;
        let funded: BTreeSet<String> = nodes
            .values()
            .flat_map(|n| n.chain().winners().map(|(s, _)| s.to_string()).collect::<Vec<_>>())
            .collect();

        SimReport {
            seed,
            nodes: node_reports,
            converged,
            safety: check_safety(nodes, &funded),
            conservation: check_conservation(nodes),
            contract_exactness: check_contracts(nodes, registry, outboxes),
            replay_equivalence: check_replay(nodes),
            funded_students: funded.into_iter().collect(),
            messages_delivered,
            rejected_events,
        }
    }

    pub fn all_passed(&self) -> bool {
        self.converged
            && self.safety.passed
            && self.conservation.passed
            && self.contract_exactness.passed
            && self.replay_equivalence.passed
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut bytes = canonical::to_canonical_bytes(self).expect("reports contain no floats");
        bytes.push(b'\n');
        bytes
    }
}

fn check_safety(nodes: &BTreeMap<String, FundraiserNode>, funded: &BTreeSet<String>) -> CheckResult {
    let mut failures = Vec::new();
    for (id, node) in nodes {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for (student, _) in node.chain().winners() {
            *counts.entry(student).or_insert(0) += 1;
        }
        for student in funded {
            let n = counts.get(student.as_str()).copied().unwrap_or(0);
            if n != 1 {
                failures.push(format!("{id}: {n} contract blocks for {student}"));
            }
        }
        for record in node.engine().students() {
            let won = record.state == StudentState::Won;
            if won != node.chain().contract_block(&record.student_id).is_some() {
                failures.push(format!("{id}: {} is {:?} but chain disagrees", record.student_id, record.state));
            }
        }
    }
    CheckResult::from_failures(failures)
}

fn check_conservation(nodes: &BTreeMap<String, FundraiserNode>) -> CheckResult {
    let mut failures = Vec::new();
    for (id, node) in nodes {
        if let Err(e) = node.engine().check_invariants() {
            failures.push(format!("{id}: {e}"));
        }
        if let Err(e) = audit_engine(node.engine()) {
            failures.push(format!("{id}: {e}"));
        }
    }
    CheckResult::from_failures(failures)
}

fn check_contracts(
    nodes: &BTreeMap<String, FundraiserNode>,
    registry: &Registry,
    outboxes: &BTreeMap<String, BTreeMap<String, ContractDocument>>,
) -> CheckResult {
    let mut failures = Vec::new();
    let empty = BTreeMap::new();
    for (id, node) in nodes {
        for block in node.chain().blocks() {
            let Some(contract) = block.contract() else { continue };
            let terms = &contract.terms;
            if terms.share_sum() != terms.program_cost {
                failures.push(format!("{id}: block {} shares sum to {} of {}", block.index, terms.share_sum(), terms.program_cost));
            }
            match registry.application_of(&terms.student_id) {
                Some(app) if app.target_amount == terms.program_cost => {}
                Some(app) => failures.push(format!(
                    "{id}: block {} cost {} but target {}",
                    block.index, terms.program_cost, app.target_amount
                )),
                None => failures.push(format!("{id}: block {} for unregistered {}", block.index, terms.student_id)),
            }
            let outbox = outboxes.get(&block.miner_id).unwrap_or(&empty);
            match outbox.get(&terms.student_id) {
                Some(doc) if doc.hash() == block.document_hash => {}
                Some(_) => failures.push(format!(
                    "{id}: block {} document hash differs from {}'s outbox",
                    block.index, block.miner_id
                )),
                None => failures.push(format!("{id}: block {} has no document in {}'s outbox", block.index, block.miner_id)),
            }
        }
    }
    CheckResult::from_failures(failures)
}

fn check_replay(nodes: &BTreeMap<String, FundraiserNode>) -> CheckResult {
    let mut failures = Vec::new();
    for (id, node) in nodes {
        match FundingEngine::replay(id.clone(), node.engine().log(), &winners_of(node.chain())) {
            Ok(replayed) if &replayed == node.engine() => {}
            Ok(_) => failures.push(format!("{id}: replayed state differs from live state")),
            Err(e) => failures.push(format!("{id}: replay failed: {e}")),
        }
    }
    CheckResult::from_failures(failures)
}
