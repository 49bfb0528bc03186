//! A fundraiser node as a pure state machine: inputs are local commands and
//! peer messages, outputs are [`Action`]s for the caller to carry out.
//! The same code runs under the simulator and the networked service.

use std::collections::{BTreeMap, HashSet};

use thiserror::Error;
use tracing::{debug, info, warn};

use super::{prefers_remote, resolve_win_conflict, Message, MessageBody, WinClaim};
use crate::document::{render_contract_document, ContractDocument};
use crate::funding::{FundingEngine, FundingError, FundingEvent, Pledge, StudentListing, StudentState};
use crate::ledger::{Block, BlockKind, BlockRef, Cents, Chain, ContactInfo, LedgerError};

/// How long a node waits between broadcasting its win claim and mining, so
/// that competing claims can arrive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TieBreakWindow {
    /// Number of messages this node processes.
    Messages(u64),
    /// Milliseconds of the `now` clock passed to the node.
    Millis(u64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSettings {
    pub node_id: String,
    pub peers: Vec<String>,
    pub window: TieBreakWindow,
    pub benefit_percent_bp: u32,
    pub benefit_period_months: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Send { to: String, message: Message },
    /// A contract block was mined here; its document goes to the outbox.
    Mined { block: Block, document: ContractDocument },
    /// An adopted chain holds a contract block this node mined earlier on
    /// another branch; the outbox should hold its document again.
    Document { document: ContractDocument },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NodeError {
    #[error(transparent)]
    Funding(#[from] FundingError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("node {node_id} only takes pledges for itself, not {fundraiser_id}")]
    ForeignFundraiser { node_id: String, fundraiser_id: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct OwnClaim {
    claim: WinClaim,
    due: u64,
}

#[derive(Debug, Clone)]
pub struct FundraiserNode {
    settings: NodeSettings,
    chain: Chain,
    engine: FundingEngine,
    contacts: BTreeMap<String, ContactInfo>,
    lamport: u64,
    processed: u64,
    // Best claim seen per student. Kept after the race closes so that a
    // reopened race resolves against the same history.
    best_claims: BTreeMap<String, WinClaim>,
    own_claims: BTreeMap<String, OwnClaim>,
    seen: HashSet<(String, u64)>,
    rejected: u64,
}

impl FundraiserNode {
    pub fn new(settings: NodeSettings) -> Self {
        let engine = FundingEngine::new(settings.node_id.clone());
        FundraiserNode {
            settings,
            chain: Chain::new(),
            engine,
            contacts: BTreeMap::new(),
            lamport: 0,
            processed: 0,
            best_claims: BTreeMap::new(),
            own_claims: BTreeMap::new(),
            seen: HashSet::new(),
            rejected: 0,
        }
    }

    /// Rebuilds a node from its persisted chain and pledge log. `lamport_floor`
    /// must exceed any stamp the node used before, since peers drop repeated
    /// (sender, lamport) pairs.
    pub fn restore(
        settings: NodeSettings,
        chain: Chain,
        pledge_log: &[FundingEvent],
        lamport_floor: u64,
    ) -> Result<Self, FundingError> {
        let winners = winners_of(&chain);
        let engine = FundingEngine::replay(settings.node_id.clone(), pledge_log, &winners)?;
        let mut node = FundraiserNode::new(settings);
        node.chain = chain;
        node.engine = engine;
        node.lamport = lamport_floor;
        Ok(node)
    }

    pub fn node_id(&self) -> &str {
        &self.settings.node_id
    }

    pub fn settings(&self) -> &NodeSettings {
        &self.settings
    }

    pub fn chain(&self) -> &Chain {
        &self.chain
    }

    pub fn engine(&self) -> &FundingEngine {
        &self.engine
    }

    pub fn lamport(&self) -> u64 {
        self.lamport
    }

    pub fn rejected_count(&self) -> u64 {
        self.rejected
    }

    pub fn contact(&self, party_id: &str) -> Option<&ContactInfo> {
        self.contacts.get(party_id)
    }

    /// Best claim seen for a student whose race is still open.
    pub fn pending_claim(&self, student_id: &str) -> Option<&WinClaim> {
        if self.chain.contract_block(student_id).is_some() {
            return None;
        }
        self.best_claims.get(student_id)
    }

    pub fn has_own_claims(&self) -> bool {
        !self.own_claims.is_empty()
    }

    pub fn set_contact(&mut self, contact: ContactInfo) {
        self.contacts.insert(contact.party_id.clone(), contact);
    }

    pub fn open_wallet(&mut self, sponsor_id: &str, now: u64) -> Result<(), NodeError> {
        self.engine.open_wallet(sponsor_id, now)?;
        Ok(())
    }

    pub fn deposit(&mut self, sponsor_id: &str, amount: Cents, now: u64) -> Result<(), NodeError> {
        self.engine.deposit(sponsor_id, amount, now)?;
        Ok(())
    }

    /// Lists a newly eligible student here and tells every peer.
    pub fn activate_student(&mut self, listing: StudentListing, now: u64) -> Result<Vec<Action>, NodeError> {
        self.list_student(listing.clone(), now)?;
        Ok(self.broadcast(MessageBody::StudentActivated(listing)))
    }

    /// Places a pledge through this node. A pledge that completes the race
    /// triggers a win claim straight away.
    pub fn place_pledge(
        &mut self,
        sponsor_id: &str,
        student_id: &str,
        fundraiser_id: &str,
        amount: Cents,
        now: u64,
    ) -> Result<(Pledge, Vec<Action>), NodeError> {
        if fundraiser_id != self.settings.node_id {
            return Err(NodeError::ForeignFundraiser {
                node_id: self.settings.node_id.clone(),
                fundraiser_id: fundraiser_id.to_string(),
            });
        }
        let pledge = self.engine.place_pledge(sponsor_id, student_id, fundraiser_id, amount, now)?;
        let actions = self.poll_completions(now);
        Ok((pledge, actions))
    }

    /// Appends and announces an amendment with updated contact details.
    pub fn propose_amendment(
        &mut self,
        original: BlockRef,
        contacts: Vec<ContactInfo>,
        now: u64,
    ) -> Result<Vec<Action>, NodeError> {
        let block = self
            .chain
            .append_amendment(original, contacts, &self.settings.node_id, now)?
            .clone();
        Ok(self.broadcast(MessageBody::BlockAnnounce(block)))
    }

    /// Stamps a message with the next Lamport time and addresses it to every
    /// peer. A win claim carries the same stamp as its message.
    pub fn broadcast(&mut self, mut body: MessageBody) -> Vec<Action> {
        let stamp = self.next_stamp();
        if let MessageBody::WinClaim(claim) = &mut body {
            claim.lamport_time = stamp;
        }
        let message = Message {
            sender: self.settings.node_id.clone(),
            lamport: stamp,
            body,
        };
        self.settings
            .peers
            .iter()
            .filter(|p| **p != self.settings.node_id)
            .map(|p| Action::Send {
                to: p.clone(),
                message: message.clone(),
            })
            .collect()
    }

    fn send_to(&mut self, to: &str, body: MessageBody) -> Action {
        let stamp = self.next_stamp();
        Action::Send {
            to: to.to_string(),
            message: Message {
                sender: self.settings.node_id.clone(),
                lamport: stamp,
                body,
            },
        }
    }

    fn next_stamp(&mut self) -> u64 {
        self.lamport += 1;
        self.lamport
    }

    /// Processes one peer message.
    pub fn handle(&mut self, message: Message, now: u64) -> Vec<Action> {
        if message.sender == self.settings.node_id {
            debug!(node = %self.settings.node_id, "dropping message from self");
            return Vec::new();
        }
        if !self.seen.insert((message.sender.clone(), message.lamport)) {
            debug!(node = %self.settings.node_id, sender = %message.sender, lamport = message.lamport, "duplicate message dropped");
            return Vec::new();
        }
        self.lamport = self.lamport.max(message.lamport);
        self.processed += 1;
        let sender = message.sender;
        let mut actions = match message.body {
            MessageBody::StudentActivated(listing) => {
                if self.engine.student(&listing.student_id).is_none() {
                    if let Err(e) = self.list_student(listing, now) {
                        self.reject(&sender, format!("activation refused: {e}"));
                    }
                }
                Vec::new()
            }
            MessageBody::WinClaim(claim) => {
                self.handle_win_claim(&sender, claim, now);
                Vec::new()
            }
            MessageBody::BlockAnnounce(block) => self.handle_block_announce(&sender, block, now),
            MessageBody::ChainRequest => {
                let blocks = self.chain.blocks().to_vec();
                vec![self.send_to(&sender, MessageBody::ChainResponse(blocks))]
            }
            MessageBody::ChainResponse(blocks) => self.handle_chain_response(&sender, blocks, now),
        };
        actions.extend(self.poll_completions(now));
        actions
    }

    /// Mines every claim whose tie-break window has closed.
    pub fn tick(&mut self, now: u64) -> Vec<Action> {
        let clock = match self.settings.window {
            TieBreakWindow::Messages(_) => self.processed,
            TieBreakWindow::Millis(_) => now,
        };
        let due: Vec<String> = self
            .own_claims
            .iter()
            .filter(|(_, c)| c.due <= clock)
            .map(|(s, _)| s.clone())
            .collect();
        due.into_iter().flat_map(|s| self.mine(&s, now)).collect()
    }

    /// Closes every open window now.
    pub fn expire_all(&mut self, now: u64) -> Vec<Action> {
        let all: Vec<String> = self.own_claims.keys().cloned().collect();
        all.into_iter().flat_map(|s| self.mine(&s, now)).collect()
    }

    /// Re-claims races that were complete but unmined when the node stopped.
    pub fn resume(&mut self, now: u64) -> Vec<Action> {
        let me = self.settings.node_id.clone();
        let stalled: Vec<String> = self
            .engine
            .students()
            .filter(|r| {
                r.state == StudentState::Frozen
                    && r.collected_by(&me) == r.target_amount
                    && self.chain.contract_block(&r.student_id).is_none()
                    && !self.own_claims.contains_key(&r.student_id)
            })
            .map(|r| r.student_id.clone())
            .collect();
        stalled.into_iter().flat_map(|s| self.claim(&s, now)).collect()
    }

    fn list_student(&mut self, listing: StudentListing, now: u64) -> Result<(), FundingError> {
        let id = listing.student_id.clone();
        self.engine.list_student(listing, now)?;
        if let Some(winner) = self.chain.winner_of(&id).map(str::to_string) {
            self.engine.record_win(&id, &winner, now)?;
        }
        Ok(())
    }

    fn poll_completions(&mut self, now: u64) -> Vec<Action> {
        let me = self.settings.node_id.clone();
        let ready: Vec<String> = self
            .engine
            .students()
            .filter(|r| {
                r.state == StudentState::Active
                    && r.collected_by(&me) == r.target_amount
                    && self.chain.contract_block(&r.student_id).is_none()
            })
            .map(|r| r.student_id.clone())
            .collect();
        ready.into_iter().flat_map(|s| self.claim(&s, now)).collect()
    }

    fn claim(&mut self, student_id: &str, now: u64) -> Vec<Action> {
        let me = self.settings.node_id.clone();
        if let Err(e) = self.engine.freeze_student(student_id, now) {
            warn!(node = %me, student = student_id, "cannot freeze for claim: {e}");
            return Vec::new();
        }
        let collected = self
            .engine
            .student(student_id)
            .map(|r| r.collected_by(&me))
            .unwrap_or_default();
        let actions = self.broadcast(MessageBody::WinClaim(WinClaim {
            student_id: student_id.to_string(),
            fundraiser_id: me.clone(),
            lamport_time: 0,
            collected,
        }));
        let claim = WinClaim {
            student_id: student_id.to_string(),
            fundraiser_id: me.clone(),
            lamport_time: self.lamport,
            collected,
        };
        let best = self.record_claim(claim.clone());
        if best.fundraiser_id == me {
            let due = match self.settings.window {
                TieBreakWindow::Messages(n) => self.processed + n,
                TieBreakWindow::Millis(ms) => now + ms,
            };
            info!(node = %me, student = student_id, lamport = claim.lamport_time, "win claimed");
            self.own_claims.insert(student_id.to_string(), OwnClaim { claim, due });
        } else {
            info!(node = %me, student = student_id, winner = %best.fundraiser_id, "claim already beaten");
        }
        actions
    }

    fn record_claim(&mut self, claim: WinClaim) -> WinClaim {
        let best = match self.best_claims.get(&claim.student_id) {
            Some(current) => resolve_win_conflict(current, &claim).expect("same student").clone(),
            None => claim,
        };
        self.best_claims.insert(best.student_id.clone(), best.clone());
        best
    }

    fn handle_win_claim(&mut self, sender: &str, claim: WinClaim, now: u64) {
        if claim.fundraiser_id != sender {
            self.reject(sender, format!("claim on behalf of {}", claim.fundraiser_id));
            return;
        }
        let Some(record) = self.engine.student(&claim.student_id) else {
            debug!(node = %self.settings.node_id, student = %claim.student_id, "claim for unknown student ignored");
            return;
        };
        if record.state == StudentState::Won || self.chain.contract_block(&claim.student_id).is_some() {
            debug!(node = %self.settings.node_id, student = %claim.student_id, "claim for won student ignored");
            return;
        }
        if record.state == StudentState::Active {
            self.engine
                .freeze_student(&claim.student_id, now)
                .expect("active student can be frozen");
        }
        let student_id = claim.student_id.clone();
        let best = self.record_claim(claim);
        if best.fundraiser_id != self.settings.node_id && self.own_claims.remove(&student_id).is_some() {
            info!(node = %self.settings.node_id, student = %student_id, winner = %best.fundraiser_id, "own claim abandoned");
        }
    }

    fn handle_block_announce(&mut self, sender: &str, block: Block, now: u64) -> Vec<Action> {
        if self.chain.contains(&block) {
            return Vec::new();
        }
        let len = self.chain.len() as u64;
        if block.index == len && block.prev_hash == self.chain.tip().hash {
            return match self.chain.try_append(block.clone()) {
                Ok(()) => {
                    self.after_commit(&block, now);
                    Vec::new()
                }
                Err(e) => {
                    self.reject(sender, format!("announced block refused: {e}"));
                    Vec::new()
                }
            };
        }
        if block.index + 1 >= len {
            return vec![self.send_to(sender, MessageBody::ChainRequest)];
        }
        debug!(node = %self.settings.node_id, index = block.index, "stale block ignored");
        Vec::new()
    }

    fn handle_chain_response(&mut self, sender: &str, blocks: Vec<Block>, now: u64) -> Vec<Action> {
        let remote = match Chain::from_blocks(blocks) {
            Ok(chain) => chain,
            Err(report) => {
                self.reject(sender, format!("invalid chain at index {:?}: {}", report.first_bad_index, report.reason));
                return Vec::new();
            }
        };
        if !prefers_remote(&self.chain, &remote) {
            return Vec::new();
        }
        info!(node = %self.settings.node_id, from = sender, len = remote.len(), "adopting remote chain");
        let old = std::mem::replace(&mut self.chain, remote);
        if let Err(e) = self.engine.adopt_outcomes(&winners_of(&self.chain), now) {
            warn!(node = %self.settings.node_id, "funding state rebuild failed: {e}");
        }
        let chain = &self.chain;
        self.own_claims.retain(|s, _| chain.contract_block(s).is_none());

        // Amendments this node mined on the abandoned branch are re-applied
        // if the block they amend survived. Orphaned contracts reopen their
        // races and are claimed again through the normal path.
        let me = self.settings.node_id.clone();
        let orphans: Vec<Block> = old
            .blocks()
            .iter()
            .filter(|b| b.miner_id == me && b.kind() == BlockKind::Amendment && !self.chain.contains(b))
            .cloned()
            .collect();
        let mut actions: Vec<Action> = self
            .chain
            .blocks()
            .iter()
            .filter(|b| b.miner_id == me && !old.contains(b))
            .filter_map(|b| b.contract())
            .map(|c| Action::Document {
                document: render_contract_document(&c.terms, &c.contacts),
            })
            .collect();
        for orphan in orphans {
            let original = orphan.amends.expect("amendment has a reference");
            let contacts = orphan.amendment().expect("amendment payload").contacts.clone();
            match self.chain.append_amendment(original, contacts, &me, now) {
                Ok(block) => {
                    let block = block.clone();
                    actions.extend(self.broadcast(MessageBody::BlockAnnounce(block)));
                }
                Err(e) => info!(node = %me, index = orphan.index, "orphaned amendment dropped: {e}"),
            }
        }
        actions
    }

    fn mine(&mut self, student_id: &str, now: u64) -> Vec<Action> {
        let me = self.settings.node_id.clone();
        if self.own_claims.remove(student_id).is_none() {
            return Vec::new();
        }
        if self.chain.contract_block(student_id).is_some() {
            return Vec::new();
        }
        if self.best_claims.get(student_id).is_some_and(|b| b.fundraiser_id != me) {
            return Vec::new();
        }
        let terms = match self.engine.settle_win(
            student_id,
            &me,
            self.settings.benefit_percent_bp,
            self.settings.benefit_period_months,
            now,
        ) {
            Ok(terms) => terms,
            Err(e) => {
                warn!(node = %me, student = student_id, "settlement failed: {e}");
                return Vec::new();
            }
        };
        let contacts: Vec<ContactInfo> = terms
            .parties()
            .into_iter()
            .map(|p| self.contacts.get(p).cloned().unwrap_or_else(|| ContactInfo::new(p)))
            .collect();
        let document = render_contract_document(&terms, &contacts);
        let block = match self.chain.append_contract(terms, contacts, document.hash(), &me, now) {
            Ok(block) => block.clone(),
            Err(e) => {
                warn!(node = %me, student = student_id, "mined block refused: {e}");
                if let Err(e) = self.engine.adopt_outcomes(&winners_of(&self.chain), now) {
                    warn!(node = %me, "funding state rebuild failed: {e}");
                }
                return Vec::new();
            }
        };
        info!(node = %me, student = student_id, index = block.index, "contract block mined");
        let mut actions = vec![Action::Mined {
            block: block.clone(),
            document,
        }];
        actions.extend(self.broadcast(MessageBody::BlockAnnounce(block)));
        actions
    }

    fn after_commit(&mut self, block: &Block, now: u64) {
        let Some(contract) = block.contract() else { return };
        let student = contract.terms.student_id.clone();
        let winner = contract.terms.fundraiser_id.clone();
        self.own_claims.remove(&student);
        if self
            .engine
            .student(&student)
            .is_some_and(|r| r.state != StudentState::Won)
        {
            if let Err(e) = self.engine.record_win(&student, &winner, now) {
                warn!(node = %self.settings.node_id, student = %student, "closing race failed: {e}");
            }
        }
    }

    fn reject(&mut self, sender: &str, reason: String) {
        self.rejected += 1;
        warn!(node = %self.settings.node_id, sender, "{reason}");
    }
}

/// Students with a contract block on `chain`, mapped to their fundraiser.
pub fn winners_of(chain: &Chain) -> BTreeMap<String, String> {
    chain
        .winners()
        .map(|(s, f)| (s.to_string(), f.to_string()))
        .collect()
}
