//! The node's state and every command it accepts. Callers serialize access
//! (one lock per node), so each command sees all earlier ones.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use teduchain_core::consensus::{Action, FundraiserNode, Message, MessageBody, NodeError, NodeSettings, TieBreakWindow};
use teduchain_core::document::{render_contract_document, ContractDocument};
use teduchain_core::funding::{FundingError, FundingEvent, Pledge, StudentState, Wallet};
use teduchain_core::ledger::{BlockRecord, Cents, ContractView, LedgerError};
use teduchain_core::registry::{
    Account, AccountRequest, ApplicationRequest, Eligibility, EligibilityRules, RegistryError, RejectReason, Registry,
    Role, StudentApplication,
};
use teduchain_core::store::{self, StoreError, LEDGER_FILE, PLEDGE_LOG_FILE, REGISTRY_FILE};
use teduchain_core::{Hash256, VerificationReport};

use crate::config::NodeConfig;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{what} {id} not found")]
    NotFound { what: &'static str, id: String },
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Node(#[from] NodeError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl From<FundingError> for ServiceError {
    fn from(e: FundingError) -> Self {
        ServiceError::Node(NodeError::Funding(e))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyOutcome {
    pub application: StudentApplication,
    pub eligible: bool,
    pub reason: Option<RejectReason>,
}

/// A student whose race is open or frozen on this node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveStudentView {
    pub student_id: String,
    pub program_name: String,
    pub institute_name: String,
    pub program_duration_months: u32,
    pub target_amount: Cents,
    pub state: StudentState,
    pub collected: BTreeMap<String, Cents>,
    /// Still needed through this node's fundraiser.
    pub remaining: Cents,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractRef {
    pub fundraiser_id: String,
    pub block_index: u64,
    pub block_hash: Hash256,
    pub document_hash: Hash256,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RaceView {
    pub state: StudentState,
    pub target_amount: Cents,
    pub collected: BTreeMap<String, Cents>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudentStatusView {
    pub student_id: String,
    pub application: Option<StudentApplication>,
    pub race: Option<RaceView>,
    pub contract: Option<ContractRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalletView {
    #[serde(flatten)]
    pub wallet: Wallet,
    pub pledges: Vec<Pledge>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainView {
    pub length: usize,
    pub tip_hash: Hash256,
    pub blocks: Vec<BlockRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PledgeRequest {
    pub sponsor_id: String,
    pub student_id: String,
    pub fundraiser_id: String,
    pub amount_cents: Cents,
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or_default()
}

pub struct NodeService {
    node: FundraiserNode,
    registry: Registry,
    data_dir: PathBuf,
    outbox: PathBuf,
    persisted_events: usize,
    persisted_tip: (usize, Hash256),
    persisted_registry: Option<Hash256>,
    outgoing: Vec<(String, Message)>,
}

impl NodeService {
    /// Opens the data directory, restoring chain, pledge log and registry if
    /// present, and re-claims races left complete but unmined.
    pub fn open(config: &NodeConfig) -> Result<NodeService, ServiceError> {
        let data_dir = config.data_dir.clone();
        let outbox = config.outbox();
        for dir in [&data_dir, &outbox] {
            fs::create_dir_all(dir).map_err(|source| StoreError::Io {
                path: dir.clone(),
                source,
            })?;
        }
        let chain = store::load_chain_or_genesis(&data_dir.join(LEDGER_FILE))?;
        let log = store::load_pledge_log(&data_dir.join(PLEDGE_LOG_FILE))?;
        let registry = match store::load_registry(&data_dir.join(REGISTRY_FILE))? {
            Some(r) => r,
            None => {
                let records = match &config.verification_records {
                    Some(path) => {
                        let file = File::open(path).map_err(|source| StoreError::Io {
                            path: path.clone(),
                            source,
                        })?;
                        teduchain_core::registry::load_verification_records(file)?
                    }
                    None => Vec::new(),
                };
                Registry::new(
                    EligibilityRules {
                        min_score: config.min_score,
                        max_income_cents: config.max_income_cents,
                    },
                    records,
                )
            }
        };
        let mut peers: Vec<String> = config.peers.iter().map(|p| p.node_id.clone()).collect();
        peers.push(config.node_id.clone());
        let settings = NodeSettings {
            node_id: config.node_id.clone(),
            peers,
            window: TieBreakWindow::Millis(config.tie_break_ms),
            benefit_percent_bp: config.benefit_percent_bp,
            benefit_period_months: config.benefit_period_months,
        };
        let persisted_events = log.len();
        let persisted_tip = (chain.len(), chain.tip().hash);
        // Wall-clock milliseconds exceed any stamp this node used before.
        let now = now_ms();
        let mut node = FundraiserNode::restore(settings, chain, &log, now)?;
        for account in registry.accounts() {
            if let Some(contact) = registry.contact_of(&account.account_id) {
                node.set_contact(contact);
            }
        }
        let mut service = NodeService {
            node,
            registry,
            data_dir,
            outbox,
            persisted_events,
            persisted_tip,
            persisted_registry: None,
            outgoing: Vec::new(),
        };
        service.restore_outbox()?;
        let actions = service.node.resume(now);
        service.carry_out(actions)?;
        let catch_up = service.node.broadcast(MessageBody::ChainRequest);
        service.carry_out(catch_up)?;
        service.settle(now)?;
        info!(node = %service.node.node_id(), blocks = service.node.chain().len(), "node opened");
        Ok(service)
    }

    pub fn node(&self) -> &FundraiserNode {
        &self.node
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    pub fn outbox(&self) -> &Path {
        &self.outbox
    }

    /// Messages produced since the last call, as (peer, message) pairs.
    pub fn take_outgoing(&mut self) -> Vec<(String, Message)> {
        std::mem::take(&mut self.outgoing)
    }

    pub fn register_account(&mut self, request: AccountRequest) -> Result<Account, ServiceError> {
        let account = self.registry.register_account(request)?.clone();
        if account.role() == Role::Sponsor {
            self.node.open_wallet(&account.account_id, now_ms())?;
        }
        if let Some(contact) = self.registry.contact_of(&account.account_id) {
            self.node.set_contact(contact);
        }
        self.settle(now_ms())?;
        Ok(account)
    }

    pub fn submit_application(&mut self, request: ApplicationRequest) -> Result<StudentApplication, ServiceError> {
        let now = now_ms();
        let application = self.registry.submit_application(request, now)?.clone();
        self.settle(now)?;
        Ok(application)
    }

    /// Checks an application; an eligible student is listed here and
    /// announced to every peer.
    pub fn verify_application(&mut self, application_id: &str) -> Result<VerifyOutcome, ServiceError> {
        let now = now_ms();
        let outcome = self.registry.verify_eligibility(application_id, now)?;
        let reason = match outcome {
            Eligibility::Eligible(listing) => {
                if self.node.engine().student(&listing.student_id).is_none() {
                    let actions = self.node.activate_student(listing, now)?;
                    self.carry_out(actions)?;
                }
                None
            }
            Eligibility::Rejected(reason) => Some(reason),
        };
        self.settle(now)?;
        let application = self
            .registry
            .application(application_id)
            .expect("verified application exists")
            .clone();
        Ok(VerifyOutcome {
            application,
            eligible: reason.is_none(),
            reason,
        })
    }

    /// Open and frozen races in the order the students became eligible.
    pub fn active_students(&self) -> Vec<ActiveStudentView> {
        let me = self.node.node_id();
        self.node
            .engine()
            .log()
            .iter()
            .filter_map(|e| match e {
                FundingEvent::StudentListed { listing, .. } => Some(listing.student_id.as_str()),
                _ => None,
            })
            .filter_map(|id| self.node.engine().student(id))
            .filter(|r| r.state != StudentState::Won)
            .map(|r| ActiveStudentView {
                student_id: r.student_id.clone(),
                program_name: r.program_name.clone(),
                institute_name: r.institute_name.clone(),
                program_duration_months: r.program_duration_months,
                target_amount: r.target_amount,
                state: r.state,
                collected: r.collected.clone(),
                remaining: r.remaining_for(me),
            })
            .collect()
    }

    pub fn student_status(&self, student_id: &str) -> Result<StudentStatusView, ServiceError> {
        let application = self.registry.application_of(student_id).cloned();
        let race = self.node.engine().student(student_id).map(|r| RaceView {
            state: r.state,
            target_amount: r.target_amount,
            collected: r.collected.clone(),
        });
        let contract = self.node.chain().contract_block(student_id).map(|b| ContractRef {
            fundraiser_id: b.contract().expect("contract block").terms.fundraiser_id.clone(),
            block_index: b.index,
            block_hash: b.hash,
            document_hash: b.document_hash,
        });
        if application.is_none() && race.is_none() && contract.is_none() {
            return Err(not_found("student", student_id));
        }
        Ok(StudentStatusView {
            student_id: student_id.to_string(),
            application,
            race,
            contract,
        })
    }

    pub fn deposit(&mut self, sponsor_id: &str, amount: Cents) -> Result<Wallet, ServiceError> {
        let now = now_ms();
        if self.node.engine().wallet(sponsor_id).is_none() {
            match self.registry.account(sponsor_id) {
                Some(a) if a.role() == Role::Sponsor => self.node.open_wallet(sponsor_id, now)?,
                _ => return Err(not_found("sponsor", sponsor_id)),
            }
        }
        self.node.deposit(sponsor_id, amount, now)?;
        self.settle(now)?;
        Ok(self.node.engine().wallet(sponsor_id).expect("wallet opened").clone())
    }

    pub fn wallet(&self, sponsor_id: &str) -> Result<WalletView, ServiceError> {
        let wallet = self
            .node
            .engine()
            .wallet(sponsor_id)
            .ok_or_else(|| not_found("sponsor", sponsor_id))?
            .clone();
        Ok(WalletView {
            wallet,
            pledges: self.node.engine().pledges_of(sponsor_id).cloned().collect(),
        })
    }

    pub fn place_pledge(&mut self, request: PledgeRequest) -> Result<Pledge, ServiceError> {
        let now = now_ms();
        if self.node.engine().wallet(&request.sponsor_id).is_none() {
            return Err(not_found("sponsor", &request.sponsor_id));
        }
        if self.node.engine().student(&request.student_id).is_none() {
            return Err(not_found("student", &request.student_id));
        }
        let (pledge, actions) = self.node.place_pledge(
            &request.sponsor_id,
            &request.student_id,
            &request.fundraiser_id,
            request.amount_cents,
            now,
        )?;
        self.carry_out(actions)?;
        self.settle(now)?;
        Ok(self.node.engine().pledge(&pledge.pledge_id).cloned().unwrap_or(pledge))
    }

    pub fn chain(&self) -> ChainView {
        let chain = self.node.chain();
        ChainView {
            length: chain.len(),
            tip_hash: chain.tip().hash,
            blocks: chain.blocks().iter().map(|b| b.to_record()).collect(),
        }
    }

    pub fn verify_chain(&self) -> VerificationReport {
        self.node.chain().verify()
    }

    pub fn block(&self, index: u64) -> Result<BlockRecord, ServiceError> {
        self.node
            .chain()
            .get(index)
            .map(|b| b.to_record())
            .ok_or_else(|| not_found("block", &index.to_string()))
    }

    pub fn contract(&self, student_id: &str) -> Result<ContractView, ServiceError> {
        match self.node.chain().effective_contract(student_id) {
            Ok(view) => Ok(view),
            Err(LedgerError::NotFound(_)) => Err(not_found("contract", student_id)),
            Err(e) => Err(ServiceError::Node(NodeError::Ledger(e))),
        }
    }

    /// Processes one message from a peer.
    pub fn handle_message(&mut self, message: Message) -> Result<(), ServiceError> {
        let now = now_ms();
        let actions = self.node.handle(message, now);
        self.carry_out(actions)?;
        self.settle(now)
    }

    /// Mines claims whose tie-break window has closed.
    pub fn tick(&mut self) -> Result<(), ServiceError> {
        self.settle(now_ms())
    }

    // Runs due mining, keeps the registry in step with the chain and writes
    // whatever changed to disk.
    fn settle(&mut self, now: u64) -> Result<(), ServiceError> {
        let actions = self.node.tick(now);
        self.carry_out(actions)?;
        self.sync_registry(now);
        self.persist()
    }

    fn carry_out(&mut self, actions: Vec<Action>) -> Result<(), ServiceError> {
        for action in actions {
            match action {
                Action::Send { to, message } => self.outgoing.push((to, message)),
                Action::Mined { document, .. } | Action::Document { document } => {
                    let path = store::write_document(&self.outbox, &document)?;
                    info!(node = %self.node.node_id(), path = %path.display(), "contract document written");
                }
            }
        }
        Ok(())
    }

    fn sync_registry(&mut self, now: u64) {
        let chain = self.node.chain();
        let won: Vec<String> = self
            .registry
            .applications()
            .filter(|a| a.status == teduchain_core::registry::ApplicationStatus::Won)
            .filter(|a| chain.contract_block(&a.student_id).is_none())
            .map(|a| a.student_id.clone())
            .collect();
        for s in won {
            self.registry.reopen(&s, now);
        }
        let funded: Vec<String> = chain.winners().map(|(s, _)| s.to_string()).collect();
        for s in funded {
            self.registry.mark_won(&s, now);
        }
    }

    fn persist(&mut self) -> Result<(), ServiceError> {
        let log = self.node.engine().log();
        if log.len() > self.persisted_events {
            store::append_pledge_events(&self.data_dir.join(PLEDGE_LOG_FILE), &log[self.persisted_events..])?;
            self.persisted_events = log.len();
        }
        let chain = self.node.chain();
        let tip = (chain.len(), chain.tip().hash);
        let ledger = self.data_dir.join(LEDGER_FILE);
        if tip != self.persisted_tip || !ledger.exists() {
            store::persist_chain(chain, &ledger)?;
            self.persisted_tip = tip;
        }
        let bytes = self.registry.to_bytes();
        let digest = teduchain_core::sha256(&bytes);
        if self.persisted_registry != Some(digest) {
            store::write_atomic(&self.data_dir.join(REGISTRY_FILE), &bytes)?;
            self.persisted_registry = Some(digest);
        }
        Ok(())
    }

    // Documents for this node's contract blocks are reproducible from the
    // block payload; rewrite any that are missing.
    fn restore_outbox(&mut self) -> Result<(), ServiceError> {
        let me = self.node.node_id().to_string();
        let mut missing: Vec<ContractDocument> = Vec::new();
        for block in self.node.chain().blocks() {
            let Some(contract) = block.contract() else { continue };
            if block.miner_id != me {
                continue;
            }
            let document = render_contract_document(&contract.terms, &contract.contacts);
            if document.hash() != block.document_hash {
                warn!(index = block.index, "stored document hash does not match the rendered document");
                continue;
            }
            if !self.outbox.join(document.file_name()).exists() {
                missing.push(document);
            }
        }
        for document in missing {
            store::write_document(&self.outbox, &document)?;
        }
        Ok(())
    }
}

fn not_found(what: &'static str, id: &str) -> ServiceError {
    ServiceError::NotFound {
        what,
        id: id.to_string(),
    }
}
