//! Sponsor wallets and pledge escrow for funding races.
//!
//! Each pledge reserves funds in the sponsor's wallet for one
//! (student, fundraiser) race. When a fundraiser collects a student's full
//! target, its pledges settle into contract shares and every other race's
//! pledges for that student are rolled back into the sponsors' wallets.
//!
//! Every state change is appended to an event log. The log, together with the
//! set of students that have a contract block on the adopted chain, is enough
//! to rebuild the engine exactly (see [`FundingEngine::replay`]).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::{Cents, ContractTerms, InvestorShare};

pub type PledgeId = String;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Wallet {
    pub sponsor_id: String,
    pub available: Cents,
    pub reserved: Cents,
    pub total_deposited: Cents,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PledgeStatus {
    Active,
    Won,
    RolledBack,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pledge {
    pub pledge_id: PledgeId,
    pub sponsor_id: String,
    pub student_id: String,
    pub fundraiser_id: String,
    pub amount: Cents,
    pub status: PledgeStatus,
    pub placed_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StudentState {
    Active,
    Frozen,
    Won,
}

/// What a fundraiser needs to know about an eligible student to run a race.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudentListing {
    pub student_id: String,
    pub target_amount: Cents,
    pub program_name: String,
    pub institute_name: String,
    pub program_duration_months: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveStudentRecord {
    pub student_id: String,
    pub target_amount: Cents,
    pub program_name: String,
    pub institute_name: String,
    pub program_duration_months: u32,
    pub state: StudentState,
    pub collected: BTreeMap<String, Cents>,
}

impl ActiveStudentRecord {
    pub fn collected_by(&self, fundraiser_id: &str) -> Cents {
        self.collected.get(fundraiser_id).copied().unwrap_or(0)
    }

    pub fn remaining_for(&self, fundraiser_id: &str) -> Cents {
        self.target_amount.saturating_sub(self.collected_by(fundraiser_id))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WinCandidate {
    pub student_id: String,
    pub fundraiser_id: String,
    pub collected: Cents,
    pub claim_time: u64,
}

/// One line of the pledge event log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum FundingEvent {
    WalletOpened {
        sponsor_id: String,
        time: u64,
    },
    StudentListed {
        listing: StudentListing,
        time: u64,
    },
    Deposit {
        sponsor_id: String,
        amount: Cents,
        time: u64,
    },
    PledgePlaced {
        pledge_id: PledgeId,
        sponsor_id: String,
        student_id: String,
        fundraiser_id: String,
        amount: Cents,
        time: u64,
    },
    PledgeStatus {
        pledge_id: PledgeId,
        sponsor_id: String,
        amount: Cents,
        from: PledgeStatus,
        to: PledgeStatus,
        time: u64,
    },
    StudentFrozen {
        student_id: String,
        time: u64,
    },
    StudentWon {
        student_id: String,
        fundraiser_id: String,
        time: u64,
    },
    /// A won student whose contract block was abandoned by fork choice.
    StudentReopened {
        student_id: String,
        time: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FundingError {
    #[error("amount must be positive")]
    NonPositiveAmount,
    #[error("unknown sponsor {0}")]
    UnknownSponsor(String),
    #[error("unknown student {0}")]
    UnknownStudent(String),
    #[error("student {0} is already listed")]
    AlreadyListed(String),
    #[error("identifier must not be empty")]
    EmptyIdentifier,
    #[error("insufficient funds: {available} available, {requested} requested")]
    InsufficientFunds { available: Cents, requested: Cents },
    #[error("pledge of {requested} exceeds the {remaining} still needed through this fundraiser")]
    ExceedsRemaining { remaining: Cents, requested: Cents },
    #[error("student {student_id} is not accepting pledges ({state:?})")]
    StudentNotActive { student_id: String, state: StudentState },
    #[error("race not complete: {collected} of {target} collected")]
    NotComplete { collected: Cents, target: Cents },
    #[error("student {0} has already been won")]
    AlreadyWon(String),
    #[error("student {0} is still active; freeze the race before rolling back")]
    StillActive(String),
    #[error("event log is inconsistent: {0}")]
    InconsistentLog(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FundingEngine {
    pledge_prefix: String,
    next_pledge: u64,
    wallets: BTreeMap<String, Wallet>,
    students: BTreeMap<String, ActiveStudentRecord>,
    pledges: BTreeMap<PledgeId, Pledge>,
    log: Vec<FundingEvent>,
}

impl FundingEngine {
    /// `pledge_prefix` namespaces the pledge ids this engine hands out.
    pub fn new(pledge_prefix: impl Into<String>) -> Self {
        FundingEngine {
            pledge_prefix: pledge_prefix.into(),
            next_pledge: 1,
            wallets: BTreeMap::new(),
            students: BTreeMap::new(),
            pledges: BTreeMap::new(),
            log: Vec::new(),
        }
    }

    pub fn wallet(&self, sponsor_id: &str) -> Option<&Wallet> {
        self.wallets.get(sponsor_id)
    }

    pub fn wallets(&self) -> impl Iterator<Item = &Wallet> {
        self.wallets.values()
    }

    pub fn student(&self, student_id: &str) -> Option<&ActiveStudentRecord> {
        self.students.get(student_id)
    }

    pub fn students(&self) -> impl Iterator<Item = &ActiveStudentRecord> {
        self.students.values()
    }

    pub fn pledge(&self, pledge_id: &str) -> Option<&Pledge> {
        self.pledges.get(pledge_id)
    }

    pub fn pledges(&self) -> impl Iterator<Item = &Pledge> {
        self.pledges.values()
    }

    pub fn pledges_of(&self, sponsor_id: &str) -> impl Iterator<Item = &Pledge> {
        let sponsor_id = sponsor_id.to_string();
        self.pledges.values().filter(move |p| p.sponsor_id == sponsor_id)
    }

    pub fn log(&self) -> &[FundingEvent] {
        &self.log
    }

    /// Opens an empty wallet. Opening an existing wallet is a no-op.
    pub fn open_wallet(&mut self, sponsor_id: &str, time: u64) -> Result<&Wallet, FundingError> {
        if sponsor_id.is_empty() {
            return Err(FundingError::EmptyIdentifier);
        }
        if !self.wallets.contains_key(sponsor_id) {
            self.wallets.insert(sponsor_id.to_string(), empty_wallet(sponsor_id));
            self.log.push(FundingEvent::WalletOpened {
                sponsor_id: sponsor_id.to_string(),
                time,
            });
        }
        Ok(&self.wallets[sponsor_id])
    }

    pub fn list_student(
        &mut self,
        listing: StudentListing,
        time: u64,
    ) -> Result<&ActiveStudentRecord, FundingError> {
        if listing.student_id.is_empty() {
            return Err(FundingError::EmptyIdentifier);
        }
        if listing.target_amount == 0 {
            return Err(FundingError::NonPositiveAmount);
        }
        if self.students.contains_key(&listing.student_id) {
            return Err(FundingError::AlreadyListed(listing.student_id));
        }
        let id = listing.student_id.clone();
        self.students.insert(id.clone(), new_record(&listing));
        self.log.push(FundingEvent::StudentListed { listing, time });
        Ok(&self.students[&id])
    }

    pub fn deposit(&mut self, sponsor_id: &str, amount: Cents, time: u64) -> Result<&Wallet, FundingError> {
        if amount == 0 {
            return Err(FundingError::NonPositiveAmount);
        }
        let wallet = self
            .wallets
            .get_mut(sponsor_id)
            .ok_or_else(|| FundingError::UnknownSponsor(sponsor_id.to_string()))?;
        wallet.available += amount;
        wallet.total_deposited += amount;
        self.log.push(FundingEvent::Deposit {
            sponsor_id: sponsor_id.to_string(),
            amount,
            time,
        });
        Ok(&self.wallets[sponsor_id])
    }

    /// Escrows `amount` from the sponsor's wallet into one fundraiser's race
    /// for a student. Pledges that would overshoot the student's target
    /// through that fundraiser are refused outright.
    pub fn place_pledge(
        &mut self,
        sponsor_id: &str,
        student_id: &str,
        fundraiser_id: &str,
        amount: Cents,
        time: u64,
    ) -> Result<Pledge, FundingError> {
        if amount == 0 {
            return Err(FundingError::NonPositiveAmount);
        }
        if fundraiser_id.is_empty() {
            return Err(FundingError::EmptyIdentifier);
        }
        let available = self
            .wallets
            .get(sponsor_id)
            .ok_or_else(|| FundingError::UnknownSponsor(sponsor_id.to_string()))?
            .available;
        let record = self
            .students
            .get(student_id)
            .ok_or_else(|| FundingError::UnknownStudent(student_id.to_string()))?;
        if record.state != StudentState::Active {
            return Err(FundingError::StudentNotActive {
                student_id: student_id.to_string(),
                state: record.state,
            });
        }
        let remaining = record.remaining_for(fundraiser_id);
        if amount > remaining {
            return Err(FundingError::ExceedsRemaining { remaining, requested: amount });
        }
        if amount > available {
            return Err(FundingError::InsufficientFunds { available, requested: amount });
        }

        let pledge_id = format!("{}-{:06}", self.pledge_prefix, self.next_pledge);
        self.next_pledge += 1;
        let wallet = self.wallets.get_mut(sponsor_id).expect("checked above");
        wallet.available -= amount;
        wallet.reserved += amount;
        *self
            .students
            .get_mut(student_id)
            .expect("checked above")
            .collected
            .entry(fundraiser_id.to_string())
            .or_insert(0) += amount;
        let pledge = Pledge {
            pledge_id: pledge_id.clone(),
            sponsor_id: sponsor_id.to_string(),
            student_id: student_id.to_string(),
            fundraiser_id: fundraiser_id.to_string(),
            amount,
            status: PledgeStatus::Active,
            placed_at: time,
        };
        self.pledges.insert(pledge_id.clone(), pledge.clone());
        self.log.push(FundingEvent::PledgePlaced {
            pledge_id,
            sponsor_id: sponsor_id.to_string(),
            student_id: student_id.to_string(),
            fundraiser_id: fundraiser_id.to_string(),
            amount,
            time,
        });
        Ok(pledge)
    }

    pub fn check_completion(
        &self,
        fundraiser_id: &str,
        student_id: &str,
        time: u64,
    ) -> Result<Option<WinCandidate>, FundingError> {
        let record = self
            .students
            .get(student_id)
            .ok_or_else(|| FundingError::UnknownStudent(student_id.to_string()))?;
        let collected = record.collected_by(fundraiser_id);
        if record.state == StudentState::Active && collected == record.target_amount {
            Ok(Some(WinCandidate {
                student_id: student_id.to_string(),
                fundraiser_id: fundraiser_id.to_string(),
                collected,
                claim_time: time,
            }))
        } else {
            Ok(None)
        }
    }

    /// Stops a race: no further pledges are accepted for the student.
    pub fn freeze_student(&mut self, student_id: &str, time: u64) -> Result<&ActiveStudentRecord, FundingError> {
        let record = self
            .students
            .get_mut(student_id)
            .ok_or_else(|| FundingError::UnknownStudent(student_id.to_string()))?;
        match record.state {
            StudentState::Won => return Err(FundingError::AlreadyWon(student_id.to_string())),
            StudentState::Frozen => {}
            StudentState::Active => {
                record.state = StudentState::Frozen;
                self.log.push(FundingEvent::StudentFrozen {
                    student_id: student_id.to_string(),
                    time,
                });
            }
        }
        Ok(&self.students[student_id])
    }

    /// Settles the winning race: the winner's pledges leave the sponsors'
    /// wallets and become one investor share per sponsor. Losing pledges are
    /// rolled back in the same step.
    pub fn settle_win(
        &mut self,
        student_id: &str,
        fundraiser_id: &str,
        benefit_percent_bp: u32,
        benefit_period_months: u32,
        time: u64,
    ) -> Result<ContractTerms, FundingError> {
        let record = self
            .students
            .get(student_id)
            .ok_or_else(|| FundingError::UnknownStudent(student_id.to_string()))?;
        if record.state == StudentState::Won {
            return Err(FundingError::AlreadyWon(student_id.to_string()));
        }
        let collected = record.collected_by(fundraiser_id);
        if collected != record.target_amount {
            return Err(FundingError::NotComplete {
                collected,
                target: record.target_amount,
            });
        }

        let mut shares: BTreeMap<&str, Cents> = BTreeMap::new();
        for p in self.pledges.values() {
            if p.student_id == student_id && p.fundraiser_id == fundraiser_id && p.status == PledgeStatus::Active {
                *shares.entry(p.sponsor_id.as_str()).or_insert(0) += p.amount;
            }
        }
        let terms = ContractTerms {
            student_id: student_id.to_string(),
            program_name: record.program_name.clone(),
            institute_name: record.institute_name.clone(),
            program_cost: record.target_amount,
            program_duration_months: record.program_duration_months,
            shares: shares
                .into_iter()
                .map(|(sponsor_id, amount)| InvestorShare {
                    sponsor_id: sponsor_id.to_string(),
                    amount,
                })
                .collect(),
            benefit_percent_bp,
            benefit_period_months,
            fundraiser_id: fundraiser_id.to_string(),
        };
        self.record_win(student_id, fundraiser_id, time)?;
        Ok(terms)
    }

    /// Closes a race that `winner` won, whether the win was settled here or
    /// learned from another node's block.
    pub fn record_win(&mut self, student_id: &str, winner: &str, time: u64) -> Result<Vec<PledgeId>, FundingError> {
        let state = self
            .students
            .get(student_id)
            .ok_or_else(|| FundingError::UnknownStudent(student_id.to_string()))?
            .state;
        if state == StudentState::Won {
            return Err(FundingError::AlreadyWon(student_id.to_string()));
        }
        let winning: Vec<PledgeId> = self
            .pledges
            .values()
            .filter(|p| p.student_id == student_id && p.fundraiser_id == winner && p.status == PledgeStatus::Active)
            .map(|p| p.pledge_id.clone())
            .collect();
        for id in winning {
            self.transition(&id, PledgeStatus::Won, time);
        }
        let record = self.students.get_mut(student_id).expect("checked above");
        record.state = StudentState::Won;
        self.log.push(FundingEvent::StudentWon {
            student_id: student_id.to_string(),
            fundraiser_id: winner.to_string(),
            time,
        });
        self.rollback_pledges(student_id, winner, time)
    }

    /// Refunds every active pledge for the student made through a fundraiser
    /// other than `winner`. Idempotent.
    pub fn rollback_pledges(&mut self, student_id: &str, winner: &str, time: u64) -> Result<Vec<PledgeId>, FundingError> {
        let record = self
            .students
            .get(student_id)
            .ok_or_else(|| FundingError::UnknownStudent(student_id.to_string()))?;
        if record.state == StudentState::Active {
            return Err(FundingError::StillActive(student_id.to_string()));
        }
        let losing: Vec<PledgeId> = self
            .pledges
            .values()
            .filter(|p| p.student_id == student_id && p.fundraiser_id != winner && p.status == PledgeStatus::Active)
            .map(|p| p.pledge_id.clone())
            .collect();
        for id in &losing {
            self.transition(id, PledgeStatus::RolledBack, time);
        }
        Ok(losing)
    }

    fn transition(&mut self, pledge_id: &str, to: PledgeStatus, time: u64) {
        let pledge = self.pledges.get_mut(pledge_id).expect("pledge exists");
        let from = pledge.status;
        if from == to {
            return;
        }
        pledge.status = to;
        let (sponsor, student, fundraiser, amount) = (
            pledge.sponsor_id.clone(),
            pledge.student_id.clone(),
            pledge.fundraiser_id.clone(),
            pledge.amount,
        );
        let wallet = self.wallets.get_mut(&sponsor).expect("pledging sponsor has a wallet");
        apply_bucket_move(wallet, from, to, amount);
        let collected = self
            .students
            .get_mut(&student)
            .expect("pledged student is listed")
            .collected
            .entry(fundraiser)
            .or_insert(0);
        match (from, to) {
            (PledgeStatus::RolledBack, _) => *collected += amount,
            (_, PledgeStatus::RolledBack) => *collected -= amount,
            _ => {}
        }
        self.log.push(FundingEvent::PledgeStatus {
            pledge_id: pledge_id.to_string(),
            sponsor_id: sponsor,
            amount,
            from,
            to,
            time,
        });
    }

    /// Rebuilds an engine from its event log and the races decided on the
    /// adopted chain (`winners`: student id to winning fundraiser).
    ///
    /// Pledges for a decided race are Won if made through the winner and
    /// RolledBack otherwise; a winner's pledge that was already rolled back
    /// when the win was recorded stays RolledBack. For undecided races a
    /// logged rollback stands (those funds may already have been re-pledged),
    /// and anything else is Active again. A student whose win is not on the chain is Active again
    /// unless a later claim froze it. Balances are recomputed from the
    /// resulting statuses.
    pub fn replay(
        pledge_prefix: impl Into<String>,
        events: &[FundingEvent],
        winners: &BTreeMap<String, String>,
    ) -> Result<FundingEngine, FundingError> {
        let mut engine = FundingEngine::new(pledge_prefix);
        let mut deposited: BTreeMap<String, Cents> = BTreeMap::new();
        let mut last_status: BTreeMap<PledgeId, PledgeStatus> = BTreeMap::new();
        // Last race-closing event per student. A win that is no longer on the
        // chain reopens the race.
        let mut closing: BTreeMap<String, StudentState> = BTreeMap::new();
        // Pledges already rolled back when a fundraiser's win was last
        // recorded. They were not part of that contract.
        let mut stranded: BTreeMap<(String, String), BTreeSet<PledgeId>> = BTreeMap::new();
        let mut by_race: BTreeMap<(String, String), Vec<PledgeId>> = BTreeMap::new();
        let mut max_seq = 0u64;

        for event in events {
            match event {
                FundingEvent::WalletOpened { sponsor_id, .. } => {
                    engine.wallets.insert(sponsor_id.clone(), empty_wallet(sponsor_id));
                }
                FundingEvent::StudentListed { listing, .. } => {
                    engine.students.insert(listing.student_id.clone(), new_record(listing));
                }
                FundingEvent::Deposit { sponsor_id, amount, .. } => {
                    *deposited.entry(sponsor_id.clone()).or_insert(0) += amount;
                }
                FundingEvent::PledgePlaced {
                    pledge_id,
                    sponsor_id,
                    student_id,
                    fundraiser_id,
                    amount,
                    time,
                } => {
                    if let Some(seq) = pledge_id.rsplit('-').next().and_then(|s| s.parse::<u64>().ok()) {
                        max_seq = max_seq.max(seq);
                    }
                    by_race
                        .entry((student_id.clone(), fundraiser_id.clone()))
                        .or_default()
                        .push(pledge_id.clone());
                    engine.pledges.insert(
                        pledge_id.clone(),
                        Pledge {
                            pledge_id: pledge_id.clone(),
                            sponsor_id: sponsor_id.clone(),
                            student_id: student_id.clone(),
                            fundraiser_id: fundraiser_id.clone(),
                            amount: *amount,
                            status: PledgeStatus::Active,
                            placed_at: *time,
                        },
                    );
                }
                FundingEvent::PledgeStatus { pledge_id, to, .. } => {
                    last_status.insert(pledge_id.clone(), *to);
                }
                FundingEvent::StudentFrozen { student_id, .. } => {
                    closing.insert(student_id.clone(), StudentState::Frozen);
                }
                FundingEvent::StudentWon {
                    student_id,
                    fundraiser_id,
                    ..
                } => {
                    closing.insert(student_id.clone(), StudentState::Active);
                    let race = (student_id.clone(), fundraiser_id.clone());
                    let set = by_race
                        .get(&race)
                        .into_iter()
                        .flatten()
                        .filter(|id| last_status.get(*id) == Some(&PledgeStatus::RolledBack))
                        .cloned()
                        .collect();
                    stranded.insert(race, set);
                }
                FundingEvent::StudentReopened { student_id, .. } => {
                    closing.insert(student_id.clone(), StudentState::Active);
                }
            }
        }
        engine.next_pledge = max_seq + 1;

        for pledge in engine.pledges.values_mut() {
            pledge.status = match winners.get(&pledge.student_id) {
                Some(w) if *w == pledge.fundraiser_id => {
                    let left_out = stranded
                        .get(&(pledge.student_id.clone(), w.clone()))
                        .is_some_and(|set| set.contains(&pledge.pledge_id));
                    if left_out {
                        PledgeStatus::RolledBack
                    } else {
                        PledgeStatus::Won
                    }
                }
                Some(_) => PledgeStatus::RolledBack,
                None => match last_status.get(&pledge.pledge_id) {
                    Some(PledgeStatus::RolledBack) => PledgeStatus::RolledBack,
                    _ => PledgeStatus::Active,
                },
            };
        }
        for (id, record) in engine.students.iter_mut() {
            record.state = if winners.contains_key(id) {
                StudentState::Won
            } else {
                closing.get(id).copied().unwrap_or(StudentState::Active)
            };
        }

        let mut committed: BTreeMap<String, Cents> = BTreeMap::new();
        for pledge in engine.pledges.values() {
            let record = engine
                .students
                .get_mut(&pledge.student_id)
                .ok_or_else(|| FundingError::InconsistentLog(format!("pledge for unlisted student {}", pledge.student_id)))?;
            let wallet = engine
                .wallets
                .get_mut(&pledge.sponsor_id)
                .ok_or_else(|| FundingError::InconsistentLog(format!("pledge from unknown sponsor {}", pledge.sponsor_id)))?;
            match pledge.status {
                PledgeStatus::Active => {
                    wallet.reserved += pledge.amount;
                    *committed.entry(pledge.sponsor_id.clone()).or_insert(0) += pledge.amount;
                    *record.collected.entry(pledge.fundraiser_id.clone()).or_insert(0) += pledge.amount;
                }
                PledgeStatus::Won => {
                    *committed.entry(pledge.sponsor_id.clone()).or_insert(0) += pledge.amount;
                    *record.collected.entry(pledge.fundraiser_id.clone()).or_insert(0) += pledge.amount;
                }
                PledgeStatus::RolledBack => {
                    record.collected.entry(pledge.fundraiser_id.clone()).or_insert(0);
                }
            }
        }
        for (id, wallet) in engine.wallets.iter_mut() {
            let total = deposited.get(id).copied().unwrap_or(0);
            let spent = committed.get(id).copied().unwrap_or(0);
            wallet.total_deposited = total;
            wallet.available = total.checked_sub(spent).ok_or_else(|| {
                FundingError::InconsistentLog(format!("sponsor {id} committed {spent} of {total} deposited"))
            })?;
        }
        engine.log = events.to_vec();
        Ok(engine)
    }

    /// Re-derives race outcomes after the adopted chain changed, logging
    /// every resulting status change so the log stays replayable.
    pub fn adopt_outcomes(&mut self, winners: &BTreeMap<String, String>, time: u64) -> Result<(), FundingError> {
        let target = FundingEngine::replay(self.pledge_prefix.clone(), &self.log, winners)?;
        let mut log = std::mem::take(&mut self.log);
        for (id, new) in &target.pledges {
            let old = &self.pledges[id];
            if old.status != new.status {
                log.push(FundingEvent::PledgeStatus {
                    pledge_id: id.clone(),
                    sponsor_id: new.sponsor_id.clone(),
                    amount: new.amount,
                    from: old.status,
                    to: new.status,
                    time,
                });
            }
        }
        for (id, new) in &target.students {
            let old = self.students[id].state;
            match (old, new.state) {
                (StudentState::Won, StudentState::Won) => {}
                (_, StudentState::Won) => log.push(FundingEvent::StudentWon {
                    student_id: id.clone(),
                    fundraiser_id: winners[id].clone(),
                    time,
                }),
                (StudentState::Won, _) => log.push(FundingEvent::StudentReopened {
                    student_id: id.clone(),
                    time,
                }),
                _ => {}
            }
        }
        let next_pledge = self.next_pledge;
        *self = target;
        self.next_pledge = next_pledge.max(self.next_pledge);
        self.log = log;
        Ok(())
    }

    /// Checks the escrow invariants, describing the first violation found.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut reserved: BTreeMap<&str, Cents> = BTreeMap::new();
        let mut won: BTreeMap<&str, Cents> = BTreeMap::new();
        let mut collected: BTreeMap<(&str, &str), Cents> = BTreeMap::new();
        for p in self.pledges.values() {
            match p.status {
                PledgeStatus::Active => *reserved.entry(&p.sponsor_id).or_insert(0) += p.amount,
                PledgeStatus::Won => *won.entry(&p.sponsor_id).or_insert(0) += p.amount,
                PledgeStatus::RolledBack => {}
            }
            if p.status != PledgeStatus::RolledBack {
                *collected.entry((&p.student_id, &p.fundraiser_id)).or_insert(0) += p.amount;
            }
        }
        for w in self.wallets.values() {
            let r = reserved.get(w.sponsor_id.as_str()).copied().unwrap_or(0);
            let s = won.get(w.sponsor_id.as_str()).copied().unwrap_or(0);
            if w.reserved != r {
                return Err(format!("{}: reserved {} but active pledges total {r}", w.sponsor_id, w.reserved));
            }
            if w.total_deposited != w.available + w.reserved + s {
                return Err(format!(
                    "{}: deposited {} != available {} + reserved {} + settled {s}",
                    w.sponsor_id, w.total_deposited, w.available, w.reserved
                ));
            }
        }
        for record in self.students.values() {
            for (f, &c) in &record.collected {
                let expected = collected.get(&(record.student_id.as_str(), f.as_str())).copied().unwrap_or(0);
                if c != expected {
                    return Err(format!("{}/{f}: collected {c} but pledges total {expected}", record.student_id));
                }
                if c > record.target_amount {
                    return Err(format!("{}/{f}: collected {c} exceeds target", record.student_id));
                }
            }
        }
        Ok(())
    }
}

fn empty_wallet(sponsor_id: &str) -> Wallet {
    Wallet {
        sponsor_id: sponsor_id.to_string(),
        available: 0,
        reserved: 0,
        total_deposited: 0,
    }
}

fn new_record(listing: &StudentListing) -> ActiveStudentRecord {
    ActiveStudentRecord {
        student_id: listing.student_id.clone(),
        target_amount: listing.target_amount,
        program_name: listing.program_name.clone(),
        institute_name: listing.institute_name.clone(),
        program_duration_months: listing.program_duration_months,
        state: StudentState::Active,
        collected: BTreeMap::new(),
    }
}

// Active funds sit in `reserved`, RolledBack funds are back in `available`,
// Won funds have left the wallet.
fn apply_bucket_move(wallet: &mut Wallet, from: PledgeStatus, to: PledgeStatus, amount: Cents) {
    match from {
        PledgeStatus::Active => wallet.reserved -= amount,
        PledgeStatus::RolledBack => wallet.available -= amount,
        PledgeStatus::Won => {}
    }
    match to {
        PledgeStatus::Active => wallet.reserved += amount,
        PledgeStatus::RolledBack => wallet.available += amount,
        PledgeStatus::Won => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn listing(id: &str, target: Cents) -> StudentListing {
        StudentListing {
            student_id: id.into(),
            target_amount: target,
            program_name: "BSc".into(),
            institute_name: "USP".into(),
            program_duration_months: 36,
        }
    }

    fn engine() -> FundingEngine {
        let mut e = FundingEngine::new("F1");
        for s in ["P1", "P2", "P3"] {
            e.open_wallet(s, 0).unwrap();
        }
        e.list_student(listing("S1", 100_00), 0).unwrap();
        e
    }

    #[test]
    fn deposits_accumulate() {
        let mut e = engine();
        assert_eq!(e.deposit("P1", 100_00, 1).unwrap().available, 100_00);
        let mut e2 = engine();
        e2.deposit("P1", 50_00, 1).unwrap();
        let w = e2.deposit("P1", 25_00, 2).unwrap();
        assert_eq!((w.available, w.reserved), (75_00, 0));
        assert_eq!(e.deposit("P1", 0, 3).unwrap_err(), FundingError::NonPositiveAmount);
        assert_eq!(e.deposit("nobody", 5, 3).unwrap_err(), FundingError::UnknownSponsor("nobody".into()));
    }

    #[test]
    fn pledge_reserves_funds() {
        let mut e = engine();
        e.deposit("P1", 200_00, 1).unwrap();
        e.place_pledge("P1", "S1", "F1", 40_00, 2).unwrap();
        // 60_00 remaining through F1 now
        let p = e.place_pledge("P1", "S1", "F1", 40_00, 3).unwrap();
        assert_eq!(p.status, PledgeStatus::Active);
        let w = e.wallet("P1").unwrap();
        assert_eq!((w.available, w.reserved), (120_00, 80_00));
        assert_eq!(e.student("S1").unwrap().collected_by("F1"), 80_00);
        e.check_invariants().unwrap();
    }

    #[test]
    fn pledge_over_remaining_rejected() {
        let mut e = engine();
        e.deposit("P1", 200_00, 1).unwrap();
        e.place_pledge("P1", "S1", "F1", 40_00, 2).unwrap();
        assert_eq!(
            e.place_pledge("P1", "S1", "F1", 70_00, 3).unwrap_err(),
            FundingError::ExceedsRemaining { remaining: 60_00, requested: 70_00 }
        );
    }

    #[test]
    fn pledge_without_funds_rejected() {
        let mut e = engine();
        e.deposit("P1", 30_00, 1).unwrap();
        assert_eq!(
            e.place_pledge("P1", "S1", "F1", 40_00, 2).unwrap_err(),
            FundingError::InsufficientFunds { available: 30_00, requested: 40_00 }
        );
        assert!(matches!(e.place_pledge("P1", "S9", "F1", 1, 2), Err(FundingError::UnknownStudent(_))));
        assert!(matches!(e.place_pledge("P9", "S1", "F1", 1, 2), Err(FundingError::UnknownSponsor(_))));
    }

    #[test]
    fn completion_detection() {
        let mut e = engine();
        e.deposit("P1", 200_00, 1).unwrap();
        e.place_pledge("P1", "S1", "F1", 99_00, 2).unwrap();
        assert_eq!(e.check_completion("F1", "S1", 3).unwrap(), None);
        e.place_pledge("P1", "S1", "F1", 1_00, 4).unwrap();
        let c = e.check_completion("F1", "S1", 5).unwrap().unwrap();
        assert_eq!((c.collected, c.fundraiser_id.as_str()), (100_00, "F1"));
        e.settle_win("S1", "F1", 500, 60, 6).unwrap();
        assert_eq!(e.check_completion("F1", "S1", 7).unwrap(), None);
        assert!(e.check_completion("F1", "nobody", 7).is_err());
    }

    #[test]
    fn settlement_aggregates_per_sponsor() {
        let mut e = engine();
        e.deposit("P1", 100_00, 1).unwrap();
        e.deposit("P2", 100_00, 1).unwrap();
        e.place_pledge("P1", "S1", "F1", 30_00, 2).unwrap();
        e.place_pledge("P2", "S1", "F1", 40_00, 3).unwrap();
        e.place_pledge("P1", "S1", "F1", 30_00, 4).unwrap();
        let terms = e.settle_win("S1", "F1", 500, 60, 5).unwrap();
        let shares: Vec<_> = terms.shares.iter().map(|s| (s.sponsor_id.as_str(), s.amount)).collect();
        assert_eq!(shares, vec![("P1", 60_00), ("P2", 40_00)]);
        assert_eq!(terms.share_sum(), 100_00);
        terms.validate().unwrap();
        let w = e.wallet("P1").unwrap();
        assert_eq!((w.available, w.reserved, w.total_deposited), (40_00, 0, 100_00));
        assert_eq!(e.student("S1").unwrap().state, StudentState::Won);
        assert_eq!(e.settle_win("S1", "F1", 500, 60, 6).unwrap_err(), FundingError::AlreadyWon("S1".into()));
        e.check_invariants().unwrap();
    }

    #[test]
    fn single_sponsor_full_funding() {
        let mut e = engine();
        e.deposit("P3", 100_00, 1).unwrap();
        e.place_pledge("P3", "S1", "F1", 100_00, 2).unwrap();
        let terms = e.settle_win("S1", "F1", 500, 60, 3).unwrap();
        assert_eq!(terms.shares.len(), 1);
        assert_eq!(terms.shares[0].amount, terms.program_cost);
    }

    #[test]
    fn settle_incomplete_race() {
        let mut e = engine();
        e.deposit("P1", 100_00, 1).unwrap();
        e.place_pledge("P1", "S1", "F1", 90_00, 2).unwrap();
        assert_eq!(
            e.settle_win("S1", "F1", 500, 60, 3).unwrap_err(),
            FundingError::NotComplete { collected: 90_00, target: 100_00 }
        );
    }

    #[test]
    fn losers_refunded_exactly_and_idempotently() {
        let mut e = engine();
        e.deposit("P1", 100_00, 1).unwrap();
        e.deposit("P2", 100_00, 1).unwrap();
        e.place_pledge("P1", "S1", "F2", 10_00, 2).unwrap();
        e.place_pledge("P2", "S1", "F2", 20_00, 3).unwrap();
        e.place_pledge("P1", "S1", "F1", 90_00, 4).unwrap();
        e.place_pledge("P2", "S1", "F1", 10_00, 5).unwrap();
        e.freeze_student("S1", 6).unwrap();
        let rolled = e.rollback_pledges("S1", "F1", 7).unwrap();
        assert_eq!(rolled.len(), 2);
        assert_eq!(e.wallet("P1").unwrap().available, 10_00);
        assert_eq!(e.wallet("P2").unwrap().available, 90_00);
        assert!(e.rollback_pledges("S1", "F1", 8).unwrap().is_empty());
        e.settle_win("S1", "F1", 500, 60, 9).unwrap();
        assert_eq!(e.wallet("P1").unwrap().available, 10_00);
        assert_eq!(e.wallet("P1").unwrap().reserved, 0);
        e.check_invariants().unwrap();
    }

    #[test]
    fn rollback_with_no_losers() {
        let mut e = engine();
        e.freeze_student("S1", 1).unwrap();
        assert!(e.rollback_pledges("S1", "F1", 2).unwrap().is_empty());
        assert!(e.rollback_pledges("S9", "F1", 2).is_err());
    }

    #[test]
    fn freeze_stops_pledges() {
        let mut e = engine();
        e.deposit("P1", 100_00, 1).unwrap();
        assert_eq!(e.freeze_student("S1", 2).unwrap().state, StudentState::Frozen);
        assert!(matches!(
            e.place_pledge("P1", "S1", "F1", 5, 3),
            Err(FundingError::StudentNotActive { state: StudentState::Frozen, .. })
        ));
        assert!(e.freeze_student("ghost", 4).is_err());
    }

    #[test]
    fn freeze_then_settle() {
        let mut e = engine();
        e.deposit("P1", 100_00, 1).unwrap();
        e.place_pledge("P1", "S1", "F1", 100_00, 2).unwrap();
        e.freeze_student("S1", 3).unwrap();
        e.settle_win("S1", "F1", 500, 60, 4).unwrap();
        assert_eq!(e.student("S1").unwrap().state, StudentState::Won);
        assert_eq!(e.freeze_student("S1", 5).unwrap_err(), FundingError::AlreadyWon("S1".into()));
    }

    #[test]
    fn replay_reproduces_live_state() {
        let mut e = engine();
        e.list_student(listing("S2", 50_00), 0).unwrap();
        e.deposit("P1", 100_00, 1).unwrap();
        e.deposit("P2", 100_00, 1).unwrap();
        e.place_pledge("P1", "S1", "F1", 100_00, 2).unwrap();
        e.place_pledge("P2", "S2", "F2", 20_00, 3).unwrap();
        e.settle_win("S1", "F1", 500, 60, 4).unwrap();
        let winners = BTreeMap::from([("S1".to_string(), "F1".to_string())]);
        let replayed = FundingEngine::replay("F1", e.log(), &winners).unwrap();
        assert_eq!(replayed, e);
    }

    #[test]
    fn orphaned_win_reactivates_pledges() {
        let mut e = engine();
        e.deposit("P1", 100_00, 1).unwrap();
        e.place_pledge("P1", "S1", "F1", 100_00, 2).unwrap();
        e.freeze_student("S1", 3).unwrap();
        e.settle_win("S1", "F1", 500, 60, 4).unwrap();
        e.adopt_outcomes(&BTreeMap::new(), 5).unwrap();
        assert_eq!(e.student("S1").unwrap().state, StudentState::Active);
        assert!(e.check_completion("F1", "S1", 5).unwrap().is_some());
        let w = e.wallet("P1").unwrap();
        assert_eq!((w.available, w.reserved), (0, 100_00));
        e.check_invariants().unwrap();
        // And a chain that gives the race to someone else refunds it.
        let other = BTreeMap::from([("S1".to_string(), "F2".to_string())]);
        e.adopt_outcomes(&other, 6).unwrap();
        assert_eq!(e.wallet("P1").unwrap().available, 100_00);
        let again = FundingEngine::replay("F1", e.log(), &other).unwrap();
        assert_eq!(again, e);
    }
}
