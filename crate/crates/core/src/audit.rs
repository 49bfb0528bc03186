//! Independent wallet audit over a pledge event log.
//!
//! Recomputes every sponsor's balances by folding deposits and pledge status
//! transitions, without using [`crate::funding::FundingEngine`]. Used to
//! cross-check the engine after simulations, restarts and fork adoption.

use std::collections::BTreeMap;

use crate::funding::{FundingEngine, FundingEvent, PledgeStatus};
use crate::ledger::Cents;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SponsorBalance {
    pub deposited: Cents,
    pub available: Cents,
    pub reserved: Cents,
    pub settled: Cents,
}

impl SponsorBalance {
    pub fn conserved(&self) -> bool {
        self.deposited == self.available + self.reserved + self.settled
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditFailure {
    pub event_index: usize,
    pub reason: String,
}

/// Folds the log into per-sponsor balances, checking every transition
/// against the pledge's previous status and every balance for underflow.
pub fn replay_balances(events: &[FundingEvent]) -> Result<BTreeMap<String, SponsorBalance>, AuditFailure> {
    let mut balances: BTreeMap<String, SponsorBalance> = BTreeMap::new();
    let mut status: BTreeMap<&str, (PledgeStatus, &str, Cents)> = BTreeMap::new();

    for (i, event) in events.iter().enumerate() {
        let fail = |reason: String| AuditFailure { event_index: i, reason };
        match event {
            FundingEvent::WalletOpened { sponsor_id, .. } => {
                balances.entry(sponsor_id.clone()).or_default();
            }
            FundingEvent::Deposit { sponsor_id, amount, .. } => {
                let b = balances
                    .get_mut(sponsor_id)
                    .ok_or_else(|| fail(format!("deposit to unopened wallet {sponsor_id}")))?;
                b.deposited += amount;
                b.available += amount;
            }
            FundingEvent::PledgePlaced {
                pledge_id,
                sponsor_id,
                amount,
                ..
            } => {
                if *amount == 0 {
                    return Err(fail(format!("zero pledge {pledge_id}")));
                }
                if status.contains_key(pledge_id.as_str()) {
                    return Err(fail(format!("pledge {pledge_id} placed twice")));
                }
                let b = balances
                    .get_mut(sponsor_id)
                    .ok_or_else(|| fail(format!("pledge from unopened wallet {sponsor_id}")))?;
                b.available = b
                    .available
                    .checked_sub(*amount)
                    .ok_or_else(|| fail(format!("{sponsor_id} pledged {amount} with {} available", b.available)))?;
                b.reserved += amount;
                status.insert(pledge_id, (PledgeStatus::Active, sponsor_id, *amount));
            }
            FundingEvent::PledgeStatus {
                pledge_id,
                sponsor_id,
                amount,
                from,
                to,
                ..
            } => {
                let entry = status
                    .get_mut(pledge_id.as_str())
                    .ok_or_else(|| fail(format!("status change for unknown pledge {pledge_id}")))?;
                if entry.0 != *from || entry.1 != sponsor_id || entry.2 != *amount {
                    return Err(fail(format!("status change for {pledge_id} does not match its history")));
                }
                entry.0 = *to;
                let b = balances.get_mut(sponsor_id).expect("pledging sponsor has a balance");
                let src = bucket(b, *from);
                *src = src
                    .checked_sub(*amount)
                    .ok_or_else(|| fail(format!("{pledge_id}: {from:?} balance underflow")))?;
                *bucket(b, *to) += amount;
            }
            FundingEvent::StudentListed { .. }
            | FundingEvent::StudentFrozen { .. }
            | FundingEvent::StudentWon { .. }
            | FundingEvent::StudentReopened { .. } => {}
        }
    }
    Ok(balances)
}

fn bucket(b: &mut SponsorBalance, status: PledgeStatus) -> &mut Cents {
    match status {
        PledgeStatus::Active => &mut b.reserved,
        PledgeStatus::Won => &mut b.settled,
        PledgeStatus::RolledBack => &mut b.available,
    }
}

/// Compares the engine's wallets and pledge totals with the audit fold of
/// its own log, returning a description of the first disagreement.
pub fn audit_engine(engine: &FundingEngine) -> Result<(), String> {
    let balances = replay_balances(engine.log()).map_err(|f| format!("event {}: {}", f.event_index, f.reason))?;
    let mut settled: BTreeMap<&str, Cents> = BTreeMap::new();
    for p in engine.pledges() {
        if p.status == PledgeStatus::Won {
            *settled.entry(&p.sponsor_id).or_insert(0) += p.amount;
        }
    }
    for wallet in engine.wallets() {
        let b = balances
            .get(&wallet.sponsor_id)
            .ok_or_else(|| format!("{} missing from the log", wallet.sponsor_id))?;
        if !b.conserved() {
            return Err(format!("{}: audit balance not conserved: {b:?}", wallet.sponsor_id));
        }
        let s = settled.get(wallet.sponsor_id.as_str()).copied().unwrap_or(0);
        if (b.deposited, b.available, b.reserved, b.settled) != (wallet.total_deposited, wallet.available, wallet.reserved, s) {
            return Err(format!(
                "{}: engine (deposited {}, available {}, reserved {}, settled {s}) != audit {b:?}",
                wallet.sponsor_id, wallet.total_deposited, wallet.available, wallet.reserved
            ));
        }
    }
    if balances.len() != engine.wallets().count() {
        return Err("audit and engine disagree on the set of wallets".into());
    }
    Ok(())
}
