use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::block::{
    compute_block_hash, make_genesis, AmendmentPayload, Block, BlockKind, BlockRef,
    ContractPayload, Payload,
};
use super::terms::{ContactInfo, ContractTerms};
use super::LedgerError;
use crate::hash::Hash256;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub valid: bool,
    pub first_bad_index: Option<u64>,
    pub reason: String,
}

impl VerificationReport {
    pub fn ok() -> Self {
        VerificationReport {
            valid: true,
            first_bad_index: None,
            reason: "valid".to_string(),
        }
    }

    pub fn bad(index: u64, reason: impl Into<String>) -> Self {
        VerificationReport {
            valid: false,
            first_bad_index: Some(index),
            reason: reason.into(),
        }
    }
}

/// Original terms of a student's contract combined with the latest contact
/// details from any amendments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractView {
    pub terms: ContractTerms,
    pub contacts: Vec<ContactInfo>,
    pub contract_index: u64,
    pub contract_hash: Hash256,
    pub document_hash: Hash256,
    pub amendment_indices: Vec<u64>,
}

/// An append-only, always-valid hash chain starting at the genesis constant.
///
/// Blocks from untrusted sources go through [`Chain::try_append`] or
/// [`Chain::from_blocks`], which run the same checks as [`verify_chain`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chain {
    blocks: Vec<Block>,
    // student_id -> index of its contract block
    contracts: HashMap<String, u64>,
    // contract or amendment index -> index of the root contract block
    roots: HashMap<u64, u64>,
}

impl Default for Chain {
    fn default() -> Self {
        Chain::new()
    }
}

impl Chain {
    pub fn new() -> Self {
        Chain {
            blocks: vec![make_genesis()],
            contracts: HashMap::new(),
            roots: HashMap::new(),
        }
    }

    /// Rebuilds a chain from untrusted blocks, rejecting it at the first
    /// failing index.
    pub fn from_blocks(blocks: Vec<Block>) -> Result<Chain, VerificationReport> {
        let mut iter = blocks.into_iter();
        match iter.next() {
            Some(first) if first == make_genesis() => {}
            Some(_) => return Err(VerificationReport::bad(0, "block 0 is not the genesis constant")),
            None => return Err(VerificationReport::bad(0, "empty chain")),
        }
        let mut chain = Chain::new();
        for (i, block) in iter.enumerate() {
            let position = i as u64 + 1;
            if let Err(reason) = chain.check_next(&block) {
                return Err(VerificationReport::bad(position, reason));
            }
            chain.push_unchecked(block);
        }
        Ok(chain)
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn into_blocks(self) -> Vec<Block> {
        self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    /// Never true: a chain always holds its genesis block.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tip(&self) -> &Block {
        self.blocks.last().expect("chain always has genesis")
    }

    pub fn get(&self, index: u64) -> Option<&Block> {
        usize::try_from(index).ok().and_then(|i| self.blocks.get(i))
    }

    pub fn contains(&self, block: &Block) -> bool {
        self.get(block.index).is_some_and(|b| b.hash == block.hash)
    }

    pub fn contract_block(&self, student_id: &str) -> Option<&Block> {
        self.contracts.get(student_id).and_then(|&i| self.get(i))
    }

    /// Students with a contract block, mapped to the winning fundraiser.
    pub fn winners(&self) -> impl Iterator<Item = (&str, &str)> {
        self.blocks.iter().filter_map(|b| {
            b.contract()
                .map(|c| (c.terms.student_id.as_str(), c.terms.fundraiser_id.as_str()))
        })
    }

    pub fn winner_of(&self, student_id: &str) -> Option<&str> {
        self.contract_block(student_id)
            .and_then(|b| b.contract())
            .map(|c| c.terms.fundraiser_id.as_str())
    }

    pub fn verify(&self) -> VerificationReport {
        verify_chain(&self.blocks)
    }

    /// Appends a freshly mined contract block on top of the tip.
    pub fn append_contract(
        &mut self,
        terms: ContractTerms,
        contacts: Vec<ContactInfo>,
        document_hash: Hash256,
        miner_id: &str,
        timestamp_ms: u64,
    ) -> Result<&Block, LedgerError> {
        terms.validate().map_err(LedgerError::InvalidTerms)?;
        if self.contracts.contains_key(&terms.student_id) {
            return Err(LedgerError::DuplicateStudentContract(terms.student_id));
        }
        let block = Block::sealed(
            self.blocks.len() as u64,
            timestamp_ms,
            self.tip().hash,
            miner_id,
            Payload::Contract(ContractPayload { terms, contacts }),
            document_hash,
            None,
        )?;
        self.push_checked(block)
    }

    /// Appends an amendment carrying updated contact details for the
    /// parties of the contract that `original` resolves to.
    pub fn append_amendment(
        &mut self,
        original: BlockRef,
        updated_contacts: Vec<ContactInfo>,
        miner_id: &str,
        timestamp_ms: u64,
    ) -> Result<&Block, LedgerError> {
        let root = self.resolve_amendable(original)?;
        let terms = &self.blocks[root as usize]
            .contract()
            .expect("root is a contract")
            .terms;
        if let Some(stranger) = updated_contacts.iter().find(|c| !terms.is_party(&c.party_id)) {
            return Err(LedgerError::UnknownParty(stranger.party_id.clone()));
        }
        if updated_contacts.is_empty() {
            return Err(LedgerError::EmptyAmendment);
        }
        let block = Block::sealed(
            self.blocks.len() as u64,
            timestamp_ms,
            self.tip().hash,
            miner_id,
            Payload::Amendment(AmendmentPayload {
                contacts: updated_contacts,
            }),
            Hash256::ZERO,
            Some(original),
        )?;
        self.push_checked(block)
    }

    /// Amends from an edited copy of a contract payload. Only contact details
    /// may differ from the original; any change to the terms is refused.
    pub fn amend_contract(
        &mut self,
        original: BlockRef,
        edited: ContractPayload,
        miner_id: &str,
        timestamp_ms: u64,
    ) -> Result<&Block, LedgerError> {
        let root = self.resolve_amendable(original)?;
        let terms = &self.blocks[root as usize]
            .contract()
            .expect("root is a contract")
            .terms;
        if *terms != edited.terms {
            return Err(LedgerError::TermsImmutable);
        }
        self.append_amendment(original, edited.contacts, miner_id, timestamp_ms)
    }

    /// Copy of a contract's current state, for editing before
    /// [`Chain::amend_contract`].
    pub fn copy_for_amendment(&self, original: BlockRef) -> Result<ContractPayload, LedgerError> {
        let root = self.resolve_amendable(original)?;
        let student = self.blocks[root as usize].student_id().expect("root is a contract");
        let view = self.effective_contract(student)?;
        Ok(ContractPayload {
            terms: view.terms,
            contacts: view.contacts,
        })
    }

    /// Validates and appends a block received from elsewhere.
    pub fn try_append(&mut self, block: Block) -> Result<(), LedgerError> {
        self.check_next(&block).map_err(|reason| {
            LedgerError::Rejected(VerificationReport::bad(block.index, reason))
        })?;
        self.push_unchecked(block);
        Ok(())
    }

    pub fn effective_contract(&self, student_id: &str) -> Result<ContractView, LedgerError> {
        let root = *self
            .contracts
            .get(student_id)
            .ok_or_else(|| LedgerError::NotFound(student_id.to_string()))?;
        let block = &self.blocks[root as usize];
        let payload = block.contract().expect("indexed block is a contract");
        let mut contacts = payload.contacts.clone();
        let mut amendment_indices = Vec::new();
        for b in &self.blocks[root as usize + 1..] {
            let Some(amendment) = b.amendment() else { continue };
            if self.roots.get(&b.index) != Some(&root) {
                continue;
            }
            amendment_indices.push(b.index);
            for update in &amendment.contacts {
                match contacts.iter_mut().find(|c| c.party_id == update.party_id) {
                    Some(existing) => *existing = update.clone(),
                    None => contacts.push(update.clone()),
                }
            }
        }
        // Present contacts in party order: student, then investors.
        let parties = payload.terms.parties();
        contacts.sort_by_key(|c| {
            parties
                .iter()
                .position(|p| *p == c.party_id)
                .unwrap_or(usize::MAX)
        });
        Ok(ContractView {
            terms: payload.terms.clone(),
            contacts,
            contract_index: root,
            contract_hash: block.hash,
            document_hash: block.document_hash,
            amendment_indices,
        })
    }

    fn resolve_amendable(&self, original: BlockRef) -> Result<u64, LedgerError> {
        match self.get(original.index) {
            Some(b) if b.hash == original.hash && b.kind() != BlockKind::Genesis => {
                Ok(self.roots[&original.index])
            }
            _ => Err(LedgerError::UnknownReference(original)),
        }
    }

    fn push_checked(&mut self, block: Block) -> Result<&Block, LedgerError> {
        self.check_next(&block).map_err(|reason| {
            LedgerError::Rejected(VerificationReport::bad(block.index, reason))
        })?;
        self.push_unchecked(block);
        Ok(self.tip())
    }

    fn push_unchecked(&mut self, block: Block) {
        let index = block.index;
        match &block.payload {
            Payload::Contract(c) => {
                self.contracts.insert(c.terms.student_id.clone(), index);
                self.roots.insert(index, index);
            }
            Payload::Amendment(_) => {
                let target = block.amends.expect("checked amendment has a reference").index;
                let root = self.roots[&target];
                self.roots.insert(index, root);
            }
            Payload::Genesis(_) => {}
        }
        self.blocks.push(block);
    }

    /// Every rule a block must satisfy to extend this chain.
    fn check_next(&self, block: &Block) -> Result<(), String> {
        let expected_index = self.blocks.len() as u64;
        if block.index != expected_index {
            return Err(format!("index {} where {expected_index} expected", block.index));
        }
        if block.prev_hash != self.tip().hash {
            return Err("prev_hash does not link to the previous block".into());
        }
        match compute_block_hash(block) {
            Ok(h) if h == block.hash => {}
            Ok(_) => return Err("stored hash does not match recomputed hash".into()),
            Err(e) => return Err(format!("unencodable block: {e}")),
        }
        match &block.payload {
            Payload::Genesis(_) => Err("genesis block beyond index 0".into()),
            Payload::Contract(c) => {
                if block.amends.is_some() {
                    return Err("contract block carries an amendment reference".into());
                }
                c.terms.validate()?;
                if self.contracts.contains_key(&c.terms.student_id) {
                    return Err(format!(
                        "second contract block for student {}",
                        c.terms.student_id
                    ));
                }
                Ok(())
            }
            Payload::Amendment(a) => {
                let Some(target) = block.amends else {
                    return Err("amendment block without a reference".into());
                };
                let root = match self.get(target.index) {
                    Some(b) if b.hash == target.hash && b.kind() != BlockKind::Genesis => {
                        self.roots[&target.index]
                    }
                    _ => return Err("amendment reference does not resolve".into()),
                };
                if a.contacts.is_empty() {
                    return Err("amendment carries no contacts".into());
                }
                let terms = &self.blocks[root as usize]
                    .contract()
                    .expect("root is a contract")
                    .terms;
                match a.contacts.iter().find(|c| !terms.is_party(&c.party_id)) {
                    Some(c) => Err(format!("amendment names non-party {}", c.party_id)),
                    None => Ok(()),
                }
            }
        }
    }
}

/// Verifies untrusted blocks, reporting the smallest failing index.
pub fn verify_chain(blocks: &[Block]) -> VerificationReport {
    match Chain::from_blocks(blocks.to_vec()) {
        Ok(_) => VerificationReport::ok(),
        Err(report) => report,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hash::hash_document;
    use crate::ledger::terms::InvestorShare;

    pub(crate) fn terms(student: &str, shares: &[(&str, u64)]) -> ContractTerms {
        ContractTerms {
            student_id: student.into(),
            program_name: "BSc Computing".into(),
            institute_name: "USP".into(),
            program_cost: shares.iter().map(|s| s.1).sum(),
            program_duration_months: 36,
            shares: shares
                .iter()
                .map(|(id, amount)| InvestorShare {
                    sponsor_id: id.to_string(),
                    amount: *amount,
                })
                .collect(),
            benefit_percent_bp: 500,
            benefit_period_months: 60,
            fundraiser_id: "F1".into(),
        }
    }

    fn contact(id: &str, address: &str) -> ContactInfo {
        ContactInfo {
            party_id: id.into(),
            address: address.into(),
            email: format!("{}@example.org", id.to_lowercase()),
            phone: "+679 000".into(),
        }
    }

    fn chain_with(students: &[&str]) -> Chain {
        let mut chain = Chain::new();
        for (i, s) in students.iter().enumerate() {
            chain
                .append_contract(
                    terms(s, &[("P1", 60_00), ("P2", 40_00)]),
                    vec![contact(s, "Suva"), contact("P1", "Nadi")],
                    hash_document(s.as_bytes()),
                    "F1",
                    10 + i as u64,
                )
                .unwrap();
        }
        chain
    }

    #[test]
    fn append_links_to_tip() {
        let mut chain = Chain::new();
        let genesis_hash = chain.tip().hash;
        let b1 = chain
            .append_contract(terms("S1", &[("P1", 100_00)]), vec![], Hash256::ZERO, "F1", 1)
            .unwrap()
            .clone();
        assert_eq!(b1.index, 1);
        assert_eq!(b1.prev_hash, genesis_hash);
        let b2 = chain
            .append_contract(terms("S2", &[("P1", 100_00)]), vec![], Hash256::ZERO, "F1", 2)
            .unwrap()
            .clone();
        assert_eq!(b2.index, 2);
        assert_eq!(b2.prev_hash, b1.hash);
        assert!(chain.verify().valid);
    }

    #[test]
    fn share_sum_mismatch_is_invalid_terms() {
        let mut t = terms("S1", &[("P1", 60_00), ("P2", 30_00)]);
        t.program_cost = 100_00;
        let err = Chain::new()
            .append_contract(t, vec![], Hash256::ZERO, "F1", 1)
            .unwrap_err();
        assert!(matches!(err, LedgerError::InvalidTerms(_)));
    }

    #[test]
    fn duplicate_student_rejected() {
        let mut chain = chain_with(&["S1"]);
        let err = chain
            .append_contract(terms("S1", &[("P3", 5)]), vec![], Hash256::ZERO, "F2", 9)
            .unwrap_err();
        assert_eq!(err, LedgerError::DuplicateStudentContract("S1".into()));
    }

    #[test]
    fn amendment_keeps_original_bytes() {
        let mut chain = chain_with(&["S1"]);
        let original = chain.get(1).unwrap().clone();
        let before = original.to_line();
        let amendment = chain
            .append_amendment(original.block_ref(), vec![contact("S1", "Lautoka")], "F1", 20)
            .unwrap()
            .clone();
        assert_eq!(amendment.index, 2);
        assert_eq!(amendment.kind(), BlockKind::Amendment);
        assert_eq!(amendment.amends, Some(original.block_ref()));
        assert_eq!(chain.get(1).unwrap().to_line(), before);
        let view = chain.effective_contract("S1").unwrap();
        assert_eq!(view.contacts[0].address, "Lautoka");
        assert_eq!(view.terms, original.contract().unwrap().terms);
        assert!(chain.verify().valid);
    }

    #[test]
    fn amendment_cannot_touch_terms() {
        let mut chain = chain_with(&["S1"]);
        let r = chain.get(1).unwrap().block_ref();
        let mut copy = chain.copy_for_amendment(r).unwrap();
        copy.terms.program_cost += 1;
        copy.contacts[0].address = "Labasa".into();
        assert_eq!(
            chain.amend_contract(r, copy, "F1", 30).unwrap_err(),
            LedgerError::TermsImmutable
        );
        assert_eq!(chain.len(), 2);
    }

    #[test]
    fn amendment_errors() {
        let mut chain = chain_with(&["S1"]);
        let good = chain.get(1).unwrap().block_ref();
        let bogus = BlockRef {
            index: 1,
            hash: Hash256::ZERO,
        };
        assert_eq!(
            chain.append_amendment(bogus, vec![contact("S1", "x")], "F1", 1).unwrap_err(),
            LedgerError::UnknownReference(bogus)
        );
        let genesis = chain.get(0).unwrap().block_ref();
        assert!(chain.append_amendment(genesis, vec![contact("S1", "x")], "F1", 1).is_err());
        assert_eq!(
            chain.append_amendment(good, vec![contact("P9", "x")], "F1", 1).unwrap_err(),
            LedgerError::UnknownParty("P9".into())
        );
    }

    #[test]
    fn amendment_of_amendment_resolves_to_latest() {
        let mut chain = chain_with(&["S1", "S2"]);
        let c1 = chain.get(1).unwrap().block_ref();
        let a1 = chain
            .append_amendment(c1, vec![contact("S1", "first")], "F1", 1)
            .unwrap()
            .block_ref();
        chain
            .append_amendment(a1, vec![contact("S1", "second"), contact("P2", "p2-new")], "F1", 2)
            .unwrap();
        let view = chain.effective_contract("S1").unwrap();
        assert_eq!(view.amendment_indices, vec![3, 4]);
        let addresses: Vec<_> = view.contacts.iter().map(|c| c.address.as_str()).collect();
        assert_eq!(addresses, vec!["second", "Nadi", "p2-new"]);
        // The other student's view is untouched.
        assert_eq!(chain.effective_contract("S2").unwrap().amendment_indices, Vec::<u64>::new());
    }

    #[test]
    fn unknown_student_view() {
        assert_eq!(
            Chain::new().effective_contract("nobody").unwrap_err(),
            LedgerError::NotFound("nobody".into())
        );
    }

    #[test]
    fn tampered_payload_detected_at_its_index() {
        let chain = chain_with(&["S1", "S2"]);
        let mut blocks = chain.blocks().to_vec();
        if let Payload::Contract(c) = &mut blocks[1].payload {
            c.terms.program_name.push('!');
        }
        let report = verify_chain(&blocks);
        assert!(!report.valid);
        assert_eq!(report.first_bad_index, Some(1));
    }

    #[test]
    fn swapped_blocks_detected() {
        let chain = chain_with(&["S1", "S2"]);
        let mut blocks = chain.blocks().to_vec();
        blocks.swap(1, 2);
        let report = verify_chain(&blocks);
        assert_eq!(report.first_bad_index, Some(1));
    }

    #[test]
    fn wrong_genesis_detected() {
        let mut blocks = Chain::new().into_blocks();
        blocks[0].timestamp_ms = 1;
        assert_eq!(verify_chain(&blocks).first_bad_index, Some(0));
        assert_eq!(verify_chain(&[]).first_bad_index, Some(0));
    }
}
