//! Core of the TEduChain platform: a replicated SHA-256 contract ledger that
//! fundraiser nodes extend after winning a crowdfunding race for a student.
//!
//! * [`ledger`]: blocks, canonical hashing, chain verification, amendments.
//! * [`funding`]: sponsor wallets, pledge escrow, settlement and rollback.
//! * [`consensus`]: win claims, tie-breaking, block broadcast, fork choice.
//! * [`registry`]: accounts, applications and eligibility checks.
//! * [`document`]: contract documents whose hash is stored in each block.
//! * [`sim`]: deterministic multi-node simulation over an in-memory network.

pub mod audit;
pub mod canonical;
pub mod consensus;
pub mod document;
pub mod funding;
pub mod hash;
pub mod ledger;
pub mod registry;
pub mod sim;
pub mod store;

pub use hash::{hash_document, sha256, Hash256};
pub use ledger::{Block, Chain, ContactInfo, ContractTerms, InvestorShare, VerificationReport};
