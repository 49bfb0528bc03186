//! Contract documents sent to the student and investors after mining.
//!
//! The document is canonical JSON so that its SHA-256, stored in the contract
//! block, is reproducible from the terms alone.

use serde::Serialize;

use crate::canonical;
use crate::hash::{hash_document, Hash256};
use crate::ledger::{ContactInfo, ContractTerms};

pub const DOCUMENT_TYPE: &str = "teduchain-contract";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContractDocument {
    pub student_id: String,
    pub bytes: Vec<u8>,
}

impl ContractDocument {
    pub fn hash(&self) -> Hash256 {
        hash_document(&self.bytes)
    }

    /// Outbox file name, `<student_id>.contract.json`.
    pub fn file_name(&self) -> String {
        format!("{}.contract.json", self.student_id)
    }
}

#[derive(Serialize)]
struct Parties<'a> {
    student: &'a str,
    investors: Vec<&'a str>,
    fundraiser: &'a str,
}

#[derive(Serialize)]
struct BenefitClause {
    benefit_percent_bp: u32,
    benefit_period_months: u32,
    /// Each investor's portion of the benefit, in basis points of the total.
    investor_weights_bp: Vec<(String, u64)>,
}

#[derive(Serialize)]
struct Rendered<'a> {
    document_type: &'static str,
    terms: &'a ContractTerms,
    parties: Parties<'a>,
    contacts: &'a [ContactInfo],
    benefit_clause: BenefitClause,
}

pub fn render_contract_document(terms: &ContractTerms, contacts: &[ContactInfo]) -> ContractDocument {
    let investor_weights_bp = terms
        .shares
        .iter()
        .map(|s| {
            let weight = if terms.program_cost == 0 {
                0
            } else {
                (u128::from(s.amount) * 10_000 / u128::from(terms.program_cost)) as u64
            };
            (s.sponsor_id.clone(), weight)
        })
        .collect();
    let rendered = Rendered {
        document_type: DOCUMENT_TYPE,
        terms,
        parties: Parties {
            student: &terms.student_id,
            investors: terms.shares.iter().map(|s| s.sponsor_id.as_str()).collect(),
            fundraiser: &terms.fundraiser_id,
        },
        contacts,
        benefit_clause: BenefitClause {
            benefit_percent_bp: terms.benefit_percent_bp,
            benefit_period_months: terms.benefit_period_months,
            investor_weights_bp,
        },
    };
    ContractDocument {
        student_id: terms.student_id.clone(),
        bytes: canonical::to_canonical_bytes(&rendered).expect("documents contain no floats"),
    }
}
