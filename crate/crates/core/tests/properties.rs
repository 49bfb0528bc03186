use std::collections::BTreeMap;

use proptest::prelude::*;
use teduchain_core::audit::audit_engine;
use teduchain_core::consensus::{resolve_win_conflict, WinClaim};
use teduchain_core::funding::{FundingEngine, FundingEvent, StudentListing, StudentState};
use teduchain_core::hash::hash_document;
use teduchain_core::ledger::{
    encode_ledger, verify_ledger_bytes, Block, BlockRef, Chain, ContactInfo, ContractTerms, InvestorShare,
};

#[derive(Debug, Clone)]
enum ChainOp {
    Contract { sponsors: u8, amount: u64 },
    Amend { target: usize, party: u8, tag: u16 },
}

fn chain_op() -> impl Strategy<Value = ChainOp> {
    prop_oneof![
        (1u8..4, 1u64..1_000_000).prop_map(|(sponsors, amount)| ChainOp::Contract { sponsors, amount }),
        (any::<usize>(), any::<u8>(), any::<u16>()).prop_map(|(target, party, tag)| ChainOp::Amend { target, party, tag }),
    ]
}

fn terms(student: &str, sponsors: u8, amount: u64) -> ContractTerms {
    let shares: Vec<InvestorShare> = (0..sponsors)
        .map(|i| InvestorShare {
            sponsor_id: format!("P{i}"),
            amount: amount + i as u64,
        })
        .collect();
    ContractTerms {
        student_id: student.into(),
        program_name: "BSc".into(),
        institute_name: "USP".into(),
        program_cost: shares.iter().map(|s| s.amount).sum(),
        program_duration_months: 36,
        shares,
        benefit_percent_bp: 500,
        benefit_period_months: 60,
        fundraiser_id: "F1".into(),
    }
}

fn build_chain(ops: &[ChainOp]) -> Chain {
    let mut chain = Chain::new();
    let mut amendable: Vec<BlockRef> = Vec::new();
    for (i, op) in ops.iter().enumerate() {
        let ts = 1_000 + i as u64;
        match op {
            ChainOp::Contract { sponsors, amount } => {
                let student = format!("S{i}");
                let t = terms(&student, *sponsors, *amount);
                let contacts = vec![ContactInfo::new(student.clone())];
                let doc = hash_document(student.as_bytes());
                let block = chain.append_contract(t, contacts, doc, "F1", ts).unwrap();
                amendable.push(block.block_ref());
            }
            ChainOp::Amend { target, party, tag } => {
                if amendable.is_empty() {
                    continue;
                }
                let original = amendable[target % amendable.len()];
                let view = chain.copy_for_amendment(original).unwrap();
                let parties = view.terms.parties();
                let party_id = parties[*party as usize % parties.len()].to_string();
                let contact = ContactInfo {
                    party_id,
                    address: format!("addr {tag}"),
                    email: format!("{tag}@example.org"),
                    phone: format!("{tag}"),
                };
                let block = chain.append_amendment(original, vec![contact], "F1", ts).unwrap();
                amendable.push(block.block_ref());
            }
        }
    }
    chain
}

// Straightforward re-derivation: walk every block after the contract and
// follow each amendment's reference back to a contract.
fn oracle_contacts(blocks: &[Block], student: &str) -> (Vec<ContactInfo>, Vec<u64>) {
    let root = blocks.iter().position(|b| b.student_id() == Some(student)).unwrap();
    let root_of = |mut i: usize| loop {
        match blocks[i].amends {
            Some(r) => i = r.index as usize,
            None => return i,
        }
    };
    let payload = blocks[root].contract().unwrap();
    let mut contacts = payload.contacts.clone();
    let mut indices = Vec::new();
    for (i, b) in blocks.iter().enumerate().skip(root + 1) {
        if let Some(a) = b.amendment() {
            if root_of(i) == root {
                indices.push(i as u64);
                for c in &a.contacts {
                    contacts.retain(|x| x.party_id != c.party_id);
                    contacts.push(c.clone());
                }
            }
        }
    }
    let parties = payload.terms.parties();
    contacts.sort_by_key(|c| parties.iter().position(|p| *p == c.party_id).unwrap());
    (contacts, indices)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn built_chains_verify_and_round_trip(ops in prop::collection::vec(chain_op(), 0..40)) {
        let chain = build_chain(&ops);
        prop_assert!(chain.verify().valid);
        let bytes = encode_ledger(chain.blocks());
        let parsed = verify_ledger_bytes(&bytes).unwrap();
        prop_assert_eq!(encode_ledger(parsed.blocks()), bytes);
    }

    #[test]
    fn single_byte_tamper_is_located(
        ops in prop::collection::vec(chain_op(), 1..30),
        pick in any::<prop::sample::Index>(),
        replacement in 0x20u8..0x7f,
    ) {
        let chain = build_chain(&ops);
        let bytes = encode_ledger(chain.blocks());
        let positions: Vec<usize> = (0..bytes.len()).filter(|&i| bytes[i] != b'\n' && bytes[i] != replacement).collect();
        let at = positions[pick.index(positions.len())];
        let mut tampered = bytes.clone();
        tampered[at] = replacement;
        let line = bytes[..at].iter().filter(|&&b| b == b'\n').count() as u64;
        let report = verify_ledger_bytes(&tampered).unwrap_err();
        prop_assert!(!report.valid);
        prop_assert!(report.first_bad_index.unwrap() <= line, "{:?} at line {}", report, line);
    }

    #[test]
    fn effective_contract_matches_linear_scan(ops in prop::collection::vec(chain_op(), 1..100)) {
        let chain = build_chain(&ops);
        let students: Vec<String> = chain.winners().map(|(s, _)| s.to_string()).collect();
        for s in students {
            let view = chain.effective_contract(&s).unwrap();
            let (contacts, indices) = oracle_contacts(chain.blocks(), &s);
            prop_assert_eq!(view.contacts, contacts);
            prop_assert_eq!(view.amendment_indices, indices);
            prop_assert_eq!(&view.terms, &chain.contract_block(&s).unwrap().contract().unwrap().terms);
        }
    }

    #[test]
    fn win_resolution_is_a_total_order(
        claims in prop::collection::vec((0u64..6, 0u8..4, 1u64..100), 3),
    ) {
        let c: Vec<WinClaim> = claims
            .iter()
            .map(|&(t, f, collected)| WinClaim {
                student_id: "S1".into(),
                fundraiser_id: format!("F{f}"),
                lamport_time: t,
                collected,
            })
            .collect();
        let key = |w: &WinClaim| (w.lamport_time, w.fundraiser_id.clone());
        let ab = resolve_win_conflict(&c[0], &c[1]).unwrap();
        let ba = resolve_win_conflict(&c[1], &c[0]).unwrap();
        prop_assert_eq!(key(ab), key(ba));
        prop_assert_eq!(key(ab), key(&c[0]).min(key(&c[1])));
        let left = resolve_win_conflict(ab, &c[2]).unwrap();
        let bc = resolve_win_conflict(&c[1], &c[2]).unwrap();
        let right = resolve_win_conflict(&c[0], bc).unwrap();
        prop_assert_eq!(key(left), key(right));
    }
}

#[derive(Debug, Clone)]
enum FundOp {
    Deposit { sponsor: u8, amount: u64 },
    Pledge { sponsor: u8, student: u8, fundraiser: u8, amount: u64 },
    Settle { student: u8, fundraiser: u8 },
    Orphan { student: u8 },
}

fn fund_op() -> impl Strategy<Value = FundOp> {
    prop_oneof![
        2 => (0u8..6, 1u64..5_000).prop_map(|(sponsor, amount)| FundOp::Deposit { sponsor, amount }),
        6 => (0u8..6, 0u8..40, 0u8..3, 1u64..3_000)
            .prop_map(|(sponsor, student, fundraiser, amount)| FundOp::Pledge { sponsor, student, fundraiser, amount }),
        1 => (0u8..40, 0u8..3).prop_map(|(student, fundraiser)| FundOp::Settle { student, fundraiser }),
        1 => (0u8..40).prop_map(|student| FundOp::Orphan { student }),
    ]
}

fn check_engine(engine: &FundingEngine, winners: &BTreeMap<String, String>) -> Result<(), TestCaseError> {
    engine.check_invariants().map_err(TestCaseError::fail)?;
    audit_engine(engine).map_err(TestCaseError::fail)?;
    let replayed = FundingEngine::replay("T", engine.log(), winners).unwrap();
    prop_assert_eq!(&replayed, engine);
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn funding_conserves_and_replays(ops in prop::collection::vec(fund_op(), 10_000..10_500)) {
        let mut engine = FundingEngine::new("T");
        let mut winners = BTreeMap::new();
        for s in 0..6 {
            engine.open_wallet(&format!("P{s}"), 0).unwrap();
        }
        for s in 0..40u64 {
            engine
                .list_student(
                    StudentListing {
                        student_id: format!("S{s}"),
                        target_amount: 2_000 + 97 * s,
                        program_name: "BSc".into(),
                        institute_name: "USP".into(),
                        program_duration_months: 24,
                    },
                    0,
                )
                .unwrap();
        }
        for (i, op) in ops.iter().enumerate() {
            let t = i as u64 + 1;
            match *op {
                FundOp::Deposit { sponsor, amount } => {
                    engine.deposit(&format!("P{sponsor}"), amount, t).unwrap();
                }
                FundOp::Pledge { sponsor, student, fundraiser, amount } => {
                    let (s, f) = (format!("S{student}"), format!("F{fundraiser}"));
                    // Large pledges top the race up exactly, so races complete.
                    let remaining = engine.student(&s).unwrap().remaining_for(&f);
                    let amount = if remaining > 0 && amount > 1_500 { amount.min(remaining) } else { amount };
                    let _ = engine.place_pledge(&format!("P{sponsor}"), &s, &f, amount, t);
                }
                FundOp::Settle { student, fundraiser } => {
                    let (s, f) = (format!("S{student}"), format!("F{fundraiser}"));
                    if engine.check_completion(&f, &s, t).unwrap().is_some() {
                        engine.freeze_student(&s, t).unwrap();
                        engine.settle_win(&s, &f, 500, 60, t).unwrap();
                        winners.insert(s, f);
                    }
                }
                FundOp::Orphan { student } => {
                    if winners.remove(&format!("S{student}")).is_some() {
                        engine.adopt_outcomes(&winners, t).unwrap();
                    }
                }
            }
            if i % 1_000 == 999 {
                check_engine(&engine, &winners)?;
            }
        }
        check_engine(&engine, &winners)?;
        let settled = engine.log().iter().filter(|e| matches!(e, FundingEvent::StudentWon { .. })).count();
        prop_assert!(settled > 0, "no race was ever settled");
        let won = engine.students().filter(|r| r.state == StudentState::Won).count();
        prop_assert_eq!(won, winners.len());
    }
}
