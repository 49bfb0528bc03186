use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use teduchain_core::hash::{hash_document, sha256};
use teduchain_core::ledger::{encode_ledger, verify_chain, verify_ledger_bytes, Chain, ContractTerms, InvestorShare};

fn chain_of(len: usize) -> Chain {
    let mut chain = Chain::new();
    for i in 0..len {
        let terms = ContractTerms {
            student_id: format!("S{i:05}"),
            program_name: "BSc Computing Science".into(),
            institute_name: "University of the South Pacific".into(),
            program_cost: 1_000_000,
            program_duration_months: 36,
            shares: vec![
                InvestorShare { sponsor_id: "P01".into(), amount: 600_000 },
                InvestorShare { sponsor_id: "P02".into(), amount: 400_000 },
            ],
            benefit_percent_bp: 500,
            benefit_period_months: 60,
            fundraiser_id: "F1".into(),
        };
        let doc = hash_document(terms.student_id.as_bytes());
        chain.append_contract(terms, vec![], doc, "F1", 1_700_000_000_000 + i as u64).unwrap();
    }
    chain
}

fn hashing(c: &mut Criterion) {
    let mut group = c.benchmark_group("sha256");
    for size in [64usize, 1024, 16 * 1024] {
        let data = vec![0xa5u8; size];
        group.throughput(Throughput::Bytes(size as u64));
        group.bench_with_input(BenchmarkId::from_parameter(size), &data, |b, d| b.iter(|| sha256(black_box(d))));
    }
    group.finish();
}

fn verification(c: &mut Criterion) {
    let mut group = c.benchmark_group("verify");
    for len in [10usize, 100, 1000] {
        let chain = chain_of(len);
        let bytes = encode_ledger(chain.blocks());
        group.throughput(Throughput::Elements(len as u64 + 1));
        group.bench_with_input(BenchmarkId::new("blocks", len), chain.blocks(), |b, blocks| {
            b.iter(|| verify_chain(black_box(blocks)))
        });
        group.bench_with_input(BenchmarkId::new("ledger_file", len), &bytes, |b, bytes| {
            b.iter(|| verify_ledger_bytes(black_box(bytes)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, hashing, verification);
criterion_main!(benches);
