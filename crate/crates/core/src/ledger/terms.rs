use serde::{Deserialize, Serialize};

/// Integer minor currency units. No floating point anywhere near money.
pub type Cents = u64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvestorShare {
    pub sponsor_id: String,
    pub amount: Cents,
}

/// The financial binding between a student, their investors and the
/// fundraiser that won the race. Immutable once mined.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractTerms {
    pub student_id: String,
    pub program_name: String,
    pub institute_name: String,
    pub program_cost: Cents,
    pub program_duration_months: u32,
    pub shares: Vec<InvestorShare>,
    /// Basis points of post-graduation income owed to investors.
    pub benefit_percent_bp: u32,
    pub benefit_period_months: u32,
    pub fundraiser_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactInfo {
    pub party_id: String,
    pub address: String,
    pub email: String,
    pub phone: String,
}

impl ContactInfo {
    pub fn new(party_id: impl Into<String>) -> Self {
        ContactInfo {
            party_id: party_id.into(),
            address: String::new(),
            email: String::new(),
            phone: String::new(),
        }
    }
}

impl ContractTerms {
    pub fn share_sum(&self) -> Cents {
        self.shares.iter().map(|s| s.amount).sum()
    }

    /// Student first, then each investor in share order.
    pub fn parties(&self) -> Vec<&str> {
        let mut out = vec![self.student_id.as_str()];
        for share in &self.shares {
            if !out.contains(&share.sponsor_id.as_str()) {
                out.push(share.sponsor_id.as_str());
            }
        }
        out
    }

    pub fn is_party(&self, id: &str) -> bool {
        self.student_id == id || self.shares.iter().any(|s| s.sponsor_id == id)
    }

    /// Checks the structural invariants, returning a description of the first
    /// violation.
    pub fn validate(&self) -> Result<(), String> {
        if self.student_id.is_empty() {
            return Err("empty student_id".into());
        }
        if self.fundraiser_id.is_empty() {
            return Err("empty fundraiser_id".into());
        }
        if self.program_duration_months == 0 {
            return Err("program_duration_months must be positive".into());
        }
        if self.benefit_period_months == 0 {
            return Err("benefit_period_months must be positive".into());
        }
        if self.shares.is_empty() {
            return Err("contract has no investor shares".into());
        }
        let mut sum: Cents = 0;
        for share in &self.shares {
            if share.sponsor_id.is_empty() {
                return Err("empty sponsor_id in share".into());
            }
            if share.amount == 0 {
                return Err(format!("zero share for {}", share.sponsor_id));
            }
            sum = sum
                .checked_add(share.amount)
                .ok_or_else(|| "share sum overflows".to_string())?;
        }
        if sum != self.program_cost {
            return Err(format!(
                "share sum {sum} does not equal program cost {}",
                self.program_cost
            ));
        }
        Ok(())
    }
}
