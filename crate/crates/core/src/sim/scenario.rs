//! Declarative simulation scenarios, read from JSON.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::Cents;
use crate::registry::{AccountRequest, Role, VerificationRecord};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub min_score: u32,
    pub max_income_cents: Cents,
    pub benefit_percent_bp: u32,
    pub benefit_period_months: u32,
    /// Messages a node processes between its win claim and mining.
    pub tie_break_window: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            min_score: 600,
            max_income_cents: 50_000_00,
            benefit_percent_bp: 500,
            benefit_period_months: 60,
            tie_break_window: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PledgeSpec {
    pub sponsor: String,
    pub fundraiser: String,
    pub amount: Cents,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioEvent {
    Deposit {
        sponsor: String,
        node: String,
        amount: Cents,
    },
    SubmitApplication {
        student: String,
        program_name: String,
        institute_name: String,
        high_school_score: u32,
        family_income: Cents,
        target_amount: Cents,
        program_duration_months: u32,
    },
    Verify {
        student: String,
    },
    Pledge {
        sponsor: String,
        student: String,
        fundraiser: String,
        amount: Cents,
    },
    /// Splits the network into groups; an empty list heals it.
    PartitionHint {
        groups: Vec<Vec<String>>,
    },
    /// Places every pledge before any message is delivered, so several
    /// fundraisers can complete the same race concurrently.
    InjectConcurrentClaims {
        student: String,
        pledges: Vec<PledgeSpec>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub nodes: Vec<String>,
    #[serde(default)]
    pub config: SimConfig,
    pub accounts: Vec<AccountRequest>,
    #[serde(default)]
    pub verification_records: Vec<VerificationRecord>,
    #[serde(default)]
    pub events: Vec<ScenarioEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("line {line}: {reason}")]
    ParseError { line: usize, reason: String },
    #[error("line {line}: unknown event type {name:?}")]
    UnknownEventType { line: usize, name: String },
    #[error("event {event}: {field} refers to undeclared {what} {id:?}")]
    DanglingReference {
        event: usize,
        field: &'static str,
        what: &'static str,
        id: String,
    },
    #[error("event {event}: {reason}")]
    InvalidEvent { event: usize, reason: String },
    #[error("scenario: {0}")]
    Invalid(String),
}

const EVENT_TAGS: [&str; 6] = [
    "deposit",
    "submit_application",
    "verify",
    "pledge",
    "partition_hint",
    "inject_concurrent_claims",
];

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        let scenario: Scenario = serde_json::from_str(text).map_err(|e| {
            let message = e.to_string();
            match unknown_event_tag(&message) {
                Some(name) => ScenarioError::UnknownEventType { line: e.line(), name },
                None => ScenarioError::ParseError {
                    line: e.line(),
                    reason: message,
                },
            }
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenarios serialize")
    }

    fn ids_with_role(&self, role: Role) -> BTreeSet<&str> {
        self.accounts
            .iter()
            .filter(|a| a.role == Some(role))
            .filter_map(|a| a.account_id.as_deref())
            .collect()
    }

    /// Checks that events refer to declared nodes and accounts and carry
    /// positive amounts.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.nodes.is_empty() {
            return Err(ScenarioError::Invalid("at least one node is required".into()));
        }
        if let Some(a) = self.accounts.iter().find(|a| a.account_id.is_none()) {
            return Err(ScenarioError::Invalid(format!("account {:?} needs an account_id", a.name)));
        }
        let nodes: BTreeSet<&str> = self.nodes.iter().map(String::as_str).collect();
        if nodes.len() != self.nodes.len() {
            return Err(ScenarioError::Invalid("node ids must be unique".into()));
        }
        let fundraisers = self.ids_with_role(Role::Fundraiser);
        if let Some(n) = nodes.iter().find(|n| !fundraisers.contains(*n)) {
            return Err(ScenarioError::Invalid(format!("node {n} has no fundraiser account")));
        }
        let sponsors = self.ids_with_role(Role::Sponsor);
        let students = self.ids_with_role(Role::Student);

        for (i, event) in self.events.iter().enumerate() {
            let check = |field, what, set: &BTreeSet<&str>, id: &str| {
                if set.contains(id) {
                    Ok(())
                } else {
                    Err(ScenarioError::DanglingReference {
                        event: i,
                        field,
                        what,
                        id: id.to_string(),
                    })
                }
            };
            let positive = |amount: Cents| {
                if amount == 0 {
                    Err(ScenarioError::InvalidEvent {
                        event: i,
                        reason: "amounts must be positive".into(),
                    })
                } else {
                    Ok(())
                }
            };
            match event {
                ScenarioEvent::Deposit { sponsor, node, amount } => {
                    check("sponsor", "sponsor", &sponsors, sponsor)?;
                    check("node", "node", &nodes, node)?;
                    positive(*amount)?;
                }
                ScenarioEvent::SubmitApplication {
                    student, target_amount, ..
                } => {
                    check("student", "student", &students, student)?;
                    positive(*target_amount)?;
                }
                ScenarioEvent::Verify { student } => check("student", "student", &students, student)?,
                ScenarioEvent::Pledge {
                    sponsor,
                    student,
                    fundraiser,
                    amount,
                } => {
                    check("sponsor", "sponsor", &sponsors, sponsor)?;
                    check("student", "student", &students, student)?;
                    check("fundraiser", "node", &nodes, fundraiser)?;
                    positive(*amount)?;
                }
                ScenarioEvent::PartitionHint { groups } => {
                    let mut seen = BTreeSet::new();
                    for n in groups.iter().flatten() {
                        check("groups", "node", &nodes, n)?;
                        if !seen.insert(n) {
                            return Err(ScenarioError::InvalidEvent {
                                event: i,
                                reason: format!("node {n} appears in two groups"),
                            });
                        }
                    }
                }
                ScenarioEvent::InjectConcurrentClaims { student, pledges } => {
                    check("student", "student", &students, student)?;
                    for p in pledges {
                        check("pledges.sponsor", "sponsor", &sponsors, &p.sponsor)?;
                        check("pledges.fundraiser", "node", &nodes, &p.fundraiser)?;
                        positive(p.amount)?;
                    }
                }
            }
        }
        Ok(())
    }
}

// serde reports an unknown internally-tagged variant as
// "unknown variant `x`, expected one of ...".
fn unknown_event_tag(message: &str) -> Option<String> {
    let rest = message.strip_prefix("unknown variant `")?;
    let (name, expected) = rest.split_once('`')?;
    EVENT_TAGS
        .iter()
        .all(|t| expected.contains(&format!("`{t}`")))
        .then(|| name.to_string())
}
