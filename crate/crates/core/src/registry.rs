//! Central registry: accounts, student applications, eligibility checks
//! against preloaded verification records, and the active-student list.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::info;

use crate::canonical;
use crate::funding::StudentListing;
use crate::ledger::{Cents, ContactInfo};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    Student,
    Fundraiser,
    Sponsor,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "role", deny_unknown_fields)]
pub enum RoleDetails {
    Student { contact: ContactInfo },
    Fundraiser { business_identification_number: String },
    Sponsor { financial_info: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Account {
    pub account_id: String,
    pub name: String,
    pub email: String,
    pub details: RoleDetails,
}

impl Account {
    pub fn role(&self) -> Role {
        match self.details {
            RoleDetails::Student { .. } => Role::Student,
            RoleDetails::Fundraiser { .. } => Role::Fundraiser,
            RoleDetails::Sponsor { .. } => Role::Sponsor,
        }
    }
}

/// Registration form. Which optional fields are required depends on `role`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccountRequest {
    #[serde(default)]
    pub account_id: Option<String>,
    pub role: Option<Role>,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub email: String,
    #[serde(default)]
    pub business_identification_number: Option<String>,
    #[serde(default)]
    pub financial_info: Option<String>,
    #[serde(default)]
    pub address: Option<String>,
    #[serde(default)]
    pub phone: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ApplicationStatus {
    Pending,
    Eligible,
    Rejected,
    Won,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectReason {
    NoRecord,
    ScoreBelowMinimum,
    IncomeAboveCap,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudentApplication {
    pub application_id: String,
    pub student_id: String,
    pub program_name: String,
    pub institute_name: String,
    pub high_school_score: u32,
    pub family_income: Cents,
    pub target_amount: Cents,
    pub program_duration_months: u32,
    pub status: ApplicationStatus,
    pub rejection: Option<RejectReason>,
    pub submitted_at: u64,
    pub eligible_at: Option<u64>,
}

impl StudentApplication {
    pub fn listing(&self) -> StudentListing {
        StudentListing {
            student_id: self.student_id.clone(),
            target_amount: self.target_amount,
            program_name: self.program_name.clone(),
            institute_name: self.institute_name.clone(),
            program_duration_months: self.program_duration_months,
        }
    }
}

/// Application form; every field must be present.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApplicationRequest {
    #[serde(default)]
    pub student_id: String,
    #[serde(default)]
    pub program_name: Option<String>,
    #[serde(default)]
    pub institute_name: Option<String>,
    #[serde(default)]
    pub high_school_score: Option<u32>,
    #[serde(default)]
    pub family_income: Option<Cents>,
    #[serde(default)]
    pub target_amount: Option<Cents>,
    #[serde(default)]
    pub program_duration_months: Option<u32>,
}

/// A preloaded row identifying a real student result.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerificationRecord {
    pub name: String,
    pub institute: String,
    pub high_school_score: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EligibilityRules {
    pub min_score: u32,
    pub max_income_cents: Cents,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Eligibility {
    Eligible(StudentListing),
    Rejected(RejectReason),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Notification {
    pub time: u64,
    pub account_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("missing field {0}")]
    MissingField(&'static str),
    #[error("fundraisers must provide a business identification number")]
    MissingBusinessId,
    #[error("sponsors must provide financial information")]
    MissingFinancialInfo,
    #[error("email {0} is already registered")]
    DuplicateEmail(String),
    #[error("account id {0} is already taken")]
    DuplicateAccount(String),
    #[error("unknown student {0}")]
    UnknownStudent(String),
    #[error("unknown account {0}")]
    UnknownAccount(String),
    #[error("student {0} already has an open application")]
    DuplicateApplication(String),
    #[error("unknown application {0}")]
    UnknownApplication(String),
    #[error("application {0} is not pending")]
    NotPending(String),
    #[error("verification records: {0}")]
    Records(String),
    #[error("registry file: {0}")]
    Persistence(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Registry {
    accounts: BTreeMap<String, Account>,
    applications: BTreeMap<String, StudentApplication>,
    records: Vec<VerificationRecord>,
    rules: EligibilityRules,
    notifications: Vec<Notification>,
    next_account: u64,
    next_application: u64,
}

impl Registry {
    pub fn new(rules: EligibilityRules, mut records: Vec<VerificationRecord>) -> Self {
        records.sort();
        records.dedup();
        Registry {
            accounts: BTreeMap::new(),
            applications: BTreeMap::new(),
            records,
            rules,
            notifications: Vec::new(),
            next_account: 1,
            next_application: 1,
        }
    }

    pub fn rules(&self) -> EligibilityRules {
        self.rules
    }

    pub fn account(&self, id: &str) -> Option<&Account> {
        self.accounts.get(id)
    }

    pub fn accounts(&self) -> impl Iterator<Item = &Account> {
        self.accounts.values()
    }

    pub fn application(&self, id: &str) -> Option<&StudentApplication> {
        self.applications.get(id)
    }

    pub fn applications(&self) -> impl Iterator<Item = &StudentApplication> {
        self.applications.values()
    }

    /// The student's latest application that was not rejected, if any.
    pub fn application_of(&self, student_id: &str) -> Option<&StudentApplication> {
        self.applications
            .values()
            .rfind(|a| a.student_id == student_id && a.status != ApplicationStatus::Rejected)
            .or_else(|| self.applications.values().rfind(|a| a.student_id == student_id))
    }

    pub fn notifications(&self) -> &[Notification] {
        &self.notifications
    }

    pub fn register_account(&mut self, request: AccountRequest) -> Result<&Account, RegistryError> {
        let role = request.role.ok_or(RegistryError::MissingField("role"))?;
        if request.name.trim().is_empty() {
            return Err(RegistryError::MissingField("name"));
        }
        if request.email.trim().is_empty() {
            return Err(RegistryError::MissingField("email"));
        }
        let present = |v: &Option<String>| v.as_deref().is_some_and(|s| !s.trim().is_empty());
        let email = request.email.trim().to_lowercase();
        let account_id = match request.account_id.as_deref().map(str::trim) {
            Some("") => return Err(RegistryError::MissingField("account_id")),
            Some(id) => id.to_string(),
            None => self.fresh_account_id(role),
        };
        let details = match role {
            Role::Fundraiser => {
                if !present(&request.business_identification_number) {
                    return Err(RegistryError::MissingBusinessId);
                }
                RoleDetails::Fundraiser {
                    business_identification_number: request.business_identification_number.unwrap(),
                }
            }
            Role::Sponsor => {
                if !present(&request.financial_info) {
                    return Err(RegistryError::MissingFinancialInfo);
                }
                RoleDetails::Sponsor {
                    financial_info: request.financial_info.unwrap(),
                }
            }
            Role::Student => {
                if !present(&request.address) {
                    return Err(RegistryError::MissingField("address"));
                }
                if !present(&request.phone) {
                    return Err(RegistryError::MissingField("phone"));
                }
                RoleDetails::Student {
                    contact: ContactInfo {
                        party_id: account_id.clone(),
                        address: request.address.unwrap(),
                        email: email.clone(),
                        phone: request.phone.unwrap(),
                    },
                }
            }
        };
        if self.accounts.values().any(|a| a.email == email) {
            return Err(RegistryError::DuplicateEmail(email));
        }
        if self.accounts.contains_key(&account_id) {
            return Err(RegistryError::DuplicateAccount(account_id));
        }
        info!(account = %account_id, ?role, "account registered");
        self.accounts.insert(
            account_id.clone(),
            Account {
                account_id: account_id.clone(),
                name: request.name.trim().to_string(),
                email,
                details,
            },
        );
        Ok(&self.accounts[&account_id])
    }

    fn fresh_account_id(&mut self, role: Role) -> String {
        let prefix = match role {
            Role::Student => "STU",
            Role::Fundraiser => "FUN",
            Role::Sponsor => "SPO",
        };
        loop {
            let id = format!("{prefix}-{:06}", self.next_account);
            self.next_account += 1;
            if !self.accounts.contains_key(&id) {
                return id;
            }
        }
    }

    /// Contact details to put in contracts: the student's registered contact,
    /// or name and email for other roles.
    pub fn contact_of(&self, account_id: &str) -> Option<ContactInfo> {
        let account = self.accounts.get(account_id)?;
        Some(match &account.details {
            RoleDetails::Student { contact } => contact.clone(),
            _ => ContactInfo {
                party_id: account.account_id.clone(),
                address: String::new(),
                email: account.email.clone(),
                phone: String::new(),
            },
        })
    }

    pub fn submit_application(&mut self, request: ApplicationRequest, now: u64) -> Result<&StudentApplication, RegistryError> {
        let nonempty = |v: Option<String>, field| match v {
            Some(s) if !s.trim().is_empty() => Ok(s),
            _ => Err(RegistryError::MissingField(field)),
        };
        let program_name = nonempty(request.program_name, "program_name")?;
        let institute_name = nonempty(request.institute_name, "institute_name")?;
        let high_school_score = request.high_school_score.ok_or(RegistryError::MissingField("high_school_score"))?;
        let family_income = request.family_income.ok_or(RegistryError::MissingField("family_income"))?;
        let target_amount = request.target_amount.ok_or(RegistryError::MissingField("target_amount"))?;
        let program_duration_months = request
            .program_duration_months
            .ok_or(RegistryError::MissingField("program_duration_months"))?;
        if target_amount == 0 {
            return Err(RegistryError::MissingField("target_amount"));
        }
        match self.accounts.get(&request.student_id) {
            Some(a) if a.role() == Role::Student => {}
            _ => return Err(RegistryError::UnknownStudent(request.student_id)),
        }
        if self
            .applications
            .values()
            .any(|a| a.student_id == request.student_id && a.status != ApplicationStatus::Rejected)
        {
            return Err(RegistryError::DuplicateApplication(request.student_id));
        }
        let application_id = format!("APP-{:06}", self.next_application);
        self.next_application += 1;
        self.applications.insert(
            application_id.clone(),
            StudentApplication {
                application_id: application_id.clone(),
                student_id: request.student_id,
                program_name,
                institute_name,
                high_school_score,
                family_income,
                target_amount,
                program_duration_months,
                status: ApplicationStatus::Pending,
                rejection: None,
                submitted_at: now,
                eligible_at: None,
            },
        );
        Ok(&self.applications[&application_id])
    }

    /// Checks a pending application against the preloaded records and the
    /// score and income thresholds. An eligible student joins the active list.
    pub fn verify_eligibility(&mut self, application_id: &str, now: u64) -> Result<Eligibility, RegistryError> {
        let app = self
            .applications
            .get(application_id)
            .ok_or_else(|| RegistryError::UnknownApplication(application_id.to_string()))?;
        if app.status != ApplicationStatus::Pending {
            return Err(RegistryError::NotPending(application_id.to_string()));
        }
        let outcome = evaluate(self.rules, &self.records, &self.accounts[&app.student_id].name, app);
        let app = self.applications.get_mut(application_id).expect("checked above");
        let message = match outcome {
            Eligibility::Eligible(_) => {
                app.status = ApplicationStatus::Eligible;
                app.eligible_at = Some(now);
                "application eligible; added to the active list".to_string()
            }
            Eligibility::Rejected(reason) => {
                app.status = ApplicationStatus::Rejected;
                app.rejection = Some(reason);
                format!("application rejected: {reason:?}")
            }
        };
        let student_id = app.student_id.clone();
        self.notify(now, &student_id, message);
        Ok(outcome)
    }

    /// Eligible students without a contract, oldest eligibility first.
    pub fn active_list(&self) -> Vec<&StudentApplication> {
        let mut list: Vec<&StudentApplication> = self
            .applications
            .values()
            .filter(|a| a.status == ApplicationStatus::Eligible)
            .collect();
        list.sort_by(|a, b| (a.eligible_at, &a.student_id).cmp(&(b.eligible_at, &b.student_id)));
        list
    }

    /// Takes a funded student off the active list.
    pub fn mark_won(&mut self, student_id: &str, now: u64) -> bool {
        let Some(app) = self
            .applications
            .values_mut()
            .find(|a| a.student_id == student_id && a.status == ApplicationStatus::Eligible)
        else {
            return false;
        };
        app.status = ApplicationStatus::Won;
        self.notify(now, student_id, "funded; contract block mined".into());
        true
    }

    /// Returns a student to the active list after their contract block was
    /// abandoned by fork choice.
    pub fn reopen(&mut self, student_id: &str, now: u64) -> bool {
        let Some(app) = self
            .applications
            .values_mut()
            .find(|a| a.student_id == student_id && a.status == ApplicationStatus::Won)
        else {
            return false;
        };
        app.status = ApplicationStatus::Eligible;
        self.notify(now, student_id, "contract withdrawn; back on the active list".into());
        true
    }

    pub fn request_password_reset(&mut self, account_id: &str, now: u64) -> Result<(), RegistryError> {
        if !self.accounts.contains_key(account_id) {
            return Err(RegistryError::UnknownAccount(account_id.to_string()));
        }
        self.notify(now, account_id, "password reset requested (handled offline)".into());
        Ok(())
    }

    pub fn report_conflict(&mut self, account_id: &str, description: &str, now: u64) -> Result<(), RegistryError> {
        if !self.accounts.contains_key(account_id) {
            return Err(RegistryError::UnknownAccount(account_id.to_string()));
        }
        self.notify(now, account_id, format!("conflict reported: {description}"));
        Ok(())
    }

    fn notify(&mut self, time: u64, account_id: &str, message: String) {
        info!(account = account_id, "{message}");
        self.notifications.push(Notification {
            time,
            account_id: account_id.to_string(),
            message,
        });
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        canonical::to_canonical_bytes(self).expect("registry contains no floats")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Registry, RegistryError> {
        serde_json::from_slice(bytes).map_err(|e| RegistryError::Persistence(e.to_string()))
    }
}

fn evaluate(rules: EligibilityRules, records: &[VerificationRecord], name: &str, app: &StudentApplication) -> Eligibility {
    let matched = records.iter().any(|r| {
        r.name == name && r.institute == app.institute_name && r.high_school_score == app.high_school_score
    });
    if !matched {
        Eligibility::Rejected(RejectReason::NoRecord)
    } else if app.high_school_score < rules.min_score {
        Eligibility::Rejected(RejectReason::ScoreBelowMinimum)
    } else if app.family_income > rules.max_income_cents {
        Eligibility::Rejected(RejectReason::IncomeAboveCap)
    } else {
        Eligibility::Eligible(app.listing())
    }
}

/// Reads verification records from CSV with the header
/// `name,institute,high_school_score`.
pub fn load_verification_records(reader: impl Read) -> Result<Vec<VerificationRecord>, RegistryError> {
    let mut csv = csv::Reader::from_reader(reader);
    let headers = csv.headers().map_err(|e| RegistryError::Records(e.to_string()))?;
    if headers != vec!["name", "institute", "high_school_score"] {
        return Err(RegistryError::Records(format!("unexpected header {headers:?}")));
    }
    csv.deserialize()
        .map(|row| row.map_err(|e| RegistryError::Records(e.to_string())))
        .collect()
}
