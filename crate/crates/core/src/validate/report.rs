use std::fmt;

use serde::{Deserialize, Serialize};

use crate::domain::PageId;

/// Closed catalog of violation codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ViolationCode {
    PageCountMismatch,
    PageTooShort,
    PageTooLong,
    TotalLengthOutOfBand,
    MicroInteractionBudgetExceeded,
    ChoiceBudgetExceeded,
    RecordVoiceBudgetExceeded,
    DuplicateEventKey,
    MalformedEventKey,
    DanglingPageReference,
    FinalPageNotTerminal,
    UnreachablePage,
    CycleDetected,
    BranchMergeTooFar,
    BranchCountViolation,
    PromptPackageMissing,
    PromptPackageOrphan,
    LengthViolation,
    NicknameCountViolation,
    FoodMentionMissing,
    OpeningContainsIdentity,
    RecentPhrasePrefixCollision,
    ForbiddenScriptDetected,
    TooFewLocations,
    PlaceholderDetected,
    EmptyRecurringPhrase,
    // Generation gate checks layered on top of the validators.
    InvariantViolation,
    FirstPersonNarration,
    StageVocabularyDetected,
}

impl ViolationCode {
    /// Codes emitted by the pure content validators.
    pub const VALIDATOR: [ViolationCode; 26] = [
        ViolationCode::PageCountMismatch,
        ViolationCode::PageTooShort,
        ViolationCode::PageTooLong,
        ViolationCode::TotalLengthOutOfBand,
        ViolationCode::MicroInteractionBudgetExceeded,
        ViolationCode::ChoiceBudgetExceeded,
        ViolationCode::RecordVoiceBudgetExceeded,
        ViolationCode::DuplicateEventKey,
        ViolationCode::MalformedEventKey,
        ViolationCode::DanglingPageReference,
        ViolationCode::FinalPageNotTerminal,
        ViolationCode::UnreachablePage,
        ViolationCode::CycleDetected,
        ViolationCode::BranchMergeTooFar,
        ViolationCode::BranchCountViolation,
        ViolationCode::PromptPackageMissing,
        ViolationCode::PromptPackageOrphan,
        ViolationCode::LengthViolation,
        ViolationCode::NicknameCountViolation,
        ViolationCode::FoodMentionMissing,
        ViolationCode::OpeningContainsIdentity,
        ViolationCode::RecentPhrasePrefixCollision,
        ViolationCode::ForbiddenScriptDetected,
        ViolationCode::TooFewLocations,
        ViolationCode::PlaceholderDetected,
        ViolationCode::EmptyRecurringPhrase,
    ];

    /// Codes added by the generation pipeline's gates.
    pub const GATE: [ViolationCode; 3] = [
        ViolationCode::InvariantViolation,
        ViolationCode::FirstPersonNarration,
        ViolationCode::StageVocabularyDetected,
    ];
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Violation {
    pub code: ViolationCode,
    pub page_id: Option<PageId>,
    pub detail: String,
}

/// Outcome of a validation pass. `ok` is true exactly when there are no
/// violations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, try_from = "RawReport")]
pub struct ValidationReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawReport {
    ok: bool,
    violations: Vec<Violation>,
}

impl TryFrom<RawReport> for ValidationReport {
    type Error = String;

    fn try_from(raw: RawReport) -> Result<Self, Self::Error> {
        if raw.ok != raw.violations.is_empty() {
            return Err("ok must be true exactly when violations is empty".into());
        }
        Ok(ValidationReport { ok: raw.ok, violations: raw.violations })
    }
}

impl Default for ValidationReport {
    fn default() -> Self {
        Self::new()
    }
}

impl ValidationReport {
    pub fn new() -> Self {
        ValidationReport { ok: true, violations: Vec::new() }
    }

    pub fn push(&mut self, code: ViolationCode, page_id: Option<&PageId>, detail: impl Into<String>) {
        self.violations.push(Violation { code, page_id: page_id.cloned(), detail: detail.into() });
        self.ok = false;
    }

    pub fn merge(&mut self, other: ValidationReport) {
        self.ok &= other.ok;
        self.violations.extend(other.violations);
    }

    pub fn has(&self, code: ViolationCode) -> bool {
        self.violations.iter().any(|v| v.code == code)
    }

    /// Distinct codes, sorted.
    pub fn codes(&self) -> Vec<ViolationCode> {
        let mut codes: Vec<_> = self.violations.iter().map(|v| v.code).collect();
        codes.sort();
        codes.dedup();
        codes
    }

    pub fn summary(&self) -> String {
        if self.ok {
            return "ok".into();
        }
        self.violations
            .iter()
            .map(|v| match &v.page_id {
                Some(p) => format!("{} [{}]: {}", v.code, p, v.detail),
                None => format!("{}: {}", v.code, v.detail),
            })
            .collect::<Vec<_>>()
            .join("; ")
    }
}

impl crate::domain::Invariants for ValidationReport {
    fn check_invariants(&self) -> Result<(), crate::domain::DomainError> {
        if self.ok != self.violations.is_empty() {
            return Err(crate::domain::DomainError::Invariant(
                "ok must be true exactly when violations is empty".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ok_tracks_violations() {
        let mut r = ValidationReport::new();
        assert!(r.ok);
        r.push(ViolationCode::PageTooShort, Some(&PageId::new("p1")), "59 < 60");
        assert!(!r.ok);
        let mut all = ValidationReport::new();
        all.merge(ValidationReport::new());
        assert!(all.ok);
        all.merge(r);
        assert!(!all.ok);
        assert_eq!(all.codes(), vec![ViolationCode::PageTooShort]);
    }

    #[test]
    fn inconsistent_report_does_not_parse() {
        let bad = r#"{"ok":true,"violations":[{"code":"PageTooShort","page_id":null,"detail":""}]}"#;
        assert!(serde_json::from_str::<ValidationReport>(bad).is_err());
        let unknown = r#"{"ok":false,"violations":[{"code":"Whatever","page_id":null,"detail":""}]}"#;
        assert!(serde_json::from_str::<ValidationReport>(unknown).is_err());
    }

    #[test]
    fn catalogs_are_disjoint() {
        for g in ViolationCode::GATE {
            assert!(!ViolationCode::VALIDATOR.contains(&g));
        }
    }
}
