//! Canonical wire form: UTF-8 JSON with lexicographically sorted object keys,
//! explicit `null`s and no insignificant whitespace.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::*;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DomainError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("invariant violation: {0}")]
    Invariant(String),
}

impl DomainError {
    pub fn code(&self) -> &'static str {
        match self {
            DomainError::Parse(_) => "ParseError",
            DomainError::Schema(_) => "SchemaViolation",
            DomainError::Invariant(_) => "InvariantViolation",
        }
    }

    fn from_json(err: serde_json::Error) -> Self {
        use serde_json::error::Category;
        match err.classify() {
            Category::Data => DomainError::Schema(err.to_string()),
            Category::Syntax | Category::Eof | Category::Io => DomainError::Parse(err.to_string()),
        }
    }
}

/// Type tags name the closed set of shapes that can be parsed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TypeTag {
    ChildAvatar,
    BasicConstraints,
    StoryFramework,
    FrameworkDraft,
    RecapAndGoal,
    Page,
    Interaction,
    Episode,
    EpisodeDraft,
    PostMealRecord,
    FeedbackMessage,
    FeedbackDraft,
}

/// A value that has a canonical wire form.
pub trait Canonical: Serialize + DeserializeOwned + Invariants {
    const TAG: TypeTag;
}

macro_rules! canonical {
    ($($ty:ident),* $(,)?) => {
        $(impl Canonical for $ty {
            const TAG: TypeTag = TypeTag::$ty;
        })*

        /// Any domain value, tagged by its type.
        #[derive(Debug, Clone, PartialEq)]
        pub enum DomainValue {
            $($ty($ty),)*
        }

        impl DomainValue {
            pub fn tag(&self) -> TypeTag {
                match self {
                    $(DomainValue::$ty(_) => TypeTag::$ty,)*
                }
            }

            pub fn to_bytes(&self) -> Result<Vec<u8>, DomainError> {
                match self {
                    $(DomainValue::$ty(v) => canonical_serialize(v),)*
                }
            }
        }

        /// Parses `bytes` as the type named by `expected`, checking invariants.
        pub fn canonical_parse(bytes: &[u8], expected: TypeTag) -> Result<DomainValue, DomainError> {
            match expected {
                $(TypeTag::$ty => parse_checked::<$ty>(bytes).map(DomainValue::$ty),)*
            }
        }

        /// Checks that `bytes` match the closed schema of `expected`, without
        /// running invariant checks.
        pub fn check_schema(bytes: &[u8], expected: TypeTag) -> Result<(), DomainError> {
            match expected {
                $(TypeTag::$ty => parse_schema_only::<$ty>(bytes).map(|_| ()),)*
            }
        }
    };
}

canonical!(
    ChildAvatar,
    BasicConstraints,
    StoryFramework,
    FrameworkDraft,
    RecapAndGoal,
    Page,
    Interaction,
    Episode,
    EpisodeDraft,
    PostMealRecord,
    FeedbackMessage,
    FeedbackDraft,
);

impl Invariants for Interaction {
    fn check_invariants(&self) -> Result<(), DomainError> {
        match (&self.event_key, self.kind) {
            (None, InteractionType::None) => Ok(()),
            (Some(k), t) if t != InteractionType::None && is_snake_case_key(k) => Ok(()),
            _ => Err(DomainError::Invariant(
                "event_key must be snake_case and present exactly when the type is not none"
                    .into(),
            )),
        }
    }
}

impl Invariants for EpisodeDraft {
    fn check_invariants(&self) -> Result<(), DomainError> {
        for page in &self.pages {
            page.check_invariants()?;
        }
        Ok(())
    }
}

/// Converts to a JSON value whose maps are key-sorted.
pub fn to_canonical_value<T: Serialize>(value: &T) -> Result<serde_json::Value, DomainError> {
    // serde_json's default `Map` is a BTreeMap, so keys come out sorted.
    serde_json::to_value(value).map_err(|e| DomainError::Parse(e.to_string()))
}

/// Serializes a value after checking its invariants.
pub fn canonical_serialize<T: Serialize + Invariants>(value: &T) -> Result<Vec<u8>, DomainError> {
    value.check_invariants()?;
    let v = to_canonical_value(value)?;
    serde_json::to_vec(&v).map_err(|e| DomainError::Parse(e.to_string()))
}

fn parse_checked<T: DeserializeOwned + Invariants>(bytes: &[u8]) -> Result<T, DomainError> {
    let value = parse_schema_only::<T>(bytes)?;
    value.check_invariants()?;
    Ok(value)
}

/// Parses against the closed schema only (keys, types, enum literals),
/// leaving invariant checks to the caller. Used for provider output, whose
/// content rules are reported by the validators instead.
pub fn parse_schema_only<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, DomainError> {
    let text = std::str::from_utf8(bytes).map_err(|e| DomainError::Parse(e.to_string()))?;
    serde_json::from_str(text).map_err(DomainError::from_json)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn page(id: &str, no: u32, next: Option<&str>) -> Page {
        Page {
            page_no: no,
            page_id: PageId::new(id),
            page_text_cn: "小明看见了西兰花。".into(),
            next_page_id: next.map(PageId::new),
            interaction: None,
            branch_choices: vec![],
        }
    }

    fn avatar() -> ChildAvatar {
        ChildAvatar {
            avatar_id: "avatar_000001".into(),
            nickname: "小明".into(),
            gender: Gender::Boy,
            clothing: "red raincoat".into(),
            accessories: vec![],
            base_reference_image: None,
        }
    }

    #[test]
    fn empty_accessories_round_trip() {
        let bytes = canonical_serialize(&avatar()).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.contains(r#""accessories":[]"#));
        let back = canonical_parse(&bytes, TypeTag::ChildAvatar).unwrap();
        assert_eq!(back, DomainValue::ChildAvatar(avatar()));
    }

    #[test]
    fn null_next_page_is_explicit() {
        let bytes = canonical_serialize(&page("page_12", 12, None)).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.contains(r#""next_page_id":null"#), "{text}");
        assert!(text.contains(r#""interaction":null"#), "{text}");
    }

    #[test]
    fn keys_are_sorted() {
        let text = String::from_utf8(canonical_serialize(&page("p", 1, None)).unwrap()).unwrap();
        let first_keys: Vec<_> = ["branch_choices", "interaction", "next_page_id", "page_id", "page_no", "page_text_cn"]
            .iter()
            .map(|k| text.find(&format!("\"{k}\"")).unwrap())
            .collect();
        assert!(first_keys.windows(2).all(|w| w[0] < w[1]), "{text}");
    }

    #[test]
    fn missing_nullable_key_is_a_schema_violation() {
        let err = canonical_parse(
            br#"{"page_no":1,"page_id":"p","page_text_cn":"x","interaction":null}"#,
            TypeTag::Page,
        )
        .unwrap_err();
        assert!(matches!(err, DomainError::Schema(_)), "{err:?}");
    }

    #[test]
    fn unknown_enum_literal_fails() {
        let mut v = to_canonical_value(&avatar()).unwrap();
        v["gender"] = "other".into();
        let err = canonical_parse(v.to_string().as_bytes(), TypeTag::ChildAvatar).unwrap_err();
        assert!(matches!(err, DomainError::Schema(_)));
    }

    #[test]
    fn malformed_bytes_are_parse_errors() {
        let err = canonical_parse(b"{\"pages\": [", TypeTag::EpisodeDraft).unwrap_err();
        assert!(matches!(err, DomainError::Parse(_)));
        let err = canonical_parse(&[0xff, 0xfe], TypeTag::EpisodeDraft).unwrap_err();
        assert!(matches!(err, DomainError::Parse(_)));
    }

    #[test]
    fn three_branch_choices_violate_invariants() {
        let mut p = page("page_05", 5, Some("page_06"));
        p.interaction = Some(Interaction {
            kind: InteractionType::Choice,
            instruction: "选一条路".into(),
            event_key: Some("choose_path".into()),
            ext: InteractionExt::default(),
        });
        p.branch_choices = (6..9)
            .map(|n| BranchChoice { label_cn: "路".into(), next_page_id: PageId::new(format!("page_{n:02}")) })
            .collect();
        let raw = serde_json::to_vec(&p).unwrap();
        let err = canonical_parse(&raw, TypeTag::Page).unwrap_err();
        assert!(matches!(err, DomainError::Invariant(_)), "{err:?}");
    }

    #[test]
    fn empty_nickname_is_rejected_on_serialize() {
        let mut a = avatar();
        a.nickname = "  ".into();
        assert!(matches!(canonical_serialize(&a), Err(DomainError::Invariant(_))));
    }
}
