use proptest::prelude::*;
use storyecho_core::domain::*;
use storyecho_core::validate::ValidationReport;
use storyecho_testkit::corpus::{valid_episodes, valid_frameworks};
use storyecho_testkit::records::random_record;

use rand::SeedableRng;

#[test]
fn corpus_episodes_survive_canonical_json() {
    for ep in valid_episodes() {
        let bytes = canonical_serialize(&ep).unwrap();
        let back = canonical_parse(&bytes, TypeTag::Episode).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back, DomainValue::Episode(ep));
    }
    for fw in valid_frameworks() {
        let bytes = canonical_serialize(&fw).unwrap();
        assert_eq!(canonical_parse(&bytes, TypeTag::StoryFramework).unwrap(), DomainValue::StoryFramework(fw));
    }
}

#[test]
fn unknown_keys_are_rejected() {
    let ep = &valid_episodes()[0];
    let mut v = serde_json::to_value(ep).unwrap();
    v["surprise"] = 1.into();
    assert!(canonical_parse(&serde_json::to_vec(&v).unwrap(), TypeTag::Episode).is_err());
    let mut v = serde_json::to_value(ep).unwrap();
    v["pages"][0]["mood"] = "happy".into();
    assert!(canonical_parse(&serde_json::to_vec(&v).unwrap(), TypeTag::Episode).is_err());
}

#[test]
fn report_ok_flag_must_match_violations() {
    assert!(serde_json::from_str::<ValidationReport>(r#"{"ok":false,"violations":[]}"#).is_err());
    assert!(serde_json::from_str::<ValidationReport>(r#"{"ok":true,"violations":[]}"#).is_ok());
}

proptest! {
    #[test]
    fn records_round_trip(seed in any::<u64>(), id in 0usize..10_000) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let record = random_record(&mut rng, id);
        let bytes = canonical_serialize(&record).unwrap();
        prop_assert_eq!(canonical_parse(&bytes, TypeTag::PostMealRecord).unwrap(), DomainValue::PostMealRecord(record));
    }

    #[test]
    fn avatars_round_trip(nickname in "[\u{4e00}-\u{9fa5}]{1,4}", clothing in "\\PC{0,12}", accessories in proptest::collection::vec("[a-z ]{1,8}", 0..3)) {
        let a = ChildAvatar {
            avatar_id: "child_0001".into(),
            nickname,
            gender: Gender::Unspecified,
            clothing,
            accessories,
            base_reference_image: None,
        };
        let bytes = canonical_serialize(&a).unwrap();
        prop_assert_eq!(canonical_parse(&bytes, TypeTag::ChildAvatar).unwrap(), DomainValue::ChildAvatar(a));
    }
}
