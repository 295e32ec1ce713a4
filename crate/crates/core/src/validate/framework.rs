use crate::domain::StoryFramework;

use super::report::{ValidationReport, ViolationCode};

pub const MIN_CORE_LOCATIONS: usize = 4;

/// Finds a `{...}` or `<...>` template placeholder.
pub fn find_placeholder(text: &str) -> Option<&str> {
    for (open, close) in [('{', '}'), ('<', '>')] {
        if let Some(start) = text.find(open) {
            if let Some(len) = text[start..].find(close) {
                return Some(&text[start..start + len + close.len_utf8()]);
            }
        }
    }
    None
}

pub fn validate_framework(framework: &StoryFramework) -> ValidationReport {
    let mut report = ValidationReport::new();
    let distinct = framework.distinct_location_count();
    if distinct < MIN_CORE_LOCATIONS {
        report.push(
            ViolationCode::TooFewLocations,
            None,
            format!("{distinct} distinct core locations, at least {MIN_CORE_LOCATIONS} required"),
        );
    }
    for (path, text) in framework.text_fields() {
        if let Some(p) = find_placeholder(text) {
            report.push(ViolationCode::PlaceholderDetected, None, format!("{path} contains `{p}`"));
        }
    }
    if framework.recurring_elements.recurring_phrase.trim().is_empty() {
        report.push(ViolationCode::EmptyRecurringPhrase, None, "recurring_phrase is empty");
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::*;

    pub(crate) fn framework() -> StoryFramework {
        StoryFramework {
            framework_id: "fw".into(),
            story_mode: StoryMode::JourneyDiscoveryFramework,
            world_setting: WorldSetting {
                concept: "小镇上的美食小旅行".into(),
                core_locations: vec!["家".into(), "学校".into(), "公园".into(), "菜市场".into()],
            },
            world_rules: vec!["每一站都要盖一个小印章".into()],
            recurring_elements: RecurringElements {
                recurring_object: "旅行地图册".into(),
                recurring_phrase: "下一站，出发！".into(),
                opening_ritual: "背上小书包，轻轻说出发".into(),
                closing_hook_style: "回到家在地图上盖章".into(),
                episode_trigger_style: "地图上亮起新的一站".into(),
            },
            helper_roles: vec![HelperRole { name: "小鸽子".into(), role: "带路的向导".into() }],
            child_role: "小明是每次旅行的小队长".into(),
        }
    }

    #[test]
    fn four_locations_ok() {
        assert!(validate_framework(&framework()).ok);
    }

    #[test]
    fn three_locations() {
        let mut f = framework();
        f.world_setting.core_locations.pop();
        assert_eq!(validate_framework(&f).codes(), vec![ViolationCode::TooFewLocations]);
        // Duplicates do not count twice.
        f.world_setting.core_locations.push("家".into());
        assert_eq!(validate_framework(&f).codes(), vec![ViolationCode::TooFewLocations]);
    }

    #[test]
    fn placeholder() {
        let mut f = framework();
        f.recurring_elements.recurring_object = "{xxx}".into();
        assert_eq!(validate_framework(&f).codes(), vec![ViolationCode::PlaceholderDetected]);
        let mut f = framework();
        f.child_role = "<child name> is the lead".into();
        assert_eq!(validate_framework(&f).codes(), vec![ViolationCode::PlaceholderDetected]);
        assert_eq!(find_placeholder("a < b but no close"), None);
    }

    #[test]
    fn empty_phrase() {
        let mut f = framework();
        f.recurring_elements.recurring_phrase = " ".into();
        assert_eq!(validate_framework(&f).codes(), vec![ViolationCode::EmptyRecurringPhrase]);
    }
}
