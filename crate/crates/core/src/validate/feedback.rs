use super::han::{count_han_chars, is_emoji, is_latin_letter};
use super::report::{ValidationReport, ViolationCode};

pub const FEEDBACK_MAX_HAN: usize = 50;

/// Length of the opening compared against recently delivered messages.
pub const OPENING_PREFIX_CHARS: usize = 8;

/// Marks that end the first sentence of a feedback message.
pub const FIRST_SENTENCE_TERMINALS: &[char] = &['。', '！', '？'];

/// Text up to and including the first sentence-terminal mark, or the whole
/// text when there is none.
pub fn first_sentence(text: &str) -> &str {
    match text.find(FIRST_SENTENCE_TERMINALS) {
        Some(i) => {
            let end = i + text[i..].chars().next().map_or(0, char::len_utf8);
            &text[..end]
        }
        None => text,
    }
}

pub fn opening_prefix(text: &str) -> String {
    text.trim().chars().take(OPENING_PREFIX_CHARS).collect()
}

/// Checks one post-meal feedback message.
pub fn validate_feedback_text(
    text_cn: &str,
    nickname: &str,
    food: &str,
    recent_phrases: &[String],
) -> ValidationReport {
    let mut report = ValidationReport::new();

    let han = count_han_chars(text_cn);
    if han > FEEDBACK_MAX_HAN {
        report.push(
            ViolationCode::LengthViolation,
            None,
            format!("{han} Han characters, maximum {FEEDBACK_MAX_HAN}"),
        );
    }

    let nick_count = if nickname.is_empty() { 0 } else { text_cn.matches(nickname).count() };
    if nick_count != 1 {
        report.push(
            ViolationCode::NicknameCountViolation,
            None,
            format!("nickname appears {nick_count} times, expected exactly once"),
        );
    }

    if food.is_empty() || !text_cn.contains(food) {
        report.push(ViolationCode::FoodMentionMissing, None, format!("`{food}` is not mentioned"));
    }

    let opening = first_sentence(text_cn);
    let names_child = !nickname.is_empty() && opening.contains(nickname);
    let names_food = !food.is_empty() && opening.contains(food);
    if names_child || names_food {
        report.push(
            ViolationCode::OpeningContainsIdentity,
            None,
            format!("first sentence `{opening}` names the child or the food"),
        );
    }

    let prefix = opening_prefix(text_cn);
    if let Some(hit) = recent_phrases
        .iter()
        .filter(|p| !p.trim().is_empty())
        .find(|p| opening_prefix(p) == prefix)
    {
        report.push(
            ViolationCode::RecentPhrasePrefixCollision,
            None,
            format!("opens like the recent message `{hit}`"),
        );
    }

    if let Some(c) = text_cn.chars().find(|&c| is_latin_letter(c) || is_emoji(c)) {
        report.push(
            ViolationCode::ForbiddenScriptDetected,
            None,
            format!("`{c}` (U+{:04X}) is not allowed", c as u32),
        );
    }

    report
}

#[cfg(test)]
mod tests {
    use super::*;

    const NICK: &str = "小明";
    const FOOD: &str = "西兰花";

    #[test]
    fn first_sentence_splits_on_terminals() {
        assert_eq!(first_sentence("今天真好。明天见"), "今天真好。");
        assert_eq!(first_sentence("没有句号"), "没有句号");
        assert_eq!(first_sentence("哇！好"), "哇！");
    }

    #[test]
    fn compliant_message() {
        let text = "小勺子今天勇敢地出发啦。小明把西兰花送到嘴边，认真看了又闻了闻。慢慢来，下一次会更熟悉它。";
        let r = validate_feedback_text(text, NICK, FOOD, &[]);
        assert!(r.ok, "{}", r.summary());
    }

    #[test]
    fn nickname_twice() {
        let text = "小勺子今天出发啦。小明闻了西兰花，小明真认真。";
        let r = validate_feedback_text(text, NICK, FOOD, &[]);
        assert_eq!(r.codes(), vec![ViolationCode::NicknameCountViolation]);
    }

    #[test]
    fn too_long() {
        let text = format!("小勺子今天出发啦。小明闻了西兰花。{}", "好".repeat(40));
        let r = validate_feedback_text(&text, NICK, FOOD, &[]);
        assert_eq!(r.codes(), vec![ViolationCode::LengthViolation]);
    }

    #[test]
    fn identity_in_opening_and_latin() {
        let r = validate_feedback_text("小明好棒。西兰花ok。", NICK, FOOD, &[]);
        assert_eq!(
            r.codes(),
            vec![ViolationCode::OpeningContainsIdentity, ViolationCode::ForbiddenScriptDetected]
        );
    }

    #[test]
    fn recent_prefix_collision() {
        let recent = vec!["小勺子今天勇敢地出发啦。别的内容。".to_string()];
        let text = "小勺子今天勇敢地出发啦。小明看了看西兰花。";
        let r = validate_feedback_text(text, NICK, FOOD, &recent);
        assert_eq!(r.codes(), vec![ViolationCode::RecentPhrasePrefixCollision]);
    }
}
