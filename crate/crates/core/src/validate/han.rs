//! Han-script classification.

/// Inclusive code-point ranges whose Unicode `Script` property is `Han`
/// (Scripts.txt, Unicode 17.0), sorted and non-overlapping.
const HAN_RANGES: &[(u32, u32)] = &[
    (0x2E80, 0x2E99),   // CJK radicals supplement
    (0x2E9B, 0x2EF3),
    (0x2F00, 0x2FD5),   // Kangxi radicals
    (0x3005, 0x3005),   // ideographic iteration mark
    (0x3007, 0x3007),   // ideographic number zero
    (0x3021, 0x3029),   // Hangzhou numerals
    (0x3038, 0x303B),
    (0x3400, 0x4DBF),   // extension A
    (0x4E00, 0x9FFF),   // unified ideographs
    (0xF900, 0xFA6D),   // compatibility ideographs
    (0xFA70, 0xFAD9),
    (0x16FE2, 0x16FE3),
    (0x16FF0, 0x16FF6),
    (0x20000, 0x2A6DF), // extension B
    (0x2A700, 0x2B81D), // extensions C, D
    (0x2B820, 0x2CEAD), // extension E
    (0x2CEB0, 0x2EBE0), // extension F
    (0x2EBF0, 0x2EE5D), // extension I
    (0x2F800, 0x2FA1D), // compatibility supplement
    (0x30000, 0x3134A), // extension G
    (0x31350, 0x33479), // extensions H, J
];

pub fn is_han(c: char) -> bool {
    let cp = c as u32;
    HAN_RANGES
        .binary_search_by(|&(lo, hi)| {
            if hi < cp {
                std::cmp::Ordering::Less
            } else if lo > cp {
                std::cmp::Ordering::Greater
            } else {
                std::cmp::Ordering::Equal
            }
        })
        .is_ok()
}

/// Number of code points in `text` whose script is Han. Punctuation,
/// digits, Latin letters, whitespace and emoji are not counted.
pub fn count_han_chars(text: &str) -> usize {
    text.chars().filter(|&c| is_han(c)).count()
}

pub(crate) fn is_latin_letter(c: char) -> bool {
    c.is_ascii_alphabetic()
        || matches!(c as u32,
            0x00C0..=0x00D6 | 0x00D8..=0x00F6 | 0x00F8..=0x024F
            | 0x1E00..=0x1EFF
            | 0xFF21..=0xFF3A | 0xFF41..=0xFF5A)
}

pub(crate) fn is_emoji(c: char) -> bool {
    matches!(c as u32,
        0x1F000..=0x1FAFF
        | 0x2600..=0x27BF
        | 0x2B05..=0x2B07 | 0x2B1B..=0x2B1C | 0x2B50 | 0x2B55
        | 0x2300..=0x23FF
        | 0x3030 | 0x303D | 0x3297 | 0x3299
        | 0xFE0F | 0x200D
        | 0xE0020..=0xE007F)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_is_sorted_and_disjoint() {
        for w in HAN_RANGES.windows(2) {
            assert!(w[0].0 <= w[0].1);
            assert!(w[0].1 < w[1].0, "{:x?} overlaps {:x?}", w[0], w[1]);
        }
    }

    #[test]
    fn counts() {
        assert_eq!(count_han_chars(""), 0);
        assert_eq!(count_han_chars("苹果"), 2);
        assert_eq!(count_han_chars("小明吃apple。"), 3);
        assert_eq!(count_han_chars("，。！？：“”（）《》"), 0);
        assert_eq!(count_han_chars("々〇"), 2);
        assert_eq!(count_han_chars("123 abc 😀"), 0);
        assert_eq!(count_han_chars("𠀀𰀀"), 2);
    }

    #[test]
    fn latin_and_emoji() {
        assert!(is_latin_letter('a'));
        assert!(is_latin_letter('Ｚ'));
        assert!(is_latin_letter('é'));
        assert!(!is_latin_letter('汉'));
        assert!(!is_latin_letter('1'));
        assert!(is_emoji('😀'));
        assert!(is_emoji('❤'));
        assert!(!is_emoji('。'));
        assert!(!is_emoji('汉'));
    }
}
