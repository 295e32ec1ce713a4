//! Reference Han classification and a string fuzzer aimed at its edges.

use std::sync::OnceLock;

use rand::{Rng, RngExt};
use unicode_script::{Script, UnicodeScript};

pub fn reference_is_han(c: char) -> bool {
    c.script() == Script::Han
}

pub fn reference_count(text: &str) -> usize {
    text.chars().filter(|&c| reference_is_han(c)).count()
}

/// Code points where the reference classification changes, together with
/// their neighbours.
pub fn boundaries() -> &'static [char] {
    static CELL: OnceLock<Vec<char>> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut out = Vec::new();
        let mut prev = false;
        for cp in 0..=0x10FFFFu32 {
            let Some(c) = char::from_u32(cp) else { continue };
            let h = reference_is_han(c);
            if h != prev {
                for d in [cp.wrapping_sub(1), cp, cp + 1] {
                    out.extend(char::from_u32(d));
                }
            }
            prev = h;
        }
        out
    })
}

fn in_range<R: Rng>(rng: &mut R, lo: u32, hi: u32) -> char {
    loop {
        if let Some(c) = char::from_u32(rng.random_range(lo..=hi)) {
            return c;
        }
    }
}

pub fn random_char<R: Rng>(rng: &mut R) -> char {
    match rng.random_range(0..12) {
        0 => in_range(rng, 0x20, 0x7E),
        1 => in_range(rng, 0x4E00, 0x9FFF),
        2 => in_range(rng, 0x3000, 0x303F),
        3 => in_range(rng, 0xFF00, 0xFFEF),
        4 => in_range(rng, 0x1F300, 0x1FAFF),
        5 => in_range(rng, 0x3040, 0x30FF),
        6 => in_range(rng, 0xAC00, 0xD7A3),
        7 => in_range(rng, 0x2E80, 0x2FDF),
        8 => in_range(rng, 0x20000, 0x3347F),
        9 => in_range(rng, 0xF900, 0xFAFF),
        10 => *boundaries().get(rng.random_range(0..boundaries().len())).expect("non-empty"),
        _ => in_range(rng, 0, 0x10FFFF),
    }
}

pub fn random_string<R: Rng>(rng: &mut R) -> String {
    let len = rng.random_range(0..=64);
    (0..len).map(|_| random_char(rng)).collect()
}
