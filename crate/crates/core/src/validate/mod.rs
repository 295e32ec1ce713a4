//! Deterministic content rules for generated episodes, feedback and
//! frameworks. Every function here is pure and reports all violations it
//! finds rather than stopping at the first.

mod episode;
mod feedback;
mod framework;
mod han;
mod report;

pub use episode::{
    chain_ending, validate_ending_continuity, validate_episode, validate_interaction_budget,
    validate_page_count, validate_page_graph, validate_page_lengths, validate_prompt_packages,
    BRANCH_MERGE_MAX_HOPS,
};
pub use feedback::{
    first_sentence, opening_prefix, validate_feedback_text, FEEDBACK_MAX_HAN,
    FIRST_SENTENCE_TERMINALS, OPENING_PREFIX_CHARS,
};
pub use framework::{find_placeholder, validate_framework, MIN_CORE_LOCATIONS};
pub use han::{count_han_chars, is_han};
pub use report::{ValidationReport, Violation, ViolationCode};
