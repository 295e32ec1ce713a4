use std::collections::{HashMap, HashSet, VecDeque};

use crate::domain::{is_snake_case_key, BasicConstraints, Episode, InteractionType, Page, PageId};

use super::han::count_han_chars;
use super::report::{ValidationReport, ViolationCode};

/// Per-page and whole-episode Han-character bands.
pub fn validate_page_lengths(episode: &Episode, constraints: &BasicConstraints) -> ValidationReport {
    let mut report = ValidationReport::new();
    let (min, max) = (constraints.han_chars_per_page_min, constraints.han_chars_per_page_max);
    let mut total = 0usize;
    for page in &episode.pages {
        let n = count_han_chars(&page.page_text_cn);
        total += n;
        if n < min as usize {
            report.push(
                ViolationCode::PageTooShort,
                Some(&page.page_id),
                format!("{n} Han characters, minimum {min}"),
            );
        } else if n > max as usize {
            report.push(
                ViolationCode::PageTooLong,
                Some(&page.page_id),
                format!("{n} Han characters, maximum {max}"),
            );
        }
    }
    let (lo, hi) = constraints.total_band_for(episode.kind);
    if total < lo as usize || total > hi as usize {
        report.push(
            ViolationCode::TotalLengthOutOfBand,
            None,
            format!("{total} Han characters in total, allowed {lo}..={hi}"),
        );
    }
    report
}

/// Interaction caps and event-key hygiene. Choice and voice pages have
/// their own caps and do not consume the tap/drag/mimic budget.
pub fn validate_interaction_budget(
    episode: &Episode,
    constraints: &BasicConstraints,
) -> ValidationReport {
    let mut report = ValidationReport::new();
    let budget = constraints.budget_for(episode.kind);
    let (mut micro, mut choice, mut voice) = (0u32, 0u32, 0u32);
    let mut seen_keys = HashSet::new();

    for page in &episode.pages {
        let Some(interaction) = &page.interaction else {
            continue;
        };
        match interaction.kind {
            InteractionType::Choice => choice += 1,
            InteractionType::RecordVoice => voice += 1,
            t if t.is_micro() => micro += 1,
            _ => {}
        }
        match (&interaction.event_key, interaction.kind) {
            (None, InteractionType::None) => {}
            (Some(key), InteractionType::None) => report.push(
                ViolationCode::MalformedEventKey,
                Some(&page.page_id),
                format!("event_key `{key}` on a page without interaction"),
            ),
            (None, _) => report.push(
                ViolationCode::MalformedEventKey,
                Some(&page.page_id),
                "interactive page has no event_key",
            ),
            (Some(key), _) => {
                if !is_snake_case_key(key) {
                    report.push(
                        ViolationCode::MalformedEventKey,
                        Some(&page.page_id),
                        format!("event_key `{key}` is not snake_case"),
                    );
                } else if !seen_keys.insert(key.as_str()) {
                    report.push(
                        ViolationCode::DuplicateEventKey,
                        Some(&page.page_id),
                        format!("event_key `{key}` is already used"),
                    );
                }
            }
        }
    }

    if micro > budget.micro_max {
        report.push(
            ViolationCode::MicroInteractionBudgetExceeded,
            None,
            format!("{micro} tap/drag/mimic pages, maximum {}", budget.micro_max),
        );
    }
    if choice > budget.choice_max {
        report.push(
            ViolationCode::ChoiceBudgetExceeded,
            None,
            format!("{choice} choice pages, maximum {}", budget.choice_max),
        );
    }
    if voice > budget.record_voice_max {
        report.push(
            ViolationCode::RecordVoiceBudgetExceeded,
            None,
            format!("{voice} record_voice pages, maximum {}", budget.record_voice_max),
        );
    }
    report
}

/// Largest number of edges a branch may take before meeting the other.
pub const BRANCH_MERGE_MAX_HOPS: usize = 2;

/// Structural checks on the page graph.
///
/// A page's successors are its `next_page_id` plus every branch target. The
/// first page in list order is the root and the last page is the final
/// page. The graph is valid when every reference resolves, only the final
/// page has a null `next_page_id`, every page is reachable from the root,
/// there are no cycles, every choice page has exactly two branches and
/// every non-choice page has none, and the two branch targets of a choice
/// reach a common page within [`BRANCH_MERGE_MAX_HOPS`] edges each.
pub fn validate_page_graph(episode: &Episode) -> ValidationReport {
    validate_pages_graph(&episode.pages)
}

pub(crate) fn validate_pages_graph(pages: &[Page]) -> ValidationReport {
    let mut report = ValidationReport::new();
    if pages.is_empty() {
        return report;
    }

    let mut index: HashMap<&PageId, usize> = HashMap::new();
    for (i, page) in pages.iter().enumerate() {
        if index.insert(&page.page_id, i).is_some() {
            report.push(
                ViolationCode::DanglingPageReference,
                Some(&page.page_id),
                "page_id is defined more than once, references to it are ambiguous",
            );
        }
    }

    let mut edges: Vec<Vec<usize>> = vec![Vec::new(); pages.len()];
    for (i, page) in pages.iter().enumerate() {
        let is_choice = page.interaction_type() == InteractionType::Choice;
        if is_choice && page.branch_choices.len() != 2 {
            report.push(
                ViolationCode::BranchCountViolation,
                Some(&page.page_id),
                format!("choice page has {} branch_choices, expected 2", page.branch_choices.len()),
            );
        } else if !is_choice && !page.branch_choices.is_empty() {
            report.push(
                ViolationCode::BranchCountViolation,
                Some(&page.page_id),
                "branch_choices on a page whose interaction is not a choice",
            );
        }
        for target in page.successors() {
            match index.get(target) {
                Some(&j) => {
                    if !edges[i].contains(&j) {
                        edges[i].push(j);
                    }
                }
                None => report.push(
                    ViolationCode::DanglingPageReference,
                    Some(&page.page_id),
                    format!("reference to missing page {target}"),
                ),
            }
        }
    }

    let last = pages.len() - 1;
    if pages[last].next_page_id.is_some() {
        report.push(
            ViolationCode::FinalPageNotTerminal,
            Some(&pages[last].page_id),
            "the final page must have next_page_id = null",
        );
    }
    for page in &pages[..last] {
        if page.next_page_id.is_none() {
            report.push(
                ViolationCode::FinalPageNotTerminal,
                Some(&page.page_id),
                "next_page_id = null before the final page",
            );
        }
    }

    let reached = reachable_from(0, &edges);
    for (i, page) in pages.iter().enumerate() {
        if !reached[i] {
            report.push(
                ViolationCode::UnreachablePage,
                Some(&page.page_id),
                "not reachable from the first page",
            );
        }
    }

    if let Some(at) = find_cycle(&edges) {
        report.push(
            ViolationCode::CycleDetected,
            Some(&pages[at].page_id),
            "the page graph contains a cycle through this page",
        );
    }

    for (i, page) in pages.iter().enumerate() {
        if page.interaction_type() != InteractionType::Choice || page.branch_choices.len() != 2 {
            continue;
        }
        let targets: Vec<_> =
            page.branch_choices.iter().filter_map(|b| index.get(&b.next_page_id).copied()).collect();
        let [a, b] = targets[..] else {
            continue;
        };
        let near_a = within_hops(a, BRANCH_MERGE_MAX_HOPS, &edges);
        let near_b = within_hops(b, BRANCH_MERGE_MAX_HOPS, &edges);
        if near_a.is_disjoint(&near_b) {
            report.push(
                ViolationCode::BranchMergeTooFar,
                Some(&pages[i].page_id),
                format!("branches do not meet within {BRANCH_MERGE_MAX_HOPS} pages"),
            );
        }
    }

    report
}

fn reachable_from(root: usize, edges: &[Vec<usize>]) -> Vec<bool> {
    let mut seen = vec![false; edges.len()];
    let mut queue = VecDeque::from([root]);
    seen[root] = true;
    while let Some(n) = queue.pop_front() {
        for &m in &edges[n] {
            if !seen[m] {
                seen[m] = true;
                queue.push_back(m);
            }
        }
    }
    seen
}

fn within_hops(start: usize, hops: usize, edges: &[Vec<usize>]) -> HashSet<usize> {
    let mut frontier = vec![start];
    let mut seen: HashSet<usize> = frontier.iter().copied().collect();
    for _ in 0..hops {
        let mut next = Vec::new();
        for n in frontier {
            for &m in &edges[n] {
                if seen.insert(m) {
                    next.push(m);
                }
            }
        }
        frontier = next;
    }
    seen
}

/// Returns a node on some cycle, if any. Iterative three-colour DFS.
fn find_cycle(edges: &[Vec<usize>]) -> Option<usize> {
    #[derive(Clone, Copy, PartialEq)]
    enum Colour {
        White,
        Grey,
        Black,
    }
    let mut colour = vec![Colour::White; edges.len()];
    for root in 0..edges.len() {
        if colour[root] != Colour::White {
            continue;
        }
        let mut stack = vec![(root, 0usize)];
        colour[root] = Colour::Grey;
        while let Some((node, next_edge)) = stack.last_mut() {
            if let Some(&m) = edges[*node].get(*next_edge) {
                *next_edge += 1;
                match colour[m] {
                    Colour::Grey => return Some(m),
                    Colour::White => {
                        colour[m] = Colour::Grey;
                        stack.push((m, 0));
                    }
                    Colour::Black => {}
                }
            } else {
                colour[*node] = Colour::Black;
                stack.pop();
            }
        }
    }
    None
}

/// One prompt package per page, keyed by page_id with a matching page_no.
pub fn validate_prompt_packages(episode: &Episode) -> ValidationReport {
    let mut report = ValidationReport::new();
    let pages: HashMap<&PageId, u32> =
        episode.pages.iter().map(|p| (&p.page_id, p.page_no)).collect();
    let mut covered = HashSet::new();
    for pkg in &episode.page_image_prompt_packages {
        match pages.get(&pkg.page_id) {
            None => report.push(
                ViolationCode::PromptPackageOrphan,
                Some(&pkg.page_id),
                "prompt package for a page that does not exist",
            ),
            Some(&no) if no != pkg.page_no => report.push(
                ViolationCode::PromptPackageOrphan,
                Some(&pkg.page_id),
                format!("prompt package page_no {} does not match page_no {no}", pkg.page_no),
            ),
            Some(_) => {
                if !covered.insert(&pkg.page_id) {
                    report.push(
                        ViolationCode::PromptPackageOrphan,
                        Some(&pkg.page_id),
                        "second prompt package for the same page",
                    );
                }
            }
        }
    }
    for page in &episode.pages {
        if !covered.contains(&page.page_id) {
            report.push(
                ViolationCode::PromptPackageMissing,
                Some(&page.page_id),
                "no image prompt package for this page",
            );
        }
    }
    report
}

pub fn validate_page_count(episode: &Episode, constraints: &BasicConstraints) -> ValidationReport {
    let mut report = ValidationReport::new();
    let expected = constraints.page_count_for(episode.kind) as usize;
    if episode.pages.len() != expected {
        report.push(
            ViolationCode::PageCountMismatch,
            None,
            format!("{} pages, expected {expected}", episode.pages.len()),
        );
    }
    report
}

/// Every episode rule at once; violations are aggregated, never short-circuited.
pub fn validate_episode(episode: &Episode, constraints: &BasicConstraints) -> ValidationReport {
    let mut report = validate_page_count(episode, constraints);
    report.merge(validate_page_lengths(episode, constraints));
    report.merge(validate_interaction_budget(episode, constraints));
    report.merge(validate_page_graph(episode));
    report.merge(validate_prompt_packages(episode));
    report
}

/// Checks that an ending can be appended to `main`: reading the book as
/// main pages followed by ending pages, page ids and event keys must stay
/// unique across both.
pub fn validate_ending_continuity(main: &Episode, ending: &Episode) -> ValidationReport {
    let mut report = ValidationReport::new();
    let main_ids: HashSet<&PageId> = main.pages.iter().map(|p| &p.page_id).collect();
    let main_keys: HashSet<&str> = main.pages.iter().filter_map(|p| p.event_key()).collect();
    for page in &ending.pages {
        if main_ids.contains(&page.page_id) {
            report.push(
                ViolationCode::DanglingPageReference,
                Some(&page.page_id),
                "ending page reuses a page_id of the main episode",
            );
        }
        if let Some(k) = page.event_key() {
            if main_keys.contains(k) {
                report.push(
                    ViolationCode::DuplicateEventKey,
                    Some(&page.page_id),
                    format!("event_key `{k}` is already used by the main episode"),
                );
            }
        }
    }
    report
}

/// The full reading order of a book: the main episode with its terminal page
/// linked to the first ending page, followed by the ending pages.
pub fn chain_ending(main: &Episode, ending: &Episode) -> Vec<Page> {
    let first = ending.pages.first().map(|p| p.page_id.clone());
    let mut pages: Vec<Page> = main.pages.clone();
    for page in pages.iter_mut() {
        if page.next_page_id.is_none() {
            page.next_page_id = first.clone();
        }
    }
    let offset = pages.len() as u32;
    pages.extend(ending.pages.iter().cloned().map(|mut p| {
        p.page_no += offset;
        p
    }));
    pages
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::*;

    fn linear(n: usize) -> Episode {
        let pages = (1..=n)
            .map(|i| Page {
                page_no: i as u32,
                page_id: PageId::new(format!("page_{i:02}")),
                page_text_cn: "小".repeat(70),
                next_page_id: (i < n).then(|| PageId::new(format!("page_{:02}", i + 1))),
                interaction: None,
                branch_choices: vec![],
            })
            .collect::<Vec<_>>();
        let packages = pages
            .iter()
            .map(|p| PagePromptPackage {
                page_no: p.page_no,
                page_id: p.page_id.clone(),
                image_prompt_suffix_en: "scene".into(),
            })
            .collect();
        Episode {
            episode_id: "ep".into(),
            framework_id: "fw".into(),
            target_food: "西兰花".into(),
            kind: EpisodeKind::Main,
            ending_variant: None,
            pages,
            visual_canon: VisualCanon {
                global_visual_prompt_prefix_en: "a".into(),
                character_lock_prompt_en: "b".into(),
                world_lock_prompt_en: "c".into(),
                negative_prompt_en: "d".into(),
            },
            page_image_prompt_packages: packages,
        }
    }

    fn interact(page: &mut Page, kind: InteractionType, key: &str) {
        page.interaction = Some(Interaction {
            kind,
            instruction: "点一点".into(),
            event_key: Some(key.into()),
            ext: InteractionExt::default(),
        });
    }

    fn make_choice(ep: &mut Episode, at: usize, a: usize, b: usize) {
        let page = &mut ep.pages[at - 1];
        interact(page, InteractionType::Choice, "pick_path");
        page.branch_choices = [a, b]
            .iter()
            .map(|n| BranchChoice { label_cn: "走".into(), next_page_id: PageId::new(format!("page_{n:02}")) })
            .collect();
    }

    #[test]
    fn linear_chain_is_valid() {
        let ep = linear(12);
        assert!(validate_episode(&ep, &BasicConstraints::default()).ok);
        assert!(validate_page_graph(&ep).ok);
    }

    #[test]
    fn page_band_edges() {
        let mut ep = linear(12);
        ep.pages[3].page_text_cn = "小".repeat(59);
        let r = validate_page_lengths(&ep, &BasicConstraints::default());
        assert_eq!(r.codes(), vec![ViolationCode::PageTooShort]);
        assert_eq!(r.violations[0].page_id.as_ref().unwrap().as_str(), "page_04");

        let mut ep = linear(12);
        for p in &mut ep.pages {
            p.page_text_cn = "小".repeat(90);
        }
        assert!(validate_page_lengths(&ep, &BasicConstraints::with_page_band(80, 100)).ok);
        assert!(!validate_page_lengths(&ep, &BasicConstraints::default()).ok);
    }

    #[test]
    fn choice_and_voice_do_not_consume_micro_budget() {
        let mut ep = linear(12);
        interact(&mut ep.pages[1], InteractionType::Tap, "tap_a");
        interact(&mut ep.pages[2], InteractionType::Tap, "tap_b");
        interact(&mut ep.pages[3], InteractionType::Tap, "tap_c");
        interact(&mut ep.pages[8], InteractionType::RecordVoice, "say_it");
        make_choice(&mut ep, 5, 6, 7);
        assert!(validate_interaction_budget(&ep, &BasicConstraints::default()).ok);
        assert!(validate_episode(&ep, &BasicConstraints::default()).ok);
    }

    #[test]
    fn two_choices_exceed_budget() {
        let mut ep = linear(12);
        make_choice(&mut ep, 5, 6, 7);
        make_choice(&mut ep, 9, 10, 11);
        ep.pages[8].interaction.as_mut().unwrap().event_key = Some("pick_again".into());
        let r = validate_interaction_budget(&ep, &BasicConstraints::default());
        assert_eq!(r.codes(), vec![ViolationCode::ChoiceBudgetExceeded]);
    }

    #[test]
    fn choice_rejoining_is_valid() {
        let mut ep = linear(12);
        make_choice(&mut ep, 5, 6, 7);
        assert!(validate_page_graph(&ep).ok);
    }

    #[test]
    fn final_page_looping_back() {
        let mut ep = linear(12);
        ep.pages[11].next_page_id = Some(PageId::new("page_01"));
        let r = validate_page_graph(&ep);
        assert_eq!(r.codes(), vec![ViolationCode::FinalPageNotTerminal, ViolationCode::CycleDetected]);
    }

    #[test]
    fn branches_too_far_apart() {
        let mut ep = linear(12);
        make_choice(&mut ep, 5, 6, 9);
        let r = validate_page_graph(&ep);
        assert_eq!(r.codes(), vec![ViolationCode::BranchMergeTooFar]);
    }

    #[test]
    fn missing_package_and_page_count() {
        let mut ep = linear(11);
        ep.page_image_prompt_packages.retain(|p| p.page_no != 7);
        let r = validate_episode(&ep, &BasicConstraints::default());
        assert_eq!(r.codes(), vec![ViolationCode::PageCountMismatch, ViolationCode::PromptPackageMissing]);
    }

    #[test]
    fn ending_collisions() {
        let main = linear(12);
        let mut ending = linear(4);
        ending.kind = EpisodeKind::EndingExtension;
        let r = validate_ending_continuity(&main, &ending);
        assert!(r.has(ViolationCode::DanglingPageReference));
        for p in &mut ending.pages {
            p.page_id = PageId::new(format!("end_{}", p.page_no));
        }
        assert!(validate_ending_continuity(&main, &ending).ok);
        let book = chain_ending(&main, &ending);
        assert_eq!(book.len(), 16);
        assert_eq!(book[11].next_page_id.as_ref().unwrap().as_str(), "end_1");
    }
}
