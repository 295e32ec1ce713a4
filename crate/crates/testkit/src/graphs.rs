//! Random page graphs and an all-paths reference for the graph rules.

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, RngExt};
use storyecho_core::domain::*;
use storyecho_core::validate::ViolationCode;

use crate::corpus::interaction;

/// The codes the graph rules can produce.
pub const GRAPH_CODES: [ViolationCode; 6] = [
    ViolationCode::DanglingPageReference,
    ViolationCode::FinalPageNotTerminal,
    ViolationCode::UnreachablePage,
    ViolationCode::CycleDetected,
    ViolationCode::BranchMergeTooFar,
    ViolationCode::BranchCountViolation,
];

fn id(i: usize) -> PageId {
    PageId::new(format!("g{i}"))
}

/// A graph of 1 to 16 pages with at most one choice page. Most pages link
/// forward; a minority of links are broken on purpose so that every graph
/// rule fires regularly.
pub fn random_graph<R: Rng>(rng: &mut R) -> Vec<Page> {
    let n = rng.random_range(1..=16usize);
    let target = |rng: &mut R| -> PageId {
        match rng.random_range(0..10) {
            0 => PageId::new("ghost"),
            _ => id(rng.random_range(0..n)),
        }
    };
    let mut pages: Vec<Page> = (0..n)
        .map(|i| {
            let last = i + 1 == n;
            let next = if rng.random_bool(if last { 0.85 } else { 0.82 }) {
                (!last).then(|| id(i + 1))
            } else {
                match rng.random_range(0..3) {
                    0 => None,
                    _ => Some(target(rng)),
                }
            };
            Page {
                page_no: i as u32 + 1,
                page_id: id(i),
                page_text_cn: String::new(),
                next_page_id: next,
                interaction: None,
                branch_choices: vec![],
            }
        })
        .collect();

    if n >= 2 && rng.random_bool(0.65) {
        let c = rng.random_range(0..n);
        let count = match rng.random_range(0..20) {
            0 => 1,
            1 => 3,
            2 => 0,
            _ => 2,
        };
        let branches = (0..count)
            .map(|_| {
                let t = if rng.random_bool(0.7) {
                    id((c + rng.random_range(1..=4)).min(n - 1))
                } else {
                    target(rng)
                };
                BranchChoice { label_cn: "走".into(), next_page_id: t }
            })
            .collect();
        pages[c].interaction = Some(interaction(InteractionType::Choice, "pick"));
        pages[c].branch_choices = branches;
    }
    if rng.random_bool(0.04) {
        let i = rng.random_range(0..n);
        if pages[i].interaction.is_none() {
            let t = target(rng);
            pages[i].branch_choices.push(BranchChoice { label_cn: "走".into(), next_page_id: t });
        }
    }
    pages
}

/// Wraps bare pages in an episode so the episode-level entry point can be used.
pub fn as_episode(pages: Vec<Page>) -> Episode {
    Episode {
        episode_id: "graph".into(),
        framework_id: "fw".into(),
        target_food: "米饭".into(),
        kind: EpisodeKind::Main,
        ending_variant: None,
        pages,
        visual_canon: VisualCanon {
            global_visual_prompt_prefix_en: String::new(),
            character_lock_prompt_en: String::new(),
            world_lock_prompt_en: String::new(),
            negative_prompt_en: String::new(),
        },
        page_image_prompt_packages: vec![],
    }
}

/// Reference classification by explicit path enumeration.
pub fn oracle_codes(pages: &[Page]) -> BTreeSet<ViolationCode> {
    let mut codes = BTreeSet::new();
    if pages.is_empty() {
        return codes;
    }
    let n = pages.len();
    let index: HashMap<&str, usize> = pages.iter().enumerate().map(|(i, p)| (p.page_id.as_str(), i)).collect();

    let refs = |p: &Page| -> Vec<PageId> {
        p.next_page_id.iter().cloned().chain(p.branch_choices.iter().map(|b| b.next_page_id.clone())).collect()
    };
    let succ: Vec<Vec<usize>> = pages
        .iter()
        .map(|p| refs(p).iter().filter_map(|r| index.get(r.as_str()).copied()).collect())
        .collect();

    if pages.iter().any(|p| refs(p).iter().any(|r| !index.contains_key(r.as_str()))) {
        codes.insert(ViolationCode::DanglingPageReference);
    }
    if pages[n - 1].next_page_id.is_some() || pages[..n - 1].iter().any(|p| p.next_page_id.is_none()) {
        codes.insert(ViolationCode::FinalPageNotTerminal);
    }
    for p in pages {
        let is_choice = p.interaction_type() == InteractionType::Choice;
        if (is_choice && p.branch_choices.len() != 2) || (!is_choice && !p.branch_choices.is_empty()) {
            codes.insert(ViolationCode::BranchCountViolation);
        }
    }

    // Walk every simple path from `start`; report the nodes seen and
    // whether some path can step back onto itself.
    fn all_paths(start: usize, succ: &[Vec<usize>], seen: &mut [bool], cyclic: &mut bool) {
        let mut path = vec![start];
        fn extend(path: &mut Vec<usize>, succ: &[Vec<usize>], seen: &mut [bool], cyclic: &mut bool) {
            let last = *path.last().unwrap();
            seen[last] = true;
            for &m in &succ[last] {
                if path.contains(&m) {
                    *cyclic = true;
                } else {
                    path.push(m);
                    extend(path, succ, seen, cyclic);
                    path.pop();
                }
            }
        }
        extend(&mut path, succ, seen, cyclic);
    }

    let mut from_root = vec![false; n];
    let mut cyclic = false;
    all_paths(0, &succ, &mut from_root, &mut cyclic);
    if from_root.iter().any(|r| !r) {
        codes.insert(ViolationCode::UnreachablePage);
    }
    for start in 1..n {
        if cyclic {
            break;
        }
        all_paths(start, &succ, &mut vec![false; n], &mut cyclic);
    }
    if cyclic {
        codes.insert(ViolationCode::CycleDetected);
    }

    // Pages reachable in at most two steps, listed path by path.
    let near = |a: usize| -> BTreeSet<usize> {
        let mut s = BTreeSet::from([a]);
        for &b in &succ[a] {
            s.insert(b);
            for &c in &succ[b] {
                s.insert(c);
            }
        }
        s
    };
    for p in pages {
        if p.interaction_type() != InteractionType::Choice || p.branch_choices.len() != 2 {
            continue;
        }
        let (Some(&a), Some(&b)) = (
            index.get(p.branch_choices[0].next_page_id.as_str()),
            index.get(p.branch_choices[1].next_page_id.as_str()),
        ) else {
            continue;
        };
        if near(a).is_disjoint(&near(b)) {
            codes.insert(ViolationCode::BranchMergeTooFar);
        }
    }
    codes
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn generator_covers_every_code_and_valid_graphs() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut seen = BTreeSet::new();
        let mut valid = 0;
        for _ in 0..1000 {
            let codes = oracle_codes(&random_graph(&mut rng));
            if codes.is_empty() {
                valid += 1;
            }
            seen.extend(codes);
        }
        assert_eq!(seen, GRAPH_CODES.into_iter().collect());
        assert!(valid > 100, "{valid}");
    }
}
