//! Single-fault mutants of the corpus, one class per violation code.
//!
//! Each mutant is built so that exactly one rule breaks; the suite checks
//! that the validators report that code and nothing else.

use storyecho_core::domain::*;
use storyecho_core::validate::*;

use crate::corpus::{self, corpus_constraints, interaction, valid_episodes, valid_feedback, valid_frameworks, FeedbackCase};
use crate::text::han_text;

#[derive(Debug, Clone)]
pub enum Subject {
    Episode(Episode),
    Feedback(FeedbackCase),
    Framework(StoryFramework),
}

#[derive(Debug, Clone)]
pub struct Mutant {
    pub expected: ViolationCode,
    pub label: String,
    pub subject: Subject,
}

impl Mutant {
    /// Distinct codes the validators report for this mutant.
    pub fn codes(&self, constraints: &BasicConstraints) -> Vec<ViolationCode> {
        match &self.subject {
            Subject::Episode(ep) => validate_episode(ep, constraints).codes(),
            Subject::Feedback(f) => validate_feedback_text(&f.text, &f.nickname, &f.food, &f.recent).codes(),
            Subject::Framework(f) => validate_framework(f).codes(),
        }
    }
}

// ------------------------------------------------------------ helpers

fn choice_index(ep: &Episode) -> Option<usize> {
    ep.pages.iter().position(|p| p.interaction_type() == InteractionType::Choice)
}

fn is_branch_target(ep: &Episode, i: usize) -> bool {
    let id = &ep.pages[i].page_id;
    ep.pages.iter().any(|p| p.branch_choices.iter().any(|b| &b.next_page_id == id))
}

fn plain_pages(ep: &Episode) -> Vec<usize> {
    (0..ep.pages.len())
        .filter(|&i| ep.pages[i].interaction.is_none() && ep.pages[i].branch_choices.is_empty())
        .collect()
}

fn relink_packages(ep: &mut Episode) {
    ep.page_image_prompt_packages = ep
        .pages
        .iter()
        .map(|p| PagePromptPackage {
            page_no: p.page_no,
            page_id: p.page_id.clone(),
            image_prompt_suffix_en: format!("page {}", p.page_no),
        })
        .collect();
}

fn set_all_lengths(ep: &mut Episode, han: usize) {
    for (i, p) in ep.pages.iter_mut().enumerate() {
        p.page_text_cn = han_text(i as u64 * 5 + 3, han);
    }
}

fn episodes_where(pred: impl Fn(&Episode) -> bool) -> Vec<Episode> {
    valid_episodes().into_iter().filter(|e| pred(e)).collect()
}

fn main_eps() -> Vec<Episode> {
    episodes_where(|e| e.kind == EpisodeKind::Main)
}

fn choice_eps() -> Vec<Episode> {
    episodes_where(|e| e.kind == EpisodeKind::Main && choice_index(e).is_some())
}

struct Collector(Vec<Mutant>);

impl Collector {
    fn ep(&mut self, expected: ViolationCode, label: impl Into<String>, ep: Episode) {
        let label = format!("{} ({})", label.into(), ep.episode_id);
        self.0.push(Mutant { expected, label, subject: Subject::Episode(ep) });
    }

    fn fb(&mut self, expected: ViolationCode, label: &str, f: FeedbackCase) {
        self.0.push(Mutant { expected, label: label.into(), subject: Subject::Feedback(f) });
    }

    fn fw(&mut self, expected: ViolationCode, label: &str, f: StoryFramework) {
        self.0.push(Mutant { expected, label: format!("{label} ({})", f.framework_id), subject: Subject::Framework(f) });
    }
}

// ------------------------------------------------------------ episodes

fn episode_mutants(out: &mut Collector) {
    use ViolationCode as V;

    // Page count: drop the last page or add a thirteenth, keeping the total in band.
    for mut ep in main_eps().into_iter().filter(|e| !is_branch_target(e, e.pages.len() - 1)).take(2) {
        ep.pages.pop();
        ep.pages.last_mut().unwrap().next_page_id = None;
        set_all_lengths(&mut ep, 76);
        relink_packages(&mut ep);
        out.ep(V::PageCountMismatch, "eleven pages", ep);
    }
    for mut ep in main_eps().into_iter().skip(3).take(2) {
        let n = ep.pages.len() as u32;
        let id = PageId::new(format!("extra_{}", n + 1));
        ep.pages.last_mut().unwrap().next_page_id = Some(id.clone());
        ep.pages.push(Page {
            page_no: n + 1,
            page_id: id,
            page_text_cn: String::new(),
            next_page_id: None,
            interaction: None,
            branch_choices: vec![],
        });
        set_all_lengths(&mut ep, 64);
        relink_packages(&mut ep);
        out.ep(V::PageCountMismatch, "thirteen pages", ep);
    }

    for (k, (mut ep, han)) in main_eps().into_iter().step_by(3).zip([50usize, 55, 59, 45]).enumerate() {
        let i = (k * 4 + 1) % ep.pages.len();
        ep.pages[i].page_text_cn = han_text(9, han);
        out.ep(V::PageTooShort, format!("page {} has {han} Han characters", i + 1), ep);
    }

    for (k, (mut ep, han)) in main_eps().into_iter().skip(1).step_by(3).zip([81usize, 88, 85]).enumerate() {
        let i = (k * 5 + 2) % ep.pages.len();
        ep.pages[i].page_text_cn = han_text(11, han);
        out.ep(V::PageTooLong, format!("page {} has {han} Han characters", i + 1), ep);
    }

    for (mut ep, han) in main_eps().into_iter().step_by(4).zip([62usize, 78, 61]) {
        set_all_lengths(&mut ep, han);
        out.ep(V::TotalLengthOutOfBand, format!("every page has {han} Han characters"), ep);
    }

    // Interaction budgets.
    for mut ep in main_eps().into_iter().step_by(2).take(4) {
        let micro = |e: &Episode| e.pages.iter().filter(|p| p.interaction_type().is_micro()).count();
        let free = plain_pages(&ep);
        let mut slots = free.into_iter();
        while micro(&ep) < 5 {
            let i = slots.next().expect("enough plain pages");
            ep.pages[i].interaction = Some(interaction(InteractionType::Tap, &format!("extra_tap_{i}")));
        }
        out.ep(V::MicroInteractionBudgetExceeded, "five tap/drag/mimic pages", ep);
    }

    let add_choice = |ep: &mut Episode, key: &str| -> bool {
        let n = ep.pages.len();
        let ids: Vec<PageId> = ep.pages.iter().map(|p| p.page_id.clone()).collect();
        for i in plain_pages(ep) {
            if i + 2 < n
                && ep.pages[i].next_page_id.as_ref() == Some(&ids[i + 1])
                && ep.pages[i + 1].next_page_id.as_ref() == Some(&ids[i + 2])
            {
                let page = &mut ep.pages[i];
                page.interaction = Some(interaction(InteractionType::Choice, key));
                page.branch_choices = vec![
                    BranchChoice { label_cn: "向左".into(), next_page_id: ids[i + 1].clone() },
                    BranchChoice { label_cn: "向右".into(), next_page_id: ids[i + 2].clone() },
                ];
                return true;
            }
        }
        false
    };
    for mut ep in choice_eps().into_iter().take(3) {
        assert!(add_choice(&mut ep, "pick_again"));
        out.ep(V::ChoiceBudgetExceeded, "two choice pages", ep);
    }
    for mut ep in main_eps().into_iter().filter(|e| choice_index(e).is_none()).take(1) {
        assert!(add_choice(&mut ep, "pick_one"));
        assert!(add_choice(&mut ep, "pick_two"));
        out.ep(V::ChoiceBudgetExceeded, "two added choice pages", ep);
    }
    for mut ep in episodes_where(|e| e.kind == EpisodeKind::EndingExtension).into_iter().take(1) {
        assert!(add_choice(&mut ep, "pick_end"));
        out.ep(V::ChoiceBudgetExceeded, "a choice in an ending", ep);
    }

    let voices = |e: &Episode| e.pages.iter().filter(|p| p.interaction_type() == InteractionType::RecordVoice).count();
    for (_, mut ep) in valid_episodes().into_iter().enumerate().filter(|(i, _)| i % 3 == 0 || *i == 11) {
        let limit = corpus_constraints().budget_for(ep.kind).record_voice_max as usize;
        let mut slots = plain_pages(&ep).into_iter();
        while voices(&ep) <= limit {
            let i = slots.next().expect("a plain page");
            ep.pages[i].interaction = Some(interaction(InteractionType::RecordVoice, &format!("say_more_{i}")));
        }
        out.ep(V::RecordVoiceBudgetExceeded, "one voice recording too many", ep);
    }

    // Event keys.
    for ep in valid_episodes() {
        let keyed: Vec<usize> = (0..ep.pages.len()).filter(|&i| ep.pages[i].event_key().is_some()).collect();
        if keyed.len() < 2 {
            continue;
        }
        let mut ep = ep;
        let first = ep.pages[keyed[0]].event_key().unwrap().to_string();
        ep.pages[keyed[1]].interaction.as_mut().unwrap().event_key = Some(first);
        out.ep(V::DuplicateEventKey, "two pages share an event_key", ep);
    }

    let malformed: [(&str, fn(&mut Interaction)); 4] = [
        ("camel case key", |i| i.event_key = Some("TapTheCarrot".into())),
        ("hyphenated key", |i| i.event_key = Some("tap-the-pot".into())),
        ("missing key", |i| i.event_key = None),
        ("leading digit", |i| i.event_key = Some("2nd_tap".into())),
    ];
    for ((label, edit), mut ep) in malformed.into_iter().zip(episodes_where(|e| e.pages.iter().any(|p| p.event_key().is_some())))
    {
        let i = ep.pages.iter().position(|p| p.event_key().is_some()).unwrap();
        edit(ep.pages[i].interaction.as_mut().unwrap());
        out.ep(V::MalformedEventKey, label, ep);
    }
    for mut ep in main_eps().into_iter().skip(6).take(1) {
        let i = plain_pages(&ep)[0];
        let mut it = interaction(InteractionType::None, "look_around");
        it.instruction = "看看四周".into();
        ep.pages[i].interaction = Some(it);
        out.ep(V::MalformedEventKey, "key on a page without interaction", ep);
    }

    // Page graph. The corpus choice at page X branches to X+1 and X+2, and
    // X+1 continues to X+2, so both targets stay reachable either way.
    for (k, mut ep) in choice_eps().into_iter().enumerate() {
        let x = choice_index(&ep).unwrap();
        ep.pages[x].branch_choices[k % 2].next_page_id = PageId::new("missing_page");
        out.ep(V::DanglingPageReference, format!("branch {} points nowhere", k % 2 + 1), ep);
    }

    for mut ep in choice_eps().into_iter().take(4) {
        let x = choice_index(&ep).unwrap();
        ep.pages[x].next_page_id = None;
        out.ep(V::FinalPageNotTerminal, "choice page with a null next_page_id", ep);
    }

    for (k, mut ep) in main_eps().into_iter().enumerate() {
        let n = ep.pages.len();
        let Some(x) = (0..n.saturating_sub(2)).map(|j| (j + k) % (n - 2)).find(|&x| {
            let nxt = &ep.pages[x + 1];
            ep.pages[x].branch_choices.is_empty()
                && nxt.branch_choices.is_empty()
                && nxt.interaction_type() != InteractionType::Choice
                && !is_branch_target(&ep, x + 1)
        }) else {
            continue;
        };
        ep.pages[x].next_page_id = Some(ep.pages[x + 2].page_id.clone());
        out.ep(V::UnreachablePage, format!("page {} skips page {}", x + 1, x + 2), ep);
        if k >= 4 {
            break;
        }
    }

    for (k, mut ep) in choice_eps().into_iter().enumerate() {
        let x = choice_index(&ep).unwrap();
        let back = if k % 2 == 0 || x == 0 { x } else { x - 1 };
        ep.pages[x].branch_choices[1].next_page_id = ep.pages[back].page_id.clone();
        out.ep(V::CycleDetected, format!("branch leads back to page {}", back + 1), ep);
    }

    for mut ep in choice_eps() {
        let x = choice_index(&ep).unwrap();
        if x + 4 >= ep.pages.len() {
            continue;
        }
        ep.pages[x].branch_choices[1].next_page_id = ep.pages[x + 4].page_id.clone();
        out.ep(V::BranchMergeTooFar, "branches meet only after three pages", ep);
    }

    for (k, mut ep) in choice_eps().into_iter().take(3).enumerate() {
        let x = choice_index(&ep).unwrap();
        if k == 0 {
            ep.pages[x].branch_choices.pop();
            out.ep(V::BranchCountViolation, "choice with a single branch", ep);
        } else {
            let extra = ep.pages[x + 3].page_id.clone();
            ep.pages[x].branch_choices.push(BranchChoice { label_cn: "飞过去".into(), next_page_id: extra });
            out.ep(V::BranchCountViolation, "choice with three branches", ep);
        }
    }
    for mut ep in main_eps().into_iter().filter(|e| choice_index(e).is_none()).take(2) {
        let i = ep.pages.iter().position(|p| p.interaction_type() == InteractionType::Tap).unwrap_or(0);
        let next = ep.pages[i].next_page_id.clone().unwrap();
        ep.pages[i].branch_choices = vec![BranchChoice { label_cn: "继续".into(), next_page_id: next }];
        out.ep(V::BranchCountViolation, "branches on a non-choice page", ep);
    }

    // Prompt packages.
    for (k, mut ep) in valid_episodes().into_iter().step_by(3).enumerate() {
        let i = (k * 3) % ep.page_image_prompt_packages.len();
        ep.page_image_prompt_packages.remove(i);
        out.ep(V::PromptPackageMissing, format!("no package for page {}", i + 1), ep);
    }
    for (k, mut ep) in valid_episodes().into_iter().skip(1).step_by(3).enumerate() {
        let pkgs = &mut ep.page_image_prompt_packages;
        let label = match k % 3 {
            0 => {
                pkgs.push(PagePromptPackage {
                    page_no: 99,
                    page_id: "page_99".into(),
                    image_prompt_suffix_en: "nothing".into(),
                });
                "package for a page that does not exist"
            }
            1 => {
                let dup = pkgs[2].clone();
                pkgs.push(dup);
                "two packages for one page"
            }
            _ => {
                let mut wrong = pkgs[1].clone();
                wrong.page_no += 5;
                pkgs.push(wrong);
                "package with the wrong page_no"
            }
        };
        out.ep(V::PromptPackageOrphan, label, ep);
    }
}

// ------------------------------------------------------------ feedback

fn feedback_mutants(out: &mut Collector) {
    use ViolationCode as V;
    let cases = valid_feedback();

    for (k, f) in cases.iter().take(3).enumerate() {
        let filler = "慢慢地".repeat(8 + k * 3);
        out.fb(V::LengthViolation, "more than fifty Han characters", f.with_text(format!("{}{}{filler}。{}", f.opening, f.body, f.closing)));
    }

    for (k, f) in cases.iter().enumerate().take(3) {
        let text = match k {
            0 => format!("{}{}{}", f.opening, f.body.replace(&f.nickname, "宝贝"), f.closing),
            1 => format!("{}{}{}真棒。{}", f.opening, f.body, f.nickname, f.closing),
            _ => format!("{}{}{}{}加油。{}", f.opening, f.body, f.nickname, f.nickname, f.closing),
        };
        out.fb(V::NicknameCountViolation, "nickname not exactly once", f.with_text(text));
    }

    for (k, f) in cases.iter().enumerate().skip(2).take(3) {
        let stand_in = ["它", "新朋友", "绿绿的菜"][k % 3];
        let text = format!("{}{}{}", f.opening, f.body.replace(&f.food, stand_in), f.closing);
        out.fb(V::FoodMentionMissing, "food never named", f.with_text(text));
    }

    for f in cases.iter().take(3) {
        let text = format!("{}{}{}", f.body, f.opening, f.closing);
        out.fb(V::OpeningContainsIdentity, "first sentence names the child", f.with_text(text));
    }

    for (k, f) in cases.iter().enumerate().skip(1).take(3) {
        let mut m = f.clone();
        m.recent.push(format!("{}另一件事情。", f.opening));
        if k == 2 {
            m.recent.reverse();
        }
        out.fb(V::RecentPhrasePrefixCollision, "opens like a recent message", m);
    }

    for (k, f) in cases.iter().enumerate().take(4) {
        let extra = ["OK", "😀", "Ｈｉ", "❤"][k];
        let text = format!("{}{}{extra}{}", f.opening, f.body, f.closing);
        out.fb(V::ForbiddenScriptDetected, "latin letters or emoji", f.with_text(text));
    }
}

// ------------------------------------------------------------ frameworks

fn framework_mutants(out: &mut Collector) {
    use ViolationCode as V;
    let fws = valid_frameworks();

    for (k, mut f) in fws.iter().cloned().enumerate().take(3) {
        let locs = &mut f.world_setting.core_locations;
        match k {
            0 => locs.truncate(3),
            1 => {
                locs.truncate(3);
                let again = locs[0].clone();
                locs.push(format!(" {again} "));
            }
            _ => {
                locs.truncate(3);
                locs.push("   ".into());
            }
        }
        out.fw(V::TooFewLocations, "fewer than four distinct locations", f);
    }

    for (k, mut f) in fws.iter().cloned().enumerate() {
        match k {
            0 => f.child_role = "{nickname}是小队长".into(),
            1 => f.world_rules.push("<规则待定>".into()),
            2 => f.world_setting.concept.push_str("{theme}"),
            _ => f.helper_roles[0].name = "<helper>".into(),
        }
        out.fw(V::PlaceholderDetected, "template placeholder left in", f);
    }

    for (k, mut f) in fws.iter().cloned().enumerate().take(3) {
        f.recurring_elements.recurring_phrase = ["", "   ", "\u{3000}"][k].into();
        out.fw(V::EmptyRecurringPhrase, "blank recurring phrase", f);
    }
}

/// Every mutant, grouped by expected code in catalog order.
pub fn all_mutants() -> Vec<Mutant> {
    let mut out = Collector(Vec::new());
    episode_mutants(&mut out);
    feedback_mutants(&mut out);
    framework_mutants(&mut out);
    let mut v = out.0;
    v.sort_by_key(|m| m.expected);
    v
}

/// The constraints the corpus and its mutants are checked under.
pub fn suite_constraints() -> BasicConstraints {
    corpus::corpus_constraints()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn every_mutant_reports_exactly_its_code() {
        let c = suite_constraints();
        let mut per_code: BTreeMap<ViolationCode, usize> = BTreeMap::new();
        let mut wrong = Vec::new();
        for m in all_mutants() {
            *per_code.entry(m.expected).or_default() += 1;
            let codes = m.codes(&c);
            if codes != vec![m.expected] {
                wrong.push(format!("{:?} / {}: got {:?}", m.expected, m.label, codes));
            }
        }
        assert!(wrong.is_empty(), "{}", wrong.join("\n"));
        for code in ViolationCode::VALIDATOR {
            assert!(per_code.get(&code).copied().unwrap_or(0) >= 3, "{code:?}: {:?}", per_code.get(&code));
        }
    }
}
