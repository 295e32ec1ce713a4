//! Hand-built valid content: episodes, feedback messages and frameworks.

use storyecho_core::domain::*;

use crate::text::han_text;

/// Default bands with a tighter whole-episode total, so that the total
/// check can be exercised independently of the per-page check.
pub fn corpus_constraints() -> BasicConstraints {
    BasicConstraints { han_chars_total_min: 760, han_chars_total_max: 920, ..BasicConstraints::default() }
}

/// How one corpus episode is laid out. Page numbers are 1-based.
#[derive(Debug, Clone)]
pub struct Layout {
    pub food: &'static str,
    pub kind: EpisodeKind,
    pub variant: Option<EndingVariant>,
    /// Page id pattern; `{}` is replaced by the page number.
    pub id_pattern: &'static str,
    pub micro: &'static [(u32, InteractionType)],
    /// A choice page that branches to the next two pages.
    pub choice: Option<u32>,
    pub voice: Option<u32>,
}

pub const LAYOUTS: &[Layout] = &[
    Layout {
        food: "西兰花",
        kind: EpisodeKind::Main,
        variant: None,
        id_pattern: "page_{}",
        micro: &[(2, InteractionType::Tap)],
        choice: None,
        voice: None,
    },
    Layout {
        food: "胡萝卜",
        kind: EpisodeKind::Main,
        variant: None,
        id_pattern: "p{}",
        micro: &[(2, InteractionType::Tap), (4, InteractionType::Drag), (7, InteractionType::Mimic)],
        choice: Some(5),
        voice: Some(11),
    },
    Layout {
        food: "南瓜",
        kind: EpisodeKind::Main,
        variant: None,
        id_pattern: "scene_{}",
        micro: &[(8, InteractionType::Tap)],
        choice: Some(3),
        voice: None,
    },
    Layout {
        food: "茄子",
        kind: EpisodeKind::Main,
        variant: None,
        id_pattern: "eggplant_{}",
        micro: &[(2, InteractionType::Tap), (4, InteractionType::Tap)],
        choice: Some(9),
        voice: Some(6),
    },
    Layout {
        food: "青椒",
        kind: EpisodeKind::Main,
        variant: None,
        id_pattern: "page_{}",
        micro: &[
            (1, InteractionType::Tap),
            (3, InteractionType::Drag),
            (6, InteractionType::Mimic),
            (10, InteractionType::Tap),
        ],
        choice: None,
        voice: None,
    },
    Layout {
        food: "番茄",
        kind: EpisodeKind::Main,
        variant: None,
        id_pattern: "t{}",
        micro: &[],
        choice: Some(1),
        voice: Some(12),
    },
    Layout {
        food: "菠菜",
        kind: EpisodeKind::Main,
        variant: None,
        id_pattern: "leaf_{}",
        micro: &[],
        choice: None,
        voice: None,
    },
    Layout {
        food: "蘑菇",
        kind: EpisodeKind::Main,
        variant: None,
        id_pattern: "m_{}",
        micro: &[(2, InteractionType::Mimic), (11, InteractionType::Tap)],
        choice: Some(6),
        voice: None,
    },
    Layout {
        food: "豆腐",
        kind: EpisodeKind::Main,
        variant: None,
        id_pattern: "tofu_{}",
        micro: &[(8, InteractionType::Drag)],
        choice: None,
        voice: Some(3),
    },
    Layout {
        food: "芹菜",
        kind: EpisodeKind::Main,
        variant: None,
        id_pattern: "c{}",
        micro: &[
            (3, InteractionType::Tap),
            (5, InteractionType::Tap),
            (10, InteractionType::Drag),
            (12, InteractionType::Mimic),
        ],
        choice: Some(7),
        voice: None,
    },
    Layout {
        food: "西兰花",
        kind: EpisodeKind::EndingExtension,
        variant: Some(EndingVariant::Positive),
        id_pattern: "end_{}",
        micro: &[(2, InteractionType::Tap)],
        choice: None,
        voice: None,
    },
    Layout {
        food: "胡萝卜",
        kind: EpisodeKind::EndingExtension,
        variant: Some(EndingVariant::Gentle),
        id_pattern: "epilogue_{}",
        micro: &[],
        choice: None,
        voice: None,
    },
];

pub fn page_id(layout: &Layout, no: u32) -> PageId {
    PageId::new(layout.id_pattern.replace("{}", &format!("{no:02}")))
}

fn key_prefix(kind: InteractionType) -> &'static str {
    match kind {
        InteractionType::Tap => "tap",
        InteractionType::Drag => "drag",
        InteractionType::Mimic => "copy",
        InteractionType::Choice => "pick",
        InteractionType::RecordVoice => "say",
        InteractionType::None => "none",
    }
}

pub fn interaction(kind: InteractionType, key: &str) -> Interaction {
    Interaction {
        kind,
        instruction: match kind {
            InteractionType::Tap => "轻轻点一点发光的地方".into(),
            InteractionType::Drag => "把它拖到篮子里".into(),
            InteractionType::Mimic => "学一学小兔子的样子".into(),
            InteractionType::Choice => "选一条路走下去".into(),
            InteractionType::RecordVoice => "对着小话筒说一句话".into(),
            InteractionType::None => "看一看".into(),
        },
        event_key: Some(key.into()),
        ext: InteractionExt { encouragement: "做得真好".into() },
    }
}

/// Page lengths stay between 66 and 74 Han characters.
pub fn page_len(episode_no: usize, page_no: u32) -> usize {
    66 + (page_no as usize * 7 + episode_no * 3) % 9
}

/// Builds the episode described by `layout`.
pub fn build(episode_no: usize, layout: &Layout, constraints: &BasicConstraints) -> Episode {
    let n = constraints.page_count_for(layout.kind);
    let mut pages: Vec<Page> = (1..=n)
        .map(|no| Page {
            page_no: no,
            page_id: page_id(layout, no),
            page_text_cn: han_text(episode_no as u64 * 31 + no as u64, page_len(episode_no, no)),
            next_page_id: (no < n).then(|| page_id(layout, no + 1)),
            interaction: None,
            branch_choices: vec![],
        })
        .collect();
    for &(no, kind) in layout.micro {
        pages[no as usize - 1].interaction = Some(interaction(kind, &format!("{}_{no}", key_prefix(kind))));
    }
    if let Some(no) = layout.voice {
        pages[no as usize - 1].interaction = Some(interaction(InteractionType::RecordVoice, "say_hello"));
    }
    if let Some(no) = layout.choice {
        let page = &mut pages[no as usize - 1];
        page.interaction = Some(interaction(InteractionType::Choice, "pick_path"));
        page.branch_choices = vec![
            BranchChoice { label_cn: "走小桥".into(), next_page_id: page_id(layout, no + 1) },
            BranchChoice { label_cn: "走山洞".into(), next_page_id: page_id(layout, no + 2) },
        ];
    }
    let packages = pages
        .iter()
        .map(|p| PagePromptPackage {
            page_no: p.page_no,
            page_id: p.page_id.clone(),
            image_prompt_suffix_en: format!("page {}, a cosy picture-book scene", p.page_no),
        })
        .collect();
    Episode {
        episode_id: EpisodeId::new(format!("corpus_{episode_no:02}")),
        framework_id: "fw_corpus".into(),
        target_food: layout.food.into(),
        kind: layout.kind,
        ending_variant: layout.variant,
        pages,
        visual_canon: VisualCanon {
            global_visual_prompt_prefix_en: "soft watercolour picture book".into(),
            character_lock_prompt_en: "a small child in a yellow raincoat".into(),
            world_lock_prompt_en: "a quiet village by a river".into(),
            negative_prompt_en: "text, watermark".into(),
        },
        page_image_prompt_packages: packages,
    }
}

/// Every corpus episode, in layout order.
pub fn valid_episodes() -> Vec<Episode> {
    let c = corpus_constraints();
    LAYOUTS.iter().enumerate().map(|(i, l)| build(i, l, &c)).collect()
}

/// A feedback message together with what it is checked against.
#[derive(Debug, Clone)]
pub struct FeedbackCase {
    pub text: String,
    pub nickname: String,
    pub food: String,
    pub recent: Vec<String>,
    pub opening: String,
    pub body: String,
    pub closing: String,
}

impl FeedbackCase {
    pub fn new(opening: &str, body: &str, closing: &str, nickname: &str, food: &str, recent: &[&str]) -> Self {
        let body = body.replace("{N}", nickname).replace("{F}", food);
        FeedbackCase {
            text: format!("{opening}{body}{closing}"),
            nickname: nickname.into(),
            food: food.into(),
            recent: recent.iter().map(|s| s.to_string()).collect(),
            opening: opening.into(),
            body,
            closing: closing.into(),
        }
    }

    pub fn with_text(&self, text: String) -> Self {
        FeedbackCase { text, ..self.clone() }
    }
}

pub fn valid_feedback() -> Vec<FeedbackCase> {
    vec![
        FeedbackCase::new("今天的小勇气亮晶晶。", "{N}靠近{F}闻了一闻，真认真。", "下次再见它。", "小满", "西兰花", &[]),
        FeedbackCase::new(
            "厨房里飘来好闻的味道。",
            "{N}把{F}放在勺子上瞧了瞧。",
            "慢慢来就很好。",
            "乐乐",
            "胡萝卜",
            &["窗外的太阳笑眯眯。乐乐和南瓜打了招呼。"],
        ),
        FeedbackCase::new("小勺子轻轻敲了敲碗。", "{N}和{F}打了一个招呼。", "明天继续探险吧。", "朵朵", "南瓜", &[]),
        FeedbackCase::new(
            "窗外的太阳笑眯眯。",
            "{N}尝了一小口{F}，好勇敢。",
            "下一站更精彩。",
            "豆豆",
            "茄子",
            &["今天的小勇气亮晶晶。豆豆看了看青椒。", "小勺子轻轻敲了敲碗。豆豆摸了摸豆腐。"],
        ),
        FeedbackCase::new("餐桌上有一个新朋友。", "{N}伸手摸了摸{F}。", "它在等下一次见面。", "安安", "蘑菇", &[]),
        FeedbackCase::new(
            "慢慢来也是一种本领。",
            "{N}今天离{F}更近了一点。",
            "我们下次再试。",
            "小宇",
            "菠菜",
            &["餐桌上有一个新朋友。小宇看了看番茄。"],
        ),
    ]
}

pub fn valid_frameworks() -> Vec<StoryFramework> {
    let base = |id: &str, mode: StoryMode, concept: &str, locations: &[&str], phrase: &str| StoryFramework {
        framework_id: id.into(),
        story_mode: mode,
        world_setting: WorldSetting {
            concept: concept.into(),
            core_locations: locations.iter().map(|s| s.to_string()).collect(),
        },
        world_rules: vec!["每次出发前要检查小背包".into(), "遇到困难可以找朋友帮忙".into()],
        recurring_elements: RecurringElements {
            recurring_object: "会发光的小勺子".into(),
            recurring_phrase: phrase.into(),
            opening_ritual: "拍拍手说出发".into(),
            closing_hook_style: "在日记本上画一个小标记".into(),
            episode_trigger_style: "窗台上出现一封小信".into(),
        },
        helper_roles: vec![HelperRole { name: "松鼠阿栗".into(), role: "带路的好朋友".into() }],
        child_role: "小小探险队长".into(),
    };
    vec![
        base("fw_a", StoryMode::RealisticEveryday, "家和幼儿园之间的一天", &["家", "幼儿园", "公园", "超市"], "一起看看吧！"),
        base(
            "fw_b",
            StoryMode::LightFantasyFamiliar,
            "厨房里住着会说话的锅碗瓢盆",
            &["厨房", "餐桌", "冰箱", "阳台", "菜园"],
            "叮咚，开饭啦！",
        ),
        base(
            "fw_c",
            StoryMode::JourneyDiscoveryFramework,
            "坐着小火车去各地的菜市场",
            &["火车站", "山村", "海边", "城市集市"],
            "下一站，出发！",
        ),
        base(
            "fw_d",
            StoryMode::HybridExpositoryNarrative,
            "跟着一粒种子看蔬菜怎样长大",
            &["种子仓库", "菜地", "温室", "厨房"],
            "原来是这样呀！",
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use storyecho_core::validate::*;

    #[test]
    fn corpus_constraints_are_consistent() {
        corpus_constraints().check_invariants().unwrap();
    }

    #[test]
    fn everything_in_the_corpus_is_valid() {
        let c = corpus_constraints();
        for ep in valid_episodes() {
            let r = validate_episode(&ep, &c);
            assert!(r.ok, "{}: {}", ep.episode_id, r.summary());
            assert!(validate_episode(&ep, &BasicConstraints::default()).ok);
            ep.check_invariants().unwrap();
        }
        for f in valid_feedback() {
            let r = validate_feedback_text(&f.text, &f.nickname, &f.food, &f.recent);
            assert!(r.ok, "{}: {}", f.text, r.summary());
        }
        for f in valid_frameworks() {
            assert!(validate_framework(&f).ok);
        }
    }
}
