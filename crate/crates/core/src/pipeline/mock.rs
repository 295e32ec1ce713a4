//! Offline provider that fills fixed templates. Output depends only on the
//! mock's seed, the stage and the request payload.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::domain::*;
use crate::validate::{count_han_chars, opening_prefix, validate_feedback_text};

use super::payload::*;
use super::provider::{CompletionRequest, GenerationProvider, MediaBlob, ProviderError, ProviderMode};
use super::Stage;

#[derive(Debug, Clone, Default)]
pub struct MockProvider {
    seed: u64,
}

impl MockProvider {
    pub fn new(seed: u64) -> Self {
        MockProvider { seed }
    }

    fn rng(&self, stage: &str, payload: &[u8]) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(stage.as_bytes());
        h.update([0]);
        h.update(payload);
        let digest: [u8; 32] = h.finalize().into();
        ChaCha8Rng::from_seed(digest)
    }
}

fn decode<T: DeserializeOwned>(req: &CompletionRequest) -> Result<T, ProviderError> {
    serde_json::from_value(req.user_payload.clone()).map_err(|e| {
        ProviderError::Config(format!("mock cannot read the {} payload: {e}", req.stage))
    })
}

impl GenerationProvider for MockProvider {
    fn mode(&self) -> ProviderMode {
        ProviderMode::Mock
    }

    fn complete(&self, req: &CompletionRequest) -> Result<Vec<u8>, ProviderError> {
        // Feedback history and repair context are left out of the seed.
        let mut seed_payload = req.user_payload.clone();
        if let (Stage::Feedback, Some(obj)) = (req.stage, seed_payload.as_object_mut()) {
            obj.remove("recent_phrases");
            obj.remove("repair");
        }
        let payload_bytes = serde_json::to_vec(&seed_payload).expect("json values serialize");
        let mut rng = self.rng(req.stage.as_str(), &payload_bytes);
        let value = match req.stage {
            Stage::Framework => mock_framework(&decode(req)?, &mut rng),
            Stage::Summarize => mock_recap(&decode(req)?),
            Stage::Episode => mock_episode(&decode(req)?, &mut rng),
            Stage::Ending => mock_ending(&decode(req)?, &mut rng),
            Stage::Feedback => mock_feedback(&decode(req)?, &mut rng),
            Stage::PageImage => return Err(ProviderError::Unsupported("completion for page images")),
        };
        Ok(serde_json::to_vec(&value).expect("json values serialize"))
    }

    fn generate_image(
        &self,
        prompt: &str,
        negative_prompt: &str,
        reference: Option<&MediaBlob>,
    ) -> Result<MediaBlob, ProviderError> {
        let mut h = Sha256::new();
        h.update(prompt.as_bytes());
        h.update([0]);
        h.update(negative_prompt.as_bytes());
        if let Some(r) = reference {
            h.update(&r.bytes);
        }
        let d = h.finalize();
        let colour = hex::encode(&d[..3]);
        let tag = hex::encode(&d[3..8]);
        let svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"512\" height=\"512\">\
             <rect width=\"512\" height=\"512\" fill=\"#{colour}\"/>\
             <circle cx=\"256\" cy=\"256\" r=\"120\" fill=\"#ffffff\" opacity=\"0.6\"/>\
             <text x=\"24\" y=\"488\" font-size=\"20\">{tag}</text></svg>"
        );
        Ok(MediaBlob { media_type: "image/svg+xml".into(), bytes: svg.into_bytes() })
    }

    fn synthesize_speech(&self, text: &str) -> Result<MediaBlob, ProviderError> {
        Ok(MediaBlob { media_type: "audio/wav".into(), bytes: silent_wav(text.chars().count() * 80) })
    }

    fn transcribe(&self, audio: &MediaBlob) -> Result<String, ProviderError> {
        let d = Sha256::digest(&audio.bytes);
        let n = u32::from_le_bytes([d[0], d[1], d[2], d[3]]) % 1000;
        Ok(format!("录音片段{n:03}"))
    }
}

/// 8 kHz, 8-bit mono PCM of `samples` silent samples.
fn silent_wav(samples: usize) -> Vec<u8> {
    let data_len = samples as u32;
    let mut out = Vec::with_capacity(44 + samples);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&8000u32.to_le_bytes());
    out.extend_from_slice(&8000u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&8u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    out.resize(44 + samples, 128);
    out
}

// ---------------------------------------------------------------- frameworks

struct ModeTemplate {
    concept: &'static str,
    locations: [&'static str; 5],
    rules: [&'static str; 2],
    object: &'static str,
    phrases: [&'static str; 3],
    ritual: &'static str,
    closing: &'static str,
    trigger: &'static str,
    helpers: [(&'static str, &'static str); 2],
    role: &'static str,
}

fn mode_template(mode: StoryMode) -> ModeTemplate {
    match mode {
        StoryMode::RealisticEveryday => ModeTemplate {
            concept: "家和小区里的日常小发现",
            locations: ["厨房", "餐桌", "小区花园", "菜市场", "阳台"],
            rules: ["没有魔法，物品不会说话", "每件事都有看得见的原因和结果"],
            object: "小小观察本",
            phrases: ["看一看，闻一闻，再试一试！", "一点一点，越来越棒！", "今天也来发现一下！"],
            ritual: "洗干净小手，翻开观察本",
            closing: "在观察本上画一个小勾",
            trigger: "家里出现了一样新东西",
            helpers: [("妈妈", "陪着一起观察的家人"), ("小猫咪咪", "总在旁边看热闹的宠物")],
            role: "是家里的小观察员，负责发现新东西",
        },
        StoryMode::LightFantasyFamiliar => ModeTemplate {
            concept: "熟悉的家里藏着一点点温柔的魔法",
            locations: ["厨房", "卧室", "后院菜园", "幼儿园", "超市"],
            rules: ["魔法只会在安静的时候出现一下", "小动物和玩具可以悄悄帮忙"],
            object: "会发光的小勺子",
            phrases: ["小勺子，亮晶晶！", "轻轻一闻，好奇心出发！", "魔法小口，试试就好！"],
            ritual: "摸一摸小勺子，它就会亮起来",
            closing: "小勺子的光慢慢变暗，等着下一次",
            trigger: "小勺子突然一闪一闪",
            helpers: [("兔子跳跳", "爱讲故事的布偶兔"), ("小熊团团", "胆子很小的玩具熊")],
            role: "是小勺子唯一的主人，也是大家的好朋友",
        },
        StoryMode::HybridExpositoryNarrative => ModeTemplate {
            concept: "跟着故事认识食物从哪里来、对身体有什么用",
            locations: ["菜园", "农场", "厨房", "餐桌", "图书角"],
            rules: ["每一集讲清楚一个关于食物的小知识", "知识都用孩子听得懂的话来说"],
            object: "放大镜",
            phrases: ["放大镜，看仔细！", "原来是这样呀！", "小问题，大发现！"],
            ritual: "拿起放大镜，眨三下眼睛",
            closing: "把今天的新知识贴进知识墙",
            trigger: "餐桌上出现一个小问题",
            helpers: [("博士爷爷", "什么都知道的邻居爷爷"), ("小蜜蜂嗡嗡", "在菜园里工作的小蜜蜂")],
            role: "是爱提问的小小研究员",
        },
        StoryMode::JourneyDiscoveryFramework => ModeTemplate {
            concept: "一站一站去旅行，在每一站认识一种食物",
            locations: ["家门口", "山坡果园", "河边小码头", "热闹的集市", "海边小屋"],
            rules: ["每到一站都要盖一个小印章", "旅行的路线画在地图上"],
            object: "旅行地图册",
            phrases: ["下一站，出发！", "地图打开，路线亮起来！", "印章盖好，继续前进！"],
            ritual: "背上小书包，打开地图册",
            closing: "回到家在地图上盖一个印章",
            trigger: "地图上亮起新的一站",
            helpers: [("小鸽子", "认识路的小向导"), ("乌龟慢慢", "走得慢但很可靠的旅伴")],
            role: "是旅行小队的队长，手里拿着地图",
        },
    }
}

fn mock_framework(p: &FrameworkPayload, rng: &mut ChaCha8Rng) -> serde_json::Value {
    let t = mode_template(p.story_mode);
    let used = |s: &str| p.existing_recurring_phrases.iter().any(|e| e.trim() == s);
    let mut order: Vec<usize> = (0..t.phrases.len()).collect();
    order.shuffle(rng);
    let phrase = order
        .iter()
        .map(|&i| t.phrases[i].to_string())
        .find(|s| !used(s))
        .unwrap_or_else(|| {
            (2..)
                .map(|n| format!("{}第{}季！", t.phrases[order[0]].trim_end_matches('！'), n))
                .find(|s| !used(s))
                .expect("an unused phrase exists")
        });
    let theme = p.theme.trim();
    let concept = if theme.is_empty() { t.concept.to_string() } else { format!("{theme}：{}", t.concept) };
    let nickname = p.avatar.nickname.trim();
    json!({
        "story_mode": p.story_mode,
        "world_setting": { "concept": concept, "core_locations": t.locations },
        "world_rules": t.rules,
        "recurring_elements": {
            "recurring_object": t.object,
            "recurring_phrase": phrase,
            "opening_ritual": t.ritual,
            "closing_hook_style": t.closing,
            "episode_trigger_style": t.trigger,
        },
        "helper_roles": t.helpers.iter().map(|(n, r)| json!({"name": n, "role": r})).collect::<Vec<_>>(),
        "child_role": format!("{nickname}{}", t.role),
    })
}

// ------------------------------------------------------------------- recaps

fn mock_recap(p: &SummarizePayload) -> serde_json::Value {
    let mut foods: Vec<&str> = Vec::new();
    for e in &p.previous_episodes {
        if !foods.contains(&e.target_food.as_str()) {
            foods.push(&e.target_food);
        }
    }
    let last = foods.last().copied().unwrap_or("新食物");
    let (object, helper, place) = match &p.framework {
        Some(f) => (
            f.recurring_elements.recurring_object.clone(),
            f.helper_roles.first().map_or("小帮手".to_string(), |h| h.name.clone()),
            f.world_setting.core_locations.first().cloned().unwrap_or_else(|| "家里".into()),
        ),
        None => ("故事书".to_string(), "小帮手".to_string(), "家里".to_string()),
    };
    json!({
        "recap_cn": format!("之前的故事里，大家认识了{}。{helper}还记得在{place}看到{last}的那一天。", foods.join("、")),
        "micro_goal": format!("去找一找{last}的好朋友食物藏在哪里"),
        "key_story_elements": [object.clone(), helper, place],
        "continuity_hooks": {
            "carry_over_anchors": [object.clone(), last],
            "next_episode_seed": format!("下一次，{object}会带大家去一个新的地方。"),
        },
    })
}

// ----------------------------------------------------------------- episodes

/// Filler sentences whose Han counts are exactly 1 through 6.
const FILLERS: [&str; 6] = ["哇！", "真好。", "慢慢来。", "一起看看。", "真是有趣呀。", "大家都很开心。"];

const GENERIC: [&str; 22] = [
    "{N}和{H}来到了{L}。",
    "{L}里飘来一阵香香的味道。",
    "{H}眨眨眼睛，指了指桌上的{F}。",
    "{F}的颜色在阳光下亮亮的。",
    "{N}轻轻摸了摸{F}，凉凉的，滑滑的。",
    "{N}凑近闻了闻，小鼻子动了动。",
    "{H}笑着说，{F}里藏着小小的力气。",
    "风吹过来，树叶沙沙地响。",
    "{N}数了数，一共有三块{F}。",
    "{O}在{N}的口袋里轻轻晃了一下。",
    "大家都笑了，笑声像小铃铛一样。",
    "{N}很想知道{F}尝起来是什么味道。",
    "{H}把{F}切成了小星星的形状。",
    "窗外的小鸟叽叽喳喳地唱着歌。",
    "{N}一步一步慢慢地走，走得很认真。",
    "{F}摸起来有一点点软，又有一点点硬。",
    "{H}拍拍手，为{N}加油。",
    "天空蓝蓝的，云朵白白的。",
    "{N}把{F}放进小篮子里，小篮子变得沉甸甸的。",
    "{H}告诉{N}，每种食物都有自己的故事。",
    "{N}歪着小脑袋，仔细地看着{F}。",
    "小路弯弯的，通向{L}。",
];

struct Cast<'a> {
    nickname: &'a str,
    helper: &'a str,
    object: &'a str,
    phrase: &'a str,
    food: &'a str,
    locations: Vec<&'a str>,
}

impl Cast<'_> {
    fn fill(&self, template: &str, page: usize) -> String {
        let loc = if self.locations.is_empty() {
            "家里"
        } else {
            self.locations[page % self.locations.len()]
        };
        template
            .replace("{N}", self.nickname)
            .replace("{H}", self.helper)
            .replace("{O}", self.object)
            .replace("{P}", self.phrase)
            .replace("{F}", self.food)
            .replace("{L}", loc)
    }
}

/// Builds a page text with exactly `target` Han characters when possible:
/// `head`, then random pool sentences, then fillers, then `tail`.
fn compose(
    target: usize,
    mut head: Vec<String>,
    mut tail: Vec<String>,
    pool: &[String],
    rng: &mut ChaCha8Rng,
) -> String {
    let han = |v: &[String]| v.iter().map(|s| count_han_chars(s)).sum::<usize>();
    while han(&head) + han(&tail) > target && !tail.is_empty() {
        tail.pop();
    }
    while han(&head) > target && !head.is_empty() {
        head.pop();
    }
    let mut count = han(&head) + han(&tail);
    let mut body: Vec<String> = Vec::new();
    let mut order: Vec<&String> = pool.iter().collect();
    order.shuffle(rng);
    for s in order {
        let n = count_han_chars(s);
        if n > 0 && count + n <= target && !head.contains(s) && !tail.contains(s) {
            body.push(s.clone());
            count += n;
        }
    }
    while count < target {
        let need = (target - count).min(FILLERS.len());
        body.push(FILLERS[need - 1].to_string());
        count += need;
    }
    head.into_iter().chain(body).chain(tail).collect()
}

/// Per-page Han targets near the middle of the per-page band whose sum also
/// sits inside the total band.
fn page_targets(pages: usize, per_page: (u32, u32), total: (u32, u32)) -> Vec<usize> {
    let (lo, hi) = (per_page.0 as usize, per_page.1 as usize);
    let mid = (lo + hi) / 2;
    let want = (mid * pages).clamp(total.0 as usize, total.1 as usize);
    let want = want.clamp(lo * pages, hi * pages);
    let base = want / pages.max(1);
    let extra = want % pages.max(1);
    (0..pages).map(|i| base + usize::from(i < extra)).collect()
}

fn gender_en(g: Gender) -> &'static str {
    match g {
        Gender::Girl => "a little girl",
        Gender::Boy => "a little boy",
        Gender::Unspecified => "a young child",
    }
}

fn visual_canon(avatar: &ChildAvatar, framework: Option<&StoryFramework>) -> serde_json::Value {
    let accessories = if avatar.accessories.is_empty() {
        "none".to_string()
    } else {
        avatar.accessories.join(", ")
    };
    let world = framework.map_or("a cosy family home".to_string(), |f| f.world_setting.concept.clone());
    json!({
        "global_visual_prompt_prefix_en": "soft watercolor picture book illustration, warm daylight, rounded friendly shapes",
        "character_lock_prompt_en": format!(
            "same hero on every page: {}, wearing {}, accessories: {}, matching the reference face and hairstyle",
            gender_en(avatar.gender), avatar.clothing, accessories
        ),
        "world_lock_prompt_en": format!("consistent world and palette: {world}"),
        "negative_prompt_en": "text, watermark, scary faces, extra fingers, dark lighting",
    })
}

struct PlannedPage {
    id: String,
    next: Option<String>,
    interaction: Option<serde_json::Value>,
    branches: Vec<serde_json::Value>,
    head: Vec<String>,
    tail: Vec<String>,
    action_en: &'static str,
}

fn interaction(kind: &str, instruction: String, key: String, encouragement: &str) -> serde_json::Value {
    json!({
        "type": kind,
        "instruction": instruction,
        "event_key": key,
        "ext": { "encouragement": encouragement },
    })
}

fn render_pages(
    planned: Vec<PlannedPage>,
    targets: &[usize],
    pool: &[String],
    cast: &Cast,
    rng: &mut ChaCha8Rng,
) -> (Vec<serde_json::Value>, Vec<serde_json::Value>) {
    let mut pages = Vec::new();
    let mut packages = Vec::new();
    for (i, p) in planned.into_iter().enumerate() {
        let text = compose(targets[i], p.head, p.tail, pool, rng);
        let no = i + 1;
        let place = if cast.locations.is_empty() { "home" } else { cast.locations[(i + 1) % cast.locations.len()] };
        pages.push(json!({
            "page_no": no,
            "page_id": p.id,
            "page_text_cn": text,
            "next_page_id": p.next,
            "interaction": p.interaction,
            "branch_choices": p.branches,
        }));
        packages.push(json!({
            "page_no": no,
            "page_id": p.id,
            "image_prompt_suffix_en": format!(
                "page {no}, at {place}, the hero {} {}, gentle mood",
                p.action_en, cast.food
            ),
        }));
    }
    (pages, packages)
}

fn cast_for<'a>(framework: Option<&'a StoryFramework>, avatar: &'a ChildAvatar, food: &'a str) -> Cast<'a> {
    match framework {
        Some(f) => Cast {
            nickname: avatar.nickname.trim(),
            helper: f.helper_roles.first().map_or("小帮手", |h| h.name.as_str()),
            object: &f.recurring_elements.recurring_object,
            phrase: &f.recurring_elements.recurring_phrase,
            food,
            locations: f.world_setting.core_locations.iter().map(String::as_str).collect(),
        },
        None => Cast {
            nickname: avatar.nickname.trim(),
            helper: "小帮手",
            object: "故事书",
            phrase: "试一试！",
            food,
            locations: vec!["家里", "厨房", "餐桌", "花园"],
        },
    }
}

fn page_id(prefix: &str, no: usize) -> String {
    format!("{prefix}_{no:02}")
}

fn mock_episode(p: &EpisodePayload, rng: &mut ChaCha8Rng) -> serde_json::Value {
    let c = &p.constraints;
    let n = c.episode_page_count as usize;
    let cast = cast_for(Some(&p.framework), &p.avatar, p.target_food.trim());
    let pool: Vec<String> = GENERIC
        .iter()
        .enumerate()
        .map(|(i, t)| cast.fill(t, i))
        .chain(p.overrides.temporary_props.iter().map(|prop| format!("{}拿出了{prop}。", cast.helper)))
        .collect();

    let mut planned: Vec<PlannedPage> = (1..=n)
        .map(|no| PlannedPage {
            id: page_id("page", no),
            next: (no < n).then(|| page_id("page", no + 1)),
            interaction: None,
            branches: vec![],
            head: vec![],
            tail: vec![],
            action_en: "looking curiously at",
        })
        .collect();

    planned[0].head.push(format!("今天，{}要认识一位新朋友，它的名字叫{}。", cast.nickname, cast.food));
    planned[0].head.push(cast.fill("{N}和{H}一起出发了。", 0));
    if let Some(recap) = &p.recap {
        if let Some(anchor) = recap.continuity_hooks.carry_over_anchors.first() {
            planned[0].tail.push(format!("{}还记得上次的{anchor}。", cast.nickname));
        }
    }

    let mut free: Vec<usize> = (1..n).collect();
    if n >= 3 {
        let ch = if n >= 4 { rng.random_range(1..=n - 3) } else { 0 };
        let (a, b) = (ch + 1, ch + 2);
        let loc = cast.fill("{L}", ch + 1);
        planned[ch].interaction = Some(interaction(
            "choice",
            "选一选，接下来先去哪里".into(),
            format!("choose_path_{:02}", ch + 1),
            "两条路都很好玩",
        ));
        planned[ch].branches = vec![
            json!({"label_cn": format!("先去{loc}看看"), "next_page_id": planned[a].id}),
            json!({"label_cn": format!("先问问{}", cast.helper), "next_page_id": planned[b].id}),
        ];
        planned[ch].tail.push(format!("{}停下来想了想，该往哪边走呢？", cast.nickname));
        planned[ch].action_en = "choosing a path with";
        planned[b].head.push(format!("两条路最后都来到了同一个地方，{}又见到了{}。", cast.nickname, cast.food));
        free.retain(|&i| i != ch);
    }
    free.retain(|&i| i != n - 1 || n == 1);
    free.shuffle(rng);

    if let Some(i) = free.pop() {
        planned[i].interaction = Some(interaction(
            "record_voice",
            format!("对着话筒说一说：{}", cast.phrase),
            format!("record_voice_{:02}", i + 1),
            "声音真好听",
        ));
        planned[i].head.push(format!("{}大声说：“{}”", cast.nickname, cast.phrase));
        planned[i].action_en = "cheerfully talking about";
    }
    let micro = (c.micro_interactions_max_per_episode as usize).min(3);
    let kinds = [
        ("tap", "点一点{F}，听听它发出的声音", "touching"),
        ("drag", "把{F}拖进小盘子里", "placing"),
        ("mimic", "学{H}的样子，张大嘴巴假装咬一口", "pretending to bite"),
    ];
    for (k, (kind, instruction, action)) in kinds.iter().enumerate().take(micro) {
        let Some(i) = free.pop() else { break };
        planned[i].interaction = Some(interaction(
            kind,
            cast.fill(instruction, i),
            format!("{kind}_{:02}", i + 1),
            ["做得真棒", "真有耐心", "好厉害"][k],
        ));
        planned[i].action_en = action;
    }

    let last = n - 1;
    planned[last].tail.push(format!("{}说：“{}”", cast.nickname, cast.phrase));
    planned[last].tail.push(format!("今天的小任务：和家人一起找一找{}，摸一摸，闻一闻。", cast.food));
    planned[last].action_en = "smiling next to";

    let targets = page_targets(
        n,
        (c.han_chars_per_page_min, c.han_chars_per_page_max),
        c.total_band_for(EpisodeKind::Main),
    );
    let (pages, packages) = render_pages(planned, &targets, &pool, &cast, rng);
    json!({
        "pages": pages,
        "visual_canon": visual_canon(&p.avatar, Some(&p.framework)),
        "page_image_prompt_packages": packages,
    })
}

fn mock_ending(p: &EndingPayload, rng: &mut ChaCha8Rng) -> serde_json::Value {
    let c = &p.constraints;
    let n = c.ending_page_count as usize;
    let cast = cast_for(p.framework.as_ref(), &p.avatar, p.main_episode.target_food.trim());
    let pool: Vec<String> = GENERIC.iter().enumerate().map(|(i, t)| cast.fill(t, i)).collect();
    let opening = match p.ending_variant {
        EndingVariant::Positive => "{N}今天勇敢地尝了{F}，{H}高兴得跳了起来。",
        EndingVariant::Gentle => "{N}今天和{F}打了个招呼，{H}说慢慢来也没关系。",
        EndingVariant::Warm => "{N}今天离{F}又近了一小步，{H}笑眯眯地点点头。",
    };
    let mut planned: Vec<PlannedPage> = (1..=n)
        .map(|no| PlannedPage {
            id: page_id("ending", no),
            next: (no < n).then(|| page_id("ending", no + 1)),
            interaction: None,
            branches: vec![],
            head: vec![],
            tail: vec![],
            action_en: "sharing a happy moment with",
        })
        .collect();
    planned[0].head.push(cast.fill(opening, 0));
    if c.budget_for(EpisodeKind::EndingExtension).micro_max >= 1 {
        let i = if n >= 2 { 1 } else { 0 };
        planned[i].interaction = Some(interaction(
            "mimic",
            cast.fill("和{H}一起拍拍小肚子", i),
            format!("ending_mimic_{:02}", i + 1),
            "拍得真响亮",
        ));
    }
    let last = n - 1;
    planned[last].tail.push(format!("下一次，{}会带着{}去新的地方。", cast.object, cast.nickname));
    let targets = page_targets(
        n,
        (c.han_chars_per_page_min, c.han_chars_per_page_max),
        c.total_band_for(EpisodeKind::EndingExtension),
    );
    let (pages, packages) = render_pages(planned, &targets, &pool, &cast, rng);
    json!({
        "pages": pages,
        "visual_canon": p.main_episode.visual_canon,
        "page_image_prompt_packages": packages,
    })
}

// ----------------------------------------------------------------- feedback

const PRAISE_OPENINGS: [&str; 6] = [
    "今天的餐桌上有好消息。",
    "小勇士又往前走了一大步！",
    "哇，这一餐真是了不起！",
    "盘子旁边亮起了小星星。",
    "今天的小挑战完成得真棒！",
    "好棒的一次新尝试呀！",
];

const ENCOURAGE_OPENINGS: [&str; 6] = [
    "每一次靠近都算数哦。",
    "慢慢来，一点也不着急。",
    "今天也是勇敢的一天。",
    "小小的一步也很珍贵。",
    "新朋友需要慢慢认识。",
    "没关系，下次再试试看。",
];

const PRAISE_BODIES: [&str; 3] = ["{N}今天尝了{F}，真勇敢！", "{N}和{F}成了好朋友！", "{N}愿意尝尝{F}，了不起！"];

const ENCOURAGE_BODIES: [&str; 3] = [
    "{N}今天看了看{F}，已经很棒了。",
    "{N}下次再和{F}打个招呼吧。",
    "{N}离{F}又近了一点点。",
];

const CLOSINGS: [&str; 3] = ["继续加油！", "为你鼓掌！", "明天见！"];

fn mock_feedback(p: &FeedbackPayload, rng: &mut ChaCha8Rng) -> serde_json::Value {
    let (openings, bodies) = match p.basic_type {
        FeedbackType::Praise => (&PRAISE_OPENINGS, &PRAISE_BODIES),
        FeedbackType::Encourage => (&ENCOURAGE_OPENINGS, &ENCOURAGE_BODIES),
    };
    let nickname = p.nickname.trim();
    let food = p.target_food.trim();
    let mut opening_order: Vec<&str> = openings.to_vec();
    opening_order.shuffle(rng);
    let body = bodies.choose(rng).expect("non-empty").replace("{N}", nickname).replace("{F}", food);
    let closing = *CLOSINGS.choose(rng).expect("non-empty");

    // A first attempt does not look at the recent messages; only a repair
    // attempt steers away from their openings.
    let avoid: &[String] = if p.repair.is_some() { &p.recent_phrases } else { &[] };
    let recent_prefixes: Vec<String> = avoid.iter().map(|s| opening_prefix(s)).collect();

    let mut fallback = None;
    for opening in &opening_order {
        for text in [format!("{opening}{body}{closing}"), format!("{opening}{body}")] {
            if recent_prefixes.contains(&opening_prefix(&text)) {
                continue;
            }
            fallback.get_or_insert_with(|| text.clone());
            if validate_feedback_text(&text, nickname, food, avoid).ok {
                return json!({ "text_cn": text });
            }
        }
    }
    let text = fallback.unwrap_or_else(|| format!("{}{body}", opening_order[0]));
    json!({ "text_cn": text })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compose_hits_target() {
        let mut rng = ChaCha8Rng::from_seed([7; 32]);
        let pool: Vec<String> = GENERIC.iter().map(|s| s.replace('{', "").replace('}', "")).collect();
        for target in [0usize, 1, 5, 60, 70, 80, 95] {
            let t = compose(target, vec!["开始了。".into()], vec![], &pool, &mut rng);
            if target >= 3 {
                assert_eq!(count_han_chars(&t), target, "{t}");
            }
        }
    }

    #[test]
    fn targets_respect_both_bands() {
        let t = page_targets(12, (60, 80), (720, 960));
        assert!(t.iter().all(|&x| x == 70));
        let t = page_targets(12, (60, 80), (900, 960));
        assert_eq!(t.iter().sum::<usize>(), 900);
        assert!(t.iter().all(|&x| (60..=80).contains(&x)));
    }

    #[test]
    fn wav_header_is_consistent() {
        let w = silent_wav(100);
        assert_eq!(w.len(), 144);
        assert_eq!(&w[..4], b"RIFF");
    }
}
