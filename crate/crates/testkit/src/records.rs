//! Random post-meal records.

use rand::seq::IndexedRandom;
use rand::{Rng, RngExt};
use storyecho_core::domain::*;

pub const FOODS: &[&str] = &["西兰花", "胡萝卜", "南瓜", "茄子", "青椒", "番茄", "菠菜", "蘑菇", "豆腐", "芹菜", "苦瓜"];

const DESCRIPTIONS: &[&str] = &[
    "",
    "尝了一小口",
    "咬了一下就笑了",
    "看了很久，没有动",
    "一口也不肯吃",
    "闻了闻又推开了",
    "用手摸了摸",
    "吃完了一整块",
    "哭着说不要",
    "今天很累",
    "和姐姐一起试了试",
];

pub fn random_record<R: Rng>(rng: &mut R, id: usize) -> PostMealRecord {
    let scale = |rng: &mut R| rng.random_range(1..=7u8);
    PostMealRecord {
        record_id: RecordId::new(format!("rec_{id:04}")),
        target_food: FOODS.choose(rng).expect("non-empty").to_string(),
        baseline_try: scale(rng),
        try_level: scale(rng),
        intake: scale(rng),
        resistance: scale(rng),
        emotion: scale(rng),
        parent_pressure: scale(rng),
        helpfulness: scale(rng),
        self_rating: rng.random_range(1..=10),
        self_description: DESCRIPTIONS.choose(rng).expect("non-empty").to_string(),
        special_circumstances: vec![],
        timestamp: Timestamp(id as u64),
    }
}
