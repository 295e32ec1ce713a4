//! Filler prose with an exact number of Han characters.

const SENTENCES: &[&str] = &[
    "清晨的阳光从窗帘缝里钻进来，照在小桌子上",
    "小狐狸背着竹篮，沿着弯弯的小路慢慢走",
    "风吹过草地，叶子发出沙沙的声音",
    "厨房里的锅盖轻轻跳了一下，像在打招呼",
    "河边的石头圆圆的，摸起来凉凉的",
    "小熊数了数篮子里的果子，一共有五个",
    "远处传来咚咚的鼓声，大家都抬起头来",
    "蜗牛爬得很慢，可是它从来不着急",
    "天上的云变成了一只大大的兔子",
    "妈妈把围裙系好，笑着看向餐桌",
    "小鸟停在树枝上，歪着头看了又看",
    "门口的风铃叮叮当当地响起来",
    "一条小鱼从水里跳出来，又钻了回去",
    "菜园里的泥土松松软软，还有一点香味",
    "大家围成一个圈，轻轻地拍着手",
    "月亮悄悄爬上山坡，星星一颗一颗亮了",
    "桥下的小溪唱着歌，一直流到远方",
    "小刺猬把落叶叠成一座软软的小床",
    "热乎乎的汤冒着白气，香味飘满了屋子",
    "路边开着黄色的小花，蝴蝶在上面转圈",
];

/// Story-like text with exactly `han` Han characters, ending in a full stop.
/// `salt` picks where in the sentence pool the text starts.
pub fn han_text(salt: u64, han: usize) -> String {
    let mut out = String::new();
    let mut count = 0usize;
    let mut i = salt as usize;
    while count < han {
        let sentence = SENTENCES[i % SENTENCES.len()];
        for c in sentence.chars() {
            if count == han {
                break;
            }
            if c == '，' {
                // Never end a text on a comma.
                if count + 1 < han {
                    out.push(c);
                }
                continue;
            }
            out.push(c);
            count += 1;
        }
        out.push(if count == han { '。' } else { '，' });
        i += 1;
    }
    if han == 0 {
        out.push('。');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use storyecho_core::validate::count_han_chars;

    #[test]
    fn exact_counts() {
        for n in [0usize, 1, 17, 60, 70, 80, 200] {
            for salt in 0..25 {
                let t = han_text(salt, n);
                assert_eq!(count_han_chars(&t), n, "{t}");
                assert!(t.ends_with('。'));
            }
        }
    }
}
