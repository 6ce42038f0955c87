//! Seeded synthetic data for end-to-end runs: a general corpus mixing
//! herbal-medicine documents with unrelated ones, plus task samples, a
//! lexicon, held-out validation text, instruction pairs and exam items.
//!
//! In-domain documents state a fixed set of facts (each herb always has
//! the same nature, meridian and effects), so a language model can learn
//! them. Out-of-domain documents draw from a disjoint character set, except
//! for a small share that mention a single herb in passing.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::eval::{build_diagnosis_mcq, format_prompt, Label, McqItem};
use crate::sft::SftExample;
use crate::store::RawRecord;

pub const HERBS: &[&str] = &[
    "甘草", "黄芪", "人参", "当归", "川芎", "白术", "茯苓", "柴胡", "黄连", "半夏", "陈皮", "桂枝", "芍药", "熟地", "麦冬", "丹参",
];
pub const NATURES: &[&str] = &["味甘性平", "味苦性寒", "味辛性温", "味酸性凉"];
pub const MERIDIANS: &[&str] = &["归心经", "归肺经", "归脾经", "归肝经", "归肾经", "归胃经"];
pub const EFFECTS: &[&str] = &[
    "补气", "养血", "活血", "化瘀", "清热", "燥湿", "解表", "散寒", "健脾", "安神", "疏肝", "理气", "滋阴", "润燥", "止咳", "利水",
];
pub const PULSES: &[&str] = &["浮脉", "沉脉", "迟脉", "数脉", "滑脉", "涩脉", "弦脉", "紧脉", "鱼翔脉", "虾游脉", "雀啄脉", "解索脉"];
pub const SYNDROMES: &[&str] = &["气虚证", "血瘀证", "湿热证", "阴虚证", "阳虚证", "痰湿证", "风寒证", "肝郁证"];
pub const SYMPTOMS: &[&str] = &["头痛", "乏力", "咳嗽", "失眠", "口苦", "腹胀", "舌红", "苔腻", "心悸", "盗汗"];

pub const GENERAL_SUBJECTS: &[&str] = &[
    "足球", "球队", "联赛", "冠军", "电脑", "软件", "网络", "手机", "程序", "城市", "交通", "道路", "建筑", "公园", "广场",
    "音乐", "歌手", "电影", "演员", "舞台", "乐队", "贸易", "市场", "公司", "银行", "股票", "投资", "记者", "新闻", "汽车",
];
pub const GENERAL_VERBS: &[&str] = &["举行", "发布", "建设", "播放", "增长", "报道", "开放", "推出", "观看", "组织", "讨论", "改变"];
pub const GENERAL_OBJECTS: &[&str] = &[
    "比赛", "赛事", "项目", "计划", "节目", "会议", "产品", "服务", "系统", "报告", "展览", "规则", "路线", "车站", "票价",
];
/// Glue characters shared by both document families; all are stopwords.
pub const GLUE: &[&str] = &["的", "是", "在", "和", "与", "为", "之", "有", "也", "中", "以", "于", "对", "可", "而", "其"];

#[derive(Debug, Clone, Copy)]
pub struct FixtureSizes {
    pub in_domain: usize,
    pub out_domain: usize,
    /// Share of out-of-domain documents that mention one herb.
    pub contamination: f64,
    pub samples: usize,
    pub validation: usize,
    pub exam_items: usize,
    pub sft_examples: usize,
}

impl Default for FixtureSizes {
    fn default() -> Self {
        Self {
            in_domain: 200,
            out_domain: 800,
            contamination: 0.1,
            samples: 60,
            validation: 40,
            exam_items: 24,
            sft_examples: 48,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Fixture {
    /// General corpus; in-domain records have ids starting with `in-`.
    pub general: Vec<RawRecord>,
    pub samples: Vec<String>,
    pub lexicon: Vec<String>,
    pub validation: Vec<String>,
    pub sft: Vec<SftExample>,
    pub exam: Vec<McqItem>,
}

pub fn is_in_domain_id(source_id: &str) -> bool {
    source_id.starts_with("in-")
}

fn herb_nature(h: usize) -> &'static str {
    NATURES[h % NATURES.len()]
}

fn herb_meridian(h: usize) -> &'static str {
    MERIDIANS[(h * 5 + 1) % MERIDIANS.len()]
}

fn herb_effects(h: usize) -> (&'static str, &'static str) {
    (EFFECTS[h], EFFECTS[(h * 7 + 3) % EFFECTS.len()])
}

fn pulse_syndrome(p: usize) -> &'static str {
    SYNDROMES[(p * 3) % SYNDROMES.len()]
}

fn glue(rng: &mut ChaCha8Rng) -> &'static str {
    GLUE.choose(rng).unwrap()
}

fn herb_sentence(rng: &mut ChaCha8Rng) -> String {
    let h = rng.random_range(0..HERBS.len());
    let (e1, e2) = herb_effects(h);
    match rng.random_range(0..3) {
        0 => format!("{}{}，{}。", HERBS[h], herb_nature(h), herb_meridian(h)),
        1 => format!("{}{}{}{}，{}{}。", HERBS[h], glue(rng), e1, glue(rng), e2, glue(rng)),
        _ => format!("{}{}，{}{}{}。", HERBS[h], herb_meridian(h), e1, e2, glue(rng)),
    }
}

fn pulse_sentence(rng: &mut ChaCha8Rng) -> String {
    let p = rng.random_range(0..PULSES.len());
    format!("{}{}{}，{}。", PULSES[p], glue(rng), pulse_syndrome(p), glue(rng))
}

fn in_domain_doc(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(5..9);
    (0..n).map(|_| if rng.random_bool(0.75) { herb_sentence(rng) } else { pulse_sentence(rng) }).collect()
}

fn general_sentence(rng: &mut ChaCha8Rng) -> String {
    format!(
        "{}{}{}{}{}。",
        GENERAL_SUBJECTS.choose(rng).unwrap(),
        glue(rng),
        GENERAL_VERBS.choose(rng).unwrap(),
        glue(rng),
        GENERAL_OBJECTS.choose(rng).unwrap()
    )
}

fn out_domain_doc(rng: &mut ChaCha8Rng, contaminate: bool) -> String {
    let n = rng.random_range(8..14);
    let mut sentences: Vec<String> = (0..n).map(|_| general_sentence(rng)).collect();
    if contaminate {
        let herb = HERBS.choose(rng).unwrap();
        let at = rng.random_range(0..sentences.len());
        sentences[at] = format!("{}{}{}。", GENERAL_SUBJECTS.choose(rng).unwrap(), glue(rng), herb);
    }
    sentences.concat()
}

fn herb_question(h: usize, rng: &mut ChaCha8Rng) -> McqItem {
    let (gold, _) = herb_effects(h);
    let mut opts: Vec<&str> = EFFECTS.iter().copied().filter(|e| *e != gold && *e != herb_effects(h).1).collect();
    opts.shuffle(rng);
    opts.truncate(3);
    opts.push(gold);
    opts.shuffle(rng);
    let gold_idx = opts.iter().position(|o| *o == gold).unwrap();
    McqItem::new(format!("{}的主要功效是", HERBS[h]), opts.iter().map(|s| s.to_string()).collect(), Label::from_index(gold_idx))
        .expect("four options")
}

fn pulse_question(p: usize, rng: &mut ChaCha8Rng) -> McqItem {
    let record = format!("患者{}{}，脉见{}。", SYMPTOMS.choose(rng).unwrap(), SYMPTOMS.choose(rng).unwrap(), PULSES[p]);
    build_diagnosis_mcq(&record, pulse_syndrome(p), SYNDROMES, rng.random()).expect("syndrome pool has enough entries")
}

/// Build the whole fixture from one seed.
pub fn synthetic_fixture(seed: u64, sizes: FixtureSizes) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut general: Vec<RawRecord> = Vec::with_capacity(sizes.in_domain + sizes.out_domain);
    for i in 0..sizes.in_domain {
        general.push(RawRecord { source_id: format!("in-{i:05}"), title: String::new(), body: in_domain_doc(&mut rng) });
    }
    for i in 0..sizes.out_domain {
        let contaminate = rng.random_bool(sizes.contamination);
        general.push(RawRecord {
            source_id: format!("out-{i:05}"),
            title: String::new(),
            body: out_domain_doc(&mut rng, contaminate),
        });
    }
    general.shuffle(&mut rng);

    let samples = (0..sizes.samples)
        .map(|_| {
            let h = rng.random_range(0..HERBS.len());
            let p = rng.random_range(0..PULSES.len());
            match rng.random_range(0..3) {
                0 => format!("{}{}，{}何经？其功效为{}{}。", HERBS[h], herb_nature(h), "归", herb_effects(h).0, herb_effects(h).1),
                1 => format!("脉象为{}者，多见于何证？{}之{}与{}相关。", PULSES[p], PULSES[p], pulse_syndrome(p), HERBS[h]),
                _ => format!("{}与{}配伍，可{}{}，治{}。", HERBS[h], HERBS[(h + 3) % HERBS.len()], herb_effects(h).0, herb_effects(h).1, SYNDROMES[p % SYNDROMES.len()]),
            }
        })
        .collect();

    let lexicon = HERBS.iter().chain(PULSES).chain(SYNDROMES).map(|s| s.to_string()).collect();

    let validation = (0..sizes.validation).map(|_| in_domain_doc(&mut rng)).collect();

    let mut exam = Vec::with_capacity(sizes.exam_items);
    let mut sft = Vec::with_capacity(sizes.sft_examples);
    for i in 0..sizes.exam_items + sizes.sft_examples {
        let item = if i % 3 == 2 {
            pulse_question(rng.random_range(0..PULSES.len()), &mut rng)
        } else {
            herb_question(rng.random_range(0..HERBS.len()), &mut rng)
        };
        if i < sizes.exam_items {
            exam.push(item);
        } else {
            sft.push(SftExample {
                prompt: format_prompt(&item),
                response: format!("{}。因此，正确选项是{}。", item.gold_text(), item.gold()),
            });
        }
    }

    Fixture { general, samples, lexicon, validation, sft, exam }
}
