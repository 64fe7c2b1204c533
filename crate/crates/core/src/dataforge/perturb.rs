use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::stage2::D2Record;
use crate::error::{Error, Result};
use crate::microworld::grammar::{AttrValue, Claim, Parsed};
use crate::microworld::question::{pick, Variant};
use crate::microworld::vocab::{Category, Color, Material, GLYPHS};
use crate::microworld::{judge_response, grounded_answers, Question, QuestionKind, Response, Scene};
use crate::model::ModelConfig;
use crate::objectives::PreferencePair;
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationTag {
    CountOffByOne,
    ColorSwap,
    MaterialSwap,
    RelationFlip,
    CategorySiblingSwap,
    NonexistentObjectInsert,
    FabricatedOcr,
    PremiseCompliance,
}

impl PerturbationTag {
    pub const ALL: [PerturbationTag; 8] = [
        PerturbationTag::CountOffByOne,
        PerturbationTag::ColorSwap,
        PerturbationTag::MaterialSwap,
        PerturbationTag::RelationFlip,
        PerturbationTag::CategorySiblingSwap,
        PerturbationTag::NonexistentObjectInsert,
        PerturbationTag::FabricatedOcr,
        PerturbationTag::PremiseCompliance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PerturbationTag::CountOffByOne => "count_off_by_one",
            PerturbationTag::ColorSwap => "color_swap",
            PerturbationTag::MaterialSwap => "material_swap",
            PerturbationTag::RelationFlip => "relation_flip",
            PerturbationTag::CategorySiblingSwap => "category_sibling_swap",
            PerturbationTag::NonexistentObjectInsert => "nonexistent_object_insert",
            PerturbationTag::FabricatedOcr => "fabricated_ocr",
            PerturbationTag::PremiseCompliance => "premise_compliance",
        }
    }

    /// Tags whose negatives are token substitutions or insertions of at most
    /// two tokens.
    pub fn is_substitution(self) -> bool {
        !matches!(self, PerturbationTag::FabricatedOcr)
    }
}

impl std::fmt::Display for PerturbationTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Levenshtein distance over tokens.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn absent_categories(scene: &Scene) -> Vec<Category> {
    Category::ALL.iter().copied().filter(|&c| scene.count(c) == 0).collect()
}

/// Replacement first claims realizing `tag`, before the oracle check.
fn variants(scene: &Scene, q: &Question, first: &Claim, tag: PerturbationTag, rng: &mut impl Rng) -> Vec<Claim> {
    use PerturbationTag as T;
    let swap_category = |c: Category, pool: Vec<Category>| -> Vec<Category> {
        pool.into_iter().filter(|&s| s != c).collect()
    };
    let mut out = match (tag, first) {
        (T::CountOffByOne, Claim::Count { n, color, category }) => {
            let mut v = vec![Claim::Count { n: n + 1, color: *color, category: *category }];
            if *n > 0 {
                v.push(Claim::Count { n: n - 1, color: *color, category: *category });
            }
            v
        }
        (T::ColorSwap, Claim::Attr { value: AttrValue::Color(c), category }) => Color::ALL
            .iter()
            .filter(|&&x| x != *c)
            .map(|&x| Claim::Attr { value: AttrValue::Color(x), category: *category })
            .collect(),
        (T::MaterialSwap, Claim::Attr { value: AttrValue::Material(m), category }) => Material::ALL
            .iter()
            .filter(|&&x| x != *m && x != Material::Unknown)
            .map(|&x| Claim::Attr { value: AttrValue::Material(x), category: *category })
            .collect(),
        (T::RelationFlip, Claim::Rel { subject, relation, anchor }) => {
            vec![Claim::Rel { subject: *subject, relation: relation.inverse(), anchor: *anchor }]
        }
        (T::CategorySiblingSwap | T::NonexistentObjectInsert, c) => {
            let pool = |cat: Category| match tag {
                T::CategorySiblingSwap => swap_category(cat, cat.siblings().to_vec()),
                _ => swap_category(cat, absent_categories(scene)),
            };
            match c {
                Claim::Exists(cat) if tag == T::CategorySiblingSwap => pool(*cat).into_iter().map(Claim::Exists).collect(),
                Claim::Absent(cat) if tag == T::NonexistentObjectInsert => vec![Claim::Exists(*cat)],
                Claim::Count { n, color, category } => pool(*category)
                    .into_iter()
                    .map(|s| Claim::Count { n: (*n).max(1), color: *color, category: s })
                    .collect(),
                Claim::Attr { value, category } => {
                    pool(*category).into_iter().map(|s| Claim::Attr { value: *value, category: s }).collect()
                }
                Claim::Rel { subject, relation, anchor } => pool(*subject)
                    .into_iter()
                    .map(|s| Claim::Rel { subject: s, relation: *relation, anchor: *anchor })
                    .collect(),
                _ => Vec::new(),
            }
        }
        (T::FabricatedOcr, Claim::Read(pattern)) => {
            let mut v = Vec::new();
            for i in 0..pattern.len() {
                for g in 0..GLYPHS as u8 {
                    if pattern[i] != Some(g) {
                        let mut p = pattern.clone();
                        p[i] = Some(g);
                        v.push(Claim::Read(p));
                    }
                }
            }
            v
        }
        // Guessing where the scene does not allow an answer.
        (T::ColorSwap, Claim::Unsure) if q.kind == QuestionKind::ColorAttr => Color::ALL
            .iter()
            .map(|&x| Claim::Attr { value: AttrValue::Color(x), category: q.category })
            .collect(),
        (T::MaterialSwap, Claim::Unsure) if q.kind == QuestionKind::MaterialAttr => Material::ALL
            .iter()
            .filter(|&&x| x != Material::Unknown)
            .map(|&x| Claim::Attr { value: AttrValue::Material(x), category: q.category })
            .collect(),
        (T::FabricatedOcr, Claim::Unsure) if q.kind == QuestionKind::OcrRead => {
            let len = rng.gen_range(2..=4);
            vec![Claim::Read((0..len).map(|_| Some(rng.gen_range(0..GLYPHS as u8))).collect())]
        }
        (T::PremiseCompliance, Claim::RejectPremise) => compliance_claims(q),
        _ => Vec::new(),
    };
    out.shuffle(rng);
    out
}

/// Claims that go along with a false premise.
fn compliance_claims(q: &Question) -> Vec<Claim> {
    match q.color {
        // "what material is the <color> <cat>": assert the <color> <cat>.
        Some(col) => vec![Claim::Attr { value: AttrValue::Color(col), category: q.category }],
        // "what color is the <cat>" about an absent category: name a color.
        None => Color::ALL
            .iter()
            .map(|&c| Claim::Attr { value: AttrValue::Color(c), category: q.category })
            .collect(),
    }
}

fn applicable(q: &Question, first: &Claim) -> Vec<PerturbationTag> {
    use PerturbationTag as T;
    match first {
        Claim::Exists(_) => vec![T::CategorySiblingSwap],
        Claim::Absent(_) => vec![T::NonexistentObjectInsert],
        Claim::Count { .. } => vec![T::CountOffByOne, T::NonexistentObjectInsert],
        Claim::Attr { value: AttrValue::Color(_), .. } => {
            vec![T::ColorSwap, T::CategorySiblingSwap, T::NonexistentObjectInsert]
        }
        Claim::Attr { value: AttrValue::Material(_), .. } => {
            vec![T::MaterialSwap, T::CategorySiblingSwap, T::NonexistentObjectInsert]
        }
        Claim::Attr { value: AttrValue::Size(_), .. } => vec![T::CategorySiblingSwap, T::NonexistentObjectInsert],
        Claim::Rel { .. } => vec![T::RelationFlip, T::CategorySiblingSwap, T::NonexistentObjectInsert],
        Claim::Read(_) => vec![T::FabricatedOcr],
        Claim::Unsure => match q.kind {
            QuestionKind::ColorAttr => vec![T::ColorSwap],
            QuestionKind::MaterialAttr => vec![T::MaterialSwap],
            QuestionKind::OcrRead => vec![T::FabricatedOcr],
            _ => Vec::new(),
        },
        Claim::RejectPremise => vec![T::PremiseCompliance],
    }
}

/// A hallucinated near-copy of a grounded answer: the first claim is
/// replaced by a minimal edit realizing one perturbation tag, checked to be
/// rejected by the oracle.
pub fn perturb_negative(
    scene: &Scene,
    question: &Question,
    y_plus: &Response,
    seed: u64,
) -> Result<(Response, PerturbationTag)> {
    let mut claims: Vec<Claim> = Vec::new();
    for p in y_plus.claims() {
        match p {
            Parsed::Claim(c) => claims.push(c),
            Parsed::Unparseable(_) => return Err(Error::Argument("y_plus does not parse".into())),
        }
    }
    let first = claims.first().cloned().ok_or_else(|| Error::Argument("y_plus is empty".into()))?;
    let mut tags = applicable(question, &first);
    if tags.is_empty() {
        return Err(Error::Argument(format!("no perturbation applies to a {} answer", question.kind)));
    }
    let mut rng = seeds::rng(&[scene.seed, seed, 0xBAD]);
    tags.shuffle(&mut rng);
    for tag in tags {
        for replacement in variants(scene, question, &first, tag, &mut rng) {
            let mut edited = claims.clone();
            edited[0] = replacement;
            let y_minus = Response::from_claims(&edited);
            if y_minus != *y_plus && !judge_response(scene, question, &y_minus).grounded {
                return Ok((y_minus, tag));
            }
        }
    }
    Err(Error::Unrealizable(format!("no hallucinated variant of a {} answer", question.kind)))
}

/// A false-premise question on `scene` with its rejection and compliance
/// answers, before encoding.
pub fn make_false_premise_record(scene: &Scene, seed: u64) -> Result<D2Record> {
    let mut rng = seeds::rng(&[scene.seed, seed, 0xF9]);
    let question = pick(scene, QuestionKind::FalsePremise, Variant::Plain, &mut rng)?;
    let y_plus = grounded_answers(scene, &question).canonical_response();
    let (y_minus, tag) = perturb_negative(scene, &question, &y_plus, seed)?;
    Ok(D2Record { scene: scene.clone(), question, y_plus, y_minus, tag, origin_index: None })
}

pub fn make_false_premise_pair(scene: &Scene, seed: u64, model: &ModelConfig) -> Result<PreferencePair> {
    make_false_premise_record(scene, seed)?.to_pair(model)
}
