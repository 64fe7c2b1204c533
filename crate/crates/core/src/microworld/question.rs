use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scene::{DifficultyTier, Scene, SceneObject};
use super::vocab::{self, special, Category, Color, Lighting, Occlusion, Relation, Token, UnrenderedProperty};
use crate::error::{Error, Result};
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionKind {
    Existence,
    Count,
    ColorAttr,
    MaterialAttr,
    SpatialRelation,
    OcrRead,
    FalsePremise,
    UnanswerableProperty,
}

impl QuestionKind {
    pub const ALL: [QuestionKind; 8] = [
        QuestionKind::Existence,
        QuestionKind::Count,
        QuestionKind::ColorAttr,
        QuestionKind::MaterialAttr,
        QuestionKind::SpatialRelation,
        QuestionKind::OcrRead,
        QuestionKind::FalsePremise,
        QuestionKind::UnanswerableProperty,
    ];

    pub fn name(self) -> &'static str {
        match self {
            QuestionKind::Existence => "existence",
            QuestionKind::Count => "count",
            QuestionKind::ColorAttr => "color_attr",
            QuestionKind::MaterialAttr => "material_attr",
            QuestionKind::SpatialRelation => "spatial_relation",
            QuestionKind::OcrRead => "ocr_read",
            QuestionKind::FalsePremise => "false_premise",
            QuestionKind::UnanswerableProperty => "unanswerable_property",
        }
    }

    fn salt(self) -> u64 {
        self as u64 + 0x0051_7000
    }
}

impl std::fmt::Display for QuestionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Harder question families used by augmentation. `Plain` is what
/// [`generate_question`] emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Plain,
    /// Count filtered by an attribute.
    Compositional,
    /// Relation whose anchor or an answer object is partially occluded.
    Occluded,
    /// Attribute of a partially occluded object under dim light.
    DimAttribute,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Question {
    pub kind: QuestionKind,
    pub category: Category,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<Color>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation: Option<Relation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub property: Option<UnrenderedProperty>,
    pub tier: DifficultyTier,
    pub tokens: Vec<Token>,
}

/// Shape of a question's token form, independent of its kind label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Form {
    Exist,
    Count,
    Color,
    Material,
    Rel,
    Read,
    Property,
}

impl Question {
    fn build(
        kind: QuestionKind,
        form: Form,
        category: Category,
        color: Option<Color>,
        relation: Option<Relation>,
        property: Option<UnrenderedProperty>,
        tier: DifficultyTier,
    ) -> Question {
        let mut tokens = Vec::with_capacity(4);
        match form {
            Form::Exist => tokens.push(special::Q_EXIST),
            Form::Count => tokens.push(special::Q_COUNT),
            Form::Color => tokens.push(special::Q_COLOR),
            Form::Material => tokens.push(special::Q_MATERIAL),
            Form::Rel => {
                tokens.push(special::Q_REL);
                tokens.push(vocab::relation(relation.expect("relation form")));
            }
            Form::Read => tokens.push(special::Q_READ),
            Form::Property => tokens.push(vocab::property(property.expect("property form"))),
        }
        if let Some(c) = color {
            tokens.push(vocab::color(c));
        }
        tokens.push(vocab::category(category));
        Question { kind, category, color, relation, property, tier, tokens }
    }

    /// The object a single-object question is about.
    pub fn target<'a>(&self, scene: &'a Scene) -> Option<&'a SceneObject> {
        let mut it = scene.of_category(self.category);
        let first = it.next()?;
        it.next().is_none().then_some(first)
    }
}

fn unique_non_hidden(scene: &Scene) -> Vec<&SceneObject> {
    scene
        .non_hidden()
        .filter(|o| scene.count(o.category) == 1)
        .collect()
}

fn fully_color_observed(scene: &Scene, c: Category) -> bool {
    scene.of_category(c).all(|o| scene.observed_color(o).is_some())
}

/// Objects other than `anchor` standing in `rel` to it, non-hidden only.
pub fn relation_candidates<'a>(scene: &'a Scene, anchor: &SceneObject, rel: Relation) -> Vec<&'a SceneObject> {
    scene
        .non_hidden()
        .filter(|o| o.id != anchor.id && rel.holds(o.position, anchor.position))
        .collect()
}

/// Every question of `kind`/`variant` the scene supports, in a fixed order.
pub(crate) fn candidates(scene: &Scene, kind: QuestionKind, variant: Variant) -> Vec<Question> {
    let tier = scene.tier;
    let mut out = Vec::new();
    match (kind, variant) {
        (QuestionKind::Existence, _) => {
            for &c in Category::ALL {
                out.push(Question::build(kind, Form::Exist, c, None, None, None, tier));
            }
        }
        (QuestionKind::Count, Variant::Plain) => {
            for &c in Category::ALL {
                if scene.count(c) > 0 {
                    out.push(Question::build(kind, Form::Count, c, None, None, None, tier));
                }
            }
        }
        (QuestionKind::Count, Variant::Compositional) => {
            for &c in Category::ALL {
                if scene.count(c) == 0 || !fully_color_observed(scene, c) {
                    continue;
                }
                let mut colors: Vec<Color> = scene.of_category(c).filter_map(|o| scene.observed_color(o)).collect();
                colors.sort();
                colors.dedup();
                for col in colors {
                    out.push(Question::build(kind, Form::Count, c, Some(col), None, None, tier));
                }
            }
        }
        (QuestionKind::ColorAttr, Variant::Plain) => {
            for o in unique_non_hidden(scene) {
                out.push(Question::build(kind, Form::Color, o.category, None, None, None, tier));
            }
        }
        (QuestionKind::ColorAttr, Variant::DimAttribute) => {
            if scene.lighting == Lighting::Dim {
                for o in unique_non_hidden(scene) {
                    if o.occlusion == Occlusion::Partial {
                        out.push(Question::build(kind, Form::Color, o.category, None, None, None, tier));
                    }
                }
            }
        }
        (QuestionKind::MaterialAttr, Variant::Plain) => {
            for o in unique_non_hidden(scene) {
                out.push(Question::build(kind, Form::Material, o.category, None, None, None, tier));
            }
        }
        (QuestionKind::SpatialRelation, Variant::Plain | Variant::Occluded) => {
            for anchor in unique_non_hidden(scene) {
                for &rel in Relation::ALL {
                    let cands = relation_candidates(scene, anchor, rel);
                    if cands.is_empty() {
                        continue;
                    }
                    let occluded = anchor.occlusion == Occlusion::Partial
                        || cands.iter().any(|o| o.occlusion == Occlusion::Partial);
                    if variant == Variant::Plain || occluded {
                        out.push(Question::build(kind, Form::Rel, anchor.category, None, Some(rel), None, tier));
                    }
                }
            }
        }
        (QuestionKind::OcrRead, Variant::Plain) => {
            for o in unique_non_hidden(scene) {
                if o.text_label.is_some() {
                    out.push(Question::build(kind, Form::Read, o.category, None, None, None, tier));
                }
            }
        }
        (QuestionKind::FalsePremise, _) => {
            for &c in Category::ALL {
                if scene.count(c) == 0 {
                    out.push(Question::build(kind, Form::Color, c, None, None, None, tier));
                } else if scene.of_category(c).all(|o| !o.is_hidden()) && fully_color_observed(scene, c) {
                    for &col in Color::ALL {
                        if scene.of_category(c).all(|o| o.color != col) {
                            out.push(Question::build(kind, Form::Material, c, Some(col), None, None, tier));
                        }
                    }
                }
            }
        }
        (QuestionKind::UnanswerableProperty, _) => {
            let mut cats: Vec<Category> = scene.non_hidden().map(|o| o.category).collect();
            cats.sort();
            cats.dedup();
            for c in cats {
                for &p in UnrenderedProperty::ALL {
                    out.push(Question::build(kind, Form::Property, c, None, None, Some(p), tier));
                }
            }
        }
        _ => {}
    }
    out
}

/// Picks one realizable question of the given family, or reports that the
/// scene cannot support it.
pub(crate) fn pick(scene: &Scene, kind: QuestionKind, variant: Variant, rng: &mut impl Rng) -> Result<Question> {
    if scene.objects.is_empty() {
        return Err(Error::Argument("scene has no objects".into()));
    }
    let cands = candidates(scene, kind, variant);
    if kind == QuestionKind::Existence {
        // Balance present and absent categories.
        let (present, absent): (Vec<_>, Vec<_>) = cands.into_iter().partition(|q| scene.count(q.category) > 0);
        let pool = if absent.is_empty() || (!present.is_empty() && rng.gen_bool(0.5)) { present } else { absent };
        return Ok(pool.choose(rng).cloned().expect("existence always realizable"));
    }
    cands
        .choose(rng)
        .cloned()
        .ok_or_else(|| Error::Unrealizable(format!("{kind} ({variant:?}) on scene {}", scene.seed)))
}

/// Generates a question of the given kind about `scene`; deterministic per
/// `(scene, kind, seed)`.
pub fn generate_question(scene: &Scene, kind: QuestionKind, seed: u64) -> Result<Question> {
    let mut rng = seeds::rng(&[scene.seed, seed, kind.salt()]);
    pick(scene, kind, Variant::Plain, &mut rng)
}
