use rand::seq::SliceRandom;

use super::stage1::SftSample;
use crate::error::{Error, Result};
use crate::microworld::grammar::{AttrValue, Claim, Parsed};
use crate::microworld::oracle::validate_claim;
use crate::microworld::question::{candidates, relation_candidates, Variant};
use crate::microworld::vocab::Relation;
use crate::microworld::{grounded_answers, DifficultyTier, Question, QuestionKind, Response, Scene, SceneObject};
use crate::seeds;

/// Longest answer, `<eos>` included, that expansion may produce.
pub const ANSWER_BUDGET: usize = 16;

const FAMILIES: [(QuestionKind, Variant); 3] = [
    (QuestionKind::SpatialRelation, Variant::Occluded),
    (QuestionKind::Count, Variant::Compositional),
    (QuestionKind::ColorAttr, Variant::DimAttribute),
];

/// Re-asks the sample's scene with a harder question family and recomputes
/// the answer. `Unrealizable` means no family fits and the caller should
/// drop the sample.
pub fn augment(sample: &SftSample, seed: u64) -> Result<SftSample> {
    let mut rng = seeds::rng(&[sample.scene.seed, seed, 0xA06]);
    let mut order = FAMILIES;
    order.shuffle(&mut rng);
    for (kind, variant) in order {
        let cands = candidates(&sample.scene, kind, variant);
        if cands.is_empty() {
            continue;
        }
        // Stay on the original subject when the family allows it.
        let same: Vec<&Question> = cands.iter().filter(|q| q.category == sample.question.category).collect();
        let mut q = if same.is_empty() {
            cands.choose(&mut rng).cloned()
        } else {
            same.choose(&mut rng).map(|q| (*q).clone())
        }
        .expect("nonempty candidates");
        q.tier = DifficultyTier::Hard;
        let answer = grounded_answers(&sample.scene, &q).canonical_response();
        return Ok(SftSample { scene: sample.scene.clone(), question: q, answer, tier: DifficultyTier::Hard });
    }
    Err(Error::Unrealizable(format!("no harder family fits scene {}", sample.scene.seed)))
}

fn manhattan(a: &SceneObject, b: &SceneObject) -> i32 {
    (a.position.0 as i32 - b.position.0 as i32).abs() + (a.position.1 as i32 - b.position.1 as i32).abs()
}

/// Visible objects the question is about, in id order.
fn involved<'a>(scene: &'a Scene, q: &Question) -> Vec<&'a SceneObject> {
    let mut out: Vec<&SceneObject> = scene.non_hidden().filter(|o| o.category == q.category).collect();
    if let (QuestionKind::SpatialRelation, Some(rel), Some(anchor)) = (q.kind, q.relation, q.target(scene)) {
        out.extend(relation_candidates(scene, anchor, rel));
    }
    out.sort_by_key(|o| o.id);
    out.dedup_by_key(|o| o.id);
    out
}

/// Detail claims about the involved objects, in a fixed order.
fn detail_claims(scene: &Scene, q: &Question) -> Vec<Claim> {
    let objs = involved(scene, q);
    let mut out = Vec::new();
    for o in &objs {
        if let Some(c) = scene.observed_color(o) {
            out.push(Claim::Attr { value: AttrValue::Color(c), category: o.category });
        }
        if let Some(m) = scene.observed_material(o) {
            out.push(Claim::Attr { value: AttrValue::Material(m), category: o.category });
        }
        if let Some(s) = scene.observed_size(o) {
            out.push(Claim::Attr { value: AttrValue::Size(s), category: o.category });
        }
    }
    for o in &objs {
        let mut others: Vec<&SceneObject> = scene.non_hidden().filter(|p| p.id != o.id).collect();
        others.sort_by_key(|p| (manhattan(o, p), p.id));
        for p in others {
            for &relation in Relation::ALL {
                if relation.holds(o.position, p.position) {
                    out.push(Claim::Rel { subject: o.category, relation, anchor: p.category });
                }
            }
        }
    }
    out
}

/// Appends up to `rounds` oracle-validated detail claims to a grounded
/// answer. Claims about hidden objects are never added.
pub fn expand_response(scene: &Scene, q: &Question, y: &Response, rounds: usize) -> Response {
    if rounds == 0 || q.kind == QuestionKind::FalsePremise {
        return y.clone();
    }
    let mut claims: Vec<Claim> = Vec::new();
    for p in y.claims() {
        match p {
            Parsed::Claim(c) => claims.push(c),
            Parsed::Unparseable(_) => return y.clone(),
        }
    }
    let spec = grounded_answers(scene, q);
    let mut len = y.len();
    let mut added = 0;
    for c in detail_claims(scene, q) {
        if added == rounds {
            break;
        }
        if claims.contains(&c) || validate_claim(scene, q, &spec, &c).is_err() {
            continue;
        }
        let extra = c.tokens().len() + 1;
        if len + extra > ANSWER_BUDGET {
            continue;
        }
        len += extra;
        claims.push(c);
        added += 1;
    }
    Response::from_claims(&claims)
}
