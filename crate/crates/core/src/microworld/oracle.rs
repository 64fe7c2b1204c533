//! The exact grounding oracle: which answers a scene supports, and whether a
//! given response stays within them.

use serde::{Deserialize, Serialize};

use super::grammar::{join_claims, parse_response, AttrValue, Claim, Parsed};
use super::question::{relation_candidates, Question, QuestionKind};
use super::scene::{Scene, SceneObject};
use super::vocab::{special, Token};

/// A token sequence produced as an answer; well-formed responses end in `<eos>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Response(pub Vec<Token>);

impl Response {
    pub fn from_claims<'a>(claims: impl IntoIterator<Item = &'a Claim>) -> Self {
        Response(join_claims(claims))
    }

    pub fn tokens(&self) -> &[Token] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn claims(&self) -> Vec<Parsed> {
        parse_response(&self.0)
    }
}

/// What counts as a grounded answer to one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerSpec {
    /// Canonical answer tokens, without `<eos>`.
    pub canonical: Vec<Token>,
    /// Claims any one of which answers the question.
    pub accepted: Vec<Claim>,
    pub abstain_required: bool,
    pub premise_rejection_required: bool,
}

impl AnswerSpec {
    fn answer(accepted: Vec<Claim>) -> Self {
        let canonical = accepted[0].tokens();
        AnswerSpec { canonical, accepted, abstain_required: false, premise_rejection_required: false }
    }

    fn abstain() -> Self {
        AnswerSpec {
            canonical: vec![special::UNSURE],
            accepted: vec![Claim::Unsure],
            abstain_required: true,
            premise_rejection_required: false,
        }
    }

    fn reject() -> Self {
        AnswerSpec {
            canonical: vec![special::REJECT],
            accepted: vec![Claim::RejectPremise],
            abstain_required: false,
            premise_rejection_required: true,
        }
    }

    /// Canonical answer as a terminated response.
    pub fn canonical_response(&self) -> Response {
        let mut t = self.canonical.clone();
        t.push(special::EOS);
        Response(t)
    }

    pub fn canonical_claim(&self) -> &Claim {
        &self.accepted[0]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvalidClaim {
    pub claim: Vec<Token>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundingVerdict {
    pub grounded: bool,
    pub validated_claims: usize,
    pub invalid_claims: Vec<InvalidClaim>,
    pub abstained: bool,
    pub premise_rejected: bool,
    /// Whether any span failed to parse.
    pub unparseable: bool,
}

impl GroundingVerdict {
    pub fn hallucinated(&self) -> bool {
        !self.grounded && !self.abstained
    }
}

fn label_pattern(scene: &Scene, o: &SceneObject) -> Option<Vec<Option<u8>>> {
    let label = scene.observed_label(o)?;
    Some(
        label
            .glyphs
            .iter()
            .enumerate()
            .map(|(i, &g)| label.is_legible(i).then_some(g))
            .collect(),
    )
}

/// Nearest object satisfying the relation, ties broken by id.
fn nearest<'a>(anchor: &SceneObject, cands: &[&'a SceneObject]) -> &'a SceneObject {
    cands
        .iter()
        .min_by_key(|o| {
            let d = (o.position.0 as i32 - anchor.position.0 as i32).abs()
                + (o.position.1 as i32 - anchor.position.1 as i32).abs();
            (d, o.id)
        })
        .copied()
        .expect("nonempty candidates")
}

/// The answers the scene supports for `question`.
pub fn grounded_answers(scene: &Scene, q: &Question) -> AnswerSpec {
    let c = q.category;
    match q.kind {
        QuestionKind::Existence => {
            if scene.count(c) > 0 {
                AnswerSpec::answer(vec![Claim::Exists(c)])
            } else {
                AnswerSpec::answer(vec![Claim::Absent(c)])
            }
        }
        QuestionKind::Count => match q.color {
            None => AnswerSpec::answer(vec![Claim::Count { n: scene.count(c) as u8, color: None, category: c }]),
            Some(col) => {
                if scene.of_category(c).any(|o| scene.observed_color(o).is_none()) {
                    AnswerSpec::abstain()
                } else {
                    let n = scene.of_category(c).filter(|o| o.color == col).count() as u8;
                    AnswerSpec::answer(vec![Claim::Count { n, color: Some(col), category: c }])
                }
            }
        },
        QuestionKind::ColorAttr => match q.target(scene).and_then(|o| scene.observed_color(o)) {
            Some(col) => AnswerSpec::answer(vec![Claim::Attr { value: AttrValue::Color(col), category: c }]),
            None => AnswerSpec::abstain(),
        },
        QuestionKind::MaterialAttr => match q.target(scene).and_then(|o| scene.observed_material(o)) {
            Some(m) => AnswerSpec::answer(vec![Claim::Attr { value: AttrValue::Material(m), category: c }]),
            None => AnswerSpec::abstain(),
        },
        QuestionKind::SpatialRelation => {
            let rel = q.relation.expect("relation question carries a relation");
            let anchor = match q.target(scene).filter(|o| !o.is_hidden()) {
                Some(a) => a,
                None => return AnswerSpec::abstain(),
            };
            let cands = relation_candidates(scene, anchor, rel);
            if cands.is_empty() {
                return AnswerSpec::abstain();
            }
            let first = nearest(anchor, &cands).category;
            let mut cats: Vec<_> = cands.iter().map(|o| o.category).collect();
            cats.sort();
            cats.dedup();
            cats.retain(|&x| x != first);
            cats.insert(0, first);
            let accepted = cats
                .into_iter()
                .map(|subject| Claim::Rel { subject, relation: rel, anchor: c })
                .collect();
            AnswerSpec::answer(accepted)
        }
        QuestionKind::OcrRead => {
            match q.target(scene).and_then(|o| label_pattern(scene, o)) {
                Some(p) if p.iter().any(Option::is_some) => AnswerSpec::answer(vec![Claim::Read(p)]),
                _ => AnswerSpec::abstain(),
            }
        }
        QuestionKind::FalsePremise => AnswerSpec::reject(),
        QuestionKind::UnanswerableProperty => AnswerSpec::abstain(),
    }
}

/// Checks one claim against the scene; `Err` carries the reason it fails.
pub fn validate_claim(scene: &Scene, q: &Question, spec: &AnswerSpec, claim: &Claim) -> Result<(), &'static str> {
    const NONEXISTENT: &str = "nonexistent object";
    let present = |c| scene.count(c) > 0;
    match claim {
        Claim::Exists(c) => present(*c).then_some(()).ok_or(NONEXISTENT),
        Claim::Absent(c) => (!present(*c)).then_some(()).ok_or("denies a present object"),
        Claim::Count { n, color: None, category } => {
            let actual = scene.count(*category);
            if actual == *n as usize {
                Ok(())
            } else if actual == 0 {
                Err(NONEXISTENT)
            } else {
                Err("wrong count")
            }
        }
        Claim::Count { n, color: Some(col), category } => {
            if scene.of_category(*category).any(|o| scene.observed_color(o).is_none()) {
                return Err("unverifiable count");
            }
            let actual = scene.of_category(*category).filter(|o| o.color == *col).count();
            if actual == *n as usize {
                Ok(())
            } else if *n > 0 && actual == 0 {
                Err(NONEXISTENT)
            } else {
                Err("wrong count")
            }
        }
        Claim::Attr { value, category } => {
            if scene.of_category(*category).all(|o| o.is_hidden()) {
                return Err(NONEXISTENT);
            }
            let ok = scene.of_category(*category).any(|o| match value {
                AttrValue::Color(v) => scene.observed_color(o) == Some(*v),
                AttrValue::Material(v) => scene.observed_material(o) == Some(*v),
                AttrValue::Size(v) => scene.observed_size(o) == Some(*v),
            });
            ok.then_some(()).ok_or("wrong attribute")
        }
        Claim::Rel { subject, relation, anchor } => {
            let subs: Vec<_> = scene.non_hidden().filter(|o| o.category == *subject).collect();
            let anchors: Vec<_> = scene.non_hidden().filter(|o| o.category == *anchor).collect();
            if subs.is_empty() || anchors.is_empty() {
                return Err(NONEXISTENT);
            }
            let ok = subs
                .iter()
                .any(|a| anchors.iter().any(|b| a.id != b.id && relation.holds(a.position, b.position)));
            ok.then_some(()).ok_or("wrong relation")
        }
        Claim::Read(pattern) => {
            let ok = scene.objects.iter().any(|o| label_pattern(scene, o).as_ref() == Some(pattern));
            ok.then_some(()).ok_or("fabricated text")
        }
        Claim::Unsure => spec.abstain_required.then_some(()).ok_or("unwarranted abstention"),
        Claim::RejectPremise => {
            (q.kind == QuestionKind::FalsePremise).then_some(()).ok_or("unwarranted premise rejection")
        }
    }
}

/// Judges a response against the scene.
pub fn judge_response(scene: &Scene, q: &Question, response: &Response) -> GroundingVerdict {
    let spec = grounded_answers(scene, q);
    judge_with_spec(scene, q, &spec, response)
}

pub fn judge_with_spec(scene: &Scene, q: &Question, spec: &AnswerSpec, response: &Response) -> GroundingVerdict {
    let mut validated = 0;
    let mut invalid = Vec::new();
    let mut answered = false;
    let mut abstained = false;
    let mut premise_rejected = false;
    let mut unparseable = false;
    for p in response.claims() {
        match p {
            Parsed::Unparseable(seg) => {
                unparseable = true;
                invalid.push(InvalidClaim { claim: seg, reason: "unparseable".into() });
            }
            Parsed::Claim(c) => {
                abstained |= c == Claim::Unsure;
                premise_rejected |= c == Claim::RejectPremise;
                match validate_claim(scene, q, spec, &c) {
                    Ok(()) => {
                        validated += 1;
                        answered |= spec.accepted.contains(&c);
                    }
                    Err(reason) => invalid.push(InvalidClaim { claim: c.tokens(), reason: reason.into() }),
                }
            }
        }
    }
    GroundingVerdict {
        grounded: invalid.is_empty() && answered,
        validated_claims: validated,
        invalid_claims: invalid,
        abstained,
        premise_rejected,
        unparseable,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microworld::question::generate_question;
    use crate::microworld::scene::{generate_scene, DifficultyTier, TextLabel, WorldConfig};
    use crate::microworld::vocab::{Category, Color, Lighting, Material, Occlusion, Relation, Size};

    fn obj(id: u32, category: Category, color: Color, pos: (u8, u8)) -> SceneObject {
        SceneObject {
            id,
            category,
            color,
            size: Size::Large,
            material: Material::Metal,
            position: pos,
            occlusion: Occlusion::Visible,
            text_label: None,
        }
    }

    fn scene(objects: Vec<SceneObject>) -> Scene {
        Scene { seed: 3, grid: (8, 8), objects, lighting: Lighting::Bright, tier: DifficultyTier::Easy }
    }

    fn question(kind: QuestionKind, category: Category) -> Question {
        let mut q = generate_question(
            &scene(vec![obj(0, category, Color::Red, (0, 0)), obj(1, Category::Ball, Color::Blue, (3, 3))]),
            QuestionKind::Existence,
            0,
        )
        .unwrap();
        q.kind = kind;
        q.category = category;
        q
    }

    #[test]
    fn count_of_three_cups() {
        let s = scene(vec![
            obj(0, Category::Cup, Color::Red, (0, 0)),
            obj(1, Category::Cup, Color::Blue, (1, 0)),
            obj(2, Category::Cup, Color::Red, (2, 0)),
        ]);
        let q = question(QuestionKind::Count, Category::Cup);
        let spec = grounded_answers(&s, &q);
        assert_eq!(spec.canonical_claim(), &Claim::Count { n: 3, color: None, category: Category::Cup });
    }

    #[test]
    fn false_premise_requires_rejection() {
        let s = scene(vec![obj(0, Category::Cup, Color::Red, (0, 0))]);
        let q = generate_question(&s, QuestionKind::FalsePremise, 1).unwrap();
        let spec = grounded_answers(&s, &q);
        assert!(spec.premise_rejection_required);
        let v = judge_response(&s, &q, &spec.canonical_response());
        assert!(v.grounded && v.premise_rejected);
    }

    #[test]
    fn illegible_label_requires_abstention() {
        let mut o = obj(0, Category::Book, Color::Red, (0, 0));
        o.text_label = Some(TextLabel { glyphs: vec![3, 4, 5], legible: 0 });
        let s = scene(vec![o]);
        let q = generate_question(&s, QuestionKind::OcrRead, 0).unwrap();
        let spec = grounded_answers(&s, &q);
        assert!(spec.abstain_required);
    }

    #[test]
    fn nonexistent_object_claim_is_rejected() {
        let s = scene(vec![obj(0, Category::Cup, Color::Red, (0, 0))]);
        let q = question(QuestionKind::Existence, Category::Cup);
        let r = Response::from_claims(&[Claim::Exists(Category::Cup), Claim::Exists(Category::Dog)]);
        let v = judge_response(&s, &q, &r);
        assert!(!v.grounded);
        assert_eq!(v.invalid_claims.len(), 1);
        assert_eq!(v.invalid_claims[0].reason, "nonexistent object");
    }

    #[test]
    fn count_plus_two_attributes_validates_three() {
        let s = scene(vec![obj(0, Category::Cup, Color::Red, (0, 0)), obj(1, Category::Dog, Color::Blue, (4, 0))]);
        let q = question(QuestionKind::Count, Category::Cup);
        let r = Response::from_claims(&[
            Claim::Count { n: 1, color: None, category: Category::Cup },
            Claim::Attr { value: AttrValue::Color(Color::Red), category: Category::Cup },
            Claim::Attr { value: AttrValue::Material(Material::Metal), category: Category::Cup },
        ]);
        let v = judge_response(&s, &q, &r);
        // Expected count from walking the claim list by hand: all three hold.
        assert!(v.grounded);
        assert_eq!(v.validated_claims, 3);
    }

    #[test]
    fn relation_accepts_any_satisfying_subject() {
        let s = scene(vec![
            obj(0, Category::Cup, Color::Red, (0, 2)),
            obj(1, Category::Dog, Color::Red, (1, 5)),
            obj(2, Category::Ball, Color::Red, (5, 2)),
        ]);
        let mut q = question(QuestionKind::SpatialRelation, Category::Ball);
        q.relation = Some(Relation::LeftOf);
        for subject in [Category::Cup, Category::Dog] {
            let r = Response::from_claims(&[Claim::Rel { subject, relation: Relation::LeftOf, anchor: Category::Ball }]);
            assert!(judge_response(&s, &q, &r).grounded);
        }
        let wrong = Response::from_claims(&[Claim::Rel {
            subject: Category::Cup,
            relation: Relation::RightOf,
            anchor: Category::Ball,
        }]);
        assert!(!judge_response(&s, &q, &wrong).grounded);
    }

    #[test]
    fn hidden_objects_only_exist() {
        let mut o = obj(0, Category::Cat, Color::Green, (0, 0));
        o.occlusion = Occlusion::Hidden;
        let s = scene(vec![o, obj(1, Category::Cup, Color::Red, (2, 2))]);
        let q = question(QuestionKind::Existence, Category::Cat);
        assert!(judge_response(&s, &q, &Response::from_claims(&[Claim::Exists(Category::Cat)])).grounded);
        let attr = Claim::Attr { value: AttrValue::Color(Color::Green), category: Category::Cat };
        assert!(validate_claim(&s, &q, &grounded_answers(&s, &q), &attr).is_err());
    }

    #[test]
    fn self_consistency_on_generated_worlds() {
        let cfg = WorldConfig::default();
        for seed in 0..400 {
            for tier in DifficultyTier::ALL {
                let s = generate_scene(seed, tier, &cfg).unwrap();
                for kind in QuestionKind::ALL {
                    if let Ok(q) = generate_question(&s, kind, seed) {
                        let spec = grounded_answers(&s, &q);
                        let v = judge_response(&s, &q, &spec.canonical_response());
                        assert!(v.grounded, "{kind} on {seed}: {v:?}");
                        for c in &spec.accepted {
                            assert!(judge_response(&s, &q, &Response::from_claims([c])).grounded);
                        }
                    }
                }
            }
        }
    }
}
