use serde::{Deserialize, Serialize};

use super::params::ModelConfig;
use crate::error::{Error, Result};
use crate::microworld::vocab::{self, special, Occlusion, Token};
use crate::microworld::{Question, Scene};

/// `[lighting] [object descriptors] <sep> [question] <ans>`; the answer
/// region starts right after `<ans>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PromptEncoding {
    pub tokens: Vec<Token>,
}

impl PromptEncoding {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Serializes what a viewer can see of the scene, then the question.
///
/// Visible object: `[partial] [label g..] size material col row color cat`,
/// with illegible glyphs shown as `?` and the color masked on partially
/// occluded objects in dim light. Hidden objects render as `col row <mask> cat`.
pub fn encode_input(scene: &Scene, question: &Question, config: &ModelConfig) -> Result<PromptEncoding> {
    let mut t = Vec::with_capacity(64);
    t.push(vocab::lighting(scene.lighting));
    // The category closes each descriptor and the attributes sit at fixed
    // offsets before it, so one hop from the category reaches them.
    for o in &scene.objects {
        let (col, row) = (vocab::number(o.position.0 as usize), vocab::number(o.position.1 as usize));
        if o.occlusion == Occlusion::Hidden {
            t.extend([col, row, special::MASK, vocab::category(o.category)]);
            continue;
        }
        if o.occlusion == Occlusion::Partial {
            t.push(special::PARTIAL);
        }
        if let Some(label) = scene.observed_label(o) {
            t.push(special::LABEL);
            t.extend(
                label
                    .glyphs
                    .iter()
                    .enumerate()
                    .map(|(i, &g)| if label.is_legible(i) { vocab::glyph(g) } else { special::ILLEGIBLE }),
            );
        }
        t.push(vocab::size(o.size));
        t.push(vocab::material(o.material));
        t.extend([col, row]);
        t.push(scene.observed_color(o).map_or(special::MASK, vocab::color));
        t.push(vocab::category(o.category));
    }
    t.push(special::SEP);
    t.extend_from_slice(&question.tokens);
    t.push(special::ANS);
    let len = t.len() + config.max_answer_len;
    if len > config.max_len {
        return Err(Error::Length { len, max: config.max_len });
    }
    Ok(PromptEncoding { tokens: t })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microworld::scene::{DifficultyTier, SceneObject, WorldConfig};
    use crate::microworld::vocab::{Category, Color, Lighting, Material, Size};
    use crate::microworld::{generate_question, generate_scene, QuestionKind};

    fn object(color: Color, occlusion: Occlusion) -> SceneObject {
        SceneObject {
            id: 0,
            category: Category::Cup,
            color,
            size: Size::Small,
            material: Material::Glass,
            position: (2, 3),
            occlusion,
            text_label: None,
        }
    }

    fn scene(objects: Vec<SceneObject>) -> Scene {
        Scene { seed: 0, grid: (8, 8), objects, lighting: Lighting::Bright, tier: DifficultyTier::Easy }
    }

    fn question(s: &Scene) -> Question {
        generate_question(s, QuestionKind::Existence, 0).unwrap()
    }

    #[test]
    fn minimal_scene_prompt() {
        let q = question(&scene(vec![object(Color::Red, Occlusion::Visible)]));
        let p = encode_input(&scene(vec![]), &q, &ModelConfig::default()).unwrap();
        assert_eq!(p.tokens[0], special::BRIGHT);
        assert_eq!(p.tokens[1], special::SEP);
        assert_eq!(p.tokens.len(), 2 + q.tokens.len() + 1);
    }

    #[test]
    fn hidden_object_attributes_masked() {
        let s = scene(vec![object(Color::Red, Occlusion::Hidden)]);
        let p = encode_input(&s, &question(&s), &ModelConfig::default()).unwrap();
        assert!(!p.tokens.contains(&vocab::color(Color::Red)));
        assert!(!p.tokens.contains(&vocab::material(Material::Glass)));
        assert!(p.tokens.contains(&special::MASK));
    }

    #[test]
    fn one_color_change_one_token_diff() {
        let cfg = WorldConfig::default();
        for seed in 0..100 {
            let a = generate_scene(seed, DifficultyTier::Hard, &cfg).unwrap();
            let Some(idx) = a.objects.iter().position(|o| a.observed_color(o).is_some()) else { continue };
            let mut b = a.clone();
            let old = b.objects[idx].color;
            b.objects[idx].color = Color::ALL[(old.index() + 1) % 8];
            let q = question(&a);
            let pa = encode_input(&a, &q, &ModelConfig::default()).unwrap();
            let pb = encode_input(&b, &q, &ModelConfig::default()).unwrap();
            assert_eq!(pa.len(), pb.len());
            let diffs = pa.tokens.iter().zip(&pb.tokens).filter(|(x, y)| x != y).count();
            assert_eq!(diffs, 1);
        }
    }

    #[test]
    fn every_generated_item_fits_default_context() {
        let cfg = WorldConfig::default();
        let mc = ModelConfig::default();
        for seed in 0..2000 {
            for tier in DifficultyTier::ALL {
                let s = generate_scene(seed, tier, &cfg).unwrap();
                for kind in QuestionKind::ALL {
                    if let Ok(q) = generate_question(&s, kind, seed) {
                        encode_input(&s, &q, &mc).unwrap();
                    }
                }
            }
        }
    }

    #[test]
    fn overflow_is_a_length_error() {
        let s = scene(vec![object(Color::Red, Occlusion::Visible)]);
        let mc = ModelConfig { max_len: 12, max_answer_len: 8, ..ModelConfig::default() };
        assert!(matches!(encode_input(&s, &question(&s), &mc), Err(Error::Length { .. })));
    }
}
