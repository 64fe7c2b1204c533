use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{Category, Color, Lighting, Material, Occlusion, Size, GLYPHS, MAX_NUMBER};
use crate::error::{Error, Result};
use crate::seeds;

/// Difficulty tier; the hard tier houses the latent factors the second
/// training stage targets (clutter, occlusion, dim light, partial text).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DifficultyTier {
    Easy,
    Hard,
}

impl DifficultyTier {
    pub const ALL: [DifficultyTier; 2] = [DifficultyTier::Easy, DifficultyTier::Hard];

    fn salt(self) -> u64 {
        match self {
            DifficultyTier::Easy => 0xE45,
            DifficultyTier::Hard => 0x4A2D,
        }
    }
}

/// Per-tier generation knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierProfile {
    pub min_objects: usize,
    pub max_objects: usize,
    pub partial_prob: f64,
    pub hidden_prob: f64,
    pub dim_prob: f64,
    pub unknown_material_prob: f64,
    pub glyph_legibility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub grid_w: usize,
    pub grid_h: usize,
    pub categories: Vec<Category>,
    pub easy: TierProfile,
    pub hard: TierProfile,
    pub label_prob: f64,
    pub max_labels: usize,
    pub min_label_len: usize,
    pub max_label_len: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            grid_w: 8,
            grid_h: 8,
            categories: Category::ALL.to_vec(),
            easy: TierProfile {
                min_objects: 2,
                max_objects: 5,
                partial_prob: 0.10,
                hidden_prob: 0.05,
                dim_prob: 0.15,
                unknown_material_prob: 0.10,
                glyph_legibility: 0.85,
            },
            hard: TierProfile {
                min_objects: 4,
                max_objects: 9,
                partial_prob: 0.35,
                hidden_prob: 0.12,
                dim_prob: 0.5,
                unknown_material_prob: 0.15,
                glyph_legibility: 0.6,
            },
            label_prob: 0.3,
            max_labels: 2,
            min_label_len: 2,
            max_label_len: 4,
        }
    }
}

impl WorldConfig {
    pub fn profile(&self, tier: DifficultyTier) -> &TierProfile {
        match tier {
            DifficultyTier::Easy => &self.easy,
            DifficultyTier::Hard => &self.hard,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.grid_w < 4 || self.grid_h < 4 {
            return bad(format!("grid {}x{} smaller than 4x4", self.grid_w, self.grid_h));
        }
        if self.grid_w > MAX_NUMBER + 1 || self.grid_h > MAX_NUMBER + 1 {
            return bad(format!("grid {}x{} exceeds coordinate vocabulary", self.grid_w, self.grid_h));
        }
        if self.categories.is_empty() {
            return bad("category list is empty".into());
        }
        for (name, p) in [("easy", &self.easy), ("hard", &self.hard)] {
            if p.min_objects == 0 || p.min_objects > p.max_objects {
                return bad(format!("{name}: object bounds {}..={} invalid", p.min_objects, p.max_objects));
            }
            if p.max_objects > MAX_NUMBER || p.max_objects > self.grid_w * self.grid_h {
                return bad(format!("{name}: max_objects {} too large", p.max_objects));
            }
            for (k, v) in [
                ("partial_prob", p.partial_prob),
                ("hidden_prob", p.hidden_prob),
                ("dim_prob", p.dim_prob),
                ("unknown_material_prob", p.unknown_material_prob),
                ("glyph_legibility", p.glyph_legibility),
            ] {
                if !(0.0..=1.0).contains(&v) {
                    return bad(format!("{name}.{k} = {v} outside [0,1]"));
                }
            }
            if p.partial_prob + p.hidden_prob > 1.0 {
                return bad(format!("{name}: occlusion probabilities sum above 1"));
            }
        }
        if self.min_label_len == 0 || self.min_label_len > self.max_label_len {
            return bad("label length bounds invalid".into());
        }
        Ok(())
    }
}

/// Printed text on an object. Bit `i` of `legible` is set when glyph `i`
/// can be read.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TextLabel {
    pub glyphs: Vec<u8>,
    pub legible: u16,
}

impl TextLabel {
    pub fn is_legible(&self, i: usize) -> bool {
        self.legible & (1 << i) != 0
    }

    pub fn any_legible(&self) -> bool {
        (0..self.glyphs.len()).any(|i| self.is_legible(i))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: u32,
    pub category: Category,
    pub color: Color,
    pub size: Size,
    pub material: Material,
    /// (col, row)
    pub position: (u8, u8),
    pub occlusion: Occlusion,
    pub text_label: Option<TextLabel>,
}

impl SceneObject {
    pub fn is_hidden(&self) -> bool {
        self.occlusion == Occlusion::Hidden
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Scene {
    pub seed: u64,
    /// (width, height)
    pub grid: (usize, usize),
    pub objects: Vec<SceneObject>,
    pub lighting: Lighting,
    pub tier: DifficultyTier,
}

impl Scene {
    /// What a viewer can tell about an object's color.
    pub fn observed_color(&self, o: &SceneObject) -> Option<Color> {
        match (o.occlusion, self.lighting) {
            (Occlusion::Visible, _) => Some(o.color),
            (Occlusion::Partial, Lighting::Bright) => Some(o.color),
            _ => None,
        }
    }

    pub fn observed_material(&self, o: &SceneObject) -> Option<Material> {
        if o.is_hidden() || o.material == Material::Unknown {
            None
        } else {
            Some(o.material)
        }
    }

    pub fn observed_size(&self, o: &SceneObject) -> Option<Size> {
        (!o.is_hidden()).then_some(o.size)
    }

    /// Label as rendered: `None` for hidden objects or unlabeled ones.
    pub fn observed_label<'a>(&self, o: &'a SceneObject) -> Option<&'a TextLabel> {
        if o.is_hidden() {
            None
        } else {
            o.text_label.as_ref()
        }
    }

    pub fn of_category(&self, c: Category) -> impl Iterator<Item = &SceneObject> {
        self.objects.iter().filter(move |o| o.category == c)
    }

    pub fn non_hidden(&self) -> impl Iterator<Item = &SceneObject> {
        self.objects.iter().filter(|o| !o.is_hidden())
    }

    pub fn count(&self, c: Category) -> usize {
        self.of_category(c).count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("scene serializes")
    }
}

/// Procedurally generates a scene; a pure function of its arguments.
pub fn generate_scene(seed: u64, tier: DifficultyTier, config: &WorldConfig) -> Result<Scene> {
    config.validate()?;
    let profile = config.profile(tier);
    let mut rng = seeds::rng(&[seed, tier.salt(), 0x5CE4E]);

    let n = rng.gen_range(profile.min_objects..=profile.max_objects);
    let lighting = if rng.gen_bool(profile.dim_prob) { Lighting::Dim } else { Lighting::Bright };

    let mut cells: Vec<(u8, u8)> = (0..config.grid_h)
        .flat_map(|r| (0..config.grid_w).map(move |c| (c as u8, r as u8)))
        .collect();
    cells.shuffle(&mut rng);
    let mut cells = cells[..n].to_vec();
    cells.sort_by_key(|&(c, r)| (r, c));

    let mut labels_left = config.max_labels;
    let objects = cells
        .into_iter()
        .enumerate()
        .map(|(i, position)| {
            let category = *config.categories.choose(&mut rng).expect("nonempty");
            let color = Color::ALL[rng.gen_range(0..Color::ALL.len())];
            let size = Size::ALL[rng.gen_range(0..Size::ALL.len())];
            let material = if rng.gen_bool(profile.unknown_material_prob) {
                Material::Unknown
            } else {
                Material::ALL[rng.gen_range(0..Material::ALL.len() - 1)]
            };
            let u: f64 = rng.gen();
            let occlusion = if u < profile.hidden_prob {
                Occlusion::Hidden
            } else if u < profile.hidden_prob + profile.partial_prob {
                Occlusion::Partial
            } else {
                Occlusion::Visible
            };
            let text_label = if labels_left > 0 && rng.gen_bool(config.label_prob) {
                labels_left -= 1;
                let len = rng.gen_range(config.min_label_len..=config.max_label_len);
                let glyphs: Vec<u8> = (0..len).map(|_| rng.gen_range(0..GLYPHS as u8)).collect();
                let mut legible = 0u16;
                for i in 0..len {
                    if rng.gen_bool(profile.glyph_legibility) {
                        legible |= 1 << i;
                    }
                }
                Some(TextLabel { glyphs, legible })
            } else {
                None
            };
            SceneObject { id: i as u32, category, color, size, material, position, occlusion, text_label }
        })
        .collect();

    Ok(Scene { seed, grid: (config.grid_w, config.grid_h), objects, lighting, tier })
}
