use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::microworld::{generate_question, generate_scene, DifficultyTier, Question, QuestionKind, Scene, WorldConfig};
use crate::seeds;

const SCENE_ATTEMPTS: u64 = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub id: u64,
    pub scene: Scene,
    pub question: Question,
}

/// Relative weights of (kind, tier) cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strata {
    pub cells: Vec<(QuestionKind, DifficultyTier, f64)>,
}

impl Default for Strata {
    fn default() -> Self {
        let mut cells = Vec::new();
        for &k in &QuestionKind::ALL {
            for &t in &DifficultyTier::ALL {
                cells.push((k, t, 1.0));
            }
        }
        Strata { cells }
    }
}

impl Strata {
    /// Largest-remainder allocation of `n` items to the cells.
    pub fn allocate(&self, n: usize) -> Result<Vec<usize>> {
        if self.cells.is_empty() || self.cells.iter().any(|c| !(c.2 >= 0.0 && c.2.is_finite())) {
            return Err(Error::Argument("strata need finite nonnegative weights".into()));
        }
        let total: f64 = self.cells.iter().map(|c| c.2).sum();
        if !(total > 0.0) {
            return Err(Error::Argument("strata have no mass".into()));
        }
        let exact: Vec<f64> = self.cells.iter().map(|c| n as f64 * c.2 / total).collect();
        let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
        let mut rest: Vec<usize> = (0..exact.len()).collect();
        rest.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
        let short = n - counts.iter().sum::<usize>();
        for &i in rest.iter().take(short) {
            counts[i] += 1;
        }
        Ok(counts)
    }
}

/// A stratified held-out set over evaluation-range scene seeds.
pub fn build_evalset(n: usize, seed: u64, strata: &Strata, world: &WorldConfig) -> Result<Vec<EvalItem>> {
    if n == 0 {
        return Err(Error::Argument("n must be at least 1".into()));
    }
    world.validate()?;
    let counts = strata.allocate(n)?;
    let mut items = Vec::with_capacity(n);
    for (cell, (&(kind, tier, _), &count)) in strata.cells.iter().zip(&counts).enumerate() {
        for j in 0..count as u64 {
            let mut found = None;
            for attempt in 0..SCENE_ATTEMPTS {
                let scene = generate_scene(seeds::eval_seed(&[seed, cell as u64, j, attempt]), tier, world)?;
                if let Ok(q) = generate_question(&scene, kind, seed) {
                    found = Some((scene, q));
                    break;
                }
            }
            let (scene, question) = found
                .ok_or_else(|| Error::Argument(format!("no scene supports {kind} at tier {tier:?}")))?;
            items.push(EvalItem { id: items.len() as u64, scene, question });
        }
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{BTreeMap, HashSet};

    #[test]
    fn default_size_and_strata() {
        let items = build_evalset(839, 7, &Strata::default(), &WorldConfig::default()).unwrap();
        assert_eq!(items.len(), 839);
        let mut per: BTreeMap<(QuestionKind, DifficultyTier), usize> = BTreeMap::new();
        for it in &items {
            *per.entry((it.question.kind, it.scene.tier)).or_default() += 1;
            assert_ne!(it.scene.seed & seeds::EVAL_SEED_BIT, 0);
        }
        let target = 839.0 / 16.0;
        assert_eq!(per.len(), 16);
        for c in per.values() {
            assert!((*c as f64 - target).abs() <= 1.0);
        }
        assert_eq!(items, build_evalset(839, 7, &Strata::default(), &WorldConfig::default()).unwrap());
    }

    #[test]
    fn disjoint_from_training_seeds() {
        let d1 = crate::dataforge::build_stage1(2000, 7, &Default::default()).unwrap();
        let train: HashSet<(u64, DifficultyTier, QuestionKind)> =
            d1.iter().map(|s| (s.scene.seed, s.tier, s.question.kind)).collect();
        let items = build_evalset(400, 7, &Strata::default(), &WorldConfig::default()).unwrap();
        assert!(items.iter().all(|i| !train.contains(&(i.scene.seed, i.scene.tier, i.question.kind))));
    }

    #[test]
    fn infeasible_strata() {
        assert!(Strata { cells: vec![] }.allocate(5).is_err());
        assert!(Strata { cells: vec![(QuestionKind::Count, DifficultyTier::Easy, 0.0)] }.allocate(5).is_err());
        // No scene of a one-category world can hold a relation question.
        let world = WorldConfig { categories: vec![crate::microworld::vocab::Category::Cup], ..WorldConfig::default() };
        let s = Strata { cells: vec![(QuestionKind::SpatialRelation, DifficultyTier::Easy, 1.0)] };
        assert!(matches!(build_evalset(3, 1, &s, &world), Err(Error::Argument(_))));
    }

    #[test]
    fn allocation_is_within_one() {
        let s = Strata {
            cells: vec![
                (QuestionKind::Count, DifficultyTier::Easy, 1.0),
                (QuestionKind::Count, DifficultyTier::Hard, 2.0),
                (QuestionKind::Existence, DifficultyTier::Easy, 3.5),
            ],
        };
        for n in 1..200 {
            let c = s.allocate(n).unwrap();
            assert_eq!(c.iter().sum::<usize>(), n);
            for (k, w) in c.iter().zip([1.0, 2.0, 3.5]) {
                assert!((*k as f64 - n as f64 * w / 6.5).abs() < 1.0);
            }
        }
    }
}
