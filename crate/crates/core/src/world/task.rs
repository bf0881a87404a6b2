//! Task sampling over the eight in-context generation and editing kinds.

use std::fmt;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{caption_of, AttributeSlot, EntityInstance, Feature, ImageVec, SceneSpec, World, WorldError};
use crate::iccot::ReasoningTrace;

pub const MAX_REFS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskKind {
    SubjectDriven,
    SubjectSubject,
    SubjectScene,
    RefSubjectAdd,
    RefSubjectReplace,
    RefAttributeLocal,
    RefAttributeGlobal,
    RefSceneEdit,
}

impl TaskKind {
    pub const ALL: [TaskKind; 8] = [
        TaskKind::SubjectDriven,
        TaskKind::SubjectSubject,
        TaskKind::SubjectScene,
        TaskKind::RefSubjectAdd,
        TaskKind::RefSubjectReplace,
        TaskKind::RefAttributeLocal,
        TaskKind::RefAttributeGlobal,
        TaskKind::RefSceneEdit,
    ];

    pub fn is_editing(self) -> bool {
        !matches!(self, TaskKind::SubjectDriven | TaskKind::SubjectSubject | TaskKind::SubjectScene)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// A reference image with its hidden ground-truth spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub image: ImageVec,
    pub spec: SceneSpec,
}

/// What the instruction asks for, in terms of reference indices (0-based).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Intent {
    SubjectDriven { subject: usize, scene: usize },
    SubjectSubject { subjects: Vec<usize>, scene: usize },
    SubjectScene { subjects: Vec<usize>, scene_ref: usize },
    RefSubjectAdd { edit: usize, subject: usize },
    RefSubjectReplace { edit: usize, subject: usize, position: usize },
    RefAttributeLocal { edit: usize, source: usize, position: usize, slot: AttributeSlot },
    RefAttributeGlobal { edit: usize, source: usize },
    RefSceneEdit { edit: usize, scene_ref: usize },
}

/// Features the output must show, split by what they measure.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Requirements {
    /// Properties the instruction asks for.
    pub prompt_following: Vec<Feature>,
    /// Identity and attribute features carried over from the references.
    pub subject_consistency: Vec<Feature>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub kind: TaskKind,
    pub refs: Vec<Reference>,
    pub instruction: String,
    pub intent: Intent,
    pub gt_spec: SceneSpec,
    pub gt_image: ImageVec,
    pub gt_trace: ReasoningTrace,
    pub requirements: Requirements,
}

impl TaskInstance {
    /// True when the instruction does not name any image index.
    pub fn is_index_free(&self) -> bool {
        !self.instruction.split_whitespace().any(|w| w == "image")
    }

    pub fn ref_images(&self) -> Vec<ImageVec> {
        self.refs.iter().map(|r| r.image.clone()).collect()
    }
}

fn words_of_identity(e: &EntityInstance) -> &'static str {
    e.identity_word()
}

impl World {
    /// Samples a task of the given kind.
    pub fn sample_task(&self, kind: TaskKind, rng: &mut impl Rng) -> Result<TaskInstance, WorldError> {
        let cfg = self.config();
        let incompatible = |reason: &str| WorldError::IncompatibleKind { kind, reason: reason.into() };
        let mut specs: Vec<SceneSpec>;
        let intent = match kind {
            TaskKind::SubjectDriven => {
                let subject = self.random_spec_with(rng, 1);
                let scene = other_than(rng, cfg.scenes, subject.scene);
                specs = vec![subject];
                Intent::SubjectDriven { subject: 0, scene }
            }
            TaskKind::SubjectSubject => {
                if cfg.slots < 2 {
                    return Err(incompatible("needs at least two position slots"));
                }
                let k = rng.random_range(2..=cfg.slots.min(3));
                specs = self.subjects_at_distinct_positions(rng, k);
                Intent::SubjectSubject { subjects: (0..k).collect(), scene: rng.random_range(0..cfg.scenes) }
            }
            TaskKind::SubjectScene => {
                let k = rng.random_range(1..=cfg.slots.min(MAX_REFS - 1));
                specs = self.subjects_at_distinct_positions(rng, k);
                let scene_ref = rng.random_range(0..=k);
                specs.insert(scene_ref, SceneSpec::new(rng.random_range(0..cfg.scenes), vec![]));
                let subjects = (0..=k).filter(|&i| i != scene_ref).collect();
                Intent::SubjectScene { subjects, scene_ref }
            }
            TaskKind::RefSubjectAdd => {
                if cfg.slots < 2 {
                    return Err(incompatible("needs at least two position slots"));
                }
                let n = rng.random_range(1..cfg.slots);
                let base = self.random_spec_with(rng, n);
                let free: Vec<usize> = (0..cfg.slots).filter(|p| base.entity_at(*p).is_none()).collect();
                let position = *free.choose(rng).expect("at least one free slot");
                let entity = self.random_entity(rng, position);
                let subject = SceneSpec::new(rng.random_range(0..cfg.scenes), vec![entity]);
                let (specs_, edit, other) = order_pair(rng, base, subject);
                specs = specs_;
                Intent::RefSubjectAdd { edit, subject: other }
            }
            TaskKind::RefSubjectReplace => {
                let base = self.distinct_identity_spec(rng);
                let target = base.entities.choose(rng).expect("non-empty").clone();
                let used: Vec<usize> = base.entities.iter().map(|e| e.global_identity(cfg)).collect();
                let candidates: Vec<usize> = (0..cfg.identities()).filter(|i| !used.contains(i)).collect();
                let new_id = *candidates.choose(rng).ok_or_else(|| incompatible("identity vocabulary too small"))?;
                let p = rng.random_range(0..cfg.slots);
                let mut sub = self.random_entity(rng, p);
                sub = EntityInstance::from_global(cfg, new_id, sub.attributes, sub.position);
                let subject = SceneSpec::new(rng.random_range(0..cfg.scenes), vec![sub]);
                let (specs_, edit, other) = order_pair(rng, base, subject);
                specs = specs_;
                Intent::RefSubjectReplace { edit, subject: other, position: target.position }
            }
            TaskKind::RefAttributeLocal => {
                let base = self.distinct_identity_spec(rng);
                let target = base.entities.choose(rng).expect("non-empty").clone();
                let slot = *[AttributeSlot::Color, AttributeSlot::Texture, AttributeSlot::Pose].choose(rng).unwrap();
                let target_id = target.global_identity(cfg);
                let source_id = other_than(rng, cfg.identities(), target_id);
                let p = rng.random_range(0..cfg.slots);
                let mut src = self.random_entity(rng, p);
                src.attributes.set(slot, other_than(rng, cfg.attribute_size(slot), target.attributes.get(slot)));
                src = EntityInstance::from_global(cfg, source_id, src.attributes, src.position);
                let source = SceneSpec::new(rng.random_range(0..cfg.scenes), vec![src]);
                let (specs_, edit, other) = order_pair(rng, base, source);
                specs = specs_;
                Intent::RefAttributeLocal { edit, source: other, position: target.position, slot }
            }
            TaskKind::RefAttributeGlobal => {
                let n = rng.random_range(1..=cfg.slots);
                let base = self.random_spec_with(rng, n);
                let p = rng.random_range(0..cfg.slots);
                let mut src = self.random_entity(rng, p);
                let current = base.entities[0].attributes.style;
                src.attributes.style = other_than(rng, cfg.styles, current);
                let source = SceneSpec::new(rng.random_range(0..cfg.scenes), vec![src]);
                let (specs_, edit, other) = order_pair(rng, base, source);
                specs = specs_;
                Intent::RefAttributeGlobal { edit, source: other }
            }
            TaskKind::RefSceneEdit => {
                let n = rng.random_range(1..=cfg.slots);
                let base = self.random_spec_with(rng, n);
                let scene = SceneSpec::new(other_than(rng, cfg.scenes, base.scene), vec![]);
                let (specs_, edit, other) = order_pair(rng, base, scene);
                specs = specs_;
                Intent::RefSceneEdit { edit, scene_ref: other }
            }
        };
        let refs = specs
            .into_iter()
            .map(|spec| Ok(Reference { image: self.render(&spec)?, spec }))
            .collect::<Result<Vec<_>, WorldError>>()?;
        let index_free = rng.random_bool(cfg.ambiguity_rate);
        let instruction = self.instruction(&intent, &refs, index_free);
        let gt_spec = self.apply_intent(&intent, &refs);
        let gt_image = self.render(&gt_spec)?;
        let requirements = requirements(&intent, &refs, &gt_spec, self);
        let mut task = TaskInstance {
            kind,
            refs,
            instruction,
            intent,
            gt_spec,
            gt_image,
            gt_trace: ReasoningTrace::new::<&str>("placeholder", &[]).expect("valid"),
            requirements,
        };
        task.gt_trace = oracle_trace(self, &task);
        Ok(task)
    }

    fn subjects_at_distinct_positions(&self, rng: &mut impl Rng, k: usize) -> Vec<SceneSpec> {
        let mut positions: Vec<usize> = (0..self.config().slots).collect();
        positions.shuffle(rng);
        positions[..k]
            .iter()
            .map(|&p| {
                let entity = self.random_entity(rng, p);
                SceneSpec::new(rng.random_range(0..self.config().scenes), vec![entity])
            })
            .collect()
    }

    /// A spec with 1..=slots entities whose identities are pairwise distinct.
    fn distinct_identity_spec(&self, rng: &mut impl Rng) -> SceneSpec {
        let cfg = self.config();
        let n = rng.random_range(1..=cfg.slots.min(cfg.identities()));
        let mut ids: Vec<usize> = (0..cfg.identities()).collect();
        ids.shuffle(rng);
        let mut spec = self.random_spec_with(rng, n);
        for (e, &id) in spec.entities.iter_mut().zip(&ids) {
            *e = EntityInstance::from_global(cfg, id, e.attributes, e.position);
        }
        spec
    }

    /// Ground-truth target spec implied by the intent.
    pub fn apply_intent(&self, intent: &Intent, refs: &[Reference]) -> SceneSpec {
        let cfg = self.config();
        let subjects_of = |idx: &[usize]| -> Vec<EntityInstance> {
            idx.iter().flat_map(|&i| refs[i].spec.entities.iter().cloned()).collect()
        };
        match intent {
            Intent::SubjectDriven { subject, scene } => SceneSpec::new(*scene, subjects_of(&[*subject])),
            Intent::SubjectSubject { subjects, scene } => SceneSpec::new(*scene, subjects_of(subjects)),
            Intent::SubjectScene { subjects, scene_ref } => {
                SceneSpec::new(refs[*scene_ref].spec.scene, subjects_of(subjects))
            }
            Intent::RefSubjectAdd { edit, subject } => {
                let mut out = refs[*edit].spec.entities.clone();
                out.extend(subjects_of(&[*subject]));
                SceneSpec::new(refs[*edit].spec.scene, out)
            }
            Intent::RefSubjectReplace { edit, subject, position } => {
                let new_id = refs[*subject].spec.entities[0].global_identity(cfg);
                let mut out = refs[*edit].spec.clone();
                for e in out.entities.iter_mut().filter(|e| e.position == *position) {
                    *e = EntityInstance::from_global(cfg, new_id, e.attributes, e.position);
                }
                out
            }
            Intent::RefAttributeLocal { edit, source, position, slot } => {
                let value = refs[*source].spec.entities[0].attributes.get(*slot);
                let mut out = refs[*edit].spec.clone();
                for e in out.entities.iter_mut().filter(|e| e.position == *position) {
                    e.attributes.set(*slot, value);
                }
                out
            }
            Intent::RefAttributeGlobal { edit, source } => {
                let style = refs[*source].spec.entities[0].attributes.style;
                let mut out = refs[*edit].spec.clone();
                for e in out.entities.iter_mut() {
                    e.attributes.style = style;
                }
                out
            }
            Intent::RefSceneEdit { edit, scene_ref } => {
                SceneSpec::new(refs[*scene_ref].spec.scene, refs[*edit].spec.entities.clone())
            }
        }
    }

    fn instruction(&self, intent: &Intent, refs: &[Reference], index_free: bool) -> String {
        let id = |r: usize| words_of_identity(&refs[r].spec.entities[0]);
        let scene_word = |s: usize| self.scene_word(s);
        let img = |r: usize| format!("image {}", r + 1);
        match intent {
            Intent::SubjectDriven { subject, scene } => {
                if index_free {
                    format!("show it in the {}", scene_word(*scene))
                } else {
                    format!("show the {} from {} in the {}", id(*subject), img(*subject), scene_word(*scene))
                }
            }
            Intent::SubjectSubject { subjects, scene } => {
                if index_free {
                    format!("put them together in the {}", scene_word(*scene))
                } else {
                    let parts: Vec<String> =
                        subjects.iter().map(|&r| format!("the {} from {}", id(r), img(r))).collect();
                    format!("combine {} in the {}", parts.join(" and "), scene_word(*scene))
                }
            }
            Intent::SubjectScene { subjects, scene_ref } => {
                if index_free {
                    "put them into that scene".to_string()
                } else {
                    let parts: Vec<String> =
                        subjects.iter().map(|&r| format!("the {} from {}", id(r), img(r))).collect();
                    format!("place {} into the scene of {}", parts.join(" and "), img(*scene_ref))
                }
            }
            Intent::RefSubjectAdd { edit, subject } => {
                if index_free {
                    format!("add the {} to the picture", id(*subject))
                } else {
                    format!("add the {} from {} to {}", id(*subject), img(*subject), img(*edit))
                }
            }
            Intent::RefSubjectReplace { edit, subject, position } => {
                let old = refs[*edit].spec.entity_at(*position).expect("target exists").identity_word();
                if index_free {
                    format!("replace the {old} with the {}", id(*subject))
                } else {
                    format!("replace the {old} in {} with the {} from {}", img(*edit), id(*subject), img(*subject))
                }
            }
            Intent::RefAttributeLocal { edit, source, position, slot } => {
                let target = refs[*edit].spec.entity_at(*position).expect("target exists").identity_word();
                if index_free {
                    format!("give the {target} the {slot} of the {}", id(*source))
                } else {
                    format!("give the {target} in {} the {slot} of the {} from {}", img(*edit), id(*source), img(*source))
                }
            }
            Intent::RefAttributeGlobal { edit, source } => {
                if index_free {
                    "render it in that style".to_string()
                } else {
                    format!("render {} in the style of {}", img(*edit), img(*source))
                }
            }
            Intent::RefSceneEdit { edit, scene_ref } => {
                if index_free {
                    "change the background to that scene".to_string()
                } else {
                    format!("move the content of {} into the scene of {}", img(*edit), img(*scene_ref))
                }
            }
        }
    }
}

/// Picks a uniform value in `0..n` different from `avoid`.
fn other_than(rng: &mut impl Rng, n: usize, avoid: usize) -> usize {
    let v = rng.random_range(0..n - 1);
    if v >= avoid {
        v + 1
    } else {
        v
    }
}

/// Puts the image to edit first or second with equal probability.
fn order_pair(rng: &mut impl Rng, edit: SceneSpec, other: SceneSpec) -> (Vec<SceneSpec>, usize, usize) {
    if rng.random_bool(0.5) {
        (vec![edit, other], 0, 1)
    } else {
        (vec![other, edit], 1, 0)
    }
}

fn requirements(intent: &Intent, refs: &[Reference], gt: &SceneSpec, world: &World) -> Requirements {
    let cfg = world.config();
    let identity_at = |position: usize| Feature::Identity {
        position,
        identity: gt.entity_at(position).expect("entity present").global_identity(cfg),
    };
    let subject_positions =
        |idx: &[usize]| -> Vec<usize> { idx.iter().flat_map(|&i| refs[i].spec.entities.iter().map(|e| e.position)).collect() };
    let mut pf = Vec::new();
    match intent {
        Intent::SubjectDriven { subject, scene } => {
            pf.push(Feature::Scene(*scene));
            pf.extend(subject_positions(&[*subject]).into_iter().map(identity_at));
        }
        Intent::SubjectSubject { subjects, scene } => {
            pf.push(Feature::Scene(*scene));
            pf.extend(subject_positions(subjects).into_iter().map(identity_at));
        }
        Intent::SubjectScene { subjects, scene_ref } => {
            pf.push(Feature::Scene(refs[*scene_ref].spec.scene));
            pf.extend(subject_positions(subjects).into_iter().map(identity_at));
        }
        Intent::RefSubjectAdd { subject, .. } => {
            pf.extend(subject_positions(&[*subject]).into_iter().map(identity_at));
        }
        Intent::RefSubjectReplace { position, .. } => pf.push(identity_at(*position)),
        Intent::RefAttributeLocal { position, slot, .. } => {
            let value = gt.entity_at(*position).expect("entity present").attributes.get(*slot);
            pf.push(Feature::Attribute { position: *position, slot: *slot, value });
        }
        Intent::RefAttributeGlobal { .. } => {
            for e in &gt.entities {
                pf.push(Feature::Attribute { position: e.position, slot: AttributeSlot::Style, value: e.attributes.style });
            }
        }
        Intent::RefSceneEdit { .. } => pf.push(Feature::Scene(gt.scene)),
    }
    let sc = gt.features(cfg).into_iter().filter(|f| !matches!(f, Feature::Scene(_))).collect();
    Requirements { prompt_following: pf, subject_consistency: sc }
}

/// Role phrases for each reference, in reference order.
pub fn relation_phrases(intent: &Intent, num_refs: usize) -> Vec<String> {
    let mut roles = vec![String::new(); num_refs];
    let set = |roles: &mut Vec<String>, i: usize, s: &str| roles[i] = s.to_string();
    match intent {
        Intent::SubjectDriven { subject, .. } => set(&mut roles, *subject, "provides the subject to depict"),
        Intent::SubjectSubject { subjects, .. } => {
            for &i in subjects {
                set(&mut roles, i, "provides a subject to combine");
            }
        }
        Intent::SubjectScene { subjects, scene_ref } => {
            for &i in subjects {
                set(&mut roles, i, "provides a subject to combine");
            }
            set(&mut roles, *scene_ref, "provides the scene background");
        }
        Intent::RefSubjectAdd { edit, subject } => {
            set(&mut roles, *edit, "is the image to edit");
            set(&mut roles, *subject, "provides the subject to add");
        }
        Intent::RefSubjectReplace { edit, subject, .. } => {
            set(&mut roles, *edit, "is the image to edit");
            set(&mut roles, *subject, "provides the replacement subject");
        }
        Intent::RefAttributeLocal { edit, source, slot, .. } => {
            set(&mut roles, *edit, "is the image to edit");
            roles[*source] = format!("provides the {slot} to transfer");
        }
        Intent::RefAttributeGlobal { edit, source } => {
            set(&mut roles, *edit, "is the image to edit");
            set(&mut roles, *source, "provides the style to apply");
        }
        Intent::RefSceneEdit { edit, scene_ref } => {
            set(&mut roles, *edit, "is the image to edit");
            set(&mut roles, *scene_ref, "provides the scene background");
        }
    }
    roles
}

/// Ground-truth reasoning derived from the references and the instruction's
/// intent only; the target image is never consulted.
pub fn oracle_trace(world: &World, task: &TaskInstance) -> ReasoningTrace {
    let target = world.apply_intent(&task.intent, &task.refs);
    let caption = caption_of(&target, world.config());
    ReasoningTrace::new(&caption, &relation_phrases(&task.intent, task.refs.len()))
        .expect("oracle traces are valid by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iccot::{parse_trace, render_trace};
    use crate::world::WorldConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn world() -> World {
        World::new(WorldConfig::default()).unwrap()
    }

    #[test]
    fn subject_driven_has_one_ref_and_a_new_scene() {
        let w = world();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let t = w.sample_task(TaskKind::SubjectDriven, &mut rng).unwrap();
            assert_eq!(t.refs.len(), 1);
            let subj = &t.refs[0].spec.entities[0];
            assert_eq!(t.gt_spec.entities, vec![subj.clone()]);
            assert_ne!(t.gt_spec.scene, t.refs[0].spec.scene);
            assert_eq!(t.gt_trace.relations(), ["provides the subject to depict"]);
        }
    }

    #[test]
    fn replace_swaps_one_identity() {
        let w = world();
        let cfg = w.config();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let t = w.sample_task(TaskKind::RefSubjectReplace, &mut rng).unwrap();
            assert_eq!(t.refs.len(), 2);
            let Intent::RefSubjectReplace { edit, subject, position } = t.intent.clone() else { panic!() };
            let new_id = t.refs[subject].spec.entities[0].global_identity(cfg);
            let mut expect = t.refs[edit].spec.clone();
            let e = expect.entities.iter_mut().find(|e| e.position == position).unwrap();
            *e = EntityInstance::from_global(cfg, new_id, e.attributes, position);
            assert_eq!(t.gt_spec, expect);
            let changed = t.refs[edit].spec.entities.iter().zip(&t.gt_spec.entities).filter(|(a, b)| a != b).count();
            assert_eq!(changed, 1);
        }
    }

    #[test]
    fn attribute_local_relation_names_the_slot() {
        let w = world();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..30 {
            let t = w.sample_task(TaskKind::RefAttributeLocal, &mut rng).unwrap();
            let Intent::RefAttributeLocal { source, slot, .. } = t.intent else { panic!() };
            assert!(t.gt_trace.relations()[source].contains(slot.name()));
        }
    }

    #[test]
    fn every_kind_is_consistent() {
        let w = world();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for kind in TaskKind::ALL {
            for _ in 0..40 {
                let t = w.sample_task(kind, &mut rng).unwrap();
                assert!(!t.refs.is_empty() && t.refs.len() <= MAX_REFS);
                assert_eq!(t.gt_image, w.render(&t.gt_spec).unwrap());
                assert_eq!(t.gt_trace.relations().len(), t.refs.len());
                assert_eq!(parse_trace(&render_trace(&t.gt_trace), t.refs.len()).unwrap(), t.gt_trace);
                let edit_roles = t.gt_trace.relations().iter().filter(|r| *r == "is the image to edit").count();
                assert_eq!(edit_roles, usize::from(kind.is_editing()), "{kind}");
                match kind {
                    TaskKind::SubjectSubject => assert!(t.refs.len() >= 2),
                    TaskKind::SubjectScene => {
                        let scene_refs = t.refs.iter().filter(|r| r.spec.entities.is_empty()).count();
                        assert_eq!(scene_refs, 1);
                    }
                    _ => {}
                }
                assert!(!t.requirements.prompt_following.is_empty());
                let gt = t.gt_spec.feature_set(w.config());
                assert!(t.requirements.prompt_following.iter().all(|f| gt.contains(f)));
                assert!(t.requirements.subject_consistency.iter().all(|f| gt.contains(f)));
            }
        }
    }

    #[test]
    fn oracle_trace_ignores_the_target_image() {
        let w = world();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut t = w.sample_task(TaskKind::SubjectScene, &mut rng).unwrap();
        let before = oracle_trace(&w, &t);
        t.gt_image = ImageVec(vec![0.5; w.config().dim]);
        t.gt_spec = SceneSpec::new(0, vec![]);
        assert_eq!(oracle_trace(&w, &t), before);
    }

    #[test]
    fn single_slot_world_rejects_compositional_kinds() {
        let w = World::new(WorldConfig { slots: 1, ..Default::default() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            w.sample_task(TaskKind::SubjectSubject, &mut rng),
            Err(WorldError::IncompatibleKind { .. })
        ));
        assert!(w.sample_task(TaskKind::RefSubjectAdd, &mut rng).is_err());
        assert!(w.sample_task(TaskKind::SubjectDriven, &mut rng).is_ok());
    }
}
