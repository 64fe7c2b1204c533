//! Procedural grounded-VQA scenes, questions over them, and the exact oracle
//! that decides whether an answer is supported by the scene.

pub mod grammar;
pub mod oracle;
pub mod question;
pub mod scene;
pub mod vocab;

pub use grammar::{AttrValue, Claim, Parsed};
pub use oracle::{grounded_answers, judge_response, judge_with_spec, validate_claim, AnswerSpec, GroundingVerdict, InvalidClaim, Response};
pub use question::{generate_question, Question, QuestionKind};
pub use scene::{generate_scene, DifficultyTier, Scene, SceneObject, TextLabel, WorldConfig};
pub use vocab::Token;
