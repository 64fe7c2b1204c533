//! Training data: the grounding-focused SFT set and the preference set
//! derived from it.

mod augment;
mod io;
mod perturb;
mod stage1;
mod stage2;
mod stats;
mod tilt;

pub use augment::{augment, expand_response, ANSWER_BUDGET};
pub use io::{file_sha256, read_jsonl, write_json_atomic, write_jsonl};
pub use perturb::{edit_distance, make_false_premise_pair, make_false_premise_record, perturb_negative, PerturbationTag};
pub use stage1::{build_stage1, SftSample, Stage1Config};
pub use stage2::{build_stage2, BuildReport, D2Record, DropCounts, ForgeConfig, Stage2Output};
pub use stats::{LengthStats, HISTOGRAM_BIN_WIDTH};
pub use tilt::{capped_weighted_mean, resample, resample_indices, solve_beta, tilt_weights, TiltConfig};
