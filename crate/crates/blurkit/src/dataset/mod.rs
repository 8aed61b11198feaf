//! Procedural toy-video generation with analytic motion ground truth,
//! ingestion of user-supplied frame folders, and blur-task sampling.

pub mod corpus;
pub mod flow;
pub mod ingest;
pub mod scene;

pub use corpus::{
    generate_corpus, generate_task, read_task, sample_scene, write_corpus, write_task,
    CorpusConfig, CorpusIndex, GeneratedTask, ModeMix, SceneFamily, TaskRecord,
};
pub use flow::{analytic_flow, FlowField, RenderedFlowOracle};
pub use ingest::{
    ingest_clip, ingest_manifest, ClipManifest, DuplicateInterpolator, FrameInterpolator,
    LerpInterpolator,
};
pub use scene::{
    diff_centroid, render_clip, render_frame, render_frame_over, ObjectSpec, SceneSpec, Shape,
};
