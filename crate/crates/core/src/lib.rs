//! Grounding of spoken spatial references against an object-centric scene
//! graph, for remote guidance in mixed reality.
//!
//! The pipeline is: [`parser`] turns a transcript into a
//! [`query::ReferenceQuery`]; [`resolver`] applies relation and memory
//! constraints over the [`scene_graph`], ranks survivors by attribute
//! similarity ([`matcher`]), optionally culls by viewpoint ([`view`]), and
//! either picks a referent or falls back; [`guidance`] turns the result into
//! a pointer or a transcript directive. [`engine`] ties these to a session.

pub mod corpus;
pub mod engine;
pub mod geometry;
pub mod guidance;
pub mod matcher;
pub mod memory;
pub mod parser;
pub mod query;
pub mod resolver;
pub mod scene_graph;
pub mod view;

pub use engine::{ActionEvent, Clock, Engine, ManualClock, Pose, Session, SystemClock, UtteranceOutcome};
pub use geometry::{Aabb, Vec3};
pub use guidance::{DirectiveMode, GuidanceDirective, GuidanceStep};
pub use matcher::{CachedEmbedder, Embedder, Embedding, HashingEmbedder, ScoredCandidate};
pub use parser::{parse, ParseError, ParseErrorKind, ReferenceParser};
pub use query::{classify_pattern, EntitySpec, MemoryCue, Pattern, ReferenceQuery, RelationClause, TimeWindow};
pub use resolver::{FallbackReason, ResolutionConfig, ResolutionMode, ResolutionResult, Resolver, TraceStep};
pub use scene_graph::{GraphError, InteractionRecord, ObjectNode, RelationEdge, RelationalGraph, SpatialRelation};
pub use view::CameraPose;
