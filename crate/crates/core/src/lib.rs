//! Suggestion tracking, provenance and verification for collaborative
//! writing with a language model.

pub mod align;
pub mod edit;
pub mod ids;
pub mod prompt;
pub mod provenance;
pub mod provider;
pub mod script;
pub mod session;
pub mod store;
pub mod suggestion;
pub mod text;
pub mod verify;

pub use edit::{Component, ComponentTag, ExecutableEdit, OccurrenceSpan, PayloadError};
pub use ids::{BrainstormId, CommentId, MarkerId, SuggestionId, Timestamp, VerificationId};
pub use prompt::{PerturbMode, Prompt, PromptKind, TemplateSet, Variant};
pub use provenance::{CharProvenance, ProvenanceSnapshot};
pub use provider::{Provider, ProviderError, ScriptedProvider};
pub use session::{AuditReport, Command, Outcome, Session, SessionError, SessionEvent, Settings};
pub use script::Script;
pub use store::{FileStore, StoreError};
pub use suggestion::{Change, Status, SuggestionManager, SuggestionRecord};
pub use verify::Label;
