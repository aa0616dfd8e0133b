//! Shared data model: edit events, indexed sparse count matrices, corpus
//! slicing and the triplet interchange format.

mod activity;
mod event;
mod index;
pub mod io;

pub use activity::{
    build_activity_matrix, event_years, prune, slice_by_year, ActivityMatrix, CorpusSlice,
    PruneReport, Pruned, SliceMeta, TimeWindow,
};
pub use event::{
    apply_topic_labels, format_timestamp, parse_timestamp, read_events, read_topics, write_events,
    EditEvent, TopicLabel, EVENT_HEADER,
};
pub use index::Index;
