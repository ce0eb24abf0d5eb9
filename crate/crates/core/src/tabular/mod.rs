//! Tabular data: schema, CSV IO, feature codecs, splitting, group batches
//! and the synthetic benchmark.

pub mod dataset;
pub mod encoder;
pub mod gmm;
pub mod sampling;
pub mod schema;
pub mod synth;

pub use dataset::{load_csv, write_csv, Cell, Dataset, Row};
pub use encoder::{
    fit_encoder, ColumnCodec, ColumnEncoding, ContinuousMode, EncodedDataset, FeatureEncoder,
    FitOptions, Segment, SegmentKind, TargetCodec,
};
pub use sampling::{sample_group_batch, split, split_indices, GroupBatch};
pub use schema::{ColumnDef, ColumnKind, DatasetSchema, Task};
pub use synth::{synth_generate, synth_generate_with_truth, synth_schema, SynthData};
