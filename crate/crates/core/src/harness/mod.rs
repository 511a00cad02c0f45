//! Model construction and quantized training.

mod curves;
mod lemma;
mod model;
mod spec;
mod sweep;
mod train;

pub use curves::{error_curves, write_error_curves_csv, ErrorCurvePoint, ERROR_CURVES_HEADER};
pub use lemma::{lemma31_simulate, write_lemma31_csv, LemmaStep, LEMMA31_HEADER};
pub use model::{
    build_model, ConvLayer, DataPath, DenseLayer, GraphNode, Layer, Model, ParamKind, ResidualBlock,
};
pub use spec::{LayerKind, LayerSpec, ModelSpec, PactSettings, QuantScheme};
pub use sweep::{fixed_alpha_sweep, write_sweep_csv, SweepRow, DEFAULT_SWEEP_ALPHAS, SWEEP_HEADER};
pub use train::{
    evaluate, train, train_step, AuditRecord, EpochRecord, RunMetrics, TrainingConfig,
    METRICS_HEADER,
};
