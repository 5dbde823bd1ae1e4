//! Generative temporal segmentation and recognition of action sequences.
//!
//! Per-frame descriptors are encoded as Fisher vectors over a diagonal GMM
//! codebook, reduced with PCA, and decoded into labeled spans by left-to-right
//! unit HMMs constrained by a path grammar or a bigram prior. Everything is
//! generic over `f32`/`f64` through [`Real`]; the aliases below fix `f64`
//! (and `f32` where it is useful).
//!
//! All randomness is seeded, and parallel loops write into fixed slots, so
//! results are identical for any thread count.

pub mod decoder;
pub mod error;
pub mod evaluation;
pub mod format;
pub mod fv;
pub mod gmm;
pub mod hmm;
pub mod linalg;
pub mod normality;
pub mod pca;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod segmentation;
pub mod sequence_model;
pub mod training_data;

pub use decoder::{classify_activity, decode, ActivityBundle, Classification, DecodeConfig};
pub use error::{Error, Result};
pub use evaluation::{
    activity_accuracy, class_mean_accuracy, frame_accuracy, midpoint_hit_accuracy, ConfusionMatrix, MetricsReport,
};
pub use fv::{encode_fv, sliding_window_encode};
pub use gmm::{fit_gmm, DiagonalGmm, GmmConfig};
pub use hmm::{baum_welch, init_hmm, viterbi_align, BaumWelchConfig, HmmInitConfig, UnitHmm};
pub use normality::{dimension_pass_report, jarque_bera, lilliefors, NormalityReport};
pub use pca::{fit_pca, PcaModel};
pub use pipeline::{train_unit_models, TrainConfig};
pub use scalar::Real;
pub use segmentation::{Segmentation, Span};
pub use sequence_model::{build_bigram, build_path_grammar, SequenceModel};
pub use training_data::{balance_classes, generate_dataset, DatasetSpec, FrameSequence, LabeledSegment};

pub type Gmm = DiagonalGmm<f64>;
pub type Gmm32 = DiagonalGmm<f32>;
pub type Pca = PcaModel<f64>;
pub type Pca32 = PcaModel<f32>;
pub type Hmm = UnitHmm<f64>;
pub type Hmm32 = UnitHmm<f32>;
pub type Grammar = SequenceModel<f64>;
pub type Labeling = Segmentation<f64>;
pub type Frames = FrameSequence<f64>;

/// Unit and activity labels: non-empty, no whitespace, `=` or `,`, and not starting with `<`.
pub fn is_valid_label(label: &str) -> bool {
    !label.is_empty()
        && !label.starts_with('<')
        && !label.chars().any(|c| c.is_whitespace() || c == '=' || c == ',')
}
