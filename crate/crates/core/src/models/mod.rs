//! Encoders, classifier variants and language models.

pub mod cache;
pub mod gpt2;
pub mod lm;
pub mod nn;
pub mod params;
pub mod recurrent;
pub mod testing;
pub mod tokenizer;
pub mod transformer;
pub mod variant;
pub mod vectors;

pub use cache::ModelCache;
pub use gpt2::{Gpt2, Gpt2Config};
pub use lm::{lm_pair_predict, lm_threshold_search, CausalLm, LmNormalization, PairPrediction, ThresholdFit};
pub use params::{Init, ParamStore};
pub use recurrent::RecurrentEncoder;
pub use tokenizer::{SpecialIds, SubwordLayout, SubwordTokenizer, TokenizerKind};
pub use transformer::{EncoderOutput, Family, TransformerConfig, TransformerEncoder};
pub use variant::{
    Encoder, EncoderKind, LinearHead, ModelVariant, SentenceEmbedding, VariantConfig, WordInput,
    DEFAULT_RECURRENT_HIDDEN,
};
pub use vectors::{BagOfVectors, WordVectors};
