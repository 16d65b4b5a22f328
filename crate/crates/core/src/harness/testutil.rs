use crate::datagen::{synth_corpus, SynthConfig, SynthCorpus};
use crate::model::{HeadConfig, KwsModel};
use crate::speech_embedder::{Embedder, EmbedderConfig};

pub fn tiny_synth() -> SynthConfig {
    SynthConfig {
        phoneme_inventory_size: 5,
        keyword_count: 4,
        max_words: 2,
        max_frames_per_phoneme: 6,
        prototype_dim: 6,
        train_utterances: 24,
        valid_utterances: 8,
        test_utterances: 8,
        hard_threshold: 1,
        easy_threshold: 3,
        ..SynthConfig::default()
    }
}

pub fn corpus() -> SynthCorpus {
    synth_corpus(&tiny_synth()).unwrap()
}

pub fn tiny_embedder() -> EmbedderConfig {
    EmbedderConfig {
        num_layers: 1,
        model_dim: 8,
        attention_heads: 2,
        input_dim: 6,
        inventory_size: 5,
        ..EmbedderConfig::default()
    }
}

pub fn tiny_head() -> HeadConfig {
    HeadConfig {
        dim: 8,
        path_channels: 4,
        text_embedding_dim: 4,
        ..HeadConfig::default()
    }
}

pub fn model(seed: u64) -> KwsModel {
    let e = tiny_embedder();
    KwsModel::new(&tiny_head().model_config(&e), Embedder::new(&e, 7).unwrap(), seed).unwrap()
}
