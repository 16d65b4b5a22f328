//! Audio front-end and text phonemization.
//!
//! Waveforms become 80-channel log mel filterbank matrices (25 ms window,
//! 10 ms shift); text keywords become phoneme-ID sequences through a
//! lexicon with a per-letter fallback.

mod filterbank;
mod lexicon;
mod wav;

pub use filterbank::{compute_filterbank, FeatureMatrix, Filterbank, FilterbankConfig, LOG_FLOOR, N_MELS};
pub use lexicon::{phonemize, Lexicon, PhonemeInventory, PhonemeSequence, BLANK_ID};
pub use wav::{read_wav, write_wav, Waveform};
