//! Audio and dataset plumbing.

mod manifest;
pub mod toy;
mod wav;

pub use manifest::{
    load_manifest, manifest_from_dir, write_manifest, SpeakerEntry, SpeakerRegistry, Split,
    UtteranceRecord,
};
pub use wav::{read_wav, write_wav, AudioClip, SAMPLE_RATE};
