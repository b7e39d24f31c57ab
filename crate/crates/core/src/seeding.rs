//! Independent deterministic random streams derived from one experiment seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    ClassifierInit = 1,
    GeneratorInit,
    Shuffle,
    ClassifierDropout,
    GeneratorDropout,
    Conditioning,
    Latent,
    Evaluation,
    SampleGrid,
    Tsne,
    Analysis,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
