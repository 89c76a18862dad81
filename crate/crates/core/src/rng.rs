//! Counter-based random streams.
//!
//! Every random draw in the simulator comes from a ChaCha8 stream selected by
//! `(seed, purpose, entity, counter)`. The seed fixes the ChaCha key and the
//! remaining triple is packed into the 64-bit stream id, so a draw for
//! client 7 in round 120 never depends on how many draws other clients or
//! rounds consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// What a stream is used for. Distinct purposes never share a stream id.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Purpose {
    Participation = 1,
    LocalSgd = 2,
    Dataset = 3,
    GroupAssignment = 4,
    ClusterCenters = 5,
    Probe = 6,
    TestData = 7,
}

const ENTITY_BITS: u32 = 24;
const COUNTER_BITS: u32 = 32;

/// Opens the stream for `(seed, purpose, entity, counter)`.
///
/// `entity` is typically a client index and `counter` a round number.
pub fn stream(seed: u64, purpose: Purpose, entity: u64, counter: u64) -> Stream {
    assert!(
        entity < (1 << ENTITY_BITS),
        "entity id {entity} exceeds 24 bits"
    );
    assert!(
        counter < (1 << COUNTER_BITS),
        "counter {counter} exceeds 32 bits"
    );
    let id =
        ((purpose as u64) << (ENTITY_BITS + COUNTER_BITS)) | (entity << COUNTER_BITS) | counter;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// SplitMix64 finalizer; used to derive sub-seeds from a master seed and a tag.
pub fn mix(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable 64-bit FNV-1a hash of a label, for turning variant names into tags.
pub fn label_tag(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}
