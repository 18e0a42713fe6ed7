//! Deterministic RNG streams.
//!
//! Every stochastic component draws from its own ChaCha stream derived from
//! the master seed and a role tag, so results are independent of call order
//! across components and reproducible per (seed, role, indices).

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream roles, kept in one place so tag collisions are impossible.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamId {
    Placement { client: u64 },
    Mobility { client: u64 },
    Compute { client: u64 },
    Shadowing { client: u64 },
    DatasetGen { service: u64 },
    Partition { service: u64 },
    ModelInit { service: u64 },
    LocalTrain { service: u64, client: u64, round: u64 },
    EappTrain,
}

impl StreamId {
    fn words(&self) -> [u64; 3] {
        match *self {
            StreamId::Placement { client } => [1, client, 0],
            StreamId::Mobility { client } => [2, client, 0],
            StreamId::Compute { client } => [3, client, 0],
            StreamId::Shadowing { client } => [9, client, 0],
            StreamId::DatasetGen { service } => [4, service, 0],
            StreamId::Partition { service } => [5, service, 0],
            StreamId::ModelInit { service } => [6, service, 0],
            StreamId::LocalTrain {
                service,
                client,
                round,
            } => [7, service, client.wrapping_shl(32) | round],
            StreamId::EappTrain => [8, 0, 0],
        }
    }
}

/// splitmix64 finalizer; enough mixing to decorrelate adjacent stream ids.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive the RNG stream for `id` under `master_seed`.
pub fn stream(master_seed: u64, id: StreamId) -> ChaCha8Rng {
    let w = id.words();
    let mut seed = [0u8; 32];
    seed[0..8].copy_from_slice(&mix(master_seed).to_le_bytes());
    seed[8..16].copy_from_slice(&mix(master_seed ^ w[0]).to_le_bytes());
    seed[16..24].copy_from_slice(&mix(w[1].wrapping_add(0x51_7c_c1_b7)).to_le_bytes());
    seed[24..32].copy_from_slice(&mix(w[2].wrapping_add(0x2754_0b47)).to_le_bytes());
    ChaCha8Rng::from_seed(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_id_same_stream() {
        let mut a = stream(7, StreamId::Mobility { client: 3 });
        let mut b = stream(7, StreamId::Mobility { client: 3 });
        for _ in 0..16 {
            assert_eq!(a.random::<u64>(), b.random::<u64>());
        }
    }

    #[test]
    fn distinct_ids_distinct_streams() {
        let mut a = stream(7, StreamId::Mobility { client: 3 });
        let mut b = stream(7, StreamId::Mobility { client: 4 });
        let mut c = stream(8, StreamId::Mobility { client: 3 });
        let x: u64 = a.random();
        assert_ne!(x, b.random::<u64>());
        assert_ne!(x, c.random::<u64>());
    }

    #[test]
    fn train_streams_vary_by_round() {
        let id1 = StreamId::LocalTrain {
            service: 1,
            client: 2,
            round: 0,
        };
        let id2 = StreamId::LocalTrain {
            service: 1,
            client: 2,
            round: 1,
        };
        let mut a = stream(0, id1);
        let mut b = stream(0, id2);
        assert_ne!(a.random::<u64>(), b.random::<u64>());
    }
}
