//! Counter-based draws keyed on `(seed, layer, index)`.
//!
//! Each node derives its own random choices from its coordinates instead of
//! pulling from a shared generator, so the order in which concurrent nodes
//! finish can never change what any node sampled.

/// Independent draw streams per node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Prompt = 0x7072_6f6d_7074,
    Model = 0x6d6f_6465_6c00,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// 64-bit draw for one node and stream.
pub fn node_draw(seed: u64, layer: u32, index: u32, stream: Stream) -> u64 {
    let mut h = splitmix64(seed ^ stream as u64);
    h = splitmix64(h ^ u64::from(layer));
    splitmix64(h ^ (u64::from(index) << 32))
}

/// Uniform index in `0..n` for one node and stream. `n` must be non-zero.
pub fn node_choice(seed: u64, layer: u32, index: u32, stream: Stream, n: usize) -> usize {
    debug_assert!(n > 0);
    // multiply-shift range reduction; bias is below 2^-32 for any realistic pool
    ((u128::from(node_draw(seed, layer, index, stream)) * n as u128) >> 64) as usize
}

/// Derives a per-task seed from the run seed and the task id (FNV-1a over
/// the id, mixed with the run seed).
pub fn task_seed(run_seed: u64, task_id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in task_id.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(run_seed ^ splitmix64(h))
}
