//! Replica-deterministic question selection.
//!
//! The seed is `SHA-256(bank_root || len(exam_id) || exam_id || height)` with a
//! 4-byte big-endian length and an 8-byte big-endian commitment height. The
//! generator is a SHA-256 counter stream: word `i` is the first eight bytes
//! (big-endian) of `SHA-256(seed || i)`, `i` as 8 bytes big-endian. Bounded
//! draws reject words at or above the largest multiple of the bound. The
//! permutation is a Fisher-Yates shuffle of `[0, bank_size)` walking `i` from
//! `bank_size - 1` down to 1 and swapping with a draw in `[0, i]`; the paper
//! is the first `question_count` entries.

use crate::codec::{put_str, put_u64, Encode};
use crate::crypto::{hash, hash_concat, Digest32};

pub fn paper_seed(bank_root: &Digest32, exam_id: &str, commitment_height: u64) -> Digest32 {
    let mut buf = Vec::new();
    bank_root.encode_to(&mut buf);
    put_str(&mut buf, exam_id);
    put_u64(&mut buf, commitment_height);
    hash(&buf)
}

struct HashStream {
    seed: Digest32,
    counter: u64,
}

impl HashStream {
    fn next_word(&mut self) -> u64 {
        let d = hash_concat(&[&self.seed.0, &self.counter.to_be_bytes()]);
        self.counter += 1;
        u64::from_be_bytes(d.0[..8].try_into().unwrap())
    }

    fn below(&mut self, bound: u64) -> u64 {
        debug_assert!(bound > 0);
        let zone = u64::MAX - (u64::MAX % bound);
        loop {
            let w = self.next_word();
            if w < zone {
                return w % bound;
            }
        }
    }
}

pub fn permutation(seed: &Digest32, size: u32) -> Vec<u32> {
    let mut perm: Vec<u32> = (0..size).collect();
    let mut rng = HashStream {
        seed: *seed,
        counter: 0,
    };
    for i in (1..perm.len()).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        perm.swap(i, j);
    }
    perm
}

pub fn select_questions(seed: &Digest32, bank_size: u32, count: u32) -> Vec<u32> {
    let mut perm = permutation(seed, bank_size);
    perm.truncate(count as usize);
    perm
}
