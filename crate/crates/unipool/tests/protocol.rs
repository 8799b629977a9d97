//! Frame codec round trips over random JSON bodies.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value as Json};
use unipool::protocol::{encode_frame, read_frame_blocking, FrameDecoder};

fn random_json(rng: &mut ChaCha8Rng, depth: u32) -> Json {
    match rng.gen_range(0..if depth == 0 { 4 } else { 6 }) {
        0 => Json::Null,
        1 => json!(rng.gen::<bool>()),
        2 => json!(rng.gen_range(-1e9..1e9)),
        3 => {
            let n = rng.gen_range(0..24);
            Json::String((0..n).map(|_| rng.gen::<char>()).collect())
        }
        4 => Json::Array((0..rng.gen_range(0..5)).map(|_| random_json(rng, depth - 1)).collect()),
        _ => Json::Object(
            (0..rng.gen_range(0..5))
                .map(|i| (format!("k{i}"), random_json(rng, depth - 1)))
                .collect(),
        ),
    }
}

pub fn random_body(rng: &mut ChaCha8Rng) -> Vec<u8> {
    let ops = ["ingest", "query", "stats", "refresh_static"];
    let body = json!({"op": ops[rng.gen_range(0..4)], "payload": random_json(rng, 3)});
    serde_json::to_vec(&body).unwrap()
}

#[test]
fn ten_thousand_bodies_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let bodies: Vec<Vec<u8>> = (0..10_000).map(|_| random_body(&mut rng)).collect();
    let mut wire = Vec::new();
    for b in &bodies {
        let frame = encode_frame(b).unwrap();
        assert_eq!(u32::from_be_bytes(frame[..4].try_into().unwrap()) as usize, b.len());
        wire.extend(frame);
    }
    // Blocking reader over the whole stream.
    let mut cursor = wire.as_slice();
    for b in &bodies {
        assert_eq!(&read_frame_blocking(&mut cursor).unwrap().unwrap(), b);
    }
    assert!(read_frame_blocking(&mut cursor).unwrap().is_none());
    // Incremental decoder over random chunking.
    let mut d = FrameDecoder::new();
    let mut out = Vec::with_capacity(bodies.len());
    let mut i = 0;
    while i < wire.len() {
        let n = rng.gen_range(1..600).min(wire.len() - i);
        d.push(&wire[i..i + n]);
        i += n;
        while let Some(f) = d.next_frame().unwrap() {
            out.push(f);
        }
    }
    assert_eq!(out, bodies);
}

proptest! {
    #[test]
    fn arbitrary_bytes_round_trip(body in proptest::collection::vec(any::<u8>(), 0..4096)) {
        let frame = encode_frame(&body).unwrap();
        let mut cursor = frame.as_slice();
        prop_assert_eq!(read_frame_blocking(&mut cursor).unwrap().unwrap(), body);
    }
}
