mod common;

use bytes::BytesMut;
use common::codec::{decode_chunked, rechunk_failures, KINDS};
use proptest::prelude::*;
use serde_json::{json, Value};
use sweepherd::herd::codec::{MessageCodec, MAX_FRAME};
use sweepherd::herd::{encode_message, Message};
use tokio_util::codec::Decoder;

fn leaf() -> impl Strategy<Value = Value> {
    prop_oneof![
        Just(Value::Null),
        any::<bool>().prop_map(Value::from),
        any::<i64>().prop_map(Value::from),
        (-1e300f64..1e300).prop_map(Value::from),
        "\\PC{0,12}".prop_map(Value::from),
    ]
}

fn body() -> impl Strategy<Value = Value> {
    let tree = leaf().prop_recursive(3, 24, 4, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..4).prop_map(Value::from),
            prop::collection::btree_map("[a-z_]{1,6}", inner, 0..4).prop_map(|m| json!(m)),
        ]
    });
    prop::collection::btree_map("[a-z_]{1,8}", tree, 0..5).prop_map(|m| json!(m))
}

fn message() -> impl Strategy<Value = Message> {
    (0..KINDS.len(), any::<u64>(), body()).prop_map(|(k, seq, body)| Message { kind: KINDS[k], seq, body })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 512, ..ProptestConfig::default() })]

    #[test]
    fn roundtrip_under_rechunking(msgs in prop::collection::vec(message(), 1..6), cuts in prop::collection::vec(any::<usize>(), 0..40)) {
        let mut stream = Vec::new();
        for m in &msgs {
            stream.extend(encode_message(m).unwrap());
        }
        prop_assert_eq!(decode_chunked(&stream, &cuts), msgs);
    }

    #[test]
    fn oversized_lengths_rejected(len in (MAX_FRAME as u32 + 1)..=u32::MAX) {
        let mut buf = BytesMut::from(&len.to_be_bytes()[..]);
        prop_assert!(MessageCodec::default().decode(&mut buf).is_err());
    }

    #[test]
    fn random_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
        let mut codec = MessageCodec::default();
        let mut buf = BytesMut::from(&bytes[..]);
        while let Ok(Some(_)) = codec.decode(&mut buf) {}
    }
}

#[test]
fn ten_thousand_rechunkings() {
    assert_eq!(rechunk_failures(10_000, 0x5eed), 0);
}
