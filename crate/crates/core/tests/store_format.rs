use mmsair::encoders::{EmbeddingStore, Modality, StoreError};
use proptest::prelude::*;

/// Byte layout written out field by field, independent of the library writer.
fn hand_packed(tag: u8, width: u32, entries: &[(&str, Vec<f32>)]) -> Vec<u8> {
    let mut b = b"MSEM".to_vec();
    b.extend([1u8, 0]);
    b.push(tag);
    b.extend(width.to_le_bytes());
    b.extend((entries.len() as u64).to_le_bytes());
    for (id, v) in entries {
        b.extend((id.len() as u16).to_le_bytes());
        b.extend(id.as_bytes());
        for x in v {
            b.extend(x.to_le_bytes());
        }
    }
    b
}

fn modality() -> impl Strategy<Value = Modality> {
    prop_oneof![Just(Modality::Context), Just(Modality::StickerText), Just(Modality::StickerImage)]
}

proptest! {
    #[test]
    fn bytes_round_trip(m in modality(), width in 1usize..9, rows in prop::collection::vec(prop::collection::vec(-1e6f32..1e6, 8), 0..10)) {
        let mut store = EmbeddingStore::new(m, width).unwrap();
        for (i, r) in rows.iter().enumerate() {
            store.insert(format!("id{i}"), &r[..width]).unwrap();
        }
        let back = EmbeddingStore::from_bytes(&store.to_bytes()).unwrap();
        prop_assert_eq!(&back, &store);
        for (i, r) in rows.iter().enumerate() {
            prop_assert_eq!(back.get(&format!("id{i}")).unwrap(), &r[..width]);
        }
    }

    #[test]
    fn every_truncation_is_rejected(cut in 0usize..41) {
        let bytes = hand_packed(0, 2, &[("a", vec![1.0, 2.0]), ("b", vec![3.0, 4.0])]);
        prop_assume!(cut < bytes.len());
        let truncated = matches!(EmbeddingStore::from_bytes(&bytes[..cut]), Err(StoreError::Format { .. }));
        prop_assert!(truncated);
    }
}

#[test]
fn writer_matches_hand_packed_layout() {
    let entries = [("m00", vec![0.5f32, -1.25, 3.0]), ("开学", vec![1.0, 0.0, -0.0])];
    let mut store = EmbeddingStore::new(Modality::StickerImage, 3).unwrap();
    for (id, v) in &entries {
        store.insert(*id, v).unwrap();
    }
    assert_eq!(store.to_bytes(), hand_packed(2, 3, &entries));
}

#[test]
fn reader_accepts_hand_packed_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ctx.bin");
    std::fs::write(&path, hand_packed(0, 2, &[("x", vec![0.25, 4.0])])).unwrap();
    let store = EmbeddingStore::open_expecting(&path, Modality::Context, 2).unwrap();
    assert_eq!(store.get("x").unwrap(), &[0.25, 4.0]);
    assert!(EmbeddingStore::open_expecting(&path, Modality::StickerText, 2).is_err());
    assert!(EmbeddingStore::open_expecting(&path, Modality::Context, 3).is_err());
}

#[test]
fn malformed_headers_and_entries() {
    let good = hand_packed(1, 1, &[("a", vec![1.0])]);
    let mut bad_magic = good.clone();
    bad_magic[0] = b'X';
    let mut bad_version = good.clone();
    bad_version[4] = 2;
    let mut bad_tag = good.clone();
    bad_tag[6] = 3;
    let mut trailing = good.clone();
    trailing.push(0);
    let dup = hand_packed(1, 1, &[("a", vec![1.0]), ("a", vec![2.0])]);
    let nan = hand_packed(1, 1, &[("a", vec![f32::NAN])]);
    let zero_width = hand_packed(1, 0, &[]);
    for (name, bytes) in [
        ("magic", bad_magic),
        ("version", bad_version),
        ("tag", bad_tag),
        ("trailing", trailing),
        ("duplicate", dup),
        ("nan", nan),
        ("zero width", zero_width),
    ] {
        assert!(
            matches!(EmbeddingStore::from_bytes(&bytes), Err(StoreError::Format { .. })),
            "{name} accepted"
        );
    }
}
