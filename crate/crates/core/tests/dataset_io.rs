use std::collections::HashSet;
use std::io::Cursor;

use mmsair::dataset::{
    label_statistics, parse_records, split_dataset, write_records, ChatRecord, DatasetError, FieldMap, IntentLabel, Label,
    SentimentLabel, StickerClass, Validation,
};
use proptest::prelude::*;

fn label<L: Label>() -> impl Strategy<Value = L> {
    (0..L::count()).prop_map(|c| L::from_code(c).unwrap())
}

fn record(idx: usize) -> impl Strategy<Value = ChatRecord> {
    (
        "[a-z\u{4e00}-\u{4e20} ]{0,12}[a-z\u{4e00}-\u{4e20}]",
        "[a-z0-9 ]{0,6}[a-z]",
        label::<SentimentLabel>(),
        label::<SentimentLabel>(),
        label::<SentimentLabel>(),
        label::<IntentLabel>(),
        label::<StickerClass>(),
    )
        .prop_map(move |(context, text, cs, ss, ms, intent, class)| ChatRecord {
            id: format!("r{idx}"),
            context,
            sticker_image_ref: format!("img/{idx}.png"),
            sticker_text: if class.has_text() { text } else { String::new() },
            context_sentiment: cs,
            sticker_sentiment: ss,
            multimodal_sentiment: ms,
            multimodal_intent: intent,
            sticker_class: class,
        })
}

fn records(max: usize) -> impl Strategy<Value = Vec<ChatRecord>> {
    (2..max).prop_flat_map(|n| (0..n).map(record).collect::<Vec<_>>())
}

fn to_jsonl(records: &[ChatRecord]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_records(&mut buf, records).unwrap();
    buf
}

proptest! {
    #[test]
    fn write_then_parse_is_identity(rs in records(12)) {
        let back = parse_records(Cursor::new(to_jsonl(&rs)), &FieldMap::new(), Validation::Strict).unwrap();
        prop_assert_eq!(back, rs);
    }

    #[test]
    fn split_is_a_partition(rs in records(40), frac in 0.05f64..0.95, seed in any::<u64>()) {
        let (train, test) = split_dataset(&rs, frac, seed).unwrap();
        prop_assert_eq!(train.len(), (rs.len() as f64 * frac).round() as usize);
        prop_assert_eq!(train.len() + test.len(), rs.len());
        let ids: HashSet<_> = train.iter().chain(&test).map(|r| r.id.clone()).collect();
        prop_assert_eq!(ids.len(), rs.len());
        let (train2, test2) = split_dataset(&rs, frac, seed).unwrap();
        prop_assert_eq!(train, train2);
        prop_assert_eq!(test, test2);
    }

    #[test]
    fn statistics_sum_to_total(rs in records(30)) {
        let report = label_statistics(&rs).unwrap();
        prop_assert_eq!(report.total, rs.len());
        for cat in &report.categories {
            let sum: usize = cat.labels.iter().map(|l| l.count).sum();
            prop_assert_eq!(sum, rs.len());
            let p: f64 = cat.labels.iter().map(|l| l.proportion).sum();
            prop_assert!((p - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn renamed_fields_are_read_through_the_map() {
    let line = r#"{"mid":"a","text":"hi","img":"a.png","ocr":"","cs":"positive","ss":"neutral","ms":"negative","intent":"query","cls":"P"}"#;
    let map = FieldMap::parse(
        "id=mid,context=text,sticker_image_ref=img,sticker_text=ocr,context_sentiment=cs,\
         sticker_sentiment=ss,multimodal_sentiment=ms,multimodal_intent=intent,sticker_class=cls",
    )
    .unwrap();
    let rs = parse_records(Cursor::new(line), &map, Validation::Strict).unwrap();
    assert_eq!(rs[0].multimodal_intent, IntentLabel::Query);
    assert_eq!(rs[0].multimodal_sentiment, SentimentLabel::Negative);
}

#[test]
fn class_text_mismatch_is_fatal_only_when_strict() {
    let line = r#"{"id":"a","context":"hi","sticker_image_ref":"a.png","sticker_text":"","context_sentiment":"positive","sticker_sentiment":"neutral","multimodal_sentiment":"negative","multimodal_intent":"Joke","sticker_class":"C-t"}"#;
    let err = parse_records(Cursor::new(line), &FieldMap::new(), Validation::Strict).unwrap_err();
    assert!(matches!(err, DatasetError::Invalid { line: 1, .. }), "{err}");
    assert_eq!(parse_records(Cursor::new(line), &FieldMap::new(), Validation::Lenient).unwrap().len(), 1);
}

#[test]
fn duplicate_ids_are_rejected() {
    let rs = vec![
        ChatRecord {
            id: "x".into(),
            context: "a".into(),
            sticker_image_ref: "x.png".into(),
            sticker_text: String::new(),
            context_sentiment: SentimentLabel::Neutral,
            sticker_sentiment: SentimentLabel::Neutral,
            multimodal_sentiment: SentimentLabel::Neutral,
            multimodal_intent: IntentLabel::Greet,
            sticker_class: StickerClass::A,
        };
        2
    ];
    let err = parse_records(Cursor::new(to_jsonl(&rs)), &FieldMap::new(), Validation::Strict).unwrap_err();
    assert!(matches!(err, DatasetError::DuplicateId { line: 2, .. }));
}

#[test]
fn fixture_loads_strictly() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/mini.jsonl");
    let rs = mmsair::dataset::load_dataset(path).unwrap();
    assert_eq!(rs.len(), 20);
}
