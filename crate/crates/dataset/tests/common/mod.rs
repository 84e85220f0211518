#![allow(dead_code)]

use avcoop_dataset::label::{Event, FinalLabel, PixelBox, TaskKind, TransformedLabel};
use proptest::prelude::*;

pub fn event_name() -> impl Strategy<Value = String> {
    prop_oneof![
        "[A-Za-z][A-Za-z ,_'-]{0,24}[A-Za-z]",
        "[A-Za-z]",
        "[\\p{L}][\\p{L} ,]{0,10}[\\p{L}]",
    ]
}

pub fn event() -> impl Strategy<Value = Event> {
    (event_name(), 0u32..60, 0u32..60).prop_map(|(name, a, b)| Event { name, start: a.min(b), end: a.max(b) })
}

pub fn label_of(kind: TaskKind) -> BoxedStrategy<FinalLabel> {
    match kind {
        TaskKind::Ave => event().prop_map(FinalLabel::Ave).boxed(),
        TaskKind::Avvp => prop::collection::vec(event(), 1..5).prop_map(|events| FinalLabel::Avvp { events }).boxed(),
        TaskKind::Arig => (0u32..2000, 0u32..2000, 0u32..2000, 0u32..2000)
            .prop_map(|(a, b, c, d)| FinalLabel::Arig(PixelBox::new(a.min(c), b.min(d), a.max(c), b.max(d))))
            .boxed(),
        TaskKind::Avqa => "[A-Za-z0-9][A-Za-z0-9 ,.?!'\\[\\];:-]{0,30}[A-Za-z0-9.?!]"
            .prop_map(|answer| FinalLabel::Avqa { answer })
            .boxed(),
    }
}

pub fn any_label() -> impl Strategy<Value = FinalLabel> {
    prop_oneof![label_of(TaskKind::Ave), label_of(TaskKind::Avvp), label_of(TaskKind::Arig), label_of(TaskKind::Avqa)]
}

pub fn reasoning() -> impl Strategy<Value = String> {
    prop_oneof![
        Just(String::new()),
        prop::collection::vec("[A-Za-z][A-Za-z0-9 ,.;:()\\[\\]-]{0,40}", 1..4)
            .prop_map(|lines| lines.join("\n").trim().to_string())
            .prop_filter("no answer line", |r| !r.lines().any(|l| l.trim_start().starts_with("Answer:"))),
    ]
}

pub fn transformed() -> impl Strategy<Value = TransformedLabel> {
    (reasoning(), any_label()).prop_map(|(reasoning, label)| TransformedLabel { reasoning, label })
}
