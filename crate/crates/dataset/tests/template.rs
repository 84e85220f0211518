use avcoop_dataset::label::TaskKind;
use avcoop_dataset::template::{build_prompt, Exemplar, Instance, PromptTemplate};
use avcoop_dataset::DatasetError;

fn bare(instance: &str) -> PromptTemplate {
    PromptTemplate { kind: TaskKind::Ave, exemplars: vec![], instance: instance.into() }
}

#[test]
fn zero_exemplars_render_only_the_instance() {
    let t = bare("Media: {media_ref}\nOriginal label: {original_label}\n");
    let p = build_prompt(&t, &Instance::new("a.mp4", "Dog, [0,1]")).unwrap();
    assert_eq!(p, "Media: a.mp4\nOriginal label: Dog, [0,1]\n");
}

#[test]
fn rendering_is_byte_stable() {
    let t = PromptTemplate::builtin(TaskKind::Avvp);
    let i = Instance::new("v.mp4", "Speech, [0,1]");
    assert_eq!(build_prompt(&t, &i).unwrap().as_bytes(), build_prompt(&t.clone(), &i.clone()).unwrap().as_bytes());
}

#[test]
fn ave_template_matches_golden_file() {
    let t = PromptTemplate::builtin(TaskKind::Ave);
    assert_eq!(t.exemplars.len(), 1);
    let p = build_prompt(&t, &Instance::new("clips/ave_0042.mp4", "Church bell, [3,9]")).unwrap();
    assert_eq!(p, include_str!("golden/ave_prompt.txt"));
}

#[test]
fn exemplars_precede_the_instance_in_order() {
    let mut t = bare("{original_label}");
    t.exemplars = vec![Exemplar { input: "in1".into(), output: "out1".into() }, Exemplar { input: "in2".into(), output: "out2".into() }];
    let p = build_prompt(&t, &Instance::new("m", "L")).unwrap();
    assert_eq!(p, "Example 1\nInput:\nin1\nOutput:\nout1\n\nExample 2\nInput:\nin2\nOutput:\nout2\n\nL");
}

#[test]
fn missing_slot_is_named() {
    let t = PromptTemplate::builtin(TaskKind::Ave);
    let i = Instance { media_ref: Some("m".into()), original_label: None };
    match build_prompt(&t, &i) {
        Err(DatasetError::MissingSlot(s)) => assert_eq!(s, "original_label"),
        other => panic!("expected a missing slot, got {other:?}"),
    }
    let i = Instance { media_ref: Some(String::new()), original_label: Some("x".into()) };
    assert!(matches!(build_prompt(&t, &i), Err(DatasetError::MissingSlot(s)) if s == "media_ref"));
}

#[test]
fn unused_slots_need_not_be_filled() {
    let p = build_prompt(&bare("label={original_label}"), &Instance { media_ref: None, original_label: Some("x".into()) }).unwrap();
    assert_eq!(p, "label=x");
}

#[test]
fn braces_and_unknown_slots() {
    let i = Instance::new("m", "L");
    assert_eq!(build_prompt(&bare("{{json}} {original_label}"), &i).unwrap(), "{json} L");
    assert!(matches!(build_prompt(&bare("{question}"), &i), Err(DatasetError::UnknownSlot(s)) if s == "question"));
    assert!(matches!(build_prompt(&bare("open {media_ref"), &i), Err(DatasetError::Template(_))));
    assert!(matches!(build_prompt(&bare("close }"), &i), Err(DatasetError::Template(_))));
    assert_eq!(bare("{media_ref}{original_label}").slots().unwrap(), ["media_ref", "original_label"]);
}

#[test]
fn templates_load_from_json() {
    for k in TaskKind::ALL {
        let t = PromptTemplate::builtin(k);
        let back: PromptTemplate = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
        assert_eq!(back, t);
    }
    let extra = r#"{"kind":"ave","exemplars":[],"instance":"x","oops":1}"#;
    assert!(serde_json::from_str::<PromptTemplate>(extra).is_err());
}

#[test]
fn builtin_exemplar_outputs_parse_as_their_kind() {
    for k in TaskKind::ALL {
        for ex in PromptTemplate::builtin(k).exemplars {
            avcoop_dataset::label::parse_response(&ex.output, k).unwrap();
        }
    }
}
