use avcoop_core::model::Vocabulary;
use avcoop_core::objectives::BBox;
use avcoop_harness::data::*;
use avcoop_harness::eval::extract_final_answer;
use avcoop_harness::train::{text_targets, IGNORE};
use proptest::prelude::*;

fn cfg() -> DataConfig {
    DataConfig::default()
}

#[test]
fn generated_samples_agree_with_their_features() {
    for seed in 0..4 {
        for with_reasoning in [true, false] {
            for s in gen_suite(seed, [16; 4], &cfg(), with_reasoning).unwrap() {
                validate_sample(&s, &cfg()).unwrap_or_else(|e| panic!("seed {seed} sample {} ({:?}): {e}", s.id, s.family));
            }
        }
    }
}

#[test]
fn suite_ids_are_unique_and_grouped() {
    let suite = gen_suite(3, [2, 0, 3, 1], &cfg(), true).unwrap();
    assert_eq!(suite.iter().map(|s| s.id).collect::<Vec<_>>(), (0..6).collect::<Vec<_>>());
    let fams: Vec<Family> = suite.iter().map(|s| s.family).collect();
    use Family::*;
    assert_eq!(fams, [Temporal, Temporal, Reasoning, Reasoning, Reasoning, Segmentation]);
}

#[test]
fn generation_is_seeded() {
    let a = gen_suite(7, [3; 4], &cfg(), true).unwrap();
    assert_eq!(a, gen_suite(7, [3; 4], &cfg(), true).unwrap());
    assert_ne!(a, gen_suite(8, [3; 4], &cfg(), true).unwrap());
}

#[test]
fn targets_follow_the_token_layout() {
    let v = Vocabulary::new(cfg().num_tokens());
    let n = |k| v.num(k).unwrap();
    let s = temporal_sample(0, 2, &cfg(), 1, true).unwrap();
    assert_eq!(s.prompt, [Vocabulary::BOS, Vocabulary::TASK_TEMPORAL]);
    assert_eq!(s.target, [Vocabulary::TIME, n(2), Vocabulary::ANS, n(2), Vocabulary::EOS]);
    let s = temporal_sample(0, 2, &cfg(), 1, false).unwrap();
    assert_eq!(s.target, [Vocabulary::ANS, n(2), Vocabulary::EOS]);

    let b = BBox::new(1, 5, 3, 6);
    let s = spatial_sample(0, b, &cfg(), 1, true).unwrap();
    assert_eq!(s.target, [Vocabulary::QUAD, n(2), Vocabulary::ANS, n(1), n(5), n(3), n(6), Vocabulary::EOS]);

    let s = reasoning_sample(0, 1, &[3, 0, 2, 1], &cfg(), 1, true).unwrap();
    assert_eq!(s.target, [Vocabulary::TIME, n(1), Vocabulary::QUAD, n(0), Vocabulary::ANS, n(0), Vocabulary::EOS]);

    let s = segmentation_sample(0, rasterize(&BBox::new(4, 0, 7, 2), 8), &cfg(), 1, true).unwrap();
    assert_eq!(extract_final_answer(&s.target), v.mask_ids());
    assert_eq!(s.target[..2], [Vocabulary::QUAD, n(1)]);
}

#[test]
fn out_of_range_plants_are_rejected() {
    let c = cfg();
    assert!(temporal_sample(0, 4, &c, 0, true).is_err());
    assert!(spatial_sample(0, BBox::new(6, 6, 8, 7), &c, 0, true).is_err());
    assert!(spatial_sample(0, BBox::new(3, 0, 2, 1), &c, 0, true).is_err());
    assert!(reasoning_sample(0, 0, &[0, 0, 1, 2], &c, 0, true).is_err());
    assert!(reasoning_sample(0, 4, &[0, 1, 2, 3], &c, 0, true).is_err());
    assert!(segmentation_sample(0, vec![false; 64], &c, 0, true).is_err());
    assert!(segmentation_sample(0, vec![true; 63], &c, 0, true).is_err());
    assert!(gen_temporal(0, 0, &c, true).is_err());
    assert!(gen_spatial(0, 1, &DataConfig { grid: 7, ..c }, true).is_err());
}

#[test]
fn quadrants_split_at_the_grid_centre() {
    assert_eq!(quadrant_of(&BBox::new(0, 0, 1, 1), 8), 0);
    assert_eq!(quadrant_of(&BBox::new(4, 0, 7, 3), 8), 1);
    assert_eq!(quadrant_of(&BBox::new(0, 5, 2, 7), 8), 2);
    assert_eq!(quadrant_of(&BBox::new(6, 6, 7, 7), 8), 3);
    // Centre exactly on the split goes right and down.
    assert_eq!(quadrant_of(&BBox::new(3, 3, 5, 5), 8), 3);
    assert_eq!(quadrant_of(&BBox::new(3, 3, 4, 4), 8), 0);
}

#[test]
fn suite_survives_jsonl() {
    let suite = gen_suite(1, [2; 4], &cfg(), true).unwrap();
    let mut buf = Vec::new();
    write_suite(&suite, &mut buf).unwrap();
    assert_eq!(read_suite(buf.as_slice()).unwrap(), suite);
}

#[test]
fn text_targets_shift_by_one() {
    let t = text_targets(2, &[10, 11, 12, 13], 3);
    assert_eq!(t, [IGNORE, IGNORE, IGNORE, IGNORE, 12, 13, IGNORE]);
}

proptest! {
    #[test]
    fn allocation_is_exact_and_close(total in 0usize..5000, w in prop::array::uniform4(0.0f64..1.0)) {
        let sum: f64 = w.iter().sum();
        prop_assume!(sum > 1e-6);
        let p = w.map(|x| x / sum);
        let c = allocate(total, &p);
        prop_assert_eq!(c.iter().sum::<usize>(), total);
        for (ci, pi) in c.iter().zip(&p) {
            prop_assert!((*ci as f64 - pi * total as f64).abs() < 1.0 + 1e-9);
        }
    }

    #[test]
    fn mask_box_round_trip(x0 in 0i64..8, y0 in 0i64..8, w in 0i64..8, h in 0i64..8) {
        let b = BBox::new(x0, y0, (x0 + w).min(7), (y0 + h).min(7));
        prop_assert_eq!(mask_bbox(&rasterize(&b, 8), 8), Some(b));
    }
}
