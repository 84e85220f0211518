use std::collections::BTreeSet;

use avcoop_core::objectives::{
    accuracy, box_ciou_auc, combine_losses, combine_losses_on_tape, l_bce, l_ce_semantic, l_dice, l_txt, miou_fscore,
    segment_event_f1, BBox, EvalResult, LossTerms, LossWeights, MetricConfig,
};
use avcoop_core::tensor::{Tape, Tensor, Var};
use avcoop_core::Error;
use proptest::prelude::*;

fn scalar(tape: &Tape, v: Var) -> f64 {
    tape.value(v).data()[0]
}

fn constant(tape: &mut Tape, shape: &[usize], v: &[f64]) -> Var {
    tape.constant(Tensor::new(shape, v.to_vec()).unwrap())
}

// ---- losses -----------------------------------------------------------

#[test]
fn text_loss_examples() {
    let mut tape = Tape::new();
    let sure = constant(&mut tape, &[2, 3], &[60.0, 0.0, 0.0, 0.0, 0.0, 60.0]);
    let l = l_txt(&mut tape, sure, &[0, 2], 99).unwrap();
    assert!(scalar(&tape, l) < 1e-20);

    let flat = constant(&mut tape, &[3, 4], &[0.0; 12]);
    let l = l_txt(&mut tape, flat, &[1, 3, 0], 99).unwrap();
    assert!((scalar(&tape, l) - 4f64.ln()).abs() < 1e-15);

    let logits = constant(&mut tape, &[3, 4], &[0.2, -1.0, 0.5, 1.3, 2.0, 0.0, -0.5, 0.1, 0.3, 0.3, -2.0, 1.0]);
    let l = l_txt(&mut tape, logits, &[3, 4, 0], 4).unwrap();
    assert!((scalar(&tape, l) - 1.023488721146316).abs() < 1e-14);

    assert!(matches!(l_txt(&mut tape, logits, &[4, 4, 4], 4), Err(Error::UndefinedLoss(_))));
}

#[test]
fn mask_loss_examples() {
    let t = [1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0];
    let mut tape = Tape::new();
    let z = constant(&mut tape, &[3, 3], &[1.2, -0.7, 0.3, 2.0, -1.5, 0.1, -3.0, 0.8, -0.2]);
    let l = l_bce(&mut tape, z, &t).unwrap();
    assert!((scalar(&tape, l) - 0.41237651074382486).abs() < 1e-14);

    let p = constant(&mut tape, &[3, 3], &[0.9, 0.1, 0.4, 0.7, 0.2, 0.95, 0.05, 0.6, 0.3]);
    let l = l_dice(&mut tape, p, &t).unwrap();
    assert!((scalar(&tape, l) - 0.22549019607843138).abs() < 1e-15);

    let exact = constant(&mut tape, &[3, 3], &t);
    let l = l_dice(&mut tape, exact, &t).unwrap();
    assert_eq!(scalar(&tape, l), 0.0);

    let mut last = 0.0;
    for n in [4usize, 16, 64, 256] {
        let zeros = constant(&mut tape, &[n], &vec![0.0; n]);
        let l = l_dice(&mut tape, zeros, &vec![1.0; n]).unwrap();
        let l = scalar(&tape, l);
        assert!((l - (1.0 - 1.0 / (n as f64 + 1.0))).abs() < 1e-15);
        assert!(l > last);
        last = l;
    }

    assert!(matches!(l_dice(&mut tape, p, &t[..4]), Err(Error::Shape { .. })));
    assert!(l_bce(&mut tape, z, &[0.5; 9]).is_err());
}

#[test]
fn semantic_loss_examples() {
    let mut tape = Tape::new();
    let sure = constant(&mut tape, &[3, 2, 1], &[50.0, -50.0, -50.0, 50.0, -50.0, -50.0]);
    let l = l_ce_semantic(&mut tape, sure, &[0, 1]).unwrap();
    assert!(scalar(&tape, l) < 1e-20);

    let flat = constant(&mut tape, &[3, 2, 2], &[0.0; 12]);
    let l = l_ce_semantic(&mut tape, flat, &[0, 1, 2, 1]).unwrap();
    assert!((scalar(&tape, l) - 3f64.ln()).abs() < 1e-15);

    let logits = constant(&mut tape, &[2, 2, 2], &[0.5, -1.0, 2.0, 0.0, 1.0, 1.0, -0.5, 0.3]);
    let l = l_ce_semantic(&mut tape, logits, &[1, 0, 0, 1]).unwrap();
    assert!((scalar(&tape, l) - 0.808562493496039).abs() < 1e-14);

    assert!(matches!(l_ce_semantic(&mut tape, logits, &[1, 0, 2, 1]), Err(Error::Index { .. })));
}

#[test]
fn loss_combination() {
    let w = LossWeights::default();
    assert_eq!(combine_losses(&LossTerms::default(), &w).unwrap(), (0.0, 0.0));
    let unit = LossTerms { txt: Some(1.0), bce: Some(1.0), dice: Some(1.0), ce: Some(1.0) };
    assert_eq!(combine_losses(&unit, &w).unwrap(), (2.5, 2.25));
    let text_only = LossTerms { txt: Some(0.8), ..LossTerms::default() };
    assert_eq!(combine_losses(&text_only, &w).unwrap(), (0.0, 0.8));
    let bad = LossWeights { dice: -0.1, ..w };
    assert!(matches!(combine_losses(&unit, &bad), Err(Error::Config(_))));

    let mut tape = Tape::new();
    let one = constant(&mut tape, &[1], &[1.0]);
    let t = LossTerms { txt: Some(one), bce: Some(one), dice: Some(one), ce: Some(one) };
    let l = combine_losses_on_tape(&mut tape, &t, &w).unwrap();
    assert_eq!(scalar(&tape, l), 2.25);
    assert!(combine_losses_on_tape(&mut tape, &LossTerms::default(), &w).is_err());
}

proptest! {
    #[test]
    fn combined_loss_is_linear_in_each_component(
        c in proptest::array::uniform4(0.0f64..5.0),
        k in 0.0f64..4.0,
        which in 0usize..4,
    ) {
        let w = LossWeights::default();
        let terms = |v: [f64; 4]| LossTerms { txt: Some(v[0]), bce: Some(v[1]), dice: Some(v[2]), ce: Some(v[3]) };
        let (_, base) = combine_losses(&terms(c), &w).unwrap();
        let mut zeroed = c;
        zeroed[which] = 0.0;
        let (_, without) = combine_losses(&terms(zeroed), &w).unwrap();
        let mut scaled = c;
        scaled[which] *= k;
        let (_, got) = combine_losses(&terms(scaled), &w).unwrap();
        let coef = [w.txt, w.seg * w.bce, w.seg * w.dice, w.seg * w.ce][which];
        prop_assert!((got - (without + k * coef * c[which])).abs() < 1e-12);
        prop_assert!((base - (without + coef * c[which])).abs() < 1e-12);
    }

    #[test]
    fn losses_are_nonnegative(z in proptest::collection::vec(-30.0f64..30.0, 1..12), seed in any::<u64>()) {
        let t: Vec<f64> = z.iter().enumerate().map(|(i, _)| ((seed >> (i % 64)) & 1) as f64).collect();
        let mut tape = Tape::new();
        let zv = constant(&mut tape, &[z.len()], &z);
        let bce = l_bce(&mut tape, zv, &t).unwrap();
        let p = tape.sigmoid(zv);
        let dice = l_dice(&mut tape, p, &t).unwrap();
        prop_assert!(scalar(&tape, bce) >= 0.0);
        let d = scalar(&tape, dice);
        prop_assert!((0.0..=1.0).contains(&d));
    }
}

// ---- accuracy ---------------------------------------------------------

#[test]
fn accuracy_examples() {
    assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
    assert_eq!(accuracy(&[0, 0, 0], &[1, 2, 3]).unwrap(), 0.0);
    assert_eq!(accuracy(&[1, 2, 0, 4], &[1, 2, 3, 4]).unwrap(), 0.75);
    assert!(matches!(accuracy::<u8>(&[], &[]), Err(Error::Empty(_))));
}

// ---- segment / event F1 -----------------------------------------------

type Tl = Vec<BTreeSet<usize>>;

fn tl(v: &[&[usize]]) -> Tl {
    v.iter().map(|s| s.iter().copied().collect()).collect()
}

/// Spans by scanning each class; independent of the library's extraction.
fn spans_oracle(t: &Tl) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for c in 0..4 {
        let mut i = 0;
        while i < t.len() {
            if t[i].contains(&c) {
                let s = i;
                while i < t.len() && t[i].contains(&c) {
                    i += 1;
                }
                out.push((c, s, i));
            } else {
                i += 1;
            }
        }
    }
    out
}

/// Largest matching by trying every assignment.
fn best_matching(p: &[(usize, usize, usize)], g: &[(usize, usize, usize)], used: &mut Vec<bool>) -> usize {
    let Some((&first, rest)) = p.split_first() else { return 0 };
    let mut best = best_matching(rest, g, used);
    for (j, &q) in g.iter().enumerate() {
        if used[j] || q.0 != first.0 {
            continue;
        }
        let inter = first.2.min(q.2).saturating_sub(first.1.max(q.1));
        let union = first.2.max(q.2) - first.1.min(q.1);
        if 2 * inter >= union {
            used[j] = true;
            best = best.max(1 + best_matching(rest, g, used));
            used[j] = false;
        }
    }
    best
}

fn f1_oracle(p: &Tl, g: &Tl) -> (f64, f64) {
    let pairs = |t: &Tl| -> BTreeSet<(usize, usize)> {
        t.iter().enumerate().flat_map(|(i, s)| s.iter().map(move |&c| (i, c))).collect()
    };
    let (pp, gp) = (pairs(p), pairs(g));
    let f = |tp: usize, a: usize, b: usize| if a + b == 0 { 1.0 } else { 2.0 * tp as f64 / (a + b) as f64 };
    let seg = f(pp.intersection(&gp).count(), pp.len(), gp.len());
    let (ps, gs) = (spans_oracle(p), spans_oracle(g));
    let m = best_matching(&ps, &gs, &mut vec![false; gs.len()]);
    (seg, f(m, ps.len(), gs.len()))
}

#[test]
fn segment_event_examples() {
    let cfg = MetricConfig::default();
    let gt = tl(&[&[0], &[0], &[1], &[1]]);
    assert_eq!(segment_event_f1(&gt, &gt, &cfg).unwrap(), (1.0, 1.0));
    let disjoint = tl(&[&[2], &[], &[0], &[0]]);
    assert_eq!(segment_event_f1(&disjoint, &gt, &cfg).unwrap(), (0.0, 0.0));
    let pred = tl(&[&[0], &[0, 1], &[1], &[]]);
    assert_eq!(segment_event_f1(&pred, &gt, &cfg).unwrap(), (0.75, 0.5));
    assert!(matches!(segment_event_f1(&[], &[], &cfg), Err(Error::Empty(_))));
    assert!(segment_event_f1(&gt[..2], &gt, &cfg).is_err());
}

#[test]
fn segment_event_exhaustive_up_to_four_segments() {
    let cfg = MetricConfig::default();
    for len in 1..=4u32 {
        let all: Vec<Tl> = (0..4usize.pow(len))
            .map(|code| {
                (0..len as usize)
                    .map(|i| {
                        let bits = (code >> (2 * i)) & 3;
                        (0..2).filter(|c| bits >> c & 1 == 1).collect()
                    })
                    .collect()
            })
            .collect();
        for p in &all {
            for g in &all {
                assert_eq!(segment_event_f1(p, g, &cfg).unwrap(), f1_oracle(p, g), "{p:?} vs {g:?}");
            }
        }
    }
}

// ---- boxes -----------------------------------------------------------

fn iou_by_pixels(a: &BBox, b: &BBox) -> f64 {
    let cells = |x: &BBox| -> BTreeSet<(i64, i64)> {
        (x.y_t..=x.y_b).flat_map(|y| (x.x_l..=x.x_r).map(move |c| (y, c))).collect()
    };
    let (sa, sb) = (cells(a), cells(b));
    sa.intersection(&sb).count() as f64 / sa.union(&sb).count() as f64
}

#[test]
fn box_examples() {
    let cfg = MetricConfig::default();
    let a = BBox::new(0, 0, 3, 1);
    assert_eq!(box_ciou_auc(&[Some(a)], &[a], &cfg).unwrap(), (1.0, 1.0));
    assert_eq!(box_ciou_auc(&[Some(BBox::new(5, 5, 6, 6))], &[a], &cfg).unwrap(), (0.0, 0.0));
    // Half of the ground truth covered: 4 / 8 pixels.
    let half = BBox::new(0, 0, 1, 1);
    assert_eq!(half.iou(&a), 0.5);
    assert_eq!(box_ciou_auc(&[Some(half)], &[a], &cfg).unwrap(), (1.0, 10.0 / 19.0));
    // Shifted by half its width: 4 shared of 12.
    let shifted = BBox::new(2, 0, 5, 1);
    assert_eq!(shifted.iou(&a), 1.0 / 3.0);
    assert_eq!(box_ciou_auc(&[Some(shifted)], &[a], &cfg).unwrap(), (0.0, 6.0 / 19.0));
    assert_eq!(box_ciou_auc(&[None], &[a], &cfg).unwrap(), (0.0, 0.0));
    assert!(box_ciou_auc(&[Some(a)], &[BBox::new(2, 0, 1, 1)], &cfg).is_err());
    assert!(matches!(box_ciou_auc(&[], &[], &cfg), Err(Error::Empty(_))));
}

#[test]
fn box_metrics_exhaustive_on_four_by_four_grid() {
    let cfg = MetricConfig::default();
    let mut boxes = Vec::new();
    for y_t in 0..4 {
        for y_b in y_t..4 {
            for x_l in 0..4 {
                for x_r in x_l..4 {
                    boxes.push(BBox::new(x_l, y_t, x_r, y_b));
                }
            }
        }
    }
    assert_eq!(boxes.len(), 100);
    for p in &boxes {
        for g in &boxes {
            let iou = iou_by_pixels(p, g);
            let hits = (1..=19).filter(|&k| iou >= k as f64 / 20.0).count();
            let want = ((iou >= 0.5) as u8 as f64, hits as f64 / 19.0);
            assert_eq!(box_ciou_auc(&[Some(*p)], &[*g], &cfg).unwrap(), want, "{p:?} {g:?}");
        }
    }
}

// ---- masks -----------------------------------------------------------

fn mask_oracle(p: &[f64], g: &[bool]) -> (f64, f64) {
    let pred: BTreeSet<usize> = (0..p.len()).filter(|&i| p[i] >= 0.5).collect();
    let gt: BTreeSet<usize> = (0..g.len()).filter(|&i| g[i]).collect();
    let inter = pred.intersection(&gt).count() as f64;
    let union = pred.union(&gt).count() as f64;
    if union == 0.0 {
        return (1.0, 1.0);
    }
    let prec = if pred.is_empty() { 0.0 } else { inter / pred.len() as f64 };
    let rec = if gt.is_empty() { 0.0 } else { inter / gt.len() as f64 };
    let f = if prec + rec == 0.0 { 0.0 } else { 1.3 * prec * rec / (0.3 * prec + rec) };
    (inter / union, f)
}

#[test]
fn mask_examples() {
    let cfg = MetricConfig::default();
    let solid = vec![true; 4];
    assert_eq!(miou_fscore(&[vec![1.0; 4]], &[solid.clone()], &cfg).unwrap(), (1.0, 1.0));
    assert_eq!(miou_fscore(&[vec![0.0; 4]], &[solid.clone()], &cfg).unwrap(), (0.0, 0.0));
    let checker = vec![1.0, 0.0, 0.0, 1.0];
    let (iou, f) = miou_fscore(&[checker], &[solid.clone()], &cfg).unwrap();
    assert_eq!(iou, 0.5);
    assert!((f - 0.8125).abs() < 1e-15);
    assert!(miou_fscore(&[vec![1.0; 3]], &[solid], &cfg).is_err());
}

#[test]
fn mask_metrics_exhaustive_up_to_four_pixels() {
    let cfg = MetricConfig::default();
    let levels = [0.0, 0.3, 0.5, 0.8];
    for n in 1..=4u32 {
        for pc in 0..4usize.pow(n) {
            let p: Vec<f64> = (0..n as usize).map(|i| levels[(pc >> (2 * i)) & 3]).collect();
            for gc in 0..2usize.pow(n) {
                let g: Vec<bool> = (0..n as usize).map(|i| gc >> i & 1 == 1).collect();
                let (iou, f) = miou_fscore(&[p.clone()], &[g.clone()], &cfg).unwrap();
                let (oi, of) = mask_oracle(&p, &g);
                assert_eq!(iou, oi);
                assert!((f - of).abs() < 1e-15, "{p:?} {g:?}");
            }
        }
    }
}

proptest! {
    #[test]
    fn metrics_ignore_sample_order(seed in any::<u64>(), n in 2usize..8) {
        let mut rng = seed;
        let mut next = |m: i64| { rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); ((rng >> 33) as i64).rem_euclid(m) };
        let cfg = MetricConfig::default();
        let mut boxes = Vec::new();
        let mut masks = Vec::new();
        for _ in 0..n {
            let (a, b, c, d) = (next(6), next(6), next(6), next(6));
            let g = BBox::new(a.min(b), c.min(d), a.max(b), c.max(d));
            let (a, b) = (next(6), next(6));
            boxes.push((Some(BBox::new(a.min(b), 0, a.max(b), next(3) + 2)), g));
            let p: Vec<f64> = (0..6).map(|_| next(10) as f64 / 10.0).collect();
            let t: Vec<bool> = (0..6).map(|_| next(2) == 1).collect();
            masks.push((p, t));
        }
        let split = |v: &[(Option<BBox>, BBox)]| (v.iter().map(|x| x.0).collect::<Vec<_>>(), v.iter().map(|x| x.1).collect::<Vec<_>>());
        let (p1, g1) = split(&boxes);
        let r1 = box_ciou_auc(&p1, &g1, &cfg).unwrap();
        let (m1, t1): (Vec<_>, Vec<_>) = masks.iter().cloned().unzip();
        let s1 = miou_fscore(&m1, &t1, &cfg).unwrap();
        boxes.reverse();
        masks.rotate_left(1);
        let (p2, g2) = split(&boxes);
        let r2 = box_ciou_auc(&p2, &g2, &cfg).unwrap();
        let (m2, t2): (Vec<_>, Vec<_>) = masks.into_iter().unzip();
        let s2 = miou_fscore(&m2, &t2, &cfg).unwrap();
        prop_assert!((r1.0 - r2.0).abs() < 1e-12 && (r1.1 - r2.1).abs() < 1e-12);
        prop_assert!((s1.0 - s2.0).abs() < 1e-12 && (s1.1 - s2.1).abs() < 1e-12);
        for v in [r1.0, r1.1, s1.0, s1.1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}

#[test]
fn eval_result_serialization() {
    let mut r = EvalResult::default();
    r.insert("temporal", 10, "accuracy", 0.7).unwrap();
    r.insert("spatial", 5, "ciou", 0.2).unwrap();
    r.insert("spatial", 5, "auc", 0.4).unwrap();
    assert!(r.insert("spatial", 5, "auc", 1.5).is_err());
    assert_eq!(r.to_csv(), "family,metric,value,samples\nspatial,auc,0.4,5\nspatial,ciou,0.2,5\ntemporal,accuracy,0.7,10\n");
    let back: EvalResult = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(back, r);
    assert_eq!(r.get("temporal", "accuracy"), Some(0.7));
}
