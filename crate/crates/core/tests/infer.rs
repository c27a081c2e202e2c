use csab::dataset::{write_ppm, RgbImage};
use csab::infer::{bench_latency, infer_frames, infer_sequence, latency_csv, segments, TemporalSmoother, REFERENCE_LINE};
use csab::model::{argmax, init_params};
use csab::{HeadKind, ModelSpec, Tensor};
use proptest::prelude::*;

fn frame(v: u8) -> RgbImage {
    RgbImage::new(32, 32, (0..32 * 32 * 3).map(|i| (i as u8).wrapping_mul(v)).collect()).unwrap()
}

#[test]
fn identical_frames_form_one_segment() {
    let spec = ModelSpec::tiny(HeadKind::Csab);
    let params = init_params(&spec, 4).unwrap();
    let frames = (0..6).map(|_| Ok(frame(3).to_tensor())).collect();
    let r = infer_frames(&spec, &params, frames, &TemporalSmoother::default()).unwrap();
    assert_eq!(r.segments.len(), 1);
    assert_eq!((r.segments[0].start, r.segments[0].end), (0, 5));
    for f in &r.per_frame {
        let p = f.probabilities.as_ref().unwrap();
        assert!((p.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        assert_eq!(f.label, Some(argmax(p)));
    }
    assert!(r.timing.unwrap().p50_ms <= r.timing.unwrap().p95_ms);
}

#[test]
fn unreadable_frames_are_reported_and_do_not_vote() {
    let dir = tempfile::tempdir().unwrap();
    let mut paths = Vec::new();
    for i in 0..5 {
        let p = dir.path().join(format!("f{i}.ppm"));
        if i == 2 {
            std::fs::write(&p, b"garbage").unwrap();
        } else {
            write_ppm(&p, &frame(i as u8 + 1)).unwrap();
        }
        paths.push(p);
    }
    let spec = ModelSpec::tiny(HeadKind::Plain);
    let params = init_params(&spec, 2).unwrap();
    let r = infer_sequence(&spec, &params, &paths, &TemporalSmoother::new(3).unwrap()).unwrap();
    assert!(r.per_frame[2].error.as_deref().unwrap().contains("f2.ppm"));
    assert_eq!(r.per_frame[2].label, None);
    assert!(r.per_frame[2].smoothed.is_some());
    let again = infer_sequence(&spec, &params, &paths, &TemporalSmoother::new(3).unwrap()).unwrap();
    assert_eq!(again.per_frame, r.per_frame);
    let lines: Vec<serde_json::Value> = r.to_json_lines().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 5);
    assert_eq!(lines[1]["frame"], 1);
    assert!(lines[1]["probabilities"].as_array().unwrap().len() == 6);
    assert!(lines[2]["label"].is_null());
}

#[test]
fn bench_reports_ordered_percentiles_and_rejects_short_runs() {
    let spec = ModelSpec::tiny(HeadKind::Csab);
    let params = init_params(&spec, 1).unwrap();
    let stats = bench_latency(&spec, &params, 10).unwrap();
    assert!(stats.p50_ms <= stats.p95_ms);
    assert_eq!(stats.iterations, 10);
    assert!(bench_latency(&spec, &params, 9).is_err());
    let csv = latency_csv(&spec, &stats);
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().starts_with("tiny,csab,10,"));
    assert!(REFERENCE_LINE.contains("<5 ms"));
}

#[test]
fn empty_sequence_is_rejected() {
    let spec = ModelSpec::tiny(HeadKind::Csab);
    let params = init_params(&spec, 1).unwrap();
    assert!(infer_frames(&spec, &params, vec![], &TemporalSmoother::default()).is_err());
    let wrong = vec![Ok(Tensor::zeros([8, 8, 3]))];
    assert!(infer_frames(&spec, &params, wrong, &TemporalSmoother::default()).is_err());
}

fn labels() -> impl Strategy<Value = Vec<Option<usize>>> {
    prop::collection::vec(prop_oneof![9 => (0usize..6).prop_map(Some), 1 => Just(None)], 1..60)
}

proptest! {
    #[test]
    fn segments_partition_the_sequence(l in labels(), half in 0usize..6) {
        let smoothed = TemporalSmoother::new(2 * half + 1).unwrap().smooth(&l);
        prop_assert_eq!(smoothed.len(), l.len());
        let segs = segments(&smoothed);
        prop_assert_eq!(segs[0].start, 0);
        prop_assert_eq!(segs.last().unwrap().end, l.len() - 1);
        for w in segs.windows(2) {
            prop_assert_eq!(w[0].end + 1, w[1].start);
            prop_assert_ne!(w[0].class, w[1].class);
        }
        for s in &segs {
            prop_assert!(smoothed[s.start..=s.end].iter().all(|&c| c == s.class));
        }
    }

    #[test]
    fn window_one_is_the_identity(l in labels()) {
        prop_assert_eq!(TemporalSmoother::new(1).unwrap().smooth(&l), l);
    }

    #[test]
    fn single_flicker_is_removed(a in 0usize..6, b in 0usize..6, at in 4usize..16) {
        let mut l = vec![Some(a); 20];
        l[at] = Some(b);
        let s = TemporalSmoother::new(9).unwrap().smooth(&l);
        prop_assert!(s.iter().all(|&c| c == Some(a)));
    }
}
