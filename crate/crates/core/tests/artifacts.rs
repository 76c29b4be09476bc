//! Files in the layout the Python exporter writes, read back through the
//! primary-side parsers.

use std::fs;

use driftbench::formats::{
    group_by_frame, parse_detections, parse_grad_loss, read_features, read_segmap, sidecar_path, write_detections,
    write_features, write_segmap, BgLabel, DetectionRecord, FeatureVectorSet, SegMapImage,
};
use driftbench::shift::ingest_grad_loss;
use driftbench::{BBox, Detection};

fn exporter_jsonl(passes: u32, frames: usize, dropout: bool) -> String {
    let mut out = String::new();
    for f in 0..frames {
        for p in 0..passes {
            let wobble = if dropout { 0.5 * p as f64 } else { 0.0 };
            out.push_str(&format!(
                "{{\"frame_id\": \"img_{f:03}\", \"pass_id\": {p}, \"detections\": [{{\"bbox\": [{}, 4.0, 30.0, 22.5], \"class_id\": 0, \"score\": 0.875}}]}}\n",
                10.0 + wobble
            ));
        }
    }
    out
}

#[test]
fn two_passes_over_three_frames_is_six_lines() {
    let text = exporter_jsonl(2, 3, true);
    assert_eq!(text.lines().count(), 6);
    let records = parse_detections(text.as_bytes()).unwrap();
    assert_eq!(records.len(), 6);
    let frames = group_by_frame(records);
    assert_eq!(frames.len(), 3);
    assert!(frames.iter().all(|f| f.passes.len() == 2));
}

#[test]
fn dropout_off_passes_serialize_identically() {
    let records = parse_detections(exporter_jsonl(2, 3, false).as_bytes()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for pair in records.chunks(2) {
        let bytes: Vec<Vec<u8>> = pair
            .iter()
            .map(|r| {
                let p = dir.path().join("one.jsonl");
                let mut r = r.clone();
                r.pass_id = 0;
                write_detections(&[r], &p).unwrap();
                fs::read(&p).unwrap()
            })
            .collect();
        assert_eq!(bytes[0], bytes[1]);
    }
}

#[test]
fn detections_round_trip_through_disk() {
    let records = vec![DetectionRecord {
        frame_id: "a".into(),
        pass_id: 3,
        detections: vec![
            Detection::new(BBox::new(0.1, 0.2, 5.3, 7.7).unwrap(), 2, 0.123456789),
            Detection::new(BBox::new(1.0, 1.0, 2.0, 2.0).unwrap(), 0, 1.0),
        ],
    }];
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.jsonl");
    write_detections(&records, &p).unwrap();
    let back = driftbench::formats::read_detections(&p).unwrap();
    assert_eq!(back, records);
}

#[test]
fn malformed_lines_report_their_line_number() {
    let text = format!("{}\n{{\"frame_id\": \"x\"}}\n", exporter_jsonl(1, 1, false).trim_end());
    let err = parse_detections(text.as_bytes()).unwrap_err().to_string();
    assert!(err.contains('2'), "{err}");
}

#[test]
fn grad_loss_export_ingests() {
    // the second detection had no candidates, so both terms are zero
    let text = "{\"frame_id\": \"img_000\", \"detections\": [{\"loc\": 0.25, \"cls\": 1.5}, {\"loc\": 0.0, \"cls\": 0.0}]}\n\
                {\"frame_id\": \"img_001\", \"detections\": [{\"loc\": 0.5, \"cls\": 0.0}]}\n";
    let records = parse_grad_loss(text.as_bytes()).unwrap();
    let s = ingest_grad_loss(&records).unwrap();
    assert_eq!(s.detections, 3);
    assert_eq!(s.loc_mean, 0.25);
    assert_eq!(s.cls_mean, 0.5);
}

#[test]
fn negative_grad_loss_is_rejected() {
    let text = "{\"frame_id\": \"f\", \"detections\": [{\"loc\": -0.1, \"cls\": 0.0}]}\n";
    let bad = parse_grad_loss(text.as_bytes()).and_then(|r| ingest_grad_loss(&r));
    assert!(bad.is_err());
}

#[test]
fn fvec_written_like_the_exporter_reads_back() {
    // struct.pack("<5sII", b"FVEC1", 2, 2) followed by four little-endian f32
    let mut bytes = b"FVEC1".to_vec();
    bytes.extend_from_slice(&2u32.to_le_bytes());
    bytes.extend_from_slice(&2u32.to_le_bytes());
    for v in [0.5f32, -1.0, 2.25, 3.0] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("rainy.fvec");
    fs::write(&p, &bytes).unwrap();
    fs::write(sidecar_path(&p), r#"["img_000", "img_001"]"#).unwrap();
    let set = read_features(&p).unwrap();
    assert_eq!(set.domain_id, "rainy");
    assert_eq!(set.vector(1), &[2.25, 3.0]);

    let q = dir.path().join("copy.fvec");
    write_features(&set, &q).unwrap();
    assert_eq!(fs::read(&q).unwrap(), bytes);
}

#[test]
fn fvec_without_sidecar_fails() {
    let set = FeatureVectorSet::new("d", 1, vec![1.0], vec!["f".into()]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.fvec");
    write_features(&set, &p).unwrap();
    fs::remove_file(sidecar_path(&p)).unwrap();
    assert!(read_features(&p).is_err());
}

#[test]
fn segmap_round_trips_through_disk() {
    let labels = [BgLabel::Sky, BgLabel::Tree, BgLabel::Ground, BgLabel::Sky, BgLabel::Sky, BgLabel::Ground];
    let seg = SegMapImage::new(3, 2, labels.to_vec()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("f.pgm");
    write_segmap(&seg, &p).unwrap();
    assert_eq!(read_segmap(&p).unwrap(), seg);
    assert_eq!(seg.get(1, 0), BgLabel::Tree);
}
