//! Sparse-model reader against the shared fixture: hand-written text and the
//! same records encoded by the test-side binary writer.

use std::path::Path;

mod common;
use common::colmap_fixture::*;

use lapnerf::colmap::{
    parse_sparse_model, parse_sparse_model_with, write_text_model, CameraModelKind, ColmapError, FormatHint,
    ParseOptions, SparseModel,
};

fn parse_full(dir: &Path, format: FormatHint) -> SparseModel {
    parse_sparse_model_with(
        dir,
        &ParseOptions {
            format,
            keep_observations: true,
        },
    )
    .unwrap()
}

#[test]
fn binary_and_text_exports_agree_field_by_field() {
    let tb = tempfile::tempdir().unwrap();
    let tt = tempfile::tempdir().unwrap();
    write_all(tb.path(), &binary_files());
    write_all(tt.path(), &text_files());
    let b = parse_full(tb.path(), FormatHint::Auto);
    let t = parse_full(tt.path(), FormatHint::Auto);

    let (cams, imgs, pts) = fixture_records();
    assert_eq!(b.cameras.len(), 2);
    for cam in &cams {
        let (x, y) = (&b.cameras[&cam.id], &t.cameras[&cam.id]);
        assert_eq!(x, y);
        assert_eq!(x.model_kind.id(), cam.model);
        assert_eq!((x.width as u64, x.height as u64), (cam.w, cam.h));
        assert_eq!(x.params(), cam.params);
    }
    assert_eq!(b.cameras[&2].model_kind, CameraModelKind::OpenCv);
    for img in &imgs {
        let (x, y) = (&b.images[&img.id], &t.images[&img.id]);
        assert_eq!(x, y);
        assert_eq!(x.pose.q, img.q);
        assert_eq!(x.pose.t, img.t);
        assert_eq!(x.camera_id, img.cam);
        assert_eq!(x.name, img.name);
        let ids: Vec<i64> = img.obs.iter().map(|o| o.2).collect();
        assert_eq!(x.point3d_ids, ids);
        let kps: Vec<[f64; 2]> = img.obs.iter().map(|o| [o.0, o.1]).collect();
        assert_eq!(x.keypoints.as_ref().unwrap(), &kps);
    }
    for pt in &pts {
        let (x, y) = (&b.points[&pt.id], &t.points[&pt.id]);
        assert_eq!(x, y);
        assert_eq!(x.xyz, pt.xyz);
        assert_eq!(x.rgb, pt.rgb);
        assert_eq!(x.error, pt.err);
        let tr: Vec<(u32, u32)> = x.track.iter().map(|e| (e.image_id, e.point2d_idx)).collect();
        assert_eq!(tr, pt.track);
    }
    assert_eq!(b, t);
}

#[test]
fn text_write_then_parse_is_exact() {
    let src = tempfile::tempdir().unwrap();
    write_all(src.path(), &binary_files());
    let model = parse_full(src.path(), FormatHint::Binary);
    let out = tempfile::tempdir().unwrap();
    write_text_model(&model, out.path()).unwrap();
    assert_eq!(parse_full(out.path(), FormatHint::Text), model);

    // Twice through, to catch anything lost in formatting.
    let again = tempfile::tempdir().unwrap();
    write_text_model(&parse_full(out.path(), FormatHint::Text), again.path()).unwrap();
    for f in ["cameras.txt", "images.txt", "points3D.txt"] {
        assert_eq!(
            std::fs::read(out.path().join(f)).unwrap(),
            std::fs::read(again.path().join(f)).unwrap()
        );
    }
}

fn truncation_corpus(files: [(String, Vec<u8>); 3]) -> (usize, usize) {
    let dir = tempfile::tempdir().unwrap();
    let (mut tried, mut detected) = (0, 0);
    for victim in 0..3 {
        for cut in 0..files[victim].1.len() {
            let mut set = files.clone();
            set[victim].1.truncate(cut);
            write_all(dir.path(), &set);
            tried += 1;
            match parse_sparse_model(dir.path(), FormatHint::Auto) {
                Err(ColmapError::MalformedRecord { .. } | ColmapError::InvalidReference(_)) => detected += 1,
                Err(e) => panic!("{} cut at {cut}: unexpected error {e}", set[victim].0),
                Ok(_) => eprintln!("{} cut at {cut} parsed cleanly", set[victim].0),
            }
        }
    }
    (tried, detected)
}

#[test]
fn every_binary_truncation_is_detected() {
    let (tried, detected) = truncation_corpus(binary_files());
    assert!(tried > 500);
    assert_eq!(detected, tried);
}

#[test]
fn every_text_truncation_is_detected() {
    let (tried, detected) = truncation_corpus(text_files());
    assert!(tried > 500);
    assert_eq!(detected, tried);
}

#[test]
fn missing_table_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let files = text_files();
    write_all(dir.path(), &files[..2]);
    assert!(matches!(
        parse_sparse_model(dir.path(), FormatHint::Text),
        Err(ColmapError::MissingFile(p)) if p.ends_with("points3D.txt")
    ));
}
