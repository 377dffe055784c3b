use std::collections::BTreeMap;
use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use matt_core::ingest::{
    extract_frames, format_capture_meta, pair_frames, parse_capture_meta, ExternalDecoder, FrameDirectory, IngestError,
};
use matt_core::{Band, CaptureMeta, Error, Period};
use proptest::prelude::*;

/// Stand-in for ffmpeg: the "video" is a text file listing PNG paths, one
/// per frame. Honors the `select=not(mod(n\,S))` filter and writes the kept
/// frames to the numbered output pattern starting at 1.
const FAKE_DECODER: &str = r#"#!/bin/sh
video=""; stride=1; out=""
while [ $# -gt 0 ]; do
  case "$1" in
    -i) video="$2"; shift 2 ;;
    -vf) stride=$(printf '%s' "$2" | sed -n 's/.*,\([0-9]*\))).*/\1/p'); shift 2 ;;
    -nostdin) shift ;;
    -loglevel|-vsync) shift 2 ;;
    *) out="$1"; shift ;;
  esac
done
[ -f "$video" ] || { echo "no such video: $video" >&2; exit 3; }
n=0; k=1
while IFS= read -r frame; do
  if [ $((n % stride)) -eq 0 ]; then
    cp "$frame" "$(printf "$out" "$k")"; k=$((k + 1))
  fi
  n=$((n + 1))
done < "$video"
"#;

fn write_script(dir: &Path) -> PathBuf {
    let path = dir.join("fake-decoder");
    fs::write(&path, FAKE_DECODER).unwrap();
    fs::set_permissions(&path, fs::Permissions::from_mode(0o755)).unwrap();
    path
}

fn write_frames(dir: &Path, n: usize) -> Vec<PathBuf> {
    fs::create_dir_all(dir).unwrap();
    (0..n)
        .map(|i| {
            let p = dir.join(format!("f{i:04}.png"));
            RgbImage::from_pixel(4, 4, Rgb([i as u8, 0, 0])).save(&p).unwrap();
            p
        })
        .collect()
}

#[test]
fn external_decoder_names_frames_by_source_index() {
    let tmp = tempfile::tempdir().unwrap();
    let frames = write_frames(&tmp.path().join("src"), 25);
    let video = tmp.path().join("clip.txt");
    fs::write(&video, frames.iter().map(|p| p.display().to_string() + "\n").collect::<String>()).unwrap();
    let decoder = ExternalDecoder { program: write_script(tmp.path()).display().to_string(), video };
    let out = tmp.path().join("out");
    assert_eq!(extract_frames(&decoder, 10, &out, "png").unwrap(), 3);
    let mut names: Vec<String> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["000000.png", "000010.png", "000020.png"]);
    // frame 20 carries red = 20
    let img = image::open(out.join("000020.png")).unwrap().to_rgb8();
    assert_eq!(img.get_pixel(0, 0)[0], 20);
}

#[test]
fn external_decoder_failure_is_reported_and_cleaned_up() {
    let tmp = tempfile::tempdir().unwrap();
    let decoder =
        ExternalDecoder { program: write_script(tmp.path()).display().to_string(), video: tmp.path().join("missing.txt") };
    let out = tmp.path().join("out");
    let err = extract_frames(&decoder, 5, &out, "png").unwrap_err();
    match err {
        Error::Ingest(IngestError::DecodeFailed { detail, .. }) => assert!(detail.contains("no such video"), "{detail}"),
        other => panic!("unexpected error {other:?}"),
    }
    assert_eq!(fs::read_dir(&out).unwrap().count(), 0, "staging directory left behind");
}

#[test]
fn missing_decoder_is_distinct_error() {
    let tmp = tempfile::tempdir().unwrap();
    let decoder = ExternalDecoder { program: "/nonexistent/decoder".into(), video: tmp.path().join("v.mp4") };
    let err = extract_frames(&decoder, 5, &tmp.path().join("out"), "png").unwrap_err();
    assert!(matches!(err, Error::Ingest(IngestError::DecoderNotFound(_))), "{err:?}");
}

#[test]
fn frame_directory_matches_external_decoder_selection() {
    let tmp = tempfile::tempdir().unwrap();
    write_frames(&tmp.path().join("src"), 7);
    let out = tmp.path().join("out");
    let n = extract_frames(&FrameDirectory { dir: tmp.path().join("src") }, 3, &out, "png").unwrap();
    assert_eq!(n, 3);
    for name in ["000000.png", "000003.png", "000006.png"] {
        assert!(out.join(name).is_file(), "{name}");
    }
}

#[test]
fn pairing_reports_missing_bands() {
    let tmp = tempfile::tempdir().unwrap();
    let mut dirs = BTreeMap::new();
    for band in Band::ALL {
        let d = tmp.path().join(band.dir_name());
        fs::create_dir_all(&d).unwrap();
        dirs.insert(band, d);
    }
    let img = RgbImage::new(2, 2);
    for stem in ["lotA_25m_noon_000100", "lotA_25m_noon_000200", "odd"] {
        img.save(dirs[&Band::Rgb].join(format!("{stem}.png"))).unwrap();
        img.save(dirs[&Band::RgbLwir].join(format!("{stem}.png"))).unwrap();
    }
    img.save(dirs[&Band::Lwir].join("lotA_25m_noon_000100.png")).unwrap();
    img.save(dirs[&Band::Lwir].join("odd.png")).unwrap();

    let mut overrides = BTreeMap::new();
    let forced = CaptureMeta { elevation_m: 91.0, period: Period::PostSunset, frame_index: 7, site: "x".into() };
    overrides.insert("odd".to_string(), forced.clone());
    let outcome = pair_frames(&dirs, &overrides).unwrap();

    let ids: Vec<&str> = outcome.pairs.iter().map(|p| p.pair_id.as_str()).collect();
    assert_eq!(ids, ["lotA_25m_noon_000100", "odd"]);
    assert_eq!(outcome.pairs[0].meta.as_ref().unwrap().period, Period::Noon);
    assert_eq!(outcome.pairs[1].meta.as_ref(), Some(&forced));
    assert_eq!(outcome.unpaired.len(), 1);
    assert_eq!(outcome.unpaired[0].stem, "lotA_25m_noon_000200");
    assert_eq!(outcome.unpaired[0].missing, [Band::Lwir]);
}

#[test]
fn capture_meta_rejects_bad_fields() {
    for stem in ["lotA_25m_noon_x1", "lotA_25_noon_000001", "lotA_25m_dusk_000001", "25m_noon_000001"] {
        assert!(parse_capture_meta(stem).is_err(), "{stem}");
    }
}

proptest! {
    #[test]
    fn capture_meta_round_trips(
        site in "[a-zA-Z][a-zA-Z0-9_]{0,8}",
        elev in 0u32..500,
        p in 0usize..5,
        frame in 0u64..1_000_000,
    ) {
        let meta = CaptureMeta { elevation_m: elev as f64, period: Period::ALL[p], frame_index: frame, site };
        prop_assert_eq!(parse_capture_meta(&format_capture_meta(&meta)).unwrap(), meta);
    }
}
