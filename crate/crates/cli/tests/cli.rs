use std::path::Path;
use std::process::{Command, Output};

use segsplat::io::{self, TracksFile};
use segsplat::semantics::QueryResult;
use segsplat::synthetic::{tracking_fixture, SMALL_BLUE, TRACK_A, TRACK_B};
use segsplat::tracking::Detection;
use segsplat::Granularity;

fn segsplat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_segsplat"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn segsplat")
}

fn ok(args: &[&str]) -> Output {
    let out = segsplat(args);
    assert!(
        out.status.success(),
        "segsplat {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_twice_is_byte_identical_and_query_finds_the_object() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["gen-synthetic", "nested", "--out", s(d), "--seed", "5", "--iterations", "120"]);
    let config = d.join("scene.json");
    for name in ["a.ckpt", "b.ckpt"] {
        ok(&["train", "--config", s(&config), "--seed", "7", "--out", s(&d.join(name)), "--metrics", s(&d.join(format!("{name}.csv")))]);
    }
    let a = std::fs::read(d.join("a.ckpt")).unwrap();
    assert_eq!(a, std::fs::read(d.join("b.ckpt")).unwrap());
    assert_eq!(
        std::fs::read(d.join("a.ckpt.csv")).unwrap(),
        std::fs::read(d.join("b.ckpt.csv")).unwrap()
    );

    let png = d.join("blue.png");
    let out = ok(&[
        "query",
        "--checkpoint",
        s(&d.join("a.ckpt")),
        "--prompt",
        "blue blob",
        "--prompts",
        s(&d.join("prompts.json")),
        "--granularity",
        "small",
        "--highlight",
        s(&png),
    ]);
    let result: QueryResult = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(result.best().unwrap().object_id, SMALL_BLUE);
    assert!((result.best().unwrap().score - 1.0).abs() < 1e-6);
    assert!(png.is_file());

    let ply = d.join("blue.ply");
    ok(&["export", "--checkpoint", s(&d.join("a.ckpt")), "--object", &SMALL_BLUE.to_string(), "--out", s(&ply)]);
    assert!(!io::read_gaussians(&ply).unwrap().is_empty());

    let report = d.join("report.json");
    ok(&[
        "eval",
        "--checkpoint",
        s(&d.join("a.ckpt")),
        "--config",
        s(&config),
        "--gt-masks",
        s(&d.join("gt_masks")),
        "--prompts",
        s(&d.join("eval_prompts.json")),
        "--prompt-embeddings",
        s(&d.join("prompts.json")),
        "--out",
        s(&report),
    ]);
    let report: serde_json::Value = io::read_json(&report).unwrap();
    assert_eq!(report["query_accuracy"], 1.0);

    ok(&["render", "--checkpoint", s(&d.join("a.ckpt")), "--camera", "3", "--out", s(&d.join("v3.png"))]);
    let bad = segsplat(&["render", "--checkpoint", s(&d.join("a.ckpt")), "--camera", "99", "--out", s(&d.join("x.png"))]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("camera 99"));
}

#[test]
fn consolidate_matches_the_scripted_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["gen-synthetic", "tracking", "--out", s(d)]);
    let out = d.join("tracked");
    ok(&["consolidate", "--masks", s(&d.join("raw_masks.json")), "--config", s(&d.join("scene.json")), "--out", s(&out)]);

    // Hand-written expectations: A is tracked throughout and its near-copy is dropped, B
    // keeps its tracker id until it is lost after frame 7, and the frame-12 detection
    // pass adds B again (next free id 4) and C (id 5).
    let fx = tracking_fixture();
    let frames_of = |id: u32| fx.ground_truth[&id].keys().copied().collect::<Vec<_>>();
    let (a, b, c) = (frames_of(10), frames_of(20), frames_of(30));
    let range = |f: &[usize]| (f[0], *f.last().unwrap());
    let b_early: Vec<usize> = b.iter().copied().filter(|&f| f <= 7).collect();
    let b_late: Vec<usize> = b.iter().copied().filter(|&f| f >= 12).collect();
    let expected = vec![
        (TRACK_A, range(&a)),
        (TRACK_B, range(&b_early)),
        (4, range(&b_late)),
        (5, range(&c)),
    ];

    let tracks: TracksFile = io::read_json(out.join("tracks.json")).unwrap();
    let got: Vec<(u32, (usize, usize))> = tracks
        .tracks
        .iter()
        .map(|t| {
            assert_eq!(t.granularity, Granularity::Small);
            (t.id, (t.first_frame, t.last_frame))
        })
        .collect();
    assert_eq!(got, expected);
    assert_eq!(tracks.frames, 20);

    let detections: Vec<Detection> = io::read_json(out.join("detections.json")).unwrap();
    let summary: Vec<(usize, u32, u32)> = detections.iter().map(|d| (d.frame, d.track_id, d.candidate)).collect();
    assert_eq!(summary, vec![(12, 4, 221), (12, 5, 222)]);

    let masks = io::read_tracked_masks(&out).unwrap();
    for f in 12..20 {
        let map = masks.id_map(f, Granularity::Small);
        assert_eq!(map.mask_of(5), fx.ground_truth[&30][&f], "frame {f}");
        assert_eq!(map.mask_of(4), fx.ground_truth[&20][&f], "frame {f}");
    }
}

#[test]
fn failures_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let missing = segsplat(&["export", "--checkpoint", s(&d.join("nope.ckpt")), "--object", "1", "--out", s(&d.join("o.ply"))]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope.ckpt"));

    let unknown = segsplat(&["train", "--bogus"]);
    assert!(!unknown.status.success());

    let no_command = segsplat(&[]);
    assert!(!no_command.status.success());

    std::fs::write(
        d.join("bad.json"),
        r#"{"cameras":"c.json","masks":"m","point_cloud":"p.ply","tracking":{"detect_interval":0},"train":{"partial_iou":1.5}}"#,
    )
    .unwrap();
    let bad = segsplat(&["init", "--config", s(&d.join("bad.json")), "--out", s(&d.join("x.ckpt"))]);
    assert!(!bad.status.success());
    let msg = String::from_utf8_lossy(&bad.stderr);
    assert!(msg.contains("detect_interval"), "{msg}");
    assert!(msg.contains("partial_iou"), "{msg}");
}
