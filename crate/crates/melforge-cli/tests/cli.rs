//! Black-box tests of the command-line surface: the documented verbs, file
//! outputs, and exit codes (0 success, 1 usage, 2 data error).

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn melforge(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_melforge"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn workdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("melforge-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn full_pipeline_through_the_cli() {
    let dir = workdir("pipeline");
    let run = |args: &[&str]| {
        let out = melforge(args, &dir);
        assert!(
            out.status.success(),
            "command {:?} failed:\n{}\n{}",
            args,
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        );
        out
    };

    run(&["gen-demo", "--out", "corpus", "--count", "4", "--seed", "9"]);
    assert!(dir.join("corpus/manifest.jsonl").exists());
    assert!(dir.join("corpus/symbols.txt").exists());

    run(&[
        "extract",
        "--manifest",
        "corpus/manifest.jsonl",
        "--symbols",
        "corpus/symbols.txt",
        "--out",
        "cache",
    ]);
    assert!(dir.join("cache/stats.mfsc").exists());
    assert!(dir.join("cache/features/demo_000.mfsc").exists());

    std::fs::write(
        dir.join("tiny.conf"),
        "hidden = 32\nencoder_layers = 1\ndecoder_layers = 1\nconv_filter = 64\npredictor_filter = 16\npredictor_dropout = 0.1\nwarmup_steps = 50\n",
    )
    .unwrap();
    run(&[
        "--config",
        "tiny.conf",
        "--seed",
        "3",
        "train",
        "--manifest",
        "corpus/manifest.jsonl",
        "--features",
        "cache",
        "--symbols",
        "corpus/symbols.txt",
        "--out",
        "run",
        "--steps",
        "40",
        "--batch-size",
        "2",
    ]);
    assert!(dir.join("run/checkpoint-final.mfsc").exists());
    let metrics = std::fs::read_to_string(dir.join("run/metrics.csv")).unwrap();
    assert!(metrics.starts_with("step,lr,total,mel,dur,pitch_spec,pitch_stats,energy"));
    assert_eq!(metrics.lines().count(), 41); // header + one row per step

    let out = run(&[
        "synth",
        "--checkpoint",
        "run/checkpoint-final.mfsc",
        "--phonemes",
        "_ B AA S IY _",
        "--out",
        "synth.mfsc",
        "--csv",
        "synth.csv",
        "--wav",
        "synth.wav",
        "--griffin-lim-iters",
        "8",
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        stdout.contains("frames") && stdout.contains("s)"),
        "synth should report duration, got: {stdout}"
    );
    assert!(dir.join("synth.mfsc").exists());
    assert!(dir.join("synth.csv").exists());
    assert!(dir.join("synth.wav").exists());

    run(&[
        "eval",
        "--checkpoint",
        "run/checkpoint-final.mfsc",
        "--manifest",
        "corpus/manifest.jsonl",
        "--features",
        "cache",
        "--out",
        "evalout",
    ]);
    let report = std::fs::read_to_string(dir.join("evalout/report.csv")).unwrap();
    assert_eq!(report.lines().count(), 4 + 2); // header + 4 utterances + summary
    assert!(dir.join("evalout/report.txt").exists());

    run(&[
        "dump-pitch",
        "--features",
        "cache/features/demo_001.mfsc",
        "--out",
        "pitch.csv",
    ]);
    let pitch = std::fs::read_to_string(dir.join("pitch.csv")).unwrap();
    assert!(pitch.starts_with("frame,f0_hz"));
    assert!(pitch.lines().count() > 1);

    run(&[
        "dump-pitch",
        "--checkpoint",
        "run/checkpoint-final.mfsc",
        "--phonemes",
        "_ M UW _",
        "--pitch-mult",
        "1.25",
        "--out",
        "synth_pitch.csv",
    ]);
    assert!(dir.join("synth_pitch.csv").exists());
}

#[test]
fn resume_continues_from_checkpoint() {
    let dir = workdir("resume");
    let ok = |args: &[&str]| {
        let out = melforge(args, &dir);
        assert!(out.status.success(), "{:?}: {}", args, String::from_utf8_lossy(&out.stderr));
    };
    ok(&["gen-demo", "--out", "corpus", "--count", "2", "--seed", "1"]);
    ok(&[
        "extract", "--manifest", "corpus/manifest.jsonl", "--symbols", "corpus/symbols.txt",
        "--out", "cache",
    ]);
    std::fs::write(
        dir.join("tiny.conf"),
        "hidden = 16\nencoder_layers = 1\ndecoder_layers = 1\nconv_filter = 32\npredictor_filter = 8\n",
    )
    .unwrap();
    ok(&[
        "--config", "tiny.conf", "train", "--manifest", "corpus/manifest.jsonl", "--features",
        "cache", "--symbols", "corpus/symbols.txt", "--out", "run", "--steps", "5",
        "--batch-size", "2",
    ]);
    ok(&[
        "--config", "tiny.conf", "train", "--manifest", "corpus/manifest.jsonl", "--features",
        "cache", "--symbols", "corpus/symbols.txt", "--out", "run2", "--steps", "5",
        "--batch-size", "2", "--resume", "run/checkpoint-final.mfsc",
    ]);
    let metrics = std::fs::read_to_string(dir.join("run2/metrics.csv")).unwrap();
    // resumed log starts at step 6
    assert!(metrics.lines().nth(1).unwrap().starts_with("6,"));
}

#[test]
fn usage_errors_exit_1() {
    let dir = workdir("usage");
    let out = melforge(&["definitely-not-a-verb"], &dir);
    assert_eq!(out.status.code(), Some(1));
    let out = melforge(&["synth", "--no-such-flag"], &dir);
    assert_eq!(out.status.code(), Some(1));
    // help is a success
    let out = melforge(&["--help"], &dir);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn data_errors_exit_2() {
    let dir = workdir("data-err");
    let out = melforge(
        &[
            "extract",
            "--manifest",
            "missing.jsonl",
            "--symbols",
            "missing.txt",
            "--out",
            "cache",
        ],
        &dir,
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());

    let out = melforge(
        &[
            "synth",
            "--checkpoint",
            "missing.mfsc",
            "--phonemes",
            "_",
            "--out",
            "x.mfsc",
        ],
        &dir,
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn extract_reports_partial_failures_with_exit_2() {
    let dir = workdir("partial");
    let ok = melforge(
        &["gen-demo", "--out", "corpus", "--count", "2", "--seed", "4"],
        &dir,
    );
    assert!(ok.status.success());
    // break one wav so extraction half-fails
    std::fs::write(dir.join("corpus/wavs/demo_001.wav"), b"not audio").unwrap();
    let out = melforge(
        &[
            "extract",
            "--manifest",
            "corpus/manifest.jsonl",
            "--symbols",
            "corpus/symbols.txt",
            "--out",
            "cache",
        ],
        &dir,
    );
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("demo_001"), "stderr: {stderr}");
    // the good utterance still produced a cache file
    assert!(dir.join("cache/features/demo_000.mfsc").exists());
}
