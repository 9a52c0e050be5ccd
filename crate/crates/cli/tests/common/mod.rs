#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_topic-adapt"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert_eq!(
        code(&out),
        0,
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn write(path: impl AsRef<Path>, text: &str) {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).unwrap();
    }
    fs::write(path, text).unwrap();
}

pub fn read(path: impl AsRef<Path>) -> String {
    fs::read_to_string(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

/// Two topic folders with a handful of tokens each.
pub fn topic_corpus(root: &Path) -> PathBuf {
    let dir = root.join("corpus");
    write(dir.join("sports/a.txt"), "ball goal team ball\nscore goal\n");
    write(dir.join("sports/b.txt"), "team win ball\n");
    write(dir.join("food/a.txt"), "pizza bread cheese\nbread ball\n");
    dir
}

/// The two-bin fixture `[{a:0.6, b:0.4}, {a:0.7, c:0.3}]`.
pub const TWO_BIN_CNET: &str = "CONV c1\nNET u1 2\nBIN a:0.6 b:0.4\nBIN a:0.7 c:0.3\n";

pub fn synth_spec(noise: f64, bins: usize, seed: u64, conversations: usize) -> String {
    format!(
        r#"{{"num_topics": 3, "vocab_size": 50, "lambda_true": [0.5, 0.3, 0.2],
"topic_sharpness": 0.1, "channel_noise": {noise}, "bins": {bins}, "bin_width": 5,
"seed": {seed}, "conversations": {conversations}}}"#
    )
}

/// Every regular file below `dir`, as (relative path, bytes), sorted.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(base, &path, out);
            } else {
                let rel = path.strip_prefix(base).unwrap().display().to_string();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}

/// Manifest JSON with the wall-clock field removed.
pub fn strip_wall_time(bytes: &[u8]) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_slice(bytes).expect("manifest is JSON");
    v.as_object_mut().expect("manifest is an object").remove("wall_time_secs");
    v
}

/// Snapshot where manifests are compared without their wall time.
pub fn comparable(dir: &Path) -> Vec<(String, String)> {
    snapshot(dir)
        .into_iter()
        .map(|(name, bytes)| {
            let body = if name.ends_with("manifest.json") {
                strip_wall_time(&bytes).to_string()
            } else {
                String::from_utf8(bytes).expect("outputs are text")
            };
            (name, body)
        })
        .collect()
}

/// Weights from the leading `LAMBDA` block of a file.
pub fn parse_lambda(text: &str) -> Vec<f64> {
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    let t: usize = header.split_whitespace().nth(2).unwrap().parse().unwrap();
    lines
        .take(t)
        .map(|l| l.split_whitespace().nth(1).unwrap().parse().unwrap())
        .collect()
}

pub fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}
