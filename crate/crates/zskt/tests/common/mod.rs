//! Tiny configs and directory comparison shared by integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub fn workspace() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn digits_dir() -> PathBuf {
    workspace().join("data/mnist")
}

/// Digit config small enough that every command finishes in seconds.
pub fn tiny_digits_toml(data_dir: &Path) -> String {
    format!(
        r#"seeds = [3]

[data]
kind = "digits"
dir = "{}"
train_limit = 200
test_limit = 60

[teacher]
kind = "convnet"
input = [1, 28, 28]
classes = 10
widths = [2, 4, 4]
depth = 1
stem_stride = 2

[student]
kind = "convnet"
input = [1, 28, 28]
classes = 10
widths = [2, 2, 4]
depth = 1
stem_stride = 2

[generator]
channels = 4

[train]
iterations = 6
batch = 16

[zeroshot]
iterations = 2
student_steps = 2
batch = 8
z_dim = 8

[noise_match]
steps = 4
batch = 8

[few_shot]
per_class = 1

[distill]
iterations = 4
batch = 8

[finetune]
iterations = 3
batch = 8
lr = 2e-3
optimizer = {{ kind = "adam" }}
schedule = "cosine"

[probe]
max_images = 4
steps = 3

[audit]
images = 40
"#,
        data_dir.display().to_string().replace('\\', "/")
    )
}

pub const TINY_BLOBS_TOML: &str = r#"seeds = [1, 2]

[data]
kind = "blobs"
classes = 3
per_class = 40
spread = 0.3

[train]
iterations = 40
batch = 32
lr = 2e-3
optimizer = { kind = "adam" }
schedule = "cosine"

[toy]
iterations = 6
points = 16
snapshot_every = 2

[eval]
grid = 20
"#;

pub fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

/// Relative path → bytes of every file under `dir`.
pub fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Manifest text without the wall-clock line.
pub fn manifest_without_time(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes)
        .lines()
        .filter(|l| !l.starts_with("wall_seconds="))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Files that differ between two run trees, ignoring wall time in manifests.
pub fn tree_differences(a: &Path, b: &Path) -> (usize, Vec<String>) {
    let (ta, tb) = (tree(a), tree(b));
    let mut diffs = Vec::new();
    for name in ta.keys().chain(tb.keys().filter(|k| !ta.contains_key(*k))) {
        let same = match (ta.get(name), tb.get(name)) {
            (Some(x), Some(y)) if name.ends_with("manifest.txt") => manifest_without_time(x) == manifest_without_time(y),
            (Some(x), Some(y)) => x == y,
            _ => false,
        };
        if !same {
            diffs.push(name.clone());
        }
    }
    (ta.len(), diffs)
}
