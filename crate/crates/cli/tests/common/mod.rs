#![allow(dead_code)]

use std::path::Path;

use wri_cli::ExperimentConfig;

/// 21x21 lens problem small enough for many end-to-end runs.
pub fn tiny_config(dir: &Path) -> ExperimentConfig {
    let text = format!(
        r#"
[grid]
nx = 21
nz = 21
dx = 25.0
dz = 25.0

[lens]
amplitude = -300.0
radius = 80.0

[boundary]
width = 4

[acquisition]
n_sources = 3
n_receivers = 9

[sketch]
k = 2
seeds = [1, 2]

[optimizer]
max_iters = 4

[output]
dir = {:?}
"#,
        dir.display().to_string()
    );
    ExperimentConfig::from_toml(&text).unwrap()
}

/// All files under `dir` with their contents, sorted by relative path.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}
