use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

/// Fresh scratch directory under the system temp dir.
pub fn scratch_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("lrjd-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

pub fn lrjd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lrjd"))
        .args(args)
        .env_remove("LRJD_SEED")
        .output()
        .expect("binary runs")
}

pub fn summary_value(text: &str, key: &str) -> String {
    text.lines()
        .find_map(|l| {
            l.split_once(" = ")
                .filter(|(k, _)| *k == key)
                .map(|(_, v)| v.to_string())
        })
        .unwrap_or_else(|| panic!("no `{key}` in summary:\n{text}"))
}
