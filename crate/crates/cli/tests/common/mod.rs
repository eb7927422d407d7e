#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use patchsift_core::dataset::{write_patch_pack, PatchSet};

pub fn patchsift(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_patchsift"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn write_pack(set: &PatchSet, dir: &Path, name: &str) -> PathBuf {
    let path = dir.join(name);
    write_patch_pack(set, &path).expect("pack written");
    path
}

/// `(file name, contents)` for every file under `dir`, sorted by name.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .expect("readable dir")
        .map(|e| {
            let e = e.expect("dir entry");
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).expect("readable file"))
        })
        .collect();
    files.sort();
    files
}

/// Rows of a CSV file after its header, split on commas.
pub fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .expect("readable csv")
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

/// `value` column of a `metric,value` file.
pub fn metric(path: &Path, name: &str) -> Option<String> {
    csv_rows(path).into_iter().find(|r| r[0] == name).map(|r| r[1].clone())
}
