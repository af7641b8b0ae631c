//! Compiles a small C program against the generated header and the static
//! library. Skipped when no C compiler is on PATH.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "spikesync.h"

int main(void) {
    uint32_t trial[] = {0, 0, 1, 1};
    uint32_t neuron[] = {0, 1, 0, 1};
    double time[] = {0.1, 0.1, 0.4, 0.7};
    SsExperiment *exp = NULL;
    if (ss_experiment_new(1.0, 2, 2, trial, neuron, time, 4, &exp) != SS_STATUS_OK) return 1;
    if (ss_experiment_spike_count(exp) != 4) return 2;
    SsBinned *b = NULL;
    if (ss_bin(exp, -0.5, &b) != SS_STATUS_INVALID_ARGUMENT) return 3;
    if (ss_last_error() == NULL || strlen(ss_last_error()) == 0) return 4;
    if (ss_bin(exp, 0.01, &b) != SS_STATUS_OK) return 5;
    size_t r, n, m;
    ss_binned_shape(b, &r, &n, &m);
    printf("%zu %zu %zu %s\n", r, n, m, ss_version());
    ss_binned_free(b);
    ss_experiment_free(exp);
    return 0;
}
"#;

fn target_dir() -> PathBuf {
    // tests/ binaries live in <target>/<profile>/deps
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_and_runs() {
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("no C compiler; skipping");
        return;
    }
    let lib = target_dir().join("libspikesync_ffi.a");
    assert!(lib.exists(), "{} missing", lib.display());
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let bin = dir.path().join("main");
    std::fs::write(&src, PROGRAM).unwrap();
    let status = Command::new("cc")
        .args(["-std=c11", "-Wall", "-Werror", "-o"])
        .arg(&bin)
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.trim(), format!("2 2 100 {}", env!("CARGO_PKG_VERSION")));
}
