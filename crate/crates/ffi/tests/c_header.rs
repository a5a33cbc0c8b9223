use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include "grokfit.h"

int main(void) {
    double epochs[400], values[400];
    for (int i = 0; i < 400; i++) {
        epochs[i] = i;
        values[i] = i < 200 ? 0.25 + 0.0025 * i : 0.75 + 0.001 * (i - 200);
    }
    GfCurve *curve = NULL;
    if (gf_curve_new(epochs, values, 400, GF_CURVE_KIND_VALIDATION, &curve) != GF_STATUS_OK) return 1;
    GfErfFit fit;
    GfStatus st = gf_fit_erf(curve, 0.0, 1.0, &fit);
    gf_curve_free(curve);
    if (st != GF_STATUS_OK) {
        char buf[256];
        gf_last_error_message(buf, sizeof buf);
        fprintf(stderr, "%s\n", buf);
        return 2;
    }
    printf("%.6f %.3f\n", fit.s, fit.t_star);
    return fit.s > 0.0 ? 0 : 3;
}
"#;

fn compiler() -> Option<String> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()))
        .map(String::from)
}

#[test]
fn header_compiles_and_links_from_c() {
    let Some(cc) = compiler() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let include = crate_dir.join("include");
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("main.c");
    std::fs::write(&src, PROGRAM).unwrap();

    let status = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(&include)
        .arg(&src)
        .status()
        .unwrap();
    assert!(status.success(), "header does not compile as C99");

    // link against the static library when cargo has produced one
    let target_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = target_dir.join("libgrokfit_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; link step skipped", lib.display());
        return;
    }
    let exe = tmp.path().join("main");
    let out = Command::new(&cc)
        .args(["-std=c99", "-I"])
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(out.status.success(), "link failed: {}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "C program failed: {}", String::from_utf8_lossy(&run.stderr));
}
