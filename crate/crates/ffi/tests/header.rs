use std::path::{Path, PathBuf};
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "vidgan.h"

int main(int argc, char **argv) {
    const char *path = argv[1];
    float data[3 * 1 * 2 * 2];
    size_t shape[4] = {3, 1, 2, 2};
    for (int i = 0; i < 12; i++) data[i] = (float)i / 12.0f - 0.5f;
    if (vg_clip_write(path, data, shape) != VG_OK) return 10;

    VgClip *clip = NULL;
    if (vg_clip_read(path, &clip) != VG_OK) return 11;
    size_t got[4];
    if (vg_clip_shape(clip, got) != VG_OK || memcmp(got, shape, sizeof shape) != 0) return 12;
    float back[12];
    if (vg_clip_data(clip, back, 12) != VG_OK || memcmp(back, data, sizeof data) != 0) return 13;
    vg_clip_free(clip);

    VgModel *model = NULL;
    if (vg_model_load("/nonexistent/model.tvgan", &model) != VG_ERR_IO || model != NULL) return 14;
    char msg[256];
    size_t n = vg_last_error_message(msg, sizeof msg);
    if (n == 0 || strlen(msg) != (n < 255 ? n : 255)) return 15;
    printf("ok\n");
    return 0;
}
"#;

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn cc(args: &[&std::ffi::OsStr]) -> std::process::Output {
    Command::new(std::env::var("CC").unwrap_or_else(|_| "cc".into()))
        .args(args)
        .output()
        .expect("run C compiler")
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(crate_dir().join("include/vidgan.h")).unwrap();
    let source = std::fs::read_to_string(crate_dir().join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = source
        .lines()
        .filter_map(|l| l.trim().strip_prefix("pub unsafe extern \"C\" fn "))
        .map(|l| l.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 10);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
}

/// Compiles a C program against the header and static library, then runs it.
#[test]
fn c_program_links_and_runs() {
    let work = Path::new(env!("CARGO_TARGET_TMPDIR")).join("ffi-c");
    std::fs::create_dir_all(&work).unwrap();
    let src = work.join("main.c");
    std::fs::write(&src, PROGRAM).unwrap();
    let include = crate_dir().join("include");

    let out = cc(&["-std=c99".as_ref(), "-Wall".as_ref(), "-Werror".as_ref(), "-fsyntax-only".as_ref(), "-I".as_ref(), include.as_os_str(), src.as_os_str()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let profile_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join("libvidgan_ffi.a");
    assert!(lib.exists(), "{} not built", lib.display());
    let exe = work.join("main");
    let out = cc(&[
        "-std=c99".as_ref(),
        "-I".as_ref(),
        include.as_os_str(),
        src.as_os_str(),
        lib.as_os_str(),
        "-lpthread".as_ref(),
        "-ldl".as_ref(),
        "-lm".as_ref(),
        "-o".as_ref(),
        exe.as_os_str(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).arg(work.join("c.tvclip")).output().unwrap();
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "ok");
}
