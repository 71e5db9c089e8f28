use std::path::{Path, PathBuf};
use std::process::Command;

fn crate_dir() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR"))
}

fn header() -> PathBuf {
    crate_dir().join("include/setpoint_oco.h")
}

#[test]
fn header_declares_every_entry_point() {
    let text = std::fs::read_to_string(header()).unwrap();
    let source = std::fs::read_to_string(crate_dir().join("src/lib.rs")).unwrap();
    let exported: Vec<&str> = source
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exported.len() > 10);
    for name in exported {
        assert!(
            text.contains(&format!("{name}(")),
            "{name} missing from header"
        );
    }
    for ty in [
        "typedef struct SpoConfig SpoConfig;",
        "SPO_STATUS_OK = 0",
        "SPO_SERIES_REGRET",
    ] {
        assert!(text.contains(ty), "{ty}");
    }
}

fn compiler() -> String {
    std::env::var("CC").unwrap_or_else(|_| "cc".into())
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let out = tempfile::tempdir().unwrap();
    let include = crate_dir().join("include");
    let smoke = crate_dir().join("tests/smoke.c");
    for (lang, std) in [("c", "-std=c11"), ("c++", "-std=c++17")] {
        let status = Command::new(compiler())
            .args(["-x", lang, std, "-Wall", "-Wextra", "-Werror", "-c", "-I"])
            .arg(&include)
            .arg(&smoke)
            .arg("-o")
            .arg(out.path().join(format!("smoke-{lang}.o")))
            .status()
            .expect("a C compiler on PATH or in $CC");
        assert!(status.success(), "{lang} compile failed");
    }
}
