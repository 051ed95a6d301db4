use std::path::PathBuf;
use std::process::Command;

// The cdylib sits next to the test binary's parent directory.
fn built_library() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().join("libsdrsynth_py.so")
}

#[test]
fn python_smoke_test() {
    let lib = built_library();
    assert!(lib.exists(), "missing {}", lib.display());
    let script = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../python/smoke_test.py");
    let out = Command::new("python3").arg(script).arg(&lib).output().expect("python3 not runnable");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}\n{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout.contains("smoke test ok"));
}
