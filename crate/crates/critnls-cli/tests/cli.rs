use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn critnls(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_critnls")).args(args).arg("--out").arg(out).output().unwrap()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

/// Every file listed in the manifest, by path → contents.
fn outputs(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let m = manifest(dir);
    m["files"].as_array().unwrap().iter().map(|f| {
        let p = f["path"].as_str().unwrap().to_string();
        let data = std::fs::read(dir.join(&p)).unwrap();
        (p, data)
    }).collect()
}

#[test]
fn groundstate_run_is_complete_and_checksummed() {
    let tmp = tempfile::tempdir().unwrap();
    let out = critnls(&["groundstate", "--mu", "0.05", "--grid-n", "512"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(tmp.path());
    assert_eq!(m["status"], "ok");
    assert_eq!(m["configuration"]["mu"], "0.05");
    assert!(!tmp.path().join(".manifest.json.tmp").exists());
    let files = m["files"].as_array().unwrap();
    assert!(files.iter().any(|f| f["path"] == "q_mu.csv"));
    for f in files {
        let data = std::fs::read(tmp.path().join(f["path"].as_str().unwrap())).unwrap();
        assert_eq!(f["bytes"].as_u64().unwrap(), data.len() as u64);
        let hex: String = Sha256::digest(&data).iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(f["sha256"].as_str().unwrap(), hex);
    }
    let csv = String::from_utf8(std::fs::read(tmp.path().join("q_mu.csv")).unwrap()).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "r [length],re_l0 [amplitude],im_l0 [amplitude]");
    assert_eq!(csv.lines().count(), 513);
    let summary = String::from_utf8_lossy(&out.stdout);
    assert!(summary.contains("pohozaev_defect = "));
}

#[test]
fn configuration_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    for args in [
        vec!["groundstate", "--bogus"],
        vec!["groundstate", "--mu", "0.5"],
        vec!["spectrum", "--mu", "-0.01"],
        vec!["evolve", "--preset", "nonsense"],
        vec!["groundstate", "--grid-n", "8"],
        vec!["frobnicate"],
    ] {
        let out = critnls(&args, tmp.path());
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
    let out = Command::new(env!("CARGO_BIN_EXE_critnls")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_with_one_and_records_diagnostics() {
    // r_max = 3 truncates Q so badly that the translation mode is lost
    let tmp = tempfile::tempdir().unwrap();
    let out = critnls(&["spectrum", "--grid-n", "64", "--rmax", "3"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let m = manifest(tmp.path());
    assert_eq!(m["status"], "numerical_failure");
    assert!(!m["diagnostics"].as_array().unwrap().is_empty());
}

#[test]
fn config_file_sits_between_defaults_and_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("run.cfg");
    std::fs::write(&file, "# small run\nmu = 0.03\ngrid-n = 256\nrmax = 30\n").unwrap();
    let a = tmp.path().join("a");
    let out = critnls(&["groundstate", "--config", file.to_str().unwrap(), "--mu", "0.01"], &a);
    assert_eq!(out.status.code(), Some(0));
    let c = &manifest(&a)["configuration"];
    assert_eq!(c["mu"], "0.01");
    assert_eq!(c["grid_n"], "256");
    assert_eq!(c["rmax"], "30");
    std::fs::write(&file, "wavelength = 3\n").unwrap();
    let out = critnls(&["groundstate", "--config", file.to_str().unwrap()], &tmp.path().join("b"));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    for args in [
        vec!["groundstate", "--mu", "0.02", "--grid-n", "512"],
        vec!["evolve", "--preset", "gaussian", "--grid-n", "256", "--threads", "1"],
    ] {
        let a = tmp.path().join(format!("{}-1", args[0]));
        let b = tmp.path().join(format!("{}-2", args[0]));
        assert_eq!(critnls(&args, &a).status.code(), Some(0));
        assert_eq!(critnls(&args, &b).status.code(), Some(0));
        let (fa, fb) = (outputs(&a), outputs(&b));
        assert!(fa.len() >= 2);
        assert_eq!(fa, fb, "{args:?}");
    }
}
