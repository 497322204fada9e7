use std::fs;
use std::path::Path;
use std::process::Command;

fn rwre(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_rwre")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn classify1d_writes_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.cfg", "law = one_dim\natoms = 0.3:0.5, 0.9:0.5\n");
    let out = dir.path().join("out");
    let o = rwre(&["classify1d", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let json = fs::read_to_string(out.join("classify1d.json")).unwrap();
    assert!(json.contains("\"verdict\": \"TransientRight\""), "{json}");
    let csv = fs::read_to_string(out.join("classify1d.csv")).unwrap();
    assert!(csv.starts_with("quantity,value\nverdict,TransientRight\n"), "{csv}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap().to_string();
    let typo = write(dir.path(), "t.cfg", "law = homogeneous\np = 0.75\nvelcoity = 1\n");
    let o = rwre(&["velocity1d", "--config", &typo, "--out", &d]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));

    let big = write(dir.path(), "b.cfg", "law = homogeneous\np = 0.75\nn = 1e9\nreplicas = 1000\nmethods = direct\n");
    let o = rwre(&["velocity1d", "--config", &big, "--out", &d]);
    assert_eq!(o.status.code(), Some(3));

    let sinai = write(dir.path(), "s.cfg", "law = one_dim\natoms = 0.3:0.5, 0.7:0.5\n");
    let o = rwre(&["kks", "--config", &sinai, "--out", &d]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));

    let o = rwre(&["no-such-experiment", "--config", &sinai]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn seed_override_and_rerun_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "v.cfg", "law = two_point\np1 = 0.8\np2 = 0.4\nn = 2000\nreplicas = 20\nwindow = 200\nmethods = direct,solomon\n");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    for (o, seed) in [(&a, "5"), (&b, "5"), (&c, "6")] {
        let r = rwre(&["velocity1d", "--config", &cfg, "--seed", seed, "--out", o.to_str().unwrap()]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    }
    let read = |d: &Path, f: &str| fs::read(d.join(f)).unwrap();
    assert_eq!(read(&a, "velocity1d.csv"), read(&b, "velocity1d.csv"));
    assert_eq!(read(&a, "velocity1d.json"), read(&b, "velocity1d.json"));
    assert_ne!(read(&a, "velocity1d.csv"), read(&c, "velocity1d.csv"));
}
