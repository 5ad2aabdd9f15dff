use std::path::PathBuf;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ticketforge")).args(args).output().unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ticketforge-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn s(p: &PathBuf) -> &str {
    p.to_str().unwrap()
}

#[test]
fn round_trip_and_exit_codes() {
    let model = scratch("target.json");
    let (a, b) = (scratch("a.json"), scratch("b.json"));
    let out = run(&["gen-target", "--arch", "2,3,1", "--seed", "4", "--out", s(&model)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    for path in [&a, &b] {
        let out = run(&["construct", "--model", s(&model), "--seed", "4", "--out", s(path)]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let out = run(&["verify", "--model", s(&model), "--ticket", s(&a), "--samples", "2000"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));

    let bad = scratch("bad.json");
    let text = std::fs::read_to_string(&a).unwrap();
    std::fs::write(&bad, &text[..text.len() / 2]).unwrap();
    assert_eq!(run(&["verify", "--model", s(&model), "--ticket", s(&bad)]).status.code(), Some(4));

    let deep = scratch("deep.json");
    run(&["gen-target", "--arch", "8,8,8,8,8,8,8", "--seed", "1", "--out", s(&deep)]);
    assert_eq!(run(&["budget", "--model", s(&deep), "--eps", "1e-9"]).status.code(), Some(3));

    assert_eq!(run(&["construct", "--eps", "0.1"]).status.code(), Some(1));
}

#[test]
fn widths_emit_csv() {
    let out = run(&["--format", "csv", "widths", "--arch", "4,8,2"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).lines().count() >= 2);
}
