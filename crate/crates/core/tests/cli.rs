use std::process::Command;

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_latent-sim"))
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(cli().arg("--help").output().unwrap().status.code(), Some(0));
    assert_eq!(cli().arg("no-such-command").output().unwrap().status.code(), Some(1));
}

#[test]
fn runtime_errors_exit_2_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli().args(["train-plc", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));
}

#[test]
fn print_config_is_loadable() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli().arg("print-config").output().unwrap();
    assert!(out.status.success());
    let path = dir.path().join("c.toml");
    std::fs::write(&path, &out.stdout).unwrap();
    let again = cli().arg("print-config").arg("--config").arg(&path).output().unwrap();
    assert_eq!(again.stdout, out.stdout);
}

#[test]
fn inspect_packet_reports_truncation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.bin");
    std::fs::write(&path, [0xC5u8, 0, 0, 0, 1]).unwrap();
    let out = cli().args(["inspect-packet", "--seq", "0"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
