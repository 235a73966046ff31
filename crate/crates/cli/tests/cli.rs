use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn animo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_animo"))
        .args(args)
        .env_remove("ANIMO_CONFIG")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = animo(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn simulate_then_analyse() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("sim.jsonl");
    ok(&[
        "simulate",
        "--dyads",
        "3",
        "--days",
        "7",
        "--seed",
        "4",
        "--out",
        p(&log),
    ]);

    let json: serde_json::Value = serde_json::from_str(&ok(&["stats", "--log", p(&log), "--format", "json"])).unwrap();
    let dyads = json["dyads"].as_array().unwrap();
    assert_eq!(dyads.len(), 3);
    let sent: u64 = dyads.iter().map(|d| d["sent"].as_u64().unwrap()).sum();
    assert_eq!(json["total"]["sent"].as_u64().unwrap(), sent);
    assert!(sent > 0);

    let table = ok(&["stats", "--log", p(&log)]);
    assert!(table.lines().next().unwrap().starts_with("dyad"));
    assert!(table.lines().last().unwrap().starts_with("total"));

    let csv = ok(&["histogram", "--log", p(&log)]);
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "hour,weekday_sent,weekday_read,weekend_sent,weekend_read"
    );
    let rows: Vec<Vec<u64>> = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 24);
    assert_eq!(rows.iter().map(|r| r[1] + r[3]).sum::<u64>(), sent);

    let check = ok(&["check", "--log", p(&log), "--ttl-secs", "10"]);
    assert!(check.starts_with("ok: "));
}

#[test]
fn empty_log_gives_zero_table() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("empty.jsonl");
    std::fs::write(&log, "").unwrap();
    let table = ok(&["stats", "--log", p(&log)]);
    let total = table.lines().last().unwrap();
    assert!(total.starts_with("total"));
    assert!(total.contains(" 0 (0%)"));
}

#[test]
fn simulate_is_deterministic() {
    let a = ok(&["simulate", "--dyads", "2", "--days", "3", "--seed", "9"]);
    let b = ok(&["simulate", "--dyads", "2", "--days", "3", "--seed", "9"]);
    let c = ok(&["simulate", "--dyads", "2", "--days", "3", "--seed", "10"]);
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn zero_rate_gives_only_pairings() {
    let out = ok(&["simulate", "--dyads", "4", "--days", "2", "--sends-per-day", "0"]);
    assert_eq!(out.lines().count(), 4);
    assert!(out.lines().all(|l| l.contains("\"kind\":\"paired\"")));
}

#[test]
fn config_file_and_env() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("animo.toml");
    std::fs::write(&cfg, "seed = 3\n[model]\nsends_per_user_per_day = 0.0\n").unwrap();
    let out = ok(&["--config", p(&cfg), "simulate", "--dyads", "1", "--days", "1"]);
    assert_eq!(out.lines().count(), 1);

    let via_env = Command::new(env!("CARGO_BIN_EXE_animo"))
        .args(["simulate", "--dyads", "1", "--days", "1"])
        .env("ANIMO_CONFIG", &cfg)
        .output()
        .unwrap();
    assert_eq!(String::from_utf8(via_env.stdout).unwrap(), out);

    std::fs::write(&cfg, "loss = 2.0\n").unwrap();
    let bad = animo(&["--config", p(&cfg), "simulate"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("loss"));

    std::fs::write(&cfg, "no_such_key = 1\n").unwrap();
    assert_eq!(animo(&["--config", p(&cfg), "simulate"]).status.code(), Some(1));
}

#[test]
fn calibrate_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let calm = dir.path().join("calm.csv");
    let stress = dir.path().join("stress.csv");
    std::fs::write(&calm, "user_id,timestamp,bpm\nu1,0,60\nu1,1,62\nu2,0,70\n").unwrap();
    std::fs::write(&stress, "user_id,timestamp,bpm\nu1,10,90\nu1,11,100\nu2,5,110\n").unwrap();
    let out = ok(&["calibrate", "--calm", p(&calm), "--stress", p(&stress)]);
    let rows: Vec<serde_json::Value> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["user_id"], "u1");
    assert_eq!(rows[0]["low_bpm"], 61.0);
    assert_eq!(rows[0]["high_bpm"], 95.0);
    assert_eq!(rows[1]["low_bpm"], 70.0);

    std::fs::write(&stress, "user_id,timestamp,bpm\nu1,10,60\n").unwrap();
    assert_eq!(
        animo(&["calibrate", "--calm", p(&calm), "--stress", p(&stress)])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn failures_exit_nonzero() {
    assert_eq!(animo(&[]).status.code(), Some(2));
    assert_eq!(animo(&["stats"]).status.code(), Some(2));
    assert_eq!(
        animo(&["stats", "--log", "x", "--format", "xml"]).status.code(),
        Some(2)
    );
    let missing = animo(&["stats", "--log", "/nonexistent/log.jsonl"]);
    assert_eq!(missing.status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("bad.jsonl");
    std::fs::write(&log, "{\"seq\":1}\n").unwrap();
    assert_eq!(animo(&["check", "--log", p(&log)]).status.code(), Some(1));
}

#[test]
fn serve_accepts_connections_and_logs() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("live.jsonl");
    let mut child = Command::new(env!("CARGO_BIN_EXE_animo"))
        .args(["serve", "--port", "0", "--ws-port", "0", "--log-path", p(&log)])
        .env_remove("ANIMO_CONFIG")
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut banner = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut banner)
        .unwrap();
    let tcp = banner.split_whitespace().nth(1).unwrap().to_string();

    let mut a = TcpStream::connect(&tcp).unwrap();
    let mut b = TcpStream::connect(&tcp).unwrap();
    a.write_all(b"{\"version\":1,\"kind\":\"hello\",\"ts\":0,\"payload\":{\"user_id\":\"a\",\"token\":\"k\"}}\n")
        .unwrap();
    std::thread::sleep(std::time::Duration::from_millis(100));
    b.write_all(b"{\"version\":1,\"kind\":\"hello\",\"ts\":0,\"payload\":{\"user_id\":\"b\",\"token\":\"k\"}}\n")
        .unwrap();
    let mut line = String::new();
    BufReader::new(&a).read_line(&mut line).unwrap();
    assert!(line.contains("\"kind\":\"paired\""), "{line}");
    assert!(line.contains("\"ttl_secs\":10"));
    child.kill().unwrap();
    child.wait().unwrap();

    let text = std::fs::read_to_string(&log).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(dir.path().join("live.jsonl.registry.json").exists());
}

#[test]
fn book_scenario_runs() {
    let chapter = include_str!("../../../book/src/simulation.md");
    let start = chapter.find("```toml\n").unwrap() + "```toml\n".len();
    let len = chapter[start..].find("```").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("scenario.toml");
    std::fs::write(&scenario, &chapter[start..start + len]).unwrap();
    let log = dir.path().join("out.jsonl");
    ok(&["simulate", "--scenario", p(&scenario), "--out", p(&log)]);
    let json: serde_json::Value = serde_json::from_str(&ok(&["stats", "--log", p(&log), "--format", "json"])).unwrap();
    assert_eq!(json["dyads"].as_array().unwrap().len(), 3);
    assert!(json["dyads"][0]["read_pct"].as_u64().unwrap() > json["dyads"][1]["read_pct"].as_u64().unwrap());
}

#[test]
fn readme_config_loads() {
    let readme = include_str!("../../../README.md");
    let start = readme.find("```toml\n").unwrap() + "```toml\n".len();
    let len = readme[start..].find("```").unwrap();
    let cfg = animo::config::Config::from_toml(&readme[start..start + len]).unwrap();
    assert_eq!(cfg, animo::config::Config::default());
}
