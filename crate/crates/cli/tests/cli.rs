//! End-to-end checks of the `sixsim` binary: verbs, file formats, exit codes.

use std::path::Path;
use std::process::Command;

fn sixsim() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sixsim"))
}

#[test]
fn psuccess_prints_the_closed_form() {
    let out = sixsim()
        .args(["psuccess", "--fa", "50", "--fb", "50", "--c", "100", "--k", "5"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("fa,fb,c,k,p_success\n"));
    assert!(text.contains("50,50,100,5,0.762695"), "{text}");
}

#[test]
fn psuccess_sweep_with_verification() {
    let out = sixsim()
        .args([
            "psuccess", "--fa", "0:100:50", "--fb", "100", "--k", "5,10", "--verify", "200000",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("fa,fb,c,k,p_success,p_mc,abs_err\n"));
    // 3 fa values x 1 fb x 2 k.
    assert_eq!(text.lines().count(), 1 + 6);
    for line in text.lines().skip(1) {
        let err: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(err < 0.01, "{line}");
    }
}

#[test]
fn usage_errors_exit_one() {
    let out = sixsim().args(["psuccess", "--fa", "nope", "--fb", "1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = sixsim().args(["frobnicate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn validate_config_accepts_and_rejects() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.txt");
    std::fs::write(&good, "n_nodes = 10\nstack_mode = PB\n").unwrap();
    let out = sixsim()
        .args(["validate-config", "--scenario"])
        .arg(&good)
        .output()
        .unwrap();
    assert!(out.status.success());

    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "made_up_knob = 1\n").unwrap();
    let out = sixsim()
        .args(["validate-config", "--scenario"])
        .arg(&bad)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));

    let missing = dir.path().join("missing.txt");
    let out = sixsim()
        .args(["validate-config", "--scenario"])
        .arg(&missing)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "I/O failures exit 3");
}

#[test]
fn topo_dump_is_deterministic() {
    let a = sixsim()
        .args(["topo-dump", "--nodes", "20", "--seed", "5"])
        .output()
        .unwrap();
    let b = sixsim()
        .args(["topo-dump", "--nodes", "20", "--seed", "5"])
        .output()
        .unwrap();
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert!(text.starts_with("record,node,peer,x_m,y_m,rssi_dbm\n"));
    assert_eq!(text.lines().filter(|l| l.starts_with("position,")).count(), 20);
    assert_eq!(text.lines().filter(|l| l.starts_with("link,")).count(), 20 * 19 / 2);
}

fn write_small_plan(path: &Path) {
    std::fs::write(
        path,
        "modes = MSF,PB\nnodes = 2\nperiods = 5\nseeds = 4\nduration_minutes = 0.5\n\
         area_m = 30\neb_period_slotframes = 1\nnb_channels = 2\nsecure_joining = false\n",
    )
    .unwrap();
}

#[test]
fn run_writes_per_run_artifacts_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plan.txt");
    write_small_plan(&plan);
    let out_dir = dir.path().join("out");
    let out = sixsim()
        .args(["run", "--plan"])
        .arg(&plan)
        .args(["--out"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary = std::fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert!(summary.starts_with(
        "run,seed,mode,n_nodes,period_s,topo_hash,joined,mean_join_s,generated,delivered,drop_qfull,charge_uC,median_latency_s,mean_jitter_s,violations"
    ));
    assert_eq!(summary.lines().count(), 3, "two runs summarized");

    // Paired arms share the topology hash.
    let hashes: Vec<&str> = summary
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(5).unwrap())
        .collect();
    assert_eq!(hashes[0], hashes[1]);

    for run in ["run_000", "run_001"] {
        let nodes = std::fs::read_to_string(out_dir.join(run).join("nodes.csv")).unwrap();
        assert!(nodes.starts_with(
            "run,seed,mode,node,t_sync_s,t_join_s,charge_uC,avg_current_uA,lifetime_y,tx,rx,drop_qfull,drop_retry,drop_noroute"
        ));
        let packets = std::fs::read_to_string(out_dir.join(run).join("packets.csv")).unwrap();
        assert!(packets.starts_with("run,seed,mode,node,packet_order,latency_s,jitter_s"));
        assert!(out_dir.join(run).join("scenario.txt").exists());
    }
}

#[test]
fn rerun_reproduces_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plan.txt");
    write_small_plan(&plan);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out_dir in [&a, &b] {
        let out = sixsim()
            .args(["run", "--plan"])
            .arg(&plan)
            .args(["--out"])
            .arg(out_dir)
            .output()
            .unwrap();
        assert!(out.status.success());
    }
    for file in ["summary.csv", "run_000/nodes.csv", "run_001/packets.csv"] {
        let left = std::fs::read(a.join(file)).unwrap();
        let right = std::fs::read(b.join(file)).unwrap();
        assert_eq!(left, right, "{file} differs between reruns");
    }
}

#[test]
fn summarize_groups_and_emits_cdf() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("nodes.csv");
    std::fs::write(
        &input,
        "run,seed,mode,node,t_join_s\n0,1,MSF,1,10.0\n0,1,MSF,2,14.0\n1,1,PB,1,8.0\n1,1,PB,2,\n",
    )
    .unwrap();
    let cdf = dir.path().join("cdf.dat");
    let out = sixsim()
        .args(["summarize", "--input"])
        .arg(&input)
        .args(["--metric", "t_join_s", "--group-by", "mode", "--cdf"])
        .arg(&cdf)
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "mode,count,mean,median,p5,p95");
    assert_eq!(lines.next().unwrap(), "MSF,2,12.0000,12.0000,10.2000,13.8000");
    assert!(lines.next().unwrap().starts_with("PB,1,8.0000"));
    let dat = std::fs::read_to_string(&cdf).unwrap();
    assert!(dat.contains("# group: MSF"));
    assert!(dat.contains("10 0.5"));
    assert!(dat.contains("14 1"));
}

#[test]
fn summarize_rejects_schema_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    std::fs::write(&a, "x,y\n1,2\n").unwrap();
    std::fs::write(&b, "x,z\n1,2\n").unwrap();
    let out = sixsim()
        .args(["summarize", "--input"])
        .arg(&a)
        .arg(&b)
        .args(["--metric", "y"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
