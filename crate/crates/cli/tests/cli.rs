use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ejko(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ejko")).args(args).output().unwrap()
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

const HEAT: &str = r#"
problem = "heat"
lower = [-3.0]
upper = [3.0]
counts = [40]
h = 0.05
epsilon = 0.01
horizon = 0.2
save_every = 2
"#;

const KRAMERS: &str = r#"
problem = "kramers"
lower = [-0.5, -2.4]
upper = [0.5, 2.4]
counts = [12, 10]
h = 0.02
epsilon = 0.5
horizon = 0.06
t0 = 0.14
"#;

fn write_config(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn solve_writes_trace_states_and_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "heat.toml", HEAT);
    let out = tmp.path().join("run");
    let res = ejko(&["solve", "--config", arg(&cfg), "--out", arg(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(String::from_utf8_lossy(&res.stdout).contains("scaling ratio"));

    let mut names: Vec<String> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["config.toml", "error.csv", "state_0.csv", "state_2.csv", "state_4.csv", "trace.csv"]);

    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(lines[0], "step,time,free_energy,entropy,second_moment,transport_objective,inner_iters,residual");
    assert_eq!(lines.len(), 6);
    assert!(lines[1].ends_with(",,,"));
    assert_eq!(lines[2].split(',').count(), 8);
    assert!(!trace.contains('\r'));

    let errors = fs::read_to_string(out.join("error.csv")).unwrap();
    assert_eq!(errors.lines().next(), Some("time,l1_error"));
    assert_eq!(errors.lines().count(), 6);
    let first: Vec<&str> = errors.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(first[0], "0.0000000000000000e0");
}

#[test]
fn solve_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "heat.toml", HEAT);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        assert!(ejko(&["solve", "--config", arg(&cfg), "--out", arg(out)]).status.success());
    }
    for name in ["trace.csv", "state_4.csv", "error.csv", "config.toml"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn config_echo_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "heat.toml", HEAT);
    let a = tmp.path().join("a");
    assert!(ejko(&["solve", "--config", arg(&cfg), "--out", arg(&a)]).status.success());
    let b = tmp.path().join("b");
    let echo = a.join("config.toml");
    assert!(ejko(&["solve", "--config", arg(&echo), "--out", arg(&b), "--threads", "1"]).status.success());
    assert_eq!(fs::read(a.join("trace.csv")).unwrap(), fs::read(b.join("trace.csv")).unwrap());
}

#[test]
fn unwritable_output_leaves_nothing_behind() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "heat.toml", HEAT);
    let blocker = tmp.path().join("blocker");
    fs::write(&blocker, "not a directory").unwrap();
    let out = blocker.join("run");
    let res = ejko(&["solve", "--config", arg(&cfg), "--out", arg(&out)]);
    assert!(!res.status.success());
    assert!(!String::from_utf8_lossy(&res.stderr).is_empty());
    let left: Vec<_> = fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(left.len(), 2);
}

#[test]
fn failing_run_reports_step_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let text = HEAT.replace("epsilon = 0.01", "epsilon = 1e-4\ninner_max_iter = 1");
    let cfg = write_config(tmp.path(), "heat.toml", &text);
    let out = tmp.path().join("run");
    let res = ejko(&["solve", "--config", arg(&cfg), "--out", arg(&out)]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("step 1"), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(!out.exists());
}

#[test]
fn bad_config_names_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "heat.toml", &HEAT.replace("epsilon = 0.01", "epsilon = 0.0"));
    let res = ejko(&["solve", "--config", arg(&cfg), "--out", arg(&tmp.path().join("run"))]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("`epsilon`"));

    let cfg = write_config(tmp.path(), "extra.toml", &format!("{HEAT}colour = \"blue\"\n"));
    let res = ejko(&["solve", "--config", arg(&cfg), "--out", arg(&tmp.path().join("run"))]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("colour"));
}

#[test]
fn kinetic_run_and_error_recomputation_agree() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "kramers.toml", KRAMERS);
    let out = tmp.path().join("run");
    let res = ejko(&["solve", "--config", arg(&cfg), "--out", arg(&out), "--matrix-free"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let errors = fs::read_to_string(out.join("error.csv")).unwrap();
    assert!(errors.lines().nth(1).unwrap().starts_with("1.4000000000000001e-1,"));
    assert_eq!(errors.lines().count(), 5);

    let again = tmp.path().join("again.csv");
    let res = ejko(&["error", "--run", arg(&out), "--out", arg(&again)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    // states are renormalised on reading, so agreement is to rounding
    let parse = |text: &str| -> Vec<(f64, f64)> {
        text.lines()
            .skip(1)
            .map(|l| {
                let (t, e) = l.split_once(',').unwrap();
                (t.parse().unwrap(), e.parse().unwrap())
            })
            .collect()
    };
    let (a, b) = (parse(&errors), parse(&fs::read_to_string(&again).unwrap()));
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.0, y.0);
        assert!((x.1 - y.1).abs() < 1e-12);
    }
}

#[test]
fn exact_matches_initial_state() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "kramers.toml", KRAMERS);
    let out = tmp.path().join("run");
    assert!(ejko(&["solve", "--config", arg(&cfg), "--out", arg(&out)]).status.success());
    let exact = tmp.path().join("exact.csv");
    let res = ejko(&["exact", "--config", arg(&cfg), "--time", "0.14", "--out", arg(&exact)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(fs::read(exact).unwrap(), fs::read(out.join("state_0.csv")).unwrap());
}

#[test]
fn initial_datum_from_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "kramers.toml", KRAMERS);
    let exact = tmp.path().join("start.csv");
    assert!(ejko(&["exact", "--config", arg(&cfg), "--time", "0.2", "--out", arg(&exact)]).status.success());
    let text = format!("{KRAMERS}initial = \"file\"\ninitial_file = \"start.csv\"\n");
    let cfg = write_config(tmp.path(), "from_file.toml", &text);
    let out = tmp.path().join("run");
    let res = ejko(&["solve", "--config", arg(&cfg), "--out", arg(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(fs::read(exact).unwrap(), fs::read(out.join("state_0.csv")).unwrap());
}

#[test]
fn ot_solve_and_cost_dump() {
    let tmp = tempfile::tempdir().unwrap();
    let text = HEAT.replace("counts = [40]", "counts = [6]");
    let cfg = write_config(tmp.path(), "small.toml", &text);
    let mu = tmp.path().join("mu.csv");
    assert!(ejko(&["exact", "--config", arg(&cfg), "--time", "0.0", "--out", arg(&mu)]).status.success());
    let nu = tmp.path().join("nu.csv");
    assert!(ejko(&["exact", "--config", arg(&cfg), "--time", "1.0", "--out", arg(&nu)]).status.success());

    let out = tmp.path().join("ot");
    let res = ejko(&["ot", "solve", "--config", arg(&cfg), "--mu", arg(&mu), "--nu", arg(&nu), "--out", arg(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let summary = fs::read_to_string(out.join("summary.toml")).unwrap();
    assert!(summary.contains("converged = true"));
    let plan = fs::read_to_string(out.join("plan.csv")).unwrap();
    assert_eq!(plan.lines().count(), 37);

    let dump = tmp.path().join("cost.csv");
    assert!(ejko(&["cost", "dump", "--config", arg(&cfg), "--out", arg(&dump)]).status.success());
    let costs = fs::read_to_string(&dump).unwrap();
    assert_eq!(costs.lines().next(), Some("i,j,cost"));
    assert_eq!(costs.lines().nth(1), Some("0,0,0.0000000000000000e0"));
    assert_eq!(costs.lines().count(), 37);
}

#[test]
fn cost_dump_refuses_large_grids() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "big.toml", &HEAT.replace("counts = [40]", "counts = [2001]"));
    let res = ejko(&["cost", "dump", "--config", arg(&cfg), "--out", arg(&tmp.path().join("c.csv"))]);
    assert!(!res.status.success());
    assert!(!tmp.path().join("c.csv").exists());
}

#[test]
fn check_passes() {
    let res = ejko(&["check"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stdout));
    let table = String::from_utf8_lossy(&res.stdout);
    assert!(table.lines().count() >= 5);
    assert!(!table.contains("FAIL"));
}
