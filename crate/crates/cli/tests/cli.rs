use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sagopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sagopt")).args(args).output().expect("spawn sagopt")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn datagen_run_plot_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "spec.txt", "n = 150\np = 8\nlabel_noise = 0.1\nheterogeneity = 4\nseed = 5\n");
    let data = dir.path().join("data.svm");
    let out = sagopt(&["datagen", "--spec", &spec, "--out", data.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(&data).unwrap().lines().count(), 150);

    let cfg = write(dir.path(), "exp.cfg", "data = data.svm\nloss = logistic\nlambda = 0.01\npasses = 4\n");
    let results = dir.path().join("results");
    for method in ["sag", "sag_ls", "fg"] {
        let out = sagopt(&["run", "--config", &cfg, "--method", method, "--out", results.to_str().unwrap()]);
        assert_eq!(code(&out), 0, "{method}: {}", String::from_utf8_lossy(&out.stderr));
        let csv = fs::read_to_string(results.join(format!("{method}.csv"))).unwrap();
        assert!(csv.lines().count() > 2);
    }
    assert!(fs::read_to_string(results.join("reference.txt")).unwrap().starts_with("f_star = "));

    let traces = ["sag", "sag_ls", "fg"].map(|m| results.join(format!("{m}.csv")).to_string_lossy().into_owned()).join(",");
    let svg = dir.path().join("plot.svg");
    let out = sagopt(&["plot", "--traces", &traces, "--out", svg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(svg).unwrap().matches("<polyline").count(), 3);
}

#[test]
fn run_without_out_prints_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "exp.cfg", "synth.n = 80\nsynth.p = 4\nmethod = sag\npasses = 2\n");
    let out = sagopt(&["run", "--config", &cfg, "--seed", "9"]);
    assert_eq!(code(&out), 0);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("pass,objective,"));
    // same seed, same trace
    let again = sagopt(&["run", "--config", &cfg, "--seed", "9"]);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), stdout);
}

#[test]
fn default_sweep_survives_oversized_steps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "exp.cfg", "synth.n = 80\nsynth.p = 4\nmethod = sag\npasses = 3\n");
    let out = sagopt(&["sweep", "--config", &cfg]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 8);
    assert!(String::from_utf8_lossy(&out.stderr).contains("best alpha"));
}

#[test]
fn rates_prints_a_table() {
    let out = sagopt(&["rates", "--n", "1000", "--L", "1", "--mu", "0.001"]);
    assert_eq!(code(&out), 0);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("method,rate\n"));
    assert!(stdout.lines().skip(1).all(|l| l.split(',').nth(1).and_then(|r| r.parse::<f64>().ok()).is_some()));
}

#[test]
fn verify_lyapunov_on_a_small_grid() {
    let out = sagopt(&["verify-lyapunov", "--n-grid", "8,100", "--mu-grid", "0.01,0.1"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    // an impossible tolerance turns any tight residual into a violation
    let strict = sagopt(&["verify-lyapunov", "--n-grid", "8", "--mu-grid", "0.1", "--tol=-1"]);
    assert_eq!(code(&strict), 3);
}

#[test]
fn exit_codes_separate_usage_from_runtime_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&sagopt(&["no-such-command"])), 1);
    assert_eq!(code(&sagopt(&["rates", "--n", "10"])), 1);
    assert_eq!(code(&sagopt(&["rates", "--n", "10", "--L", "1", "--mu", "-1"])), 1);

    let bad = write(dir.path(), "bad.cfg", "method = sag\nbogus = 1\n");
    let out = sagopt(&["run", "--config", &bad]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let missing = dir.path().join("absent.cfg");
    assert_eq!(code(&sagopt(&["run", "--config", missing.to_str().unwrap()])), 2);

    let no_data = write(dir.path(), "nodata.cfg", "data = nowhere.svm\n");
    assert_eq!(code(&sagopt(&["run", "--config", &no_data])), 2);

    let sweep_ls = write(dir.path(), "ls.cfg", "method = sag_ls\nsynth.n = 20\nsynth.p = 2\n");
    assert_eq!(code(&sagopt(&["sweep", "--config", &sweep_ls])), 1);
}
