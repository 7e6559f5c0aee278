use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_adaalter");

const LOCAL: &str = "algo=local_adaalter\nn=4\nT=300\nH=4\nd=8\neta=0.4\nclip_rho=1\n\
                     noise=0.2\nalpha=0.5\nl_max=2\ncheck_bound=true\n";

fn adaalter(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn only_subdir(root: &Path) -> PathBuf {
    let dirs: Vec<PathBuf> = fs::read_dir(root)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir())
        .collect();
    assert_eq!(dirs.len(), 1, "expected one run directory in {}", root.display());
    dirs.into_iter().next().unwrap()
}

fn trace_file(run_dir: &Path) -> PathBuf {
    fs::read_dir(run_dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.file_name().unwrap().to_str().unwrap().starts_with("trace_"))
        .expect("trace file written")
}

#[test]
fn run_writes_artifacts_and_is_thread_independent() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "c.txt", LOCAL);

    let one = adaalter(tmp.path(), &["run", "c.txt", "--out-dir", "a"]);
    assert!(one.status.success(), "{}", String::from_utf8_lossy(&one.stderr));
    let four = adaalter(tmp.path(), &["run", "c.txt", "--out-dir", "b", "--threads", "4"]);
    assert!(four.status.success());

    let da = only_subdir(&tmp.path().join("a"));
    let db = only_subdir(&tmp.path().join("b"));
    assert_eq!(da.file_name(), db.file_name(), "run name ignores thread count");
    for f in ["config.txt", "summary.json"] {
        assert!(da.join(f).is_file());
    }
    let ta = fs::read(trace_file(&da)).unwrap();
    let tb = fs::read(trace_file(&db)).unwrap();
    assert_eq!(ta, tb, "trace bytes must not depend on threads");

    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(da.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["comm"]["floats_sent_per_worker"], 300 / 4 * 8 * 2);
    assert_eq!(summary["bound"]["dominated"], true);
}

#[test]
fn emitted_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "c.txt", LOCAL);
    assert!(adaalter(tmp.path(), &["run", "c.txt", "--out-dir", "a"]).status.success());
    let first = only_subdir(&tmp.path().join("a"));
    let again = adaalter(
        tmp.path(),
        &["run", first.join("config.txt").to_str().unwrap(), "--out-dir", "b"],
    );
    assert!(again.status.success());
    let second = only_subdir(&tmp.path().join("b"));
    assert_eq!(first.file_name(), second.file_name());
    assert_eq!(
        fs::read(trace_file(&first)).unwrap(),
        fs::read(trace_file(&second)).unwrap()
    );
}

#[test]
fn sweep_writes_one_directory_per_cell_and_a_table() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "c.txt", LOCAL);
    let out = adaalter(
        tmp.path(),
        &["sweep", "c.txt", "--H", "1,4,8", "--seeds", "0,1", "--out-dir", "s"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let root = tmp.path().join("s");
    let runs = fs::read_dir(&root).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count();
    assert_eq!(runs, 6);
    let csv_path = fs::read_dir(&root)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|x| x == "csv"))
        .expect("sweep csv");
    let text = fs::read_to_string(csv_path).unwrap();
    assert_eq!(text.lines().count(), 4, "header plus one row per H:\n{text}");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("comm floats"));
}

#[test]
fn compare_writes_long_format_csv() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "a.txt", LOCAL);
    write(
        tmp.path(),
        "b.txt",
        "algo=adagrad\nn=4\nT=300\nd=8\neta=0.4\nclip_rho=1\nnoise=0.2\nalpha=0.5\nl_max=2\n",
    );
    let out = adaalter(
        tmp.path(),
        &["compare", "a.txt", "b.txt", "--seeds", "0,1", "--out-dir", "cmp"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(tmp.path().join("cmp/comparison.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("label,iteration,loss,comm_floats"));
    assert_eq!(lines.count(), 2 * 301);
}

#[test]
fn compare_rejects_mismatched_problems() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "a.txt", LOCAL);
    write(tmp.path(), "b.txt", "algo=adagrad\nn=4\nT=300\nd=9\neta=0.4\n");
    let out = adaalter(tmp.path(), &["compare", "a.txt", "b.txt"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_bound_reports_on_a_recorded_trace() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "c.txt", LOCAL);
    assert!(adaalter(tmp.path(), &["run", "c.txt", "--out-dir", "a"]).status.success());
    let trace = trace_file(&only_subdir(&tmp.path().join("a")));
    write(
        tmp.path(),
        "b.txt",
        "L=2\nrho=1\neps=1\neta=0.4\nH=4\nn=4\nb0sq=1\nd=8\nF_gap=20\n",
    );
    let out = adaalter(
        tmp.path(),
        &["verify-bound", trace.to_str().unwrap(), "b.txt", "--out", "r.json", "--strict"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(report["inputs"]["t"], 300, "T defaults to the trace length");
    assert_eq!(report["dominated"], true);
    assert_eq!(report["bound_terms"].as_array().unwrap().len(), 3);

    // A step size above 1/L violates a hypothesis: configuration error.
    write(
        tmp.path(),
        "bad.txt",
        "L=2\nrho=1\neps=1\neta=0.9\nH=4\nn=4\nb0sq=1\nd=8\nF_gap=20\n",
    );
    let bad = adaalter(tmp.path(), &["verify-bound", trace.to_str().unwrap(), "bad.txt"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn check_lemma1_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = adaalter(tmp.path(), &["check-lemma1", "--trials", "2000", "--seed", "3"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("0 failures"));
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        ("unknown_algo.txt", "algo=adam\nn=1\nT=10\nd=2\neta=0.1\n"),
        ("zero_h.txt", "algo=local_sgd\nn=2\nT=10\nH=0\nd=2\neta=0.1\n"),
        ("bad_eta.txt", "algo=sgd\nn=2\nT=10\nd=2\neta=-1\n"),
        ("missing_key.txt", "algo=sgd\nn=2\nd=2\neta=0.1\n"),
        ("unknown_key.txt", "algo=sgd\nn=2\nT=10\nd=2\neta=0.1\nmomentum=0.9\n"),
        (
            "bound_without_clip.txt",
            "algo=local_adaalter\nn=2\nT=10\nH=2\nd=2\neta=0.1\ncheck_bound=true\n",
        ),
    ];
    for (name, text) in cases {
        write(tmp.path(), name, text);
        let out = adaalter(tmp.path(), &["run", name]);
        assert_eq!(out.status.code(), Some(2), "{name}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let missing = adaalter(tmp.path(), &["run", "nope.txt"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn runtime_invariant_violation_exits_with_three() {
    // A step size far past the stability limit drives plain SGD to overflow.
    let tmp = tempfile::tempdir().unwrap();
    write(
        tmp.path(),
        "blowup.txt",
        "algo=sgd\nn=2\nT=2000\nd=4\neta=50\nl_max=10\nnoise=0\n",
    );
    let out = adaalter(tmp.path(), &["run", "blowup.txt", "--out-dir", "o"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
