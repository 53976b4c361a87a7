use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_hypflow");

fn hypflow(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env("HYPFLOW_LOG_LEVEL", "info").output().expect("spawn hypflow")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn fixture(dir: &TempDir, kind: &str, extra: &[&str]) -> PathBuf {
    let path = dir.path().join(format!("{kind}.phm"));
    let mut args = vec!["fixture", kind, "-o", path.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = hypflow(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    path
}

/// Writes a unit tetrahedron, editing the `e` records through `edit`.
fn tetra_with(dir: &TempDir, name: &str, edit: impl Fn(&str) -> Option<String>) -> PathBuf {
    let o = hypflow(&["fixture", "tetra", "--perturb", "0"]);
    let text: String = stdout(&o)
        .lines()
        .filter_map(|l| if l.starts_with("e ") { edit(l) } else { Some(l.to_string()) })
        .map(|l| l + "\n")
        .collect();
    let path = dir.path().join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_u(path: &Path) -> Vec<f64> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split_whitespace().nth(2).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn validate_genus_two() {
    let dir = TempDir::new().unwrap();
    let g2 = fixture(&dir, "genus2", &[]);
    let o = hypflow(&["validate", s(&g2)]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("chi -2"), "{}", stdout(&o));

    let o = hypflow(&["validate", s(&g2), "--json"]);
    let j: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(j["chi"], -2);
    assert_eq!(j["faces"], 68);
}

#[test]
fn missing_edge_record_is_named() {
    let dir = TempDir::new().unwrap();
    let p = tetra_with(&dir, "miss.phm", |l| (!l.starts_with("e 1 3 ")).then(|| l.to_string()));
    let o = hypflow(&["validate", s(&p)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("(1, 3)"), "{}", stderr(&o));
}

#[test]
fn inadmissible_face_is_reported() {
    let dir = TempDir::new().unwrap();
    let p = tetra_with(&dir, "bad.phm", |l| Some(if l.starts_with("e 1 2 ") { "e 1 2 5.0".into() } else { l.to_string() }));
    let o = hypflow(&["validate", s(&p)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("face 0"), "{}", stderr(&o));
}

#[test]
fn parse_errors_carry_line_numbers() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("p.phm");
    std::fs::write(&p, "phm 1\nv 4\nf 0 1 x\n").unwrap();
    let o = hypflow(&["validate", s(&p)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn report_at_zero_u_has_r_equal_k() {
    let dir = TempDir::new().unwrap();
    let g2 = fixture(&dir, "genus2", &[]);
    let u = dir.path().join("zero.u");
    std::fs::write(&u, "# all zero\nt 0 0.0\n").unwrap();
    let o = hypflow(&["report", s(&g2), "--alpha", "1.5", "--u", s(&u), "--json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let j: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    let k = j["k"].as_array().unwrap();
    assert_eq!(k.len(), 32);
    assert_eq!(k, j["r_alpha"].as_array().unwrap());
    assert!(j["gauss_bonnet_residual"].as_f64().unwrap() < 1e-12);
    assert_eq!(j["delaunay"], true);
}

#[test]
fn report_flags_violating_edges() {
    let dir = TempDir::new().unwrap();
    let p = tetra_with(&dir, "nd.phm", |l| Some(if l.starts_with("e 1 2 ") { "e 1 2 1.9".into() } else { l.to_string() }));
    let o = hypflow(&["report", s(&p)]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert!(out.contains("delaunay no"), "{out}");
    assert!(out.contains("edge (1, 2)"), "{out}");
}

#[test]
fn yamabe_flow_converges_and_logs_json() {
    let dir = TempDir::new().unwrap();
    let g2 = fixture(&dir, "genus2", &[]);
    let log = dir.path().join("flow.log");
    let o = hypflow(&["flow", s(&g2), "--flow", "yamabe", "--alpha", "0", "--target-const", "0", "--tol", "1e-8", "--log", s(&log)]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("status converged"));

    let text = std::fs::read_to_string(&log).unwrap();
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).expect("JSON line")).collect();
    assert!(lines.len() > 2);
    for l in &lines[..lines.len() - 1] {
        for key in ["t", "dt", "sup_err", "min_M", "max_M", "flips", "energy"] {
            assert!(l.get(key).is_some(), "missing {key}");
        }
    }
    let last = lines.last().unwrap();
    assert_eq!(last["status"], "converged");
    assert!(last["final_sup_err"].as_f64().unwrap() <= 1e-8);
    assert_eq!(last["u"].as_array().unwrap().len(), 32);
}

#[test]
fn flow_warns_outside_regime() {
    let dir = TempDir::new().unwrap();
    let g2 = fixture(&dir, "genus2", &[]);
    let o = hypflow(&["flow", s(&g2), "--alpha", "1", "--target-const", "1", "--max-steps", "5"]);
    assert!(stderr(&o).contains("WARN"), "{}", stderr(&o));
}

#[test]
fn zero_max_steps_is_not_converged() {
    let dir = TempDir::new().unwrap();
    let g2 = fixture(&dir, "genus2", &[]);
    let o = hypflow(&["flow", s(&g2), "--max-steps", "0"]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("max_steps"));
}

#[test]
fn newton_is_independent_of_the_seed() {
    let dir = TempDir::new().unwrap();
    let g2 = fixture(&dir, "genus2", &[]);
    let solve = |seed: &str| {
        let u = dir.path().join(format!("u{seed}"));
        let log = dir.path().join(format!("newton{seed}.log"));
        let o = hypflow(&[
            "newton", s(&g2), "--alpha", "0", "--target-const", "0", "--seed", seed, "--u-out", s(&u), "--log", s(&log),
        ]);
        assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
        for l in std::fs::read_to_string(&log).unwrap().lines() {
            serde_json::from_str::<serde_json::Value>(l).expect("JSON line");
        }
        read_u(&u)
    };
    let a = solve("1");
    let b = solve("2");
    let gap = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(gap < 1e-8, "gap {gap}");
}

#[test]
fn newton_refuses_nonconvex_targets_unless_forced() {
    let dir = TempDir::new().unwrap();
    let g2 = fixture(&dir, "genus2", &[]);
    let o = hypflow(&["newton", s(&g2), "--alpha", "1", "--target-const", "0.5"]);
    assert_eq!(code(&o), 3);
    assert!(stdout(&o).contains("refused"));

    let o = hypflow(&["newton", s(&g2), "--alpha", "1", "--target-const", "0.5", "--force", "--max-iter", "20"]);
    assert_ne!(code(&o), 3, "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("status"), "{}", stdout(&o));
}
