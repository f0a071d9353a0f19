use std::path::Path;
use std::process::{Command, Output};

use mediate::io::{read_adjacency, read_csv, write_adjacency, write_csv, Roles};
use mediate::parallel::par_bootstrap;
use mediate_core::effects_ols::{ols_de_ie, OlsFits};
use mediate_core::effects_qr::{symmetric_t_bootstrap, BootstrapConfig};
use mediate_core::graph::Pdag;
use mediate_core::sim::{gen_scenario, random_truth, Scenario};
use mediate_core::Dataset;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mediate"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn roles(c: &[&str], a: &str, m: &[&str], y: &str) -> Roles {
    Roles {
        confounders: c.iter().map(|s| s.to_string()).collect(),
        exposure: a.into(),
        mediators: m.iter().map(|s| s.to_string()).collect(),
        outcome: y.into(),
    }
}

const TEN_ROWS: &str = "c1,a,m1,y
0.5,0,1.0,2.0
-0.3,1,0.2,1.1
1.2,0,-0.7,0.4
0.0,1,0.9,3.2
2.1,1,1.4,2.2
-1.1,0,0.3,-0.5
0.7,1,-0.2,1.9
0.4,0,0.8,0.7
-0.9,1,1.7,2.8
1.5,0,-1.3,-0.1
";

#[test]
fn loads_ten_rows() {
    let l = read_csv(TEN_ROWS.as_bytes(), &roles(&["c1"], "a", &["m1"], "y")).unwrap();
    assert_eq!((l.dataset.n(), l.dataset.t(), l.dataset.p(), l.dropped), (10, 2, 1, 0));
    assert_eq!(l.dataset.m_row(2), &[-0.7]);
}

#[test]
fn empty_cell_drops_the_row() {
    let text = TEN_ROWS.replace("1.2,0,-0.7,0.4", "1.2,0,,0.4");
    let l = read_csv(text.as_bytes(), &roles(&["c1"], "a", &["m1"], "y")).unwrap();
    assert_eq!((l.dataset.n(), l.dropped), (9, 1));
}

#[test]
fn loader_errors() {
    let r = roles(&["c1"], "a", &["m1"], "y");
    let bad = TEN_ROWS.replace("0.0,1,0.9", "0.0,2,0.9");
    let e = read_csv(bad.as_bytes(), &r).unwrap_err().to_string();
    assert!(e.contains("non-binary exposure"), "{e}");
    let e = read_csv(TEN_ROWS.as_bytes(), &roles(&["c9"], "a", &["m1"], "y")).unwrap_err().to_string();
    assert!(e.contains("unknown column"), "{e}");
    let e = read_csv("c1,a,m1,y\n,,,\n".as_bytes(), &r).unwrap_err().to_string();
    assert!(e.contains("no complete rows"), "{e}");
}

fn sim(n: usize, seed: u64) -> Dataset {
    let t = random_truth(Scenario::AllCorrect, 3, 3, seed);
    gen_scenario(&t, Scenario::AllCorrect, n, seed).unwrap()
}

#[test]
fn csv_round_trip_is_bit_exact() {
    let ds = sim(300, 4);
    let mut buf = Vec::new();
    write_csv(&ds, &mut buf).unwrap();
    let names = ds.names();
    let r = Roles {
        confounders: names.confounders.clone(),
        exposure: names.exposure.clone(),
        mediators: names.mediators.clone(),
        outcome: names.outcome.clone(),
    };
    let back = read_csv(buf.as_slice(), &r).unwrap().dataset;
    let bits = |d: &Dataset| -> Vec<u64> {
        d.c_raw()
            .iter()
            .chain(d.a_vec())
            .chain(d.m_raw())
            .chain(d.y_vec())
            .map(|v| v.to_bits())
            .collect()
    };
    assert_eq!(bits(&ds), bits(&back));
}

#[test]
fn adjacency_round_trip() {
    let rows = vec![vec![0, 1, 0], vec![1, 0, 1], vec![0, 0, 0]];
    let g = Pdag::from_rows(&rows).unwrap();
    let mut buf = Vec::new();
    write_adjacency(&g, &mut buf).unwrap();
    assert_eq!(read_adjacency(buf.as_slice()).unwrap(), rows);
    assert!(read_adjacency("0,1\n1\n".as_bytes()).is_err());
    assert!(read_adjacency("0,2\n0,0\n".as_bytes()).is_err());
}

#[test]
fn parallel_bootstrap_matches_sequential() {
    let ds = sim(400, 9);
    let est = |d: &Dataset| -> mediate_core::Result<Vec<(f64, f64)>> {
        let f = OlsFits::fit(d)?;
        let (de, ie, _) = ols_de_ie(d, &f, 0.05)?;
        Ok(vec![(de.point, de.se), (ie.point, ie.se)])
    };
    let base = est(&ds).unwrap();
    let cfg = BootstrapConfig {
        b: 80,
        alpha: 0.05,
        seed: 17,
    };
    let seq = symmetric_t_bootstrap(&ds, &base, est, cfg).unwrap();
    let par = par_bootstrap(&ds, &base, &est, cfg).unwrap();
    assert_eq!(seq, par);
    assert!(par_bootstrap(&ds, &base, &est, BootstrapConfig { b: 10, ..cfg }).is_err());
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn malformed_csv_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "bad.csv", "c1,a,m1,y\n1,0,x,2\n");
    let out = run(&["estimate", "--input", &p, "--method", "ols", "--bootstrap-b", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not numeric"));
    let out = run(&["discover", "--input", &p]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["estimate", "--input", &p, "--alpha", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stochastic_estimates_need_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.csv");
    mediate::io::save_csv(&sim(200, 1), &p).unwrap();
    let p = p.to_str().unwrap();
    assert_eq!(run(&["estimate", "--input", p, "--method", "qr"]).status.code(), Some(2));
    assert_eq!(run(&["estimate", "--input", p, "--method", "qr-fast"]).status.code(), Some(0));
}

#[test]
fn all_rows_failing_exits_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let mut body = String::from("c1,a,m1,y\n");
    for i in 0..40 {
        body.push_str(&format!("{},{},1.0,{}\n", i as f64 * 0.1, i % 2, (i * 7 % 5) as f64));
    }
    let p = write(dir.path(), "flat.csv", &body);
    let g = write(dir.path(), "g.csv", "0\n");
    let out = run(&["estimate", "--input", &p, "--graph", &g, "--method", "qr-fast"]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).contains("error:"));
}

#[test]
fn discover_collider_and_empty_graph() {
    let dir = tempfile::tempdir().unwrap();
    // c1 -> a, m1 -> y <- a: the outcome is a collider of a and m1.
    let mut body = String::from("c1,a,m1,y\n");
    let mut s: u64 = 12345;
    let mut u = || {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((s >> 11) as f64) / (1u64 << 53) as f64
    };
    let mut gauss = move || {
        let (u1, u2) = (u().max(1e-300), u());
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    for _ in 0..5000 {
        let c = gauss();
        let a = if c + gauss() > 0.0 { 1.0 } else { 0.0 };
        let m = gauss();
        let y = 2.0 * a + 1.5 * m + gauss();
        body.push_str(&format!("{c},{a},{m},{y}\n"));
    }
    let p = write(dir.path(), "col.csv", &body);
    let out = run(&["discover", "--input", &p, "--format", "json"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let g = &v["cpdag"];
    assert_eq!(g[2][3], 1);
    assert_eq!(g[3][2], 0);
    assert_eq!(g[1][3], 1);
    assert_eq!(g[3][1], 0);

    let mut body = String::from("c1,a,m1,y\n");
    for _ in 0..3000 {
        let a = if gauss() > 0.0 { 1 } else { 0 };
        body.push_str(&format!("{},{a},{},{}\n", gauss(), gauss(), gauss()));
    }
    let p = write(dir.path(), "ind.csv", &body);
    let out = run(&["discover", "--input", &p]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("# mediate-cpdag/1"));
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows, vec!["0,0,0,0"; 4]);
}

#[test]
fn graph_file_and_env_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.csv");
    let t = random_truth(Scenario::AllCorrect, 3, 3, 5);
    mediate::io::save_csv(&gen_scenario(&t, Scenario::AllCorrect, 500, 6).unwrap(), &p).unwrap();
    let p = p.to_str().unwrap();
    let mut gm = String::new();
    for r in t.cpdag().unwrap().rows() {
        gm.push_str(&r.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","));
        gm.push('\n');
    }
    let g = write(dir.path(), "g.csv", &gm);
    let by_flag = run(&["estimate", "--input", p, "--graph", &g, "--method", "qr-fast"]);
    let by_env = bin()
        .args(["estimate", "--input", p])
        .env("APP_GRAPH", &g)
        .env("APP_METHOD", "qr-fast")
        .output()
        .unwrap();
    assert_eq!(by_flag.status.code(), Some(0));
    assert_eq!(by_flag.stdout, by_env.stdout);
}

#[test]
fn json_mirrors_csv() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.csv");
    mediate::io::save_csv(&sim(400, 8), &p).unwrap();
    let p = p.to_str().unwrap();
    let csv_out = run(&["estimate", "--input", p, "--method", "ols", "--bootstrap-b", "0"]).stdout;
    let json_out = run(&["estimate", "--input", p, "--method", "ols", "--bootstrap-b", "0", "--format", "json"]).stdout;
    let text = String::from_utf8(csv_out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# mediate-effects/1"));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let v: serde_json::Value = serde_json::from_slice(&json_out).unwrap();
    assert_eq!(v["schema"], "mediate-effects/1");
    let rows = v["rows"].as_array().unwrap();
    let body: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), body.len());
    for (row, line) in rows.iter().zip(body) {
        let keys: Vec<&str> = row.as_object().unwrap().keys().map(String::as_str).collect();
        let mut h = header.clone();
        h.sort_unstable();
        let mut k = keys.clone();
        k.sort_unstable();
        assert_eq!(h, k);
        let cells: Vec<&str> = line.split(',').collect();
        let point: f64 = cells[4].parse().unwrap();
        assert_eq!(row["point"].as_f64().unwrap(), point);
        assert_eq!(row["estimand"], cells[0]);
    }
}

#[test]
fn simulate_writes_datasets_and_truth() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    let o = out.to_str().unwrap();
    let r = run(&["simulate", "--scenario", "m2", "--n", "50", "--reps", "3", "--seed", "4", "--out", o]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    for k in 0..3 {
        let l = mediate::io::load_csv(
            &out.join(format!("rep_{k}.csv")),
            &mediate::io::roles_from_header(&out.join(format!("rep_{k}.csv"))).unwrap(),
        )
        .unwrap();
        assert_eq!((l.dataset.n(), l.dataset.p(), l.dataset.n_conf()), (50, 3, 2));
    }
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("truth.json")).unwrap()).unwrap();
    assert_eq!(v["scenario"], "m2");
    assert_eq!(v["mediators"].as_array().unwrap().len(), 3);
    let unknown = run(&["simulate", "--scenario", "m9", "--seed", "1", "--out", o]);
    assert_eq!(unknown.status.code(), Some(2));
}
