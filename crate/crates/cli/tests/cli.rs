use std::path::Path;
use std::process::Command;
use std::sync::Arc;

use roars_cli::bench::{run_benchmark, write_report, BenchConfig, BenchSetting, Seeds};
use roars_cli::sim::{run_online, RunSpec, SchedulerKind};
use roars_core::fixtures::{instance, open_sky_scenario, push_task, random_small};
use roars_core::heuristics::{Heuristic, TaskRule};
use roars_core::policy::{save_checkpoint, NetConfig, PolicyNet};
use roars_core::rewriter::SearchConfig;
use roars_core::scenario::{generate_scenario, GenConfig};
use roars_core::schedule::{validate, EmbeddingLayout, Instance};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn all_kinds(sites: usize) -> Vec<SchedulerKind> {
    let set = if sites == 1 {
        Heuristic::intra_site_set()
    } else {
        Heuristic::distributed_set()
    };
    let mut v: Vec<SchedulerKind> = set.into_iter().map(SchedulerKind::Heuristic).collect();
    v.extend([SchedulerKind::Offline, SchedulerKind::RoarsRandom]);
    v
}

fn small_gen() -> GenConfig {
    let mut g = GenConfig::intra_site().scaled(4);
    g.arrival_window_steps = 20;
    g
}

#[test]
fn scheduler_names_round_trip() {
    for k in all_kinds(1).into_iter().chain(all_kinds(3)).chain([SchedulerKind::Roars]) {
        assert_eq!(k.to_string().parse::<SchedulerKind>().unwrap(), k);
    }
    assert_eq!("offline".parse::<SchedulerKind>().unwrap(), SchedulerKind::Offline);
    assert!("nope".parse::<SchedulerKind>().is_err());
}

#[test]
fn empty_scenario_gives_empty_schedule() {
    let inst = instance(open_sky_scenario(1, 30, 3));
    for k in all_kinds(1) {
        let (dag, m) = run_online(&inst, &RunSpec::new(k)).unwrap();
        assert_eq!(dag.num_placed(), 0);
        assert_eq!((m.num_tasks, m.placed, m.avg_slowdown), (0, 0, None));
    }
}

#[test]
fn single_task_has_unit_slowdown_everywhere() {
    for sites in [1, 3] {
        let mut s = open_sky_scenario(sites, 60, 3);
        push_task(&mut s, 4, 6, 0b101, None);
        let inst = instance(s);
        for k in all_kinds(sites) {
            let (_, m) = run_online(&inst, &RunSpec::new(k)).unwrap();
            assert_eq!(m.avg_slowdown, Some(1.0), "{k}");
        }
    }
}

#[test]
fn reported_slowdown_matches_the_schedule() {
    for seed in 0..10 {
        let inst = Arc::new(Instance::new(generate_scenario(&small_gen(), seed).unwrap()).unwrap());
        let (dag, m) = run_online(&inst, &RunSpec::new(SchedulerKind::Heuristic(Heuristic::intra(TaskRule::Fcfs)))).unwrap();
        assert_eq!(m.avg_slowdown, dag.average_slowdown().ok());
        assert_eq!(m.placed + m.dropped.len(), m.num_tasks);
    }
}

#[test]
fn every_scheduler_is_feasible() {
    for seed in 0..6 {
        let sites = 1 + seed as usize % 3;
        let inst = instance(random_small(seed, 8, sites, 3, 60));
        for k in all_kinds(sites) {
            let (dag, m) = run_online(&inst, &RunSpec::new(k)).unwrap();
            assert!(validate(&dag).is_empty(), "{k} seed {seed}");
            if let Some(a) = m.avg_slowdown {
                assert!(a >= 1.0);
            }
        }
    }
}

#[test]
fn roars_rejects_a_mismatched_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let cfg = NetConfig {
        layout: EmbeddingLayout::distributed(5, 3, 20),
        hidden: 4,
    };
    let net = PolicyNet::new(cfg, &mut ChaCha8Rng::seed_from_u64(0));
    save_checkpoint(&net, 0, &path).unwrap();
    let mut spec = RunSpec::new(SchedulerKind::Roars);
    spec.model = Some(roars_cli::sim::RoarsModel::load(&path, SearchConfig::intra_site()).unwrap());
    let inst = instance(random_small(1, 4, 1, 3, 60));
    let err = run_online(&inst, &spec).unwrap_err().to_string();
    assert!(err.contains("checkpoint expects 5 site(s)"), "{err}");
}

fn bench_config(checkpoint: Option<&Path>) -> BenchConfig {
    BenchConfig {
        settings: vec![BenchSetting {
            name: "small".into(),
            generator: small_gen(),
            checkpoint: None,
        }],
        seeds: Seeds::Range { start: 0, count: 3 },
        schedulers: vec![
            SchedulerKind::Heuristic(Heuristic::intra(TaskRule::Stf)),
            SchedulerKind::Roars,
        ],
        queue_cap: 10,
        checkpoint: checkpoint.map(Path::to_path_buf),
        search: Some(SearchConfig {
            num_steps: 10,
            ..SearchConfig::intra_site()
        }),
        seed: 0,
    }
}

#[test]
fn bench_covers_every_pair_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let gen = small_gen();
    let net = PolicyNet::new(NetConfig::for_generator(&gen, 8), &mut ChaCha8Rng::seed_from_u64(1));
    save_checkpoint(&net, 0, &ckpt).unwrap();
    let cfg = bench_config(Some(&ckpt));
    let a = run_benchmark(&cfg, None).unwrap();
    assert_eq!(a.rows.len(), 6);
    assert!(a.rows.iter().all(|r| r.error.is_none()));
    write_report(&a, &cfg, &dir.path().join("a")).unwrap();
    let b = run_benchmark(&cfg, None).unwrap();
    write_report(&b, &cfg, &dir.path().join("b")).unwrap();
    for f in ["rows.csv", "summary.csv", "slowdown.svg"] {
        let x = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let y = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
    let timing = std::fs::read_to_string(dir.path().join("a/timing.csv")).unwrap();
    assert_eq!(timing.lines().count(), 7);
}

#[test]
fn bench_records_failures_and_continues() {
    let cfg = bench_config(Some(Path::new("/nonexistent/m.ckpt")));
    let r = run_benchmark(&cfg, None).unwrap();
    assert_eq!(r.rows.len(), 6);
    let (ok, failed): (Vec<_>, Vec<_>) = r.rows.iter().partition(|r| r.error.is_none());
    assert_eq!(ok.len(), 3);
    assert!(failed.iter().all(|r| r.scheduler == "ROARS"));
    assert_eq!(r.summary.len(), 2);
}

fn roars(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_roars")).args(args).output().unwrap()
}

#[test]
fn binary_generates_simulates_and_reports_errors() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("gen.json");
    std::fs::write(&gen, serde_json::to_string(&small_gen()).unwrap()).unwrap();
    let s1 = dir.path().join("s1.json");
    let s2 = dir.path().join("s2.json");
    for s in [&s1, &s2] {
        let o = roars(&["generate", "--config", gen.to_str().unwrap(), "--out", s.to_str().unwrap(), "--seed", "7"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(std::fs::read(&s1).unwrap(), std::fs::read(&s2).unwrap());

    let dump = dir.path().join("d.jsonl");
    let out = dir.path().join("r.csv");
    let o = roars(&[
        "simulate",
        "--scenario",
        s1.to_str().unwrap(),
        "--scheduler",
        "ROARS-RANDOM",
        "--seed",
        "3",
        "--dump",
        dump.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let row = std::fs::read_to_string(&out).unwrap();
    assert!(row.starts_with("scheduler,seed,tasks,placed,dropped,avg_slowdown"));
    for line in std::fs::read_to_string(&dump).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["slowdown"].as_f64().unwrap() >= 1.0);
    }

    let o = roars(&["simulate", "--scenario", s1.to_str().unwrap(), "--scheduler", "ROARS"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(String::from_utf8_lossy(&o.stderr).lines().count(), 1);
    let o = roars(&["simulate", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
    let o = roars(&["generate", "--out", dir.path().join("x/y.json").to_str().unwrap(), "--config", "/missing.json"]);
    assert_eq!(o.status.code(), Some(1));
}
