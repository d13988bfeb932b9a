//! Benchmark tuning probe: runs baseline / labels-only / SALL on the default
//! two-task benchmark and prints accuracies, extreme confusions, and timing.
//! Not part of the test suite.

use std::time::Instant;

use sall_core::experiment::{confusion_matrix, extreme_confusions, ExperimentConfig, SeedRun};

fn main() {
    let mut cfg = ExperimentConfig::default();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut seeds = vec![0u64];
    let mut run_labels_only = true;
    for arg in &args {
        if let Some((k, v)) = arg.split_once('=') {
            match k {
                "epochs" => cfg.train.epochs = v.parse().unwrap(),
                "lr" => cfg.train.learning_rate = v.parse().unwrap(),
                "batch" => cfg.train.batch_size = v.parse().unwrap(),
                "t" => cfg.train.temperature = v.parse().unwrap(),
                "n" => {
                    let n: usize = v.parse().unwrap();
                    for t in cfg.tasks.iter_mut() {
                        t.n_per_grade = n;
                    }
                }
                "noise" => cfg.noise_amplitude = v.parse().unwrap(),
                "seeds" => seeds = v.split(',').map(|s| s.parse().unwrap()).collect(),
                "labelsonly" => run_labels_only = v == "1",
                _ => panic!("unknown arg {k}"),
            }
        }
    }
    let t = cfg.train.temperature;
    println!(
        "epochs={} lr={} batch={} T={} n={} noise={} seeds={:?}",
        cfg.train.epochs,
        cfg.train.learning_rate,
        cfg.train.batch_size,
        t,
        cfg.tasks[0].n_per_grade,
        cfg.noise_amplitude,
        seeds
    );

    let mut sums: std::collections::BTreeMap<String, f64> = Default::default();
    let mut extreme_base = 0usize;
    let mut extreme_sall = 0usize;
    for &seed in &seeds {
        let t0 = Instant::now();
        let run = SeedRun::new(&cfg, seed, 1.0, None).unwrap();
        println!("[seed {seed}] data+pretrain: {:.1}s", t0.elapsed().as_secs_f64());

        for (task, out) in &run.singles {
            let spec = run.single_spec(task).unwrap();
            let (m, _) = run.eval(&out.params, &spec, task).unwrap();
            println!("  baseline {task}: acc {:.4} conf {:?} err {:?} ece {:.4}", m.accuracy, m.conf, m.err, m.ece);
            *sums.entry(format!("base/{task}")).or_default() += m.accuracy;
            let cm = confusion_matrix(&out.params, &spec, &run.data.splits[task].test, task).unwrap();
            extreme_base += extreme_confusions(&cm);
            println!("  baseline {task} confusion: {cm:?}");
        }

        let t1 = Instant::now();
        let sets = run.labeled_train_sets(t).unwrap();
        println!("  labels: {:.1}s", t1.elapsed().as_secs_f64());

        let t2 = Instant::now();
        let sall = run.train_sall(t, &sets).unwrap();
        println!("  sall train: {:.1}s", t2.elapsed().as_secs_f64());
        let spec = run.multi_spec();
        for task in run.data.splits.keys() {
            let (m, _) = run.eval(&sall.params, &spec, task).unwrap();
            println!("  sall {task}: acc {:.4} conf {:?} err {:?} ece {:.4}", m.accuracy, m.conf, m.err, m.ece);
            *sums.entry(format!("sall/{task}")).or_default() += m.accuracy;
            let cm = confusion_matrix(&sall.params, &spec, &run.data.splits[task].test, task).unwrap();
            extreme_sall += extreme_confusions(&cm);
            println!("  sall {task} confusion: {cm:?}");
        }

        if run_labels_only {
            let t3 = Instant::now();
            for task in run.data.splits.keys() {
                let out = run.train_labels_only(task, t, &sets).unwrap();
                let spec = run.single_spec(task).unwrap();
                let (m, _) = run.eval(&out.params, &spec, task).unwrap();
                println!("  labels-only {task}: acc {:.4}", m.accuracy);
                *sums.entry(format!("lonly/{task}")).or_default() += m.accuracy;
            }
            println!("  labels-only train: {:.1}s", t3.elapsed().as_secs_f64());
        }
        println!("[seed {seed}] total {:.1}s", t0.elapsed().as_secs_f64());
    }
    let n = seeds.len() as f64;
    println!("== means over {} seeds ==", seeds.len());
    for (k, v) in &sums {
        println!("  {k}: {:.4}", v / n);
    }
    println!("  extreme confusions: baseline {extreme_base} vs sall {extreme_sall}");
}
