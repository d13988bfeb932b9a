//! Loss-trajectory probe across learning rates.
use sall_core::experiment::{ExperimentConfig, SeedRun};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut cfg = ExperimentConfig::default();
    cfg.tasks[0].n_per_grade = 200;
    cfg.tasks[1].n_per_grade = 200;
    cfg.train.epochs = 12;
    for arg in &args {
        if let Some((k, v)) = arg.split_once('=') {
            match k {
                "epochs" => cfg.train.epochs = v.parse().unwrap(),
                "noise" => cfg.noise_amplitude = v.parse().unwrap(),
                "n" => { let n: usize = v.parse().unwrap(); for t in cfg.tasks.iter_mut() { t.n_per_grade = n; } }
                _ => panic!("unknown arg {k}"),
            }
        }
    }
    for lr in [5e-4, 1e-3, 2e-3, 4e-3] {
        cfg.train.learning_rate = lr;
        let run = SeedRun::new(&cfg, 0, 1.0, None).unwrap();
        for (task, out) in &run.singles {
            let n = out.steps.len();
            let probe: Vec<String> = [0, n / 8, n / 4, n / 2, 3 * n / 4, n - 1]
                .iter()
                .map(|&i| format!("{:.3}", out.steps[i].total))
                .collect();
            let spec = run.single_spec(task).unwrap();
            let (m, _) = run.eval(&out.params, &spec, task).unwrap();
            println!("lr={lr:.0e} {task}: loss {} -> acc {:.3}", probe.join(" "), m.accuracy);
        }
    }
}
