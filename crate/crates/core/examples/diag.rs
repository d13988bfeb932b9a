//! Collapse diagnostics: feature health of a trained single-task model.
use sall_core::experiment::{ExperimentConfig, SeedRun};
use sall_core::network::forward_pass;
use sall_core::tensor::Tensor;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut cfg = ExperimentConfig::default();
    let mut seed = 0u64;
    for arg in &args {
        if let Some((k, v)) = arg.split_once('=') {
            match k {
                "epochs" => cfg.train.epochs = v.parse().unwrap(),
                "lr" => cfg.train.learning_rate = v.parse().unwrap(),
                "n" => { let n: usize = v.parse().unwrap(); for t in cfg.tasks.iter_mut() { t.n_per_grade = n; } }
                "seed" => seed = v.parse().unwrap(),
                "augment" => cfg.train.augment = match v { "none" => sall_core::pipeline::AugmentMode::None, "offline" => sall_core::pipeline::AugmentMode::Offline, _ => sall_core::pipeline::AugmentMode::Online },
                _ => panic!("unknown arg {k}"),
            }
        }
    }
    let run = SeedRun::new(&cfg, seed, 1.0, None).unwrap();
    for (task, out) in &run.singles {
        let spec = run.single_spec(task).unwrap();
        let (m, _) = run.eval(&out.params, &spec, task).unwrap();
        // Loss trajectory.
        let n = out.steps.len();
        let probe: Vec<String> = [0, n / 4, n / 2, 3 * n / 4, n - 1]
            .iter().map(|&i| format!("{:.3}", out.steps[i].total)).collect();
        println!("{task}: acc {:.3} loss [{}]", m.accuracy, probe.join(", "));

        // Feature health on a mixed test batch.
        let test = &run.data.splits[task].test;
        let images: Vec<&Tensor> = test.iter().step_by(7).take(32).map(|e| &e.image).collect();
        let batch = Tensor::stack(&images).unwrap();
        let pass = forward_pass(&out.params, &spec, &batch, false).unwrap();
        let feat = pass.tape.value(pass.trunk_feature);
        let f = feat.shape()[1];
        let b = feat.shape()[0];
        let mut dead = 0;
        let mut means = vec![0.0; f];
        let mut vars = vec![0.0; f];
        for j in 0..f {
            let col: Vec<f64> = (0..b).map(|i| feat.data()[i * f + j]).collect();
            let mean = col.iter().sum::<f64>() / b as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / b as f64;
            means[j] = mean;
            vars[j] = var;
            if col.iter().all(|&v| v == 0.0) { dead += 1; }
        }
        let live_var: f64 = vars.iter().sum::<f64>() / f as f64;
        println!("  features: {dead}/{f} dead, mean|feat| {:.4}, avg var {:.6}", 
            means.iter().map(|v| v.abs()).sum::<f64>() / f as f64, live_var);
        let logits = pass.tape.value(pass.logits[task]);
        let k = logits.shape()[1];
        let row0: Vec<String> = logits.data()[..k].iter().map(|v| format!("{v:.2}")).collect();
        println!("  logits row0: [{}]", row0.join(", "));
        // Per-conv-layer activation liveness.
        for (name, var) in &pass.conv_outputs {
            let t = pass.tape.value(*var);
            let pos = t.data().iter().filter(|&&v| v > 0.0).count() as f64 / t.numel() as f64;
            println!("  {name}: positive fraction {:.3}", pos);
        }
    }
}
