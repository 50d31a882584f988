//! End-to-end run on the bundled synthetic task.

use serde_json::json;
use ucbm_core::analysis::{self, accuracy_on, count_active_concepts_on, sweep_to_csv, ActiveRule, SweepParam};
use ucbm_core::synthetic::{self, SyntheticConfig};
use ucbm_core::tensor_io::{save_checkpoint, save_labels, save_npy, save_split};
use ucbm_core::training::{fit, TrainConfig};

use crate::config::layer;
use crate::manifest::Run;
use crate::Context;

/// Concepts discovered by the self-test.
pub const SELFTEST_K: usize = 50;
/// Gate-penalty grid written to `sweep.csv`.
pub const SWEEP_LAMBDA_PI: [f64; 3] = [0.0, 1e-3, 1e-1];
/// Explanations must reproduce the logits to this tolerance.
const EXPLAIN_TOL: f64 = 1e-8;

#[derive(Debug)]
pub struct SelftestFailure(pub String);

impl std::fmt::Display for SelftestFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "selftest failed: {}", self.0)
    }
}

impl std::error::Error for SelftestFailure {}

fn task_config(ctx: &Context) -> SyntheticConfig {
    SyntheticConfig {
        seed: ctx.seed.unwrap_or(0),
        ..SyntheticConfig::default()
    }
}

fn write_task(task: &synthetic::SyntheticTask, dir: &str, run: &mut Run) -> anyhow::Result<()> {
    save_npy(&run.output(&format!("{dir}activations.npy"))?, task.activations.data())?;
    save_labels(&run.output(&format!("{dir}labels.csv"))?, &task.labels)?;
    save_split(&run.output(&format!("{dir}split.json"))?, &task.split)?;
    save_npy(&run.output(&format!("{dir}ground_truth.npy"))?, &task.ground_truth)?;
    Ok(())
}

pub fn gen_synthetic(ctx: &Context, run: &mut Run) -> anyhow::Result<()> {
    let cfg = task_config(ctx);
    run.config = json!({ "synthetic": &cfg });
    run.seed = cfg.seed;
    let task = synthetic::generate(&cfg)?;
    write_task(&task, "", run)
}

pub fn run(ctx: &Context, run: &mut Run) -> anyhow::Result<()> {
    let task_cfg = task_config(ctx);
    let seed = task_cfg.seed;
    let base = synthetic::train_config(seed);
    let train_cfg: TrainConfig = layer(&base, "train", &ctx.file.train, Default::default())?;
    let train_cfg = TrainConfig { seed, ..train_cfg };
    train_cfg.validate()?;
    run.config = json!({ "synthetic": &task_cfg, "k": SELFTEST_K, "train": &train_cfg });
    run.seed = seed;

    let task = synthetic::generate(&task_cfg)?;
    std::fs::create_dir_all(run.out.join("data"))?;
    write_task(&task, "data/", run)?;

    let (found, p) = synthetic::discover_and_project(&task, SELFTEST_K, seed)?;
    tracing::info!(residual = found.relative_residual(task.activations.data()), "dictionary ready");
    save_npy(&run.output("projections.npy")?, p.values())?;

    let rule = ActiveRule::default();
    let test = &task.split.test;
    let mut metrics = String::from("model,val_accuracy,test_accuracy,mean_active,std_active\n");
    let mut gated_head = None;
    for gated in [true, false] {
        let cfg = TrainConfig { gated, ..train_cfg.clone() };
        let (head, report) = fit(&p, &task.labels, &task.split, &cfg)?;
        let acc = accuracy_on(&p, &task.labels, &head, test)?;
        let sparsity = count_active_concepts_on(&p, &head, &rule, test)?;
        let name = if gated { "gated" } else { "gate_free" };
        metrics.push_str(&format!(
            "{name},{:?},{acc:?},{:?},{:?}\n",
            report.val_accuracy, sparsity.mean_active, sparsity.std_active
        ));
        save_checkpoint(&head, &found.dictionary, &cfg, &run.output(&format!("checkpoint_{name}"))?)?;
        if gated {
            gated_head = Some((head, acc));
        }
    }
    run.write_text("metrics.csv", &metrics)?;

    let rows = analysis::sweep(&p, &task.labels, &task.split, &train_cfg, SweepParam::LambdaPi, &SWEEP_LAMBDA_PI, &rule)?;
    run.write_text("sweep.csv", &sweep_to_csv(&rows))?;

    let (head, acc) = gated_head.expect("gated model trained above");
    let chance = 1.0 / task.labels.num_classes() as f64;
    if acc < chance + 0.5 {
        return Err(SelftestFailure(format!("gated test accuracy {acc} is too close to chance")).into());
    }
    let sample = test[0];
    let report = analysis::explain(
        sample.to_string(),
        p.row(sample),
        &head,
        &found.dictionary,
        5,
        Some(task.labels.labels()[sample]),
    )?;
    let err = report.max_decomposition_error();
    if !(err <= EXPLAIN_TOL) {
        return Err(SelftestFailure(format!("explanation misses the logits by {err:e}")).into());
    }
    run.write_json("explanation.json", &report)?;
    println!("selftest ok: gated test accuracy {acc:.4}");
    Ok(())
}
