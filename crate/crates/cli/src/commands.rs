use std::fs;
use std::path::Path;

use anyhow::Context as _;
use serde::Serialize;
use serde_json::json;
use ucbm_core::analysis::{
    self, count_active_concepts_on, pareto_filter, sweep_to_csv, ActiveRule, TradeoffPoint,
};
use ucbm_core::discovery::{discover as run_discovery, DiscoveryConfig, DiscoveryMethod};
use ucbm_core::editing::{
    apply_edit, build_prompt, fetch_proposal, line_search, load_proposal, EndpointConfig, PromptContext,
    ProposalProvider,
};
use ucbm_core::projection::{project as run_projection, ProjectionMatrix, ProjectionMode};
use ucbm_core::tensor_io::{
    load_checkpoint, load_labels, load_matrix, load_split, save_checkpoint, save_dictionary, save_npy,
    ActivationMatrix, Checkpoint, MatrixFormat, SplitPart,
};
use ucbm_core::training::{fit, TrainConfig};

use crate::config::{layer, Flags};
use crate::manifest::Run;
use crate::{
    ApplyArgs, Context, DiscoverArgs, EvalArgs, ExplainArgs, LinesearchArgs, MatrixInput, ProjectArgs,
    ProposeArgs, StatsArgs, SweepArgs, TrainArgs, TrainFlags, UsageError,
};

#[derive(Debug, Serialize, serde::Deserialize)]
struct ProjectConfig {
    mode: ProjectionMode,
}

fn format_of(path: &Path, format: Option<MatrixFormat>) -> anyhow::Result<MatrixFormat> {
    Ok(match format {
        Some(f) => f,
        None => MatrixFormat::from_path(path)?,
    })
}

fn load_activations(input: &MatrixInput, run: &mut Run) -> anyhow::Result<ActivationMatrix> {
    run.input(&input.acts)?;
    let format = format_of(&input.acts, input.format)?;
    Ok(load_matrix(&input.acts, format)?)
}

/// Similarities plus the sample ids carried by a CSV header, if any.
fn load_projection(
    path: &Path,
    mode: ProjectionMode,
    run: &mut Run,
) -> anyhow::Result<(ProjectionMatrix, Option<Vec<String>>)> {
    run.input(path)?;
    let m = load_matrix(path, format_of(path, None)?)?;
    let ids = m.sample_ids().map(<[String]>::to_vec);
    Ok((ProjectionMatrix::from_values(m.into_data(), mode)?, ids))
}

fn load_ckpt(path: &Path, run: &mut Run) -> anyhow::Result<Checkpoint> {
    run.input(path)?;
    Ok(load_checkpoint(path)?)
}

fn projection_mode(flag: Option<ProjectionMode>, ctx: &Context) -> anyhow::Result<ProjectionMode> {
    let cfg: ProjectConfig = layer(
        &ProjectConfig { mode: ProjectionMode::default() },
        "project",
        &ctx.file.project,
        Flags::default().set("mode", flag).into_map(),
    )?;
    Ok(cfg.mode)
}

pub fn train_config(flags: &TrainFlags, ctx: &Context, base: &TrainConfig) -> anyhow::Result<TrainConfig> {
    let flags = Flags::default()
        .set("lambda_w", flags.lambda_w)
        .set("lambda_pi", flags.lambda_pi)
        .set("alpha", flags.alpha)
        .set("dropout_rate", flags.dropout)
        .set("lr0", flags.lr)
        .set("epochs", flags.epochs)
        .set("batch_size", flags.batch_size)
        .set("gated", flags.no_gate.then_some(false))
        .set("frobenius_squared", flags.unsquared_frobenius.then_some(false))
        .set("seed", ctx.seed);
    let cfg: TrainConfig = layer(base, "train", &ctx.file.train, flags.into_map())?;
    cfg.validate()?;
    Ok(cfg)
}

fn sample_name(ids: &Option<Vec<String>>, i: usize) -> String {
    ids.as_ref().and_then(|ids| ids.get(i).cloned()).unwrap_or_else(|| i.to_string())
}

fn check_sample(p: &ProjectionMatrix, i: usize) -> anyhow::Result<()> {
    if i >= p.nrows() {
        return Err(ucbm_core::Error::IndexOutOfRange {
            what: "sample",
            index: i as i64,
            bound: p.nrows(),
        }
        .into());
    }
    Ok(())
}

pub fn discover(args: &DiscoverArgs, ctx: &Context, run: &mut Run) -> anyhow::Result<()> {
    if args.k.is_none() && !ctx.file.discover.contains_key("k") {
        return Err(UsageError(
            "the following required argument was not provided: --k <K> (or `k` under [discover] in the config file)"
                .into(),
        )
        .into());
    }
    let flags = Flags::default()
        .set("k", args.k)
        .set("method", args.method)
        .set("max_iters", args.max_iters)
        .set("tol", args.tol)
        .set("negative_policy", args.negative_policy)
        .set("seed", ctx.seed);
    let cfg: DiscoveryConfig = layer(
        &DiscoveryConfig::new(1, DiscoveryMethod::Nmf),
        "discover",
        &ctx.file.discover,
        flags.into_map(),
    )?;
    run.config = json!({ "discover": &cfg });
    run.seed = cfg.seed;
    let a = load_activations(&args.input, run)?;
    tracing::info!(n = a.nrows(), p = a.ncols(), k = cfg.k, method = %cfg.method, "discovering concepts");
    let found = run_discovery(&a, &cfg)?;

    save_dictionary(&found.dictionary, Some(&cfg), &run.output("dictionary")?)?;
    save_npy(&run.output("coefficients.npy")?, &found.coefficients)?;
    let mut history = String::from("iteration,objective\n");
    for (i, f) in found.residual_history.iter().enumerate() {
        history.push_str(&format!("{i},{f:?}\n"));
    }
    run.write_text("residual_history.csv", &history)?;
    run.write_json(
        "summary.json",
        &json!({
            "iterations_run": found.iterations_run,
            "relative_residual": found.relative_residual(a.data()),
            "clamped_entries": found.clamped_entries,
            "dictionary_checksum": found.dictionary.checksum(),
        }),
    )
}

pub fn project(args: &ProjectArgs, ctx: &Context, run: &mut Run) -> anyhow::Result<()> {
    let mode = projection_mode(args.mode, ctx)?;
    run.config = json!({ "project": { "mode": mode } });
    let a = load_activations(&args.input, run)?;
    let ckpt = load_ckpt(&args.dict, run)?;
    let p = run_projection(&a, &ckpt.dictionary, mode)?;
    save_npy(&run.output("projections.npy")?, p.values())?;
    Ok(())
}

pub fn train(args: &TrainArgs, ctx: &Context, run: &mut Run) -> anyhow::Result<()> {
    let mode = projection_mode(args.mode, ctx)?;
    let cfg = train_config(&args.train, ctx, &TrainConfig::default())?;
    run.config = json!({ "project": { "mode": mode }, "train": &cfg });
    run.seed = cfg.seed;
    let (p, _) = load_projection(&args.data.proj, mode, run)?;
    run.input(&args.data.labels)?;
    let labels = load_labels(&args.data.labels, None)?;
    run.input(&args.data.split)?;
    let split = load_split(&args.data.split)?;
    let dict = load_ckpt(&args.dict, run)?.dictionary;

    let (head, report) = fit(&p, &labels, &split, &cfg)?;
    tracing::info!(val_accuracy = report.val_accuracy, best_epoch = report.best_epoch, "training done");
    save_checkpoint(&head, &dict, &cfg, &run.output("checkpoint")?)?;
    run.write_json("report.json", &report)
}

fn eval_indices(split: &Option<std::path::PathBuf>, part: SplitPart, n: usize, run: &mut Run) -> anyhow::Result<Vec<usize>> {
    Ok(match split {
        Some(path) => {
            run.input(path)?;
            let split = load_split(path)?;
            split.validate(n)?;
            split.part(part).to_vec()
        }
        None => (0..n).collect(),
    })
}

pub fn eval(args: &EvalArgs, run: &mut Run) -> anyhow::Result<()> {
    let ckpt = load_ckpt(&args.checkpoint, run)?;
    let head = ckpt.require_head()?;
    run.seed = ckpt.seed;
    let (p, _) = load_projection(&args.proj, head.projection_mode, run)?;
    run.input(&args.labels)?;
    let labels = load_labels(&args.labels, Some(head.num_classes()))?;
    let indices = eval_indices(&args.split, args.part, p.nrows(), run)?;
    run.config = json!({ "part": args.split.as_ref().map(|_| args.part) });
    let accuracy = analysis::accuracy_on(&p, &labels, head, &indices)?;
    let sparsity = count_active_concepts_on(&p, head, &ActiveRule::default(), &indices)?;
    run.write_json(
        "eval.json",
        &json!({
            "accuracy": accuracy,
            "samples": indices.len(),
            "mean_active": sparsity.mean_active,
            "std_active": sparsity.std_active,
            "total_available": sparsity.total_available,
        }),
    )
}

pub fn stats(args: &StatsArgs, run: &mut Run) -> anyhow::Result<()> {
    let ckpt = load_ckpt(&args.checkpoint, run)?;
    let head = ckpt.require_head()?;
    run.seed = ckpt.seed;
    let (p, _) = load_projection(&args.proj, head.projection_mode, run)?;
    let indices = eval_indices(&args.split, args.part, p.nrows(), run)?;
    let rule = ActiveRule {
        threshold: args.threshold,
        require_gate: !args.ignore_gate,
        require_similarity: !args.ignore_similarity,
        require_weight: !args.ignore_weight,
    };
    run.config = json!({ "rule": &rule, "part": args.split.as_ref().map(|_| args.part) });
    let report = count_active_concepts_on(&p, head, &rule, &indices)?;
    run.write_json("stats.json", &report)
}

pub fn explain(args: &ExplainArgs, run: &mut Run) -> anyhow::Result<()> {
    let ckpt = load_ckpt(&args.target.checkpoint, run)?;
    let head = ckpt.require_head()?;
    run.seed = ckpt.seed;
    let (p, ids) = load_projection(&args.target.proj, head.projection_mode, run)?;
    check_sample(&p, args.target.sample)?;
    let true_class = match &args.labels {
        Some(path) => {
            run.input(path)?;
            let labels = load_labels(path, Some(head.num_classes()))?;
            Some(*labels.labels().get(args.target.sample).context("labels shorter than the projection matrix")?)
        }
        None => None,
    };
    run.config = json!({ "sample": args.target.sample, "top": args.top });
    let i = args.target.sample;
    let report = analysis::explain(sample_name(&ids, i), p.row(i), head, &ckpt.dictionary, args.top, true_class)?;
    run.write_json("explanation.json", &report)
}

pub fn sweep(args: &SweepArgs, ctx: &Context, run: &mut Run) -> anyhow::Result<()> {
    let mode = projection_mode(args.mode, ctx)?;
    let base = train_config(&args.train, ctx, &TrainConfig::default())?;
    run.config = json!({ "train": &base, "param": args.param, "values": &args.values });
    run.seed = base.seed;
    let (p, _) = load_projection(&args.data.proj, mode, run)?;
    run.input(&args.data.labels)?;
    let labels = load_labels(&args.data.labels, None)?;
    run.input(&args.data.split)?;
    let split = load_split(&args.data.split)?;
    let rows = analysis::sweep(&p, &labels, &split, &base, args.param, &args.values, &ActiveRule::default())?;
    run.write_text("sweep.csv", &sweep_to_csv(&rows))?;

    let points: Vec<TradeoffPoint> = rows
        .iter()
        .filter_map(|r| Some(TradeoffPoint::new(r.mean_active?, r.accuracy?)))
        .collect();
    let mut front = String::from("mean_active,accuracy\n");
    for pt in pareto_filter(&points) {
        front.push_str(&format!("{:?},{:?}\n", pt.active_concepts, pt.accuracy));
    }
    run.write_text("pareto.csv", &front)
}

pub fn propose(args: &ProposeArgs, run: &mut Run) -> anyhow::Result<()> {
    let ckpt = load_ckpt(&args.target.checkpoint, run)?;
    let head = ckpt.require_head()?;
    let (p, ids) = load_projection(&args.target.proj, head.projection_mode, run)?;
    check_sample(&p, args.target.sample)?;
    run.input(&args.labels)?;
    let labels = load_labels(&args.labels, Some(head.num_classes()))?;
    let i = args.target.sample;
    let truth = *labels.labels().get(i).context("labels shorter than the projection matrix")?;
    let class_names = match &args.class_names {
        Some(path) => {
            run.input(path)?;
            fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?
                .lines()
                .map(|l| l.trim().to_string())
                .collect()
        }
        None => Vec::new(),
    };
    let report = analysis::explain(sample_name(&ids, i), p.row(i), head, &ckpt.dictionary, args.top, Some(truth))?;
    if report.predicted_class == truth {
        return Err(ucbm_core::Error::TargetAlreadyCorrect.into());
    }
    let prompt = build_prompt(&report, &PromptContext { class_names, top: args.top })?;
    run.write_text("prompt.txt", &prompt)?;

    let provider = if let Some(path) = &args.proposal {
        run.input(path)?;
        Some(ProposalProvider::File(path.clone()))
    } else {
        let url = args.endpoint.clone().or_else(|| std::env::var(EndpointConfig::URL_ENV).ok());
        match url {
            Some(url) => {
                let model = args
                    .model
                    .clone()
                    .or_else(|| std::env::var(EndpointConfig::MODEL_ENV).ok())
                    .ok_or_else(|| UsageError("--model (or UCBM_MODEL) is required with an endpoint".into()))?;
                let mut cfg = EndpointConfig::new(url, model);
                cfg.api_key_env = args.api_key_env.clone();
                Some(ProposalProvider::Endpoint(cfg))
            }
            None => None,
        }
    };
    run.config = json!({
        "sample": i,
        "top": args.top,
        "provider": match &provider {
            Some(ProposalProvider::Endpoint(c)) => json!({"endpoint": c.url(), "model": c.model}),
            Some(ProposalProvider::File(path)) => json!({"file": path}),
            Some(ProposalProvider::Stub(_)) | None => json!(null),
        },
    });
    if let Some(provider) = provider {
        let proposal = fetch_proposal(&prompt, &provider, head.num_classes(), head.k())?;
        run.write_text("proposal.json", &proposal.to_json()?)?;
    }
    Ok(())
}

pub fn apply(args: &ApplyArgs, run: &mut Run) -> anyhow::Result<()> {
    let ckpt = load_ckpt(&args.checkpoint, run)?;
    let head = ckpt.require_head()?;
    run.input(&args.proposal)?;
    let proposal = load_proposal(&args.proposal, head.num_classes(), head.k())?;
    run.seed = ckpt.seed;
    run.config = json!({ "beta": args.beta });
    let edited = apply_edit(head, &proposal, args.beta)?;
    let cfg = ckpt.train_config.clone().unwrap_or_default();
    save_checkpoint(&edited, &ckpt.dictionary, &cfg, &run.output("checkpoint")?)?;
    Ok(())
}

pub fn linesearch(args: &LinesearchArgs, run: &mut Run) -> anyhow::Result<()> {
    let ckpt = load_ckpt(&args.target.checkpoint, run)?;
    let head = ckpt.require_head()?;
    run.seed = ckpt.seed;
    let (p, _) = load_projection(&args.target.proj, head.projection_mode, run)?;
    check_sample(&p, args.target.sample)?;
    run.input(&args.labels)?;
    let labels = load_labels(&args.labels, Some(head.num_classes()))?;
    run.input(&args.proposal)?;
    let proposal = load_proposal(&args.proposal, head.num_classes(), head.k())?;
    let indices: Vec<usize> = match args.search_set.as_str() {
        "all" => (0..p.nrows()).collect(),
        part => {
            let part: SplitPart = part.parse()?;
            let path = args
                .split
                .as_ref()
                .ok_or_else(|| UsageError(format!("--split is required with --search-set {}", args.search_set)))?;
            eval_indices(&Some(path.clone()), part, p.nrows(), run)?
        }
    };
    run.config = json!({ "sample": args.target.sample, "grid": args.grid, "search_set": args.search_set });
    let eval_p = p.select(&indices);
    let eval_y = ucbm_core::tensor_io::LabelVector::new(
        indices.iter().map(|&i| labels.labels()[i]).collect(),
        labels.num_classes(),
    )?;
    let i = args.target.sample;
    let result = line_search(head, &proposal, (p.row(i), labels.labels()[i]), (&eval_p, &eval_y), args.grid)?;
    run.write_json("linesearch.json", &result)
}
