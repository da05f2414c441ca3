use std::io::Write;
use std::path::Path;

use cfx_core::analysis::{
    ablation_table, disable_filters_eval, global_filter_stats, global_mc_set, logits_ablation, logits_table,
    misclassification_report, stats_table, sweep_row, sweep_table, SweepRow,
};
use cfx_core::explain::{explain_mc, explain_mi, rf_heatmap, topk_filters};
use cfx_core::io::{load_bundle, load_checkpoint, load_head, write_checkpoint, write_classifier_head, write_feature_bundle};
use cfx_core::loss::gradcheck::GradCheckProblem;
use cfx_core::train::synth::{synth_problem, SynthConfig};
use cfx_core::train::{classifier_accuracy, relabel_inferred};
use cfx_core::{
    train_classifier_head, train_mc, train_mi, CfeCheckpoint, ClassifierHead, FeatureBundle, HeadKind, LogitsTerm,
    SubsetPolicy, TrainConfig,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::run::{CliError, CliResult, Run};
use crate::{
    AblateArgs, Command, ExplainArgs, GenSynthArgs, GradcheckArgs, LogitsAblateArgs, LogitsMode, MisclassArgs,
    StatsArgs, SweepArgs, TrainArgs, TrainHeadArgs, TrainMcArgs, TrainMiArgs,
};

pub fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::GenSynth(a) => gen_synth(a),
        Command::TrainHead(a) => train_head(a),
        Command::TrainMc(a) => train_mc_cmd(a),
        Command::TrainMi(a) => train_mi_cmd(a),
        Command::Explain(a) => explain(a),
        Command::Stats(a) => stats(a),
        Command::Ablate(a) => ablate(a),
        Command::Sweep(a) => sweep(a),
        Command::LogitsAblate(a) => logits_ablate(a),
        Command::Misclass(a) => misclass(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

pub fn parse_policy(s: &str) -> Result<SubsetPolicy, String> {
    match s {
        "inferred-equals-target" => Ok(SubsetPolicy::InferredEqualsTarget),
        "inferred-not-target" => Ok(SubsetPolicy::InferredNotTarget),
        "all" => Ok(SubsetPolicy::All),
        _ => match s.strip_prefix("source:").map(str::parse) {
            Some(Ok(c)) => Ok(SubsetPolicy::InferredEqualsSource(c)),
            _ => Err(format!(
                "expected inferred-equals-target, inferred-not-target, all or source:<class>, got {s:?}"
            )),
        },
    }
}

pub fn parse_dims(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    match (parse(h)?, parse(w)?) {
        (0, _) | (_, 0) => Err("dimensions must be positive".into()),
        dims => Ok(dims),
    }
}

impl TrainArgs {
    fn apply(&self, mut config: TrainConfig, seed: u64) -> CliResult<TrainConfig> {
        config.seed = seed;
        if let Some(v) = self.lr {
            config.learning_rate = v;
        }
        if let Some(v) = self.momentum {
            config.momentum = v;
        }
        if let Some(v) = self.batch_size {
            config.batch_size = v;
        }
        if let Some(v) = self.epochs {
            config.epochs = v;
        }
        if let Some(v) = self.lambda {
            config.lambda = v;
        }
        if let Some(v) = self.threshold {
            config.threshold = v;
        }
        if let Some(v) = self.init_bias {
            config.init_bias = v;
        }
        if let Some(v) = self.policy {
            config.subset_policy = v;
        }
        if let Some(mode) = self.logits {
            config.logits_term = match mode {
                LogitsMode::Signed => LogitsTerm::Signed,
                LogitsMode::Absolute => LogitsTerm::Absolute,
                LogitsMode::Disabled => LogitsTerm::Disabled,
            };
        }
        config.validate()?;
        Ok(config)
    }
}

fn bundle(run: &mut Run, path: &Path) -> CliResult<FeatureBundle> {
    run.input(path)?;
    Ok(load_bundle(path)?)
}

fn head(run: &mut Run, path: &Path) -> CliResult<ClassifierHead> {
    run.input(path)?;
    Ok(load_head(path)?)
}

fn checkpoint(run: &mut Run, path: &Path) -> CliResult<CfeCheckpoint> {
    run.input(path)?;
    Ok(load_checkpoint(path)?)
}

fn write_bundle(run: &mut Run, name: &str, b: &FeatureBundle) -> CliResult<()> {
    run.output(name, |w| {
        write_feature_bundle(b, w)?;
        Ok(())
    })?;
    Ok(())
}

fn write_head(run: &mut Run, name: &str, h: &ClassifierHead) -> CliResult<()> {
    run.output(name, |w| {
        write_classifier_head(h, w)?;
        Ok(())
    })?;
    Ok(())
}

fn write_ckpt(run: &mut Run, name: &str, c: &CfeCheckpoint) -> CliResult<()> {
    run.output(name, |w| {
        write_checkpoint(c, w)?;
        Ok(())
    })?;
    Ok(())
}

fn write_text(run: &mut Run, name: &str, text: &str) -> CliResult<()> {
    run.output(name, |w| {
        w.write_all(text.as_bytes())?;
        Ok(())
    })?;
    print!("{text}");
    Ok(())
}

fn gen_synth(a: GenSynthArgs) -> CliResult<()> {
    let mut run = Run::new("gen-synth", &a.out)?;
    let mut cfg = SynthConfig::new(a.n, a.classes, a.per_class, a.separation, a.seed);
    cfg.test_per_class = a.test_per_class;
    cfg.spatial = a.spatial;
    if let Some(v) = a.noise {
        cfg.noise = v;
    }
    if let Some(v) = a.dropout {
        cfg.dropout = v;
    }
    if let Some(v) = a.support {
        cfg.support = v;
    }
    let head_config = TrainConfig::classifier_default().with_seed(a.seed);
    #[derive(Serialize)]
    struct Resolved<'a> {
        synth: &'a SynthConfig,
        head: &'a TrainConfig,
    }
    run.config(&Resolved {
        synth: &cfg,
        head: &head_config,
    })?;
    let p = synth_problem(&cfg, &head_config)?;
    write_bundle(&mut run, "train.fex", &p.train)?;
    if !p.test.is_empty() {
        write_bundle(&mut run, "test.fex", &p.test)?;
    }
    write_head(&mut run, "head.chd", &p.classifier)?;
    let train_accuracy = classifier_accuracy(&p.train, &p.classifier)?;
    let test_accuracy = if p.test.is_empty() {
        None
    } else {
        Some(classifier_accuracy(&p.test, &p.classifier)?)
    };
    run.json(
        "synth.json",
        &serde_json::json!({ "train_accuracy": train_accuracy, "test_accuracy": test_accuracy }),
    )?;
    println!("classifier train accuracy {train_accuracy:.4}");
    run.finish()
}

fn train_head(a: TrainHeadArgs) -> CliResult<()> {
    let mut run = Run::new("train-head", &a.out)?;
    let config = a.train.apply(TrainConfig::classifier_default(), a.seed)?;
    run.config(&config)?;
    let mut b = bundle(&mut run, &a.bundle)?;
    let classes = a.classes.unwrap_or(b.n_classes);
    let h = train_classifier_head(&b, classes, &config)?;
    write_head(&mut run, "head.chd", &h)?;
    let accuracy = classifier_accuracy(&b, &h)?;
    if a.relabel {
        relabel_inferred(&mut b, &h)?;
        write_bundle(&mut run, "relabelled.fex", &b)?;
    }
    run.json("head_report.json", &serde_json::json!({ "train_accuracy": accuracy }))?;
    println!("train accuracy {accuracy:.4}");
    run.finish()
}

fn train_mc_cmd(a: TrainMcArgs) -> CliResult<()> {
    let mut run = Run::new("train-mc", &a.out)?;
    let config = a.train.apply(TrainConfig::mc_default(), a.seed)?;
    run.config(&config)?;
    let b = bundle(&mut run, &a.bundle)?;
    let h = head(&mut run, &a.head)?;
    let (mc, report) = train_mc(&b, &h, a.class, &config)?;
    let ckpt = CfeCheckpoint::from_mc(&mc, a.class, config.lambda, config.epochs);
    write_ckpt(&mut run, &format!("mc_class{}.cfe", a.class), &ckpt)?;
    run.json("report.json", &report)?;
    println!(
        "class {}: retention {:.4}, mean filters {:.2} over {} images",
        a.class, report.evaluation.accuracy, report.evaluation.mean_filters, report.evaluation.images
    );
    run.finish()
}

fn train_mi_cmd(a: TrainMiArgs) -> CliResult<()> {
    let mut run = Run::new("train-mi", &a.out)?;
    let config = a.train.apply(TrainConfig::mi_default(), a.seed)?;
    run.config(&config)?;
    let b = bundle(&mut run, &a.bundle)?;
    let h = head(&mut run, &a.head)?;
    let (mi, report) = train_mi(&b, &h, a.alter, &config)?;
    let ckpt = CfeCheckpoint::from_mi(&mi, a.alter, config.lambda, config.epochs);
    write_ckpt(&mut run, &format!("mi_class{}.cfe", a.alter), &ckpt)?;
    run.json("report.json", &report)?;
    println!(
        "alter class {}: flip rate {:.4}, mean addition l1 {:.3} over {} images",
        a.alter, report.evaluation.accuracy, report.evaluation.mean_addition_l1, report.evaluation.images
    );
    run.finish()
}

fn explain(a: ExplainArgs) -> CliResult<()> {
    let mut run = Run::new("explain", &a.out)?;
    run.config(&serde_json::json!({
        "image": a.image, "alter": a.alter, "top_k": a.top_k, "heatmap": a.heatmap,
    }))?;
    let b = bundle(&mut run, &a.bundle)?;
    let h = head(&mut run, &a.head)?;
    let ckpt = checkpoint(&mut run, &a.checkpoint)?;
    let mut report = match ckpt.kind {
        HeadKind::Mc => explain_mc(a.image, &b, &h, &ckpt)?,
        HeadKind::Mi => explain_mi(a.image, &b, &h, &ckpt, a.alter.unwrap_or(ckpt.target_class))?,
    };
    report.top_k = topk_filters(&report, a.top_k)?;
    if let Some((th, tw)) = a.heatmap {
        for &filter in &report.top_k {
            let map = rf_heatmap(a.image, &b, filter, th, tw)?;
            run.output(&format!("heatmap_img{}_filter{filter}.pgm", a.image), |w| {
                map.write_pgm(w)?;
                Ok(())
            })?;
        }
    }
    run.json(&format!("explanation_img{}.json", a.image), &report)?;
    println!(
        "image {} ({}): {} {} -> {} (p={:.4}); top filters {:?}",
        a.image,
        report.source_path,
        report.kind.as_str(),
        report.inferred_class,
        report.modified_class,
        report.modified_probability,
        report.top_k
    );
    run.finish()
}

fn mc_checkpoint(run: &mut Run, path: &Path) -> CliResult<(CfeCheckpoint, cfx_core::McHead)> {
    let ckpt = checkpoint(run, path)?;
    let head = ckpt.mc_head()?;
    Ok((ckpt, head))
}

fn stats(a: StatsArgs) -> CliResult<()> {
    let mut run = Run::new("stats", &a.out)?;
    let b = bundle(&mut run, &a.bundle)?;
    let h = head(&mut run, &a.head)?;
    let (ckpt, mc) = mc_checkpoint(&mut run, &a.checkpoint)?;
    let class = a.class.unwrap_or(ckpt.target_class);
    run.config(&serde_json::json!({ "class": class, "min_count": a.min_count }))?;
    let s = global_filter_stats(&b, &h, &mc, class)?;
    let set = global_mc_set(&s, a.min_count)?;
    run.json(
        &format!("stats_class{class}.json"),
        &serde_json::json!({ "stats": s, "min_count": a.min_count, "global_set": set }),
    )?;
    write_text(&mut run, &format!("stats_class{class}.txt"), &stats_table(&s))?;
    run.finish()
}

fn ablate(a: AblateArgs) -> CliResult<()> {
    let mut run = Run::new("ablate", &a.out)?;
    let eval = bundle(&mut run, &a.bundle)?;
    let source = match &a.stats_bundle {
        Some(p) => bundle(&mut run, p)?,
        None => eval.clone(),
    };
    let h = head(&mut run, &a.head)?;
    let (ckpt, mc) = mc_checkpoint(&mut run, &a.checkpoint)?;
    let class = a.class.unwrap_or(ckpt.target_class);
    run.config(&serde_json::json!({ "class": class, "min_count": a.min_count, "seed": a.seed }))?;
    let s = global_filter_stats(&source, &h, &mc, class)?;
    let set = global_mc_set(&s, a.min_count)?;
    let result = disable_filters_eval(&eval, &h, &set, class, a.seed)?;
    run.json(&format!("ablation_class{class}.json"), &result)?;
    write_text(&mut run, &format!("ablation_class{class}.txt"), &ablation_table(std::slice::from_ref(&result)))?;
    run.finish()
}

fn optional_bundle(run: &mut Run, path: Option<&Path>) -> CliResult<Option<FeatureBundle>> {
    path.map(|p| bundle(run, p)).transpose()
}

fn sweep(a: SweepArgs) -> CliResult<()> {
    let mut run = Run::new("sweep", &a.out)?;
    if a.lambdas.is_empty() {
        return Err(CliError::Data("--lambdas needs at least one value".into()));
    }
    let config = a.train.apply(TrainConfig::mc_default(), a.seed)?;
    #[derive(Serialize)]
    struct Resolved<'a> {
        class: usize,
        lambdas: &'a [f64],
        jobs: usize,
        train: &'a TrainConfig,
    }
    run.config(&Resolved {
        class: a.class,
        lambdas: &a.lambdas,
        jobs: a.jobs,
        train: &config,
    })?;
    let train = bundle(&mut run, &a.bundle)?;
    let test = optional_bundle(&mut run, a.test_bundle.as_deref())?;
    let h = head(&mut run, &a.head)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs.max(1))
        .build()
        .map_err(|e| CliError::Data(format!("cannot start worker pool: {e}")))?;
    let rows: Vec<SweepRow> = pool.install(|| {
        a.lambdas
            .par_iter()
            .map(|&lambda| sweep_row(&train, test.as_ref(), &h, a.class, lambda, &config))
            .collect::<Result<_, _>>()
    })?;
    for row in &rows {
        run.json(&format!("sweep_lambda{}.json", row.lambda), row)?;
    }
    run.json("sweep.json", &rows)?;
    write_text(&mut run, "sweep.txt", &sweep_table(&rows))?;
    run.finish()
}

fn logits_ablate(a: LogitsAblateArgs) -> CliResult<()> {
    let mut run = Run::new("logits-ablate", &a.out)?;
    let config = a.train.apply(TrainConfig::mc_default(), a.seed)?;
    run.config(&serde_json::json!({ "class": a.class, "train": config }))?;
    let train = bundle(&mut run, &a.bundle)?;
    let test = optional_bundle(&mut run, a.test_bundle.as_deref())?;
    let h = head(&mut run, &a.head)?;
    let result = logits_ablation(&train, test.as_ref(), &h, a.class, &config)?;
    run.json("logits_ablation.json", &result)?;
    write_text(&mut run, "logits_ablation.txt", &logits_table(&result))?;
    run.finish()
}

fn misclass(a: MisclassArgs) -> CliResult<()> {
    let mut run = Run::new("misclass", &a.out)?;
    run.config(&serde_json::json!({ "image": a.image, "images_per_filter": a.images_per_filter }))?;
    let b = bundle(&mut run, &a.bundle)?;
    let h = head(&mut run, &a.head)?;
    let mc = checkpoint(&mut run, &a.mc)?;
    let mi = checkpoint(&mut run, &a.mi)?;
    let report = misclassification_report(a.image, &b, &h, &mc, &mi, a.images_per_filter)?;
    run.json(&format!("misclass_img{}.json", a.image), &report)?;
    println!(
        "image {}: true {} inferred {}; MC keeps {:?}, MI adds to {:?} -> class {}",
        a.image, report.true_label, report.inferred_label, report.mc.top_k, report.mi.top_k, report.mi.modified_class
    );
    run.finish()
}

fn gradcheck(a: GradcheckArgs) -> CliResult<()> {
    let mut run = Run::new("gradcheck", &a.out)?;
    run.config(&serde_json::json!({
        "n": a.n, "classes": a.classes, "batch": a.batch, "seeds": a.seeds,
        "step": a.step, "band": a.band, "tolerance": a.tolerance,
    }))?;
    if !(a.step > 0.0 && a.band >= 0.0 && a.tolerance > 0.0) {
        return Err(CliError::Data("step and tolerance must be > 0, band >= 0".into()));
    }
    #[derive(Serialize)]
    struct Row {
        seed: u64,
        objective: String,
        report: cfx_core::loss::gradcheck::GradCheckReport,
    }
    let mut rows = Vec::new();
    for seed in 0..a.seeds {
        let problem = GradCheckProblem::random(a.n, a.classes, a.batch, seed)?;
        for (objective, report) in problem.check_all(a.step, a.band)? {
            rows.push(Row { seed, objective, report });
        }
    }
    let worst = rows.iter().map(|r| r.report.max_rel_error).fold(0.0, f64::max);
    let pass = worst <= a.tolerance;
    run.json(
        "gradcheck.json",
        &serde_json::json!({ "max_rel_error": worst, "pass": pass, "rows": rows }),
    )?;
    println!("max relative error {worst:.3e} (tolerance {:e})", a.tolerance);
    run.finish()?;
    if pass {
        Ok(())
    } else {
        Err(CliError::Data(format!("gradient check failed: {worst:.3e} > {:e}", a.tolerance)))
    }
}
