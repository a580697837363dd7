use std::path::{Path, PathBuf};

use serde_json::json;
use simprune::fixtures;
use simprune::manifest::write_atomic;
use simprune::verify::{BoundReport, CONVERGENCE_SIZES, CONVERGENCE_TOLERANCE, FIDELITY_TOLERANCE};
use simprune::{
    apply_plan, build_distance_matrix, build_pruning_plan, distance_matrix_report, flops_compare,
    flops_count, load_model, save_model, verify_activation_inequality, verify_prop1, verify_prop2,
    verify_prop2_random, ActivationKind, ChannelStats, Error, FlopsReport, Prop2Options,
    PruneConfig, Result,
};

use crate::args::{
    Check, DistancesArgs, FixtureArgs, FixtureKind, FlopsArgs, PruneArgs, ReportArgs, VerifyArgs,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Passed,
    Failed,
}

const DEFAULT_PROP1_TRIALS: usize = 10;
const DEFAULT_PROP2_NETWORKS: usize = 1000;
const DEFAULT_PROP2_TRIALS: usize = 20;
const DEFAULT_ACTIVATION_PAIRS: usize = 1_000_000;

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into())
}

/// `<dir>/<model>_<check>_<seed>.<ext>`
fn output_path(dir: &Path, model: &str, check: &str, seed: Option<u64>, ext: &str) -> PathBuf {
    let name = match seed {
        Some(s) => format!("{model}_{check}_{s}.{ext}"),
        None => format!("{model}_{check}.{ext}"),
    };
    dir.join(name)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())?;
    println!("wrote {}", path.display());
    Ok(())
}

fn write_json(path: &Path, value: serde_json::Value) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(&value)? + "\n"))
}

fn millions(n: u64) -> String {
    format!("{:.2}M", n as f64 / 1e6)
}

fn activations(arg: Option<crate::args::ActivationArg>) -> Vec<ActivationKind> {
    match arg {
        Some(a) => vec![a.into()],
        None => vec![ActivationKind::ReLU, ActivationKind::Sigmoid],
    }
}

pub fn prune(args: &PruneArgs) -> Result<Outcome> {
    let model = load_model(&args.model)?;
    let config = PruneConfig {
        threshold: args.threshold,
        linkage: args.linkage.into(),
        min_channels: args.min_channels,
        compensate: !args.no_compensate,
        freeze_last: args.freeze_last,
    };
    let plan = build_pruning_plan(&model, &config)?;
    let pruned = apply_plan(&model, &plan)?;
    save_model(&pruned, &args.out)?;
    println!("wrote {}", args.out.display());
    write_text(&args.plan, &plan.to_json()?)?;
    for (l, lp) in plan.layers.iter().enumerate() {
        let note = if lp.degenerate {
            " (degenerate, kept)"
        } else {
            ""
        };
        println!(
            "layer {l}: {} -> {} channels{note}",
            lp.channels,
            lp.representatives.len()
        );
    }
    let report = flops_compare(&pruned, &model, 1)?;
    println!(
        "removed {} channels; FLOPs {} -> {}, pruned ratio {:.4}",
        plan.removed_count(),
        report.baseline_total,
        report.total,
        report.pruned_ratio
    );
    Ok(Outcome::Passed)
}

pub fn distances(args: &DistancesArgs) -> Result<Outcome> {
    let model = load_model(&args.model)?;
    let name = stem(&args.model);
    if args.empirical {
        let report = distance_matrix_report(&model, args.trials, args.batch, args.seed)?;
        for layer in &report {
            let path = output_path(
                &args.out_dir,
                &name,
                &format!("empirical-layer{}", layer.layer),
                Some(args.seed),
                "csv",
            );
            write_text(&path, &layer.empirical.to_csv())?;
        }
    } else {
        for (l, block) in model.blocks.iter().enumerate() {
            let matrix = build_distance_matrix(&ChannelStats::layer(&block.bn));
            let path = output_path(
                &args.out_dir,
                &name,
                &format!("distances-layer{l}"),
                None,
                "csv",
            );
            write_text(&path, &matrix.to_csv())?;
        }
    }
    Ok(Outcome::Passed)
}

fn print_flops(report: &FlopsReport) {
    println!("batch: {}", report.batch);
    for (l, f) in report.layers.iter().enumerate() {
        println!(
            "layer {l}: conv {} bn {} act {} pool {} total {}",
            f.conv, f.batch_norm, f.activation, f.pooling, f.total
        );
    }
    println!("head: {}", report.head);
    println!("total: {} ({})", report.total, millions(report.total));
    if report.baseline_total != report.total {
        println!(
            "baseline: {} ({}), pruned ratio {:.4}",
            report.baseline_total,
            millions(report.baseline_total),
            report.pruned_ratio
        );
    }
    println!("conventions:");
    for note in &report.convention_notes {
        println!("  {note}");
    }
}

pub fn flops(args: &FlopsArgs) -> Result<Outcome> {
    let model = load_model(&args.model)?;
    let report = match &args.baseline {
        Some(path) => flops_compare(&model, &load_model(path)?, args.batch)?,
        None => flops_count(&model, args.batch)?,
    };
    if args.json {
        print!("{}", report.to_json()?);
    } else {
        print_flops(&report);
    }
    Ok(Outcome::Passed)
}

fn print_bound_summary(label: &str, report: &BoundReport) {
    let s = &report.summary;
    println!(
        "{label}: {} of {} pairs satisfied, max lambda {:.4}, {} loose-bound pairs (lambda > 10), max shift/bound {:.4}",
        s.pairs - s.violations,
        s.pairs,
        s.max_lambda,
        s.loose_bound_pairs,
        s.max_tightness
    );
    if !report.skipped_layers.is_empty() {
        println!("{label}: skipped pooled layers {:?}", report.skipped_layers);
    }
}

pub fn verify(args: &VerifyArgs) -> Result<Outcome> {
    if args.model.is_some() && args.check != Check::Prop2 {
        return Err(Error::InvalidArgument(
            "--model only applies to prop2".into(),
        ));
    }
    let seed = args.seed;
    let out = |model: &str, check: &str| {
        args.out_dir
            .as_ref()
            .map(|dir| output_path(dir, model, check, Some(seed), "json"))
    };
    match args.check {
        Check::Prop1 => {
            let trials = args.trials.unwrap_or(DEFAULT_PROP1_TRIALS);
            let report = verify_prop1(
                ChannelStats::new(0.0, 1.0)?,
                ChannelStats::new(1.0, 4.0)?,
                &CONVERGENCE_SIZES,
                trials,
                seed,
            )?;
            for row in &report.rows {
                println!(
                    "n = {:>8}: mean distance {:.6} (limit {}), mean relative error {:.3e}",
                    row.n, row.mean_empirical, row.probabilistic, row.mean_rel_error
                );
            }
            let ok = report.converged();
            println!(
                "prop1: {} (final error {:.3e}, tolerance {CONVERGENCE_TOLERANCE}, {} increases)",
                if ok { "converged" } else { "FAILED" },
                report.final_rel_error(),
                report.inversions()
            );
            if let Some(path) = out("gaussian", "prop1") {
                write_json(&path, serde_json::to_value(&report)?)?;
            }
            Ok(if ok { Outcome::Passed } else { Outcome::Failed })
        }
        Check::Prop2 => {
            let mut ok = true;
            match &args.model {
                Some(path) => {
                    let model = load_model(path)?;
                    let report = verify_prop2(
                        &model,
                        &Prop2Options {
                            trials: args.trials.unwrap_or(DEFAULT_PROP2_TRIALS),
                            batch: args.batch,
                            seed,
                            allow_identity: args.allow_identity,
                        },
                    )?;
                    print_bound_summary("prop2", &report);
                    ok &= report.summary.all_satisfied;
                    if let Some(p) = out(&stem(path), "prop2") {
                        write_json(&p, serde_json::to_value(&report)?)?;
                    }
                }
                None => {
                    let networks = args.trials.unwrap_or(DEFAULT_PROP2_NETWORKS);
                    let mut reports = serde_json::Map::new();
                    for act in activations(args.activation) {
                        let report = verify_prop2_random(networks, act, args.batch, seed)?;
                        print_bound_summary(&format!("prop2 {act}"), &report);
                        ok &= report.summary.all_satisfied;
                        // the full entry list of a suite is large; keep violations only
                        reports.insert(
                            act.to_string(),
                            serde_json::to_value(report.violations_only())?,
                        );
                    }
                    if let Some(p) = out("random", "prop2") {
                        write_json(&p, reports.into())?;
                    }
                }
            }
            println!("prop2: {}", if ok { "all bounds hold" } else { "FAILED" });
            Ok(if ok { Outcome::Passed } else { Outcome::Failed })
        }
        Check::Activation => {
            let samples = args.trials.unwrap_or(DEFAULT_ACTIVATION_PAIRS);
            let mut checks = Vec::new();
            for act in activations(args.activation) {
                let check = verify_activation_inequality(act, samples, seed)?;
                println!(
                    "activation {act}: {} violations in {} pairs",
                    check.violations, check.samples
                );
                checks.push(check);
            }
            if let Some(p) = out("uniform", "activation") {
                write_json(&p, serde_json::to_value(&checks)?)?;
            }
            let ok = checks.iter().all(|c| c.holds);
            Ok(if ok { Outcome::Passed } else { Outcome::Failed })
        }
    }
}

pub fn report(args: &ReportArgs) -> Result<Outcome> {
    let model = load_model(&args.model)?;
    let name = stem(&args.model);
    let seed = Some(args.seed);
    let layers = distance_matrix_report(&model, args.trials, args.batch, args.seed)?;
    let mut summary = Vec::new();
    for layer in &layers {
        let l = layer.layer;
        for (kind, matrix, seed) in [
            ("empirical", &layer.empirical, seed),
            ("probabilistic", &layer.probabilistic, None),
            ("difference", &layer.abs_diff, seed),
        ] {
            let path = output_path(
                &args.out_dir,
                &name,
                &format!("{kind}-layer{l}"),
                seed,
                "csv",
            );
            write_text(&path, &matrix.to_csv())?;
        }
        println!(
            "layer {l}: max |difference| {:.6}, closed-form max {:.6}, ratio {:.4}",
            layer.abs_diff.max_entry(),
            layer.probabilistic.max_entry(),
            layer.relative_max_diff()
        );
        summary.push(json!({
            "layer": l,
            "channels": layer.probabilistic.size(),
            "max_abs_difference": layer.abs_diff.max_entry(),
            "probabilistic_max": layer.probabilistic.max_entry(),
            "relative_max_difference": layer.relative_max_diff(),
            "within_tolerance": layer.within_tolerance(),
        }));
    }
    let doc = json!({
        "model": name,
        "seed": args.seed,
        "trials": args.trials,
        "batch": args.batch,
        "tolerance": FIDELITY_TOLERANCE,
        "layers": summary,
    });
    write_json(
        &output_path(&args.out_dir, &name, "report", seed, "json"),
        doc,
    )?;
    Ok(Outcome::Passed)
}

pub fn fixture(args: &FixtureArgs) -> Result<Outcome> {
    let model = match args.kind {
        FixtureKind::Vgg16 => fixtures::vgg16_cifar(args.classes, args.seed),
        FixtureKind::Duplicate => fixtures::duplicate_channel_model(),
        FixtureKind::Random => fixtures::random_model(&Default::default(), args.seed),
        FixtureKind::Fidelity => fixtures::random_model(&fixtures::fidelity_spec(), args.seed),
    };
    save_model(&model, &args.out)?;
    println!("wrote {}", args.out.display());
    Ok(Outcome::Passed)
}
