use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use elulab::data::{Dataset, MnistDir};
use elulab::diagnostics::{median_variance, PROBE_SIZE};
use elulab::experiments::{
    reconstruction_csv, run_autoencoder, run_classifier, AutoencoderExperiment, ClassifierExperiment,
    AUTOENCODER_EPOCHS, AUTOENCODER_HIDDEN, AUTOENCODER_LEARNING_RATES, CLASSIFIER_EPOCHS, CLASSIFIER_HIDDEN,
    VARIANCE_HIDDEN,
};
use elulab::fisher::{bias_shift_report, estimate_unit_fisher, BiasShiftRecord, DeltaMode, FisherOptions};
use elulab::io::write_atomic;
use elulab::lemmas::{run_lemma_suite, LemmaSuite};
use elulab::netfile;
use elulab::optimizer::metrics_csv;
use elulab::{Error, Exec, Network, UnitRef};

use crate::config::{mnist_dir, parse_delta_mode, Defaults, FileConfig, RunConfig, TrainArgs};
use crate::{Failure, LemmaArgs, NatgradArgs};

type CmdResult = Result<(), Failure>;

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Run(e.to_string()))?;
    text.push('\n');
    Ok(write_atomic(path, text.as_bytes())?)
}

fn check_mnist(cfg: &RunConfig) -> Result<(), Failure> {
    if !MnistDir(cfg.mnist_dir.clone()).exists() {
        return Err(Failure::Usage(format!(
            "MNIST IDX files not found in {} (set --mnist-dir or ELULAB_MNIST_DIR)",
            cfg.mnist_dir.display()
        )));
    }
    Ok(())
}

fn single_lr(cfg: &RunConfig) -> Result<f64, Failure> {
    match cfg.learning_rates.as_slice() {
        [lr] => Ok(*lr),
        _ => Err(Failure::Usage("this command takes a single --lr".into())),
    }
}

fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

pub fn train(args: TrainArgs) -> CmdResult {
    let cfg = args.resolve(Defaults {
        learning_rates: vec![0.01],
        epochs: CLASSIFIER_EPOCHS,
        hidden: CLASSIFIER_HIDDEN.to_vec(),
        out: "runs/train",
    })?;
    let lr = single_lr(&cfg)?;
    check_mnist(&cfg)?;
    let (train, val, _) = cfg.mnist()?;
    let probe = train.head(PROBE_SIZE);
    for &seed in &cfg.seeds {
        let exp = ClassifierExperiment { activation: cfg.activation, hidden: cfg.hidden.clone(), train: cfg.train_config(lr, seed) };
        let out = run_classifier(&exp, seed, &train, &val, &probe)?;
        let dir = seed_dir(&cfg.out, seed);
        metrics_csv(&out.metrics).write(&dir.join("metrics.csv"))?;
        out.trace.to_csv().write(&dir.join("trace.csv"))?;
        out.trace.summary_csv().write(&dir.join("summary.csv"))?;
        netfile::save(&out.net, &dir.join("network.bin"))?;
        write_json(&dir.join("config.json"), &cfg)?;
        let last = out.metrics.last().expect("at least one epoch");
        println!(
            "seed {seed}: {} epoch {} train loss {:.6} eval accuracy {:.4} -> {}",
            cfg.activation,
            last.epoch,
            last.train_loss,
            last.accuracy.unwrap_or(f64::NAN),
            dir.display()
        );
    }
    Ok(())
}

pub fn autoencoder(args: TrainArgs) -> CmdResult {
    let cfg = args.resolve(Defaults {
        learning_rates: AUTOENCODER_LEARNING_RATES.to_vec(),
        epochs: AUTOENCODER_EPOCHS,
        hidden: AUTOENCODER_HIDDEN.to_vec(),
        out: "runs/autoencoder",
    })?;
    check_mnist(&cfg)?;
    let (train, _, test) = cfg.mnist()?;
    let mut failures = Vec::new();
    for &lr in &cfg.learning_rates {
        for &seed in &cfg.seeds {
            let exp = AutoencoderExperiment { activation: cfg.activation, hidden: cfg.hidden.clone(), train: cfg.train_config(lr, seed) };
            let dir = cfg.out.join(format!("lr-{lr}")).join(format!("seed-{seed}"));
            match run_autoencoder(&exp, seed, &train, &test) {
                Ok(out) => {
                    reconstruction_csv(&out.points).write(&dir.join("reconstruction.csv"))?;
                    netfile::save(&out.net, &dir.join("network.bin"))?;
                    let last = out.points.last().expect("at least one epoch");
                    println!(
                        "lr {lr} seed {seed}: {} train mse {:.6} test mse {:.6} -> {}",
                        cfg.activation,
                        last.train_mse,
                        last.test_mse,
                        dir.display()
                    );
                }
                // a diverged learning rate should not stop the others
                Err(e @ Error::Divergence { .. }) => {
                    eprintln!("lr {lr} seed {seed}: {e}");
                    failures.push(format!("lr {lr} seed {seed}: {e}"));
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
    write_json(&cfg.out.join("config.json"), &cfg)?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Run(format!("{} run(s) diverged", failures.len())))
    }
}

pub fn trace(args: TrainArgs) -> CmdResult {
    let cfg = args.resolve(Defaults {
        learning_rates: vec![0.01],
        epochs: CLASSIFIER_EPOCHS,
        hidden: VARIANCE_HIDDEN.to_vec(),
        out: "runs/trace",
    })?;
    let lr = single_lr(&cfg)?;
    check_mnist(&cfg)?;
    let (train, val, _) = cfg.mnist()?;
    for &seed in &cfg.seeds {
        let exp = ClassifierExperiment { activation: cfg.activation, hidden: cfg.hidden.clone(), train: cfg.train_config(lr, seed) };
        let out = run_classifier(&exp, seed, &train, &val, &train)?;
        let dir = seed_dir(&cfg.out, seed);
        let variance = median_variance(&out.trace)?;
        out.trace.to_csv().write(&dir.join("trace.csv"))?;
        out.trace.summary_csv().write(&dir.join("summary.csv"))?;
        variance.to_csv().write(&dir.join("median_variance.csv"))?;
        metrics_csv(&out.metrics).write(&dir.join("metrics.csv"))?;
        netfile::save(&out.net, &dir.join("network.bin"))?;
        write_json(&dir.join("config.json"), &cfg)?;
        let means: Vec<String> = variance.layer_means().iter().map(|v| format!("{v:.3e}")).collect();
        println!("seed {seed}: {} mean median variance per layer [{}] -> {}", cfg.activation, means.join(", "), dir.display());
    }
    Ok(())
}

const MINIBATCH: usize = 64;

fn default_units(net: &Network) -> Vec<UnitRef> {
    (1..net.layers.len() - 1)
        .flat_map(|l| (0..net.layers[l].fan_out().min(8)).map(move |i| UnitRef::new(l, i)))
        .collect()
}

pub fn natgrad_check(args: NatgradArgs) -> CmdResult {
    let file = match &args.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let delta_mode = match args.delta_mode.as_deref().or(file.delta_mode.as_deref()) {
        Some(s) => parse_delta_mode(s)?,
        None => DeltaMode::default(),
    };
    if !args.network.is_file() {
        return Err(Failure::Usage(format!("network file {} not found", args.network.display())));
    }
    let net = netfile::load(&args.network)?;
    let units = match &args.units {
        Some(list) => list
            .iter()
            .map(|s| s.parse::<UnitRef>().map_err(|e| Failure::Usage(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?,
        None => default_units(&net),
    };
    let dir = mnist_dir(args.mnist_dir.clone(), file.mnist_dir.clone());
    let mnist = MnistDir(dir.clone());
    if !mnist.exists() {
        return Err(Failure::Usage(format!("MNIST IDX files not found in {}", dir.display())));
    }
    let (train, _) = elulab::data::split(&mnist.train()?, crate::config::VALIDATION_FRACTION, 0)?;
    let data: Dataset = train.head(args.samples);
    let exec = if args.sequential { Exec::Sequential } else { Exec::default() };
    let opts = FisherOptions { delta_mode, mc_samples: args.mc_samples, seed: args.seed, exec };
    let (grads, _) = net.batch_gradient(&data.inputs, &data.targets(Some(net.output_dim()))?, exec)?;
    // the first mini-batch the training loop would see at the default batch size
    let batch = data.head(MINIBATCH);
    let (batch_grads, _) = net.batch_gradient(&batch.inputs, &batch.targets(Some(net.output_dim()))?, exec)?;

    let mut records = Vec::new();
    let mut violations = 0;
    let mut k_dev = Vec::new();
    for unit in units {
        net.check_unit(unit).map_err(|e| Failure::Usage(e.to_string()))?;
        let outcome = estimate_unit_fisher(&net, unit, &data, &opts).and_then(|fisher| {
            let (g, g0) = grads.unit(unit)?;
            let report = bias_shift_report(&fisher, &g, g0)?;
            let (gb, gb0) = batch_grads.unit(unit)?;
            let batch_report = bias_shift_report(&fisher, &gb, gb0)?;
            Ok((BiasShiftRecord::new(unit, &fisher, &report), batch_report))
        });
        match outcome {
            Ok((rec, batch_report)) => {
                k_dev.push((rec.k - 1.0).abs());
                let mut value = serde_json::to_value(rec).expect("plain record");
                value["gradient"] = json!("full");
                value["minibatch_size"] = json!(batch.len());
                value["minibatch_shift_plain"] = json!(batch_report.shift_plain);
                value["minibatch_shift_natural"] = json!(batch_report.shift_natural);
                records.push(value);
            }
            Err(e @ Error::IdentityViolation { .. }) => {
                violations += 1;
                eprintln!("unit {}:{}: {e}", unit.layer, unit.index);
                records.push(json!({"unit": unit.index, "layer": unit.layer, "error": e.to_string()}));
            }
            Err(e @ (Error::DegenerateFisher | Error::Singular { .. } | Error::NotPositiveDefinite { .. })) => {
                eprintln!("warning: unit {}:{} skipped: {e}", unit.layer, unit.index);
                records.push(json!({"unit": unit.index, "layer": unit.layer, "skipped": e.to_string()}));
            }
            Err(e) => return Err(e.into()),
        }
    }
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("runs/natgrad.json"));
    write_json(&out, &records)?;
    let mean_k = k_dev.iter().sum::<f64>() / k_dev.len().max(1) as f64;
    println!(
        "{} unit(s) checked, {} identity violation(s), mean |k-1| = {mean_k:.6e} -> {}",
        k_dev.len(),
        violations,
        out.display()
    );
    if violations > 0 {
        return Err(Failure::Run(format!("{violations} unit(s) failed the identity checks")));
    }
    Ok(())
}

pub fn lemma_check(args: LemmaArgs) -> CmdResult {
    let file = match &args.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let suite = LemmaSuite {
        cases: args.cases.or(file.cases).unwrap_or(100),
        seed: args.seed,
        corrupt_inverse: args.corrupt_inverse,
        exec: if args.sequential { Exec::Sequential } else { Exec::default() },
    };
    let report = run_lemma_suite(&suite)?;
    println!("cases: {}", report.cases);
    println!("block inverse vs dense inverse, max |diff|:       {:.3e}", report.block_inverse_max_dev);
    println!("max E(a)' E(aa')^-1 E(a):                         {:.15}", report.bound_max);
    println!("(1 - E'M^-1 E)^-1 vs 1 + E'Var^-1 E, max rel gap:  {:.3e}", report.sherman_morrison_max_dev);
    println!("k variance form vs second-moment form, max gap:   {:.3e}", report.k_forms_max_dev);
    if let Some(out) = &args.out {
        write_json(out, &report)?;
    }
    if report.passed() {
        println!("all within {:e}", elulab::lemmas::LEMMA_TOL);
        Ok(())
    } else {
        Err(Failure::Run(format!("deviation above {:e}", elulab::lemmas::LEMMA_TOL)))
    }
}
